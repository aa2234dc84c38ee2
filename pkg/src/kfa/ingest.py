"""
CSV ingestion, preprocessing and (Y, G)-stratified splitting.

A JSON schema names the label and group columns and types the feature
columns. Rows holding a missing token in any used column are dropped; numeric
features are standardized with the population (1/n) variance and categoricals
are one-hot encoded over all observed levels in sorted order.

Schema fields::

    label_column, positive_label, [negative_label]
    group_column, group_a, [group_b]
    numeric: [...], categorical: [...]
    [prediction_columns]: binary classifier outputs, kept raw
    [encoders]: {name: [columns]}, learned representations, kept raw
    [missing_tokens]: defaults to ["?", ""]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from kfa.embedding import GROUPS, SampleTable
from kfa.errors import DegenerateDataError, InputError

DEFAULT_MISSING = ("?", "")
DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)


@dataclass(frozen=True)
class IngestSchema:
    label_column: str
    positive_label: str
    group_column: str
    group_a: str
    numeric: tuple = ()
    categorical: tuple = ()
    negative_label: str | None = None
    group_b: str | None = None
    prediction_columns: tuple = ()
    encoders: dict = field(default_factory=dict)
    missing_tokens: tuple = DEFAULT_MISSING

    def __post_init__(self):
        for name in ("numeric", "categorical", "prediction_columns", "missing_tokens"):
            object.__setattr__(self, name, tuple(str(c) for c in getattr(self, name)))
        object.__setattr__(self, "encoders", {str(k): tuple(str(c) for c in v) for k, v in self.encoders.items()})
        for name in ("positive_label", "group_a", "negative_label", "group_b"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, str(v))
        feats = list(self.numeric) + list(self.categorical)
        dup = sorted({c for c in feats if feats.count(c) > 1})
        if dup:
            raise InputError(f"columns declared twice: {dup}")
        clash = {self.label_column, self.group_column} & set(feats)
        if clash:
            raise InputError(f"label/group columns cannot also be features: {sorted(clash)}")
        if self.label_column == self.group_column:
            raise InputError("label and group columns must differ")
        if self.negative_label is not None and self.negative_label == self.positive_label:
            raise InputError("positive and negative labels must differ")
        if self.group_b is not None and self.group_b == self.group_a:
            raise InputError("group values must differ")

    @property
    def used_columns(self) -> list:
        cols = [self.label_column, self.group_column, *self.numeric, *self.categorical, *self.prediction_columns]
        for enc in self.encoders.values():
            cols.extend(enc)
        return list(dict.fromkeys(cols))

    @classmethod
    def from_dict(cls, d: dict) -> IngestSchema:
        allowed = set(cls.__dataclass_fields__)
        extra = set(d) - allowed
        if extra:
            raise InputError(f"unknown schema fields {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise InputError(f"invalid schema: {e}") from None

    @classmethod
    def from_json(cls, path) -> IngestSchema:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"cannot read schema {path}: {e}") from None


@dataclass
class IngestReport:
    rows_read: int
    rows_dropped: int
    rows_kept: int
    feature_names: tuple
    categories: dict
    standardization: dict
    label_values: dict
    group_values: dict
    predictions: dict = field(default_factory=dict, repr=False)
    encoders: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {
            "rows_read": self.rows_read,
            "rows_dropped": self.rows_dropped,
            "rows_kept": self.rows_kept,
            "feature_names": list(self.feature_names),
            "categories": self.categories,
            "standardization": self.standardization,
            "label_values": self.label_values,
            "group_values": self.group_values,
        }


def _read_frame(path, schema: IngestSchema):
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"cannot parse {path}: {e}") from None
    missing_cols = [c for c in schema.used_columns if c not in df.columns]
    if missing_cols:
        raise InputError(f"columns not found in {path}: {missing_cols}")
    df = df[schema.used_columns].apply(lambda s: s.str.strip())
    bad = df.isin(list(schema.missing_tokens)).any(axis=1)
    return df.loc[~bad].reset_index(drop=True), len(df), int(bad.sum())


def _binary(values: pd.Series, positive, negative, what):
    vals = values.to_numpy()
    if negative is None:
        levels = sorted(set(vals))
        others = [v for v in levels if v != positive]
        if len(others) > 1 or positive not in levels and len(levels) > 1:
            raise InputError(f"{what} column must be binary; found values {levels}")
        negative = others[0] if others else None
    offenders = sorted(set(vals) - {positive, negative})
    if offenders:
        raise InputError(f"unknown {what} values {offenders}")
    return vals == positive, negative


def _numeric(df, col):
    try:
        return df[col].astype(float).to_numpy()
    except ValueError:
        bad = sorted({v for v in df[col] if not _is_float(v)})[:5]
        raise InputError(f"numeric column {col!r} has non-numeric values {bad}") from None


def _is_float(v):
    try:
        float(v)
    except ValueError:
        return False
    return True


def load_csv(path, schema: IngestSchema, standardization: dict | None = None):
    """
    Parse ``path`` into a SampleTable plus an :class:`IngestReport`.

    ``standardization`` optionally supplies ``{column: {"mean", "std"}}`` from
    another report (for example the training split) instead of fitting on the
    loaded rows.
    """
    df, rows_read, dropped = _read_frame(path, schema)
    if len(df) == 0:
        raise DegenerateDataError(f"no rows left after dropping {dropped} rows with missing values")

    y, neg = _binary(df[schema.label_column], schema.positive_label, schema.negative_label, "label")
    is_a, gb = _binary(df[schema.group_column], schema.group_a, schema.group_b, "group")

    cols, names, stdz, cats = [], [], {}, {}
    for c in schema.numeric:
        v = _numeric(df, c)
        if standardization is not None:
            if c not in standardization:
                raise InputError(f"no standardization parameters for {c!r}")
            mu, sd = float(standardization[c]["mean"]), float(standardization[c]["std"])
        else:
            mu, sd = float(v.mean()), float(v.std())
        z = v - mu
        if sd > 0:
            z = z / sd
        stdz[c] = {"mean": mu, "std": sd}
        cols.append(z)
        names.append(c)
    for c in schema.categorical:
        levels = sorted(set(df[c]))
        cats[c] = levels
        for lv in levels:
            cols.append((df[c].to_numpy() == lv).astype(float))
            names.append(f"{c}={lv}")
    X = np.column_stack(cols) if cols else np.zeros((len(df), 0))
    if X.shape[1] == 0:
        X = np.zeros((len(df), 1))
        names = ["const"]

    preds = {}
    for c in schema.prediction_columns:
        vals = df[c].to_numpy()
        ok = {"0", "1", schema.positive_label} | ({neg} if neg is not None else set())
        offenders = sorted(set(vals) - ok)
        if offenders:
            raise InputError(f"prediction column {c!r} has non-binary values {offenders}")
        preds[c] = ((vals == "1") | (vals == schema.positive_label)).astype(np.int8)
    encs = {name: np.column_stack([_numeric(df, c) for c in enc]) for name, enc in schema.encoders.items()}

    table = SampleTable(
        features=X,
        y=y.astype(np.int8),
        g=np.where(is_a, "a", "b"),
        yhat=next(iter(preds.values()), None),
        feature_names=tuple(names),
    )
    report = IngestReport(
        rows_read=rows_read,
        rows_dropped=dropped,
        rows_kept=len(df),
        feature_names=tuple(names),
        categories=cats,
        standardization=stdz,
        label_values={"1": schema.positive_label, "0": neg},
        group_values={"a": schema.group_a, "b": gb},
        predictions=preds,
        encoders=encs,
    )
    return table, report


# -- stratification -----------------------------------------------------------


def largest_remainder(total: int, weights) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``weights``; ties go to the earlier entry."""
    w = np.asarray(weights, dtype=float)
    quota = total * w / w.sum()
    base = np.floor(quota + 1e-9).astype(int)
    rest = total - int(base.sum())
    order = sorted(range(w.size), key=lambda i: (-(quota[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base


def _cells(table: SampleTable):
    return [((y, g), np.flatnonzero(table.cell_mask(y, g))) for y in (0, 1) for g in GROUPS]


def stratified_split(table: SampleTable, fractions=DEFAULT_FRACTIONS, minPerCell: int = 10, seed: int = 0):
    """
    Partition rows into len(fractions) splits, proportionally within every (y, g) cell.

    Allocation is by largest remainder with no rebalancing, and every split must
    receive at least ``minPerCell`` rows of every cell. Rows keep their original
    order inside each split.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.ndim != 1 or fr.size < 1 or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise InputError(f"fractions must be positive and sum to 1, got {tuple(fractions)}")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in fr]
    for (y, g), idx in _cells(table):
        alloc = largest_remainder(idx.size, fr)
        if alloc.min() < minPerCell:
            raise DegenerateDataError(
                f"cell (y={y}, g={g}) has {idx.size} rows; split sizes {alloc.tolist()} fall below {minPerCell}"
            )
        perm = rng.permutation(idx)
        for k, (lo, hi) in enumerate(zip(np.r_[0, np.cumsum(alloc)[:-1]], np.cumsum(alloc))):
            parts[k].append(perm[lo:hi])
    return tuple(table.take(np.sort(np.concatenate(p))) for p in parts)


def stratified_subsample(table: SampleTable, nCap: int, seed: int = 0) -> SampleTable:
    """Subsample to ``nCap`` rows keeping (y, g) cell proportions to within one row."""
    cells = [(k, idx) for k, idx in _cells(table) if idx.size]
    if nCap < len(cells):
        raise InputError(f"nCap={nCap} is below the number of occupied cells ({len(cells)})")
    if table.n <= nCap:
        return table
    alloc = largest_remainder(int(nCap), [idx.size for _, idx in cells])
    rng = np.random.default_rng(seed)
    keep = [rng.choice(idx, size=a, replace=False) for (_, idx), a in zip(cells, alloc)]
    return table.take(np.sort(np.concatenate(keep)))


def cells_ok(table: SampleTable) -> bool:
    return all(idx.size for _, idx in _cells(table))

