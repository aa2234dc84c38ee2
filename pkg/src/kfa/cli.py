"""
Command-line entry point ``kfa``.

Subcommands write plot-ready CSV files and a deterministic ``report.json``
into ``--out``. Exit codes: 0 success, 1 a verification check failed,
2 invalid input, 3 degenerate data, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from kfa import __version__
from kfa.config import AuditConfig, load_config
from kfa.embedding import SampleTable, group_difference, is_zero_element, rkhs_norm
from kfa.errors import DegenerateDataError, InputError, KfaError
from kfa.ingest import IngestSchema, load_csv, stratified_subsample
from kfa.kernels import KernelSpec, gram, resolve_spec
from kfa.spectral import eigendecay_fit, spectral_audit
from kfa.stats import bh_fdr, bootstrap_ci, bootstrap_mmd_ci, permutation_test_mmd
from kfa.synthetic import (
    PopulationSpec,
    gen_collapse_encoder,
    gen_population,
    gen_separated_classifier,
    separated_predictions,
)
from kfa.theorems import fair_feature_report, pareto_bound, rates_summary
from kfa.verify import run_all

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_DEGENERATE, EXIT_INTERNAL = 0, 1, 2, 3, 4


# -- output helpers -----------------------------------------------------------


def _clean(x):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


def write_report(out: Path, command: str, cfg: AuditConfig, results: dict, inputs: dict | None = None):
    report = {
        "command": command,
        "version": __version__,
        "config": cfg.reproducible_dict(),
        "inputs": inputs or {},
        "results": results,
    }
    text = json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"
    (out / "report.json").write_text(text)
    return report


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())


def _outdir(cfg: AuditConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read {what} {path}: {e}") from None


def _load_table(args):
    """Table from ``data`` + ``--schema`` or from ``--population``."""
    if args.population:
        spec = PopulationSpec.from_dict(_read_json(args.population, "population spec"))
        return gen_population(spec), {"population": json.loads(spec.to_json())}, None
    if not args.data or not args.schema:
        raise InputError("give a CSV file with --schema, or --population")
    schema = IngestSchema.from_json(args.schema)
    table, report = load_csv(args.data, schema)
    return table, {"data": Path(args.data).name, "ingest": report.to_dict()}, report


def _kernel_for(X, cfg: AuditConfig, allow_fallback=False):
    try:
        return resolve_spec(cfg.kernel, cfg.bandwidth, X, cap=cfg.subsample_cap, seed=cfg.seed), False
    except DegenerateDataError:
        if not allow_fallback:
            raise
        return KernelSpec(cfg.kernel, 1.0), True


# -- spectral ------------------------------------------------------------------


def cmd_spectral(args, cfg: AuditConfig) -> int:
    table, inputs, _ = _load_table(args)
    full_n = table.n
    table = stratified_subsample(table, cfg.gram_cap, seed=cfg.seed)
    spec, _ = _kernel_for(table.features, cfg)
    K = gram(spec, table.features)
    delta = group_difference(table)
    if is_zero_element(delta, K):
        raise DegenerateDataError("groups indistinguishable: the group mean embeddings coincide")
    audit = spectral_audit(table, K, top_j=cfg.top_j, threshold=cfg.k99_threshold)
    try:
        alpha_hat, c_hat = eigendecay_fit(audit.basis)
    except DegenerateDataError:
        alpha_hat = c_hat = None
    mmd = rkhs_norm(delta, K)
    ci = bootstrap_mmd_ci(table, K, B=cfg.bootstrap, seed=cfg.seed)
    test = permutation_test_mmd(table, K, B=cfg.permutations, seed=cfg.seed)

    out = _outdir(cfg)
    (out / "audit_curve.csv").write_text(audit.curve.to_csv())
    (out / "spectrum.csv").write_text(audit.basis.spectrum_csv())
    write_report(
        out,
        "spectral",
        cfg,
        {
            "n": table.n,
            "n_before_subsample": full_n,
            "kernel": spec.to_dict(),
            "k99": audit.k99,
            "k99_threshold": cfg.k99_threshold,
            "retained_eigenpairs": audit.basis.J,
            "final_capture": float(audit.curve.capture[-1]),
            "capture_clamped": audit.curve.clamped,
            "eigendecay": {"alpha_hat": alpha_hat, "c_hat": c_hat},
            "mmd": {
                "value": mmd,
                "ci": [math.sqrt(ci.lo), math.sqrt(ci.hi)],
                "level": ci.level,
                "bootstrap": ci.B,
                "p_value": test.p_value,
                "permutations": test.B,
            },
        },
        inputs,
    )
    return EXIT_OK


# -- pareto --------------------------------------------------------------------


def _classifiers_from_synthetic(path):
    d = _read_json(path, "classifier spec")
    try:
        p_a, p_b = float(d["p_a"]), float(d["p_b"])
        mass = d.get("group_mass", 0.5)
        n = int(d.get("n", 10000))
        seed = int(d.get("seed", 0))
        items = d["classifiers"]
    except (KeyError, TypeError) as e:
        raise InputError(f"classifier spec is missing {e}") from None
    if not items:
        raise InputError("classifier spec lists no classifiers")
    first = items[0]
    base = gen_separated_classifier(p_a, p_b, mass, first["tpr"], first["fpr"], n, seed)
    out = [(first.get("name", "clf0"), base)]
    for i, c in enumerate(items[1:], start=1):
        rng = np.random.default_rng([seed, i])
        out.append((c.get("name", f"clf{i}"), base.with_yhat(separated_predictions(base.y, c["tpr"], c["fpr"], rng))))
    return out


def cmd_pareto(args, cfg: AuditConfig) -> int:
    if args.synthetic:
        clfs = _classifiers_from_synthetic(args.synthetic)
        inputs = {"synthetic": _read_json(args.synthetic, "classifier spec")}
    else:
        table, inputs, report = _load_table(args)
        if report is None or not report.predictions:
            raise InputError("schema declares no prediction_columns")
        clfs = [(name, table.with_yhat(pred)) for name, pred in report.predictions.items()]

    rows, entries, gated_out = [], [], []
    for i, (name, t) in enumerate(clfs):
        rs = rates_summary(t)
        if rs.delta_p == 0:
            raise DegenerateDataError("bound undefined: equal base rates")
        bound = pareto_bound(rs.p, abs(rs.delta_p), rs.DP_gap)
        gated = rs.EO_gap > cfg.eo_gate
        ci = bootstrap_ci(np.mean, (t.yhat != t.y).astype(float), B=cfg.bootstrap, seed=cfg.seed + i,
                          strata="whole-sample")
        entry = {
            "name": name,
            "rates": rs.to_dict(),
            "bound": bound,
            "gated": gated,
            "error_ci": [ci.lo, ci.hi],
            "raw_violation": (not gated) and rs.error < bound - 1e-12,
            "ci_violation": (not gated) and ci.hi < bound,
        }
        entries.append(entry)
        if gated:
            gated_out.append(name)
        rows.append((rs.DP_gap, rs.error, bound, rs.EO_gap, int(gated)))

    out = _outdir(cfg)
    write_csv(out / "frontier.csv", ["dp_gap", "error", "bound", "eo_gap", "gated"], rows)
    write_report(
        out,
        "pareto",
        cfg,
        {
            "classifiers": entries,
            "gated_out": gated_out,
            "eo_gate": cfg.eo_gate,
            "raw_violations": sum(e["raw_violation"] for e in entries),
            "ci_violations": sum(e["ci_violation"] for e in entries),
        },
        inputs,
    )
    return EXIT_OK


# -- representation ------------------------------------------------------------


def _encoders_from_synthetic(path):
    d = _read_json(path, "encoder spec")
    if "population" not in d or "encoders" not in d:
        raise InputError("encoder spec needs 'population' and 'encoders'")
    base = gen_population(PopulationSpec.from_dict(d["population"]))
    out = []
    for i, e in enumerate(d["encoders"]):
        enc = gen_collapse_encoder(
            base,
            float(e.get("epsilon", 0.0)),
            float(e.get("rho", 0.0)),
            dimZ=int(e.get("dimZ", 2)),
            seed=int(e.get("seed", i)),
            signal=e.get("signal"),
        )
        out.append((e.get("name", f"enc{i}"), enc))
    return out, d


def cmd_representation(args, cfg: AuditConfig) -> int:
    if args.synthetic:
        encs, inputs = _encoders_from_synthetic(args.synthetic)
        inputs = {"synthetic": inputs}
    else:
        table, inputs, report = _load_table(args)
        if report is None or not report.encoders:
            raise InputError("schema declares no encoders")
        encs = [(name, table.with_features(Z, [f"{name}_{j}" for j in range(Z.shape[1])]))
                for name, Z in report.encoders.items()]

    entries, rows, gated_out, pvals = [], [], [], []
    for i, (name, t) in enumerate(encs):
        t = stratified_subsample(t, cfg.gram_cap, seed=cfg.seed)
        spec, fallback = _kernel_for(t.features, cfg, allow_fallback=True)
        K = gram(spec, t.features)
        rep = fair_feature_report(t, K=K)
        if rep.absDeltaP == 0:
            raise DegenerateDataError("bound undefined: equal base rates")
        test = permutation_test_mmd(t, K, B=cfg.permutations, seed=cfg.seed + i)
        pvals.append(test.p_value)
        gated = rep.rho > cfg.rho_gate
        entries.append({
            "name": name,
            "kernel": spec.to_dict(),
            "bandwidth_fallback": fallback,
            "report": rep.to_dict(),
            "gated": gated,
            "parity_p_value": test.p_value,
        })
        if gated:
            gated_out.append(name)
        else:
            rows.append((rep.epsilon, rep.signal_a, rep.signal_b, rep.rho, rep.bound))
    rejected = bh_fdr(pvals, q=cfg.fdr_q)
    for e, r in zip(entries, rejected):
        e["parity_rejected"] = bool(r)

    out = _outdir(cfg)
    write_csv(out / "forbidden_corner.csv", ["epsilon", "signal_a", "signal_b", "rho", "bound"], rows)
    write_report(
        out,
        "representation",
        cfg,
        {
            "encoders": entries,
            "gated_out": gated_out,
            "rho_gate": cfg.rho_gate,
            "violations": sum(e["report"]["violation_a"] or e["report"]["violation_b"] for e in entries),
        },
        inputs,
    )
    return EXIT_OK


# -- verify --------------------------------------------------------------------


def cmd_verify(args, cfg: AuditConfig) -> int:
    results = run_all(scale=args.scale, seed=cfg.seed, fault=args.inject_fault)
    passed = all(r.passed for r in results)
    out = _outdir(cfg)
    write_report(
        out,
        "verify",
        cfg,
        {"scale": args.scale, "passed": passed, "checks": [r.to_dict() for r in results]},
        {"fault": args.inject_fault},
    )
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  margin={r.margin:.3g}")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


# -- synth ---------------------------------------------------------------------


def _table_rows(t: SampleTable):
    for i in range(t.n):
        yield [int(t.y[i]), str(t.g[i])] + [repr(float(v)) for v in t.features[i]]


def cmd_synth(args, cfg: AuditConfig) -> int:
    """Write a synthetic dataset plus a matching ingest schema."""
    spec_doc = _read_json(args.spec, "synthetic spec")
    out = _outdir(cfg)
    if args.kind == "population":
        t = gen_population(PopulationSpec.from_dict(spec_doc))
        names = list(t.feature_names)
        header = ["y", "g", *names]
        rows = _table_rows(t)
        schema = {"numeric": names}
    elif args.kind == "classifiers":
        clfs = _classifiers_from_synthetic(args.spec)
        t = clfs[0][1]
        preds = np.column_stack([c.yhat for _, c in clfs]).astype(int)
        names = [name for name, _ in clfs]
        header = ["y", "g", *names]  # the placeholder feature column is not written
        rows = ([int(t.y[i]), str(t.g[i]), *preds[i].tolist()] for i in range(t.n))
        schema = {"numeric": [], "prediction_columns": names}
    elif args.kind == "encoders":
        encs, _ = _encoders_from_synthetic(args.spec)
        t = encs[0][1]
        cols, enc_schema = [], {}
        for name, e in encs:
            enc_names = [f"{name}_{j}" for j in range(e.features.shape[1])]
            enc_schema[name] = enc_names
            cols.append([[repr(float(v)) for v in r] for r in e.features])
        header = ["y", "g", *[c for v in enc_schema.values() for c in v]]
        rows = ([int(t.y[i]), str(t.g[i])] + [v for c in cols for v in c[i]] for i in range(t.n))
        schema = {"numeric": [], "encoders": enc_schema}
    else:  # argparse restricts the choices
        raise InputError(f"unknown kind {args.kind!r}")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    (out / "data.csv").write_text(buf.getvalue())
    full_schema = {"label_column": "y", "positive_label": "1", "negative_label": "0",
                   "group_column": "g", "group_a": "a", "group_b": "b", **schema}
    (out / "schema.json").write_text(json.dumps(full_schema, sort_keys=True, indent=2) + "\n")
    write_report(out, "synth", cfg, {"kind": args.kind, "rows": t.n, "cell_counts": t.cell_counts()},
                 {"spec": spec_doc})
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="JSON file with AuditConfig fields")
    p.add_argument("--kernel", help="rbf | laplace | linear")
    p.add_argument("--bandwidth", help="positive number or 'median'")
    p.add_argument("--seed", type=int)
    p.add_argument("--subsample-cap", dest="subsample_cap", type=int, help="rows for the median heuristic")
    p.add_argument("--gram-cap", dest="gram_cap", type=int, help="rows used for the Gram matrix")
    p.add_argument("--permutations", type=int)
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--fdr-q", dest="fdr_q", type=float)
    p.add_argument("--eo-gate", dest="eo_gate", type=float)
    p.add_argument("--rho-gate", dest="rho_gate", type=float)
    p.add_argument("--k99-threshold", dest="k99_threshold", type=float)
    p.add_argument("--top-j", dest="top_j", type=int)
    p.add_argument("--out", help="output directory")


def _data_args(p):
    p.add_argument("data", nargs="?", help="CSV file")
    p.add_argument("--schema", help="ingest schema (JSON)")
    p.add_argument("--population", help="population spec (JSON) instead of a CSV")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kfa", description="Kernel fairness audits and self-verification.")
    ap.add_argument("--version", action="version", version=f"kfa {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectral", help="spectral audit curve of the group mean difference")
    _data_args(p)
    _common(p)

    p = sub.add_parser("pareto", help="error vs DP gap of binary classifiers against the frontier")
    _data_args(p)
    p.add_argument("--synthetic", help="classifier spec (JSON) instead of a CSV")
    _common(p)

    p = sub.add_parser("representation", help="parity gap vs class signal of encoders")
    _data_args(p)
    p.add_argument("--synthetic", help="encoder spec (JSON) instead of a CSV")
    _common(p)

    p = sub.add_parser("verify", help="run the built-in property checks")
    p.add_argument("--scale", choices=("quick", "full"), default="quick")
    p.add_argument("--inject-fault", dest="inject_fault", choices=("lambda",), help=argparse.SUPPRESS)
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic dataset and its schema")
    p.add_argument("kind", choices=("population", "classifiers", "encoders"))
    p.add_argument("--spec", required=True, help="generator spec (JSON)")
    _common(p)
    return ap


COMMANDS = {
    "spectral": cmd_spectral,
    "pareto": cmd_pareto,
    "representation": cmd_representation,
    "verify": cmd_verify,
    "synth": cmd_synth,
}
_FLAG_FIELDS = ("kernel", "bandwidth", "seed", "subsample_cap", "gram_cap", "permutations", "bootstrap",
                "fdr_q", "eo_gate", "rho_gate", "k99_threshold", "top_j", "out")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, flags={k: getattr(args, k, None) for k in _FLAG_FIELDS})
        return COMMANDS[args.command](args, cfg)
    except InputError as e:
        print(f"kfa: input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except DegenerateDataError as e:
        print(f"kfa: degenerate data: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except KfaError as e:
        print(f"kfa: error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as e:  # noqa: BLE001 - last-resort exit code contract
        print(f"kfa: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
