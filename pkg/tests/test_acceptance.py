"""
Acceptance suite: the ten criteria at their stated tolerances.

Each test records a PASS/FAIL line; the lines are printed together at the end
of the pytest run (see ``conftest.pytest_terminal_summary``). Run on its own
with ``python -m pytest tests/test_acceptance.py``.
"""

import json
import time

import pytest

from kfa.cli import main
from kfa.synthetic import PopulationSpec
from kfa.verify import (
    check_bridge,
    check_collapse,
    check_inference,
    check_kmr,
    check_linear_reduction,
    check_master_identity,
    check_mmd_oracle,
    check_mwidth,
    check_pareto,
)

TITLES = {
    1: "MMD oracle agreement",
    2: "Linear-kernel Euclidean reduction",
    3: "m-width sandwich",
    4: "Coupling identity and representation bound",
    5: "Classifier error frontier",
    6: "Score dichotomy verdicts",
    7: "Fair-feature collapse",
    8: "Score tail bound",
    9: "Inference calibration",
    10: "CLI determinism",
}
RESULTS = {}


def record(num, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {num:>2}. {TITLES[num]}: {detail}"
    RESULTS[num] = line
    print(line)
    return passed


def run_check(fn, limit=None):
    t0 = time.perf_counter()
    res = fn(scale="full")
    secs = time.perf_counter() - t0
    ok = res.passed and (limit is None or secs < limit)
    shown = ", ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in res.details.items()
                      if not isinstance(v, (dict, list)))
    timing = f"{secs:.2f}s" + (f" (limit {limit}s)" if limit else "")
    return ok, f"{shown}; {timing}"


@pytest.mark.parametrize(
    "num, fn, limit",
    [
        (1, check_mmd_oracle, 5),
        (2, check_linear_reduction, None),
        (3, check_mwidth, 30),
        (4, check_master_identity, None),
        (5, check_pareto, None),
        (6, check_kmr, None),
        (7, check_collapse, None),
        (8, check_bridge, 60),
        (9, check_inference, None),
    ],
    ids=[f"criterion_{i}" for i in range(1, 10)],
)
def test_criterion(num, fn, limit):
    ok, detail = run_check(fn, limit)
    assert record(num, ok, detail), detail


def _pop(tmp_path):
    p = tmp_path / "pop.json"
    p.write_text(PopulationSpec.shifted(dim=2, p_a=0.4, p_b=0.2, n=400, seed=1).to_json())
    return str(p)


def _clf(tmp_path):
    p = tmp_path / "clf.json"
    p.write_text(json.dumps({"p_a": 0.4, "p_b": 0.15, "n": 5000, "seed": 3, "classifiers": [
        {"name": "c0", "tpr": 0.9, "fpr": 0.1}, {"name": "c1", "tpr": 0.5, "fpr": 0.0}]}))
    return str(p)


def _enc(tmp_path):
    p = tmp_path / "enc.json"
    pop = json.loads(PopulationSpec.shifted(p_a=0.45, p_b=0.2, n=300, seed=2).to_json())
    p.write_text(json.dumps({"population": pop, "encoders": [
        {"name": "e0", "epsilon": 0.0, "rho": 0.0}, {"name": "e1", "epsilon": 0.1, "rho": 0.05}]}))
    return str(p)


def test_criterion_10_determinism(tmp_path):
    fast = ["--permutations", "99", "--bootstrap", "100", "--seed", "11"]
    commands = {
        "spectral": ["spectral", "--population", _pop(tmp_path), *fast],
        "pareto": ["pareto", "--synthetic", _clf(tmp_path), *fast],
        "representation": ["representation", "--synthetic", _enc(tmp_path), *fast],
        "verify": ["verify", "--scale", "quick", "--seed", "11"],
        "synth": ["synth", "population", "--spec", _pop(tmp_path), "--seed", "11"],
    }
    mismatched, failed = [], []
    for name, argv in commands.items():
        dirs = [tmp_path / f"{name}_{k}" for k in (1, 2)]
        codes = [main([*argv, "--out", str(d)]) for d in dirs]
        if codes != [0, 0]:
            failed.append(f"{name} exit {codes}")
            continue
        files = sorted(p.name for p in dirs[0].iterdir())
        if files != sorted(p.name for p in dirs[1].iterdir()):
            mismatched.append(name)
        for f in files:
            if (dirs[0] / f).read_bytes() != (dirs[1] / f).read_bytes():
                mismatched.append(f"{name}/{f}")
    ok = not mismatched and not failed
    detail = f"{len(commands)} commands rerun" + (f"; differing: {mismatched}" if mismatched else "") + (
        f"; failed: {failed}" if failed else "")
    assert record(10, ok, detail), detail
