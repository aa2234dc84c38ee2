import pytest

from kfa.errors import InputError
from kfa.verify import CHECKS, check_mwidth, run_all


def test_quick_suite_passes_across_seeds():
    for seed in (0, 5):
        failed = [r.name for r in run_all("quick", seed=seed) if not r.passed]
        assert failed == [], f"seed {seed}: {failed}"


def test_lambda_fault_fails_mwidth_only():
    assert not check_mwidth("quick", fault="lambda").passed
    assert check_mwidth("quick").passed


def test_unknown_scale():
    with pytest.raises(InputError):
        CHECKS["mmd_oracle"](scale="huge")


def test_result_serialization():
    d = CHECKS["kmr_dichotomy"]("quick").to_dict()
    assert d["passed"] is True
    assert isinstance(d["margin"], float)
    assert d["details"]["verdicts"]["perfect"] == "forces-S-equals-Y"
