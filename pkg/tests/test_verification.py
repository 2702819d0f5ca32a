"""Theory oracle: every check passes, enumeration counts, failure injection."""

import math

import pytest

from pseudorank.verification import (
    check_bpr_equivalence,
    check_dcg_maximizers,
    check_gradients,
    check_softmax_bound,
    run_all,
)


def test_bpr_equivalence_passes_tightly():
    report = check_bpr_equivalence(trials=300, seed=1)
    assert report.passed
    assert report.max_deviation < 1e-9
    assert report.counterexample is None


def test_softmax_bound_passes():
    report = check_softmax_bound(trials=300, seed=2)
    assert report.passed
    assert report.details["max_lower_bound_violation"] <= 1e-9


def test_dcg_maximizers_count_is_factorial_product():
    report = check_dcg_maximizers(n_items=6, n_positives=2, k=2)
    assert report.passed
    assert report.details["n_maximizers"] == 48  # 2! * 4!
    assert report.details["expected_count"] == math.factorial(2) * math.factorial(4)
    assert report.details["rotation_checked"]


def test_dcg_maximizers_all_positives_all_ranks():
    # every permutation maximizes when everything is relevant
    report = check_dcg_maximizers(n_items=4, n_positives=4, k=4)
    assert report.passed
    assert report.details["n_maximizers"] == math.factorial(4)


def test_dcg_maximizers_single_positive_unique_top():
    # one positive, cutoff 2: only permutations starting with it maximize
    report = check_dcg_maximizers(n_items=4, n_positives=1, k=2)
    assert report.passed
    assert report.details["n_maximizers"] == math.factorial(3)
    assert not report.details["rotation_checked"]  # rotation demotes the positive


def test_dcg_maximizers_rejects_large_catalogues():
    with pytest.raises(ValueError, match="<= 8"):
        check_dcg_maximizers(n_items=9)


def test_gradient_check_passes():
    report = check_gradients(seed=3)
    assert report.passed
    assert report.max_deviation < 1e-4
    assert report.n_instances >= 200
    assert report.details["n_tensors"] == 14  # 2 tables + 3 MLPs x 4 tensors


def test_run_all_reports_have_unique_names():
    reports = run_all(include_timing=False)
    names = [r.name for r in reports]
    assert len(names) == len(set(names))
    assert all(r.passed for r in reports)
    assert all(r.line().startswith("PASS") for r in reports)


def test_run_all_injected_failure_carries_counterexample():
    reports = run_all(include_timing=False, inject_failure="softmax_bound")
    failed = [r for r in reports if not r.passed]
    assert len(failed) == 1
    assert failed[0].name == "softmax_bound"
    assert failed[0].counterexample == {"injected": True}
    assert not failed[0].advisory


def test_run_all_rejects_unknown_injection():
    with pytest.raises(ValueError, match="unknown check"):
        run_all(include_timing=False, inject_failure="nope")


def test_reports_serialize_to_json():
    import json

    reports = run_all(include_timing=False)
    payload = json.dumps([r.to_dict() for r in reports])
    assert "pairwise_equivalence" in payload
