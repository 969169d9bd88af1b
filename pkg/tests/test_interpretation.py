import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from routecap.encoders import FEATURES
from routecap.exceptions import ContractError, InsufficientDataError
from routecap.interpretation import (CIReport, GlobalStats, LocalContribution, RunningStats, accumulate,
                                     build_report, confidence_interval, local_contributions, parse_csv,
                                     render_csv, render_text, significance_vs_uniform, write_local_jsonl,
                                     z_value)
from oracles import two_pass_mean_var


# -- local contributions ---------------------------------------------------------

def test_inactive_feature_has_zero_rows():
    g = np.random.default_rng(0)
    p = g.uniform(size=7)
    p[3] = 0.0
    rec = local_contributions("x", FEATURES, p, np.full((7, 2), 0.5), g.standard_normal((7, 2)), np.zeros(2))
    assert np.all(rec.assignment[3] == 0) and np.all(rec.contribution[3] == 0)


def test_single_feature_hand_contribution():
    rec = local_contributions("x", ["a"], [1.0], [[0.8808, 0.1192]], [[2.0, 0.0]], [1.7616, 0.0])
    assert rec.contribution[0, 0] == pytest.approx(1.7616, abs=1e-12)
    assert rec.decomposition_gap() < 1e-12


def test_local_contributions_need_routing():
    with pytest.raises(ContractError):
        local_contributions("x", ["a"], [1.0], None, [[1.0]], [1.0])


def test_local_jsonl_round_trip():
    g = np.random.default_rng(1)
    rec = local_contributions("s1", FEATURES, g.uniform(size=7), np.full((7, 3), 1 / 3),
                              g.standard_normal((7, 3)), g.standard_normal(3), predicted=2, true=1)
    buf = io.StringIO()
    write_local_jsonl([rec], buf)
    back = LocalContribution.from_record(json.loads(buf.getvalue()))
    assert back.sample_id == "s1" and back.predicted == 2 and back.true == 1
    np.testing.assert_array_equal(back.contribution, rec.contribution)
    np.testing.assert_array_equal(back.assignment, rec.assignment)


# -- streaming statistics ---------------------------------------------------------

def test_constant_stream():
    s = accumulate(RunningStats(), [0.37] * 50)
    assert s.n == 50 and s.mean == pytest.approx(0.37, abs=1e-15) and s.variance == pytest.approx(0.0, abs=1e-30)


def test_three_value_stream():
    s = accumulate(RunningStats(), [0.2, 0.4, 0.6])
    assert s.n == 3
    assert s.mean == pytest.approx(0.4, abs=1e-15)
    assert s.variance == pytest.approx(0.04, abs=1e-15)


def test_order_independence_and_merge():
    g = np.random.default_rng(2)
    a, b = g.standard_normal(300), g.standard_normal(500) + 4
    ab = accumulate(accumulate(RunningStats(), a), b)
    ba = accumulate(accumulate(RunningStats(), b), a)
    merged = accumulate(RunningStats(), a).merge(accumulate(RunningStats(), b))
    ref_mean, ref_var = two_pass_mean_var(np.concatenate([a, b]))
    for s in (ab, ba, merged):
        assert s.n == 800
        assert float(s.mean) == pytest.approx(ref_mean, rel=1e-9)
        assert float(s.variance) == pytest.approx(ref_var, rel=1e-9)


def test_merge_with_empty_side():
    full = accumulate(RunningStats(), [1.0, 2.0, 4.0])
    for m in (full.merge(RunningStats()), RunningStats().merge(full)):
        assert m.n == 3 and m.mean == full.mean and m.variance == pytest.approx(full.variance)
    with pytest.raises(ContractError):
        full.merge(RunningStats((2,)))


def test_masked_cells_count_separately():
    s = RunningStats((2,))
    s.push([1.0, 10.0], mask=[True, False])
    s.push([3.0, 20.0], mask=[True, True])
    np.testing.assert_array_equal(s.n, [2, 1])
    np.testing.assert_allclose(s.mean, [2.0, 20.0])
    np.testing.assert_allclose(s.variance, [2.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200), st.integers(0, 1000))
def test_streaming_matches_two_pass(xs, seed):
    xs = np.random.default_rng(seed).permutation(np.array(xs))
    s = accumulate(RunningStats(), xs)
    mean, var = two_pass_mean_var(xs)
    assert float(s.mean) == pytest.approx(mean, rel=1e-9, abs=1e-9)
    assert float(s.variance) == pytest.approx(var, rel=1e-7, abs=1e-7)


# -- confidence intervals ---------------------------------------------------------

def test_ci_examples():
    assert confidence_interval(0.3, 0.0, 10) == (0.3, 0.3)
    lo, hi = confidence_interval(0.4, 0.04, 3)
    assert lo == pytest.approx(0.1737, abs=1e-3) and hi == pytest.approx(0.6263, abs=1e-3)
    w1 = np.subtract(*confidence_interval(0.5, 0.2, 25)[::-1])
    w4 = np.subtract(*confidence_interval(0.5, 0.2, 100)[::-1])
    assert w4 == pytest.approx(w1 / 2, rel=1e-12)


def test_ci_guards_and_levels():
    with pytest.raises(InsufficientDataError):
        confidence_interval(0.5, 0.1, 1)
    with pytest.raises(ContractError):
        confidence_interval(0.5, -0.1, 5)
    with pytest.raises(ContractError):
        z_value(1.0)
    assert z_value(0.95) == 1.959964
    assert z_value(0.90) == pytest.approx(1.644854, abs=1e-6)


def test_significance_examples():
    assert significance_vs_uniform((0.531, 0.747), 7)
    assert not significance_vs_uniform((0.052, 0.066), 7)
    assert not significance_vs_uniform((1 / 7, 1 / 7), 7)
    with pytest.raises(ContractError):
        significance_vs_uniform((0.5, 0.6), 1)


# -- global statistics and reports ------------------------------------------------

def _stats(group_by="none", n=60, J=3, seed=3):
    g = np.random.default_rng(seed)
    r = g.dirichlet(np.ones(J), size=(n, 7))
    p = g.uniform(size=(n, 7))
    true, pred = g.integers(0, J, n), g.integers(0, J, n)
    stats = GlobalStats(list(FEATURES), J, group_by)
    stats.add_batch(p[:25], r[:25], true[:25], pred[:25])
    stats.add_batch(p[25:], r[25:], true[25:], pred[25:])
    return stats, p, r, true, pred


def test_global_stats_match_direct_means():
    stats, p, r, true, pred = _stats()
    np.testing.assert_allclose(stats.r.mean, r.mean(0), atol=1e-12)
    np.testing.assert_allclose(stats.p.mean, p.mean(0), atol=1e-12)
    np.testing.assert_allclose(stats.pr.mean, (p[..., None] * r).mean(0), atol=1e-12)


def test_true_label_grouping_and_pooled_column():
    stats, p, r, true, pred = _stats("true-label")
    for j in range(3):
        np.testing.assert_allclose(stats.r.mean[:, j], r[true == j, :, j].mean(0), atol=1e-12)
    np.testing.assert_allclose(stats.r_at_label.mean, r[np.arange(60), :, true].mean(0), atol=1e-12)
    report = build_report(stats, "r", label_names=["x", "y", "z"])
    assert report.labels == ["x", "y", "z", "true"]
    assert report.cell("a", "true").mean == pytest.approx(stats.r_at_label.mean[0])


def test_predicted_grouping_uses_predictions():
    stats, p, r, true, pred = _stats("predicted-label")
    np.testing.assert_array_equal(stats.r.n[0], np.bincount(pred, minlength=3))


def test_grouping_needs_labels():
    stats = GlobalStats(list(FEATURES), 2, "true-label")
    with pytest.raises(ContractError):
        stats.add_batch(np.ones((1, 7)), np.full((1, 7, 2), 0.5))
    with pytest.raises(ContractError):
        GlobalStats(list(FEATURES), 2, "by-color")


def test_multilabel_grouping_counts_every_active_label():
    stats = GlobalStats(list(FEATURES), 3, "true-label")
    stats.add_batch(np.ones((2, 7)), np.full((2, 7, 3), 1 / 3), true=np.array([[1, 0, 1], [1, 1, 0]]))
    np.testing.assert_array_equal(stats.r.n[0], [2, 1, 1])
    assert stats.r_at_label.n.max() == 0


def test_merge_global_stats():
    whole, *_ = _stats(seed=4)
    g = np.random.default_rng(4)
    r = g.dirichlet(np.ones(3), size=(60, 7))
    p = g.uniform(size=(60, 7))
    left, right = GlobalStats(list(FEATURES), 3), GlobalStats(list(FEATURES), 3)
    left.add_batch(p[:10], r[:10])
    right.add_batch(p[10:], r[10:])
    merged = left.merge(right)
    np.testing.assert_allclose(merged.r.mean, whole.r.mean, atol=1e-12)
    np.testing.assert_allclose(merged.pr.variance, whole.pr.variance, atol=1e-12)


def test_report_markers_follow_definition():
    stats, *_ = _stats(n=400)
    report = build_report(stats, "r")
    assert len(report.entries) == 21
    for e in report.entries:
        assert e.significant == (e.lo > 1 / 3)


def test_p_report_is_single_column_without_markers():
    stats, *_ = _stats()
    report = build_report(stats, "p")
    assert report.baseline is None and report.labels == []
    assert [e.label for e in report.entries] == [""] * 7
    assert not any(e.significant for e in report.entries)
    text = render_text(report)
    assert "Confidence Interval" in text.splitlines()[0]
    assert [line.split()[0] for line in text.splitlines()[1:8]] == [f"p_{f}" for f in FEATURES]


def test_empty_report_renders_header_only():
    report = build_report(GlobalStats(list(FEATURES), 7), "r")
    assert render_csv(report) == "feature,label,mean,lo,hi,significant\n"
    assert parse_csv(render_csv(report)) == []


def test_csv_round_trip():
    stats, *_ = _stats("true-label")
    report = build_report(stats, "pr", label_names=["n", "o", "p"])
    assert parse_csv(render_csv(report)) == report.entries


def test_csv_round_trip_with_single_observation():
    stats = GlobalStats(["a"], 2)
    stats.add_batch(np.ones((1, 1)), np.array([[[0.7, 0.3]]]))
    report = build_report(stats, "r")
    assert report.entries[0].lo is None
    assert parse_csv(render_csv(report)) == report.entries
    assert "mean 0.700" in render_text(report)


def test_parse_csv_rejects_wrong_header():
    with pytest.raises(ContractError):
        parse_csv("feature,label\n")


def test_seven_label_text_grid():
    stats, *_ = _stats(n=300, J=7)
    report = build_report(stats, "r", label_names=[str(k) for k in range(-3, 4)])
    lines = render_text(report).splitlines()
    assert lines[0].split() == [str(k) for k in range(-3, 4)]
    assert [line.split()[0] for line in lines[1:8]] == [f"r_{f}" for f in FEATURES]
    assert isinstance(report, CIReport) and report.baseline == pytest.approx(1 / 7)
