import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bonegraph.metrics import (
    MetricsReport,
    aggregate,
    evaluate,
    mean_metric,
    read_report_csv,
    write_report_csv,
)
from bonegraph.imagecore import Delineation

DIST_FIELDS = ["rmse_mm", "med_mm", "ohd_mm", "shd_mm", "ohd95_mm", "shd95_mm", "mse_mm"]


def curve(cols, depths, spacing=0.1):
    return Delineation(cols, depths, spacing)


def report_with(rmse, ohd, shd):
    return MetricsReport(rmse, 0, ohd, shd, 0, 0, 0, 0, 1, 1, 1, 0)


def test_identity_all_zero():
    gs = curve(range(10), np.linspace(5, 9, 10))
    r = evaluate(gs, gs)
    for f in DIST_FIELDS:
        assert getattr(r, f) == 0.0
    assert r.mp_percent == 0.0


def test_uniform_offset():
    gs = curve(range(20), [10.0] * 20)
    pred = curve(range(20), [13.0] * 20)
    r = evaluate(pred, gs, 0.1)
    for f in ("mse_mm", "rmse_mm", "ohd_mm", "med_mm", "shd_mm"):
        assert getattr(r, f) == pytest.approx(0.3, abs=1e-12), f


def test_miss_percentage():
    gs = curve([0, 1, 2, 3], [5.0] * 4)
    pred = curve([1, 3], [5.0, 5.0])
    r = evaluate(pred, gs)
    assert r.mp_percent == 50.0
    assert (r.n_gs, r.n_pred, r.n_both, r.n_gs_only) == (4, 2, 2, 2)


def test_shd_ignores_unannotated_columns():
    gs = curve([0, 1, 2], [5.0, 5.0, 5.0])
    pred = curve([0, 1, 2, 40], [5.0, 5.0, 5.0, 90.0])
    r = evaluate(pred, gs, 1.0)
    assert r.shd_mm == 0.0 and r.mp_percent == 0.0


def test_two_dimensional_distances():
    gs = curve([0, 1, 2, 3, 4], [10.0] * 5, 1.0)
    pred = curve([4], [13.0], 1.0)
    r = evaluate(pred, gs)
    d = np.hypot(np.arange(5) - 4, 3.0)
    assert r.rmse_mm == pytest.approx(math.sqrt(np.mean(d ** 2)))
    assert r.med_mm == pytest.approx(d.mean())
    assert r.ohd_mm == pytest.approx(d.max())
    assert r.ohd95_mm == pytest.approx(np.percentile(d, 95))
    assert r.mse_mm == pytest.approx(3.0)


def test_empty_prediction_sentinel():
    gs = curve([0, 1], [1.0, 2.0])
    r = evaluate(Delineation.empty(0.1), gs)
    assert r.mp_percent == 100.0
    assert all(math.isinf(getattr(r, f)) for f in DIST_FIELDS)


def test_empty_gs_rejected():
    with pytest.raises(ValueError):
        evaluate(curve([0], [1.0]), Delineation.empty(0.1))


def test_mean_metric_values():
    assert mean_metric(report_with(0.42, 1.35, 2.77)) == pytest.approx(1.513, abs=5e-4)
    assert round(mean_metric(report_with(0.42, 1.35, 2.77)), 2) == 1.51
    assert round(mean_metric(report_with(0.56, 1.59, 3.37)), 2) == 1.84
    assert mean_metric(report_with(0, 0, 0)) == 0
    assert math.isinf(mean_metric(report_with(math.inf, 1, 1)))


curves = st.lists(st.tuples(st.integers(0, 30), st.floats(0, 50)), min_size=1, max_size=15,
                  unique_by=lambda t: t[0])


def as_curve(pts, spacing=0.1, dc=0, dd=0.0):
    return Delineation([c + dc for c, _ in pts], [d + dd for _, d in pts], spacing)


@given(curves, curves, st.integers(0, 20), st.floats(0, 30))
def test_translation_invariance(p, g, dc, dd):
    a = evaluate(as_curve(p), as_curve(g))
    b = evaluate(as_curve(p, dc=dc, dd=dd), as_curve(g, dc=dc, dd=dd))
    for f in DIST_FIELDS:
        va, vb = getattr(a, f), getattr(b, f)
        assert va == vb or va == pytest.approx(vb, abs=1e-9), f
    assert a.mp_percent == b.mp_percent


@given(curves, curves)
def test_scale_covariance(p, g):
    a = evaluate(as_curve(p), as_curve(g), 0.1)
    b = evaluate(as_curve(p), as_curve(g), 0.2)
    for f in DIST_FIELDS:
        assert getattr(b, f) == 2 * getattr(a, f), f
    assert a.mp_percent == b.mp_percent


@given(curves, curves, st.tuples(st.integers(31, 60), st.floats(0, 50)))
def test_adding_prediction_never_hurts(p, g, extra):
    a = evaluate(as_curve(p), as_curve(g))
    b = evaluate(as_curve(p + [extra]), as_curve(g))
    assert b.rmse_mm <= a.rmse_mm and b.med_mm <= a.med_mm and b.ohd_mm <= a.ohd_mm


@given(curves, curves)
def test_percentiles_below_max(p, g):
    r = evaluate(as_curve(p), as_curve(g))
    assert r.ohd95_mm <= r.ohd_mm
    assert r.shd95_mm <= r.shd_mm
    assert 0 <= r.mp_percent <= 100


def test_report_csv_round_trip(tmp_path):
    gs = curve(range(5), [3.0] * 5)
    reports = [evaluate(curve(range(5), [3.0 + k] * 5), gs) for k in range(3)]
    write_report_csv(tmp_path / "m.csv", ["a", "b", "c"], reports)
    back = read_report_csv(tmp_path / "m.csv")
    assert list(back) == ["a", "b", "c", "mean"]
    assert back["mean"]["mse_mm"] == pytest.approx(0.1)
    assert back["c"]["rmse_mm"] == reports[2].rmse_mm
    header = (tmp_path / "m.csv").read_text().splitlines()[0].split(",")
    assert header == ["image"] + MetricsReport.columns()
    assert aggregate(reports)[0] == pytest.approx(np.mean([r.rmse_mm for r in reports]))
