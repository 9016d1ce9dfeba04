import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyforge.geometry import PolygonSet, PolygonWithHoles, Ring, turn_angles
from polyforge.metrics import (
    EvalConfig,
    EvalReport,
    LogNormalFit,
    SfParams,
    boundary_iou,
    c_iou,
    count_inflections,
    evaluate,
    fit_lognormal,
    iou,
    match_polygons,
    polis,
    s_iou,
    scr,
    sf_thresholds,
    simplicity_factor,
)
from polyforge.raster import rasterize

from oracles import brute_polis, count_turns, fraction_c_iou, mp_simplicity_factor

PARAMS = SfParams(0.1, (20.0, 60.0, 150.0))


def rect(x0, y0, x1, y1):
    return Ring([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def square_mask(n, lo, hi):
    m = np.zeros((n, n), bool)
    m[lo:hi, lo:hi] = True
    return m


def random_polygon(rng, n=None, centre=(50, 50)):
    n = n or int(rng.integers(3, 12))
    ang = (np.arange(n) + rng.uniform(0, 0.9, n)) * 2 * np.pi / n
    rad = rng.uniform(5, 25, n)
    return Ring(np.column_stack([centre[0] + rad * np.cos(ang), centre[1] + rad * np.sin(ang)]))


def doubled(ring: Ring) -> Ring:
    p = ring.points
    mids = 0.5 * (p + np.roll(p, -1, axis=0))
    return Ring(np.stack([p, mids], axis=1).reshape(-1, 2))


# -- IoU family -------------------------------------------------------------------


def test_iou_basic_cases():
    a = square_mask(100, 20, 80)
    assert iou(a, a) == 1.0
    assert iou(a, ~a) == 0.0
    assert iou(np.zeros((5, 5)), np.zeros((5, 5))) == 1.0
    assert iou(square_mask(100, 20, 80), np.ones((100, 100), bool)) == pytest.approx(0.36)


def test_iou_dimension_mismatch():
    with pytest.raises(ValueError):
        iou(np.zeros((5, 5)), np.zeros((5, 6)))
    with pytest.raises(ValueError):
        boundary_iou(np.zeros((5, 5)), np.zeros((6, 5)), 1)


def test_boundary_iou_identical_and_disjoint():
    a = square_mask(200, 20, 60)
    assert boundary_iou(a, a, 3) == 1.0
    b = np.roll(a, 100, axis=1)
    assert boundary_iou(a, b, 3) == 0.0


def test_boundary_iou_more_sensitive_than_iou(rng):
    a = square_mask(128, 24, 104)
    noisy = a.copy()
    edge = np.argwhere(a ^ np.roll(a, 1, 0) | a ^ np.roll(a, 1, 1))
    flip = edge[rng.random(len(edge)) < 0.5]
    noisy[flip[:, 0], flip[:, 1]] ^= True
    assert boundary_iou(a, noisy, 3) < iou(a, noisy) < 1


def test_c_iou_examples():
    assert c_iou(0.8, 10, 30) == pytest.approx(0.4)
    assert c_iou(0.8, 30, 10) == pytest.approx(0.4)
    assert c_iou(0.7, 12, 12) == 0.7
    with pytest.raises(ValueError):
        c_iou(0.5, 2, 10)


def test_c_iou_matches_exact_fraction_oracle(rng):
    for _ in range(1000):
        v = float(rng.random())
        a, b = (int(x) for x in rng.integers(3, 5000, 2))
        exact = fraction_c_iou(v, a, b)
        assert c_iou(v, a, b) == pytest.approx(float(exact), rel=1e-12, abs=1e-15)


@given(st.floats(0, 1), st.integers(3, 10**6), st.integers(3, 10**6))
def test_c_iou_symmetric_and_bounded(v, a, b):
    assert c_iou(v, a, b) == c_iou(v, b, a)
    assert 0 <= c_iou(v, a, b) <= v
    assert c_iou(v, a, a) == v


# -- log-normal fit and SF -------------------------------------------------------------


def test_constant_counts_fit():
    fit = fit_lognormal([7, 7, 7, 7])
    assert fit.mu == pytest.approx(math.log(7)) and fit.sigma == 0
    assert sf_thresholds(fit) == pytest.approx((7, 7, 7))
    with pytest.raises(ValueError, match="zero spread"):
        SfParams.from_fit(fit)


def test_two_point_closed_form():
    fit = fit_lognormal([math.e, math.e**3])
    assert fit.mu == pytest.approx(2.0) and fit.sigma == pytest.approx(1.0)
    assert sf_thresholds(fit)[0] == pytest.approx(math.exp(3))


def test_lognormal_sampling_recovery():
    x = np.random.default_rng(7).lognormal(2.0, 0.5, 100_000)
    # vertex counts never fall below one; truncating at -4 sigma moves the fit by ~1e-4
    x = x[x >= 1]
    assert len(x) >= 99_990
    fit = fit_lognormal(x)
    assert abs(fit.mu - 2.0) <= 0.01 and abs(fit.sigma - 0.5) <= 0.01
    for i, t in enumerate(sf_thresholds(fit), start=1):
        assert t == pytest.approx(math.exp(fit.mu + i * fit.sigma), rel=1e-9)


def test_fit_rejects_bad_counts():
    with pytest.raises(ValueError):
        fit_lognormal([5, 0, 7])
    with pytest.raises(ValueError):
        fit_lognormal([5])


def test_sigma_is_population_std():
    c = [4, 8, 16, 64]
    assert fit_lognormal(c).sigma == pytest.approx(np.log(c).std(ddof=0))


def test_sf_params_validation():
    with pytest.raises(ValueError):
        SfParams(0.0, (10, 20, 30))
    with pytest.raises(ValueError):
        SfParams(0.1, (20, 10, 30))
    with pytest.raises(ValueError):
        SfParams(0.1, (2, 10, 30))
    with pytest.raises(ValueError):
        LogNormalFit(1.0, -0.1)
    p = SfParams.from_json(PARAMS.to_json())
    assert p == PARAMS


def test_sf_at_three_is_one():
    assert simplicity_factor(3, PARAMS) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        simplicity_factor(2, PARAMS)


def test_sf_vanishes_for_huge_counts():
    assert simplicity_factor(10**6, PARAMS) < 1e-9


def test_sf_strictly_decreasing_and_bounded():
    sf = simplicity_factor(np.arange(3, 501), PARAMS)
    assert (np.diff(sf) < 0).all()
    assert (sf > 0).all() and (sf <= 1).all()


def test_sf_matches_high_precision_oracle(rng):
    for _ in range(1000):
        t = np.sort(rng.uniform(4, 400, 3))
        if np.diff(t).min() == 0:
            continue
        k = float(rng.uniform(0.01, 1.0))
        n = int(rng.integers(3, 2000))
        params = SfParams(k, tuple(t))
        expect = mp_simplicity_factor(n, k, t)
        assert simplicity_factor(n, params) == pytest.approx(expect, rel=1e-9, abs=1e-300)


def test_sf_steepest_drop_near_a_threshold():
    sf = simplicity_factor(np.arange(3, 400), PARAMS)
    steepest = 3 + int(np.argmax(-np.diff(sf)))
    assert min(abs(steepest - t) for t in PARAMS.thresholds) <= 5


def test_s_iou_examples():
    assert s_iou(1.0, 3, PARAMS) == pytest.approx(1.0)
    assert s_iou(0.75, 40, PARAMS) == pytest.approx(0.75 * simplicity_factor(40, PARAMS))
    assert s_iou(0.75, 40, PARAMS) < 0.75


# -- PoLiS -----------------------------------------------------------------------


def test_polis_identical_is_zero():
    p = PolygonWithHoles(rect(0, 0, 10, 10))
    assert polis(p, p) == 0.0


def test_polis_half_pixel_offset_unit_squares():
    # each side has two vertices at 0.5 and two lying on the other boundary
    a = PolygonWithHoles(rect(0, 0, 1, 1))
    b = PolygonWithHoles(rect(0.5, 0, 1.5, 1))
    assert polis(a, b) == pytest.approx(0.25, abs=1e-12)
    assert polis(a, b) == pytest.approx(brute_polis([a.exterior.points.tolist()], [b.exterior.points.tolist()]))


def test_polis_matches_brute_force_oracle(rng):
    for _ in range(1000):
        a = PolygonWithHoles(random_polygon(rng))
        b = PolygonWithHoles(random_polygon(rng, centre=tuple(rng.uniform(40, 60, 2))))
        expect = brute_polis([a.exterior.points.tolist()], [b.exterior.points.tolist()])
        assert polis(a, b) == pytest.approx(expect, rel=1e-9, abs=1e-12)


def test_polis_counts_hole_rings():
    a = PolygonWithHoles(rect(0, 0, 30, 30), (rect(10, 10, 20, 20),))
    b = PolygonWithHoles(rect(1, 0, 31, 30), (rect(11, 10, 21, 20),))
    rings = lambda p: [r.points.tolist() for r in p.rings]  # noqa: E731
    assert polis(a, b) == pytest.approx(brute_polis(rings(a), rings(b)))


@given(st.integers(0, 2**32 - 1), st.floats(-100, 100), st.floats(-100, 100), st.floats(0, 2 * math.pi))
def test_polis_symmetric_and_rigid_invariant(seed, dx, dy, phi):
    rng = np.random.default_rng(seed)
    a, b = random_polygon(rng), random_polygon(rng, centre=(55, 45))
    c, s = math.cos(phi), math.sin(phi)
    rot = np.array([[c, s], [-s, c]])
    pa, pb = PolygonWithHoles(a), PolygonWithHoles(b)
    moved = [PolygonWithHoles(Ring(r.points @ rot + (dx, dy))) for r in (a, b)]
    d = polis(pa, pb)
    assert d == pytest.approx(polis(pb, pa), rel=1e-12)
    assert d == pytest.approx(polis(*moved), rel=1e-6, abs=1e-9)


# -- SCR ---------------------------------------------------------------------------


def square_set():
    return PolygonSet((PolygonWithHoles(rect(10, 10, 50, 50)),), (64, 64))


def test_scr_self_is_one():
    assert scr(square_set(), square_set()) == 1.0


def test_scr_zigzag_doubles_inflections():
    # each edge midpoint pushed outward so every half-edge bends 22.5 deg: all 8 turns are 45 deg
    h = 20 * math.tan(math.radians(22.5))
    zig = Ring([[10, 10], [30, 10 - h], [50, 10], [50 + h, 30], [50, 50], [30, 50 + h], [10, 50], [10 - h, 30]])
    assert np.allclose(180 - turn_angles(zig.points), 45)
    pred = PolygonSet((PolygonWithHoles(zig),), (64, 64))
    assert count_inflections(pred, 30) == 8
    assert scr(pred, square_set(), 30) == 2.0


def test_scr_octagon_below_threshold_is_zero():
    t = np.pi / 8 + np.arange(8) * np.pi / 4
    octagon = Ring(np.column_stack([30 + 20 * np.cos(t), 30 + 20 * np.sin(t)]))
    pred = PolygonSet((PolygonWithHoles(octagon),), (64, 64))
    assert scr(pred, square_set(), 50) == 0.0


def test_scr_smooth_truth_undefined():
    t = 2 * np.pi * np.arange(64) / 64
    circle = PolygonSet((PolygonWithHoles(Ring(np.column_stack([30 + 20 * np.cos(t), 30 + 20 * np.sin(t)]))),), (64, 64))
    with pytest.raises(ValueError, match="smooth ground truth"):
        scr(square_set(), circle)


def test_inflection_count_matches_oracle(rng):
    for _ in range(200):
        polys = [PolygonWithHoles(random_polygon(rng, int(rng.integers(3, 20)))) for _ in range(2)]
        theta = float(rng.uniform(5, 80))
        expect = count_turns([p.exterior.points.tolist() for p in polys], theta)
        assert count_inflections(PolygonSet(tuple(polys), (100, 100)), theta) == expect


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10))
def test_scr_scale_invariant(seed, s):
    rng = np.random.default_rng(seed)
    a, b = random_polygon(rng, 10), square_set().polygons[0].exterior
    sets = [PolygonSet((PolygonWithHoles(r),), (100, 100)) for r in (a, b)]
    scaled = [PolygonSet((PolygonWithHoles(Ring(r.points * s)),), (1000, 1000)) for r in (a, b)]
    assert scr(*sets) == scr(*scaled)


# -- evaluate ------------------------------------------------------------------------


def two_polygon_truth():
    return PolygonSet(
        (PolygonWithHoles(rect(10, 10, 60, 40), (rect(25, 20, 45, 30),)), PolygonWithHoles(rect(70, 60, 110, 110))),
        (128, 128),
    )


def test_self_evaluation_is_perfect():
    t = two_polygon_truth()
    m = evaluate(t, t, config=EvalConfig(sf_params=PARAMS))
    assert (m.iou, m.b_iou, m.c_iou, m.n_ratio, m.scr, m.apls) == (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    assert m.polis <= 1e-9
    assert m.unmatched_pred == m.unmatched_truth == 0
    assert m.s_iou == pytest.approx(m.sf) and 0 < m.sf <= 1


def test_vertex_doubled_prediction():
    t = two_polygon_truth()
    pred = PolygonSet(
        tuple(PolygonWithHoles(doubled(p.exterior), tuple(doubled(h) for h in p.holes)) for p in t), t.grid_dims
    )
    m = evaluate(pred, t)
    assert m.iou == 1.0 and m.n_ratio == 2.0
    assert m.c_iou == pytest.approx(2 / 3)


def test_missing_polygon_bookkeeping():
    t = two_polygon_truth()
    pred = PolygonSet(t.polygons[:1], t.grid_dims)
    m = evaluate(pred, t)
    assert m.unmatched_truth == 1 and m.unmatched_pred == 0
    assert m.iou < 1


def test_empty_truth_lists_undefined_metrics():
    empty = PolygonSet((), (32, 32))
    with pytest.raises(ValueError, match="c_iou.*polis.*scr.*apls"):
        evaluate(two_polygon_truth(), empty, grid_dims=(128, 128))


def test_empty_prediction_scores_zero():
    t = two_polygon_truth()
    m = evaluate(PolygonSet((), t.grid_dims), t, config=EvalConfig(sf_params=PARAMS))
    assert m.iou == 0 and m.c_iou == 0 and m.n_ratio == 0 and m.s_iou == 0
    assert math.isnan(m.polis) and m.unmatched_truth == 2


def test_match_polygons_by_overlap():
    t = two_polygon_truth()
    pred = PolygonSet((t.polygons[1], t.polygons[0]), t.grid_dims)
    assert sorted(match_polygons(pred, t, 128, 128)) == [(0, 1), (1, 0)]


def test_report_aggregate_is_order_free():
    t = two_polygon_truth()
    a = evaluate(t, t, image="a")
    b = evaluate(PolygonSet(t.polygons[:1], t.grid_dims), t, image="b")
    r1, r2 = EvalReport([a]).merge(EvalReport([b])), EvalReport([b, a])
    agg1, agg2 = r1.aggregate(), r2.aggregate()
    assert agg1.keys() == agg2.keys()
    for k in agg1:
        assert agg1[k] == pytest.approx(agg2[k], nan_ok=True)
    assert agg1["count"] == 2


def test_doubled_masks_agree(rng):
    # rasterization of vertex-doubled rings is pixel-identical
    for _ in range(20):
        r = random_polygon(rng)
        ps = PolygonSet((PolygonWithHoles(r),), (100, 100))
        pd = PolygonSet((PolygonWithHoles(doubled(r)),), (100, 100))
        assert np.array_equal(rasterize(ps), rasterize(pd))
