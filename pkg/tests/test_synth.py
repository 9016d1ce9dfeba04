import numpy as np
import pytest
from scipy.spatial import cKDTree

from polyforge.geometry import is_simple
from polyforge.raster import rasterize, render_heatmap
from polyforge.synth import Degradation, SceneError, SceneSpec, synth_scene
from polyforge.vertices import polygon_vertices


def test_same_seed_same_scene():
    spec = SceneSpec(seed=11, holes=1, degradation=Degradation(1.5, 0.2, 2.0, 1.0, 0.8))
    a, b = synth_scene(spec), synth_scene(spec)
    assert [r.points.tolist() for r in a.truth.rings()] == [r.points.tolist() for r in b.truth.rings()]
    for name in ("mask", "heatmap", "degraded_mask", "degraded_heatmap"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_different_seeds_differ():
    a, b = synth_scene(SceneSpec(seed=1)), synth_scene(SceneSpec(seed=2))
    assert not np.array_equal(a.mask, b.mask)


def test_zero_degradation_is_bit_exact():
    s = synth_scene(SceneSpec(seed=5, holes=2, branches=1))
    assert np.array_equal(s.degraded_mask, s.mask)
    assert np.array_equal(s.degraded_heatmap, s.heatmap)
    assert s.degraded_mask is not s.mask


def test_full_dropout_zeroes_the_heatmap():
    s = synth_scene(SceneSpec(seed=3, degradation=Degradation(vertex_dropout_prob=1.0)))
    assert not s.degraded_heatmap.any()
    assert s.heatmap.max() == 1.0


def test_clean_outputs_are_rasterize_and_render_of_truth():
    for seed in range(10):
        spec = SceneSpec(seed=seed, holes=seed % 3, branches=seed % 2)
        s = synth_scene(spec)
        w, h = spec.grid
        assert np.array_equal(s.mask, rasterize(s.truth, w, h))
        assert np.array_equal(s.heatmap, render_heatmap(polygon_vertices(s.truth).xy, w, h, spec.sigma))


@pytest.mark.parametrize("holes", [0, 1, 2])
def test_truth_is_simple_with_requested_holes(holes):
    for seed in range(15):
        spec = SceneSpec(seed=seed, holes=holes, branches=2 if holes else 3, curvature=0.6)
        s = synth_scene(spec)
        assert len(s.truth) >= 1
        assert sum(len(p.holes) for p in s.truth) == holes
        for ring in s.truth.rings():
            assert is_simple(ring.points)
        for p in s.truth:
            p.validate()
        xy = polygon_vertices(s.truth).xy
        d, _ = cKDTree(xy).query(xy, k=2)
        assert d[:, 1].min() >= spec.min_vertex_spacing
        assert not s.truth.out_of_bounds()


def test_degradations_perturb():
    clean = synth_scene(SceneSpec(seed=8))
    noisy = synth_scene(SceneSpec(seed=8, degradation=Degradation(boundary_noise_px=2.0)))
    assert np.array_equal(clean.mask, noisy.mask)
    assert not np.array_equal(noisy.degraded_mask, noisy.mask)
    blurred = synth_scene(SceneSpec(seed=8, degradation=Degradation(blur_sigma=3.0, peak_scale=0.5)))
    assert blurred.degraded_heatmap.max() <= 0.5 + 1e-12


def test_invalid_specs_rejected():
    bad = [
        {"grid": (0, 10)},
        {"road_width": (5, 2)},
        {"curvature": 1.5},
        {"holes": 3},
        {"branches": 3, "holes": 1},
        {"max_retries": 0},
    ]
    for kw in bad:
        with pytest.raises(ValueError):
            SceneSpec(**kw)
    with pytest.raises(ValueError):
        Degradation(vertex_dropout_prob=1.5)
    with pytest.raises(ValueError):
        Degradation(peak_scale=0.0)


def test_degradation_from_mapping():
    spec = SceneSpec(degradation={"vertex_jitter_px": 1.0})
    assert spec.degradation == Degradation(vertex_jitter_px=1.0)


def test_impossible_spec_exhausts_retries():
    # roads far wider than the grid can hold never produce an acceptable scene
    spec = SceneSpec(grid=(48, 48), road_width=(40, 45), holes=2, max_retries=5)
    with pytest.raises(SceneError, match="5"):
        synth_scene(spec)
