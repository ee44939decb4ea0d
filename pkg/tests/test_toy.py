import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dacal.toy import (ToyConfig, backbone_parameter_count, build_networks, export_result, grid_centers,
                       mode_coverage_metrics, run_toy_experiment, sample_grid_gaussians)

CFG = ToyConfig()


def test_config_defaults():
    assert CFG.checkpoints == (1000, 2500, 5000)
    assert (CFG.grid_extent, CFG.sigma, CFG.iterations) == (2.0, 0.05, 5000)
    assert ToyConfig(variant="wgan_gp").num_slices == 1
    with pytest.raises(ValueError):
        ToyConfig(grid_size=4)
    with pytest.raises(ValueError):
        ToyConfig(variant="swgan")


def test_centers():
    c = grid_centers(CFG)
    assert c.shape == (25, 2)
    assert set(np.round(c[:, 0], 9)) == {-2.0, -1.0, 0.0, 1.0, 2.0}


class TestSampler:
    def test_zero_sigma_on_centers(self):
        pts = sample_grid_gaussians(ToyConfig(sigma=0.0), 500, seed=0)
        centers = {tuple(c) for c in grid_centers(CFG)}
        assert all(tuple(p) in centers for p in pts)

    def test_mean_near_origin(self):
        pts = sample_grid_gaussians(CFG, 100_000, seed=1)
        # per-axis variance: uniform over {-2..2} (2.0) plus sigma^2
        se = math.sqrt((2.0 + CFG.sigma ** 2) / len(pts))
        assert np.all(np.abs(pts.mean(axis=0)) < 3 * se)

    def test_per_center_share(self):
        pts = sample_grid_gaussians(CFG, 100_000, seed=2)
        d = np.linalg.norm(pts[:, None] - grid_centers(CFG)[None], axis=2)
        share = np.bincount(d.argmin(axis=1), minlength=25) / len(pts)
        assert np.all((share >= 0.03) & (share <= 0.05))

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            sample_grid_gaussians(CFG, 0)


class TestCoverage:
    def test_centers_themselves(self):
        assert mode_coverage_metrics(grid_centers(CFG), CFG) == (25, 1.0)

    def test_single_center(self):
        assert mode_coverage_metrics(np.zeros((40, 2)), CFG) == (1, 1.0)

    def test_far_away(self):
        assert mode_coverage_metrics(np.full((3, 2), 10.0), CFG) == (0, 0.0)

    def test_uniform_area_ratio(self):
        pts = np.random.default_rng(0).uniform(-3, 3, size=(400_000, 2))
        _, hq = mode_coverage_metrics(pts, CFG)
        p = 25 * math.pi * (3 * CFG.sigma) ** 2 / 36
        assert abs(hq - p) < 4 * math.sqrt(p * (1 - p) / len(pts))

    @given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=30), st.integers(0, 24))
    def test_bounds_and_monotone(self, pts, center):
        pts = np.array(pts)
        modes, hq = mode_coverage_metrics(pts, CFG)
        assert 0 <= modes <= 25 and 0.0 <= hq <= 1.0
        more = np.vstack([pts, grid_centers(CFG)[center]])
        modes2, hq2 = mode_coverage_metrics(more, CFG)
        assert modes2 >= modes and hq2 >= hq
        if modes2 > modes:
            assert modes2 == modes + 1


def test_shared_architecture():
    g1, c1 = build_networks(ToyConfig(variant="wgan_gp"))
    g2, c2 = build_networks(ToyConfig(variant="adaswgan"))
    assert backbone_parameter_count(g1) == backbone_parameter_count(g2)
    assert backbone_parameter_count(c1) == backbone_parameter_count(c2)
    assert c1.theta.shape == (CFG.feature_dim, 1)
    assert c2.theta.shape == (CFG.feature_dim, CFG.slices)


SHORT = dict(iterations=30, checkpoints=(10, 30), batch_size=64, hidden=32, eval_samples=200)


@pytest.mark.parametrize("variant", ["wgan_gp", "adaswgan"])
def test_short_run_reproducible(variant):
    a = run_toy_experiment(ToyConfig(variant=variant, **SHORT))
    b = run_toy_experiment(ToyConfig(variant=variant, **SHORT))
    assert a.history == b.history
    assert sorted(a.samples) == [10, 30]
    assert a.surfaces[30].shape == (128, 128)
    for it in a.samples:
        np.testing.assert_array_equal(a.samples[it], b.samples[it])
    if variant == "wgan_gp":
        assert all(h["lambda"] == 10.0 for h in a.history)


def test_adaswgan_lambda_adapts_within_bounds():
    cfg = ToyConfig(**SHORT)
    r = run_toy_experiment(cfg)
    lams = [h["lambda"] for h in r.history]
    assert all(cfg.lambda_min <= v <= cfg.lambda_max for v in lams)
    assert len(set(lams)) > 1


def test_export(tmp_path):
    r = run_toy_experiment(ToyConfig(variant="wgan_gp", **SHORT))
    files = export_result(r, tmp_path)
    names = {p.name for p in files}
    assert {"wgan_gp_samples_10.csv", "wgan_gp_surface_30.csv", "wgan_gp_history.csv",
            "wgan_gp_figure.png"} <= names
    surf = np.loadtxt(tmp_path / "wgan_gp_surface_30.csv", delimiter=",")
    assert surf.shape == (128, 128)
    rows = (tmp_path / "wgan_gp_samples_10.csv").read_text().splitlines()
    assert rows[0] == "x,y" and len(rows) == 201
