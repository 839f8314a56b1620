import json

import numpy as np
import pytest
from scipy import stats

from agro.probgen import (
    PAPER_SPLIT,
    SHIP_BALL_RADIUS,
    DemandDataset,
    MixtureParams,
    generate,
    psd_factor,
    sample_demands,
    sample_dirichlet,
    sample_gamma,
    sample_in_ball,
    sample_instance_params,
    sample_mixture,
    sample_mixture_params,
    sample_wishart,
    split_sizes,
    substream,
)


def test_substreams_are_order_independent():
    a1 = substream(3, "a").random(4)
    substream(3, "b").random(100)
    a2 = substream(3, "a").random(4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, substream(3, "b").random(4))
    assert not np.array_equal(a1, substream(4, "a").random(4))
    assert not np.array_equal(substream((3, 1), "a").random(4), substream((3, 2), "a").random(4))


@pytest.mark.parametrize("shape", [0.3, 1.0, 1.5, 4.0])
def test_gamma_moments(shape):
    g = sample_gamma(shape, 20_000, np.random.default_rng(0))
    assert np.all(g > 0)
    # mean and variance both equal the shape for unit rate
    assert g.mean() == pytest.approx(shape, rel=0.05)
    assert g.var() == pytest.approx(shape, rel=0.1)
    assert stats.kstest(g, stats.gamma(shape).cdf).pvalue > 1e-3


def test_dirichlet_on_simplex():
    rng = np.random.default_rng(1)
    for _ in range(50):
        w = sample_dirichlet(np.ones(3), rng)
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) <= 1e-12
    draws = np.array([sample_dirichlet(np.ones(3), rng) for _ in range(4000)])
    np.testing.assert_allclose(draws.mean(axis=0), 1 / 3, atol=0.02)


def test_wishart_mean():
    rng = np.random.default_rng(2)
    draws = np.array([sample_wishart(3, np.eye(3), rng) for _ in range(10_000)])
    np.testing.assert_allclose(draws.mean(axis=0), 3 * np.eye(3), atol=0.1)
    # variance of a diagonal entry is 2 * df for identity scale
    assert draws[:, 0, 0].var() == pytest.approx(6.0, rel=0.1)
    for W in draws[:20]:
        np.testing.assert_array_equal(W, W.T)
        assert np.linalg.eigvalsh(W).min() > 0


def test_wishart_rejects_low_df():
    with pytest.raises(ValueError):
        sample_wishart(1, np.eye(3), np.random.default_rng(0))


def test_ball_sampling_is_uniform():
    rng = np.random.default_rng(3)
    pts = np.array([sample_in_ball(np.zeros(2), 1.0, rng) for _ in range(10_000)])
    r = np.linalg.norm(pts, axis=1)
    assert r.max() < 1.0
    assert np.mean(r < 0.5) == pytest.approx(0.25, abs=0.02)
    angles = np.arctan2(pts[:, 1], pts[:, 0])
    assert stats.kstest(angles, stats.uniform(-np.pi, 2 * np.pi).cdf).pvalue > 1e-3


def test_psd_factor_handles_singular():
    L = psd_factor(np.zeros((2, 2)))
    np.testing.assert_allclose(L @ L.T, 0.0)
    S = np.array([[1.0, 1.0], [1.0, 1.0]])
    L = psd_factor(S)
    np.testing.assert_allclose(L @ L.T, S, atol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        psd_factor(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_mixture_params_deterministic_and_valid():
    a = sample_mixture_params(3, 42)
    b = sample_mixture_params(3, 42)
    for f in ("weights", "means", "covs"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert abs(a.weights.sum() - 1) <= 1e-12
    assert a.means.shape == (3, 3) and a.covs.shape == (3, 3, 3)
    for S in a.covs:
        np.linalg.cholesky(S)
    with pytest.raises(ValueError):
        sample_mixture_params(0, 1)


def test_mixture_params_validation():
    with pytest.raises(ValueError):
        MixtureParams([0.5, 0.6], np.zeros((2, 1)), np.ones((2, 1, 1)))
    with pytest.raises(ValueError):
        MixtureParams([1.0], np.zeros((1, 2)), np.ones((1, 1, 1)))


def test_degenerate_mixture_returns_the_mean():
    params = MixtureParams([1.0, 0.0, 0.0], [[1.0, 2.0], [0, 0], [0, 0]], np.zeros((3, 2, 2)))
    X = sample_mixture(params, 50, np.random.default_rng(0))
    np.testing.assert_array_equal(X, np.tile([1.0, 2.0], (50, 1)))


def test_single_component_clt():
    J = 3
    mu = np.array([1.0, -2.0, 0.5])
    params = MixtureParams([1.0, 0.0, 0.0], [mu, np.zeros(J), np.zeros(J)], np.stack([np.eye(J) * J] * 3))
    X = sample_mixture(params, 50_000, np.random.default_rng(4))
    tol = 3 * np.sqrt(J / 50_000) * np.sqrt(J)
    assert np.all(np.abs(X.mean(axis=0) - mu) <= tol)


def test_identity_mixture_looks_normal():
    params = MixtureParams(np.ones(3) / 3, np.zeros((3, 2)), np.stack([np.eye(2)] * 3))
    X = sample_mixture(params, 10_000, np.random.default_rng(5))
    assert np.all(np.abs(stats.skew(X, axis=0)) < 0.2)
    assert np.all(np.abs(stats.kurtosis(X, axis=0)) < 0.3)


def test_paper_split_sizes():
    assert split_sizes(2500) == {"vae_train": 800, "vae_val": 200, "calibration": 500, "test": 1000}
    s = split_sizes(1000)
    assert sum(s.values()) == 1000
    assert s["vae_train"] == 320 and s["calibration"] == 200


def test_dataset_splits_disjoint_and_covering():
    params = sample_mixture_params(3, 0)
    ds = sample_demands(params, 2500, 0)
    idx = [set(ds.indices(k)) for k in PAPER_SPLIT]
    assert sum(len(i) for i in idx) == 2500
    assert set().union(*idx) == set(range(2500))
    assert ds.train.shape == (800, 3) and ds.test.shape == (1000, 3)
    with pytest.raises(ValueError):
        sample_demands(params, 0, 0)
    with pytest.raises(ValueError):
        DemandDataset(np.zeros((4, 1)), {"a": (0, 2), "b": (3, 4)})


def test_dataset_roundtrip(tmp_path):
    inst, ds = generate(2, 3, 100, 9)
    ds.save(tmp_path, inst)
    back = DemandDataset.load(tmp_path)
    np.testing.assert_array_equal(back.data, ds.data)
    assert back.splits == ds.splits
    assert back.seed == 9
    np.testing.assert_array_equal(back.params.means, ds.params.means)
    header = (tmp_path / "dataset.csv").read_text().splitlines()[0]
    assert header == "0,1,2"
    side = json.loads((tmp_path / "splits.json").read_text())
    assert {"seed", "splits", "mixture"} <= set(side)


def test_instance_generation_ranges():
    for seed in range(20):
        inst = sample_instance_params(4, 3, seed)
        assert np.all((inst.c > 2) & (inst.c < 4))
        assert np.all((inst.p > 8) & (inst.p < 18))
        assert inst.d2 == 5.0
        # each row lies within the ball around a constant vector with center in (2, 22)
        for row in inst.d1:
            center = row.mean()
            assert np.linalg.norm(row - center) < SHIP_BALL_RADIUS
            assert 2 - SHIP_BALL_RADIUS < center < 22 + SHIP_BALL_RADIUS


def test_generate_is_deterministic():
    i1, d1 = generate(4, 3, 200, 17)
    i2, d2 = generate(4, 3, 200, 17)
    np.testing.assert_array_equal(d1.data, d2.data)
    np.testing.assert_array_equal(i1.d1, i2.d1)
    _, d3 = generate(4, 3, 200, 18)
    assert not np.array_equal(d1.data, d3.data)
