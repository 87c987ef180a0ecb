import numpy as np
import pytest

from handbayes import synth
from handbayes.errors import BadCovariance, BadValue


def small_cfg(**kw):
    p = 3
    base = dict(
        m=3,
        characters=("a", "d"),
        reps=5,
        mu=np.zeros(p),
        B_ell=np.array([np.eye(p) * 0.4, np.eye(p) * 0.5]),
        W_scale=np.eye(p) * 0.2,
        character_offsets=np.array([np.zeros(p), np.ones(p)]),
        seed=7,
    )
    base.update(kw)
    return synth.PopulationConfig(**base)


class TestConfig:
    def test_rejects_non_pd(self):
        bad = np.eye(3)
        bad[0, 0] = -1.0
        with pytest.raises(BadCovariance):
            small_cfg(W_scale=bad)

    def test_rejects_single_writer(self):
        with pytest.raises(BadValue):
            small_cfg(m=1)

    def test_rejects_single_rep(self):
        with pytest.raises(BadValue):
            small_cfg(reps=1)


class TestGenerate:
    def test_determinism_bit_identical(self):
        d1, t1 = synth.generate_population(small_cfg())
        d2, t2 = synth.generate_population(small_cfg())
        assert np.array_equal(d1.X, d2.X)
        assert np.array_equal(t1.theta, t2.theta)
        assert d1.to_csv() if d1.p == 9 else True  # CSV only at p=9

    def test_shape_and_counts(self):
        data, truth = synth.generate_population(small_cfg())
        assert data.n == 3 * 2 * 5
        assert truth.theta.shape == (3, 2, 3)
        assert set(data.writer_ids) == {1, 2, 3}

    def test_rep_range(self):
        data, _ = synth.generate_population(small_cfg(reps=(3, 6)))
        for w in (1, 2, 3):
            for c in ("a", "d"):
                n = ((data.writers == w) & (data.characters == c)).sum()
                assert 3 <= n <= 6

    def test_degenerate_within_noise(self):
        cfg = small_cfg(W_scale=np.eye(3) * 1e-12)
        data, truth = synth.generate_population(cfg)
        for w in (1, 2, 3):
            for ci, c in enumerate(("a", "d")):
                X = data.X[(data.writers == w) & (data.characters == c)]
                assert np.abs(X - X[0]).max() < 1e-5

    def test_degenerate_between_noise(self):
        cfg = small_cfg(B_ell=np.array([np.eye(3) * 1e-12] * 2))
        _, truth = synth.generate_population(cfg)
        for ell in range(2):
            spread = truth.theta[:, ell, :].std(axis=0)
            assert spread.max() < 1e-5

    def test_cell_mean_matches_truth(self):
        # law of large numbers against the returned latent means
        cfg = small_cfg(m=2, reps=10_000, seed=3)
        data, truth = synth.generate_population(cfg)
        X = data.X[(data.writers == 1) & (data.characters == "a")]
        se = np.sqrt(np.diag(cfg.W_scale) / len(X))
        assert np.all(np.abs(X.mean(axis=0) - truth.theta_of(1, "a")) < 4 * se)

    def test_empirical_covariance_converges(self):
        cfg = small_cfg(m=2, reps=50_000, seed=5)
        data, truth = synth.generate_population(cfg)
        X = data.X[(data.writers == 1) & (data.characters == "a")]
        emp = np.cov(X.T)
        W = truth.W_of(1)
        err = np.linalg.norm(emp - W) / np.linalg.norm(W)
        assert err < 0.05

    def test_writer_effect_marginal_unchanged(self):
        # per-cell latent means keep marginal covariance B_ell at any rho
        cfg = small_cfg(m=600, reps=2, writer_effect_rho=0.9, seed=9)
        _, truth = synth.generate_population(cfg)
        emp = np.cov(truth.theta[:, 0, :].T)
        assert np.linalg.norm(emp - cfg.B_ell[0]) / np.linalg.norm(cfg.B_ell[0]) < 0.15

    def test_default_population_scale(self, default_population):
        data, truth = default_population
        assert data.n == 13 * 4 * 30
        assert data.p == 9
        assert len(data.writer_ids) == 13

    def test_sensitivity_population_valid(self):
        cfg = synth.sensitivity_population_config(seed=1)
        data, _ = synth.generate_population(cfg)
        assert data.p == 3
        assert len(data.writer_ids) == 13
