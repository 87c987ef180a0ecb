import numpy as np
import pytest

from handbayes import bridge, elicit, models, sampler
from handbayes.dataset import Dataset
from handbayes.errors import EstimatorDegenerate, NeedMoreDraws
from handbayes.sampler import SamplerSettings


def gaussian_target(z):
    return -0.5 * np.sum(np.asarray(z) ** 2, axis=1)


def iid_normal_draws(rng, t, d):
    return rng.standard_normal((t, d))


class TestFitProposal:
    def test_equal_draws_ridge_floor(self):
        X = np.ones((50, 3))
        prop = bridge.fit_proposal(X)
        assert np.all(np.isfinite(prop.chol))
        assert np.allclose(prop.mean, 1.0)

    def test_mean_recovery(self, rng):
        X = iid_normal_draws(rng, 10_000, 2)
        prop = bridge.fit_proposal(X)
        se = 1.0 / np.sqrt(len(X))
        assert np.all(np.abs(prop.mean) < 4 * se)

    def test_covariance_is_spd(self, rng):
        for _ in range(5):
            X = rng.standard_normal((60, 4)) @ rng.standard_normal((4, 4))
            prop = bridge.fit_proposal(X)
            cov = prop.chol @ prop.chol.T
            assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_too_few_draws(self, rng):
        with pytest.raises(NeedMoreDraws):
            bridge.fit_proposal(rng.standard_normal((4, 5)))


class TestBridgeEstimate:
    def test_gaussian_constant(self, rng):
        # truth: the normalizer of exp(-z^2/2) is sqrt(2 pi)
        draws = iid_normal_draws(rng, 10_000, 1)
        first, second = draws[:5000], draws[5000:]
        prop = bridge.fit_proposal(first)
        res = bridge.bridge_estimate(gaussian_target, prop, second, t2=5000, seed=1)
        assert res.converged
        assert res.log_ml == pytest.approx(0.5 * np.log(2 * np.pi), abs=0.01)

    def test_matches_m1_closed_form(self, rng):
        p, n = 2, 10
        U = np.eye(p)
        hyper = elicit.PriorHyper("M1", mu=np.zeros(p), U=U, nu=p + 3.0, k0=0.4)
        data = Dataset.from_records(
            [(1, "a", j + 1, rng.standard_normal(p)) for j in range(n)]
        )
        exact = models.closed_form_log_marginal_m1(data, hyper)
        ctx = models.ModelContext("M1", hyper, data)

        def one_run(s):
            dr = sampler.exact_conjugate_draws("M1", hyper, data, 6000, seed=s)
            first, second = bridge.split_halves(dr)
            prop = bridge.fit_proposal(first)
            return bridge.bridge_estimate(ctx.log_unnorm_posterior, prop, second, seed=s)

        rb = bridge.repeated_bridge(one_run, runs=6, seed=2)
        assert abs(rb.log_ml - exact) <= 3 * rb.mce

    def test_permutation_invariance(self, rng):
        draws = iid_normal_draws(rng, 2000, 2)
        prop = bridge.fit_proposal(draws[:1000])
        second = draws[1000:]
        res1 = bridge.bridge_estimate(gaussian_target, prop, second, seed=9)
        res2 = bridge.bridge_estimate(gaussian_target, prop, second[::-1], seed=9)
        assert res1.log_ml == pytest.approx(res2.log_ml, abs=1e-12)

    def test_nonfinite_rows_contribute_zero(self, rng):
        # a target that rejects half the space still converges
        def half_target(z):
            vals = gaussian_target(z)
            return np.where(np.asarray(z)[:, 0] > -10, vals, -np.inf)

        draws = iid_normal_draws(rng, 4000, 1)
        prop = bridge.fit_proposal(draws[:2000])
        res = bridge.bridge_estimate(half_target, prop, draws[2000:], seed=4)
        assert np.isfinite(res.log_ml)

    def test_degenerate_when_all_rejected(self, rng):
        draws = iid_normal_draws(rng, 1000, 1)
        prop = bridge.fit_proposal(draws[:500])
        with pytest.raises(EstimatorDegenerate):
            bridge.bridge_estimate(lambda z: np.full(len(z), -np.inf), prop,
                                   draws[500:], seed=5)

    def test_warp_agrees_on_symmetric_target(self, rng):
        # truth in d dimensions: the normalizer of exp(-|z|^2/2) is (2 pi)^(d/2)
        draws = iid_normal_draws(rng, 8000, 2)
        first, second = draws[:4000], draws[4000:]
        plain = bridge.bridge_estimate(gaussian_target,
                                       bridge.fit_proposal(first), second, seed=3)
        warped = bridge.bridge_estimate(gaussian_target,
                                        bridge.fit_proposal(first, warp=True),
                                        second, seed=3)
        assert warped.log_ml == pytest.approx(plain.log_ml, abs=0.02)
        assert warped.log_ml == pytest.approx(np.log(2 * np.pi), abs=0.02)


class TestRepeatedBridge:
    def test_minimal_two_runs(self, rng):
        draws = iid_normal_draws(rng, 4000, 1)

        def one_run(s):
            r = np.random.default_rng(s)
            x = r.standard_normal((2000, 1))
            prop = bridge.fit_proposal(x[:1000])
            return bridge.bridge_estimate(gaussian_target, prop, x[1000:], seed=s)

        rb = bridge.repeated_bridge(one_run, runs=2, seed=1)
        assert np.isfinite(rb.mce)
        assert len(rb.results) == 2

    def test_runs_floor(self):
        with pytest.raises(Exception):
            bridge.repeated_bridge(lambda s: None, runs=1)

    def test_quadrupling_t2_shrinks_mce(self, rng):
        # sqrt-T scaling: 4x the proposal draws should roughly halve the MCE
        p, n = 2, 8
        hyper = elicit.PriorHyper("M1", mu=np.zeros(p), U=np.eye(p),
                                  nu=p + 3.0, k0=0.4)
        data = Dataset.from_records(
            [(1, "a", j + 1, rng.standard_normal(p)) for j in range(n)]
        )
        ctx = models.ModelContext("M1", hyper, data)

        def make_run(t2):
            def one_run(s):
                dr = sampler.exact_conjugate_draws("M1", hyper, data, 700, seed=s)
                first, second = bridge.split_halves(dr)
                prop = bridge.fit_proposal(first)
                return bridge.bridge_estimate(ctx.log_unnorm_posterior, prop,
                                              second, t2=t2, seed=s)
            return one_run

        small = bridge.repeated_bridge(make_run(250), runs=24, seed=7)
        big = bridge.repeated_bridge(make_run(1000), runs=24, seed=7)
        ratio = big.mce / small.mce
        assert 0.3 <= ratio <= 0.8

    def test_failed_runs_flagged(self, rng):
        calls = {"n": 0}

        def flaky(s):
            calls["n"] += 1
            if calls["n"] % 2 == 0:
                raise EstimatorDegenerate("boom")
            r = np.random.default_rng(s)
            x = r.standard_normal((1000, 1))
            prop = bridge.fit_proposal(x[:500])
            return bridge.bridge_estimate(gaussian_target, prop, x[500:], seed=s)

        rb = bridge.repeated_bridge(flaky, runs=6, seed=3)
        assert rb.n_failed == 3
        assert len(rb.results) == 3


class TestSplitHalves:
    def test_per_chain_split(self, rng):
        draws = sampler.PosteriorDraws(
            draws=np.arange(12, dtype=float).reshape(12, 1),
            log_post=np.zeros(12), log_jac=np.zeros(12),
            model_id="M2", hypothesis="H1", seed=0, burn_in=0, chains=2,
        )
        first, second = bridge.split_halves(draws)
        assert first.ravel().tolist() == [0, 1, 2, 6, 7, 8]
        assert second.ravel().tolist() == [3, 4, 5, 9, 10, 11]
