import numpy as np
import pytest
from scipy.stats import invwishart

from handbayes import elicit, evidence, models
from handbayes.dataset import Dataset, background_excluding, split_writer
from handbayes.errors import BadValue, LeakageError
from handbayes.evidence import EvidenceSettings
from handbayes.sampler import SamplerSettings


def fast_settings(seed=0, **kw):
    base = dict(sampler=SamplerSettings(iterations=800, burn_in=300),
                runs=2, seed=seed)
    base.update(kw)
    return EvidenceSettings(**base)


class TestInterpretation:
    def test_band_edges(self):
        assert evidence.interpret_log_bf(0.5) == "Bare Mention"
        assert evidence.interpret_log_bf(-2.0) == "Substantial"
        assert evidence.interpret_log_bf(3.0) == "Strong"
        assert evidence.interpret_log_bf(-4.0) == "Very Strong"
        assert evidence.interpret_log_bf(12.0) == "Extreme"


class TestLogMarginal:
    def test_m1_exact_zero_mce(self, rng):
        p = 2
        data = Dataset.from_records(
            [(1, "a", j + 1, rng.standard_normal(p)) for j in range(5)]
        )
        hyper = elicit.PriorHyper("M1", mu=np.zeros(p), U=np.eye(p),
                                  nu=p + 3.0, k0=0.5)
        val, mce = evidence.log_marginal("M1", data, hyper)
        assert mce == 0.0
        assert val == pytest.approx(models.closed_form_log_marginal_m1(data, hyper))

    def test_m2_bridge_vs_prior_mc(self, rng):
        # tiny instance prior Monte Carlo oracle
        p, n, T = 2, 5, 200_000
        data = Dataset.from_records(
            [(1, "a", j + 1, 0.7 * rng.standard_normal(p)) for j in range(n)]
        )
        U = invwishart.rvs(df=p + 5, scale=np.eye(p) * 2, random_state=rng)
        hyper = elicit.PriorHyper("M2", mu=np.zeros(p), B=np.eye(p),
                                  U=U, nu=p + 3.0)
        val, mce = evidence.log_marginal(
            "M2", data, hyper,
            fast_settings(seed=4, runs=4,
                          sampler=SamplerSettings(iterations=2000, burn_in=500)),
        )
        Ws = invwishart.rvs(df=p + 3, scale=U, size=T, random_state=rng)
        thetas = rng.standard_normal((T, p))
        inv_W = np.linalg.inv(Ws)
        diff = data.X[None] - thetas[:, None, :]
        quad = np.einsum("tni,tij,tnj->t", diff, inv_W, diff)
        _, logdet = np.linalg.slogdet(Ws)
        ll = -0.5 * (n * p * np.log(2 * np.pi) + n * logdet + quad)
        m = ll.max()
        w = np.exp(ll - m)
        mc = m + np.log(w.mean())
        se = w.std() / (np.sqrt(T) * w.mean())
        assert abs(val - mc) <= 3 * np.hypot(mce, se)

    def test_same_seed_identical(self, rng):
        p = 2
        data = Dataset.from_records(
            [(1, "a", j + 1, rng.standard_normal(p)) for j in range(6)]
        )
        hyper = elicit.PriorHyper("M2", mu=np.zeros(p), B=np.eye(p),
                                  U=np.eye(p), nu=p + 3.0)
        v1 = evidence.log_marginal("M2", data, hyper, fast_settings(seed=9))
        v2 = evidence.log_marginal("M2", data, hyper, fast_settings(seed=9))
        assert v1 == v2

    def test_empty_data_rejected(self):
        hyper = elicit.PriorHyper("M1", mu=np.zeros(2), U=np.eye(2),
                                  nu=4.0, k0=0.5)
        with pytest.raises(BadValue):
            evidence.log_marginal("M1", Dataset.empty(p=2), hyper)


class TestBayesFactor:
    def test_constant_density_stub_gives_zero(self):
        # a model whose per-record density is a constant c factorizes exactly:
        # log m_H1 = c (n1 + n2), log m_yw = c n_w, so the log BF is 0
        c = -1.7
        n1, n2 = 4, 9
        res = evidence.EvidenceResult(
            model_id="M1", log_m_h1=c * (n1 + n2), log_m_y1_h2=c * n1,
            log_m_y2_h2=c * n2, mce_h1=0.0, mce_y1=0.0, mce_y2=0.0,
        )
        assert res.log_bf == pytest.approx(0.0, abs=1e-12)

    def test_leakage_rejected(self, small_population):
        data, _ = small_population
        y1, y2 = split_writer(data, 1, 0.5, 3)
        with pytest.raises(LeakageError):
            evidence.bayes_factor("M1", y1, y2, data)

    def test_additive_identity(self, small_population):
        data, _ = small_population
        y1, y2 = split_writer(data, 1, 0.5, 3)
        bg = background_excluding(data, [1])
        res = evidence.bayes_factor("M1", y1, y2, bg, fast_settings())
        assert res.log_bf == res.log_m_h1 - res.log_m_y1_h2 - res.log_m_y2_h2
        assert res.combined_mce == pytest.approx(
            np.sqrt(res.mce_h1 ** 2 + res.mce_y1 ** 2 + res.mce_y2 ** 2)
        )

    def test_same_writer_positive(self, default_population):
        data, _ = default_population
        y1, y2 = split_writer(data, 3, 0.5, 7)
        bg = background_excluding(data, [3])
        res = evidence.bayes_factor("M1", y1, y2, bg, fast_settings())
        assert res.log_bf > 0

    def test_different_writers_negative(self, default_population):
        # pick a clearly separated pair via the distance matrix
        from handbayes.experiments import mahalanobis_matrix

        data, _ = default_population
        dist, writers = mahalanobis_matrix(data)
        i, j = np.unravel_index(
            np.argmax(dist - np.diag(np.diag(dist))), dist.shape
        )
        a, b = writers[i], writers[j]
        y1, _ = split_writer(data, a, 0.5, 5)
        _, y2 = split_writer(data, b, 0.5, 6)
        bg = background_excluding(data, [a, b])
        res = evidence.bayes_factor("M1", y1, y2, bg, fast_settings())
        assert res.log_bf < 0

    def test_swap_symmetry_exact_model(self, small_population):
        data, _ = small_population
        y1, y2 = split_writer(data, 2, 0.4, 9)
        bg = background_excluding(data, [2])
        r1 = evidence.bayes_factor("M4", y1, y2, bg, fast_settings())
        r2 = evidence.bayes_factor("M4", y2, y1, bg, fast_settings())
        assert r1.log_bf == pytest.approx(r2.log_bf, abs=1e-9)

    def test_parallel_matches_serial(self, small_population):
        data, _ = small_population
        y1, y2 = split_writer(data, 1, 0.5, 3)
        bg = background_excluding(data, [1])
        serial = evidence.bayes_factor("M1", y1, y2, bg, fast_settings())
        par = evidence.bayes_factor("M1", y1, y2, bg,
                                    fast_settings(parallel=True))
        assert serial.log_bf == par.log_bf


class TestModelComparison:
    def test_self_comparison_zero(self, small_population):
        data, _ = small_population
        own = data.filter_writers([1])
        bg = background_excluding(data, [1])
        comp = evidence.model_comparison_bf(own, bg, "M1", "M1", fast_settings())
        assert comp.log_bf == pytest.approx(0.0, abs=1e-12)

    def test_antisymmetry(self, small_population):
        data, _ = small_population
        own = data.filter_writers([2])
        bg = background_excluding(data, [2])
        ab = evidence.model_comparison_bf(own, bg, "M4", "M1", fast_settings())
        ba = evidence.model_comparison_bf(own, bg, "M1", "M4", fast_settings())
        tol = 2 * max(ab.combined_mce, ba.combined_mce, 1e-12)
        assert abs(ab.log_bf + ba.log_bf) <= tol

    def test_leakage_rejected(self, small_population):
        data, _ = small_population
        own = data.filter_writers([1])
        with pytest.raises(LeakageError):
            evidence.model_comparison_bf(own, data, "M1", "M4")

    def test_paper_scale_magnitude(self, default_population):
        # MANOVA vs Normal per-writer comparisons land in the tens-to-
        # hundreds range on the paper-scale population
        data, _ = default_population
        vals = []
        for w in (1, 5, 9):
            own = data.filter_writers([w])
            bg = background_excluding(data, [w])
            comp = evidence.model_comparison_bf(own, bg, "M4", "M1",
                                                fast_settings())
            vals.append(abs(comp.log_bf))
        assert all(10.0 < v < 1000.0 for v in vals)
