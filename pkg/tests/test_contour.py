import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handbayes import contour as ct
from handbayes.errors import BadAmplitude, DegenerateContour, Underdetermined


def coeffs(a0=1.0, pairs=((0.0, 0.0),) * 4):
    return ct.ContourCoefficients(a0, np.array(pairs))


class TestEvalRadius:
    def test_constant_term(self):
        c = coeffs(a0=1.0)
        assert ct.eval_radius(c, 0.3) == pytest.approx(1.0)

    def test_cosine_harmonic(self):
        c = coeffs(a0=1.0, pairs=((0.0, 0.0), (0.5, 0.0), (0.0, 0.0), (0.0, 0.0)))
        assert ct.eval_radius(c, 0.0) == pytest.approx(1.5)

    def test_sine_harmonic(self):
        c = coeffs(a0=1.0, pairs=((0.0, 0.5), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)))
        assert ct.eval_radius(c, np.pi / 2) == pytest.approx(1.5)


class TestAmplitudePhase:
    def test_unit_sine(self):
        c = coeffs(pairs=((0.0, 1.0), (0, 0), (0, 0), (0, 0)))
        d = ct.to_amplitude_phase(c)
        assert d.pairs[0, 0] == pytest.approx(1.0)
        assert d.pairs[0, 1] == pytest.approx(np.pi / 2)

    def test_unit_cosine(self):
        c = coeffs(pairs=((1.0, 0.0), (0, 0), (0, 0), (0, 0)))
        d = ct.to_amplitude_phase(c)
        assert d.pairs[0, 0] == pytest.approx(1.0)
        assert d.pairs[0, 1] == pytest.approx(0.0)

    def test_zero_amplitude_convention(self):
        c = coeffs()
        d = ct.to_amplitude_phase(c)
        assert np.all(d.pairs == 0.0)

    def test_from_amplitude_negative_pi(self):
        d = ct.AmplitudePhase(0.0, np.array([[2.0, np.pi]]))
        c = ct.from_amplitude_phase(d)
        assert c.pairs[0, 0] == pytest.approx(-2.0, abs=1e-12)
        assert c.pairs[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_negative_amplitude_rejected(self):
        with pytest.raises(BadAmplitude):
            ct.AmplitudePhase(0.0, np.array([[-0.1, 0.0]]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        c = coeffs(a0=float(rng.normal()), pairs=rng.normal(size=(4, 2)))
        back = ct.from_amplitude_phase(ct.to_amplitude_phase(c))
        assert np.allclose(back.pairs, c.pairs, atol=1e-12)
        assert back.a0 == pytest.approx(c.a0, abs=1e-12)


class TestFit:
    def test_exact_trig_recovery(self):
        phi = 2 * np.pi * np.arange(128) / 128
        pc = ct.PolarContour(phi, 1.0 + 0.5 * np.cos(2 * phi))
        c = ct.fit_coefficients(pc, H=4)
        assert c.a0 == pytest.approx(1.0, abs=1e-10)
        expect = np.zeros((4, 2))
        expect[1, 0] = 0.5
        assert np.allclose(c.pairs, expect, atol=1e-10)

    def test_constant_samples(self):
        phi = 2 * np.pi * np.arange(16) / 16
        c = ct.fit_coefficients(ct.PolarContour(phi, np.full(16, 2.0)), H=4)
        assert c.a0 == pytest.approx(2.0)
        assert np.allclose(c.pairs, 0.0, atol=1e-12)

    def test_underdetermined(self):
        phi = 2 * np.pi * np.arange(5) / 5
        with pytest.raises(Underdetermined):
            ct.fit_coefficients(ct.PolarContour(phi, np.ones(5)), H=4)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_render_fit_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        pairs = rng.uniform(-0.1, 0.1, size=(4, 2))
        c = coeffs(a0=float(rng.uniform(1.0, 2.0)), pairs=pairs)
        fitted = ct.fit_coefficients(ct.render_contour(c, 128), H=4)
        assert abs(fitted.a0 - c.a0) < 1e-8
        assert np.abs(fitted.pairs - c.pairs).max() < 1e-8


class TestArea:
    def test_unit_circle(self):
        pc = ct.render_contour(coeffs(a0=1.0), 32)
        assert ct.surface_area(pc) == pytest.approx(np.pi)

    def test_scale_equivariance(self):
        pc1 = ct.render_contour(coeffs(a0=1.0), 50)
        pc2 = ct.PolarContour(pc1.phi, 2.0 * pc1.r)
        assert ct.surface_area(pc2) == pytest.approx(4.0 * ct.surface_area(pc1))

    def test_ellipse_against_analytic(self):
        # oracle: area of an ellipse with semi-axes a, b is pi a b
        a, b = 1.2, 0.8
        phi = 2 * np.pi * np.arange(512) / 512
        r = a * b / np.sqrt((b * np.cos(phi)) ** 2 + (a * np.sin(phi)) ** 2)
        assert ct.surface_area(ct.PolarContour(phi, r)) == pytest.approx(
            np.pi * a * b, abs=1e-3
        )


class TestNormalize:
    def test_unit_circle(self):
        pc = ct.render_contour(coeffs(a0=1.0), 64)
        out, area = ct.normalize_contour(pc)
        assert area == pytest.approx(np.pi)
        assert np.allclose(out.r, 1.0 / np.sqrt(np.pi))

    def test_fixed_point(self):
        pc = ct.render_contour(coeffs(a0=1.0), 64)
        unit, _ = ct.normalize_contour(pc)
        again, area = ct.normalize_contour(unit)
        assert area == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(again.r, unit.r, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_area_one_after_normalizing(self, seed):
        rng = np.random.default_rng(seed)
        c = coeffs(a0=float(rng.uniform(0.8, 2.0)),
                   pairs=rng.uniform(-0.1, 0.1, size=(4, 2)))
        out, _ = ct.normalize_contour(ct.render_contour(c, 128))
        assert ct.surface_area(out) == pytest.approx(1.0, abs=1e-10)


class TestRender:
    def test_constant_four_points(self):
        pc = ct.render_contour(coeffs(a0=1.0), 4)
        assert len(pc) == 4
        assert np.allclose(pc.r, 1.0)

    def test_spacing(self):
        pc = ct.render_contour(coeffs(a0=1.0), 128)
        assert np.allclose(np.diff(pc.phi), 2 * np.pi / 128)
        assert pc.phi[0] == 0.0

    def test_nonpositive_radius_rejected(self):
        c = coeffs(a0=0.1, pairs=((1.0, 0.0), (0, 0), (0, 0), (0, 0)))
        with pytest.raises(DegenerateContour):
            ct.render_contour(c, 64)


class TestExports:
    def test_csv_shape(self):
        pc = ct.render_contour(coeffs(a0=1.0), 8)
        lines = ct.polar_to_csv(pc).strip().splitlines()
        assert lines[0] == "phi,r"
        assert len(lines) == 9

    def test_svg_closed_path(self):
        pc = ct.render_contour(coeffs(a0=1.0), 16)
        svg = ct.polar_to_svg(pc)
        assert svg.startswith("<svg")
        assert " Z\"" in svg
