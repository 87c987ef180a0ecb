"""Fourier contour mathematics for loop characters.

A closed loop is a radius function R(phi) around the centroid,

    R(phi) = a0 + sum_h [a_h cos(h phi) + b_h sin(h phi)],

sampled on [0, 2pi). The operations here convert between coefficient and
amplitude-phase form, fit coefficients to polar samples by least squares,
measure the enclosed area, and rescale contours to unit area (the area
before normalization is the surface-size feature S). Inputs begin at polar
samples; there is no pixel processing here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadAmplitude, BadValue, DegenerateContour, Underdetermined

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ContourCoefficients:
    """Sine-cosine Fourier coefficients: a0 plus (a_h, b_h) pairs, h = 1..H."""

    a0: float
    pairs: np.ndarray  # shape (H, 2)

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=float)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 1:
            raise BadValue(f"pairs must have shape (H>=1, 2), got {pairs.shape}")
        if not (np.isfinite(self.a0) and np.all(np.isfinite(pairs))):
            raise BadValue("non-finite Fourier coefficient")
        pairs.setflags(write=False)
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "pairs", pairs)

    @property
    def harmonics(self) -> int:
        return self.pairs.shape[0]


@dataclass(frozen=True)
class AmplitudePhase:
    """Amplitude-phase form: A0 plus (A_h >= 0, phi_h in [0, 2pi)) pairs."""

    A0: float
    pairs: np.ndarray  # shape (H, 2) of (A_h, phi_h)

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=float)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 1:
            raise BadValue(f"pairs must have shape (H>=1, 2), got {pairs.shape}")
        if np.any(pairs[:, 0] < 0):
            raise BadAmplitude("amplitudes must be non-negative")
        pairs.setflags(write=False)
        object.__setattr__(self, "A0", float(self.A0))
        object.__setattr__(self, "pairs", pairs)


@dataclass(frozen=True)
class PolarContour:
    """Sampled contour: strictly increasing angles in [0, 2pi), radii > 0."""

    phi: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if phi.shape != r.shape or phi.ndim != 1:
            raise BadValue("phi and r must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(r))):
            raise BadValue("non-finite contour sample")
        if np.any(phi < 0) or np.any(phi >= TWO_PI):
            raise BadValue("angles must lie in [0, 2pi)")
        if np.any(np.diff(phi) <= 0):
            raise BadValue("angles must be strictly increasing")
        if np.any(r <= 0):
            raise DegenerateContour("all radii must be positive")
        phi.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "r", r)

    def __len__(self) -> int:
        return len(self.phi)


def eval_radius(c: ContourCoefficients, phi) -> np.ndarray | float:
    """R(phi) = a0 + sum_h [a_h cos(h phi) + b_h sin(h phi)]."""
    phi_arr = np.asarray(phi, dtype=float)
    h = np.arange(1, c.harmonics + 1)
    angles = np.multiply.outer(phi_arr, h)
    out = c.a0 + np.cos(angles) @ c.pairs[:, 0] + np.sin(angles) @ c.pairs[:, 1]
    return float(out) if np.isscalar(phi) or phi_arr.ndim == 0 else out


def to_amplitude_phase(c: ContourCoefficients) -> AmplitudePhase:
    """A_h = sqrt(a_h^2 + b_h^2), phi_h = atan2(b_h, a_h) mapped into [0, 2pi)."""
    a, b = c.pairs[:, 0], c.pairs[:, 1]
    amp = np.hypot(a, b)
    phase = np.arctan2(b, a)
    phase = np.where(phase < 0, phase + TWO_PI, phase)
    phase = np.where(amp == 0, 0.0, phase)  # (0, 0) maps to A=0, phi=0
    return AmplitudePhase(c.a0, np.column_stack([amp, phase]))


def from_amplitude_phase(d: AmplitudePhase) -> ContourCoefficients:
    """a_h = A_h cos(phi_h), b_h = A_h sin(phi_h)."""
    amp, phase = d.pairs[:, 0], d.pairs[:, 1]
    return ContourCoefficients(
        d.A0, np.column_stack([amp * np.cos(phase), amp * np.sin(phase)])
    )


def fit_coefficients(pc: PolarContour, H: int) -> ContourCoefficients:
    """Least-squares fit of the radius series on the given samples.

    The design is [1, cos(h phi), sin(h phi)] for h = 1..H; for equally
    spaced angles this coincides with the discrete Fourier projection.
    Requires at least 2H + 1 samples.
    """
    if H < 1:
        raise BadValue("harmonic count must be >= 1")
    n = len(pc)
    if n < 2 * H + 1:
        raise Underdetermined(f"need at least {2 * H + 1} samples for H={H}, got {n}")
    h = np.arange(1, H + 1)
    angles = np.multiply.outer(pc.phi, h)
    design = np.hstack([np.ones((n, 1)), np.cos(angles), np.sin(angles)])
    coef, *_ = np.linalg.lstsq(design, pc.r, rcond=None)
    return ContourCoefficients(coef[0], np.column_stack([coef[1:H + 1], coef[H + 1:]]))


def surface_area(pc: PolarContour) -> float:
    """Enclosed area by the periodic trapezoidal rule on r^2 / 2.

    The last segment wraps from the final sample to the first sample at
    phi_0 + 2pi, so a constant radius integrates exactly to pi r^2.
    """
    if len(pc) < 3:
        raise BadValue("need at least 3 samples to measure an area")
    f = 0.5 * pc.r ** 2
    f_next = np.roll(f, -1)
    dphi = np.diff(pc.phi, append=pc.phi[0] + TWO_PI)
    return float(np.sum(0.5 * (f + f_next) * dphi))


def normalize_contour(pc: PolarContour) -> tuple[PolarContour, float]:
    """Rescale radii so the enclosed area is 1; return the original area.

    The returned area, measured before normalization, is the surface-size
    feature S.
    """
    area = surface_area(pc)
    if area <= 0:
        raise DegenerateContour(f"nonpositive contour area {area}")
    return PolarContour(pc.phi, pc.r / np.sqrt(area)), area


def render_contour(c: ContourCoefficients, n_points: int) -> PolarContour:
    """Sample the radius series at n equally spaced angles in [0, 2pi)."""
    if n_points < 3:
        raise BadValue("need at least 3 render points")
    phi = TWO_PI * np.arange(n_points) / n_points
    r = eval_radius(c, phi)
    if np.any(r <= 0):
        raise DegenerateContour("coefficients produce a nonpositive radius")
    return PolarContour(phi, r)


# -- export helpers (used by the CLI) ------------------------------------------


def polar_to_csv(pc: PolarContour) -> str:
    lines = ["phi,r"]
    lines += [f"{p!r},{v!r}" for p, v in zip(pc.phi.tolist(), pc.r.tolist())]
    return "\n".join(lines) + "\n"


def polar_to_svg(pc: PolarContour, stroke: str = "black", width: int = 512) -> str:
    """Closed-path SVG polyline of the contour (y axis flipped for SVG)."""
    x = pc.r * np.cos(pc.phi)
    y = -pc.r * np.sin(pc.phi)
    lo = min(x.min(), y.min())
    hi = max(x.max(), y.max())
    margin = 0.05 * (hi - lo if hi > lo else 1.0)
    lo, hi = lo - margin, hi + margin
    side = hi - lo
    points = " L ".join(f"{xi:.6g},{yi:.6g}" for xi, yi in zip(x, y))
    stroke_w = side / 200.0
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{width}" '
        f'viewBox="{lo:.6g} {lo:.6g} {side:.6g} {side:.6g}">\n'
        f'  <path d="M {points} Z" fill="none" stroke="{stroke}" '
        f'stroke-width="{stroke_w:.6g}"/>\n'
        f"</svg>\n"
    )


def coefficients_from_dict(payload: dict) -> ContourCoefficients:
    """Build coefficients from a {'a0': float, 'pairs': [[a, b], ...]} mapping."""
    try:
        return ContourCoefficients(float(payload["a0"]), np.asarray(payload["pairs"]))
    except KeyError as exc:
        raise BadValue(f"coefficient JSON missing key {exc}") from None
