"""Prior hyperparameter elicitation from background data.

Estimators, all computed on background writers only:

* per writer-character sample means theta_hat,
* per-character means mu_hat_ell weighted by repetition counts,
* the overall mean mu_hat,
* per-character covariance B_hat_ell of the character's observations about
  mu_hat_ell (n_ell - 1 denominator),
* the pooled within-writer covariance W_hat of deviations about the
  writer-character cell means (n - m denominator).

The Inverse-Wishart scale is U = W_hat (nu - p - 1), so the prior mean of W
equals W_hat. The LogNormal location is the mean of the log variances; the
printed dispersion formula sums signed deviations (identically zero), so it
is clamped from below at `sigma_min`, with an optional flag to use the
sample standard deviation of the log variances instead.

The shrinkage scalars k0 (Normal conjugate) and diagonal K0 (MANOVA
conjugate) are chosen by maximizing the summed leave-one-out closed-form log
marginals of the background writers over a grid.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import multigammaln

from . import models
from .dataset import CHARACTERS, CellStats, Dataset
from .errors import BadDof, BadGrid, BadModel, BadValue, BadVariance, MissingCell, NeedMoreWriters

DEFAULT_SIGMA_MIN = 0.25
DEFAULT_K0_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.05), 10))
DEFAULT_K0_DIAG_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class BackgroundSummary:
    """Estimators of Appendix-style background statistics."""

    theta_hat: dict
    mu_char: dict
    mu: np.ndarray
    B_char: dict
    B_pooled: np.ndarray
    W_hat: np.ndarray
    n_cell: dict
    n_char: dict
    n: int
    m: int
    characters: tuple[str, ...]


@dataclass
class PriorHyper:
    """Elicited hyperparameters for one model; only the fields relevant to
    the model id are populated."""

    model_id: str
    mu: np.ndarray | None = None          # Normal models
    B: np.ndarray | None = None           # M2 / M3
    M: np.ndarray | None = None           # MANOVA prior mean matrix (L x p)
    B_ell: np.ndarray | None = None       # M5 / M6, (L, p, p)
    U: np.ndarray | None = None           # Inverse-Wishart scale
    nu: float | None = None
    k0: float | None = None               # M1
    K0: np.ndarray | None = None          # M4, diagonal entries (L,)
    upsilon: float | None = None          # M3 / M6
    sigma: float | None = None
    eta: float | None = None
    characters: tuple[str, ...] | None = None
    scaling: np.ndarray | None = None     # divisors the background was scaled by

    _REQUIRED = {
        "M1": ("mu", "U", "nu", "k0"),
        "M2": ("mu", "B", "U", "nu"),
        "M3": ("mu", "B", "upsilon", "sigma", "eta"),
        "M4": ("M", "U", "nu", "K0", "characters"),
        "M5": ("M", "B_ell", "U", "nu", "characters"),
        "M6": ("M", "B_ell", "upsilon", "sigma", "eta", "characters"),
    }

    def __post_init__(self):
        if self.model_id not in self._REQUIRED:
            raise BadModel(f"unknown model id {self.model_id!r}")
        for name in self._REQUIRED[self.model_id]:
            if getattr(self, name) is None:
                raise BadModel(f"{self.model_id} hyper missing field {name!r}")
        if self.nu is not None and self.U is not None:
            p = np.asarray(self.U).shape[0]
            if self.nu < p + 2:
                raise BadDof(f"nu must be >= p + 2 = {p + 2}, got {self.nu}")
        if self.k0 is not None and not 0.0 < self.k0 < 1.0:
            raise BadValue(f"k0 must lie in (0, 1), got {self.k0}")
        if self.sigma is not None and self.sigma <= 0:
            raise BadVariance(f"sigma must be positive, got {self.sigma}")
        if self.eta is not None and self.eta <= 0:
            raise BadValue(f"eta must be positive, got {self.eta}")
        if self.characters is not None:
            object.__setattr__(self, "characters", tuple(self.characters))

    @property
    def p(self) -> int:
        for name in ("mu", "U"):
            val = getattr(self, name)
            if val is not None:
                return np.asarray(val).shape[-1]
        return np.asarray(self.M).shape[1]

    def to_dict(self) -> dict:
        out = {"model_id": self.model_id}
        for name in ("mu", "B", "M", "B_ell", "U", "K0", "scaling"):
            val = getattr(self, name)
            if val is not None:
                out[name] = np.asarray(val).tolist()
        for name in ("nu", "k0", "upsilon", "sigma", "eta"):
            val = getattr(self, name)
            if val is not None:
                out[name] = float(val)
        if self.characters is not None:
            out["characters"] = list(self.characters)
        return out

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, payload: dict) -> "PriorHyper":
        kwargs = dict(payload)
        for name in ("mu", "B", "M", "B_ell", "U", "K0", "scaling"):
            if name in kwargs:
                kwargs[name] = np.asarray(kwargs[name], dtype=float)
        if "characters" in kwargs:
            kwargs["characters"] = tuple(kwargs["characters"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "PriorHyper":
        return cls.from_dict(json.loads(text))


# -- summaries ------------------------------------------------------------------


def _cells_by_writer(cells: dict) -> dict[int, dict[str, CellStats]]:
    out: dict[int, dict[str, CellStats]] = {}
    for (w, c), st in cells.items():
        out.setdefault(w, {})[c] = st
    return out


def summarize_background(bg: Dataset) -> BackgroundSummary:
    """Compute the background estimators listed in the module docstring.

    Requires at least two writers and a repetition in every writer-character
    cell (over the characters present in the background).
    """
    writers = bg.writer_ids
    if len(writers) < 2:
        raise NeedMoreWriters(f"background has {len(writers)} writer(s), need >= 2")
    chars = bg.character_labels
    cells = bg.cell_stats
    for w in writers:
        for c in chars:
            if (w, c) not in cells:
                raise MissingCell(f"writer {w} has no repetitions of character {c!r}")
    p = bg.p
    m = len(writers)
    n = bg.n

    theta_hat = {key: st.mean for key, st in cells.items()}
    n_cell = {key: st.n for key, st in cells.items()}
    n_char = {c: sum(cells[(w, c)].n for w in writers) for c in chars}

    mu_char = {}
    B_char = {}
    for c in chars:
        total = sum((cells[(w, c)].total for w in writers), np.zeros(p))
        mu_c = total / n_char[c]
        raw = sum((cells[(w, c)].raw_ss for w in writers), np.zeros((p, p)))
        scatter = raw - n_char[c] * np.outer(mu_c, mu_c)
        denom = max(n_char[c] - 1, 1)
        mu_char[c] = mu_c
        B_char[c] = scatter / denom

    total_all = sum((st.total for st in cells.values()), np.zeros(p))
    mu = total_all / n
    raw_all = sum((st.raw_ss for st in cells.values()), np.zeros((p, p)))
    B_pooled = (raw_all - n * np.outer(mu, mu)) / max(n - 1, 1)

    within = np.zeros((p, p))
    for st in cells.values():
        within += st.scatter
    if n - m < 1:
        raise NeedMoreWriters("not enough repetitions to pool a within-writer covariance")
    W_hat = within / (n - m)

    return BackgroundSummary(
        theta_hat=theta_hat,
        mu_char=mu_char,
        mu=mu,
        B_char=B_char,
        B_pooled=B_pooled,
        W_hat=W_hat,
        n_cell=n_cell,
        n_char=n_char,
        n=n,
        m=m,
        characters=chars,
    )


def iw_scale_from_within(W_hat: np.ndarray, nu: float) -> np.ndarray:
    """U = W_hat (nu - p - 1), making the Inverse-Wishart prior mean W_hat."""
    W_hat = np.asarray(W_hat, dtype=float)
    p = W_hat.shape[0]
    if nu < p + 2:
        raise BadDof(f"nu must be >= p + 2 = {p + 2}, got {nu}")
    return W_hat * (nu - p - 1)


def lognormal_from_within(W_hat: np.ndarray, use_sd: bool = False,
                          sigma_min: float = DEFAULT_SIGMA_MIN) -> tuple[float, float]:
    """LogNormal (location, scale) from the diagonal of W_hat.

    The location is the mean of the log variances. The printed dispersion is
    the mean signed deviation with a p - 1 denominator, which is identically
    zero, so the result is clamped from below at sigma_min; `use_sd`
    substitutes the sample standard deviation of the log variances.
    """
    diag = np.diag(np.asarray(W_hat, dtype=float))
    if np.any(diag <= 0):
        raise BadVariance("W_hat diagonal must be strictly positive")
    logs = np.log(diag)
    p = len(logs)
    upsilon = float(np.mean(logs))
    if use_sd:
        sigma = float(np.std(logs, ddof=1)) if p > 1 else 0.0
    else:
        sigma = float(np.sum(logs - upsilon) / max(p - 1, 1))
    return upsilon, max(sigma, sigma_min)


def _ridge(matrix: np.ndarray) -> np.ndarray:
    """Ridge a possibly singular covariance before it is used as a prior."""
    p = matrix.shape[0]
    bump = 1e-8 * max(np.trace(matrix), 1e-12) / p
    out = matrix + bump * np.eye(p)
    try:
        np.linalg.cholesky(out)
        return out
    except np.linalg.LinAlgError:
        bump = max(1e-6, 1e-6 * np.trace(matrix) / p)
        return matrix + bump * np.eye(p)


# -- leave-one-out grid searches ---------------------------------------------------


def _loo_pooled(cells_by_writer, writers, exclude, p):
    """(mu, W_hat) pooled over all writers except `exclude`."""
    total = np.zeros(p)
    raw = np.zeros((p, p))
    within = np.zeros((p, p))
    n = 0
    m = 0
    for w in writers:
        if w == exclude:
            continue
        m += 1
        for st in cells_by_writer[w].values():
            total += st.total
            raw += st.raw_ss
            within += st.scatter
            n += st.n
    if m < 1 or n - m < 1:
        return None
    mu = total / n
    return mu, within / (n - m)


def _loo_char_means(cells_by_writer, writers, exclude, chars, p):
    out = {}
    for c in chars:
        total = np.zeros(p)
        n = 0
        for w in writers:
            if w == exclude:
                continue
            st = cells_by_writer[w].get(c)
            if st is not None:
                total += st.total
                n += st.n
        if n == 0:
            return None
        out[c] = total / n
    return out


def grid_search_k0(bg: Dataset, grid: Sequence[float] | None = None,
                   nu: float | None = None, U: np.ndarray | None = None,
                   mu: np.ndarray | None = None,
                   nu_scale: float | None = None) -> float:
    """Pick k0 maximizing the summed leave-one-out Normal-conjugate log
    marginals of the background writers.

    For each background writer the remaining writers supply mu and U (unless
    fixed overrides are given); ties keep the earliest grid point.
    `nu_scale` pins the degrees of freedom at which U is elicited, so prior
    sweeps can vary nu while holding the scale matrix at its baseline.
    """
    grid = tuple(grid) if grid is not None else DEFAULT_K0_GRID
    if len(grid) == 0:
        raise BadGrid("empty k0 grid")
    if any(not 0.0 < g < 1.0 for g in grid):
        raise BadGrid("k0 grid values must lie in (0, 1)")
    p = bg.p
    if nu is None:
        nu = p + 2
    writers = bg.writer_ids
    if len(writers) < 2:
        raise NeedMoreWriters("k0 grid search needs >= 2 background writers")
    cells_by_writer = _cells_by_writer(bg.cell_stats)

    per_writer = []
    for w in writers:
        if mu is not None and U is not None:
            mu_w, U_w = mu, U
        else:
            loo = _loo_pooled(cells_by_writer, writers, w, p)
            if loo is None:
                continue
            mu_loo, W_loo = loo
            mu_w = mu if mu is not None else mu_loo
            U_w = U if U is not None else iw_scale_from_within(
                _ridge(W_loo), nu_scale if nu_scale is not None else nu
            )
        own = [st for st in cells_by_writer[w].values()]
        n_w = sum(st.n for st in own)
        total = sum((st.total for st in own), np.zeros(p))
        raw = sum((st.raw_ss for st in own), np.zeros((p, p)))
        ybar = total / n_w
        scatter = raw - n_w * np.outer(ybar, ybar)
        per_writer.append((n_w, ybar, scatter, mu_w, U_w))

    best_k0, best_val = None, -np.inf
    for k0 in grid:
        val = 0.0
        for n_w, ybar, scatter, mu_w, U_w in per_writer:
            val += models.m1_log_marginal_from_stats(
                n_w, ybar, scatter, mu_w, float(k0), U_w, nu
            )
        if val > best_val:
            best_k0, best_val = float(k0), val
    return best_k0


def _m4_logml_k0_batch(n, CtC, CtY, YtY, M, K0_batch, U, nu):
    """M4 closed form across a batch of diagonal K0 candidates (G, L)."""
    G, L = K0_batch.shape
    p = YtY.shape[0]
    Kn = CtC[None, :, :] + K0_batch[:, :, None] * np.eye(L)[None, :, :]
    rhs = CtY[None, :, :] + K0_batch[:, :, None] * M[None, :, :]
    Mn = np.linalg.solve(Kn, rhs)
    quad_prior = np.einsum("li,gl,lj->gij", M, K0_batch, M)
    quad_post = np.einsum("gli,glk,gkj->gij", Mn, Kn, Mn)
    Un = U[None, :, :] + YtY[None, :, :] + quad_prior - quad_post
    Un = 0.5 * (Un + np.transpose(Un, (0, 2, 1)))
    nun = nu + n
    sign_u, logdet_un = np.linalg.slogdet(Un)
    logdet_un = np.where(sign_u > 0, logdet_un, np.inf)
    sign_k, logdet_kn = np.linalg.slogdet(Kn)
    logdet_k0 = np.sum(np.log(K0_batch), axis=1)
    sign_U, logdet_U = np.linalg.slogdet(U)
    return (
        -0.5 * n * p * np.log(np.pi)
        + multigammaln(0.5 * nun, p)
        - multigammaln(0.5 * nu, p)
        + 0.5 * nu * logdet_U
        - 0.5 * nun * logdet_un
        + 0.5 * p * (logdet_k0 - logdet_kn)
    )


def grid_search_K0(bg: Dataset, grid: Sequence[float] | Sequence[Sequence[float]] | None = None,
                   nu: float | None = None, U: np.ndarray | None = None,
                   M: np.ndarray | None = None,
                   nu_scale: float | None = None) -> np.ndarray:
    """Exhaustive product-grid search for the diagonal MANOVA shrinkage K0.

    Maximizes the summed leave-one-out MANOVA-conjugate log marginals of the
    background writers; with one character this reduces to grid_search_k0.
    """
    chars = bg.character_labels
    L = len(chars)
    if grid is None:
        axes = [DEFAULT_K0_DIAG_GRID] * L
    elif grid and np.isscalar(grid[0]):
        axes = [tuple(float(g) for g in grid)] * L
    else:
        axes = [tuple(float(g) for g in axis) for axis in grid]
        if len(axes) != L:
            raise BadGrid(f"need {L} per-axis grids, got {len(axes)}")
    if any(len(a) == 0 for a in axes):
        raise BadGrid("empty K0 grid axis")
    if any(not 0.0 < g < 1.0 for a in axes for g in a):
        raise BadGrid("K0 grid values must lie in (0, 1)")
    p = bg.p
    if nu is None:
        nu = p + 2
    writers = bg.writer_ids
    if len(writers) < 2:
        raise NeedMoreWriters("K0 grid search needs >= 2 background writers")
    cells_by_writer = _cells_by_writer(bg.cell_stats)
    candidates = np.array(list(itertools.product(*axes)))

    totals = np.zeros(len(candidates))
    for w in writers:
        if M is not None and U is not None:
            M_w, U_w = M, U
        else:
            loo = _loo_pooled(cells_by_writer, writers, w, p)
            mu_chars = _loo_char_means(cells_by_writer, writers, w, chars, p)
            if loo is None or mu_chars is None:
                continue
            _, W_loo = loo
            U_w = U if U is not None else iw_scale_from_within(
                _ridge(W_loo), nu_scale if nu_scale is not None else nu
            )
            if M is not None:
                M_w = M
            else:
                ref = chars[0]
                rows = [mu_chars[ref]]
                rows += [mu_chars[c] - mu_chars[ref] for c in chars[1:]]
                M_w = np.array(rows)
        n_w, CtC, CtY, YtY = _writer_design_stats(cells_by_writer[w], chars, p)
        totals += _m4_logml_k0_batch(n_w, CtC, CtY, YtY, M_w, candidates, U_w, nu)

    best = int(np.argmax(totals))  # argmax keeps the first index on ties
    return candidates[best].copy()


def _writer_design_stats(cells: dict[str, CellStats], chars, p):
    """(n, C'C, C'Y, Y'Y) of one writer's records from its cell statistics."""
    L = len(chars)
    CtC = np.zeros((L, L))
    CtY = np.zeros((L, p))
    YtY = np.zeros((p, p))
    n = 0
    for ell, c in enumerate(chars):
        st = cells.get(c)
        if st is None:
            continue
        n += st.n
        CtC[0, 0] += st.n
        CtY[0] += st.total
        YtY += st.raw_ss
        if ell > 0:
            CtC[ell, ell] += st.n
            CtC[0, ell] += st.n
            CtC[ell, 0] += st.n
            CtY[ell] += st.total
    return n, CtC, CtY, YtY


# -- full elicitation ---------------------------------------------------------------


def elicit_priors(model_id: str, bg: Dataset, nu: float | None = None,
                  eta: float = 1.0, k0_grid: Sequence[float] | None = None,
                  K0_grid=None, use_sd_sigma: bool = False,
                  sigma_min: float = DEFAULT_SIGMA_MIN,
                  nu_scale: float | None = None) -> PriorHyper:
    """Elicit the full hyperparameter set for one model from background data.

    Normal models pool every character; MANOVA models use difference coding
    against the first character present (mu_1 is its mean, later rows are
    mean differences from it). Shrinkage scalars come from the grid searches
    for the conjugate models. `nu_scale` elicits the Inverse-Wishart scale
    at a pinned baseline dof so sensitivity sweeps can vary nu alone.
    """
    if model_id not in models.MODEL_IDS:
        raise BadModel(f"unknown model id {model_id!r}")
    summary = summarize_background(bg)
    p = bg.p
    if nu is None:
        nu = p + 2
    scale_dof = nu_scale if nu_scale is not None else nu
    chars = summary.characters

    if model_id in ("M1", "M2", "M3"):
        mu = summary.mu
        if model_id == "M1":
            U = iw_scale_from_within(_ridge(summary.W_hat), scale_dof)
            k0 = grid_search_k0(bg, grid=k0_grid, nu=nu, nu_scale=nu_scale)
            return PriorHyper("M1", mu=mu, U=U, nu=nu, k0=k0,
                              scaling=bg.scaling)
        B = _ridge(summary.B_pooled)
        if model_id == "M2":
            U = iw_scale_from_within(_ridge(summary.W_hat), scale_dof)
            return PriorHyper("M2", mu=mu, B=B, U=U, nu=nu, scaling=bg.scaling)
        upsilon, sigma = lognormal_from_within(
            summary.W_hat, use_sd=use_sd_sigma, sigma_min=sigma_min
        )
        return PriorHyper("M3", mu=mu, B=B, upsilon=upsilon, sigma=sigma,
                          eta=eta, scaling=bg.scaling)

    # MANOVA models: difference coding against the reference character
    ref = chars[0]
    rows = [summary.mu_char[ref]]
    rows += [summary.mu_char[c] - summary.mu_char[ref] for c in chars[1:]]
    M = np.array(rows)
    if model_id == "M4":
        U = iw_scale_from_within(_ridge(summary.W_hat), scale_dof)
        K0 = grid_search_K0(bg, grid=K0_grid, nu=nu, nu_scale=nu_scale)
        return PriorHyper("M4", M=M, U=U, nu=nu, K0=K0, characters=chars,
                          scaling=bg.scaling)
    B_ell = np.array([_ridge(summary.B_char[c]) for c in chars])
    if model_id == "M5":
        U = iw_scale_from_within(_ridge(summary.W_hat), scale_dof)
        return PriorHyper("M5", M=M, B_ell=B_ell, U=U, nu=nu,
                          characters=chars, scaling=bg.scaling)
    upsilon, sigma = lognormal_from_within(
        summary.W_hat, use_sd=use_sd_sigma, sigma_min=sigma_min
    )
    return PriorHyper("M6", M=M, B_ell=B_ell, upsilon=upsilon, sigma=sigma,
                      eta=eta, characters=chars, scaling=bg.scaling)
