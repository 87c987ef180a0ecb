"""Density definitions for the six Bayesian models M1..M6.

Likelihood structures
    Normal (M1, M2, M3):   y_i ~ N_p(theta, W)
    MANOVA (M4, M5, M6):   y_i ~ N_p(Theta' c_i, W), c_i the dummy-coded
                           character row with the first character as the
                           reference group.

Prior structures
    M1, M4:  conjugate Normal-Inverse-Wishart (closed-form marginals)
    M2, M5:  hierarchical Normal(mu, B) x Inverse-Wishart(U, nu)
    M3, M6:  Normal(mu, B) x LogNormal on the standard deviations x LKJ on
             the correlation matrix, with W = D R D.

All marginal-likelihood arithmetic is in log space. The Inverse-Wishart is
parameterized so that E[W] = U / (nu - p - 1). Parameter transforms to the
unconstrained scale (identity for means, log-Cholesky for W, log for D,
canonical-partial-correlation for R) carry log-Jacobians so that every model
can be evaluated on a common unbounded space; from_unconstrained maps every
finite vector to valid parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np
from scipy.special import betaln, gammaln, multigammaln

from .dataset import CHARACTERS, Dataset, dummy_code
from .errors import BadCorrelation, BadCovariance, BadModel, BadValue

if TYPE_CHECKING:  # pragma: no cover
    from .elicit import PriorHyper

MODEL_IDS = ("M1", "M2", "M3", "M4", "M5", "M6")
NORMAL_MODELS = frozenset({"M1", "M2", "M3"})
MANOVA_MODELS = frozenset({"M4", "M5", "M6"})
CONJUGATE_MODELS = frozenset({"M1", "M4"})
LKJ_MODELS = frozenset({"M3", "M6"})

MODEL_DESCRIPTIONS = {
    "M1": "Normal likelihood, conjugate Normal-Inverse-Wishart prior",
    "M2": "Normal likelihood, hierarchical Normal-Inverse-Wishart prior",
    "M3": "Normal likelihood, Normal-LogNormal-LKJ prior",
    "M4": "MANOVA likelihood, conjugate Normal-Inverse-Wishart prior",
    "M5": "MANOVA likelihood, hierarchical Normal-Inverse-Wishart prior",
    "M6": "MANOVA likelihood, Normal-LogNormal-LKJ prior",
}

LOG_2PI = np.log(2.0 * np.pi)


def _check_model_id(model_id: str) -> str:
    if model_id not in MODEL_IDS:
        raise BadModel(f"unknown model id {model_id!r}")
    return model_id


# -- parameters ----------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    """One parameter set: a mean (vector or L x p matrix) plus a covariance,
    either W directly or the (D, R) decomposition W = D R D."""

    theta: np.ndarray | None = None
    Theta: np.ndarray | None = None
    W: np.ndarray | None = None
    D: np.ndarray | None = None
    R: np.ndarray | None = None

    def covariance(self) -> np.ndarray:
        if self.W is not None:
            return self.W
        if self.D is None or self.R is None:
            raise BadModel("params carry neither W nor a (D, R) pair")
        return (self.D[:, None] * self.R) * self.D[None, :]

    def mean_for(self, model_id: str) -> np.ndarray:
        if model_id in NORMAL_MODELS:
            if self.theta is None:
                raise BadModel(f"{model_id} params need a theta vector")
            return self.theta
        if self.Theta is None:
            raise BadModel(f"{model_id} params need a Theta matrix")
        return self.Theta


@dataclass(frozen=True)
class UnconstrainedVector:
    """Unconstrained coordinates plus log |det d(constrained)/d(z)|."""

    z: np.ndarray
    log_jacobian: float


# -- elementary densities --------------------------------------------------------


def _chol_or_raise(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise BadCovariance(f"{what} is not positive definite") from None


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float | np.ndarray:
    """Multivariate normal log density; x may be (p,) or (n, p)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = x.shape[1]
    L = _chol_or_raise(cov, "covariance")
    diff = x - mean
    sol = np.linalg.solve(L, diff.T)
    quad = np.sum(sol ** 2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    out = -0.5 * (p * LOG_2PI + logdet + quad)
    return float(out[0]) if out.shape == (1,) else out


def iw_log_density(W: np.ndarray, U: np.ndarray, nu: float) -> float:
    """Inverse-Wishart log density with mean U / (nu - p - 1)."""
    W = np.asarray(W, dtype=float)
    U = np.asarray(U, dtype=float)
    p = W.shape[0]
    if nu <= p - 1:
        raise BadCovariance(f"Inverse-Wishart needs nu > p - 1, got nu={nu}, p={p}")
    LW = _chol_or_raise(W, "W")
    LU = _chol_or_raise(U, "U")
    logdet_w = 2.0 * np.sum(np.log(np.diag(LW)))
    logdet_u = 2.0 * np.sum(np.log(np.diag(LU)))
    # tr(U W^{-1}) via triangular solves
    M = np.linalg.solve(LW, LU)
    tr = np.sum(M ** 2)
    return float(
        0.5 * nu * logdet_u
        - 0.5 * nu * p * np.log(2.0)
        - multigammaln(0.5 * nu, p)
        - 0.5 * (nu + p + 1) * logdet_w
        - 0.5 * tr
    )


def lkj_log_normalizer(p: int, eta: float) -> float:
    """log of the constant c such that the LKJ density is |R|^(eta-1) / c.

    c = prod_{k=1}^{p-1} [ 2^{(2 eta - 2 + p - k)(p - k)}
                           B(eta + (p-k-1)/2, eta + (p-k-1)/2)^{p-k} ],
    which makes the density integrate to one over correlation matrices
    (at p = 2, eta = 1 the density is the constant 1/2 on (-1, 1)).
    """
    if eta <= 0:
        raise BadValue(f"LKJ shape must be positive, got {eta}")
    total = 0.0
    for k in range(1, p):
        mult = p - k
        total += (2.0 * eta - 2.0 + p - k) * mult * np.log(2.0)
        half = eta + (p - k - 1) / 2.0
        total += mult * betaln(half, half)
    return float(total)


def _validate_correlation(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    p = R.shape[0]
    if R.shape != (p, p):
        raise BadCorrelation("R must be square")
    if not np.allclose(R, R.T, atol=1e-10):
        raise BadCorrelation("R must be symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=1e-10):
        raise BadCorrelation("R must have a unit diagonal")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise BadCorrelation("R is not positive definite") from None
    return R


def lkj_log_density(R: np.ndarray, eta: float) -> float:
    """LKJ log density, (eta - 1) log|R| - log c with c the normalizer above."""
    R = _validate_correlation(R)
    p = R.shape[0]
    sign, logdet = np.linalg.slogdet(R)
    return float((eta - 1.0) * logdet - lkj_log_normalizer(p, eta))


def lognormal_logpdf(x: np.ndarray, upsilon: float, sigma: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lx = np.log(x)
    return -lx - np.log(sigma) - 0.5 * LOG_2PI - 0.5 * ((lx - upsilon) / sigma) ** 2


def matrix_normal_logpdf(X: np.ndarray, M: np.ndarray, row_cov: np.ndarray,
                         col_cov: np.ndarray) -> float:
    """Matrix normal MN(M, row_cov, col_cov) log density of an L x p matrix."""
    X = np.asarray(X, dtype=float)
    L_rows, p = X.shape
    Lr = _chol_or_raise(row_cov, "row covariance")
    Lc = _chol_or_raise(col_cov, "column covariance")
    diff = X - M
    A = np.linalg.solve(Lr, diff)          # Lr^{-1} (X - M)
    B = np.linalg.solve(Lc, A.T)           # Lc^{-1} (X - M)' Lr^{-T}
    quad = np.sum(B ** 2)
    logdet_r = 2.0 * np.sum(np.log(np.diag(Lr)))
    logdet_c = 2.0 * np.sum(np.log(np.diag(Lc)))
    return float(-0.5 * (L_rows * p * LOG_2PI + p * logdet_r + L_rows * logdet_c + quad))


# -- likelihood and prior ---------------------------------------------------------


def log_likelihood(model_id: str, params: ModelParams, data: Dataset,
                   characters: Sequence[str] = CHARACTERS) -> float:
    """Sum of p-variate Normal log densities over the records of `data`.

    Normal models use mean theta; MANOVA models use mean Theta' c with the
    record's dummy-coded character row c.
    """
    _check_model_id(model_id)
    W = params.covariance()
    if model_id in NORMAL_MODELS:
        means = params.mean_for(model_id)[None, :]
    else:
        Theta = params.mean_for(model_id)
        C = np.array([dummy_code(c, tuple(characters))
                      for c in data.characters.tolist()])
        means = C @ Theta
    if data.n == 0:
        return 0.0
    L = _chol_or_raise(W, "W")
    diff = data.X - means
    sol = np.linalg.solve(L, diff.T)
    quad = np.sum(sol ** 2)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (data.n * data.p * LOG_2PI + data.n * logdet + quad))


def log_prior(model_id: str, hyper: "PriorHyper", params: ModelParams) -> float:
    """Sum of the model's prior log densities at `params`."""
    _check_model_id(model_id)
    if hyper.model_id != model_id:
        raise BadModel(
            f"hyper is for {hyper.model_id}, params evaluated under {model_id}"
        )
    total = 0.0
    if model_id == "M1":
        W = params.covariance()
        total += mvn_logpdf(params.theta, hyper.mu, W / hyper.k0)
        total += iw_log_density(W, hyper.U, hyper.nu)
    elif model_id == "M2":
        total += mvn_logpdf(params.theta, hyper.mu, hyper.B)
        total += iw_log_density(params.covariance(), hyper.U, hyper.nu)
    elif model_id == "M3":
        total += mvn_logpdf(params.theta, hyper.mu, hyper.B)
        total += float(np.sum(lognormal_logpdf(params.D, hyper.upsilon, hyper.sigma)))
        total += lkj_log_density(params.R, hyper.eta)
    elif model_id == "M4":
        W = params.covariance()
        K0_inv = np.diag(1.0 / np.asarray(hyper.K0, dtype=float))
        total += matrix_normal_logpdf(params.Theta, hyper.M, K0_inv, W)
        total += iw_log_density(W, hyper.U, hyper.nu)
    elif model_id == "M5":
        for ell in range(hyper.M.shape[0]):
            total += mvn_logpdf(params.Theta[ell], hyper.M[ell], hyper.B_ell[ell])
        total += iw_log_density(params.covariance(), hyper.U, hyper.nu)
    else:  # M6
        for ell in range(hyper.M.shape[0]):
            total += mvn_logpdf(params.Theta[ell], hyper.M[ell], hyper.B_ell[ell])
        total += float(np.sum(lognormal_logpdf(params.D, hyper.upsilon, hyper.sigma)))
        total += lkj_log_density(params.R, hyper.eta)
    return float(total)


# -- closed-form marginals ---------------------------------------------------------


def _logdet_pd(A: np.ndarray, what: str) -> float:
    L = _chol_or_raise(0.5 * (A + A.T), what)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def m1_log_marginal_from_stats(n: int, ybar: np.ndarray, scatter: np.ndarray,
                               mu: np.ndarray, k0: float, U: np.ndarray,
                               nu: float) -> float:
    """Normal-Inverse-Wishart marginal likelihood from sufficient statistics."""
    p = len(ybar)
    kn = k0 + n
    nun = nu + n
    d = ybar - mu
    Un = U + scatter + (k0 * n / kn) * np.outer(d, d)
    return float(
        -0.5 * n * p * np.log(np.pi)
        + multigammaln(0.5 * nun, p)
        - multigammaln(0.5 * nu, p)
        + 0.5 * nu * _logdet_pd(U, "U")
        - 0.5 * nun * _logdet_pd(Un, "U_n")
        + 0.5 * p * (np.log(k0) - np.log(kn))
    )


def closed_form_log_marginal_m1(data: Dataset, hyper: "PriorHyper") -> float:
    """Exact log marginal likelihood of the data under M1.

    Uses k_n = k0 + n, nu_n = nu + n and
    U_n = U + S + k0 n / (k0 + n) (ybar - mu)(ybar - mu)'.
    """
    if hyper.model_id != "M1":
        raise BadModel(f"expected M1 hyperparameters, got {hyper.model_id}")
    n, ybar, scatter = data.pooled_stats()
    return m1_log_marginal_from_stats(n, ybar, scatter, hyper.mu, hyper.k0,
                                      hyper.U, hyper.nu)


def manova_design_stats(data: Dataset, characters: Sequence[str]):
    """(n, C'C, C'Y, Y'Y) for the dummy-coded design of `data`."""
    C = np.array([dummy_code(c, tuple(characters))
                  for c in data.characters.tolist()])
    Y = data.X
    return data.n, C.T @ C, C.T @ Y, Y.T @ Y


def m4_log_marginal_from_stats(n: int, CtC: np.ndarray, CtY: np.ndarray,
                               YtY: np.ndarray, M: np.ndarray,
                               K0: np.ndarray, U: np.ndarray, nu: float) -> float:
    """Matrix-normal-Inverse-Wishart marginal likelihood from design statistics.

    K_n = C'C + K0, M_n = K_n^{-1} (C'Y + K0 M) and
    U_n = U + Y'Y + M' K0 M - M_n' K_n M_n; the overall constant matches the
    Normal-Inverse-Wishart form exactly (it reduces to it when L = 1), which
    is the convention fixed by the prior Monte Carlo oracle.
    """
    p = YtY.shape[0]
    K0 = np.diag(np.asarray(K0, dtype=float))
    Kn = CtC + K0
    rhs = CtY + K0 @ M
    Mn = np.linalg.solve(Kn, rhs)
    Un = U + YtY + M.T @ K0 @ M - Mn.T @ Kn @ Mn
    nun = nu + n
    sign_k0, logdet_k0 = np.linalg.slogdet(K0)
    sign_kn, logdet_kn = np.linalg.slogdet(Kn)
    if sign_k0 <= 0 or sign_kn <= 0:
        raise BadCovariance("K0 and K_n must be positive definite")
    return float(
        -0.5 * n * p * np.log(np.pi)
        + multigammaln(0.5 * nun, p)
        - multigammaln(0.5 * nu, p)
        + 0.5 * nu * _logdet_pd(U, "U")
        - 0.5 * nun * _logdet_pd(Un, "U_n")
        + 0.5 * p * (logdet_k0 - logdet_kn)
    )


def closed_form_log_marginal_m4(data: Dataset, hyper: "PriorHyper") -> float:
    """Exact log marginal likelihood of the data under M4."""
    if hyper.model_id != "M4":
        raise BadModel(f"expected M4 hyperparameters, got {hyper.model_id}")
    n, CtC, CtY, YtY = manova_design_stats(data, hyper.characters)
    return m4_log_marginal_from_stats(n, CtC, CtY, YtY, hyper.M, hyper.K0,
                                      hyper.U, hyper.nu)


# -- unconstrained transforms --------------------------------------------------------

# z layout per model (p feature dims, L characters):
#   M1/M2: [theta (p)] + [w (p(p+1)/2)]
#   M3:    [theta (p)] + [log d (p)] + [r (p(p-1)/2)]
#   M4/M5: [Theta row-major (L p)] + [w (p(p+1)/2)]
#   M6:    [Theta row-major (L p)] + [log d (p)] + [r (p(p-1)/2)]
# w is the log-Cholesky coding of W (log diagonal first, then the strict
# lower triangle row-major); r codes the correlation matrix through tanh
# canonical partial correlations.


def model_dim(model_id: str, p: int, L: int = 1) -> int:
    _check_model_id(model_id)
    mean = p if model_id in NORMAL_MODELS else L * p
    if model_id in LKJ_MODELS:
        return mean + p + p * (p - 1) // 2
    return mean + p * (p + 1) // 2


def _tril_rows_cols(p: int) -> tuple[np.ndarray, np.ndarray]:
    return np.tril_indices(p, k=-1)


def spd_to_z(W: np.ndarray) -> tuple[np.ndarray, float]:
    """Log-Cholesky coding of an SPD matrix and the transform's log-Jacobian."""
    L = _chol_or_raise(np.asarray(W, dtype=float), "W")
    p = W.shape[0]
    rows, cols = _tril_rows_cols(p)
    z = np.concatenate([np.log(np.diag(L)), L[rows, cols]])
    log_jac = _spd_log_jacobian(np.log(np.diag(L)), p)
    return z, log_jac


def _spd_log_jacobian(log_diag: np.ndarray, p: int) -> float:
    # |d W / d z| = 2^p prod_j L_jj^(p - j + 1) * prod_j L_jj  (log-diag chain)
    weights = (p - np.arange(p)) + 1.0
    return float(p * np.log(2.0) + np.sum(weights * log_diag))


def z_to_spd(z: np.ndarray, p: int) -> tuple[np.ndarray, float]:
    """Inverse of spd_to_z; total on all finite z."""
    log_diag = z[:p]
    L = np.zeros((p, p))
    L[np.diag_indices(p)] = np.exp(log_diag)
    rows, cols = _tril_rows_cols(p)
    L[rows, cols] = z[p:]
    return L @ L.T, _spd_log_jacobian(log_diag, p)


def corr_to_z(R: np.ndarray) -> tuple[np.ndarray, float]:
    """Canonical-partial-correlation coding of a correlation matrix."""
    R = _validate_correlation(R)
    p = R.shape[0]
    Lam = np.linalg.cholesky(R)
    y = np.zeros((p, p))
    z = []
    for i in range(1, p):
        cum = 1.0
        for j in range(i):
            y_ij = Lam[i, j] / cum if cum > 0 else 0.0
            y_ij = float(np.clip(y_ij, -1 + 1e-12, 1 - 1e-12))
            y[i, j] = y_ij
            z.append(np.arctanh(y_ij))
            cum *= np.sqrt(1.0 - y_ij ** 2)
    z = np.array(z)
    return z, _corr_log_jacobian(y, p)


def _corr_log_jacobian(y: np.ndarray, p: int) -> float:
    # combined tanh + CPC-to-R terms: sum over pairs (i, j), j < i of
    # ((p - j) / 2) log(1 - y_ij^2), with j the 0-based column index
    total = 0.0
    for i in range(1, p):
        for j in range(i):
            total += 0.5 * (p - j) * np.log1p(-y[i, j] ** 2)
    return float(total)


def z_to_corr(z: np.ndarray, p: int) -> tuple[np.ndarray, float]:
    """Build a correlation matrix from tanh canonical partial correlations."""
    y = np.zeros((p, p))
    rows, cols = _tril_rows_cols(p)
    y[rows, cols] = np.clip(np.tanh(z), -1 + 1e-15, 1 - 1e-15)
    Lam = np.zeros((p, p))
    Lam[0, 0] = 1.0
    for i in range(1, p):
        cum = 1.0
        for j in range(i):
            Lam[i, j] = y[i, j] * cum
            cum *= np.sqrt(1.0 - y[i, j] ** 2)
        Lam[i, i] = cum
    R = Lam @ Lam.T
    np.fill_diagonal(R, 1.0)
    return R, _corr_log_jacobian(y, p)


def to_unconstrained(model_id: str, params: ModelParams) -> UnconstrainedVector:
    """Map parameters to unconstrained coordinates with the log-Jacobian such
    that prior density on z = prior density on params + log_jacobian."""
    _check_model_id(model_id)
    mean = params.mean_for(model_id).ravel()
    if model_id in LKJ_MODELS:
        if params.D is None or params.R is None:
            raise BadModel(f"{model_id} params need the (D, R) decomposition")
        if np.any(params.D <= 0):
            raise BadCovariance("D entries must be positive")
        z_r, jac_r = corr_to_z(params.R)
        z = np.concatenate([mean, np.log(params.D), z_r])
        log_jac = float(np.sum(np.log(params.D))) + jac_r
    else:
        if params.W is None:
            raise BadModel(f"{model_id} params need a W matrix")
        z_w, jac_w = spd_to_z(params.W)
        z = np.concatenate([mean, z_w])
        log_jac = jac_w
    return UnconstrainedVector(z, log_jac)


def from_unconstrained(model_id: str, z: np.ndarray, p: int,
                       L: int = 1) -> tuple[ModelParams, float]:
    """Map any finite z to valid parameters; returns (params, log_jacobian)."""
    _check_model_id(model_id)
    z = np.asarray(z, dtype=float)
    if z.shape != (model_dim(model_id, p, L),):
        raise BadValue(
            f"z has length {z.shape}, expected {model_dim(model_id, p, L)}"
        )
    n_mean = p if model_id in NORMAL_MODELS else L * p
    mean = z[:n_mean]
    rest = z[n_mean:]
    kwargs: dict = {}
    if model_id in NORMAL_MODELS:
        kwargs["theta"] = mean
    else:
        kwargs["Theta"] = mean.reshape(L, p)
    if model_id in LKJ_MODELS:
        log_d = rest[:p]
        R, jac_r = z_to_corr(rest[p:], p)
        kwargs["D"] = np.exp(log_d)
        kwargs["R"] = R
        log_jac = float(np.sum(log_d)) + jac_r
    else:
        W, log_jac = z_to_spd(rest, p)
        kwargs["W"] = W
    return ModelParams(**kwargs), log_jac


# -- batched evaluation context ------------------------------------------------------


def _robust_inv_slogdet(W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched inverse + log-determinant; numerically bad rows get nan
    (downstream filtering turns them into -inf posterior values)."""
    try:
        inv_W = np.linalg.inv(W)
    except np.linalg.LinAlgError:
        T = W.shape[0]
        inv_W = np.empty_like(W)
        for t in range(T):
            try:
                inv_W[t] = np.linalg.inv(W[t])
            except np.linalg.LinAlgError:
                inv_W[t] = np.nan
    sign, logdet = np.linalg.slogdet(W)
    logdet = np.where(sign > 0, logdet, np.nan)
    return inv_W, logdet


class ModelContext:
    """Caches sufficient statistics of one (model, hyper, data) triple and
    evaluates the unnormalized log posterior on batches of unconstrained
    draws; this is the density callback used by the bridge estimator."""

    def __init__(self, model_id: str, hyper: "PriorHyper", data: Dataset):
        _check_model_id(model_id)
        if hyper.model_id != model_id:
            raise BadModel(f"hyper is for {hyper.model_id}, context for {model_id}")
        self.model_id = model_id
        self.hyper = hyper
        self.data = data
        self.p = data.p
        self.is_manova = model_id in MANOVA_MODELS
        self.characters = tuple(hyper.characters) if self.is_manova else None
        self.L = len(self.characters) if self.is_manova else 1
        self.dim = model_dim(model_id, self.p, self.L)
        # group statistics: per character for MANOVA, pooled otherwise
        if self.is_manova:
            stats = data.character_stats() if data.n else {}
            self.groups = []
            for ell, label in enumerate(self.characters):
                if label in stats:
                    n_g, mean_g, scatter_g = stats[label]
                    self.groups.append((ell, n_g, mean_g, scatter_g))
        else:
            if data.n:
                n_g, mean_g, scatter_g = data.pooled_stats()
                self.groups = [(0, n_g, mean_g, scatter_g)]
            else:
                self.groups = []
        self.n_total = data.n
        self._prior_chols: dict[str, np.ndarray] = {}

    # -- batched pieces ------------------------------------------------

    def _split(self, Z: np.ndarray):
        n_mean = self.p if not self.is_manova else self.L * self.p
        return Z[:, :n_mean], Z[:, n_mean:]

    def _cov_from_z(self, z_cov: np.ndarray):
        """(W, inv_W, logdet_W, log_jac, extras) for a batch of draws.

        Log scales are clipped at +-150 so that wild proposal draws overflow
        to a -inf posterior value instead of crashing the batched algebra.
        """
        T = z_cov.shape[0]
        p = self.p
        if self.model_id in LKJ_MODELS:
            log_d = np.clip(z_cov[:, :p], -150.0, 150.0)
            d = np.exp(log_d)
            y_flat = np.clip(np.tanh(z_cov[:, p:]), -1 + 1e-15, 1 - 1e-15)
            rows, cols = _tril_rows_cols(p)
            Lam = np.zeros((T, p, p))
            Lam[:, 0, 0] = 1.0
            y = np.zeros((T, p, p))
            y[:, rows, cols] = y_flat
            for i in range(1, p):
                cum = np.ones(T)
                for j in range(i):
                    Lam[:, i, j] = y[:, i, j] * cum
                    cum = cum * np.sqrt(1.0 - y[:, i, j] ** 2)
                Lam[:, i, i] = cum
            R = Lam @ np.transpose(Lam, (0, 2, 1))
            R[:, np.arange(p), np.arange(p)] = 1.0
            W = d[:, :, None] * R * d[:, None, :]
            coeff = 0.5 * (p - cols)
            jac = np.sum(np.log1p(-y_flat ** 2) * coeff[None, :], axis=1)
            jac = jac + np.sum(log_d, axis=1)
            extras = {"d": d, "log_d": log_d, "R": R}
        else:
            log_diag = np.clip(z_cov[:, :p], -150.0, 150.0)
            Lw = np.zeros((T, p, p))
            Lw[:, np.arange(p), np.arange(p)] = np.exp(log_diag)
            rows, cols = _tril_rows_cols(p)
            Lw[:, rows, cols] = np.clip(z_cov[:, p:], -1e60, 1e60)
            W = Lw @ np.transpose(Lw, (0, 2, 1))
            weights = (p - np.arange(p)) + 1.0
            jac = p * np.log(2.0) + np.sum(weights[None, :] * log_diag, axis=1)
            extras = {}
        inv_W, logdet = _robust_inv_slogdet(W)
        return W, inv_W, logdet, jac, extras

    def _means_per_group(self, z_mean: np.ndarray):
        """Per-group model means: list aligned with self.groups, each (T, p)."""
        if not self.is_manova:
            return [z_mean]
        T = z_mean.shape[0]
        Theta = z_mean.reshape(T, self.L, self.p)
        out = []
        for ell, *_ in self.groups:
            m = Theta[:, 0, :].copy()
            if ell > 0:
                m = m + Theta[:, ell, :]
            out.append(m)
        return out

    def _loglik_from_cov(self, z_mean, inv_W, logdet) -> np.ndarray:
        T = z_mean.shape[0]
        out = np.full(T, -0.5 * self.n_total * self.p * LOG_2PI)
        out = out - 0.5 * self.n_total * logdet
        means = self._means_per_group(z_mean)
        for (ell, n_g, mean_g, scatter_g), m in zip(self.groups, means):
            tr = np.einsum("tij,ji->t", inv_W, scatter_g)
            diff = mean_g[None, :] - m
            quad = np.einsum("ti,tij,tj->t", diff, inv_W, diff)
            out = out - 0.5 * (tr + n_g * quad)
        return out

    def _logprior_from_cov(self, z_mean, W, inv_W, logdet_w, extras) -> np.ndarray:
        hyper = self.hyper
        p = self.p
        T = z_mean.shape[0]
        out = np.zeros(T)
        model_id = self.model_id
        if model_id == "M1":
            diff = z_mean - hyper.mu[None, :]
            quad = hyper.k0 * np.einsum("ti,tij,tj->t", diff, inv_W, diff)
            out += -0.5 * (p * LOG_2PI + logdet_w - p * np.log(hyper.k0) + quad)
            out += self._iw_batch(inv_W, logdet_w)
        elif model_id == "M2":
            out += self._fixed_normal_batch("B", hyper.B, hyper.mu, z_mean)
            out += self._iw_batch(inv_W, logdet_w)
        elif model_id == "M3":
            out += self._fixed_normal_batch("B", hyper.B, hyper.mu, z_mean)
            out += self._lkj_lognormal_batch(extras)
        elif model_id == "M4":
            Theta = z_mean.reshape(T, self.L, p)
            diff = Theta - hyper.M[None, :, :]
            K0 = np.asarray(hyper.K0, dtype=float)
            mid = np.einsum("l,tlj->tlj", K0, diff)
            quad = np.einsum("tli,tij,tlj->t", diff, inv_W, mid)
            logdet_k0 = float(np.sum(np.log(K0)))
            out += -0.5 * (self.L * p * LOG_2PI - p * logdet_k0
                           + self.L * logdet_w + quad)
            out += self._iw_batch(inv_W, logdet_w)
        elif model_id == "M5":
            Theta = z_mean.reshape(T, self.L, p)
            for ell in range(self.L):
                out += self._fixed_normal_batch(
                    f"B{ell}", hyper.B_ell[ell], hyper.M[ell], Theta[:, ell, :]
                )
            out += self._iw_batch(inv_W, logdet_w)
        else:  # M6
            Theta = z_mean.reshape(T, self.L, p)
            for ell in range(self.L):
                out += self._fixed_normal_batch(
                    f"B{ell}", hyper.B_ell[ell], hyper.M[ell], Theta[:, ell, :]
                )
            out += self._lkj_lognormal_batch(extras)
        return out

    def _fixed_normal_batch(self, key: str, cov: np.ndarray, mean: np.ndarray,
                            x: np.ndarray) -> np.ndarray:
        if key not in self._prior_chols:
            self._prior_chols[key] = _chol_or_raise(cov, key)
        Lc = self._prior_chols[key]
        diff = x - mean[None, :]
        sol = np.linalg.solve(Lc[None, :, :], diff[:, :, None])[:, :, 0]
        quad = np.sum(sol ** 2, axis=1)
        logdet = 2.0 * np.sum(np.log(np.diag(Lc)))
        return -0.5 * (self.p * LOG_2PI + logdet + quad)

    def _iw_batch(self, inv_W: np.ndarray, logdet_w: np.ndarray) -> np.ndarray:
        hyper = self.hyper
        p = self.p
        nu = hyper.nu
        U = hyper.U
        tr = np.einsum("tij,ji->t", inv_W, U)
        logdet_u = _logdet_pd(U, "U")
        const = (0.5 * nu * logdet_u - 0.5 * nu * p * np.log(2.0)
                 - multigammaln(0.5 * nu, p))
        return const - 0.5 * (nu + p + 1) * logdet_w - 0.5 * tr

    def _lkj_lognormal_batch(self, extras: dict) -> np.ndarray:
        hyper = self.hyper
        log_d = extras["log_d"]
        ln = (-log_d - np.log(hyper.sigma) - 0.5 * LOG_2PI
              - 0.5 * ((log_d - hyper.upsilon) / hyper.sigma) ** 2)
        sign, logdet_r = np.linalg.slogdet(extras["R"])
        lkj = (hyper.eta - 1.0) * logdet_r - lkj_log_normalizer(self.p, hyper.eta)
        return np.sum(ln, axis=1) + lkj

    def log_likelihood_batch(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        z_mean, z_cov = self._split(Z)
        _, inv_W, logdet, _, _ = self._cov_from_z(z_cov)
        return self._loglik_from_cov(z_mean, inv_W, logdet)

    def log_jacobian_batch(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        _, z_cov = self._split(Z)
        _, _, _, jac, _ = self._cov_from_z(z_cov)
        return jac

    def log_unnorm_posterior(self, Z: np.ndarray) -> np.ndarray:
        """log likelihood + log prior + log |Jacobian| on unconstrained draws.

        Rows whose reconstructed covariance degenerates numerically get -inf
        rather than raising, so estimator callers can down-weight them.
        """
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        z_mean, z_cov = self._split(Z)
        with np.errstate(all="ignore"):
            W, inv_W, logdet, jac, extras = self._cov_from_z(z_cov)
            loglik = self._loglik_from_cov(z_mean, inv_W, logdet)
            logpri = self._logprior_from_cov(z_mean, W, inv_W, logdet, extras)
        out = loglik + logpri + jac
        return np.where(np.isfinite(out), out, -np.inf)

    def params_from_z(self, z: np.ndarray) -> ModelParams:
        params, _ = from_unconstrained(self.model_id, z, self.p, self.L)
        return params

    def z_from_params(self, params: ModelParams) -> UnconstrainedVector:
        return to_unconstrained(self.model_id, params)
