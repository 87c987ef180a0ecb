"""Posterior samplers.

The hierarchical Normal-Inverse-Wishart models (M2, M5) are conditionally
conjugate, so their chains alternate exact full-conditional draws: the mean
block is Normal with precision B^{-1} + n W^{-1} (one block per character
for M5) and W | rest is Inverse-Wishart with the residual scatter added to
the scale. The LogNormal-LKJ models (M3, M6) keep the exact Normal mean
block and update the covariance coordinates (log D, unconstrained R) jointly
by adaptive random-walk Metropolis on the unconstrained scale; the proposal
covariance adapts during burn-in only and is frozen afterwards.

Under H1 one shared parameter set explains the pooled data; under H2 the
data is a pair of sources with independent parameter sets, sampled as two
independent sub-chains whose coordinates are concatenated.

Wishart draws use the Bartlett decomposition; Inverse-Wishart draws invert a
Wishart draw of the inverse scale. Chains own independent RNG streams
derived from (seed, chain index), so runs are reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.linalg.lapack import dtrtri

from .dataset import Dataset
from .errors import BadCovariance, BadModel, BadValue, NeedMoreChains
from .models import (
    MANOVA_MODELS,
    ModelContext,
    lkj_log_normalizer,
    manova_design_stats,
)
from .elicit import PriorHyper

LOG_2PI_S = float(np.log(2.0 * np.pi))


@dataclass
class SamplerSettings:
    iterations: int = 2000       # kept draws per chain, after burn-in
    burn_in: int = 1000
    chains: int = 1
    target_accept: float = 0.234
    adapt_window: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 100:
            raise BadValue("iterations must be >= 100")
        if self.burn_in < 0:
            raise BadValue("burn_in must be >= 0")
        if self.chains < 1:
            raise BadValue("chains must be >= 1")


@dataclass
class PosteriorDraws:
    """Posterior draws on the unconstrained scale, chains stacked row-wise."""

    draws: np.ndarray        # (chains * T, d)
    log_post: np.ndarray     # unnormalized log posterior per draw
    log_jac: np.ndarray      # log-Jacobian component per draw
    model_id: str
    hypothesis: str
    seed: int
    burn_in: int
    chains: int
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.draws.ndim != 2 or self.draws.shape[0] < 2:
            raise BadValue("need at least 2 draws")
        if not np.all(np.isfinite(self.draws)):
            raise BadValue("non-finite posterior draw")

    @property
    def t_per_chain(self) -> int:
        return self.draws.shape[0] // self.chains

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def by_chain(self) -> np.ndarray:
        return self.draws.reshape(self.chains, self.t_per_chain, self.dim)

    def to_csv(self) -> str:
        """One row per draw on the unconstrained scale, for external inspection."""
        header = (["chain", "iteration"]
                  + [f"z{k}" for k in range(self.dim)]
                  + ["log_post", "log_jac"])
        lines = [",".join(header)]
        t = self.t_per_chain
        for i in range(self.draws.shape[0]):
            row = [str(i // t), str(i % t)]
            row += [repr(float(v)) for v in self.draws[i]]
            row += [repr(float(self.log_post[i])), repr(float(self.log_jac[i]))]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(chain))))


def sample_wishart(rng: np.random.Generator, scale: np.ndarray, df: float) -> np.ndarray:
    """Wishart draw via the Bartlett decomposition."""
    p = scale.shape[0]
    L = np.linalg.cholesky(scale)
    A = np.zeros((p, p))
    for i in range(p):
        A[i, i] = np.sqrt(rng.chisquare(df - i))
    rows, cols = np.tril_indices(p, k=-1)
    A[rows, cols] = rng.standard_normal(len(rows))
    LA = L @ A
    return LA @ LA.T


def sample_invwishart(rng: np.random.Generator, U: np.ndarray, nu: float) -> np.ndarray:
    """Inverse-Wishart draw by inverting a Wishart draw of the inverse scale."""
    p = U.shape[0]
    if nu <= p - 1:
        raise BadCovariance(f"Inverse-Wishart needs nu > p - 1, got {nu}")
    X = sample_wishart(rng, np.linalg.inv(U), nu)
    return np.linalg.inv(X)


def _draw_normal_conditional(rng, prec: np.ndarray, lin: np.ndarray) -> np.ndarray:
    """Draw from N(prec^{-1} lin, prec^{-1}) via the Cholesky of prec."""
    L = np.linalg.cholesky(prec)
    inv_L, info = dtrtri(L, lower=1)
    if info != 0:
        inv_L = np.linalg.inv(L)
    mean = inv_L.T @ (inv_L @ lin)
    z = rng.standard_normal(len(lin))
    return mean + inv_L.T @ z


# -- data summaries shared by the kernels ----------------------------------------


class _GroupData:
    """Per-group counts, means and scatters; one group for the Normal
    models, one per character for MANOVA."""

    def __init__(self, model_id: str, hyper: PriorHyper, data: Dataset):
        self.is_manova = model_id in MANOVA_MODELS
        self.p = hyper.p
        if self.is_manova:
            self.L = len(hyper.characters)
            stats = data.character_stats() if data.n else {}
            self.counts = np.zeros(self.L)
            self.means = np.zeros((self.L, self.p))
            self.scatters = np.zeros((self.L, self.p, self.p))
            for ell, label in enumerate(hyper.characters):
                if label in stats:
                    n_g, mean_g, scatter_g = stats[label]
                    self.counts[ell] = n_g
                    self.means[ell] = mean_g
                    self.scatters[ell] = scatter_g
        else:
            self.L = 1
            if data.n:
                n_g, mean_g, scatter_g = data.pooled_stats()
                self.counts = np.array([float(n_g)])
                self.means = mean_g[None, :]
                self.scatters = scatter_g[None, :, :]
            else:
                self.counts = np.zeros(1)
                self.means = np.zeros((1, self.p))
                self.scatters = np.zeros((1, self.p, self.p))
        self.n = float(self.counts.sum())
        # cached prior precisions for the exact mean conditionals
        if getattr(hyper, "B", None) is not None:
            self.inv_B = np.linalg.inv(hyper.B)
            self.lin_B = self.inv_B @ hyper.mu
        if getattr(hyper, "B_ell", None) is not None:
            self.inv_B_ell = np.linalg.inv(hyper.B_ell)
            self.lin_B_ell = np.einsum("lij,lj->li", self.inv_B_ell, hyper.M)

    def residual_scatter(self, group_means: np.ndarray) -> np.ndarray:
        """sum over records of (y - mean)(y - mean)' given per-group means."""
        out = np.zeros((self.p, self.p))
        for ell in range(len(self.counts)):
            if self.counts[ell] == 0:
                continue
            d = self.means[ell] - group_means[ell]
            out += self.scatters[ell] + self.counts[ell] * np.outer(d, d)
        return out


def _theta_step_normal(rng, groups: _GroupData, hyper, inv_W) -> np.ndarray:
    """Exact Normal conditional for theta given W (M2/M3)."""
    prec = groups.inv_B + groups.counts[0] * inv_W
    lin = groups.lin_B + inv_W @ (groups.counts[0] * groups.means[0])
    return _draw_normal_conditional(rng, prec, lin)


def _theta_step_manova(rng, groups: _GroupData, hyper, inv_W,
                       Theta: np.ndarray) -> np.ndarray:
    """Blockwise exact Normal conditionals for the rows of Theta (M5/M6).

    Row 0 is the reference-character row entering every record's mean; row
    ell >= 1 enters only that character's records.
    """
    L, p = Theta.shape
    Theta = Theta.copy()
    # reference row: residuals against the character-specific additions
    extra = np.zeros((L, p))
    extra[1:] = Theta[1:]
    n_eff = groups.n
    resid_sum = np.zeros(p)
    for ell in range(L):
        if groups.counts[ell] == 0:
            continue
        resid_sum += groups.counts[ell] * (groups.means[ell] - extra[ell])
    prec = groups.inv_B_ell[0] + n_eff * inv_W
    lin = groups.lin_B_ell[0] + inv_W @ resid_sum
    Theta[0] = _draw_normal_conditional(rng, prec, lin)
    for ell in range(1, L):
        n_ell = groups.counts[ell]
        prec = groups.inv_B_ell[ell] + n_ell * inv_W
        resid = n_ell * (groups.means[ell] - Theta[0])
        lin = groups.lin_B_ell[ell] + inv_W @ resid
        Theta[ell] = _draw_normal_conditional(rng, prec, lin)
    return Theta


def _group_means_from(model_id, mean_state) -> np.ndarray:
    if model_id in MANOVA_MODELS:
        Theta = mean_state
        out = Theta[0][None, :] + np.vstack([np.zeros_like(Theta[0]), Theta[1:]])
        return out
    return mean_state[None, :]


# -- Gibbs for the conditionally conjugate models ----------------------------------


def gibbs_niw(model_id: str, hyper: PriorHyper, data, hypothesis: str = "H1",
              settings: SamplerSettings | None = None) -> PosteriorDraws:
    """Gibbs sampler for M2 / M5.

    Empty data is allowed and recovers the prior. `data` is a Dataset under
    H1 and a (questioned, control) pair under H2.
    """
    if model_id not in ("M2", "M5"):
        raise BadModel(f"gibbs_niw handles M2/M5, got {model_id}")
    settings = settings or SamplerSettings()
    if hypothesis == "H2":
        return _h2_compose(gibbs_niw, model_id, hyper, data, settings)
    if hypothesis != "H1":
        raise BadValue(f"hypothesis must be 'H1' or 'H2', got {hypothesis!r}")

    groups = _GroupData(model_id, hyper, data)
    ctx = ModelContext(model_id, hyper, data)
    p = hyper.p
    is_manova = model_id == "M5"
    L = groups.L

    all_z = []
    for chain in range(settings.chains):
        rng = _chain_rng(settings.seed, chain)
        W = hyper.U / (hyper.nu - p - 1)
        if is_manova:
            mean_state = hyper.M.copy()
        else:
            mean_state = hyper.mu.copy()
        kept_means = np.zeros((settings.iterations, L * p if is_manova else p))
        kept_W = np.zeros((settings.iterations, p, p))
        total = settings.burn_in + settings.iterations
        for it in range(total):
            inv_W = np.linalg.inv(W)
            if is_manova:
                mean_state = _theta_step_manova(rng, groups, hyper, inv_W, mean_state)
            else:
                mean_state = _theta_step_normal(rng, groups, hyper, inv_W)
            gm = _group_means_from(model_id, mean_state)
            scatter = groups.residual_scatter(gm)
            W = sample_invwishart(rng, hyper.U + scatter, hyper.nu + groups.n)
            if it >= settings.burn_in:
                k = it - settings.burn_in
                kept_means[k] = mean_state.ravel()
                kept_W[k] = W
        z = _pack_niw_draws(kept_means, kept_W, p)
        all_z.append(z)
    return _finalize_draws(model_id, ctx, all_z, hypothesis, settings)


def _pack_niw_draws(kept_means: np.ndarray, kept_W: np.ndarray, p: int) -> np.ndarray:
    T = kept_means.shape[0]
    Lw = np.linalg.cholesky(kept_W)
    rows, cols = np.tril_indices(p, k=-1)
    diag = np.log(Lw[:, np.arange(p), np.arange(p)])
    return np.hstack([kept_means, diag, Lw[:, rows, cols]])


def _finalize_draws(model_id, ctx, all_z, hypothesis, settings,
                    info: dict | None = None) -> PosteriorDraws:
    z = np.vstack(all_z)
    log_post = ctx.log_unnorm_posterior(z)
    log_jac = ctx.log_jacobian_batch(z)
    return PosteriorDraws(
        draws=z,
        log_post=log_post,
        log_jac=log_jac,
        model_id=model_id,
        hypothesis=hypothesis,
        seed=settings.seed,
        burn_in=settings.burn_in,
        chains=settings.chains,
        info=info or {},
    )


def _h2_compose(kernel, model_id, hyper, data, settings) -> PosteriorDraws:
    """Two independent per-source chains concatenated coordinate-wise."""
    try:
        y1, y2 = data
    except (TypeError, ValueError):
        raise BadValue("H2 sampling needs a (questioned, control) pair") from None
    d1 = kernel(model_id, hyper, y1, "H1",
                replace(settings, seed=settings.seed * 2 + 1))
    d2 = kernel(model_id, hyper, y2, "H1",
                replace(settings, seed=settings.seed * 2 + 2))
    info = {"source_1": d1.info, "source_2": d2.info}
    return PosteriorDraws(
        draws=np.hstack([d1.draws, d2.draws]),
        log_post=d1.log_post + d2.log_post,
        log_jac=d1.log_jac + d2.log_jac,
        model_id=model_id,
        hypothesis="H2",
        seed=settings.seed,
        burn_in=settings.burn_in,
        chains=settings.chains,
        info=info,
    )


# -- Metropolis-within-Gibbs for the LogNormal-LKJ models ---------------------------


def _proposal_hash(scale: float, chol: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.float64(scale).tobytes())
    h.update(np.ascontiguousarray(chol).tobytes())
    return h.hexdigest()


def mwg_lkj(model_id: str, hyper: PriorHyper, data, hypothesis: str = "H1",
            settings: SamplerSettings | None = None) -> PosteriorDraws:
    """Metropolis-within-Gibbs for M3 / M6.

    The mean block uses its exact Normal conditional given W = D R D. The
    covariance block (log D, unconstrained R) moves as one blocked adaptive
    random-walk Metropolis update with Jacobian-corrected target; the
    proposal covariance adapts toward the target acceptance rate during
    burn-in only and is frozen afterwards. Random-walk mixing degrades with
    dimension, so budget iterations accordingly (the covariance block has
    p (p + 1) / 2 coordinates).
    """
    if model_id not in ("M3", "M6"):
        raise BadModel(f"mwg_lkj handles M3/M6, got {model_id}")
    settings = settings or SamplerSettings()
    if hypothesis == "H2":
        return _h2_compose(mwg_lkj, model_id, hyper, data, settings)
    if hypothesis != "H1":
        raise BadValue(f"hypothesis must be 'H1' or 'H2', got {hypothesis!r}")

    groups = _GroupData(model_id, hyper, data)
    ctx = ModelContext(model_id, hyper, data)
    all_z = []
    accept_rates = []
    hashes_at_freeze = []
    hashes_final = []
    for chain in range(settings.chains):
        rng = _chain_rng(settings.seed, chain)
        kept, acc, h_freeze, h_final = _mwg_chain_rwm(
            model_id, hyper, groups, ctx, settings, rng
        )
        all_z.append(kept)
        accept_rates.append(acc)
        hashes_at_freeze.append(h_freeze)
        hashes_final.append(h_final)
    info = {
        "accept_rate": float(np.mean(accept_rates)),
        "proposal_hash_at_freeze": hashes_at_freeze,
        "proposal_hash_final": hashes_final,
    }
    return _finalize_draws(model_id, ctx, all_z, hypothesis, settings, info)


def _mwg_init(model_id, hyper, groups):
    p = hyper.p
    if groups.n >= 2:
        pooled_scatter = groups.residual_scatter(groups.means)
        d0 = np.sqrt(np.clip(np.diag(pooled_scatter) / max(groups.n - 1, 1),
                             1e-6, None))
    else:
        d0 = np.full(p, np.exp(hyper.upsilon))
    z_cov = np.concatenate([np.log(d0), np.zeros(p * (p - 1) // 2)])
    mean_state = hyper.M.copy() if model_id == "M6" else hyper.mu.copy()
    return mean_state, z_cov


class _LkjCovTarget:
    """Lean evaluator of loglik + covariance-prior + Jacobian for the
    random-walk block; mean-prior terms are omitted because they cancel in
    the Metropolis ratio at fixed mean state."""

    def __init__(self, hyper, groups):
        self.hyper = hyper
        self.groups = groups
        self.p = hyper.p
        p = self.p
        self.S_sum = groups.scatters.sum(axis=0)
        self.active = np.nonzero(groups.counts > 0)[0]
        self.counts = groups.counts[self.active]
        self.data_means = groups.means[self.active]
        self.n = groups.n
        self.rows, self.cols = np.tril_indices(p, k=-1)
        self.triu = np.triu_indices(p)
        self.diag_idx = np.diag_indices(p)
        self.cp_rows = np.arange(1, p)
        self.cp_cols = np.arange(p - 1)
        self.col_shift = np.maximum(self.cols - 1, 0)
        self.col_pos = self.cols > 0
        self.jac_coeff = 0.5 * (p - self.cols)
        self.lkj_const = lkj_log_normalizer(p, hyper.eta)
        self.const = -0.5 * self.n * p * LOG_2PI_S

    def chol_w(self, z_cov: np.ndarray):
        """(L_W, log d, log diag Lambda, y_flat) from covariance coordinates;
        chol(D R D) = D chol(R), so no matrix factorization is needed."""
        p = self.p
        log_d = np.clip(z_cov[:p], -150.0, 150.0)
        y_flat = np.clip(np.tanh(z_cov[p:]), -1 + 1e-15, 1 - 1e-15)
        y = np.zeros((p, p))
        y[self.rows, self.cols] = y_flat
        C = np.sqrt(1.0 - y * y)
        C[self.triu] = 1.0
        cp = np.cumprod(C, axis=1)
        Lam = np.zeros((p, p))
        Lam[self.rows, self.cols] = y_flat * np.where(
            self.col_pos, cp[self.rows, self.col_shift], 1.0
        )
        diag = np.empty(p)
        diag[0] = 1.0
        diag[1:] = cp[self.cp_rows, self.cp_cols]
        Lam[self.diag_idx] = diag
        d = np.exp(log_d)
        L_W = d[:, None] * Lam
        return L_W, log_d, np.log(diag), y_flat

    def inv_chol(self, L_W: np.ndarray) -> np.ndarray:
        inv_L, info = dtrtri(L_W, lower=1)
        if info != 0:
            inv_L = np.linalg.inv(L_W)
        return inv_L

    def __call__(self, model_means: np.ndarray, z_cov: np.ndarray) -> float:
        """model_means: per-active-group mean vectors, shape (G, p)."""
        hyper = self.hyper
        L_W, log_d, log_lam_diag, y_flat = self.chol_w(z_cov)
        logdet_w = 2.0 * (np.sum(log_d) + np.sum(log_lam_diag))
        inv_L = self.inv_chol(L_W)
        tr = np.sum((inv_L @ self.S_sum) * inv_L)
        diffs = self.data_means - model_means
        sol = inv_L @ diffs.T
        quad = float(np.sum(self.counts * np.sum(sol * sol, axis=0)))
        loglik = self.const - 0.5 * (self.n * logdet_w + tr + quad)
        ln_prior = np.sum(
            -log_d - np.log(hyper.sigma) - 0.5 * LOG_2PI_S
            - 0.5 * ((log_d - hyper.upsilon) / hyper.sigma) ** 2
        )
        lkj = 2.0 * (hyper.eta - 1.0) * np.sum(log_lam_diag) - self.lkj_const
        jac = float(np.sum(self.jac_coeff * np.log1p(-y_flat * y_flat))) + np.sum(log_d)
        out = loglik + ln_prior + lkj + jac
        return float(out) if np.isfinite(out) else -np.inf


def _mwg_chain_rwm(model_id, hyper, groups, ctx, settings, rng):
    p = hyper.p
    is_manova = model_id == "M6"
    q_cov = p + p * (p - 1) // 2
    n_mean = groups.L * p if is_manova else p
    mean_state, z_cov = _mwg_init(model_id, hyper, groups)
    target = _LkjCovTarget(hyper, groups)

    def model_means_of(state):
        gm = _group_means_from(model_id, state)
        return gm[target.active]

    # initial proposal scaled like the posterior: log-d curvature ~ 2n plus
    # the LogNormal prior, correlation coordinates ~ n
    sd0 = np.empty(q_cov)
    sd0[:p] = 1.0 / np.sqrt(2.0 * groups.n + 1.0 / hyper.sigma ** 2)
    sd0[p:] = 1.5 / np.sqrt(max(groups.n, 4.0))
    scale = 2.38 / np.sqrt(q_cov)
    prop_chol = np.diag(sd0)
    window_acc = 0
    history = []
    n_acc_post = 0
    h_freeze = None

    kept = np.zeros((settings.iterations, n_mean + q_cov))
    total = settings.burn_in + settings.iterations
    for it in range(total):
        # exact mean conditional given the current covariance
        L_W, *_ = target.chol_w(z_cov)
        inv_L = target.inv_chol(L_W)
        inv_W = inv_L.T @ inv_L
        if is_manova:
            mean_state = _theta_step_manova(rng, groups, hyper, inv_W, mean_state)
        else:
            mean_state = _theta_step_normal(rng, groups, hyper, inv_W)
        means_now = model_means_of(mean_state)
        current_target = target(means_now, z_cov)

        # blocked random-walk move on all covariance coordinates jointly
        step = scale * (prop_chol @ rng.standard_normal(q_cov))
        z_prop = z_cov + step
        prop_target = target(means_now, z_prop)
        if np.log(rng.uniform()) < prop_target - current_target:
            z_cov = z_prop
            window_acc += 1
            if it >= settings.burn_in:
                n_acc_post += 1

        if it < settings.burn_in:
            history.append(z_cov.copy())
            if (it + 1) % settings.adapt_window == 0:
                rate = window_acc / settings.adapt_window
                scale *= float(np.exp(0.66 * (rate - settings.target_accept)))
                window_acc = 0
                if len(history) >= max(2 * q_cov, 40):
                    emp = np.cov(np.array(history[-1500:]).T)
                    emp = emp + 1e-6 * np.eye(q_cov)
                    try:
                        prop_chol = np.linalg.cholesky(emp)
                    except np.linalg.LinAlgError:
                        pass
        elif it == settings.burn_in:
            h_freeze = _proposal_hash(scale, prop_chol)
        if it >= settings.burn_in:
            kept[it - settings.burn_in] = np.concatenate(
                [mean_state.ravel(), z_cov]
            )
    h_final = _proposal_hash(scale, prop_chol)
    if settings.burn_in == 0:
        h_freeze = h_final
    return kept, n_acc_post / settings.iterations, h_freeze, h_final


# -- exact draws for the conjugate models (bridge oracle support) --------------------


def exact_conjugate_draws(model_id: str, hyper: PriorHyper, data: Dataset,
                          n_draws: int, seed: int = 0,
                          hypothesis: str = "H1") -> PosteriorDraws:
    """I.i.d. posterior draws for M1 / M4, whose posteriors are conjugate."""
    if model_id not in ("M1", "M4"):
        raise BadModel(f"exact draws exist for M1/M4 only, got {model_id}")
    if n_draws < 2:
        raise BadValue("need at least 2 draws")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0)))
    p = hyper.p
    ctx = ModelContext(model_id, hyper, data)
    if model_id == "M1":
        n, ybar, scatter = data.pooled_stats()
        kn = hyper.k0 + n
        nun = hyper.nu + n
        mun = (hyper.k0 * hyper.mu + n * ybar) / kn
        d = ybar - hyper.mu
        Un = hyper.U + scatter + (hyper.k0 * n / kn) * np.outer(d, d)
        means = np.zeros((n_draws, p))
        Ws = np.zeros((n_draws, p, p))
        for t in range(n_draws):
            W = sample_invwishart(rng, Un, nun)
            Ws[t] = W
            means[t] = mun + np.linalg.cholesky(W / kn) @ rng.standard_normal(p)
        z = _pack_niw_draws(means, Ws, p)
    else:
        from .models import manova_design_stats

        L = len(hyper.characters)
        n, CtC, CtY, YtY = manova_design_stats(data, hyper.characters)
        K0 = np.diag(np.asarray(hyper.K0, dtype=float))
        Kn = CtC + K0
        Mn = np.linalg.solve(Kn, CtY + K0 @ hyper.M)
        Un = hyper.U + YtY + hyper.M.T @ K0 @ hyper.M - Mn.T @ Kn @ Mn
        Un = 0.5 * (Un + Un.T)
        nun = hyper.nu + n
        inv_Kn = np.linalg.inv(Kn)
        chol_row = np.linalg.cholesky(0.5 * (inv_Kn + inv_Kn.T))
        means = np.zeros((n_draws, L * p))
        Ws = np.zeros((n_draws, p, p))
        for t in range(n_draws):
            W = sample_invwishart(rng, Un, nun)
            Ws[t] = W
            Z = rng.standard_normal((L, p))
            Theta = Mn + chol_row @ Z @ np.linalg.cholesky(W).T
            means[t] = Theta.ravel()
        z = _pack_niw_draws(means, Ws, p)
    log_post = ctx.log_unnorm_posterior(z)
    log_jac = ctx.log_jacobian_batch(z)
    return PosteriorDraws(
        draws=z,
        log_post=log_post,
        log_jac=log_jac,
        model_id=model_id,
        hypothesis=hypothesis,
        seed=seed,
        burn_in=0,
        chains=1,
    )


# -- diagnostics --------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostics:
    ess: np.ndarray
    split_rhat: np.ndarray | None


def _ess_single(x: np.ndarray) -> float:
    """Effective sample size by the initial-positive-sequence estimator."""
    n = len(x)
    x = x - x.mean()
    var = np.sum(x ** 2) / n
    if var == 0:
        return float(n)
    # autocovariance via FFT
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conjugate(f), m)[:n].real / n
    rho = acov / acov[0]
    # Geyer initial positive sequence on pair sums
    total = 0.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        total += pair
        t += 2
    ess = n / (1.0 + 2.0 * total)
    return float(min(max(ess, 1.0), n))


def ess(draws: PosteriorDraws) -> np.ndarray:
    """Per-coordinate effective sample size, summed over chains."""
    chains = draws.by_chain()
    out = np.zeros(draws.dim)
    for c in range(draws.chains):
        for k in range(draws.dim):
            out[k] += _ess_single(chains[c, :, k])
    return out


def split_rhat(draws: PosteriorDraws) -> np.ndarray:
    """Split-Rhat per coordinate: each chain is halved, then the standard
    between/within variance ratio is computed over the half-chains."""
    if draws.chains < 2:
        raise NeedMoreChains("split-Rhat needs at least 2 chains")
    chains = draws.by_chain()
    half = draws.t_per_chain // 2
    segments = []
    for c in range(draws.chains):
        segments.append(chains[c, :half])
        segments.append(chains[c, half: 2 * half])
    seg = np.array(segments)                # (2C, half, d)
    means = seg.mean(axis=1)                # (2C, d)
    variances = seg.var(axis=1, ddof=1)     # (2C, d)
    W = variances.mean(axis=0)
    B = half * means.var(axis=0, ddof=1)
    var_hat = (half - 1) / half * W + B / half
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sqrt(var_hat / W)
    return np.where(W > 0, out, 1.0)


def diagnostics(draws: PosteriorDraws) -> Diagnostics:
    """(ESS per coordinate, split-Rhat per coordinate).

    Split-Rhat needs at least two chains; requesting it on a single chain
    raises NeedMoreChains (use `ess` directly for single-chain runs).
    """
    if draws.t_per_chain < 100:
        raise BadValue("diagnostics need at least 100 draws per chain")
    return Diagnostics(ess=ess(draws), split_rhat=split_rhat(draws))
