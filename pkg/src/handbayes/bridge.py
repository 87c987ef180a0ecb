"""Iterative optimal bridge-sampling estimator of log marginal likelihoods.

Posterior draws are split per chain: the first half fits a moment-matched
Gaussian proposal, the second half feeds the estimator. With S = f pi / g
(unnormalized posterior over proposal density) evaluated at T1 posterior
draws and T2 proposal draws, the optimal-bridge fixed point is iterated as

    m_(z+1) = [ mean_t2  S*_t / (s1 S*_t + s2 m_z) ]
              / [ mean_t1 1 / (s1 S~_t + s2 m_z) ],       s_i = T_i/(T1+T2),

entirely in log space, starting from the simple importance-sampling
estimate. The Monte Carlo error of a pipeline is the standard deviation of
the estimate over independent repeated runs.

An optional warp symmetrizes the target about the proposal mean by
replacing f(x) with the mixture (f(x) + f(2 mu - x)) / 2, whose normalizing
constant is unchanged; posterior draws get matching random reflections.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import BadValue, EstimatorDegenerate, NeedMoreDraws
from .sampler import PosteriorDraws


@dataclass(frozen=True)
class Proposal:
    """Gaussian proposal: mean, covariance Cholesky factor, warp flag."""

    mean: np.ndarray
    chol: np.ndarray
    warp: bool = False

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean[None, :] + z @ self.chol.T

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        diff = x - self.mean[None, :]
        sol = np.linalg.solve(self.chol[None, :, :], diff[:, :, None])[:, :, 0]
        quad = np.sum(sol ** 2, axis=1)
        logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        return -0.5 * (self.dim * np.log(2 * np.pi) + logdet + quad)


@dataclass(frozen=True)
class BridgeResult:
    log_ml: float
    iterations: int
    converged: bool
    relative_change: float
    t1: int
    t2: int

    def to_dict(self) -> dict:
        return {
            "log_ml": self.log_ml,
            "iterations": self.iterations,
            "converged": self.converged,
            "relative_change": self.relative_change,
            "t1": self.t1,
            "t2": self.t2,
        }

    def to_json(self) -> str:
        import json

        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class RepeatedBridge:
    log_ml: float             # mean over successful runs
    mce: float                # standard deviation over successful runs
    results: tuple[BridgeResult, ...]
    n_failed: int


def split_halves(draws: PosteriorDraws) -> tuple[np.ndarray, np.ndarray]:
    """Per-chain first/second halves, pooled across chains."""
    chains = draws.by_chain()
    half = draws.t_per_chain // 2
    first = chains[:, :half].reshape(-1, draws.dim)
    second = chains[:, half:].reshape(-1, draws.dim)
    return first, second


def fit_proposal(draws_first_half: np.ndarray | PosteriorDraws,
                 ridge: float = 1e-8, warp: bool = False) -> Proposal:
    """Moment-matched Gaussian proposal from the first half of the draws."""
    if isinstance(draws_first_half, PosteriorDraws):
        X = draws_first_half.draws
    else:
        X = np.atleast_2d(np.asarray(draws_first_half, dtype=float))
    n, d = X.shape
    if n < d + 2:
        raise NeedMoreDraws(f"need at least {d + 2} draws to fit a {d}-dim proposal")
    mean = X.mean(axis=0)
    cov = np.cov(X.T, ddof=1).reshape(d, d)
    cov = cov + ridge * np.eye(d)
    scale = max(np.max(np.diag(cov)), ridge)
    chol = None
    bump = ridge
    while chol is None:
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            bump *= 10
            cov = cov + bump * scale * np.eye(d)
    return Proposal(mean=mean, chol=chol, warp=warp)


def _warped_callback(log_unnorm_post: Callable, mean: np.ndarray) -> Callable:
    def wrapped(x: np.ndarray) -> np.ndarray:
        a = log_unnorm_post(x)
        b = log_unnorm_post(2.0 * mean[None, :] - x)
        return np.logaddexp(a, b) - np.log(2.0)

    return wrapped


def bridge_estimate(log_unnorm_post: Callable[[np.ndarray], np.ndarray],
                    proposal: Proposal,
                    draws_second_half: np.ndarray | PosteriorDraws,
                    t2: int | None = None, tol: float = 1e-10,
                    max_iter: int = 1000, seed: int = 0) -> BridgeResult:
    """One bridge-sampling estimate of the log marginal likelihood.

    `log_unnorm_post` maps a (T, d) batch of unconstrained coordinates to a
    (T,) vector of log likelihood + log prior + log Jacobian values.
    Non-finite values at proposal samples contribute zero ratios; if every
    proposal sample is non-finite the estimator is degenerate.
    """
    if tol <= 0:
        raise BadValue("tol must be positive")
    if isinstance(draws_second_half, PosteriorDraws):
        Z1 = draws_second_half.draws
    else:
        Z1 = np.atleast_2d(np.asarray(draws_second_half, dtype=float))
    t1 = Z1.shape[0]
    t2 = int(t2) if t2 is not None else t1
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 7)))
    Z2 = proposal.sample(t2, rng)

    target = log_unnorm_post
    if proposal.warp:
        target = _warped_callback(log_unnorm_post, proposal.mean)
        signs = rng.integers(0, 2, size=t1) * 2 - 1
        Z1 = proposal.mean[None, :] + signs[:, None] * (Z1 - proposal.mean[None, :])

    with np.errstate(all="ignore"):
        l1 = np.asarray(target(Z1), dtype=float) - proposal.logpdf(Z1)
        l2 = np.asarray(target(Z2), dtype=float) - proposal.logpdf(Z2)
    l1 = np.where(np.isfinite(l1), l1, -np.inf)
    l2 = np.where(np.isfinite(l2), l2, -np.inf)
    if not np.any(np.isfinite(l2)):
        raise EstimatorDegenerate("posterior is non-finite at every proposal sample")
    if not np.any(np.isfinite(l1)):
        raise EstimatorDegenerate("posterior is non-finite at every posterior draw")

    # centre the ratios for conditioning; the shift cancels in the result
    lstar = float(np.median(l1[np.isfinite(l1)]))
    l1c = l1 - lstar
    l2c = l2 - lstar
    log_s1 = np.log(t1 / (t1 + t2))
    log_s2 = np.log(t2 / (t1 + t2))

    # initial guess: importance sampling from the proposal
    log_r = logsumexp(l2c) - np.log(t2)
    converged = False
    change = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        denom2 = np.logaddexp(log_s1 + l2c, log_s2 + log_r)
        log_num = logsumexp(l2c - denom2) - np.log(t2)
        denom1 = np.logaddexp(log_s1 + l1c, log_s2 + log_r)
        log_den = logsumexp(-denom1) - np.log(t1)
        log_r_new = log_num - log_den
        change = abs(log_r_new - log_r)
        log_r = log_r_new
        if change < tol:
            converged = True
            break
    return BridgeResult(
        log_ml=float(log_r + lstar),
        iterations=it,
        converged=converged,
        relative_change=float(change),
        t1=t1,
        t2=t2,
    )


def repeated_bridge(run: Callable[[int], BridgeResult], runs: int = 10,
                    seed: int = 0) -> RepeatedBridge:
    """Repeat independent sampler + bridge pipelines and pool them.

    `run` maps a derived seed to a BridgeResult. Degenerate runs are
    excluded from the mean/MCE and counted in `n_failed`.
    """
    if runs < 2:
        raise BadValue("repeated_bridge needs runs >= 2")
    seeds = [int(s) for s in
             np.random.SeedSequence((int(seed), 11)).generate_state(runs)]
    results = []
    n_failed = 0
    for run_seed in seeds:
        try:
            results.append(run(run_seed))
        except EstimatorDegenerate:
            n_failed += 1
    if len(results) < 2:
        raise EstimatorDegenerate(
            f"only {len(results)} of {runs} bridge runs succeeded"
        )
    values = np.array([r.log_ml for r in results])
    return RepeatedBridge(
        log_ml=float(values.mean()),
        mce=float(values.std(ddof=1)),
        results=tuple(results),
        n_failed=n_failed,
    )
