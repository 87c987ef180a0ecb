"""Bayes factors from marginal likelihoods.

The forensic Bayes factor compares H1 (questioned and control material share
one writer, hence one parameter set fitted on the pooled data) against H2
(independent writers, hence independent fits whose log marginals add):

    log BF = log m(y1, y2 | H1) - log m(y1 | H2) - log m(y2 | H2).

Priors are elicited from background data only; the background must not
contain any case writer. Marginals are exact for the conjugate models
(M1, M4) and estimated by repeated bridge sampling otherwise, with the
Monte Carlo error combined in quadrature across the three evaluations.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import bridge as bridge_mod
from . import models
from .dataset import Dataset, background_excluding, standardize
from .elicit import PriorHyper, elicit_priors
from .errors import BadModel, BadValue, LeakageError
from .sampler import SamplerSettings, gibbs_niw, mwg_lkj

# interpretation bands on |log BF| at ln 3, ln 10, ln 30, ln 100
_BAND_EDGES = (np.log(3.0), np.log(10.0), np.log(30.0), np.log(100.0))
_BAND_LABELS = ("Bare Mention", "Substantial", "Strong", "Very Strong", "Extreme")


def interpret_log_bf(log_bf: float) -> str:
    """Evidence-strength label for |log BF| (Kass-Raftery style bands)."""
    mag = abs(log_bf)
    for edge, label in zip(_BAND_EDGES, _BAND_LABELS):
        if mag < edge:
            return label
    return _BAND_LABELS[-1]


@dataclass
class EvidenceSettings:
    """Settings for one marginal-likelihood / Bayes-factor evaluation."""

    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    runs: int = 10
    t2: int | None = None
    tol: float = 1e-10
    max_iter: int = 1000
    warp: bool = False
    nu: float | None = None           # prior elicitation knobs
    nu_scale: float | None = None     # pin the U-elicitation dof (sweeps)
    eta: float = 1.0
    use_sd_sigma: bool = False        # LogNormal dispersion from SD of log variances
    sigma_min: float = 0.25
    k0_grid: Sequence[float] | None = None
    K0_grid: Sequence[float] | None = None
    seed: int = 0
    parallel: bool = False

    def fingerprint(self) -> str:
        payload = {
            "iterations": self.sampler.iterations,
            "burn_in": self.sampler.burn_in,
            "chains": self.sampler.chains,
            "runs": self.runs,
            "t2": self.t2,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "warp": self.warp,
            "nu": self.nu,
            "eta": self.eta,
            "seed": self.seed,
        }
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode())
        return digest.hexdigest()[:16]


@dataclass(frozen=True)
class EvidenceResult:
    """Log marginals under both propositions plus the log Bayes factor."""

    model_id: str
    log_m_h1: float
    log_m_y1_h2: float
    log_m_y2_h2: float
    mce_h1: float
    mce_y1: float
    mce_y2: float
    fingerprint: str = ""

    @property
    def log_bf(self) -> float:
        return self.log_m_h1 - self.log_m_y1_h2 - self.log_m_y2_h2

    @property
    def combined_mce(self) -> float:
        return float(np.sqrt(self.mce_h1 ** 2 + self.mce_y1 ** 2 + self.mce_y2 ** 2))

    @property
    def interpretation(self) -> str:
        return interpret_log_bf(self.log_bf)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "log_m_h1": self.log_m_h1,
            "log_m_y1_h2": self.log_m_y1_h2,
            "log_m_y2_h2": self.log_m_y2_h2,
            "log_bf": self.log_bf,
            "mce_h1": self.mce_h1,
            "mce_y1": self.mce_y1,
            "mce_y2": self.mce_y2,
            "combined_mce": self.combined_mce,
            "interpretation": self.interpretation,
            "fingerprint": self.fingerprint,
        }


@dataclass(frozen=True)
class ModelComparison:
    """Per-writer model-comparison Bayes factor log m(D|M_l) - log m(D|M_xi)."""

    model_l: str
    model_xi: str
    log_m_l: float
    log_m_xi: float
    mce_l: float
    mce_xi: float

    @property
    def log_bf(self) -> float:
        return self.log_m_l - self.log_m_xi

    @property
    def combined_mce(self) -> float:
        return float(np.hypot(self.mce_l, self.mce_xi))

    def to_dict(self) -> dict:
        return {
            "model_l": self.model_l,
            "model_xi": self.model_xi,
            "log_m_l": self.log_m_l,
            "log_m_xi": self.log_m_xi,
            "log_bf": self.log_bf,
            "combined_mce": self.combined_mce,
        }


def log_marginal(model_id: str, data: Dataset, hyper: PriorHyper,
                 settings: EvidenceSettings | None = None) -> tuple[float, float]:
    """(log marginal likelihood, Monte Carlo error) of `data` under one model.

    Conjugate models are exact (mce = 0); the hierarchical and LKJ models run
    independent sampler + bridge pipelines with derived seeds.
    """
    if model_id not in models.MODEL_IDS:
        raise BadModel(f"unknown model id {model_id!r}")
    settings = settings or EvidenceSettings()
    if data.n == 0:
        raise BadValue("cannot compute a marginal likelihood of empty data")
    if model_id == "M1":
        return models.closed_form_log_marginal_m1(data, hyper), 0.0
    if model_id == "M4":
        return models.closed_form_log_marginal_m4(data, hyper), 0.0

    kernel = mwg_lkj if model_id in models.LKJ_MODELS else gibbs_niw
    ctx = models.ModelContext(model_id, hyper, data)

    def one_run(run_seed: int) -> bridge_mod.BridgeResult:
        chain_settings = replace(settings.sampler, seed=run_seed)
        draws = kernel(model_id, hyper, data, "H1", chain_settings)
        first, second = bridge_mod.split_halves(draws)
        proposal = bridge_mod.fit_proposal(first, warp=settings.warp)
        return bridge_mod.bridge_estimate(
            ctx.log_unnorm_posterior, proposal, second,
            t2=settings.t2, tol=settings.tol, max_iter=settings.max_iter,
            seed=run_seed + 1,
        )

    rb = bridge_mod.repeated_bridge(one_run, runs=settings.runs,
                                    seed=settings.seed)
    return rb.log_ml, rb.mce


def bayes_factor(model_id: str, y1: Dataset, y2: Dataset, background: Dataset,
                 settings: EvidenceSettings | None = None) -> EvidenceResult:
    """Forensic Bayes factor of questioned material y1 against control y2.

    The numerator pools {y1, y2} under one parameter set; the denominator
    fits y1 and y2 independently and sums their log marginals. Feature
    scaling and all prior hyperparameters come from the background, which
    must exclude every case writer.
    """
    settings = settings or EvidenceSettings()
    if y1.n == 0 or y2.n == 0:
        raise BadValue("questioned and control material must be nonempty")
    case_writers = set(y1.writer_ids) | set(y2.writer_ids)
    overlap = case_writers & set(background.writer_ids)
    if overlap:
        raise LeakageError(f"background contains case writer(s) {sorted(overlap)}")

    bg = standardize(background, background)
    y1s = standardize(y1, background)
    y2s = standardize(y2, background)
    pooled = Dataset(
        np.concatenate([y1s.writers, y2s.writers]),
        np.concatenate([y1s.characters, y2s.characters]),
        np.concatenate([y1s.repetitions, y2s.repetitions]),
        np.vstack([y1s.X, y2s.X]),
        scaling=bg.scaling,
    )
    hyper = elicit_priors(model_id, bg, nu=settings.nu, eta=settings.eta,
                          k0_grid=settings.k0_grid, K0_grid=settings.K0_grid,
                          nu_scale=settings.nu_scale,
                          use_sd_sigma=settings.use_sd_sigma,
                          sigma_min=settings.sigma_min)

    jobs = [
        ("h1", pooled, replace(settings, seed=settings.seed * 3 + 1)),
        ("y1", y1s, replace(settings, seed=settings.seed * 3 + 2)),
        ("y2", y2s, replace(settings, seed=settings.seed * 3 + 3)),
    ]
    if settings.parallel:
        with ThreadPoolExecutor(max_workers=3) as pool:
            futs = {name: pool.submit(log_marginal, model_id, d, hyper, s)
                    for name, d, s in jobs}
            out = {name: fut.result() for name, fut in futs.items()}
    else:
        out = {name: log_marginal(model_id, d, hyper, s) for name, d, s in jobs}

    return EvidenceResult(
        model_id=model_id,
        log_m_h1=out["h1"][0],
        log_m_y1_h2=out["y1"][0],
        log_m_y2_h2=out["y2"][0],
        mce_h1=out["h1"][1],
        mce_y1=out["y1"][1],
        mce_y2=out["y2"][1],
        fingerprint=settings.fingerprint(),
    )


def model_comparison_bf(data_i: Dataset, background: Dataset, model_l: str,
                        model_xi: str,
                        settings: EvidenceSettings | None = None) -> ModelComparison:
    """Relative evidence of two models on one writer's data, with priors
    elicited from the remaining writers."""
    settings = settings or EvidenceSettings()
    overlap = set(data_i.writer_ids) & set(background.writer_ids)
    if overlap:
        raise LeakageError(f"background contains case writer(s) {sorted(overlap)}")
    bg = standardize(background, background)
    data_s = standardize(data_i, background)
    values = {}
    for which, model_id in (("l", model_l), ("xi", model_xi)):
        hyper = elicit_priors(model_id, bg, nu=settings.nu, eta=settings.eta,
                              k0_grid=settings.k0_grid, K0_grid=settings.K0_grid,
                              nu_scale=settings.nu_scale,
                              use_sd_sigma=settings.use_sd_sigma,
                              sigma_min=settings.sigma_min)
        run_settings = replace(settings, seed=settings.seed * 5 + (1 if which == "l" else 2))
        values[which] = log_marginal(model_id, data_s, hyper, run_settings)
    return ModelComparison(
        model_l=model_l,
        model_xi=model_xi,
        log_m_l=values["l"][0],
        log_m_xi=values["xi"][0],
        mce_l=values["l"][1],
        mce_xi=values["xi"][1],
    )
