"""Discrimination studies, sensitivity sweeps and descriptive distances.

Same-writer studies split one writer's records into questioned and control
material and count false negatives (log BF < 0); different-writer studies
pair two writers and count false positives (log BF > 0). Background data is
always every writer not involved in the case. Per-character runs restrict
the Normal models to a single character; MANOVA models always see all
characters jointly.

Sensitivity harnesses rerun cases while varying the prior machinery: random
background subsamples (50% with replacement per writer-character cell, so no
cell empties out), the Inverse-Wishart degrees of freedom, and the LKJ
shape. Case seeds derive from (config seed, case index), so a report is
fully reproducible; failed cases are recorded and excluded from rates
rather than silently dropped.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset, background_excluding, split_writer
from .errors import HandBayesError, BadValue
from .evidence import EvidenceResult, EvidenceSettings, bayes_factor
from .models import LKJ_MODELS, MANOVA_MODELS, MODEL_IDS, NORMAL_MODELS
from .sampler import SamplerSettings

NU_SWEEP_DEFAULT = (11, 20, 30, 40, 50)
ETA_SWEEP_DEFAULT = (1, 2, 5, 10, 20)


@dataclass
class StudyConfig:
    """Configuration shared by the study and sweep harnesses."""

    models: tuple[str, ...] = ("M1", "M4")
    repetitions: int = 100
    pi_range: tuple[float, float] = (0.35, 0.65)
    seed: int = 0
    evidence: EvidenceSettings = field(default_factory=EvidenceSettings)
    per_character: bool = True
    nu_values: tuple[float, ...] = NU_SWEEP_DEFAULT
    eta_values: tuple[float, ...] = ETA_SWEEP_DEFAULT
    subsample_fraction: float = 0.5
    subsample_iterations: int = 30
    subsample_replace: bool = True
    sweep_subsamples: int = 10
    pairs: tuple[tuple[int, int], ...] | None = None
    hard_pairs: int = 4
    jobs: int = 1

    def __post_init__(self):
        self.models = tuple(self.models)
        for m in self.models:
            if m not in MODEL_IDS:
                raise BadValue(f"unknown model id {m!r}")
        lo, hi = self.pi_range
        if not (0.0 < lo <= hi < 1.0):
            raise BadValue(f"invalid pi_split range {self.pi_range}")
        if self.repetitions < 1:
            raise BadValue("repetitions must be >= 1")


@dataclass
class CaseResult:
    """Outcome of one (case, model, scope) evaluation."""

    case_index: int
    kind: str                       # "same" or "different"
    writers: tuple[int, ...]
    pi_split: float
    seed: int
    model_id: str
    scope: str                      # "all" or a character label
    log_bf: float = math.nan
    log_m_h1: float = math.nan
    log_m_y1: float = math.nan
    log_m_y2: float = math.nan
    mce: float = math.nan
    failed: bool = False
    error: str | None = None

    def to_row(self) -> dict:
        return {
            "case_index": self.case_index,
            "kind": self.kind,
            "writers": "|".join(str(w) for w in self.writers),
            "pi_split": self.pi_split,
            "seed": self.seed,
            "model_id": self.model_id,
            "scope": self.scope,
            "log_bf": self.log_bf,
            "log_m_h1": self.log_m_h1,
            "log_m_y1": self.log_m_y1,
            "log_m_y2": self.log_m_y2,
            "mce": self.mce,
            "failed": int(self.failed),
            "error": self.error or "",
        }


@dataclass
class SubsampleCase:
    """Per-case spread of log BFs across background subsamples."""

    case_index: int
    kind: str
    writers: tuple[int, ...]
    model_id: str
    reference_log_bf: float
    log_bfs: tuple[float, ...]
    n_failed: int

    @property
    def log_bf_range(self) -> float:
        return max(self.log_bfs) - min(self.log_bfs) if self.log_bfs else math.nan

    @property
    def support_shift(self) -> bool:
        """True when the subsampled BFs disagree in sign."""
        if not self.log_bfs:
            return False
        return min(self.log_bfs) < 0.0 < max(self.log_bfs)

    def to_row(self) -> dict:
        return {
            "case_index": self.case_index,
            "kind": self.kind,
            "writers": "|".join(str(w) for w in self.writers),
            "model_id": self.model_id,
            "reference_log_bf": self.reference_log_bf,
            "min_log_bf": min(self.log_bfs) if self.log_bfs else math.nan,
            "max_log_bf": max(self.log_bfs) if self.log_bfs else math.nan,
            "log_bf_range": self.log_bf_range,
            "support_shift": int(self.support_shift),
            "n_failed": self.n_failed,
        }


@dataclass
class StudyReport:
    """Results container for studies, subsample sensitivity and sweeps."""

    kind: str
    seed: int
    cases: list[CaseResult] = field(default_factory=list)
    subsample: list[SubsampleCase] = field(default_factory=list)
    curves: dict = field(default_factory=dict)

    # -- rates ----------------------------------------------------------

    def _counts(self, sign: int) -> dict[tuple[str, str], tuple[int, int]]:
        out: dict[tuple[str, str], tuple[int, int]] = {}
        for c in self.cases:
            if c.failed:
                continue
            key = (c.model_id, c.scope)
            bad, total = out.get(key, (0, 0))
            if sign * c.log_bf < 0:
                bad += 1
            out[key] = (bad, total + 1)
        return out

    def false_negative_counts(self) -> dict[tuple[str, str], tuple[int, int]]:
        """Same-writer cases with log BF < 0, per (model, scope)."""
        return self._counts(+1)

    def false_positive_counts(self) -> dict[tuple[str, str], tuple[int, int]]:
        """Different-writer cases with log BF > 0, per (model, scope)."""
        return self._counts(-1)

    def rate(self, model_id: str, scope: str = "all") -> float:
        counts = (self.false_negative_counts() if self.kind == "same"
                  else self.false_positive_counts())
        bad, total = counts.get((model_id, scope), (0, 0))
        return bad / total if total else math.nan

    def n_failed(self) -> int:
        return sum(1 for c in self.cases if c.failed)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        counts_fn = (self.false_negative_counts() if self.kind == "same"
                     else self.false_positive_counts())
        label = "false_negatives" if self.kind == "same" else "false_positives"
        rates = {
            f"{model}/{scope}": {
                "count": bad,
                "total": total,
                "rate": bad / total if total else None,
            }
            for (model, scope), (bad, total) in sorted(counts_fn.items())
        }
        return {
            "kind": self.kind,
            "seed": self.seed,
            "n_cases": len(self.cases),
            "n_failed": self.n_failed(),
            label: rates,
            "subsample": [s.to_row() for s in self.subsample],
            "curves": self.curves,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def cases_csv(self) -> str:
        import csv as _csv

        rows = ([c.to_row() for c in self.cases]
                or [s.to_row() for s in self.subsample])
        if not rows:
            return ""
        buf = io.StringIO()
        writer = _csv.DictWriter(buf, fieldnames=list(rows[0].keys()),
                                 lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()

    def summary_text(self) -> str:
        lines = [f"{self.kind} study: {len(self.cases)} case evaluations, "
                 f"{self.n_failed()} failed"]
        counts = (self.false_negative_counts() if self.kind == "same"
                  else self.false_positive_counts())
        label = "FN" if self.kind == "same" else "FP"
        for (model, scope), (bad, total) in sorted(counts.items()):
            rate = 100.0 * bad / total if total else float("nan")
            lines.append(f"  {model:<3} {scope:<4} {label}={bad:5d}/{total:<6d} "
                         f"({rate:5.2f}%)")
        for model, curve in sorted(self.curves.items()):
            pts = " ".join(f"{v}:{m:.2f}" for v, m in sorted(curve.items()))
            lines.append(f"  sweep {model}: {pts}")
        return "\n".join(lines) + "\n"


# -- case machinery ------------------------------------------------------------------


def _case_seed(seed: int, case_index: int) -> int:
    return int(np.random.SeedSequence((int(seed), int(case_index))).generate_state(1)[0])


def _model_scopes(cfg: StudyConfig, data: Dataset) -> list[tuple[str, str]]:
    """(model, scope) grid: per-character scopes apply to Normal models only."""
    out = []
    for model in cfg.models:
        out.append((model, "all"))
        if cfg.per_character and model in NORMAL_MODELS:
            for label in data.character_labels:
                out.append((model, label))
    return out


def _evaluate_case(case: CaseResult, y1: Dataset, y2: Dataset, bg: Dataset,
                   settings: EvidenceSettings,
                   character: str | None = None) -> CaseResult:
    if character is not None:
        y1 = y1.filter_characters([character])
        y2 = y2.filter_characters([character])
        bg = bg.filter_characters([character])
    try:
        result = bayes_factor(case.model_id, y1, y2, bg, settings)
    except (HandBayesError, np.linalg.LinAlgError) as exc:
        case.failed = True
        case.error = f"{type(exc).__name__}: {exc}"
        return case
    case.log_bf = result.log_bf
    case.log_m_h1 = result.log_m_h1
    case.log_m_y1 = result.log_m_y1_h2
    case.log_m_y2 = result.log_m_y2_h2
    case.mce = result.combined_mce
    return case


def _case_descriptors(data: Dataset, cfg: StudyConfig, kind: str):
    """Expand the case grid: (case_index, writers, case_seed, pi_split)."""
    rng_lo, rng_hi = cfg.pi_range
    out = []
    if kind == "same":
        units: list[tuple[int, ...]] = [(w,) for w in data.writer_ids]
    else:
        writers = data.writer_ids
        units = [(a, b) for i, a in enumerate(writers) for b in writers[i + 1:]]
    idx = 0
    for unit in units:
        for _ in range(cfg.repetitions):
            seed = _case_seed(cfg.seed, idx)
            pi = float(np.random.default_rng(seed).uniform(rng_lo, rng_hi))
            out.append((idx, unit, seed, pi))
            idx += 1
    return out


def _build_case_data(data: Dataset, kind: str, writers: tuple[int, ...],
                     pi: float, seed: int):
    if kind == "same":
        (w,) = writers
        y1, y2 = split_writer(data, w, pi, seed)
    else:
        a, b = writers
        y1, _ = split_writer(data, a, pi, seed)
        _, y2 = split_writer(data, b, pi, seed + 1)
    bg = background_excluding(data, writers)
    return y1, y2, bg


_POOL_DATA: Dataset | None = None
_POOL_CFG: StudyConfig | None = None


def _pool_init(data: Dataset, cfg: StudyConfig) -> None:
    global _POOL_DATA, _POOL_CFG
    _POOL_DATA = data
    _POOL_CFG = cfg


def _pool_run_case(args) -> list[CaseResult]:
    kind, case_index, writers, seed, pi = args
    return _run_one_case(_POOL_DATA, _POOL_CFG, kind, case_index, writers, seed, pi)


def _run_one_case(data: Dataset, cfg: StudyConfig, kind: str, case_index: int,
                  writers: tuple[int, ...], seed: int, pi: float) -> list[CaseResult]:
    results = []
    try:
        y1, y2, bg = _build_case_data(data, kind, writers, pi, seed)
        built = True
    except (HandBayesError, np.linalg.LinAlgError) as exc:
        built = False
        err = f"{type(exc).__name__}: {exc}"
    for model, scope in _model_scopes(cfg, data):
        case = CaseResult(case_index=case_index, kind=kind, writers=writers,
                          pi_split=pi, seed=seed, model_id=model, scope=scope)
        if not built:
            case.failed = True
            case.error = err
        else:
            settings = replace(cfg.evidence, seed=seed)
            character = None if scope == "all" else scope
            case = _evaluate_case(case, y1, y2, bg, settings, character)
        results.append(case)
    return results


def _run_study(data: Dataset, cfg: StudyConfig, kind: str,
               log=None) -> StudyReport:
    descriptors = _case_descriptors(data, cfg, kind)
    jobs = [(kind, idx, writers, seed, pi)
            for idx, writers, seed, pi in descriptors]
    report = StudyReport(kind=kind, seed=cfg.seed)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_pool_init,
                                 initargs=(data, cfg)) as pool:
            for results in pool.map(_pool_run_case, jobs,
                                    chunksize=max(1, len(jobs) // (8 * cfg.jobs))):
                report.cases.extend(results)
                if log:
                    log(results)
    else:
        for job in jobs:
            results = _run_one_case(data, cfg, *job)
            report.cases.extend(results)
            if log:
                log(results)
    return report


def run_same_writer_study(data: Dataset, cfg: StudyConfig, log=None) -> StudyReport:
    """writers x repetitions same-writer cases; false negatives counted."""
    if len(data.writer_ids) < 3:
        raise BadValue("same-writer study needs >= 3 writers")
    return _run_study(data, cfg, "same", log=log)


def run_different_writer_study(data: Dataset, cfg: StudyConfig,
                               log=None) -> StudyReport:
    """All unordered pairs x repetitions; false positives counted."""
    if len(data.writer_ids) < 4:
        raise BadValue("different-writer study needs >= 4 writers")
    return _run_study(data, cfg, "different", log=log)


# -- background subsampling sensitivity ------------------------------------------------


def subsample_background(bg: Dataset, fraction: float, seed: int,
                         replace_draws: bool = True) -> Dataset:
    """Resample each writer-character cell to round(n * fraction) records.

    Sampling is per cell so every cell stays populated; drawn records are
    re-indexed to keep (writer, char, rep) triples unique.
    """
    if not 0.0 < fraction <= 1.0:
        raise BadValue(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 23)))
    rows = []
    writers = bg.writers
    chars = bg.characters
    for w in bg.writer_ids:
        for c in bg.character_labels:
            idx = np.nonzero((writers == w) & (chars == c))[0]
            if len(idx) == 0:
                continue
            k = max(1, int(math.floor(fraction * len(idx) + 0.5)))
            if replace_draws:
                chosen = rng.choice(idx, size=k, replace=True)
            else:
                k = min(k, len(idx))
                chosen = rng.choice(idx, size=k, replace=False)
            for new_rep, i in enumerate(sorted(chosen.tolist()), start=1):
                rows.append((int(w), str(c), new_rep, bg.X[i]))
    return Dataset.from_records(rows, scaling=bg.scaling)


def run_subsample_sensitivity(data: Dataset, cfg: StudyConfig,
                              log=None) -> StudyReport:
    """Prior-elicitation sensitivity: one fixed split per case, many
    background subsamples, support-shift bookkeeping per case and model."""
    report = StudyReport(kind="subsample", seed=cfg.seed)
    cases: list[tuple[str, tuple[int, ...]]] = []
    cases += [("same", (w,)) for w in data.writer_ids]
    pairs = cfg.pairs if cfg.pairs is not None else hard_pairs(data, cfg.hard_pairs)
    cases += [("different", tuple(pair)) for pair in pairs]

    for case_index, (kind, writers) in enumerate(cases):
        seed = _case_seed(cfg.seed, case_index)
        pi = float(np.random.default_rng(seed).uniform(*cfg.pi_range))
        y1, y2, bg = _build_case_data(data, kind, writers, pi, seed)
        for model in cfg.models:
            settings = replace(cfg.evidence, seed=seed)
            try:
                reference = bayes_factor(model, y1, y2, bg, settings).log_bf
            except (HandBayesError, np.linalg.LinAlgError):
                reference = math.nan
            values = []
            n_failed = 0
            for it in range(cfg.subsample_iterations):
                sub = subsample_background(
                    bg, cfg.subsample_fraction, seed=seed + 1000 * (it + 1),
                    replace_draws=cfg.subsample_replace,
                )
                try:
                    values.append(bayes_factor(model, y1, y2, sub, settings).log_bf)
                except (HandBayesError, np.linalg.LinAlgError):
                    n_failed += 1
            sc = SubsampleCase(
                case_index=case_index, kind=kind, writers=writers,
                model_id=model, reference_log_bf=reference,
                log_bfs=tuple(values), n_failed=n_failed,
            )
            report.subsample.append(sc)
            if log:
                log([sc])
    return report


# -- prior-parameter sweeps -------------------------------------------------------------


def _sweep_cases(data: Dataset, cfg: StudyConfig):
    pairs = cfg.pairs if cfg.pairs is not None else hard_pairs(data, cfg.hard_pairs)
    out = []
    idx = 0
    for pair in pairs:
        for _ in range(cfg.sweep_subsamples):
            seed = _case_seed(cfg.seed, idx)
            pi = float(np.random.default_rng(seed).uniform(*cfg.pi_range))
            out.append((idx, tuple(pair), seed, pi))
            idx += 1
    return out


def _run_sweep(data: Dataset, cfg: StudyConfig, parameter: str,
               values: Sequence[float], models_allowed: frozenset[str],
               log=None) -> StudyReport:
    models_run = [m for m in cfg.models if m in models_allowed]
    if not models_run:
        raise BadValue(
            f"no configured model supports a {parameter} sweep "
            f"(allowed: {sorted(models_allowed)})"
        )
    report = StudyReport(kind=f"sweep-{parameter}", seed=cfg.seed)
    cases = _sweep_cases(data, cfg)
    # vary only the swept parameter: the Inverse-Wishart scale stays elicited
    # at the baseline dof p + 2 throughout a nu sweep
    extra = {"nu_scale": float(data.p + 2)} if parameter == "nu" else {}
    jobs = [(parameter, float(value), extra, idx, writers, seed, pi, models_run)
            for value in values for idx, writers, seed, pi in cases]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_pool_init,
                                 initargs=(data, cfg)) as pool:
            for results in pool.map(_pool_run_sweep_case, jobs, chunksize=2):
                report.cases.extend(results)
                if log:
                    log(results)
    else:
        for job in jobs:
            results = _run_sweep_case(data, cfg, *job)
            report.cases.extend(results)
            if log:
                log(results)
    curves: dict[str, dict[float, float]] = {m: {} for m in models_run}
    for value in values:
        scope = f"{parameter}={value:g}"
        for model in models_run:
            vals = [c.log_bf for c in report.cases
                    if c.model_id == model and c.scope == scope and not c.failed]
            if vals:
                curves[model][float(value)] = float(np.mean(vals))
    report.curves = curves
    report.curves["slopes"] = {
        model: _slope(curve) for model, curve in curves.items() if len(curve) >= 2
    }
    return report


def _run_sweep_case(data, cfg, parameter, value, extra, idx, writers, seed, pi,
                    models_run) -> list[CaseResult]:
    scope = f"{parameter}={value:g}"
    y1, y2, bg = _build_case_data(data, "different", writers, pi, seed)
    out = []
    for model in models_run:
        settings = replace(cfg.evidence, seed=seed,
                           **{parameter: value}, **extra)
        case = CaseResult(
            case_index=idx, kind="different", writers=writers,
            pi_split=pi, seed=seed, model_id=model, scope=scope,
        )
        out.append(_evaluate_case(case, y1, y2, bg, settings))
    return out


def _pool_run_sweep_case(args) -> list[CaseResult]:
    return _run_sweep_case(_POOL_DATA, _POOL_CFG, *args)


def _slope(curve: dict[float, float]) -> float:
    xs = np.array(sorted(curve))
    ys = np.array([curve[x] for x in xs])
    A = np.vstack([xs, np.ones_like(xs)]).T
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    return float(coef[0])


def run_nu_sweep(data: Dataset, cfg: StudyConfig, log=None) -> StudyReport:
    """Mean different-writer log BF per Inverse-Wishart degrees of freedom."""
    return _run_sweep(data, cfg, "nu", cfg.nu_values,
                      frozenset({"M1", "M2", "M4", "M5"}), log=log)


def run_eta_sweep(data: Dataset, cfg: StudyConfig, log=None) -> StudyReport:
    """Mean different-writer log BF per LKJ shape value."""
    return _run_sweep(data, cfg, "eta", cfg.eta_values, LKJ_MODELS, log=log)


# -- Mahalanobis distance matrix -----------------------------------------------------


def mahalanobis_matrix(data: Dataset) -> tuple[np.ndarray, tuple[int, ...]]:
    """Symmetrized square-root Mahalanobis distances between writers.

    Entry (i, j) averages sqrt(mean squared Mahalanobis distance of i's
    observations to j's mean under j's covariance) with the transposed
    direction; the diagonal is each writer's within-writer value. Singular
    writer covariances get a small ridge.
    """
    writers = data.writer_ids
    m = len(writers)
    means = []
    inv_covs = []
    for w in writers:
        X = data.filter_writers([w]).X
        mu = X.mean(axis=0)
        if X.shape[0] > 1:
            cov = np.cov(X.T, ddof=1).reshape(data.p, data.p)
        else:
            cov = np.eye(data.p)
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            cov = cov + 1e-6 * max(np.trace(cov) / data.p, 1e-6) * np.eye(data.p)
        means.append(mu)
        inv_covs.append(np.linalg.inv(cov))
    directed = np.zeros((m, m))
    for i, wi in enumerate(writers):
        Xi = data.filter_writers([wi]).X
        for j in range(m):
            diff = Xi - means[j]
            quad = np.einsum("ni,ij,nj->n", diff, inv_covs[j], diff)
            directed[i, j] = np.sqrt(np.mean(quad))
    out = 0.5 * (directed + directed.T)
    return out, writers


def hard_pairs(data: Dataset, k: int) -> tuple[tuple[int, int], ...]:
    """The k writer pairs with the smallest symmetrized distances."""
    dist, writers = mahalanobis_matrix(data)
    m = len(writers)
    pairs = [(dist[i, j], (writers[i], writers[j]))
             for i in range(m) for j in range(i + 1, m)]
    pairs.sort(key=lambda t: t[0])
    return tuple(pair for _, pair in pairs[:k])
