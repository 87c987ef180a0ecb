"""Command-line front end.

Subcommands: synth, elicit, contour, evidence, compare-models, study, sweep,
mahalanobis. Every run resolves its settings from (defaults <- config file
<- command-line flags), writes the resolved configuration next to its
outputs so the run can be reproduced, and keeps all randomness under the
--seed flag. Report paths write matplotlib figures alongside the delimited
output unless --no-figures is given.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import contour as contour_mod
from . import elicit as elicit_mod
from . import evidence as evidence_mod
from . import experiments as experiments_mod
from . import synth as synth_mod
from .dataset import Dataset, background_excluding, parse_dataset
from .errors import DataError, HandBayesError, NumericalError, UsageError
from .evidence import EvidenceSettings
from .models import MODEL_IDS
from .sampler import SamplerSettings


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_dataset(path: str) -> Dataset:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return parse_dataset(text)


def _parse_models(spec: str) -> tuple[str, ...]:
    models = tuple(m.strip() for m in spec.split(",") if m.strip())
    for m in models:
        if m not in MODEL_IDS:
            raise UsageError(f"unknown model id {m!r} (valid: {', '.join(MODEL_IDS)})")
    if not models:
        raise UsageError("no model ids given")
    return models


def _parse_pairs(spec: str):
    if spec == "auto":
        return None
    pairs = []
    for token in spec.split(","):
        try:
            a, b = token.split(":")
            pairs.append((int(a), int(b)))
        except ValueError:
            raise UsageError(f"bad pair {token!r}; expected writerA:writerB") from None
    return tuple(pairs)


def _load_config(path: str) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(kind, value, key: str):
    if isinstance(value, str):
        if kind is bool:
            return value.lower() in ("1", "true", "yes", "on")
        try:
            return kind(value)
        except ValueError:
            raise UsageError(f"bad value {value!r} for {key}") from None
    return value


def _resolve(options: dict, config_path: str | None, cli_values: dict) -> dict:
    """defaults <- config file <- explicit flags; unknown keys rejected."""
    resolved = {k: v[1] for k, v in options.items()}
    if config_path:
        raw = _load_config(config_path)
        unknown = set(raw) - set(options)
        if unknown:
            raise UsageError(f"unknown config key(s): {sorted(unknown)}")
        for key, text in raw.items():
            resolved[key] = _coerce(options[key][0], text, key)
    unknown = set(cli_values) - set(options)
    if unknown:
        raise UsageError(f"unknown option(s): {sorted('--' + u.replace('_', '-') for u in unknown)}")
    for key, value in cli_values.items():
        resolved[key] = _coerce(options[key][0], value, key)
    return resolved


def _write_resolved(resolved: dict, out_path: Path, is_dir: bool) -> None:
    lines = [f"{k} = {v}" for k, v in sorted(resolved.items())]
    text = "\n".join(lines) + "\n"
    if is_dir:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "resolved.cfg").write_text(text)
    else:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.with_suffix(out_path.suffix + ".resolved.cfg").write_text(text)


def _evidence_settings(r: dict) -> EvidenceSettings:
    sampler = SamplerSettings(
        iterations=r.get("iterations", 2000),
        burn_in=r.get("burn_in", 1000),
        chains=r.get("chains", 1),
    )
    return EvidenceSettings(
        sampler=sampler,
        runs=r.get("runs", 10),
        t2=r.get("t2") or None,
        tol=r.get("tol", 1e-10),
        warp=r.get("warp", False),
        nu=r.get("nu") or None,
        eta=r.get("eta", 1.0),
        use_sd_sigma=r.get("use_sd_sigma", False),
        seed=r.get("seed", 0),
    )


_COMMON_EVIDENCE_OPTIONS = {
    "seed": (int, 0, "random seed controlling every stochastic step"),
    "iterations": (int, 2000, "posterior draws kept per chain"),
    "burn_in": (int, 1000, "burn-in iterations discarded per chain"),
    "chains": (int, 1, "MCMC chains per run"),
    "runs": (int, 10, "independent sampler+bridge repetitions (MCE)"),
    "t2": (int, 0, "proposal draws for the bridge (0: match posterior half)"),
    "tol": (float, 1e-10, "bridge fixed-point tolerance on |dlog m|"),
    "warp": (bool, False, "mean-reflection warp of the bridge target"),
    "nu": (float, 0, "Inverse-Wishart dof (0: p + 2)"),
    "eta": (float, 1.0, "LKJ shape"),
    "use_sd_sigma": (bool, False, "LogNormal scale from SD of log variances"),
}


# -- subcommand implementations --------------------------------------------------


def _cmd_synth(ns, config) -> int:
    options = {
        "seed": (int, 0, "generator seed"),
        "out": (str, "population.csv", "output CSV path"),
        "truth": (str, "", "optional truth JSON path"),
        "writers": (int, 13, "number of writers"),
        "reps": (int, 30, "repetitions per writer-character"),
        "sensitivity": (bool, False, "use the prior-sensitivity population"),
    }
    r = _resolve(options, config, ns)
    if r["sensitivity"]:
        cfg = synth_mod.sensitivity_population_config(seed=r["seed"])
        cfg.m = r["writers"]
        cfg.reps = r["reps"]
    else:
        cfg = synth_mod.PopulationConfig(m=r["writers"], reps=r["reps"],
                                         seed=r["seed"])
    data, truth = synth_mod.generate_population(cfg)
    out = Path(r["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    if r["sensitivity"]:
        # reduced-dimension populations fall outside the CSV schema
        raise UsageError("the sensitivity population has p != 9; it is only "
                         "reachable through the library API")
    out.write_text(data.to_csv())
    if r["truth"]:
        Path(r["truth"]).write_text(json.dumps(truth.to_dict(), indent=2))
    _write_resolved(r, out, is_dir=False)
    print(f"wrote {out} ({data.n} records, {len(data.writer_ids)} writers)")
    return 0


def _cmd_elicit(ns, config) -> int:
    options = {
        "model": (str, "M4", "model id M1..M6"),
        "background": (str, "", "background CSV path"),
        "out": (str, "prior.json", "output JSON path"),
        "nu": (float, 0, "Inverse-Wishart dof (0: p + 2)"),
        "eta": (float, 1.0, "LKJ shape"),
        "use_sd_sigma": (bool, False, "LogNormal scale from SD of log variances"),
        "standardize": (bool, True, "standardize background by its own SDs"),
    }
    r = _resolve(options, config, ns)
    if r["model"] not in MODEL_IDS:
        raise UsageError(f"unknown model id {r['model']!r}")
    if not r["background"]:
        raise UsageError("--background is required")
    bg = _read_dataset(r["background"])
    if r["standardize"]:
        from .dataset import standardize

        bg = standardize(bg, bg)
    hyper = elicit_mod.elicit_priors(
        r["model"], bg, nu=r["nu"] or None, eta=r["eta"],
        use_sd_sigma=r["use_sd_sigma"],
    )
    out = Path(r["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(hyper.to_json())
    _write_resolved(r, out, is_dir=False)
    print(f"wrote {out}")
    return 0


def _cmd_contour(ns, config) -> int:
    options = {
        "coeffs": (str, "", "coefficients JSON ({'a0': ..., 'pairs': [[a,b],...]})"),
        "points": (int, 128, "render sample count"),
        "csv": (str, "", "output CSV path (phi,r)"),
        "svg": (str, "", "output SVG path (closed polyline)"),
        "png": (str, "", "output PNG figure path"),
        "out": (str, "contour", "stem used when csv/svg/png not given"),
    }
    r = _resolve(options, config, ns)
    if not r["coeffs"]:
        raise UsageError("--coeffs is required")
    try:
        payload = json.loads(Path(r["coeffs"]).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {r['coeffs']}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"bad coefficients JSON: {exc}") from None
    coeffs = contour_mod.coefficients_from_dict(payload)
    pc = contour_mod.render_contour(coeffs, r["points"])
    csv_path = Path(r["csv"] or f"{r['out']}.csv")
    svg_path = Path(r["svg"] or f"{r['out']}.svg")
    png_path = Path(r["png"] or f"{r['out']}.png")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(contour_mod.polar_to_csv(pc))
    svg_path.write_text(contour_mod.polar_to_svg(pc))
    from . import figures

    figures.contour_figure(pc, str(png_path))
    _write_resolved(r, csv_path, is_dir=False)
    print(f"wrote {csv_path}, {svg_path}, {png_path}")
    return 0


def _cmd_evidence(ns, config) -> int:
    options = dict(_COMMON_EVIDENCE_OPTIONS)
    options.update({
        "model": (str, "M4", "model id M1..M6"),
        "questioned": (str, "", "questioned material CSV"),
        "control": (str, "", "control material CSV"),
        "background": (str, "", "background CSV"),
        "out": (str, "evidence.json", "output JSON path"),
    })
    r = _resolve(options, config, ns)
    for key in ("questioned", "control", "background"):
        if not r[key]:
            raise UsageError(f"--{key} is required")
    if r["model"] not in MODEL_IDS:
        raise UsageError(f"unknown model id {r['model']!r}")
    y1 = _read_dataset(r["questioned"])
    y2 = _read_dataset(r["control"])
    bg = _read_dataset(r["background"])
    settings = _evidence_settings(r)
    result = evidence_mod.bayes_factor(r["model"], y1, y2, bg, settings)
    out = Path(r["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.to_dict(), indent=2))
    _write_resolved(r, out, is_dir=False)
    print(f"log BF = {result.log_bf:.4f} ({result.interpretation}); wrote {out}")
    return 0


def _cmd_compare_models(ns, config) -> int:
    options = dict(_COMMON_EVIDENCE_OPTIONS)
    options.update({
        "data": (str, "", "full population CSV"),
        "models": (str, "M4,M1", "comma-separated model ids"),
        "writer": (str, "all", "writer id or 'all'"),
        "outdir": (str, "compare", "output directory"),
    })
    r = _resolve(options, config, ns)
    if not r["data"]:
        raise UsageError("--data is required")
    data = _read_dataset(r["data"])
    models = _parse_models(r["models"])
    if len(models) < 2:
        raise UsageError("compare-models needs at least two model ids")
    writers = (data.writer_ids if r["writer"] == "all"
               else (int(r["writer"]),))
    settings = _evidence_settings(r)
    outdir = Path(r["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for w in writers:
        own = data.filter_writers([w])
        bg = background_excluding(data, [w])
        for i, ml in enumerate(models):
            for mx in models[i + 1:]:
                comp = evidence_mod.model_comparison_bf(
                    own, bg, ml, mx, replace(settings, seed=settings.seed + w)
                )
                rows.append({"writer": w, **comp.to_dict()})
                print(f"writer {w}: log BF[{ml},{mx}] = {comp.log_bf:.2f}",
                      file=sys.stderr)
    (outdir / "comparisons.json").write_text(json.dumps(rows, indent=2))
    header = list(rows[0].keys())
    lines = [",".join(header)]
    lines += [",".join(str(row[k]) for k in header) for row in rows]
    (outdir / "comparisons.csv").write_text("\n".join(lines) + "\n")
    _write_resolved(r, outdir, is_dir=True)
    print(f"wrote {outdir}/comparisons.json")
    return 0


def _case_logger(results) -> None:
    for case in results:
        status = "FAILED" if case.failed else f"logBF {case.log_bf:9.3f}"
        writers = "-".join(str(w) for w in case.writers)
        print(f"case {case.case_index:5d} {case.model_id:3s} {case.scope:8s} "
              f"writers {writers:9s} {status}", file=sys.stderr)


def _cmd_study(ns, config) -> int:
    options = dict(_COMMON_EVIDENCE_OPTIONS)
    options.update({
        "kind": (str, "", "same-writer | different-writer | subsample"),
        "data": (str, "", "population CSV"),
        "models": (str, "M1,M4", "comma-separated model ids"),
        "reps": (int, 100, "random splits per writer or pair"),
        "per_character": (bool, True, "per-character runs for Normal models"),
        "subsample_iterations": (int, 30, "background subsamples per case"),
        "subsample_fraction": (float, 0.5, "per-cell subsample fraction"),
        "pairs": (str, "auto", "writer pairs a:b,c:d or 'auto'"),
        "jobs": (int, 1, "worker processes"),
        "outdir": (str, "study", "output directory"),
        "figures": (bool, True, "write figures next to the CSV output"),
    })
    r = _resolve(options, config, ns)
    kind = r["kind"]
    if kind not in ("same-writer", "different-writer", "subsample"):
        raise UsageError("study kind must be same-writer | different-writer | subsample")
    if not r["data"]:
        raise UsageError("--data is required")
    data = _read_dataset(r["data"])
    cfg = experiments_mod.StudyConfig(
        models=_parse_models(r["models"]),
        repetitions=r["reps"],
        seed=r["seed"],
        evidence=_evidence_settings(r),
        per_character=r["per_character"],
        subsample_iterations=r["subsample_iterations"],
        subsample_fraction=r["subsample_fraction"],
        pairs=_parse_pairs(r["pairs"]),
        jobs=r["jobs"],
    )
    if kind == "same-writer":
        report = experiments_mod.run_same_writer_study(data, cfg, log=_case_logger)
    elif kind == "different-writer":
        report = experiments_mod.run_different_writer_study(data, cfg, log=_case_logger)
    else:
        report = experiments_mod.run_subsample_sensitivity(data, cfg)
    outdir = Path(r["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(report.to_json())
    (outdir / "cases.csv").write_text(report.cases_csv())
    (outdir / "summary.txt").write_text(report.summary_text())
    if r["figures"]:
        from . import figures

        if kind == "subsample":
            figures.subsample_boxplot(report, str(outdir / "logbf_boxplot.png"))
        else:
            figures.study_boxplot(report, str(outdir / "logbf_boxplot.png"))
    _write_resolved(r, outdir, is_dir=True)
    sys.stdout.write(report.summary_text())
    return 0


def _cmd_sweep(ns, config) -> int:
    options = dict(_COMMON_EVIDENCE_OPTIONS)
    options.update({
        "parameter": (str, "", "nu | eta"),
        "data": (str, "", "population CSV"),
        "models": (str, "", "model ids (default: M1,M4 for nu; M3 for eta)"),
        "pairs": (str, "auto", "writer pairs a:b,c:d or 'auto' (hardest)"),
        "subsamples": (int, 10, "random splits per pair"),
        "hard_pairs": (int, 4, "pair count when pairs=auto"),
        "jobs": (int, 1, "worker processes"),
        "outdir": (str, "sweep", "output directory"),
        "figures": (bool, True, "write figures next to the CSV output"),
    })
    r = _resolve(options, config, ns)
    parameter = r["parameter"]
    if parameter not in ("nu", "eta"):
        raise UsageError("sweep parameter must be nu | eta")
    if not r["data"]:
        raise UsageError("--data is required")
    data = _read_dataset(r["data"])
    models = _parse_models(r["models"]) if r["models"] else (
        ("M1", "M4") if parameter == "nu" else ("M3",)
    )
    cfg = experiments_mod.StudyConfig(
        models=models,
        seed=r["seed"],
        evidence=_evidence_settings(r),
        sweep_subsamples=r["subsamples"],
        pairs=_parse_pairs(r["pairs"]),
        hard_pairs=r["hard_pairs"],
        jobs=r["jobs"],
    )
    run = (experiments_mod.run_nu_sweep if parameter == "nu"
           else experiments_mod.run_eta_sweep)
    report = run(data, cfg, log=_case_logger)
    outdir = Path(r["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(report.to_json())
    (outdir / "cases.csv").write_text(report.cases_csv())
    (outdir / "summary.txt").write_text(report.summary_text())
    if r["figures"]:
        from . import figures

        figures.sweep_curve(report, str(outdir / "sweep_curve.png"))
    _write_resolved(r, outdir, is_dir=True)
    sys.stdout.write(report.summary_text())
    return 0


def _cmd_mahalanobis(ns, config) -> int:
    options = {
        "data": (str, "", "population CSV"),
        "outdir": (str, "mahalanobis", "output directory"),
        "figures": (bool, True, "write the heatmap figure"),
    }
    r = _resolve(options, config, ns)
    if not r["data"]:
        raise UsageError("--data is required")
    data = _read_dataset(r["data"])
    matrix, writers = experiments_mod.mahalanobis_matrix(data)
    outdir = Path(r["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    lines = ["writer," + ",".join(str(w) for w in writers)]
    for i, w in enumerate(writers):
        lines.append(f"{w}," + ",".join(repr(float(v)) for v in matrix[i]))
    (outdir / "distances.csv").write_text("\n".join(lines) + "\n")
    if r["figures"]:
        from . import figures

        figures.distance_heatmap(matrix, writers, str(outdir / "heatmap.png"))
    _write_resolved(r, outdir, is_dir=True)
    print(f"wrote {outdir}/distances.csv")
    return 0


_SUBCOMMANDS = {
    "synth": _cmd_synth,
    "elicit": _cmd_elicit,
    "contour": _cmd_contour,
    "evidence": _cmd_evidence,
    "compare-models": _cmd_compare_models,
    "study": _cmd_study,
    "sweep": _cmd_sweep,
    "mahalanobis": _cmd_mahalanobis,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv or argv[0] in ("-h", "--help"):
            print(__doc__.strip())
            print("\nsubcommands:", " | ".join(_SUBCOMMANDS))
            return 0 if argv else 1
        name = argv[0]
        if name not in _SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {name!r}")
        rest = argv[1:]
        # positional sugar: `contour render ...`, `study same-writer ...`,
        # `sweep nu ...`
        positional_key = {"contour": None, "study": "kind", "sweep": "parameter"}
        if name in positional_key and rest and not rest[0].startswith("-"):
            head = rest.pop(0)
            if name == "contour":
                if head != "render":
                    raise UsageError("contour supports the 'render' action")
            else:
                rest = [f"--{positional_key[name]}", head] + rest
        parser = _Parser(prog=f"handbayes {name}")
        parser.add_argument("--config", default=None)
        known, unknown = parser.parse_known_args(rest)
        # re-parse the remaining flags generically as key/value pairs
        ns: dict = {}
        i = 0
        while i < len(unknown):
            tok = unknown[i]
            if not tok.startswith("--"):
                raise UsageError(f"unexpected argument {tok!r}")
            key = tok[2:].replace("-", "_")
            if key.startswith("no_"):
                ns[key[3:]] = False
                i += 1
            elif i + 1 < len(unknown) and not unknown[i + 1].startswith("--"):
                ns[key] = unknown[i + 1]
                i += 2
            else:
                ns[key] = True
                i += 1
        return _dispatch(name, ns, known.config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except HandBayesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(name: str, ns: dict, config: str | None) -> int:
    return _SUBCOMMANDS[name](ns, config)


if __name__ == "__main__":
    sys.exit(main())
