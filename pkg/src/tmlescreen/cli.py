"""Command-line driver.

Subcommands: ``analyze`` (data files -> ranked report + heatmap matrix),
``simulate`` (replicate validation suite from a JSON config or bundled
preset), and ``report`` (re-rank / re-threshold a prior result without
re-estimating). Standard output carries only machine-readable paths;
progress goes to standard error. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from .data import load_observation_set
from .errors import ConfigError, DataError, NumericError, TmleScreenError
from .learners import DEFAULT_LIBRARY, LEARNER_REGISTRY
from .moderation import D0_MAX
from .pipeline import MODERATION_MODES, PipelineOptions, run_pipeline
from .reporting import build_rows, read_full, rethreshold, write_hyperparams, write_report, write_topk_matrix
from .simulation import DgpSpec, ReplicateSummary, run_replicates

__version__ = "0.1.0"

WORKERS_ENV = "TMLESCREEN_WORKERS"
DEFAULT_GAMMA = (0.3, -0.2, 0.1)


@dataclass(frozen=True)
class RunConfig:
    """Validated analyze configuration; echoed verbatim for provenance."""

    expression: str
    phenotype: str
    exposure_column: str
    confounder_columns: tuple[str, ...]
    id_column: str
    out: str
    folds: int | None
    seed: int
    g_bounds: tuple[float, float]
    learners: tuple[str, ...]
    moderation: str
    fdr_q: float
    top_k: int
    workers: int

    def pipeline_options(self) -> PipelineOptions:
        return PipelineOptions(folds=self.folds, seed=self.seed, g_bounds=self.g_bounds,
                               learners=self.learners, moderation=self.moderation,
                               fdr_q=self.fdr_q, workers=self.workers)


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    return max(value, 1)


def _parse_bounds(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError("--g-bounds expects 'lower,upper'")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"--g-bounds values must be numbers, got {text!r}")
    if not 0.0 < lo < hi < 1.0:
        raise ConfigError("--g-bounds must satisfy 0 < lower < upper < 1")
    return lo, hi


def _parse_learners(text: str) -> tuple[str, ...]:
    names = tuple(name.strip() for name in text.split(",") if name.strip())
    if not names:
        raise ConfigError("--learners must name at least one learner")
    for name in names:
        if name not in LEARNER_REGISTRY:
            raise ConfigError(
                f"--learners: unknown learner {name!r}; available: {', '.join(LEARNER_REGISTRY)}"
            )
    return names


class _OutputDir:
    """Creates the output directory and removes partial output on failure."""

    def __init__(self, path: str):
        self.path = Path(path)
        self.created = False

    def prepare(self) -> Path:
        if self.path.exists():
            if not self.path.is_dir():
                raise ConfigError(f"--out {self.path} exists and is not a directory")
            if any(self.path.iterdir()):
                raise ConfigError(f"--out {self.path} is not empty")
        else:
            self.path.mkdir(parents=True)
            self.created = True
        return self.path

    def discard(self) -> None:
        if self.created:
            shutil.rmtree(self.path, ignore_errors=True)
        elif self.path.is_dir():
            for child in self.path.iterdir():
                if child.is_file():
                    child.unlink()


def _write_versions(path: Path) -> None:
    version = ".".join(str(v) for v in sys.version_info[:3])
    path.write_text(
        f"tmlescreen\t{__version__}\npython\t{version}\n"
        f"numpy\t{np.__version__}\nscipy\t{scipy.__version__}\n",
        encoding="utf-8",
    )


def _run_log(result, config: RunConfig) -> str:
    obs = result.obs
    mod = result.moderated
    lines = [
        "tmlescreen analyze",
        f"subjects\t{obs.n}",
        f"biomarkers\t{obs.n_biomarkers}",
        f"confounders\t{','.join(obs.w.column_names) if obs.w.p else '(none)'}",
        f"folds\t{result.folds.v}",
        f"seed\t{config.seed}",
        f"g_bounds\t{config.g_bounds[0]:g},{config.g_bounds[1]:g}",
        f"g_fallback_used\t{result.propensity.fallback_used}",
        f"learners\t{','.join(config.learners)}",
    ]
    dropped_counts = sum(1 for d in result.dropped_learners if d)
    lines.append(f"biomarkers_with_dropped_learners\t{dropped_counts}")
    lines.append(f"moderation\t{mod.mode}")
    if mod.hyperparameters is not None:
        hp = mod.hyperparameters
        d_b = result.ic_matrix.n - (1 if mod.mode == "one-sample" else 2)
        capped = " (capped)" if hp.d0 >= D0_MAX else ""
        lines.append(f"d0\t{hp.d0:.6g}{capped}")
        lines.append(f"s0_sq\t{hp.s0_sq:.6g}")
        lines.append(f"wt_b\t{d_b / (hp.d0 + d_b):.6g}")
    n_sig = int((mod.p_adj <= config.fdr_q).sum())
    lines.append(f"significant_at_fdr_{config.fdr_q:g}\t{n_sig}")
    return "\n".join(lines) + "\n"


def _cmd_analyze(args) -> int:
    confounders = tuple(c.strip() for c in args.confounders.split(",") if c.strip()) if args.confounders else ()
    config = RunConfig(
        expression=args.expression,
        phenotype=args.phenotype,
        exposure_column=args.exposure,
        confounder_columns=confounders,
        id_column=args.id_column,
        out=args.out,
        folds=args.folds,
        seed=args.seed,
        g_bounds=_parse_bounds(args.g_bounds),
        learners=_parse_learners(args.learners),
        moderation=args.moderation,
        fdr_q=args.fdr,
        top_k=args.top_k,
        workers=args.workers if args.workers is not None else _default_workers(),
    )
    if config.fdr_q <= 0 or config.fdr_q >= 1:
        raise ConfigError("--fdr must be in (0, 1)")
    if config.top_k < 0:
        raise ConfigError("--top-k must be nonnegative")
    if config.folds is not None and config.folds < 2:
        raise ConfigError("--folds must be at least 2")

    out = _OutputDir(config.out)
    out_dir = out.prepare()
    try:
        _progress(f"loading {config.expression} + {config.phenotype}")
        obs = load_observation_set(config.expression, config.phenotype,
                                   config.exposure_column, config.confounder_columns,
                                   id_column=config.id_column)
        _progress(f"estimating {obs.n_biomarkers} biomarkers on {obs.n} subjects")
        result = run_pipeline(obs, config.pipeline_options())

        rows = build_rows(result, config.fdr_q)
        write_report(rows, out_dir / "report.tsv", 6)
        write_report(rows, out_dir / "full.tsv", 17)
        write_topk_matrix(result, out_dir / "topk_matrix.tsv", config.top_k)
        write_hyperparams(result, out_dir / "hyperparams.txt")
        (out_dir / "config.json").write_text(
            json.dumps(asdict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        _write_versions(out_dir / "versions.txt")
        (out_dir / "run.log").write_text(_run_log(result, config), encoding="utf-8")
    except BaseException:
        out.discard()
        raise
    print(out_dir)
    return 0


# -- simulate ------------------------------------------------------------------

def _config_value(cfg: dict, key: str, kind, default=None, required=False, section=""):
    name = f"{section}.{key}" if section else key
    if key not in cfg:
        if required:
            raise ConfigError(f"simulation config: missing field {name!r}")
        return default
    value = cfg[key]
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"simulation config: field {name!r} has invalid value {value!r}")


def _parse_vector(raw, length: int, name: str) -> np.ndarray:
    if isinstance(raw, (int, float)):
        return np.full(length, float(raw))
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"simulation config: field {name!r} must be numeric")
    if arr.shape != (length,):
        raise ConfigError(f"simulation config: field {name!r} must have length {length}")
    return arr


def _parse_dgp(cfg: dict) -> DgpSpec:
    n = _config_value(cfg, "n", int, required=True, section="dgp")
    b = _config_value(cfg, "b", int, required=True, section="dgp")
    p = _config_value(cfg, "p", int, default=3, section="dgp")
    seed = _config_value(cfg, "seed", int, default=1, section="dgp")
    noise_sd = _config_value(cfg, "noise_sd", float, default=1.0, section="dgp")

    raw_psi = cfg.get("true_psi", 0.0)
    if isinstance(raw_psi, dict):
        n_signals = int(raw_psi.get("n_signals", 0))
        signal = float(raw_psi.get("signal", 1.0))
        if not 0 <= n_signals <= b:
            raise ConfigError("simulation config: dgp.true_psi.n_signals out of range")
        true_psi = np.zeros(b)
        true_psi[:n_signals] = signal
    else:
        true_psi = _parse_vector(raw_psi, b, "dgp.true_psi")

    strength = _parse_vector(cfg.get("confounding_strength", 1.0), p, "dgp.confounding_strength")
    default_gamma = [DEFAULT_GAMMA[i % 3] for i in range(p)]
    gamma = _parse_vector(cfg.get("exposure_coef", default_gamma), p, "dgp.exposure_coef")
    try:
        return DgpSpec(n=n, b=b, p=p, true_psi=true_psi, confounding_strength=strength,
                       exposure_coef=gamma, noise_sd=noise_sd, seed=seed)
    except ValueError as exc:
        raise ConfigError(f"simulation config: {exc}")


def _parse_pipeline(cfg: dict, n: int) -> PipelineOptions:
    folds = _config_value(cfg, "folds", int, default=None, section="pipeline")
    if folds is not None and not 2 <= folds <= n:
        raise ConfigError(f"simulation config: pipeline.folds={folds} must satisfy 2 <= folds <= n={n}")
    learners = cfg.get("learners", list(DEFAULT_LIBRARY))
    if not isinstance(learners, list) or not learners:
        raise ConfigError("simulation config: pipeline.learners must be a nonempty list")
    for name in learners:
        if name not in LEARNER_REGISTRY:
            raise ConfigError(f"simulation config: pipeline.learners contains unknown learner {name!r}")
    bounds = cfg.get("g_bounds", [0.025, 0.975])
    if not (isinstance(bounds, list) and len(bounds) == 2):
        raise ConfigError("simulation config: pipeline.g_bounds must be [lower, upper]")
    moderation = cfg.get("moderation", "one-sample")
    if moderation not in MODERATION_MODES:
        raise ConfigError(f"simulation config: pipeline.moderation must be one of {MODERATION_MODES}")
    try:
        return PipelineOptions(
            folds=folds,
            seed=_config_value(cfg, "seed", int, default=0, section="pipeline"),
            g_bounds=(float(bounds[0]), float(bounds[1])),
            learners=tuple(learners),
            moderation=moderation,
            alpha=_config_value(cfg, "alpha", float, default=0.05, section="pipeline"),
            fdr_q=_config_value(cfg, "fdr_q", float, default=0.05, section="pipeline"),
        )
    except ValueError as exc:
        raise ConfigError(f"simulation config: {exc}")


def load_simulation_config(source: str) -> tuple[DgpSpec, int, PipelineOptions, int]:
    """Parse a simulate config from a JSON path or bundled preset name."""
    preset_root = resources.files("tmlescreen") / "presets"
    preset = preset_root / f"{source}.json"
    if preset.is_file():
        text = preset.read_text(encoding="utf-8")
    else:
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            presets = sorted(p.name.removesuffix(".json") for p in preset_root.iterdir())
            raise ConfigError(
                f"cannot read simulation config {source!r} ({exc}); bundled presets: {', '.join(presets)}"
            )
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"simulation config {source!r} is not valid JSON: {exc}")
    if not isinstance(cfg, dict) or "dgp" not in cfg:
        raise ConfigError("simulation config: missing field 'dgp'")
    dgp = _parse_dgp(cfg["dgp"])
    replicates = _config_value(cfg, "replicates", int, required=True)
    if replicates < 1:
        raise ConfigError("simulation config: field 'replicates' must be >= 1")
    options = _parse_pipeline(cfg.get("pipeline", {}), dgp.n)
    workers = _config_value(cfg, "workers", int, default=0)
    return dgp, replicates, options, workers


def write_biomarker_summary(summary: ReplicateSummary, path) -> None:
    columns = ("biomarker_id", "true_psi", "bias", "sd_psi", "mean_se", "coverage",
               "rej_mod", "rej_unmod", "fdr_contrib", "naive_bias")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(columns) + "\n")
        for i, bid in enumerate(summary.biomarker_ids):
            cells = (bid, *(format(float(getattr(summary, col)[i]), ".6g")
                            for col in columns[1:]))
            fh.write("\t".join(cells) + "\n")


def write_run_summary(summary: ReplicateSummary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"replicates\t{summary.replicates}\n")
        fh.write(f"fdr_mod\t{summary.fdr_mod:.6g}\n")
        fh.write(f"fdr_unmod\t{summary.fdr_unmod:.6g}\n")
        fh.write(f"mean_discoveries_mod\t{summary.mean_discoveries_mod:.6g}\n")
        fh.write(f"mean_discoveries_unmod\t{summary.mean_discoveries_unmod:.6g}\n")


def _cmd_simulate(args) -> int:
    dgp, replicates, options, cfg_workers = load_simulation_config(args.config)
    workers = args.workers if args.workers is not None else (cfg_workers or _default_workers())
    out = _OutputDir(args.out)
    out_dir = out.prepare()
    try:
        _progress(f"simulating {replicates} replicates (n={dgp.n}, biomarkers={dgp.b})")
        summary = run_replicates(dgp, replicates, options, workers=workers)
        write_biomarker_summary(summary, out_dir / "biomarker_summary.tsv")
        write_run_summary(summary, out_dir / "run_summary.tsv")
        echo = {
            "dgp": {"n": dgp.n, "b": dgp.b, "p": dgp.p, "seed": dgp.seed,
                    "noise_sd": dgp.noise_sd, "true_psi": dgp.true_psi.tolist(),
                    "confounding_strength": dgp.confounding_strength.tolist(),
                    "exposure_coef": dgp.exposure_coef.tolist()},
            "replicates": replicates,
            "pipeline": {"folds": options.folds, "seed": options.seed,
                         "g_bounds": list(options.g_bounds), "learners": list(options.learners),
                         "moderation": options.moderation, "alpha": options.alpha,
                         "fdr_q": options.fdr_q},
            "workers": workers,
        }
        (out_dir / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
        _write_versions(out_dir / "versions.txt")
    except BaseException:
        out.discard()
        raise
    print(out_dir)
    return 0


def _cmd_report(args) -> int:
    result_path = Path(args.result)
    if result_path.is_dir():
        result_path = result_path / "full.tsv"
    if not 0.0 < args.fdr < 1.0:
        raise ConfigError("--fdr must be in (0, 1)")
    rows = rethreshold(read_full(result_path), args.fdr)
    out = _OutputDir(args.out)
    out_dir = out.prepare()
    try:
        write_report(rows, out_dir / "report.tsv", 6)
        write_report(rows, out_dir / "full.tsv", 17)
    except BaseException:
        out.discard()
        raise
    print(out_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmlescreen",
        description="Targeted per-biomarker effect estimation with moderated joint inference.",
    )
    parser.add_argument("--version", action="version", version=f"tmlescreen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="estimate effects and write the ranked report")
    pa.add_argument("--expression", required=True, help="biomarker-by-subject TSV")
    pa.add_argument("--phenotype", required=True, help="subject-by-covariate TSV")
    pa.add_argument("--exposure", required=True, help="name of the binary exposure column")
    pa.add_argument("--confounders", default="", help="comma-separated confounder columns")
    pa.add_argument("--id-column", default="id", help="subject-id column in the phenotype file")
    pa.add_argument("--out", required=True, help="output directory (must be new or empty)")
    pa.add_argument("--folds", type=int, default=None, help="CV fold count (default 10, 5 if n<50)")
    pa.add_argument("--seed", type=int, default=0, help="fold-assignment seed")
    pa.add_argument("--g-bounds", default="0.025,0.975", help="propensity truncation 'lo,hi'")
    pa.add_argument("--learners", default=",".join(DEFAULT_LIBRARY),
                    help="comma-separated learner names")
    pa.add_argument("--moderation", choices=MODERATION_MODES, default="one-sample")
    pa.add_argument("--fdr", type=float, default=0.05, help="FDR threshold for the sig flag")
    pa.add_argument("--top-k", type=int, default=25, help="rows of the heatmap matrix export")
    pa.add_argument("--workers", type=int, default=None,
                    help=f"worker processes (default ${WORKERS_ENV} or 1)")
    pa.set_defaults(func=_cmd_analyze)

    ps = sub.add_parser("simulate", help="run the replicate validation suite")
    ps.add_argument("--config", required=True,
                    help="JSON config path or bundled preset name")
    ps.add_argument("--out", required=True, help="output directory (must be new or empty)")
    ps.add_argument("--workers", type=int, default=None)
    ps.set_defaults(func=_cmd_simulate)

    pr = sub.add_parser("report", help="re-threshold an existing analyze result")
    pr.add_argument("--result", required=True, help="analyze output directory or full.tsv path")
    pr.add_argument("--fdr", type=float, default=0.05)
    pr.add_argument("--out", required=True, help="output directory (must be new or empty)")
    pr.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error (data): {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error (numeric): {exc}", file=sys.stderr)
        return 4
    except TmleScreenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
