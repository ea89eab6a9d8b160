"""End-to-end orchestration: folds, propensity, per-biomarker targeting,
then the joint moderation pass.

Per-biomarker work is pure given (data, folds, propensity, library), so it
runs in an optional process pool; results are collected in biomarker order
and are bitwise independent of the worker count.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import FoldAssignment, ObservationSet, assign_folds, default_fold_count
from .learners import DEFAULT_LIBRARY, LearnerSpec, resolve_library
from .moderation import InfluenceMatrix, ModeratedResult, assemble_ic_matrix, moderate
from .stacking import cv_stack
from .tmle import DEFAULT_G_BOUNDS, PropensityFit, TmleFit, estimate_propensity, tmle_ate

MODERATION_MODES = ("one-sample", "two-group", "off")


@dataclass(frozen=True)
class PipelineOptions:
    """Estimation settings shared by the CLI and the simulation harness."""

    folds: int | None = None
    seed: int = 0
    g_bounds: tuple[float, float] = DEFAULT_G_BOUNDS
    learners: tuple[str, ...] = DEFAULT_LIBRARY
    moderation: str = "one-sample"
    alpha: float = 0.05
    fdr_q: float = 0.05
    workers: int = 1
    discrete_stacking: bool = False

    def __post_init__(self):
        if self.moderation not in MODERATION_MODES:
            raise ValueError(f"moderation must be one of {MODERATION_MODES}")
        if not 0.0 < self.fdr_q < 1.0:
            raise ValueError("fdr_q must be in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class PipelineResult:
    """Everything one run produces, in biomarker order."""

    obs: ObservationSet
    folds: FoldAssignment
    propensity: PropensityFit
    fits: tuple[TmleFit, ...]
    ic_matrix: InfluenceMatrix
    moderated: ModeratedResult
    options: PipelineOptions
    dropped_learners: tuple[tuple[str, ...], ...] = field(default=())


def fit_one_biomarker(obs: ObservationSet, biomarker: int, folds: FoldAssignment,
                      g: PropensityFit, library: tuple[LearnerSpec, ...],
                      discrete: bool = False) -> tuple[TmleFit, tuple[str, ...]]:
    sl = cv_stack(obs, biomarker, folds, library, discrete=discrete)
    return tmle_ate(obs, biomarker, sl, g), sl.dropped


_WORKER_STATE: dict = {}


def _init_worker(obs, folds, g, library, discrete):
    _WORKER_STATE["args"] = (obs, folds, g, library, discrete)


def _run_biomarker(biomarker: int):
    obs, folds, g, library, discrete = _WORKER_STATE["args"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_one_biomarker(obs, biomarker, folds, g, library, discrete)


def run_pipeline(obs: ObservationSet, options: PipelineOptions = PipelineOptions()) -> PipelineResult:
    """Run folds + propensity + per-biomarker targeting + moderation."""
    v = options.folds if options.folds is not None else default_fold_count(obs.n)
    folds = assign_folds(obs.n, v, obs.a, options.seed)
    g = estimate_propensity(obs, options.g_bounds)
    library = resolve_library(options.learners)

    indices = range(obs.n_biomarkers)
    if options.workers <= 1 or obs.n_biomarkers < 2:
        results = [fit_one_biomarker(obs, b, folds, g, library, options.discrete_stacking)
                   for b in indices]
    else:
        with ProcessPoolExecutor(
            max_workers=options.workers,
            initializer=_init_worker,
            initargs=(obs, folds, g, library, options.discrete_stacking),
        ) as pool:
            chunk = max(1, obs.n_biomarkers // (4 * options.workers))
            results = list(pool.map(_run_biomarker, indices, chunksize=chunk))

    fits = tuple(r[0] for r in results)
    dropped = tuple(r[1] for r in results)
    im = assemble_ic_matrix(list(fits), obs.y.biomarker_ids)
    moderated = moderate(im, obs.a.values, mode=options.moderation,
                         alpha=options.alpha, fdr_q=options.fdr_q)
    return PipelineResult(obs=obs, folds=folds, propensity=g, fits=fits,
                          ic_matrix=im, moderated=moderated, options=options,
                          dropped_learners=dropped)
