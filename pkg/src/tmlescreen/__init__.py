"""Targeted per-biomarker effect estimation with moderated joint inference.

High-level entry points:

* :func:`tmlescreen.data.load_observation_set` — read the canonical TSV pair.
* :func:`tmlescreen.pipeline.run_pipeline` — folds, propensity, per-biomarker
  targeting, and the moderated inference pass.
* :func:`tmlescreen.simulation.run_replicates` — replicate validation harness.
* ``tmlescreen`` console script — ``analyze`` / ``simulate`` / ``report``.
"""

from .data import (
    ConfounderMatrix,
    ExposureVector,
    ExpressionMatrix,
    FoldAssignment,
    ObservationSet,
    assign_folds,
    load_observation_set,
    write_observation_set,
)
from .learners import DEFAULT_LIBRARY, LEARNER_REGISTRY
from .moderation import (
    EbHyperparameters,
    InfluenceMatrix,
    ModeratedResult,
    assemble_ic_matrix,
    bh_adjust,
    estimate_hyperparameters,
    moderate,
    moderate_variances,
    moderated_t,
    p_values,
    wald_inference,
)
from .pipeline import PipelineOptions, PipelineResult, run_pipeline
from .simulation import DgpSpec, ReplicateSummary, generate, run_replicates
from .stacking import SuperLearnerFit, cv_stack, predict_ensemble
from .tmle import (
    CleverCovariate,
    PropensityFit,
    TmleFit,
    clever_covariate,
    estimate_propensity,
    fluctuate,
    influence_curve,
    tmle_ate,
)

__version__ = "0.1.0"

__all__ = [
    "ConfounderMatrix", "ExposureVector", "ExpressionMatrix", "FoldAssignment",
    "ObservationSet", "assign_folds", "load_observation_set", "write_observation_set",
    "DEFAULT_LIBRARY", "LEARNER_REGISTRY",
    "EbHyperparameters", "InfluenceMatrix", "ModeratedResult", "assemble_ic_matrix",
    "bh_adjust", "estimate_hyperparameters", "moderate", "moderate_variances",
    "moderated_t", "p_values", "wald_inference",
    "PipelineOptions", "PipelineResult", "run_pipeline",
    "DgpSpec", "ReplicateSummary", "generate", "run_replicates",
    "SuperLearnerFit", "cv_stack", "predict_ensemble",
    "CleverCovariate", "PropensityFit", "TmleFit", "clever_covariate",
    "estimate_propensity", "fluctuate", "influence_curve", "tmle_ate",
    "__version__",
]
