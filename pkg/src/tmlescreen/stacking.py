"""Cross-validated convex stacking of the base-learner library.

For one biomarker, every candidate learner is fit on each training split
and scored on the held-out fold; the held-out prediction matrix then
drives a simplex-constrained weight solve (non-negative least squares on
mean-centered predictions, renormalized, with a best-single-learner
fallback). Learners that error on any split are dropped with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .data import BINARY, ConfounderMatrix, FoldAssignment, ObservationSet
from .errors import AllLearnersFailedError
from .learners import FittedLearner, LearnerSpec, predict

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class CvRiskTable:
    """Held-out predictions (n x L) and per-learner CV mean squared error."""

    cv_predictions: np.ndarray
    cv_risks: np.ndarray


@dataclass(frozen=True)
class SuperLearnerFit:
    """Convex ensemble over the library, refit on the full data.

    ``weights`` lie on the simplex; dropped learners keep a slot with
    weight 0 and ``refit_learners[i] is None``.
    """

    specs: tuple[LearnerSpec, ...]
    weights: np.ndarray
    refit_learners: tuple[FittedLearner | None, ...]
    cv_table: CvRiskTable
    cv_risk_of_ensemble: float
    dropped: tuple[str, ...]


def outcome_design(a_values: np.ndarray, w: ConfounderMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Main-terms (exposure, confounders) feature matrix + continuous mask."""
    features = np.column_stack([a_values.astype(float), w.values])
    mask = np.array([False] + [kind != BINARY for kind in w.column_kinds])
    return features, mask


def simplex_weights(cv_predictions: np.ndarray, response: np.ndarray,
                    usable: np.ndarray) -> np.ndarray:
    """Simplex weights minimizing held-out squared error.

    NNLS runs on mean-centered columns (making the solve invariant to a
    constant shift of the response), the nonzero solution is renormalized
    to the simplex, and exact duplicate prediction columns are collapsed
    onto their first occurrence so ties break toward the lower index. If
    the renormalized solution is no better than the best single learner,
    that vertex is returned instead.
    """
    n, total = cv_predictions.shape
    weights = np.zeros(total)
    idx = np.flatnonzero(usable)
    if idx.size == 0:
        raise AllLearnersFailedError("no usable learners")
    z = cv_predictions[:, idx]

    # collapse exact duplicate columns onto the first occurrence
    keep: list[int] = []
    for j in range(idx.size):
        if not any(np.array_equal(z[:, j], z[:, k]) for k in keep):
            keep.append(j)
    z_unique = z[:, keep]

    offset = response.mean()
    raw, _ = nnls(z_unique - offset, response - offset)
    risks = ((z - response[:, None]) ** 2).mean(axis=0)
    best_vertex = int(np.argmin(risks))

    if raw.sum() <= WEIGHT_TOL:
        weights[idx[best_vertex]] = 1.0
        return weights
    w_unique = raw / raw.sum()
    blend_risk = (((z_unique @ w_unique) - response) ** 2).mean()
    if blend_risk <= risks[best_vertex]:
        for j, w_j in zip(keep, w_unique):
            weights[idx[j]] = w_j
    else:
        weights[idx[best_vertex]] = 1.0
    return weights


def cv_stack(obs: ObservationSet, biomarker: int, folds: FoldAssignment,
             library: tuple[LearnerSpec, ...], discrete: bool = False) -> SuperLearnerFit:
    """Stack the library for one biomarker's outcome regression.

    ``discrete=True`` restricts the weights to the simplex vertices, i.e.
    plain cross-validated selection of the single best learner.
    """
    if not library:
        raise AllLearnersFailedError("learner library is empty")
    response = obs.y.values[biomarker]
    features, mask = outcome_design(obs.a.values, obs.w)
    n, total = obs.n, len(library)

    cv_predictions = np.full((n, total), np.nan)
    failed = np.zeros(total, dtype=bool)
    for fold in range(1, folds.v + 1):
        test = folds.members(fold)
        train = np.flatnonzero(folds.fold_of_subject != fold)
        for ell, spec in enumerate(library):
            if failed[ell]:
                continue
            try:
                model = spec.fit(features[train], response[train], mask)
                cv_predictions[test, ell] = predict(model, features[test])
            except Exception as exc:
                failed[ell] = True
                warnings.warn(f"learner {spec.name!r} dropped (fold {fold}): {exc}")

    refit: list[FittedLearner | None] = []
    for ell, spec in enumerate(library):
        if failed[ell]:
            refit.append(None)
            continue
        try:
            refit.append(spec.fit(features, response, mask))
        except Exception as exc:
            failed[ell] = True
            refit.append(None)
            warnings.warn(f"learner {spec.name!r} dropped (full refit): {exc}")

    with np.errstate(invalid="ignore"):
        bad = ~np.isfinite(cv_predictions).all(axis=0)
    failed |= bad
    usable = ~failed
    if not usable.any():
        raise AllLearnersFailedError("all learners failed during cross-validation")

    cv_risks = np.full(total, np.inf)
    resid = cv_predictions[:, usable] - response[:, None]
    cv_risks[usable] = (resid ** 2).mean(axis=0)

    if discrete:
        weights = np.zeros(total)
        weights[int(np.argmin(cv_risks))] = 1.0
    else:
        weights = simplex_weights(cv_predictions, response, usable)

    ensemble_pred = cv_predictions[:, usable] @ weights[usable]
    ensemble_risk = float(((ensemble_pred - response) ** 2).mean())

    return SuperLearnerFit(
        specs=tuple(library),
        weights=weights,
        refit_learners=tuple(refit),
        cv_table=CvRiskTable(cv_predictions=cv_predictions, cv_risks=cv_risks),
        cv_risk_of_ensemble=ensemble_risk,
        dropped=tuple(spec.name for spec, f in zip(library, failed) if f),
    )


def predict_ensemble(fit: SuperLearnerFit, a_value: int, w: ConfounderMatrix) -> np.ndarray:
    """Ensemble prediction with the exposure column pinned to ``a_value``."""
    features = np.column_stack([np.full(w.n, float(a_value)), w.values])
    out = np.zeros(w.n)
    for weight, model in zip(fit.weights, fit.refit_learners):
        if weight > 0 and model is not None:
            out += weight * predict(model, features)
    return out
