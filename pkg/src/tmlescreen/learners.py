"""Minimal base-learner library behind a single fit/predict interface.

Five learner kinds: intercept-only, ordinary least squares, ridge with an
unpenalized intercept, k-nearest-neighbor regression, and IRLS logistic
regression. Linear solves go through QR (or SVD for the penalized and
weighted cases) rather than normal equations.

Each learner can carry a per-column centering/scaling pair, applied at both
fit and predict time; the library specs below standardize continuous
columns for the scale-sensitive learners (ridge, knn) only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidK, RankDeficientError, SeparationError

LOGISTIC_MAX_ITER = 50
LOGISTIC_TOL = 1e-8
SEPARATION_BETA = 15.0
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class Design:
    """Feature matrix plus response for one regression problem."""

    features: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.response, dtype=float)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError("features must be n x d and response length n")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("design contains non-finite entries")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "response", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class FittedLearner:
    """Immutable fitted model; predict() is deterministic given inputs.

    ``coef`` holds the intercept first for the linear kinds. knn stores its
    (possibly rescaled) training set instead. ``center``/``scale`` are the
    feature transform applied before fitting, replayed at predict time.
    """

    kind: str
    d: int
    n: int
    coef: np.ndarray | None = None
    train_x: np.ndarray | None = None
    train_y: np.ndarray | None = None
    k: int | None = None
    center: np.ndarray | None = None
    scale: np.ndarray | None = None


def _apply_transform(model_center, model_scale, features: np.ndarray) -> np.ndarray:
    if model_center is None:
        return features
    return (features - model_center) / model_scale


def _with_intercept(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.shape[0]), x])


def _qr_solve_full_rank(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares via QR; raises RankDeficientError on rank loss."""
    q, r = np.linalg.qr(x)
    diag = np.abs(np.diag(r))
    tol = max(x.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if diag.size == 0 or diag.min() <= tol:
        raise RankDeficientError("design matrix is rank deficient")
    return np.linalg.solve(r, q.T @ y)


def fit_intercept(design: Design, center=None, scale=None) -> FittedLearner:
    coef = np.array([design.response.mean()])
    return FittedLearner(kind="intercept", d=design.d, n=design.n, coef=coef,
                         center=center, scale=scale)


def fit_ols(design: Design, allow_rank_deficient: bool = False,
            center=None, scale=None) -> FittedLearner:
    """Main-terms least squares with an intercept column added."""
    x = _with_intercept(design.features)
    if allow_rank_deficient:
        coef = np.linalg.lstsq(x, design.response, rcond=None)[0]
    else:
        coef = _qr_solve_full_rank(x, design.response)
    return FittedLearner(kind="ols", d=design.d, n=design.n, coef=coef,
                         center=center, scale=scale)


def fit_ridge(design: Design, lam: float, center=None, scale=None) -> FittedLearner:
    """Ridge with unpenalized intercept: min RSS + lam * ||slopes||^2.

    Solved as an augmented least-squares system so the same orthogonal
    factorization path is used as for OLS. lam=0 requires full rank.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    x = _with_intercept(design.features)
    if lam == 0:
        coef = _qr_solve_full_rank(x, design.response)
    else:
        penalty = math.sqrt(lam) * np.eye(design.d + 1)[1:]
        x_aug = np.vstack([x, penalty])
        y_aug = np.concatenate([design.response, np.zeros(design.d)])
        coef = np.linalg.lstsq(x_aug, y_aug, rcond=None)[0]
    return FittedLearner(kind="ridge", d=design.d, n=design.n, coef=coef,
                         center=center, scale=scale)


def fit_knn(design: Design, k: int, center=None, scale=None) -> FittedLearner:
    """Store the training set for k-nearest-neighbor mean prediction.

    Features are expected pre-standardized by the caller when that matters;
    distance ties are broken by the lowest training index at predict time.
    """
    if not 1 <= k <= design.n:
        raise InvalidK(f"k={k} must satisfy 1 <= k <= n={design.n}")
    return FittedLearner(kind="knn", d=design.d, n=design.n,
                         train_x=design.features.copy(), train_y=design.response.copy(),
                         k=k, center=center, scale=scale)


def fit_logistic(design: Design, max_iter: int = LOGISTIC_MAX_ITER,
                 tol: float = LOGISTIC_TOL, center=None, scale=None) -> FittedLearner:
    """Main-terms logistic regression via iteratively reweighted least squares.

    Converges when the largest score component or coefficient change drops
    below ``tol``. Divergence (any standardized slope beyond
    ``SEPARATION_BETA``) or running out of iterations raises
    SeparationError; the caller decides the fallback.
    """
    y = design.response
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logistic response must be 0/1")
    x = _with_intercept(design.features)
    n, d = x.shape
    # scale of each column, for the divergence check only
    col_sd = x.std(axis=0)
    col_sd[col_sd == 0] = 1.0

    beta = np.zeros(d)
    for _ in range(max_iter):
        eta = x @ beta
        p = expit(eta)
        score = x.T @ (y - p)
        if np.max(np.abs(score)) < tol:
            break
        w = p * (1.0 - p)
        w = np.maximum(w, 1e-10)
        sw = np.sqrt(w)
        z = eta + (y - p) / w
        delta = np.linalg.lstsq(x * sw[:, None], z * sw, rcond=None)[0] - beta
        beta = beta + delta
        if d > 1 and np.max(np.abs(beta[1:] * col_sd[1:])) > SEPARATION_BETA:
            raise SeparationError("logistic coefficients diverged; data are (near-)separable")
        if np.max(np.abs(delta)) < tol:
            break
    else:
        raise SeparationError(f"IRLS did not converge in {max_iter} iterations")
    return FittedLearner(kind="logistic", d=design.d, n=design.n, coef=beta,
                         center=center, scale=scale)


def expit(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def predict(model: FittedLearner, features: np.ndarray) -> np.ndarray:
    """Predictions for an m x d feature matrix from any fitted learner."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch("features must be 2-D")
    if x.shape[1] != model.d:
        raise DimensionMismatch(f"model was fit with d={model.d}, got {x.shape[1]} columns")
    x = _apply_transform(model.center, model.scale, x)

    if model.kind in ("intercept",):
        return np.full(x.shape[0], model.coef[0])
    if model.kind in ("ols", "ridge"):
        return _with_intercept(x) @ model.coef
    if model.kind == "logistic":
        p = expit(_with_intercept(x) @ model.coef)
        return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    if model.kind == "knn":
        d2 = ((x[:, None, :] - model.train_x[None, :, :]) ** 2).sum(axis=2)
        # stable argsort: equal distances resolve to the lowest training index
        order = np.argsort(d2, axis=1, kind="stable")[:, : model.k]
        return model.train_y[order].mean(axis=1)
    raise ValueError(f"unknown learner kind {model.kind!r}")


# -- learner library -----------------------------------------------------------

@dataclass(frozen=True)
class LearnerSpec:
    """One entry of the candidate library: a named, fixed hyperparameter."""

    name: str
    kind: str
    param: float | None = None
    standardize: bool = False

    def fit(self, features: np.ndarray, response: np.ndarray,
            continuous_mask: np.ndarray | None = None) -> FittedLearner:
        center = scale = None
        if self.standardize:
            center, scale = _standardizer(features, continuous_mask)
            features = (features - center) / scale
        design = Design(features=features, response=response)
        if self.kind == "intercept":
            return fit_intercept(design, center, scale)
        if self.kind == "ols":
            return fit_ols(design, center=center, scale=scale)
        if self.kind == "ridge":
            return fit_ridge(design, self.param, center=center, scale=scale)
        if self.kind == "knn":
            return fit_knn(design, int(self.param), center=center, scale=scale)
        raise ValueError(f"unknown learner kind {self.kind!r}")


def _standardizer(features: np.ndarray, continuous_mask: np.ndarray | None):
    """Center/scale for continuous columns; binary columns pass through."""
    n, d = features.shape
    if continuous_mask is None:
        continuous_mask = np.array([
            not np.isin(features[:, j], (0.0, 1.0)).all() for j in range(d)
        ])
    center = np.zeros(d)
    scale = np.ones(d)
    mask = np.asarray(continuous_mask, dtype=bool)
    if mask.any():
        center[mask] = features[:, mask].mean(axis=0)
        sd = features[:, mask].std(axis=0)
        sd[sd == 0] = 1.0
        scale[mask] = sd
    return center, scale


LEARNER_REGISTRY: dict[str, LearnerSpec] = {
    spec.name: spec
    for spec in (
        LearnerSpec("intercept", "intercept"),
        LearnerSpec("ols", "ols"),
        LearnerSpec("ridge_0.01", "ridge", 0.01, standardize=True),
        LearnerSpec("ridge_0.1", "ridge", 0.1, standardize=True),
        LearnerSpec("ridge_1", "ridge", 1.0, standardize=True),
        LearnerSpec("ridge_10", "ridge", 10.0, standardize=True),
        LearnerSpec("knn_5", "knn", 5, standardize=True),
        LearnerSpec("knn_10", "knn", 10, standardize=True),
    )
}

DEFAULT_LIBRARY = tuple(LEARNER_REGISTRY)


def resolve_library(names) -> tuple[LearnerSpec, ...]:
    specs = []
    for name in names:
        if name not in LEARNER_REGISTRY:
            raise KeyError(f"unknown learner {name!r}; available: {', '.join(LEARNER_REGISTRY)}")
        specs.append(LEARNER_REGISTRY[name])
    if not specs:
        raise KeyError("learner library must not be empty")
    return tuple(specs)
