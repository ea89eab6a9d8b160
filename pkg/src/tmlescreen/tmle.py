"""Per-biomarker targeting step and influence-curve machinery.

One shared propensity fit feeds every biomarker: the inverse-propensity
contrast (clever covariate) defines a one-dimensional offset regression
that augments the initial stacked fit, after which the effect estimate is
the mean difference of the updated arm predictions and its sampling
variability comes from the influence curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ExposureVector, ObservationSet
from .errors import DegenerateCovariate, SeparationError
from .learners import Design, fit_logistic, predict
from .stacking import SuperLearnerFit, predict_ensemble

DEFAULT_G_BOUNDS = (0.025, 0.975)


@dataclass(frozen=True)
class PropensityFit:
    """Bounded estimate of P(exposure = 1 | confounders), shared per run."""

    g1: np.ndarray
    bounds: tuple[float, float]
    fallback_used: bool

    def __post_init__(self):
        lo, hi = self.bounds
        if not 0.0 < lo < hi < 1.0:
            raise ValueError("bounds must satisfy 0 < lower < upper < 1")
        g1 = np.asarray(self.g1, dtype=float)
        if g1.min() < lo or g1.max() > hi:
            raise ValueError("propensity values violate the stated bounds")
        object.__setattr__(self, "g1", g1)


@dataclass(frozen=True)
class CleverCovariate:
    """Inverse-propensity contrast evaluated at the observed exposure."""

    h: np.ndarray


@dataclass(frozen=True)
class TmleFit:
    """Targeted estimate and influence curve for one biomarker."""

    psi: float
    epsilon: float
    q0_a: np.ndarray
    q1_at0: np.ndarray
    q1_at1: np.ndarray
    ic: np.ndarray
    sigma: float


def estimate_propensity(obs: ObservationSet, bounds: tuple[float, float] = DEFAULT_G_BOUNDS) -> PropensityFit:
    """Main-terms logistic fit of exposure on confounders, then truncation.

    A separable or non-converging fit falls back to the constant empirical
    exposure rate, with the flag set so reports can surface it.
    """
    a = obs.a.values.astype(float)
    fallback = False
    if obs.w.p == 0:
        g1 = np.full(obs.n, a.mean())
    else:
        try:
            model = fit_logistic(Design(features=obs.w.values, response=a))
            g1 = predict(model, obs.w.values)
        except SeparationError:
            g1 = np.full(obs.n, a.mean())
            fallback = True
    g1 = np.clip(g1, bounds[0], bounds[1])
    return PropensityFit(g1=g1, bounds=bounds, fallback_used=fallback)


def clever_covariate(a: ExposureVector, g: PropensityFit) -> CleverCovariate:
    """h_i = 1/g1_i on the exposed, -1/(1-g1_i) on the unexposed."""
    if a.n != g.g1.shape[0]:
        raise ValueError("exposure and propensity lengths differ")
    exposed = a.values == 1
    h = np.where(exposed, 1.0 / g.g1, -1.0 / (1.0 - g.g1))
    return CleverCovariate(h=h)


def fluctuate(y_b: np.ndarray, q0_a: np.ndarray, h: CleverCovariate) -> float:
    """Offset regression of the residual on the clever covariate.

    No-intercept least squares with the initial fit as offset:
    epsilon = sum(h * (y - q0)) / sum(h^2).
    """
    hv = h.h
    if not (len(y_b) == len(q0_a) == len(hv)):
        raise ValueError("vector lengths differ")
    denom = float(hv @ hv)
    if denom <= 0.0:
        raise DegenerateCovariate("clever covariate has zero sum of squares")
    return float(hv @ (y_b - q0_a)) / denom


def influence_curve(y_b: np.ndarray, a: ExposureVector, g: PropensityFit,
                    q1_at0: np.ndarray, q1_at1: np.ndarray, psi: float) -> np.ndarray:
    """Plug-in influence curve of the adjusted mean difference."""
    h = clever_covariate(a, g).h
    q1_obs = np.where(a.values == 1, q1_at1, q1_at0)
    return h * (y_b - q1_obs) + q1_at1 - q1_at0 - psi


def tmle_ate(obs: ObservationSet, biomarker: int, sl: SuperLearnerFit,
             g: PropensityFit) -> TmleFit:
    """Targeted estimate of the adjusted mean difference for one biomarker.

    The updated arm predictions are q0(a, w) + epsilon * h(a, w) with
    h(1, w) = 1/g1 and h(0, w) = -1/(1 - g1); the estimate is the mean of
    their difference and sigma is the sample sd (denominator n - 1) of the
    influence curve.
    """
    y_b = obs.y.values[biomarker]
    a = obs.a
    q0_at0 = predict_ensemble(sl, 0, obs.w)
    q0_at1 = predict_ensemble(sl, 1, obs.w)
    q0_a = np.where(a.values == 1, q0_at1, q0_at0)

    h = clever_covariate(a, g)
    epsilon = fluctuate(y_b, q0_a, h)

    q1_at1 = q0_at1 + epsilon / g.g1
    q1_at0 = q0_at0 - epsilon / (1.0 - g.g1)
    psi = float(np.mean(q1_at1 - q1_at0))

    ic = influence_curve(y_b, a, g, q1_at0, q1_at1, psi)
    sigma = float(np.std(ic, ddof=1))
    return TmleFit(psi=psi, epsilon=epsilon, q0_a=q0_a,
                   q1_at0=q1_at0, q1_at1=q1_at1, ic=ic, sigma=sigma)
