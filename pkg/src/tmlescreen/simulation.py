"""Synthetic data-generating processes and the replicate harness.

The linear DGP has a known adjusted mean difference per biomarker, so
replicate runs can score bias, confidence-interval coverage, rejection
rates, and empirical false-discovery proportions against the truth. All
randomness flows through numpy's seedable PCG64 generator; replicate
streams use seed XOR replicate index (replicates are numbered from 1 so
the coefficient stream, which uses the bare seed, is never reused).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import ConfounderMatrix, ExposureVector, ExpressionMatrix, ObservationSet
from .learners import expit
from .moderation import bh_adjust
from .pipeline import PipelineOptions, run_pipeline

BETA_SD = 0.5


@dataclass(frozen=True)
class DgpSpec:
    """Linear-outcome DGP: W ~ N(0,1), logit exposure, additive effect.

    ``confounding_strength`` scales the (once-drawn) outcome coefficients
    column-wise; zeros remove confounding through that covariate.
    ``exposure_coef`` are the logit coefficients of exposure on W and are
    expected to stay modest so true propensities remain bounded.
    """

    n: int
    b: int
    p: int
    true_psi: np.ndarray
    confounding_strength: np.ndarray
    exposure_coef: np.ndarray
    noise_sd: float
    seed: int

    def __post_init__(self):
        true_psi = np.asarray(self.true_psi, dtype=float)
        strength = np.asarray(self.confounding_strength, dtype=float)
        gamma = np.asarray(self.exposure_coef, dtype=float)
        if true_psi.shape != (self.b,):
            raise ValueError("true_psi must have length b")
        if strength.shape != (self.p,) or gamma.shape != (self.p,):
            raise ValueError("confounding_strength and exposure_coef must have length p")
        if not self.noise_sd > 0:
            raise ValueError("noise_sd must be positive")
        if self.n < 4:
            raise ValueError("n must be at least 4")
        object.__setattr__(self, "true_psi", true_psi)
        object.__setattr__(self, "confounding_strength", strength)
        object.__setattr__(self, "exposure_coef", gamma)

    def outcome_coefficients(self) -> np.ndarray:
        """B x p coefficient rows, drawn once from the base seed."""
        rng = np.random.default_rng(self.seed)
        return rng.normal(0.0, BETA_SD, size=(self.b, self.p)) * self.confounding_strength


def generate(spec: DgpSpec, replicate_index: int) -> ObservationSet:
    """One synthetic dataset; deterministic given (seed, replicate_index)."""
    rng = np.random.default_rng(spec.seed ^ replicate_index)
    w = rng.standard_normal((spec.n, spec.p))
    prob = expit(w @ spec.exposure_coef) if spec.p else np.full(spec.n, 0.5)
    a = rng.binomial(1, prob)
    # an all-0/all-1 draw would violate the exposure invariant; redraw
    for _ in range(1000):
        if 0 < a.sum() < spec.n:
            break
        a = rng.binomial(1, prob)
    else:
        raise RuntimeError("could not draw a non-constant exposure")

    beta = spec.outcome_coefficients()
    noise = rng.normal(0.0, spec.noise_sd, size=(spec.b, spec.n))
    y = spec.true_psi[:, None] * a[None, :] + beta @ w.T + noise

    subject_ids = tuple(f"s{i + 1:04d}" for i in range(spec.n))
    biomarker_ids = tuple(f"bm{j + 1:04d}" for j in range(spec.b))
    kinds = tuple("continuous" for _ in range(spec.p))
    names = tuple(f"w{j + 1}" for j in range(spec.p))
    return ObservationSet(
        w=ConfounderMatrix(values=w, column_names=names, column_kinds=kinds),
        a=ExposureVector(values=a),
        y=ExpressionMatrix(values=y, biomarker_ids=biomarker_ids),
        subject_ids=subject_ids,
    )


@dataclass(frozen=True)
class ReplicateSummary:
    """Aggregated per-biomarker and run-level metrics over replicates."""

    biomarker_ids: tuple[str, ...]
    true_psi: np.ndarray
    replicates: int
    bias: np.ndarray
    sd_psi: np.ndarray
    mean_se: np.ndarray
    coverage: np.ndarray
    rej_mod: np.ndarray
    rej_unmod: np.ndarray
    fdr_contrib: np.ndarray
    naive_bias: np.ndarray
    fdr_mod: float
    fdr_unmod: float
    mean_discoveries_mod: float
    mean_discoveries_unmod: float


def _one_replicate(spec: DgpSpec, options: PipelineOptions, index: int) -> dict:
    obs = generate(spec, index)
    result = run_pipeline(obs, options)
    mod = result.moderated
    n = obs.n
    naive = (obs.y.values[:, obs.a.values == 1].mean(axis=1)
             - obs.y.values[:, obs.a.values == 0].mean(axis=1))
    return {
        "psi": mod.psi,
        "se": mod.sigma / np.sqrt(n),
        "ci_lo": mod.wald_ci_lo,
        "ci_hi": mod.wald_ci_hi,
        "p_mod": mod.p_raw,
        "p_adj_mod": mod.p_adj,
        "wald_p": mod.wald_p,
        "p_adj_unmod": bh_adjust(mod.wald_p),
        "naive": naive,
        "ids": mod.biomarker_ids,
    }


_SIM_STATE: dict = {}


def _init_sim_worker(spec, options):
    _SIM_STATE["args"] = (spec, options)


def _run_sim_replicate(index: int) -> dict:
    spec, options = _SIM_STATE["args"]
    return _one_replicate(spec, options, index)


def run_replicates(spec: DgpSpec, r: int, options: PipelineOptions,
                   workers: int = 1) -> ReplicateSummary:
    """Run the full pipeline on r replicate datasets and aggregate.

    Replicates are indexed 1..r; aggregation happens in index order, so the
    result is identical for any worker count.
    """
    if r < 1:
        raise ValueError("need at least one replicate")
    indices = range(1, r + 1)
    if workers <= 1 or r == 1:
        rows = []
        for index in indices:
            try:
                rows.append(_one_replicate(spec, options, index))
            except Exception as exc:
                raise RuntimeError(f"replicate {index} failed: {exc}") from exc
    else:
        with ProcessPoolExecutor(max_workers=workers,
                                 initializer=_init_sim_worker,
                                 initargs=(spec, options)) as pool:
            rows = list(pool.map(_run_sim_replicate, indices))

    psi = np.vstack([row["psi"] for row in rows])
    se = np.vstack([row["se"] for row in rows])
    ci_lo = np.vstack([row["ci_lo"] for row in rows])
    ci_hi = np.vstack([row["ci_hi"] for row in rows])
    p_mod = np.vstack([row["p_mod"] for row in rows])
    p_adj_mod = np.vstack([row["p_adj_mod"] for row in rows])
    wald_p = np.vstack([row["wald_p"] for row in rows])
    p_adj_unmod = np.vstack([row["p_adj_unmod"] for row in rows])
    naive = np.vstack([row["naive"] for row in rows])

    truth = spec.true_psi
    covered = (ci_lo <= truth[None, :]) & (truth[None, :] <= ci_hi)
    null_mask = truth == 0.0

    disc_mod = p_adj_mod <= options.fdr_q
    disc_unmod = p_adj_unmod <= options.fdr_q
    false_mod = disc_mod & null_mask[None, :]
    false_unmod = disc_unmod & null_mask[None, :]
    fdp_mod = false_mod.sum(axis=1) / np.maximum(disc_mod.sum(axis=1), 1)
    fdp_unmod = false_unmod.sum(axis=1) / np.maximum(disc_unmod.sum(axis=1), 1)

    return ReplicateSummary(
        biomarker_ids=rows[0]["ids"],
        true_psi=truth,
        replicates=r,
        bias=psi.mean(axis=0) - truth,
        sd_psi=psi.std(axis=0, ddof=1) if r > 1 else np.full(spec.b, np.nan),
        mean_se=se.mean(axis=0),
        coverage=covered.mean(axis=0),
        rej_mod=(p_mod < options.alpha).mean(axis=0),
        rej_unmod=(wald_p < options.alpha).mean(axis=0),
        fdr_contrib=false_mod.mean(axis=0),
        naive_bias=naive.mean(axis=0) - truth,
        fdr_mod=float(fdp_mod.mean()),
        fdr_unmod=float(fdp_unmod.mean()),
        mean_discoveries_mod=float(disc_mod.sum(axis=1).mean()),
        mean_discoveries_unmod=float(disc_unmod.sum(axis=1).mean()),
    )


def null_spec(n: int, b: int, p: int = 3, noise_sd: float = 1.0, seed: int = 1) -> DgpSpec:
    """No effect anywhere; covariates influence outcomes but not exposure."""
    return DgpSpec(n=n, b=b, p=p, true_psi=np.zeros(b),
                   confounding_strength=np.ones(p), exposure_coef=np.zeros(p),
                   noise_sd=noise_sd, seed=seed)


def confounded_spec(n: int, b: int, p: int = 3, n_signals: int = 0,
                    signal: float = 1.0, noise_sd: float = 1.0, seed: int = 1,
                    gamma: tuple[float, ...] | None = None) -> DgpSpec:
    """Confounded DGP: covariates drive both exposure and outcomes."""
    true_psi = np.zeros(b)
    true_psi[:n_signals] = signal
    if gamma is None:
        base = (0.3, -0.2, 0.1)
        gamma = tuple(base[i % 3] for i in range(p))
    return DgpSpec(n=n, b=b, p=p, true_psi=true_psi,
                   confounding_strength=np.ones(p),
                   exposure_coef=np.asarray(gamma, dtype=float),
                   noise_sd=noise_sd, seed=seed)
