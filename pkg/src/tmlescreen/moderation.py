"""Joint small-sample inference over the influence-curve matrix.

Rows of the matrix are the per-subject influence-curve values shifted by
the point estimate, so each row has the estimate as its mean and the
influence-curve variance as its variance. Hyperparameters of the
variance-pooling hierarchy are estimated by the closed-form method of
moments on log variances (digamma/trigamma), variances are shrunk on the
variance scale, and two-sided p-values come from a Student-t with
d0 + d_b degrees of freedom (normal once the df cap is hit). Unmoderated
Wald statistics are computed alongside for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import DegenerateVariances, LengthMismatch, OutOfRangeP
from .tmle import TmleFit

D0_MAX = 1e6
DF_NORMAL_CUTOFF = 1e6
ZERO_VARIANCE_FLAG = "zero-variance"


@dataclass(frozen=True)
class InfluenceMatrix:
    """B x n matrix of influence-curve values plus the estimate per row."""

    values: np.ndarray
    psi: np.ndarray
    biomarker_ids: tuple[str, ...]
    d_b: int

    @property
    def b(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def row_variances(self) -> np.ndarray:
        return self.values.var(axis=1, ddof=1)


@dataclass(frozen=True)
class EbHyperparameters:
    """Prior degrees of freedom and prior variance of the pooling hierarchy."""

    d0: float
    s0_sq: float

    def __post_init__(self):
        if not (self.d0 > 0 and np.isfinite(self.s0_sq) and self.s0_sq > 0):
            raise ValueError("d0 must be positive and s0_sq positive finite")


@dataclass(frozen=True)
class ModeratedResult:
    """Per-biomarker inference columns plus the shared hyperparameters."""

    biomarker_ids: tuple[str, ...]
    psi: np.ndarray
    sigma: np.ndarray
    sigma_tilde_sq: np.ndarray
    se_moderated: np.ndarray
    t_tilde: np.ndarray
    df_total: float
    p_raw: np.ndarray
    p_adj: np.ndarray
    wald_p: np.ndarray
    wald_ci_lo: np.ndarray
    wald_ci_hi: np.ndarray
    rank: np.ndarray
    flags: tuple[str, ...]
    hyperparameters: EbHyperparameters | None
    mode: str


def assemble_ic_matrix(fits: list[TmleFit], ids) -> InfluenceMatrix:
    """Stack influence curves, shifting each row by its estimate."""
    ids = tuple(ids)
    if len(fits) != len(ids):
        raise LengthMismatch("number of fits does not match number of ids")
    lengths = {fit.ic.shape[0] for fit in fits}
    if len(lengths) > 1:
        raise LengthMismatch("influence curves have differing lengths")
    values = np.vstack([fit.ic + fit.psi for fit in fits])
    psi = np.array([fit.psi for fit in fits])
    return InfluenceMatrix(values=values, psi=psi, biomarker_ids=ids,
                           d_b=values.shape[1] - 1)


def trigamma_inverse(x: float, max_iter: int = 50, tol: float = 1e-8) -> float:
    """Solve trigamma(y) = x for y > 0 by monotone Newton iteration."""
    if x <= 0:
        raise ValueError("trigamma inverse needs a positive argument")
    # asymptotic regimes where Newton is unnecessary
    if x > 1e7:
        return 1.0 / np.sqrt(x)
    if x < 1e-6:
        return 1.0 / x
    y = 0.5 + 1.0 / x
    for _ in range(max_iter):
        tri = special.polygamma(1, y)
        step = tri * (1.0 - tri / x) / special.polygamma(2, y)
        y += step
        if -step / y < tol:
            break
    return float(y)


def estimate_hyperparameters(row_variances: np.ndarray, d_b: int) -> EbHyperparameters:
    """Method of moments on log variances.

    With e_b = log s_b^2 - digamma(d_b/2) + log(d_b/2), the moment
    equations are trigamma(d0/2) = var(e) - trigamma(d_b/2) and
    s0^2 = exp(mean(e) + digamma(d0/2) - log(d0/2)). A nonpositive
    right-hand side means no detectable spread, so d0 caps at D0_MAX.
    """
    s2 = np.asarray(row_variances, dtype=float)
    if s2.size < 2:
        raise DegenerateVariances("need at least 2 variances to pool")
    if (s2 <= 0).any() or not np.isfinite(s2).all():
        raise DegenerateVariances("variances must be positive and finite")
    half_db = d_b / 2.0
    e = np.log(s2) - special.digamma(half_db) + np.log(half_db)
    evar = float(e.var(ddof=1))
    rhs = evar - float(special.polygamma(1, half_db))
    if rhs <= float(special.polygamma(1, D0_MAX / 2.0)):
        d0 = D0_MAX
    else:
        d0 = min(2.0 * trigamma_inverse(rhs), D0_MAX)
    s0_sq = float(np.exp(e.mean() + special.digamma(d0 / 2.0) - np.log(d0 / 2.0)))
    return EbHyperparameters(d0=d0, s0_sq=s0_sq)


def moderate_variances(sigma_sq: np.ndarray, hp: EbHyperparameters, d_b: int) -> np.ndarray:
    """Pooled variance (d0*s0^2 + d_b*s^2) / (d0 + d_b), variance scale."""
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    return (hp.d0 * hp.s0_sq + d_b * sigma_sq) / (hp.d0 + d_b)


def moderated_t(psi: np.ndarray, sigma_tilde_sq: np.ndarray, n: int) -> np.ndarray:
    """sqrt(n) * estimate / pooled sd."""
    return np.sqrt(n) * np.asarray(psi) / np.sqrt(np.asarray(sigma_tilde_sq))


def p_values(t_tilde: np.ndarray, df_total: float) -> np.ndarray:
    """Two-sided p from Student-t; normal once df reaches the cap."""
    if df_total <= 0:
        raise ValueError("df_total must be positive")
    t_abs = np.abs(np.asarray(t_tilde, dtype=float))
    if df_total >= DF_NORMAL_CUTOFF:
        return 2.0 * stats.norm.sf(t_abs)
    return 2.0 * stats.t.sf(t_abs, df=df_total)


def wald_inference(psi: float, sigma: float, n: int, alpha: float = 0.05):
    """Normal-theory p-value and (1-alpha) CI from the IC standard error.

    The CI uses the two-sided z quantile at 1 - alpha/2. A zero sigma gives
    a degenerate interval at the estimate, with p = 0 unless the estimate
    is itself zero.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if sigma == 0.0:
        p = 1.0 if psi == 0.0 else 0.0
        return p, (psi, psi)
    se = sigma / np.sqrt(n)
    z = abs(psi) / se
    p = float(2.0 * stats.norm.sf(z))
    margin = float(stats.norm.ppf(1.0 - alpha / 2.0)) * se
    return p, (psi - margin, psi + margin)


def bh_adjust(p_raw: np.ndarray) -> np.ndarray:
    """Step-up adjusted p-values, returned in the input order."""
    p = np.asarray(p_raw, dtype=float)
    if p.size and ((p < 0).any() or (p > 1).any() or not np.isfinite(p).all()):
        raise OutOfRangeP("p-values must lie in [0, 1]")
    b = p.size
    if b <= 1:
        return p.copy()
    order = np.argsort(p, kind="stable")
    scaled = p[order] * b / np.arange(1, b + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(b)
    out[order] = np.minimum(adjusted, 1.0)
    return out


def _two_group_stats(values: np.ndarray, exposed: np.ndarray):
    """Row-wise two-sample pieces: mean difference and pooled variance."""
    x1 = values[:, exposed]
    x0 = values[:, ~exposed]
    n1, n0 = x1.shape[1], x0.shape[1]
    diff = x1.mean(axis=1) - x0.mean(axis=1)
    ss = ((x1 - x1.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
    ss += ((x0 - x0.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
    pooled = ss / (n1 + n0 - 2)
    scale = np.sqrt(1.0 / n1 + 1.0 / n0)
    return diff, pooled, scale


def moderate(im: InfluenceMatrix, exposure: np.ndarray, mode: str = "one-sample",
             alpha: float = 0.05, fdr_q: float = 0.05) -> ModeratedResult:
    """Full inference pass over an influence matrix.

    ``mode``: "one-sample" tests each row mean against zero with
    d_b = n - 1; "two-group" runs a row-wise two-sample moderated test
    between exposure arms with d_b = n - 2; "off" bypasses shrinkage so the
    raw p-values equal the unmoderated Wald p-values.
    """
    if mode not in ("one-sample", "two-group", "off"):
        raise ValueError(f"unknown moderation mode {mode!r}")
    b, n = im.b, im.n
    sigma = np.sqrt(im.row_variances())
    psi = im.psi

    wald = [wald_inference(psi[i], sigma[i], n, alpha) for i in range(b)]
    wald_p = np.array([w[0] for w in wald])
    wald_lo = np.array([w[1][0] for w in wald])
    wald_hi = np.array([w[1][1] for w in wald])

    flags = [""] * b
    hp = None

    if mode == "off":
        sigma_tilde_sq = sigma ** 2
        se_mod = sigma / np.sqrt(n)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_tilde = np.where(sigma > 0, np.sqrt(n) * psi / sigma,
                               np.where(psi == 0, 0.0, np.sign(psi) * np.inf))
        df_total = float("inf")
        p_raw = wald_p.copy()
    else:
        if mode == "one-sample":
            d_b = n - 1
            effect = psi
            base_var = sigma ** 2
            scale = 1.0 / np.sqrt(n)
        else:
            d_b = n - 2
            exposed = np.asarray(exposure) == 1
            effect, base_var, group_scale = _two_group_stats(im.values, exposed)
            scale = group_scale

        positive = base_var > 0
        if positive.sum() < 2:
            raise DegenerateVariances("fewer than 2 biomarkers with positive variance")
        hp = estimate_hyperparameters(base_var[positive], d_b)
        sigma_tilde_sq = moderate_variances(base_var, hp, d_b)
        if not positive.all():
            sigma_tilde_sq = np.where(positive, sigma_tilde_sq, hp.s0_sq)
            for i in np.flatnonzero(~positive):
                flags[i] = ZERO_VARIANCE_FLAG
        se_mod = np.sqrt(sigma_tilde_sq) * scale
        t_tilde = effect / se_mod
        df_total = float(min(hp.d0 + d_b, DF_NORMAL_CUTOFF))
        p_raw = p_values(t_tilde, df_total)

    p_adj = bh_adjust(p_raw)

    order = sorted(range(b), key=lambda i: (p_adj[i], p_raw[i], im.biomarker_ids[i]))
    rank = np.empty(b, dtype=int)
    for position, i in enumerate(order, start=1):
        rank[i] = position

    return ModeratedResult(
        biomarker_ids=im.biomarker_ids,
        psi=psi,
        sigma=sigma,
        sigma_tilde_sq=sigma_tilde_sq,
        se_moderated=se_mod,
        t_tilde=t_tilde,
        df_total=df_total,
        p_raw=p_raw,
        p_adj=p_adj,
        wald_p=wald_p,
        wald_ci_lo=wald_lo,
        wald_ci_hi=wald_hi,
        rank=rank,
        flags=tuple(flags),
        hyperparameters=hp,
        mode=mode,
    )
