import numpy as np
import pytest

from tmlescreen.data import (
    ConfounderMatrix,
    ExposureVector,
    ExpressionMatrix,
    ObservationSet,
)


def make_observation_set(n=20, b=3, p=2, seed=0, psi=0.0):
    """Small synthetic ObservationSet with a linear outcome model."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, p))
    a = rng.binomial(1, 0.5, size=n)
    while a.min() == a.max():
        a = rng.binomial(1, 0.5, size=n)
    beta = rng.normal(0, 0.5, size=(b, p))
    y = psi * a[None, :] + beta @ w.T + rng.normal(0, 1.0, size=(b, n))
    return ObservationSet(
        w=ConfounderMatrix(
            values=w,
            column_names=tuple(f"w{j}" for j in range(p)),
            column_kinds=tuple("continuous" for _ in range(p)),
        ),
        a=ExposureVector(values=a),
        y=ExpressionMatrix(values=y, biomarker_ids=tuple(f"bm{i}" for i in range(b))),
        subject_ids=tuple(f"s{i:03d}" for i in range(n)),
    )


@pytest.fixture
def small_obs():
    return make_observation_set()
