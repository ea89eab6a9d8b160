"""Loading, validation, and alignment of study data.

Canonical on-disk format is tab-separated text with a header row:

* expression file: rows are biomarkers, columns are subjects; the first
  column holds biomarker identifiers.
* phenotype file: rows are subjects; one subject-id column (default
  ``id``) plus the exposure column and any confounder columns.

Subjects are kept in the order of the expression header. Missing values
are a hard error everywhere: silent imputation would change the estimand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AlignmentError,
    ConstantExposureError,
    InvalidFoldCount,
    MissingValueError,
    ParseError,
)

MISSING_TOKENS = {"", "na", "nan", "null", "none"}

CONTINUOUS = "continuous"
BINARY = "binary"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ConfounderMatrix:
    """Subject-by-confounder matrix with per-column kind tags."""

    values: np.ndarray
    column_names: tuple[str, ...]
    column_kinds: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("confounder matrix must be 2-D")
        n, p = values.shape
        if n < 2:
            raise ValueError("need at least 2 subjects")
        if len(self.column_names) != p or len(self.column_kinds) != p:
            raise ValueError("column metadata length does not match matrix width")
        if not np.isfinite(values).all():
            raise MissingValueError("confounder matrix contains missing or non-finite values")
        for j, kind in enumerate(self.column_kinds):
            if kind not in (CONTINUOUS, BINARY):
                raise ValueError(f"unknown column kind {kind!r}")
            if kind == BINARY and not np.isin(values[:, j], (0.0, 1.0)).all():
                raise ValueError(f"binary column {self.column_names[j]!r} has values outside {{0,1}}")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "column_kinds", tuple(self.column_kinds))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ExposureVector:
    """Binary exposure indicator per subject; must contain both arms."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise ValueError("exposure must be a vector")
        as_int = values.astype(int)
        if not np.array_equal(values.astype(float), as_int.astype(float)):
            raise ValueError("exposure entries must be integral")
        if not np.isin(as_int, (0, 1)).all():
            raise ValueError("exposure entries must be 0 or 1")
        if as_int.min() == as_int.max():
            raise ConstantExposureError("exposure is constant; need both exposed and unexposed subjects")
        object.__setattr__(self, "values", _freeze(as_int))

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ExpressionMatrix:
    """Biomarker-by-subject outcome matrix."""

    values: np.ndarray
    biomarker_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("expression matrix must be 2-D")
        if not np.isfinite(values).all():
            raise MissingValueError("expression matrix contains missing or non-finite values")
        ids = tuple(self.biomarker_ids)
        if len(ids) != values.shape[0]:
            raise ValueError("biomarker id count does not match row count")
        if len(set(ids)) != len(ids):
            raise ValueError("biomarker ids are not unique")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "biomarker_ids", ids)

    @property
    def b(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ObservationSet:
    """Aligned (confounders, exposure, expression) for one study.

    Immutable after construction; safe to share across worker processes.
    """

    w: ConfounderMatrix
    a: ExposureVector
    y: ExpressionMatrix
    subject_ids: tuple[str, ...]

    def __post_init__(self):
        ids = tuple(self.subject_ids)
        n = len(ids)
        if len(set(ids)) != n:
            raise AlignmentError("subject ids are not unique")
        if not (self.w.n == self.a.n == self.y.n == n):
            raise AlignmentError(
                f"inconsistent subject counts: w={self.w.n} a={self.a.n} y={self.y.n} ids={n}"
            )
        object.__setattr__(self, "subject_ids", ids)

    @property
    def n(self) -> int:
        return len(self.subject_ids)

    @property
    def n_biomarkers(self) -> int:
        return self.y.b


@dataclass(frozen=True)
class FoldAssignment:
    """Cross-validation fold labels in 1..v, stratified by exposure."""

    fold_of_subject: np.ndarray
    v: int
    seed: int

    def __post_init__(self):
        labels = np.asarray(self.fold_of_subject, dtype=int)
        if labels.min() < 1 or labels.max() > self.v:
            raise ValueError("fold labels out of range")
        counts = np.bincount(labels, minlength=self.v + 1)[1:]
        if (counts == 0).any():
            raise ValueError("every fold must be nonempty")
        if counts.max() - counts.min() > 1:
            raise ValueError("fold sizes may differ by at most 1")
        object.__setattr__(self, "fold_of_subject", _freeze(labels))

    def members(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_subject == fold)


def default_fold_count(n: int) -> int:
    """Default V: 10 folds, dropping to 5 for small studies."""
    return 5 if n < 50 else 10


def assign_folds(n: int, v: int, exposure: ExposureVector, seed: int) -> FoldAssignment:
    """Deterministic exposure-stratified fold assignment.

    Shuffles exposed and unexposed subjects separately with a seeded
    generator, then deals them around the folds in one continuous cycle,
    so total fold sizes differ by at most one and each fold receives both
    arms whenever the arm counts allow it.
    """
    if not 2 <= v <= n:
        raise InvalidFoldCount(f"fold count v={v} must satisfy 2 <= v <= n={n}")
    if exposure.n != n:
        raise ValueError("exposure length does not match n")
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=int)
    cursor = 0
    for arm in (1, 0):
        members = np.flatnonzero(exposure.values == arm)
        members = members[rng.permutation(members.size)]
        for idx in members:
            labels[idx] = cursor % v + 1
            cursor += 1
    return FoldAssignment(fold_of_subject=labels, v=v, seed=seed)


# -- TSV parsing ---------------------------------------------------------------

def _read_table(path) -> list[list[str]]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh, delimiter="\t"))
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8 ({exc})") from exc
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc})") from exc
    if not rows:
        raise ParseError(f"{path}: file is empty")
    width = len(rows[0])
    if width < 2:
        raise ParseError(f"{path}: header has fewer than 2 columns")
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}: row {i + 1} has {len(row)} fields, expected {width}")
    return rows


def _parse_cell(token: str, path, where: str) -> float:
    if token.strip().lower() in MISSING_TOKENS:
        raise MissingValueError(f"{path}: missing value at {where}")
    try:
        value = float(token)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric value {token!r} at {where}") from exc
    if not math.isfinite(value):
        raise MissingValueError(f"{path}: non-finite value {token!r} at {where}")
    return value


def _infer_kind(column: np.ndarray) -> str:
    return BINARY if np.isin(column, (0.0, 1.0)).all() else CONTINUOUS


def load_observation_set(
    expression_path,
    phenotype_path,
    exposure_column: str,
    confounder_columns: list[str] | tuple[str, ...],
    id_column: str = "id",
) -> ObservationSet:
    """Load and align the two canonical TSV files into an ObservationSet.

    Subjects are ordered as in the expression header. A subject present in
    only one of the files is an error, never silently dropped.
    """
    expr_rows = _read_table(expression_path)
    pheno_rows = _read_table(phenotype_path)

    subject_ids = tuple(expr_rows[0][1:])
    if len(set(subject_ids)) != len(subject_ids):
        raise AlignmentError(f"{expression_path}: duplicate subject ids in header")

    biomarker_ids = []
    expr_values = np.empty((len(expr_rows) - 1, len(subject_ids)))
    for i, row in enumerate(expr_rows[1:]):
        biomarker_ids.append(row[0])
        for j, token in enumerate(row[1:]):
            expr_values[i, j] = _parse_cell(token, expression_path, f"row {i + 2}, column {j + 2}")
    if len(set(biomarker_ids)) != len(biomarker_ids):
        raise ParseError(f"{expression_path}: duplicate biomarker ids")

    header = pheno_rows[0]
    positions = {}
    for name in [id_column, exposure_column, *confounder_columns]:
        hits = [k for k, col in enumerate(header) if col == name]
        if not hits:
            raise ParseError(f"{phenotype_path}: column {name!r} not found")
        if len(hits) > 1:
            raise ParseError(f"{phenotype_path}: column {name!r} appears more than once")
        positions[name] = hits[0]

    pheno_ids = [row[positions[id_column]] for row in pheno_rows[1:]]
    if len(set(pheno_ids)) != len(pheno_ids):
        raise AlignmentError(f"{phenotype_path}: duplicate subject ids")
    expr_set, pheno_set = set(subject_ids), set(pheno_ids)
    if expr_set != pheno_set:
        only_expr = sorted(expr_set - pheno_set)
        only_pheno = sorted(pheno_set - expr_set)
        raise AlignmentError(
            "subject ids differ between files; "
            f"only in expression: {only_expr or 'none'}, only in phenotype: {only_pheno or 'none'}"
        )
    row_of = {sid: row for sid, row in zip(pheno_ids, pheno_rows[1:])}

    n = len(subject_ids)
    exposure = np.empty(n)
    confounders = np.empty((n, len(confounder_columns)))
    for i, sid in enumerate(subject_ids):
        row = row_of[sid]
        exposure[i] = _parse_cell(
            row[positions[exposure_column]], phenotype_path, f"subject {sid!r}, column {exposure_column!r}"
        )
        for j, name in enumerate(confounder_columns):
            confounders[i, j] = _parse_cell(
                row[positions[name]], phenotype_path, f"subject {sid!r}, column {name!r}"
            )

    if not np.isin(exposure, (0.0, 1.0)).all():
        raise ParseError(f"{phenotype_path}: exposure column {exposure_column!r} must be 0/1")

    kinds = tuple(_infer_kind(confounders[:, j]) for j in range(confounders.shape[1]))
    return ObservationSet(
        w=ConfounderMatrix(values=confounders, column_names=tuple(confounder_columns), column_kinds=kinds),
        a=ExposureVector(values=exposure.astype(int)),
        y=ExpressionMatrix(values=expr_values, biomarker_ids=tuple(biomarker_ids)),
        subject_ids=subject_ids,
    )


def write_observation_set(
    obs: ObservationSet,
    expression_path,
    phenotype_path,
    exposure_column: str = "exposure",
    id_column: str = "id",
) -> None:
    """Serialize an ObservationSet back to the canonical TSV pair.

    Numbers are written with 17 significant digits so that a load/write
    round trip is byte-stable.
    """
    with open(expression_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("biomarker_id\t" + "\t".join(obs.subject_ids) + "\n")
        for b, bid in enumerate(obs.y.biomarker_ids):
            cells = "\t".join(format(x, ".17g") for x in obs.y.values[b])
            fh.write(f"{bid}\t{cells}\n")
    with open(phenotype_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join([id_column, exposure_column, *obs.w.column_names]) + "\n")
        for i, sid in enumerate(obs.subject_ids):
            cells = "\t".join(format(x, ".17g") for x in obs.w.values[i])
            line = f"{sid}\t{obs.a.values[i]:d}"
            if obs.w.p:
                line += "\t" + cells
            fh.write(line + "\n")
