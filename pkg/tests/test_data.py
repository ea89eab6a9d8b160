import numpy as np
import pytest

from tmlescreen.data import (
    ExposureVector,
    assign_folds,
    default_fold_count,
    load_observation_set,
    write_observation_set,
)
from tmlescreen.errors import (
    AlignmentError,
    ConstantExposureError,
    InvalidFoldCount,
    MissingValueError,
    ParseError,
)
from tmlescreen.simulation import confounded_spec, generate

from conftest import make_observation_set

EXPR_3 = "biomarker_id\ts1\ts2\ts3\nbmA\t1.0\t2.0\t3.0\nbmB\t0.5\t-1.5\t2.5e-1\n"
PHENO_3 = "id\texposure\tage\tsmoker\ns1\t1\t35.2\t0\ns2\t0\t41.0\t1\ns3\t1\t29.5\t0\n"


def write_pair(tmp_path, expr=EXPR_3, pheno=PHENO_3):
    e = tmp_path / "expr.tsv"
    p = tmp_path / "pheno.tsv"
    e.write_text(expr)
    p.write_text(pheno)
    return e, p


def test_load_three_subject_fixture(tmp_path):
    e, p = write_pair(tmp_path)
    obs = load_observation_set(e, p, "exposure", ["age", "smoker"])
    assert obs.n == 3
    assert obs.subject_ids == ("s1", "s2", "s3")
    assert obs.y.biomarker_ids == ("bmA", "bmB")
    np.testing.assert_array_equal(obs.a.values, [1, 0, 1])
    np.testing.assert_allclose(obs.y.values[1], [0.5, -1.5, 0.25])
    assert obs.w.column_kinds == ("continuous", "binary")


def test_constant_exposure_rejected(tmp_path):
    pheno = PHENO_3.replace("s2\t0", "s2\t1")
    e, p = write_pair(tmp_path, pheno=pheno)
    with pytest.raises(ConstantExposureError):
        load_observation_set(e, p, "exposure", ["age"])


def test_subject_mismatch_rejected(tmp_path):
    pheno = PHENO_3.replace("s3\t", "s4\t")
    e, p = write_pair(tmp_path, pheno=pheno)
    with pytest.raises(AlignmentError, match="s3"):
        load_observation_set(e, p, "exposure", ["age"])


def test_missing_value_is_hard_error(tmp_path):
    e, p = write_pair(tmp_path, expr=EXPR_3.replace("\t2.0\t", "\tNA\t"))
    with pytest.raises(MissingValueError):
        load_observation_set(e, p, "exposure", ["age"])


def test_non_numeric_cell_is_parse_error(tmp_path):
    e, p = write_pair(tmp_path, expr=EXPR_3.replace("\t2.0\t", "\ttwo\t"))
    with pytest.raises(ParseError):
        load_observation_set(e, p, "exposure", ["age"])


def test_ragged_row_is_parse_error(tmp_path):
    e, p = write_pair(tmp_path, expr=EXPR_3.replace("bmB\t0.5\t-1.5\t2.5e-1\n", "bmB\t0.5\t-1.5\n"))
    with pytest.raises(ParseError):
        load_observation_set(e, p, "exposure", ["age"])


def test_missing_column_is_parse_error(tmp_path):
    e, p = write_pair(tmp_path)
    with pytest.raises(ParseError, match="bmi"):
        load_observation_set(e, p, "exposure", ["bmi"])


def test_non_binary_exposure_rejected(tmp_path):
    e, p = write_pair(tmp_path, pheno=PHENO_3.replace("s1\t1\t", "s1\t2\t"))
    with pytest.raises(ParseError):
        load_observation_set(e, p, "exposure", ["age"])


def test_round_trip_is_byte_stable(tmp_path):
    obs = generate(confounded_spec(n=12, b=4, n_signals=1, seed=5), 1)
    e1, p1 = tmp_path / "e1.tsv", tmp_path / "p1.tsv"
    write_observation_set(obs, e1, p1)
    loaded = load_observation_set(e1, p1, "exposure", list(obs.w.column_names))
    np.testing.assert_array_equal(loaded.y.values, obs.y.values)
    np.testing.assert_array_equal(loaded.w.values, obs.w.values)
    np.testing.assert_array_equal(loaded.a.values, obs.a.values)
    assert loaded.subject_ids == obs.subject_ids

    e2, p2 = tmp_path / "e2.tsv", tmp_path / "p2.tsv"
    write_observation_set(loaded, e2, p2)
    assert e2.read_bytes() == e1.read_bytes()
    assert p2.read_bytes() == p1.read_bytes()


def test_subject_permutation_permutes_observation_set(tmp_path):
    obs = make_observation_set(n=8, b=2, p=2, seed=3)
    e1, p1 = tmp_path / "e1.tsv", tmp_path / "p1.tsv"
    write_observation_set(obs, e1, p1)
    base = load_observation_set(e1, p1, "exposure", list(obs.w.column_names))

    rng = np.random.default_rng(0)
    perm = rng.permutation(obs.n)
    lines = e1.read_text().splitlines()
    header = lines[0].split("\t")
    permuted_header = [header[0]] + [header[1 + i] for i in perm]
    rows = []
    for line in lines[1:]:
        cells = line.split("\t")
        rows.append("\t".join([cells[0]] + [cells[1 + i] for i in perm]))
    (tmp_path / "e_perm.tsv").write_text("\t".join(permuted_header) + "\n" + "\n".join(rows) + "\n")

    permuted = load_observation_set(tmp_path / "e_perm.tsv", p1, "exposure", list(obs.w.column_names))
    assert permuted.subject_ids == tuple(base.subject_ids[i] for i in perm)
    np.testing.assert_array_equal(permuted.y.values, base.y.values[:, perm])
    np.testing.assert_array_equal(permuted.w.values, base.w.values[perm])
    np.testing.assert_array_equal(permuted.a.values, base.a.values[perm])


def test_leave_one_out_folds():
    exposure = ExposureVector(values=np.array([1, 0] * 5))
    folds = assign_folds(10, 10, exposure, seed=4)
    assert sorted(folds.fold_of_subject) == list(range(1, 11))


def test_stratified_halving():
    exposure = ExposureVector(values=np.array([1] * 5 + [0] * 5))
    folds = assign_folds(10, 2, exposure, seed=4)
    for fold in (1, 2):
        members = folds.members(fold)
        assert members.size == 5
        arms = exposure.values[members]
        assert arms.min() == 0 and arms.max() == 1


def test_fold_assignment_is_deterministic():
    exposure = ExposureVector(values=np.array([1, 0, 1, 0, 1, 0, 0, 1, 1, 0, 1]))
    a = assign_folds(11, 3, exposure, seed=9)
    b = assign_folds(11, 3, exposure, seed=9)
    np.testing.assert_array_equal(a.fold_of_subject, b.fold_of_subject)
    c = assign_folds(11, 3, exposure, seed=10)
    assert not np.array_equal(a.fold_of_subject, c.fold_of_subject)


def test_folds_partition_all_subjects():
    rng = np.random.default_rng(7)
    for trial in range(20):
        n = int(rng.integers(6, 40))
        a = rng.binomial(1, 0.5, size=n)
        if a.min() == a.max():
            a[0] = 1 - a[0]
        v = int(rng.integers(2, min(n, 10) + 1))
        folds = assign_folds(n, v, ExposureVector(values=a), seed=trial)
        seen = np.concatenate([folds.members(f) for f in range(1, v + 1)])
        assert sorted(seen) == list(range(n))
        sizes = [folds.members(f).size for f in range(1, v + 1)]
        assert max(sizes) - min(sizes) <= 1


def test_stratification_when_feasible():
    a = np.array([1] * 6 + [0] * 9)
    folds = assign_folds(15, 3, ExposureVector(values=a), seed=2)
    for f in (1, 2, 3):
        arms = a[folds.members(f)]
        assert arms.min() == 0 and arms.max() == 1


def test_invalid_fold_count():
    exposure = ExposureVector(values=np.array([0, 1, 0, 1]))
    with pytest.raises(InvalidFoldCount):
        assign_folds(4, 1, exposure, seed=0)
    with pytest.raises(InvalidFoldCount):
        assign_folds(4, 5, exposure, seed=0)


def test_default_fold_count():
    assert default_fold_count(30) == 5
    assert default_fold_count(50) == 10
    assert default_fold_count(500) == 10
