"""Dataset invariants and the CSV schema (line-numbered errors, round trips)."""

import numpy as np
import numpy.testing as npt
import pytest

from transport_synth.data import (
    DataError,
    StudyDataset,
    read_study_csv,
    read_two_file_csv,
    write_study_csv,
)

NAN = np.nan


def small_dataset():
    # two target rows (V, W observed), two trial rows (A, Y, V, W observed)
    return StudyDataset(
        r=[1, 1, 2, 2],
        a=[NAN, NAN, 0, 1],
        y=[NAN, NAN, 0, 1],
        v=[22, 27, 24, 29],
        w=[1, 0, 0, 0],
    )


# ---------------------------------------------------------------------------
# construction invariants


def test_valid_dataset_masks_and_counts():
    data = small_dataset()
    assert data.n == 4
    assert data.n_target == 2 and data.n_trial == 2
    npt.assert_array_equal(data.target, [True, True, False, False])
    npt.assert_array_equal(data.trial, [False, False, True, True])
    assert data.r.dtype == np.int64
    assert set(data.columns()) == {"A", "Y", "V", "W"}


def test_target_rows_may_omit_treatment_and_outcome():
    data = small_dataset()
    assert np.isnan(data.a[:2]).all() and np.isnan(data.y[:2]).all()


def test_length_mismatch():
    with pytest.raises(DataError, match="column Y has length 3, but R has length 4"):
        StudyDataset(r=[1, 1, 2, 2], a=[NAN] * 4, y=[NAN] * 3, v=[20] * 4, w=[0] * 4)


def test_empty_dataset():
    with pytest.raises(DataError, match="dataset is empty"):
        StudyDataset(r=[], a=[], y=[], v=[], w=[])


def test_bad_population_code_reports_row():
    with pytest.raises(DataError, match="R must be 1 or 2") as exc:
        StudyDataset(r=[1, 3, 2], a=[NAN, 0, 0], y=[NAN, 0, 0], v=[20] * 3, w=[0] * 3)
    assert exc.value.row == 1


def test_single_population_rejected():
    with pytest.raises(DataError, match="no trial rows"):
        StudyDataset(r=[1, 1], a=[NAN] * 2, y=[NAN] * 2, v=[20, 21], w=[0, 1])
    with pytest.raises(DataError, match="no target-population rows"):
        StudyDataset(r=[2, 2], a=[0, 1], y=[0, 1], v=[20, 21], w=[0, 0])


def test_trial_rows_require_treatment_and_outcome():
    with pytest.raises(DataError, match="non-missing A") as exc:
        StudyDataset(r=[1, 2], a=[NAN, NAN], y=[NAN, 1], v=[20, 21], w=[0, 0])
    assert exc.value.row == 1
    with pytest.raises(DataError, match="non-missing Y"):
        StudyDataset(r=[1, 2], a=[NAN, 1], y=[NAN, NAN], v=[20, 21], w=[0, 0])


def test_target_rows_require_covariates():
    with pytest.raises(DataError, match="non-missing V") as exc:
        StudyDataset(r=[1, 2], a=[NAN, 1], y=[NAN, 1], v=[NAN, 21], w=[0, 0])
    assert exc.value.row == 0
    with pytest.raises(DataError, match="non-missing W"):
        StudyDataset(r=[1, 2], a=[NAN, 1], y=[NAN, 1], v=[20, 21], w=[NAN, 0])


@pytest.mark.parametrize("column", ["A", "Y", "W"])
def test_binary_columns_validated(column):
    fields = {
        "r": [1, 2],
        "a": [NAN, 1.0],
        "y": [NAN, 1.0],
        "v": [20.0, 21.0],
        "w": [0.0, 0.0],
    }
    fields[column.lower()] = [fields[column.lower()][0], 2.0]
    with pytest.raises(DataError, match=f"column {column} must be 0 or 1"):
        StudyDataset(**fields)


def test_trial_covariates_may_be_missing():
    # V/W are only required on target rows.
    data = StudyDataset(r=[1, 2], a=[NAN, 1], y=[NAN, 0], v=[20, NAN], w=[1, NAN])
    assert np.isnan(data.v[1]) and np.isnan(data.w[1])


def test_subset_keeps_invariants():
    data = small_dataset()
    kept = data.subset(np.array([True, False, True, False]))
    assert kept.n == 2 and kept.n_target == 1 and kept.n_trial == 1
    with pytest.raises(DataError, match="no trial rows"):
        data.subset(data.target)


# ---------------------------------------------------------------------------
# combined CSV round trip


def test_write_read_round_trip(tmp_path):
    data = StudyDataset(
        r=[1, 1, 2, 2, 2],
        a=[NAN, NAN, 0, 1, 1],
        y=[NAN, NAN, 0, 0, 1],
        v=[22.0, 27.5, 24.0, NAN, 29.0],
        w=[1, 0, 0, 0, NAN],
    )
    path = tmp_path / "study.csv"
    write_study_csv(data, str(path))
    back = read_study_csv(str(path))
    npt.assert_array_equal(back.r, data.r)
    for column in "ayvw":
        npt.assert_array_equal(getattr(back, column), getattr(data, column))


def test_round_trip_preserves_fractional_values(tmp_path):
    data = StudyDataset(
        r=[1, 2], a=[NAN, 1], y=[NAN, 0], v=[22.125, 24.8], w=[1, 0]
    )
    path = tmp_path / "frac.csv"
    write_study_csv(data, str(path))
    npt.assert_array_equal(read_study_csv(str(path)).v, data.v)


def write_text(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_read_blank_lines_tolerated(tmp_path):
    path = write_text(
        tmp_path,
        "blank.csv",
        "R,A,Y,V,W\n1,,,22,1\n\n   \n2,1,0,24,0\n",
    )
    assert read_study_csv(path).n == 2


def test_read_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        read_study_csv(str(tmp_path / "nope.csv"))


def test_read_empty_file(tmp_path):
    path = write_text(tmp_path, "empty.csv", "")
    with pytest.raises(DataError, match="file is empty"):
        read_study_csv(path)


def test_read_header_only(tmp_path):
    path = write_text(tmp_path, "header.csv", "R,A,Y,V,W\n")
    with pytest.raises(DataError, match="no data rows"):
        read_study_csv(path)


def test_read_missing_required_column(tmp_path):
    path = write_text(tmp_path, "nor.csv", "A,Y,V,W\n1,0,22,1\n")
    with pytest.raises(DataError, match="missing required column 'R'"):
        read_study_csv(path)


def test_read_unknown_column(tmp_path):
    path = write_text(tmp_path, "extra.csv", "R,A,Y,V,W,Z\n1,,,22,1,9\n")
    with pytest.raises(DataError, match=r"unknown columns \['Z'\]"):
        read_study_csv(path)


def test_read_non_numeric_cell_names_line(tmp_path):
    path = write_text(
        tmp_path, "bad.csv", "R,A,Y,V,W\n1,,,22,1\n2,1,zero,24,0\n"
    )
    with pytest.raises(DataError, match="line 3: column Y has non-numeric value 'zero'"):
        read_study_csv(path)


def test_read_wrong_field_count_names_line(tmp_path):
    path = write_text(tmp_path, "short.csv", "R,A,Y,V,W\n1,,,22,1\n2,1,0,24\n")
    with pytest.raises(DataError, match="line 3: expected 5 fields, got 4"):
        read_study_csv(path)


def test_read_invariant_violation_names_line(tmp_path):
    # trial row with missing outcome on data line 3
    path = write_text(tmp_path, "inv.csv", "R,A,Y,V,W\n1,,,22,1\n2,1,,24,0\n")
    with pytest.raises(DataError, match="line 3: trial rows .R=2. must have non-missing Y"):
        read_study_csv(path)


def test_read_subset_of_columns(tmp_path):
    # A combined file may omit unused columns entirely (they become missing),
    # as long as the invariants still hold.
    path = write_text(tmp_path, "cols.csv", "R,V,W,A,Y\n1,22,1,,\n2,24,0,1,0\n")
    data = read_study_csv(path)
    assert data.n == 2 and data.v[0] == 22.0


# ---------------------------------------------------------------------------
# two-file reader


def test_two_file_reader_infers_population(tmp_path):
    trial = write_text(tmp_path, "trial.csv", "A,Y,V,W\n0,0,24,0\n1,1,29,0\n")
    target = write_text(tmp_path, "target.csv", "V,W\n22,1\n27,0\n")
    data = read_two_file_csv(trial, target)
    assert data.n_trial == 2 and data.n_target == 2
    npt.assert_array_equal(np.sort(data.r), [1, 1, 2, 2])


def test_two_file_reader_accepts_matching_explicit_r(tmp_path):
    trial = write_text(tmp_path, "trial.csv", "R,A,Y,V,W\n2,0,0,24,0\n2,1,1,29,0\n")
    target = write_text(tmp_path, "target.csv", "R,V,W\n1,22,1\n")
    assert read_two_file_csv(trial, target).n == 3


def test_two_file_reader_rejects_conflicting_r(tmp_path):
    trial = write_text(tmp_path, "trial.csv", "R,A,Y,V,W\n2,0,0,24,0\n1,1,1,29,0\n")
    target = write_text(tmp_path, "target.csv", "V,W\n22,1\n")
    with pytest.raises(DataError, match="line 3: R=1 conflicts with inferred R=2"):
        read_two_file_csv(trial, target)


def test_two_file_reader_requires_trial_outcome_columns(tmp_path):
    trial = write_text(tmp_path, "trial.csv", "A,V,W\n0,24,0\n")
    target = write_text(tmp_path, "target.csv", "V,W\n22,1\n")
    with pytest.raises(DataError, match="missing required column 'Y'"):
        read_two_file_csv(trial, target)


def test_two_file_reader_requires_target_covariates(tmp_path):
    trial = write_text(tmp_path, "trial.csv", "A,Y,V,W\n0,0,24,0\n")
    target = write_text(tmp_path, "target.csv", "V\n22\n")
    with pytest.raises(DataError, match="missing required column 'W'"):
        read_two_file_csv(trial, target)
