import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikefeatures import DataValidationError, build_observation_set
from spikefeatures.data import (
    read_counts_file,
    read_covariates_file,
    write_counts_file,
    write_covariates_file,
)


def test_grouped_counts_from_duplicate_records():
    obs = build_observation_set([(0, 0, 2), (0, 0, 1), (1, 1, 0)])
    assert obs.n_times == 2 and obs.n_units == 2
    assert obs.presentations[0, 0] == 2
    assert obs.presentations[1, 1] == 1
    assert obs.presentations[0, 1] == 0 and obs.presentations[1, 0] == 0
    assert obs.counts_tu[0, 0] == 3


def test_time_index_out_of_range_names_record():
    with pytest.raises(DataValidationError, match="time index out of range"):
        build_observation_set([(0, 0, 1), (2, 0, 1)], n_times=2)


def test_negative_count_rejected():
    with pytest.raises(DataValidationError, match="negative count"):
        build_observation_set([(0, 0, 1), (1, 0, -3)])


def test_empty_records_rejected():
    with pytest.raises(DataValidationError):
        build_observation_set([])


def test_non_integer_records_rejected():
    with pytest.raises(DataValidationError, match="non-integer"):
        build_observation_set([(0, 0, 1.5)])


def test_single_presentation_grid():
    T, U = 50, 10
    records = [(t, u, 1) for t in range(T) for u in range(U)]
    obs = build_observation_set(records)
    assert obs.n_times == T and obs.n_units == U
    assert np.all(obs.presentations == 1)


def test_covariate_table_fixes_time_dimension():
    x = np.zeros((5, 2))
    obs = build_observation_set([(0, 0, 1)], covariate_table=x)
    assert obs.n_times == 5 and obs.n_covariates == 2
    with pytest.raises(DataValidationError):
        build_observation_set([(7, 0, 1)], covariate_table=x)


@given(
    st.lists(
        st.tuples(
            st.integers(min_value=0, max_value=6),
            st.integers(min_value=0, max_value=4),
            st.integers(min_value=0, max_value=9),
        ),
        min_size=1,
        max_size=40,
    )
)
@settings(max_examples=50, deadline=None)
def test_grouped_views_are_a_bijection(records):
    obs = build_observation_set(records)
    assert obs.counts_tu.sum() == sum(r[2] for r in records)
    assert obs.presentations.sum() == len(records)
    scattered = obs.scatter_to_grid(np.ones(obs.n_obs))
    assert np.array_equal(scattered, obs.presentations)


def test_counts_file_round_trip(tmp_path):
    obs = build_observation_set([(0, 0, 2), (0, 1, 5), (3, 0, 1)])
    path = tmp_path / "counts.csv"
    write_counts_file(path, obs)
    records = read_counts_file(path)
    rebuilt = build_observation_set(records)
    assert np.array_equal(rebuilt.counts_tu, obs.counts_tu)


def test_counts_file_bad_header(tmp_path):
    path = tmp_path / "counts.csv"
    path.write_text("a,b,c\n0,0,1\n")
    with pytest.raises(DataValidationError, match=":1"):
        read_counts_file(path)


def test_counts_file_error_carries_line_number(tmp_path):
    path = tmp_path / "counts.csv"
    path.write_text("t,u,n\n0,0,1\n0,zero,1\n")
    with pytest.raises(DataValidationError, match=":3"):
        read_counts_file(path)


def test_covariates_round_trip(tmp_path):
    x = np.array([[0.0, 1.5], [2.25, -1.0], [0.5, 0.0]])
    path = tmp_path / "covariates.csv"
    write_covariates_file(path, x)
    assert np.array_equal(read_covariates_file(path), x)
