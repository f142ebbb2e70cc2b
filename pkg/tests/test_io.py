import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invfilt import io
from invfilt.errors import ValidationError
from invfilt.stochastic import simulate, uniform


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_matrix_round_trip_is_exact(tmp_path_factory, seed, r, c):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((r, c)) * 10.0 ** rng.integers(-12, 12, size=(r, c))
    p = tmp_path_factory.mktemp("m") / "m.csv"
    io.write_matrix_csv(p, M)
    assert np.array_equal(io.read_matrix_csv(p), M)


def test_trajectory_round_trip(tmp_path, dense3):
    tr = simulate(*dense3, uniform(3), 40, 9)
    p = tmp_path / "t.csv"
    io.write_trajectory_csv(p, tr.posteriors, tr.states, tr.observations)
    post, states, obs = io.read_trajectory_csv(p)
    assert np.array_equal(post, tr.posteriors)
    assert np.array_equal(states, tr.states) and np.array_equal(obs, tr.observations)
    header = p.read_text().splitlines()[0].split(",")
    assert header == ["k", "x_k", "y_k", "pi_1", "pi_2", "pi_3", "bary_x", "bary_y"]
    # labels on disk are 1-based
    row1 = p.read_text().splitlines()[2].split(",")
    assert int(row1[1]) == tr.states[1] + 1 and int(row1[2]) == tr.observations[0] + 1


def test_barycentric_vertices():
    xy = io.barycentric_xy(np.eye(3))
    assert np.allclose(xy, [[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]])


def test_no_barycentric_columns_for_other_dims(tmp_path, cycle5):
    tr = simulate(*cycle5, uniform(5), 5, 0)
    p = tmp_path / "t.csv"
    io.write_trajectory_csv(p, tr.posteriors, tr.states, tr.observations)
    assert "bary_x" not in p.read_text().splitlines()[0]


def test_read_posteriors_accepts_both_formats(tmp_path, dense3):
    tr = simulate(*dense3, uniform(3), 10, 1)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    io.write_trajectory_csv(a, tr.posteriors)
    io.write_matrix_csv(b, tr.posteriors)
    assert np.array_equal(io.read_posteriors(a), io.read_posteriors(b))


def test_one_based_converters():
    assert np.array_equal(io.to_one_based([0, 2]), [1, 3])
    assert np.array_equal(io.from_one_based([1, 3]), [0, 2])
    with pytest.raises(ValidationError):
        io.from_one_based([0])
    with pytest.raises(ValidationError):
        io.from_one_based([4], 3)


def test_observation_file_round_trip(tmp_path):
    p = tmp_path / "o.csv"
    io.write_observations_csv(p, [0, 2, 1])
    assert p.read_text() == "1\n3\n2\n"
    assert np.array_equal(io.read_observations_csv(p, 3), [0, 2, 1])
