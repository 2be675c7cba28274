import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgvae.errors import InvalidMappingError, InvalidTransformError, ParseError, ShapeError
from cgvae.geometry import (CGMapping, Conformation, apply_isometry, index_in_bead, lift, lift_matrix,
                            project, project_batch, projection_matrix, random_orthogonal, read_mapping,
                            recenter_residual, write_mapping)

TOY = CGMapping([0, 0, 0, 1], [1.0, 1.0, 1.0, 1.0])


@st.composite
def mappings(draw, max_n=20, max_N=6):
    N = draw(st.integers(1, max_N))
    n = draw(st.integers(N, max_n))
    extra = draw(st.lists(st.integers(0, N - 1), min_size=n - N, max_size=n - N))
    order = draw(st.permutations(list(range(N)) + extra))
    weights = draw(st.lists(st.floats(0.1, 5.0), min_size=n, max_size=n))
    return CGMapping(np.array(order), np.array(weights), N)


def loop_projection(x, mapping):
    """Oracle: weighted mean of each bead's members, one bead at a time."""
    out = np.zeros((mapping.N, 3))
    for bead in range(mapping.N):
        members = [i for i in range(mapping.n) if mapping.assign[i] == bead]
        w = np.array([mapping.weights[i] for i in members])
        out[bead] = (w[:, None] * x[members]).sum(0) / w.sum()
    return out


def test_toy_operator_matrices():
    np.testing.assert_allclose(projection_matrix(TOY), [[1 / 3, 1 / 3, 1 / 3, 0], [0, 0, 0, 1]], atol=1e-15)
    np.testing.assert_array_equal(lift_matrix(TOY), [[1, 0], [1, 0], [1, 0], [0, 1]])


def test_identity_mapping():
    m = CGMapping(np.arange(5), np.ones(5))
    np.testing.assert_array_equal(projection_matrix(m), np.eye(5))
    np.testing.assert_array_equal(lift_matrix(m), np.eye(5))
    x = np.arange(15.0).reshape(5, 3)
    np.testing.assert_array_equal(project(x, m).coords, x)
    np.testing.assert_array_equal(lift(x, m), x)


def test_hand_normalized_weights():
    m = CGMapping([0, 0, 0], [2.0, 1.0, 1.0])
    np.testing.assert_allclose(projection_matrix(m), [[0.5, 0.25, 0.25]], atol=1e-15)


def test_toy_project_and_lift():
    x = np.array([[0, 0, 0], [3, 0, 0], [0, 3, 0], [5, 5, 5]], dtype=float)
    X = project(x, TOY).coords
    np.testing.assert_allclose(X, [[1, 1, 0], [5, 5, 5]], atol=1e-15)
    np.testing.assert_array_equal(lift(X, TOY), [[1, 1, 0], [1, 1, 0], [1, 1, 0], [5, 5, 5]])


@given(mappings())
def test_projection_after_lift_is_identity(m):
    M, P = projection_matrix(m), lift_matrix(m)
    assert np.abs(M @ P - np.eye(m.N)).max() < 1e-14
    assert np.abs(M.sum(1) - 1).max() < 1e-14


@given(mappings(), st.integers(0, 2**32 - 1))
def test_project_matches_loop_oracle(m, seed):
    x = np.random.default_rng(seed).normal(size=(m.n, 3))
    np.testing.assert_allclose(project(x, m).coords, loop_projection(x, m), atol=1e-12)
    np.testing.assert_allclose(project_batch(x[None], m)[0], loop_projection(x, m), atol=1e-12)
    X = np.random.default_rng(seed + 1).normal(size=(m.N, 3))
    assert np.abs(project(lift(X, m), m).coords - X).max() < 1e-14


@given(mappings(), st.integers(0, 2**32 - 1), st.booleans())
def test_projection_commutes_with_isometries(m, seed, reflect):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(m.n, 3)) * 3
    Q, g = random_orthogonal(rng, reflect), rng.normal(size=3) * 5
    lhs = project(apply_isometry(x, Q, g), m).coords
    rhs = apply_isometry(project(x, m), Q, g)
    assert np.abs(lhs - rhs).max() < 1e-12


@given(mappings(), st.integers(0, 2**32 - 1))
def test_recenter_residual(m, seed):
    rng = np.random.default_rng(seed)
    out = recenter_residual(rng.normal(size=(m.n, 3)), m)
    assert np.abs(projection_matrix(m) @ out).max() < 1e-13
    np.testing.assert_allclose(recenter_residual(out, m), out, atol=1e-13)
    assert np.abs(recenter_residual(lift(rng.normal(size=(m.N, 3)), m), m)).max() < 1e-13


def test_isometry_examples(rng):
    x = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(apply_isometry(x, np.eye(3), np.zeros(3)), x)
    P = np.diag([-1.0, 1.0, 1.0])
    np.testing.assert_array_equal(apply_isometry(apply_isometry(x, P, np.zeros(3)), P, np.zeros(3)), x)
    Q = random_orthogonal(rng)
    y = apply_isometry(x, Q, rng.normal(size=3))
    d = lambda c: np.linalg.norm(c[:, None] - c[None], axis=-1)
    assert np.abs(d(x) - d(y)).max() < 1e-12
    with pytest.raises(InvalidTransformError):
        apply_isometry(x, np.ones((3, 3)), np.zeros(3))


def test_random_orthogonal_determinant(rng):
    assert np.linalg.det(random_orthogonal(rng, True)) == pytest.approx(-1)
    assert np.linalg.det(random_orthogonal(rng, False)) == pytest.approx(1)


def test_index_in_bead_ordering():
    # atoms 1, 2 and 4 share a bead in one-based labels
    assert index_in_bead(1, (1, 2, 4)) == 0
    assert index_in_bead(4, (1, 2, 4)) == 2
    m = CGMapping([0, 1, 0, 1, 0], np.ones(5))
    np.testing.assert_array_equal(m.channel_index(), [0, 0, 1, 1, 2])


@pytest.mark.parametrize("assign,weights", [
    ([0, 2], [1.0, 1.0]),          # bead 1 empty
    ([0, 0], [1.0]),               # weight count
    ([0, -1], [1.0, 1.0]),         # negative bead
    ([0, 0], [0.0, 0.0]),          # zero total weight
    ([0, 1], [1.0, np.nan]),
])
def test_invalid_mappings(assign, weights):
    with pytest.raises(InvalidMappingError):
        CGMapping(np.array(assign), np.array(weights))


def test_shape_errors():
    with pytest.raises(ShapeError):
        project(np.zeros((3, 3)), TOY)
    with pytest.raises(ShapeError):
        lift(np.zeros((3, 3)), TOY)
    with pytest.raises(ShapeError):
        Conformation(("C",), np.zeros((2, 3)))


def test_mapping_file_round_trip(tmp_path, rng):
    m = CGMapping(np.array([0, 1, 2] * 4), rng.uniform(0.5, 2, size=12))
    path = tmp_path / "map.txt"
    write_mapping(path, m, comment="test")
    back = read_mapping(path)
    np.testing.assert_array_equal(back.assign, m.assign)
    np.testing.assert_array_equal(back.weights, m.weights)


def test_mapping_file_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# header\n0 0 1.0\n1 zero 1.0\n")
    with pytest.raises(ParseError, match="line 3"):
        read_mapping(p)
    p.write_text("0 0 1.0\n2 0 1.0\n")
    with pytest.raises(InvalidMappingError):
        read_mapping(p)
    p.write_text("0 0 1.0\n0 0 1.0\n")
    with pytest.raises(ParseError):
        read_mapping(p)
