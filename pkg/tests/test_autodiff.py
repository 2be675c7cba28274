import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cgvae import autodiff as ad
from cgvae.errors import BroadcastError, DomainError, ShapeError
from conftest import central_difference, tape_grad

finite = st.floats(-3, 3, allow_nan=False, width=64)


def test_elementwise_values():
    out = ad.elementwise("mul", ad.Tensor([1, 2, 3]), ad.Tensor([4, 5, 6]))
    np.testing.assert_array_equal(out.data, [4, 10, 18])
    assert ad.swish(ad.Tensor(0.0)).item() == 0.0


def test_square_via_mul_gradient_at_three():
    (g,) = tape_grad(lambda x: ad.mul(x, x), np.array(3.0))
    fd = central_difference(lambda v: float(v * v), np.array(3.0))
    assert g == pytest.approx(6.0, abs=1e-9)
    assert fd == pytest.approx(6.0, abs=1e-6)


def test_matmul_examples():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(ad.Tensor(np.eye(2)), ad.Tensor(A)).data, A)
    np.testing.assert_array_equal(ad.matmul(ad.Tensor([[1.0, 0.0]]), ad.Tensor([[2.0], [5.0]])).data, [[2.0]])


def test_matmul_sum_gradient_is_row_sums(rng):
    A, B = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    gA, gB = tape_grad(lambda a, b: ad.tsum(ad.matmul(a, b)), A, B)
    np.testing.assert_allclose(gA, np.tile(B.sum(1), (3, 1)), atol=1e-12)
    np.testing.assert_allclose(gA, central_difference(lambda a: (a @ B).sum(), A.copy()), atol=1e-8)
    np.testing.assert_allclose(gB, central_difference(lambda b: (A @ b).sum(), B.copy()), atol=1e-8)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


def test_segment_sum_examples():
    out = ad.segment_sum(ad.Tensor([[1.0], [2.0], [3.0]]), [0, 0, 1], 2)
    np.testing.assert_array_equal(out.data, [[3.0], [3.0]])
    empty = ad.segment_sum(ad.Tensor(np.zeros((0, 1))), [], 2)
    np.testing.assert_array_equal(empty.data, [[0.0], [0.0]])


def test_segment_sum_rejects_bad_ids():
    with pytest.raises(IndexError):
        ad.segment_sum(ad.Tensor([[1.0]]), [3], 2)
    with pytest.raises(ShapeError):
        ad.segment_sum(ad.Tensor([[1.0], [2.0]]), [0], 2)


def test_segment_sum_gradient_gathers_output_rows(rng):
    vals = rng.normal(size=(5, 3))
    ids = np.array([2, 0, 2, 1, 0])
    weights = rng.normal(size=(3, 3))
    (g,) = tape_grad(lambda v: ad.tsum(ad.segment_sum(v, ids, 3) * ad.Tensor(weights)), vals)
    np.testing.assert_allclose(g, weights[ids], atol=1e-12)

    def f(v):
        out = np.zeros((3, 3))
        for row, i in zip(v, ids):
            out[i] += row
        return (out * weights).sum()
    np.testing.assert_allclose(g, central_difference(f, vals.copy()), atol=1e-8)


def test_gather_rows_examples():
    v = ad.Tensor([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(ad.gather_rows(v, [2, 0]).data, [[3.0], [1.0]])
    np.testing.assert_array_equal(ad.gather_rows(v, [0, 0]).data, [[1.0], [1.0]])


def test_gather_rows_repeated_index_accumulates(rng):
    vals = rng.normal(size=(3, 2))
    idx = [0, 0, 2, 0]
    w = rng.normal(size=(4, 2))
    (g,) = tape_grad(lambda v: ad.tsum(ad.gather_rows(v, idx) * ad.Tensor(w)), vals)
    np.testing.assert_allclose(g, central_difference(lambda v: (v[idx] * w).sum(), vals.copy()), atol=1e-8)
    np.testing.assert_allclose(g[0], w[[0, 1, 3]].sum(0), atol=1e-12)


def test_vec3_examples():
    np.testing.assert_array_equal(ad.vec3_ops("cross", ad.Tensor([1.0, 0, 0]), ad.Tensor([0.0, 1, 0])).data, [0, 0, 1])
    assert ad.vec3_ops("dot", ad.Tensor([1.0, 2, 3]), ad.Tensor([1.0, 2, 3])).item() == 14.0
    (g,) = tape_grad(lambda v: ad.norm(v), np.array([3.0, 4.0, 0.0]))
    np.testing.assert_allclose(g, [0.6, 0.8, 0.0], atol=1e-12)
    fd = central_difference(lambda v: np.linalg.norm(v), np.array([3.0, 4.0, 0.0]))
    np.testing.assert_allclose(fd, [0.6, 0.8, 0.0], atol=1e-8)
    with pytest.raises(ValueError):
        ad.vec3_ops("wedge", ad.Tensor([1.0, 0, 0]))
    with pytest.raises(ShapeError):
        ad.cross(ad.Tensor([1.0, 0]), ad.Tensor([0.0, 1]))


@given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, (4, 3), elements=finite))
def test_cross_gradient_matches_differences(a, b):
    w = np.arange(12.0).reshape(4, 3) / 7
    ga, gb = tape_grad(lambda x, y: ad.tsum(ad.cross(x, y) * ad.Tensor(w)), a, b)
    np.testing.assert_allclose(ga, central_difference(lambda x: (np.cross(x, b) * w).sum(), a.copy()), atol=1e-6)
    np.testing.assert_allclose(gb, central_difference(lambda y: (np.cross(a, y) * w).sum(), b.copy()), atol=1e-6)


@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (2, 3), elements=finite))
def test_broadcast_binary_gradients(a, b):
    for op, npop in (("add", np.add), ("sub", np.subtract), ("mul", np.multiply)):
        row = b[0]
        ga, gb = tape_grad(lambda x, y: ad.tsum(ad.elementwise(op, x, y)), a, row)
        np.testing.assert_allclose(ga, central_difference(lambda x: npop(x, row).sum(), a.copy()), atol=1e-6)
        np.testing.assert_allclose(gb, central_difference(lambda y: npop(a, y).sum(), row.copy()), atol=1e-6)


def test_broadcast_rejects_incompatible_shapes():
    with pytest.raises(BroadcastError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones(2)))


def test_log_domain():
    with pytest.raises(DomainError):
        ad.log(ad.Tensor([1.0, -1.0]))


@pytest.mark.parametrize("fn,ref", [
    (ad.exp, np.exp), (ad.sigmoid, lambda x: 1 / (1 + np.exp(-x))),
    (ad.softplus, lambda x: np.log1p(np.exp(x))), (ad.swish, lambda x: x / (1 + np.exp(-x))),
    (ad.square, np.square),
])
def test_unary_gradients(fn, ref, rng):
    x = rng.normal(size=(3, 2))
    (g,) = tape_grad(lambda t: ad.tsum(fn(t)), x)
    np.testing.assert_allclose(g, central_difference(lambda v: ref(v).sum(), x.copy()), atol=1e-7)


def test_softmax_gradient(rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))

    def ref(v):
        e = np.exp(v - v.max(-1, keepdims=True))
        return ((e / e.sum(-1, keepdims=True)) * w).sum()
    (g,) = tape_grad(lambda t: ad.tsum(ad.softmax(t) * ad.Tensor(w)), x)
    np.testing.assert_allclose(g, central_difference(ref, x.copy()), atol=1e-8)


def test_vector_channel_ops_gradients(rng):
    s, v, w = rng.normal(size=(2, 3)), rng.normal(size=(2, 3, 3)), rng.normal(size=(3, 3))
    e = rng.normal(size=(2, 3))
    probe = rng.normal(size=(2, 3, 3))
    gs, gv = tape_grad(lambda a, b: ad.tsum(ad.vscale(a, b) * ad.Tensor(probe)), s, v)
    np.testing.assert_allclose(gs, central_difference(lambda a: (a[..., None] * v * probe).sum(), s.copy()), atol=1e-8)
    gw, gv = tape_grad(lambda a, b: ad.tsum(ad.channel_mix(a, b) * ad.Tensor(probe)), w, v)
    mix = lambda a, b: np.einsum("fg,ngk->nfk", a, b)
    np.testing.assert_allclose(gw, central_difference(lambda a: (mix(a, v) * probe).sum(), w.copy()), atol=1e-8)
    np.testing.assert_allclose(gv, central_difference(lambda b: (mix(w, b) * probe).sum(), v.copy()), atol=1e-8)
    gs, ge = tape_grad(lambda a, b: ad.tsum(ad.outer(a, b) * ad.Tensor(probe)), s, e)
    np.testing.assert_allclose(ge, central_difference(lambda b: (s[:, :, None] * b[:, None] * probe).sum(), e.copy()), atol=1e-8)


def test_backward_trivial_losses():
    (g,) = tape_grad(lambda x: ad.tsum(x), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(g, [1.0, 1.0, 1.0])
    (g,) = tape_grad(lambda x: ad.tsum(ad.scale(x, 0.0)), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(g, [0.0, 0.0, 0.0])


def test_backward_needs_scalar():
    with ad.fresh_tape():
        x = ad.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            ad.backward(x * 2.0)


def test_no_grad_records_nothing():
    with ad.fresh_tape() as tape:
        x = ad.Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            ad.tsum(x * x)
        assert len(tape) == 0
        ad.tsum(x * x)
        assert len(tape) == 2


def test_shared_subexpression_accumulates():
    (g,) = tape_grad(lambda x: ad.tsum(ad.mul(x, x) + ad.scale(x, 3.0)), np.array([2.0, -1.0]))
    np.testing.assert_allclose(g, [7.0, 1.0])
