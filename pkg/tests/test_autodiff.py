import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from diffwgan import autodiff as ad
from diffwgan.autodiff import Tensor
from diffwgan.autodiff.gradcheck import PRIMITIVE_CASES, gradcheck, gradgradcheck, run_primitive_checks
from diffwgan.autodiff.tensor import Function


@pytest.mark.parametrize("case", PRIMITIVE_CASES, ids=lambda c: c.name)
def test_primitive_first_and_second_order(case):
    rng = np.random.default_rng(0)
    arrays = case.inputs(rng)
    assert gradcheck(case.fn, arrays) < 1e-4
    if case.second_order:
        assert gradgradcheck(case.fn, arrays) < 1e-4


def test_every_registered_primitive_has_a_case():
    covered = {c.name for c in PRIMITIVE_CASES}
    assert set(ad.OPS) <= covered


def test_grad_of_cubic_is_second_derivative():
    x = np.array([0.5, -1.5, 2.0])
    g2 = ad.grad_of_grad(lambda t: ad.pow_scalar(t, 3.0), x)
    np.testing.assert_allclose(g2.data, 6 * x, rtol=1e-12)


def test_grad_of_grad_linear_is_zero():
    g2 = ad.grad_of_grad(lambda t: ad.mul(t, 3.0), np.ones(4))
    np.testing.assert_array_equal(g2.data, np.zeros(4))


def test_unreachable_input_gets_zero_gradient():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    ga, gb = ad.grad(ad.sum(ad.square(a)), [a, b])
    np.testing.assert_array_equal(ga.data, 2 * np.ones(3))
    np.testing.assert_array_equal(gb.data, np.zeros(2))


def test_backward_twice_without_retain_raises():
    a = Tensor(np.ones(3), requires_grad=True)
    loss = ad.sum(ad.exp(a))
    ad.backward(loss)
    with pytest.raises(ad.GraphFreedError):
        ad.backward(loss)


def test_retain_graph_accumulates():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ad.sum(ad.square(a))
    ad.backward(loss, retain_graph=True)
    ad.backward(loss)
    np.testing.assert_array_equal(a.grad.data, 4 * a.data)


def test_non_finite_output_is_reported_with_the_op_name():
    a = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    with np.errstate(invalid="ignore"), pytest.raises(ad.NonFiniteError, match="log"):
        ad.log(a)


def test_double_backprop_through_non_differentiable_rule_raises():
    class Opaque(Function):
        name = "opaque"
        differentiable_backward = False

        def forward(self, a):
            return a * 2.0

        def backward(self, g):
            return (Tensor(g.data * 2.0),)

    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.sum(Opaque.apply(x))
    with pytest.raises(ad.DoubleBackpropError, match="opaque"):
        ad.grad(y, x, create_graph=True)


def test_no_grad_builds_no_graph():
    a = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        b = ad.mul(a, 3.0)
    assert not b.requires_grad and b.is_leaf


def test_shape_error_on_bad_broadcast():
    with pytest.raises(ad.ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_embed_rejects_out_of_range_ids():
    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with pytest.raises((IndexError, ValueError)):
        ad.embed(w, np.array([0, 3]))


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 6, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for i in range(out.shape[2]):
        for j in range(out.shape[3]):
            patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
            ref[:, :, i, j] = np.einsum("bchw,ochw->bo", patch, w) + b
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv1d_dilated_matches_numpy():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 2, 9))
    w = rng.standard_normal((3, 2, 3))
    out = ad.conv1d(Tensor(x), Tensor(w), None, padding=2, dilation=2).data
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
    ref = np.stack([np.einsum("ck,ock->o", xp[0, :, [n, n + 2, n + 4]].T, w) for n in range(9)], axis=1)[None]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_corrupted_backward_is_caught(monkeypatch):
    cls = ad.OPS["tanh"]
    good = cls.backward
    monkeypatch.setattr(cls, "backward", lambda self, g: tuple(ad.mul(x, 1.1) for x in good(self, g)))
    (name, e1, _), = run_primitive_checks(only="tanh", second_order=False)
    assert name == "tanh" and e1 > 1e-2


def test_unknown_primitive_filter():
    with pytest.raises(KeyError):
        run_primitive_checks(only="not-a-primitive")


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4)),
                  elements=st.floats(-3, 3, allow_nan=False)))
def test_broadcast_add_mul_gradients(a):
    x = Tensor(a, requires_grad=True)
    row = Tensor(np.arange(a.shape[1], dtype=np.float64) + 1.0, requires_grad=True)
    loss = ad.sum(ad.mul(ad.add(x, row), row))
    gx, grow = ad.grad(loss, [x, row])
    np.testing.assert_allclose(gx.data, np.broadcast_to(row.data, a.shape))
    np.testing.assert_allclose(grow.data, (a + 2 * row.data).sum(axis=0), rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, st.integers(2, 6), elements=st.floats(-20, 20, allow_nan=False)))
def test_softmax_sums_to_one_and_sigmoid_is_bounded(a):
    s = ad.softmax(Tensor(a)).data
    assert abs(s.sum() - 1.0) < 1e-12
    sig = ad.sigmoid(Tensor(a)).data
    assert np.all((sig >= 0) & (sig <= 1))
