from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldformer.autodiff import (
    AutodiffError,
    Graph,
    Jet,
    NonFiniteError,
    ParamStore,
    ShapeError,
    Tensor,
    UnsupportedOperation,
    coordinate_partials,
    finite_difference_grads,
    grad,
    gradcheck,
    no_grad,
)
from fieldformer.autodiff import functional as F
from fieldformer.autodiff import tensor as T


def test_scalar_arithmetic():
    g = Graph(lambda x: x * 2.0, [()])
    assert g.forward(3.0) == 6.0
    g = Graph(lambda x: T.tanh(x), [()])
    assert g.forward(0.0) == 0.0


def test_power_rule():
    g = Graph(lambda x: x ** 2, [()])
    g.forward(3.0)
    assert g.backward()[0] == pytest.approx(6.0)


def test_mean_of_linear_map():
    W = Tensor(np.ones((4, 3)), requires_grad=True)
    x = np.array([1.0, 2.0, -1.5])
    (gW,) = grad(T.mean(W @ Tensor(x)), [W])
    np.testing.assert_allclose(gW, np.tile(x / 4, (4, 1)))


def test_mlp_matches_straight_line_evaluation(rng):
    Ws = [rng.standard_normal((5, 8)), rng.standard_normal((8, 8)), rng.standard_normal((8, 2))]
    bs = [rng.standard_normal(8), rng.standard_normal(8), rng.standard_normal(2)]
    x = rng.standard_normal((7, 5))
    h = Tensor(x)
    for i, (W, b) in enumerate(zip(Ws, bs)):
        h = h @ Tensor(W) + Tensor(b)
        if i < 2:
            h = T.tanh(h)
    ref = x
    for i, (W, b) in enumerate(zip(Ws, bs)):
        ref = ref @ W + b
        if i < 2:
            ref = np.tanh(ref)
    np.testing.assert_allclose(h.data, ref, rtol=0, atol=1e-14)


def test_mlp_parameter_gradients_match_fd(rng):
    p = ParamStore()
    p.add("w1", rng.standard_normal((3, 6)))
    p.add("b1", rng.standard_normal(6))
    p.add("w2", rng.standard_normal((6, 1)))
    x = Tensor(rng.standard_normal((5, 3)))

    def loss():
        return T.mean(T.gelu(x @ p["w1"] + p["b1"]) @ p["w2"])

    ad = p.compute_grads(loss())
    fd = finite_difference_grads(loss, p)
    for n in p.names():
        np.testing.assert_allclose(ad[n].reshape(-1), fd[n], rtol=1e-6, atol=1e-9)


def test_untouched_parameter_gets_exact_zero():
    p = ParamStore({"a": np.ones(3), "unused": np.ones(2)})
    g = p.compute_grads(T.tsum(p["a"] * 3.0))
    assert np.array_equal(g["unused"], np.zeros(2))
    np.testing.assert_array_equal(g["a"], 3.0)


def test_backward_before_forward_errors():
    with pytest.raises(AutodiffError):
        Graph(lambda x: x).backward()


def test_shape_mismatch_names_input():
    g = Graph(lambda x: x, [(2, 3)])
    with pytest.raises(ShapeError, match="input0"):
        g.forward(np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_non_finite_reports_node():
    g = Graph(lambda x: T.log(x), [(2,)])
    with pytest.raises(NonFiniteError) as err, np.errstate(invalid="ignore"):
        g.forward(np.array([1.0, -1.0]))
    assert err.value.op == "log"


def test_gradcheck_examples():
    assert gradcheck(lambda x: T.tsum(x * x), np.zeros(3)) == 0.0
    assert gradcheck(lambda x: T.exp(x), np.array(1.0)) < 1e-7


def test_gradient_of_sum_is_sum_of_gradients(rng):
    x = Tensor(rng.standard_normal(6), requires_grad=True)
    f = lambda v: T.tsum(T.sin(v) * v)
    h = lambda v: T.tsum(T.tanh(v) ** 2)
    (g_sum,) = grad(f(x) + h(x), [x])
    (gf,) = grad(f(x), [x])
    (gh,) = grad(h(x), [x])
    np.testing.assert_allclose(g_sum, gf + gh, rtol=0, atol=1e-12)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


# -- jets -------------------------------------------------------------------

def test_constant_field_partials_are_zero():
    z = np.random.default_rng(0).uniform(size=(4, 3))
    parts = coordinate_partials(lambda zj: zj[:, :1] * 0.0 + 2.5, z)
    for name in ("u_t", "u_x", "u_y", "u_xx", "u_yy"):
        assert np.all(parts[name].data == 0.0)
    np.testing.assert_array_equal(parts["u"].data, 2.5)


def test_square_of_x():
    z = np.array([[0.3, 0.1, 0.2], [-1.2, 0.5, 0.0]])
    parts = coordinate_partials(lambda zj: zj[:, :1] * zj[:, :1], z, ("u_x", "u_xx", "u_t"))
    np.testing.assert_array_equal(parts["u_x"].data[:, 0], 2 * z[:, 0])
    np.testing.assert_array_equal(parts["u_xx"].data, 2.0)
    np.testing.assert_array_equal(parts["u_t"].data, 0.0)


def test_mixed_partials_unsupported():
    with pytest.raises(UnsupportedOperation):
        coordinate_partials(lambda zj: zj, np.zeros((1, 3)), ("u_xy",))


def _toy_field(params: ParamStore):
    def field(z):
        h = F.tanh(z @ params["w1"] + params["b1"])
        h = F.gelu(h @ params["w2"])
        return F.sin(h @ params["w3"])
    return field


def test_partials_match_fd_on_toy_model(rng):
    p = ParamStore({"w1": rng.standard_normal((3, 8)), "b1": rng.standard_normal(8),
                    "w2": rng.standard_normal((8, 8)) / 3, "w3": rng.standard_normal((8, 1))})
    field = _toy_field(p)
    z = rng.uniform(-1, 1, (50, 3))
    parts = coordinate_partials(field, z, ("u_x", "u_y", "u_t", "u_xx", "u_yy"))
    h = 1e-4

    def val(zz):
        with no_grad():
            return field(Tensor(zz)).data

    for axis, (d1, d2) in enumerate((("u_x", "u_xx"), ("u_y", "u_yy"), ("u_t", None))):
        e = np.zeros(3)
        e[axis] = h
        up, mid, dn = val(z + e), val(z), val(z - e)
        fd1 = (up - dn) / (2 * h)
        assert np.max(np.abs(parts[d1].data - fd1)) <= 1e-4 * max(1.0, np.max(np.abs(fd1)))
        if d2:
            fd2 = (up - 2 * mid + dn) / h ** 2
            assert np.max(np.abs(parts[d2].data - fd2)) <= 1e-4 * max(1.0, np.max(np.abs(fd2)))


def test_parameter_gradient_through_jets(rng):
    """Reverse mode over the jet tape: d/dw of mean(u_xx^2) against finite differences."""
    p = ParamStore({"w1": rng.standard_normal((3, 5)), "b1": rng.standard_normal(5),
                    "w2": rng.standard_normal((5, 5)) / 3, "w3": rng.standard_normal((5, 1))})
    field = _toy_field(p)
    z = rng.uniform(-1, 1, (6, 3))

    def loss():
        parts = coordinate_partials(field, z, ("u_t", "u_xx"))
        return T.mean((parts["u_t"] + parts["u_xx"]) ** 2)

    ad = p.compute_grads(loss())
    fd = finite_difference_grads(loss, p)
    for n in p.names():
        np.testing.assert_allclose(ad[n].reshape(-1), fd[n], rtol=1e-5, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_jet_taylor_rule_for_exp_of_product(a, b):
    """d/dx exp(a x) * sin(b x) at x = 0.3 against closed forms."""
    x = Jet.seed(np.array([[0.3]]), [0])
    f = F.exp(x * a) * F.sin(x * b)
    t = 0.3
    e, s, c = math.exp(a * t), math.sin(b * t), math.cos(b * t)
    d1 = e * (a * s + b * c)
    d2 = e * ((a * a - b * b) * s + 2 * a * b * c)
    assert f.tangent(1, 0).data.item() == pytest.approx(d1, rel=1e-12, abs=1e-12)
    assert f.tangent(2, 0).data.item() == pytest.approx(d2, rel=1e-12, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_softmax_and_layernorm_jets(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((3, 5))
    g, b = rng.uniform(0.5, 1.5, 5), rng.standard_normal(5)
    z = rng.standard_normal((2, 3))
    fn = lambda v: F.layer_norm(F.softmax(v @ Tensor(w), -1), Tensor(g), Tensor(b))
    parts = coordinate_partials(fn, z, ("u_x", "u_xx"))
    eps = 1e-5

    def d1(zz):
        return coordinate_partials(fn, zz, ("u_x",), order=1)["u_x"].data

    e = np.array([eps, 0, 0])
    fd2 = (d1(z + e) - d1(z - e)) / (2 * eps)
    assert np.max(np.abs(parts["u_xx"].data - fd2)) < 1e-4 * max(1.0, np.max(np.abs(fd2)))
