import math
import zlib
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from atas import numerics as nx
from atas.errors import ContractError, DegenerateInputError, ParameterError, ShapeError
from atas.numerics import Tensor, _kernels_py
from atas.numerics.gradcheck import check_gradient, fd_gradient, relative_error

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def loop_matmul(a, b):
    m, k = a.shape
    _, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


# matmul ------------------------------------------------------------------------


def test_matmul_identity():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(nx.matmul(Tensor(np.eye(2)), Tensor(x)).data, x)


def test_matmul_projector_selects_row():
    out = nx.matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(out.data, [[5.0, 6.0], [0.0, 0.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    for m, k, p in [(3, 4, 2), (8, 8, 8), (1, 5, 7), (6, 1, 3)]:
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, p))
        np.testing.assert_allclose(nx.matmul(Tensor(a), Tensor(b)).data, loop_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


# softmax -------------------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(nx.softmax(Tensor([0.0, 0.0, 0.0]), 1.0).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_large_logit_is_stable():
    y = nx.softmax(Tensor([1000.0, 0.0]), 1.0).data
    assert np.all(np.isfinite(y))
    assert y[0] == 1.0 and y[1] < 1e-300


def test_softmax_matches_extended_precision():
    getcontext().prec = 50
    x = [Decimal("0.3"), Decimal("-0.1"), Decimal("0.7")]
    e = [v.exp() for v in x]
    total = sum(e)
    expected = [float(v / total) for v in e]
    np.testing.assert_allclose(nx.softmax(Tensor([0.3, -0.1, 0.7]), 1.0).data, expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_softmax_rejects_nonpositive_temperature(tau):
    with pytest.raises(ParameterError):
        nx.softmax(Tensor([1.0, 2.0]), tau)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=finite), finite, st.floats(0.05, 10))
def test_softmax_sums_to_one_and_ignores_shift(x, shift, tau):
    y = nx.softmax(Tensor(x), tau).data
    assert abs(y.sum() - 1.0) <= 1e-12
    assert (y >= 0).all()
    np.testing.assert_allclose(nx.softmax(Tensor(x + shift), tau).data, y, atol=1e-12)


# cosine --------------------------------------------------------------------------


def test_cosine_examples():
    assert nx.cosine_sim(Tensor([3.0, 4.0]), Tensor([3.0, 4.0])).item() == pytest.approx(1.0, abs=1e-15)
    assert nx.cosine_sim(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0
    expected = 32 / (math.sqrt(14) * math.sqrt(77))
    assert nx.cosine_sim(Tensor([1.0, 2.0, 3.0]), Tensor([4.0, 5.0, 6.0])).item() == pytest.approx(expected, abs=1e-15)


def test_cosine_zero_norm_raises():
    with pytest.raises(DegenerateInputError):
        nx.cosine_sim(Tensor([0.0, 0.0]), Tensor([1.0, 2.0]))


def test_cosine_length_mismatch_raises():
    with pytest.raises(ShapeError):
        nx.cosine_sim(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10).flatmap(lambda n: st.tuples(arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite))))
def test_cosine_symmetric_and_bounded(pair):
    a, b = pair
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    ab = nx.cosine_sim(Tensor(a), Tensor(b)).item()
    ba = nx.cosine_sim(Tensor(b), Tensor(a)).item()
    assert ab == ba
    assert abs(ab) <= 1 + 1e-12


# backward and finite differences ---------------------------------------------------


def test_backward_of_sum_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4, 2)), requires_grad=True)
    nx.backward(x.sum())
    assert np.array_equal(x.grad, np.ones((3, 4, 2)))


def test_backward_accumulates_over_reuse():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    nx.backward((x * x + x).sum())
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        nx.backward(x * 2.0)


def test_cosine_gradient_matches_fd():
    c = Tensor([0.3, -1.2, 0.8, 0.1])
    x = np.array([1.0, 0.5, -0.4, 2.0])
    assert check_gradient(lambda t: nx.cosine_sim(t, c), x) < 1e-5


def test_fd_of_sum_is_ones():
    x = np.random.default_rng(1).normal(size=(2, 3))
    np.testing.assert_allclose(fd_gradient(lambda t: t.sum(), x, 1e-5).data, np.ones((2, 3)), atol=1e-9)


def test_fd_of_quadratic():
    np.testing.assert_allclose(fd_gradient(lambda t: nx.dot(t, t), np.array([1.0, 2.0]), 1e-5).data, [2.0, 4.0], atol=1e-8)


def test_fd_rejects_nonpositive_step():
    with pytest.raises(ParameterError):
        fd_gradient(lambda t: t.sum(), np.ones(2), 0.0)


def test_fd_does_not_record():
    seen = []

    def f(t):
        seen.append(nx.grad_enabled())
        return (t * Tensor([1.0, 2.0], requires_grad=True)).sum()

    fd_gradient(f, np.ones(2))
    assert seen and not any(seen)


def test_grad_tape_visits_each_op_once_in_reverse_order():
    x = Tensor(np.arange(1.0, 5.0).reshape(2, 2), requires_grad=True)
    y = nx.matmul(x, x)
    loss = (nx.exp(y * 0.1) + y).sum()
    tape = nx.GradTape.record(loss)
    seqs = [n._seq for n in tape.nodes]
    assert seqs == sorted(seqs, reverse=True)
    assert len({id(n) for n in tape.nodes}) == len(tape.nodes)
    assert tape.nodes[0] is loss and tape.nodes[-1] is x


def test_tensor_data_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 3.0


def test_grad_shape_matches_data():
    w = Tensor(np.ones((3, 2)), requires_grad=True)
    nx.backward((Tensor(np.ones((4, 3))) @ w).sum())
    assert w.grad.shape == w.shape


# every differentiable op passes the fd check at 100 random points ------------------------

_C = np.random.default_rng(99)
_W34 = Tensor(_C.normal(size=(3, 4)))
_G = Tensor(_C.normal(size=4))
_B = Tensor(_C.normal(size=4))
_V = Tensor(_C.normal(size=(3, 4)))
_M33 = Tensor(_C.normal(size=(3, 3)))
_M322 = Tensor(_C.normal(size=(3, 2, 2)))

OPS = {
    "add": ((3, 4), lambda t: (nx.add(t, _V) * _V).sum()),
    "sub": ((3, 4), lambda t: (nx.sub(_V, t) * _V).sum()),
    "mul": ((3, 4), lambda t: nx.mul(t, t).sum()),
    "scale": ((3, 4), lambda t: (nx.scale(t, -2.5) * _V).sum()),
    "exp": ((3, 4), lambda t: (nx.exp(t) * _V).sum()),
    "log": ((3, 4), lambda t: (nx.log(t * t + 1.0) * _V).sum()),
    "sum": ((3, 4), lambda t: (nx.sum(t, axis=0) * Tensor([1.0, -2.0, 0.5, 3.0])).sum()),
    "mean": ((3, 4), lambda t: (nx.mean(t, axis=1) * Tensor([1.0, -2.0, 0.5])).sum()),
    "matmul": ((2, 3), lambda t: (nx.matmul(t, _W34) * Tensor(np.arange(8.0).reshape(2, 4))).sum()),
    "transpose": ((3, 4), lambda t: (nx.transpose(t) * _V.T).sum()),
    "reshape": ((3, 4), lambda t: (nx.reshape(t, (4, 3)) * _V.reshape(4, 3)).sum()),
    "concat": ((3, 4), lambda t: (nx.concat([t, t * 2.0], axis=0) * nx.concat([_V, -_V], axis=0)).sum()),
    "slice": ((3, 4), lambda t: (t[1:, ::2] * _V[1:, ::2]).sum()),
    "take": ((3, 4), lambda t: (nx.take(t, [[0, 2], [1, 1]], axis=1) * _M322).sum()),
    "broadcast_to": ((4,), lambda t: (nx.broadcast_to(t, (3, 4)) * _V).sum()),
    "softmax": ((3, 4), lambda t: (nx.softmax(t, 0.7) * _V).sum()),
    "log_softmax": ((3, 4), lambda t: (nx.log_softmax(t) * _V).sum()),
    "layer_norm": ((3, 4), lambda t: (nx.layer_norm(t, _G, _B) * _V).sum()),
    "layer_norm_gain": ((4,), lambda t: (nx.layer_norm(_V, t, _B) * _V).sum()),
    "gelu": ((3, 4), lambda t: (nx.gelu(t) * _V).sum()),
    "l2_normalize": ((3, 4), lambda t: (nx.l2_normalize(t) * _V).sum()),
    "cosine_sim": ((4,), lambda t: nx.cosine_sim(t, _G)),
    "pairwise_cosine": ((3, 4), lambda t: (nx.pairwise_cosine(t, t) * _M33).sum()),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradient_matches_fd(name):
    shape, f = OPS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(100):
        worst = max(worst, check_gradient(f, rng.normal(size=shape), h=1e-5))
    assert worst < 1e-4, worst


# scalar-loop oracles for reductions ---------------------------------------------------


@pytest.mark.parametrize("shape", [(1, 1), (3, 5), (8, 8)])
def test_reductions_match_loops(shape):
    x = np.random.default_rng(5).normal(size=shape)
    rows, cols = shape
    col_sums = [sum(x[i, j] for i in range(rows)) for j in range(cols)]
    row_means = [sum(x[i, j] for j in range(cols)) / cols for i in range(rows)]
    total = sum(x[i, j] for i in range(rows) for j in range(cols))
    np.testing.assert_allclose(nx.sum(Tensor(x), axis=0).data, col_sums, atol=1e-12)
    np.testing.assert_allclose(nx.mean(Tensor(x), axis=1).data, row_means, atol=1e-12)
    assert abs(nx.sum(Tensor(x)).item() - total) < 1e-12


def test_layer_norm_matches_loop():
    x = np.random.default_rng(6).normal(size=(4, 6))
    g, b = np.linspace(0.5, 1.5, 6), np.linspace(-0.2, 0.3, 6)
    expected = np.empty_like(x)
    for i in range(4):
        mu = sum(x[i]) / 6
        var = sum((v - mu) ** 2 for v in x[i]) / 6
        for j in range(6):
            expected[i, j] = (x[i, j] - mu) / math.sqrt(var + 1e-5) * g[j] + b[j]
    np.testing.assert_allclose(nx.layer_norm(Tensor(x), Tensor(g), Tensor(b)).data, expected, atol=1e-12)


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0 + 1e-6])) == pytest.approx(5e-7)


# compiled kernels vs numpy fallback -------------------------------------------------

compiled = pytest.mark.skipif(not nx.compiled_available(), reason="compiled kernels not built")


@compiled
@pytest.mark.parametrize("rows,cols", [(1, 1), (7, 5), (65, 64), (200, 17)])
def test_compiled_kernels_match_fallback(rows, cols):
    from atas.numerics import _kernels as ck

    rng = np.random.default_rng(rows * 31 + cols)
    x, gy = rng.normal(size=(rows, cols)) * 3, rng.normal(size=(rows, cols))
    gamma, beta = rng.normal(size=cols), rng.normal(size=cols)
    for a, b in zip(ck.layer_norm_fwd(x, gamma, beta, 1e-5), _kernels_py.layer_norm_fwd(x, gamma, beta, 1e-5)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    y, xhat, rstd = _kernels_py.layer_norm_fwd(x, gamma, beta, 1e-5)
    for a, b in zip(ck.layer_norm_bwd(gy, xhat, rstd, gamma), _kernels_py.layer_norm_bwd(gy, xhat, rstd, gamma)):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-11)
    s = _kernels_py.softmax_fwd(x)
    np.testing.assert_allclose(ck.softmax_fwd(x), s, atol=1e-14)
    np.testing.assert_allclose(ck.softmax_bwd(gy, s), _kernels_py.softmax_bwd(gy, s), atol=1e-13)
    for a, b in zip(ck.log_softmax_fwd(x), _kernels_py.log_softmax_fwd(x)):
        np.testing.assert_allclose(a, b, atol=1e-13)
    np.testing.assert_allclose(ck.log_softmax_bwd(gy, s), _kernels_py.log_softmax_bwd(gy, s), atol=1e-13)
    np.testing.assert_allclose(ck.gelu_fwd(x), _kernels_py.gelu_fwd(x), atol=1e-14)
    np.testing.assert_allclose(ck.gelu_bwd(gy, x), _kernels_py.gelu_bwd(gy, x), atol=1e-13)


@compiled
def test_backend_switch_round_trips():
    previous = nx.use_backend("python")
    try:
        assert nx.active_backend() == "python"
        nx.use_backend("compiled")
        assert nx.active_backend() == "compiled"
    finally:
        nx.use_backend(previous)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        nx.use_backend("fortran")
