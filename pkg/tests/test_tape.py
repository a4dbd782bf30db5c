"""Tape core: forward values against independent oracles, gradient rules
against central differences, and bitwise determinism."""

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from ligar import tape
from ligar.nn import grad_check
from ligar.tape import ComputationRecord, DimensionError, NumericsError, Tensor


# ---------------------------------------------------------------------------
# forward oracles


def matmul_oracle(a, b):
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def softmax_oracle(x):
    # Extended-precision exp/sum, rounded to float64 at the end.
    with mpmath.workdps(50):
        vals = [mpmath.exp(mpmath.mpf(float(v))) for v in x]
        total = mpmath.fsum(vals)
        return np.array([float(v / total) for v in vals])


def test_matmul_identity():
    a = np.arange(9, dtype=float).reshape(3, 3)
    out = tape.matmul(Tensor(a), Tensor(np.eye(3)))
    assert_array_equal(out.data, a)


def test_matmul_small_case():
    out = tape.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_against_loop_oracle():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    out = tape.matmul(Tensor(a), Tensor(b))
    assert_allclose(out.data, matmul_oracle(a, b), rtol=0, atol=1e-12)


def test_matmul_batched_matches_per_slice():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((5, 3, 4))
    b = rng.standard_normal((5, 4, 2))
    out = tape.matmul(Tensor(a), Tensor(b))
    for i in range(5):
        assert_allclose(out.data[i], matmul_oracle(a[i], b[i]), atol=1e-12)


def test_matmul_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        tape.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_softmax_uniform_and_overflow():
    out = tape.softmax(Tensor([0.0, 0.0]))
    assert_allclose(out.data, [0.5, 0.5], atol=0)
    big = tape.softmax(Tensor([1000.0, 0.0]))
    assert np.all(np.isfinite(big.data))
    assert_allclose(big.data.sum(), 1.0, atol=1e-12)


def test_softmax_against_extended_precision_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(5) * 3.0
    out = tape.softmax(Tensor(x))
    assert_allclose(out.data, softmax_oracle(x), rtol=0, atol=1e-12)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=1, max_size=8))
def test_softmax_rows_sum_to_one(xs):
    out = tape.softmax(Tensor(np.array(xs, dtype=float)))
    assert abs(out.data.sum() - 1.0) <= 1e-9


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 6))
    ls = tape.log_softmax(Tensor(x), axis=-1)
    assert_allclose(ls.data, np.log(tape.softmax(Tensor(x), axis=-1).data), atol=1e-12)


def test_gather_flat_and_embedding():
    table = Tensor(np.arange(12, dtype=float).reshape(4, 3), requires_grad=True)
    out = tape.embedding_lookup(table, np.array([2, 0, 2]))
    assert_array_equal(out.data, [[6, 7, 8], [0, 1, 2], [6, 7, 8]])
    with ComputationRecord() as rec:
        picked = tape.embedding_lookup(table, np.array([2, 0, 2]))
        total = tape.sum_reduce(picked)
    rec.backward(total)
    g = rec.grad(table)
    # Row 2 was picked twice: scatter-add accumulates.
    assert_array_equal(g, [[1, 1, 1], [0, 0, 0], [2, 2, 2], [0, 0, 0]])


def test_fanout_accumulates_exactly():
    x = Tensor(np.array(3.0), requires_grad=True)
    with ComputationRecord() as rec:
        y = tape.add(x, x)
    rec.backward(y)
    assert rec.grad(x) == 2.0


def test_backward_visits_each_node_once():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    calls = {"n": 0}
    with ComputationRecord() as rec:
        a = tape.mul(x, x)
        b = tape.add(a, a)  # fan-out of a
        out = tape.sum_reduce(b)
    original = list(rec.backwards)

    def counting(fn):
        def wrapped(g):
            calls["n"] += 1
            return fn(g)
        return wrapped

    rec.backwards = [counting(f) if f is not None else None for f in original]
    rec.backward(out)
    # One call per non-leaf node, even with fan-out.
    assert calls["n"] == sum(1 for f in original if f is not None)
    assert_array_equal(rec.grad(x), [4.0, 8.0])


def test_backward_requires_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with ComputationRecord() as rec:
        y = tape.mul(x, x)
    with pytest.raises(DimensionError):
        rec.backward(y)


def test_non_finite_root_rejected():
    x = Tensor(np.array(1e308), requires_grad=True)
    with np.errstate(over="ignore"):
        with ComputationRecord() as rec:
            y = tape.mul(x, x)  # overflows to inf
    with pytest.raises(NumericsError):
        rec.backward(y)


def test_ops_off_record_produce_no_nodes():
    x = Tensor(np.ones(3), requires_grad=True)
    y = tape.mul(x, x)
    assert y.node_id == -1


def test_stale_record_tensor_reregisters_as_leaf():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with ComputationRecord() as r1:
        y = tape.mul(x, x)
        s1 = tape.sum_reduce(y)
    r1.backward(s1)
    with ComputationRecord() as r2:
        z = tape.mul(y, y)  # y came from r1; treated as a fresh leaf here
        s2 = tape.sum_reduce(z)
    r2.backward(s2)
    assert_array_equal(r2.grad(y), [8.0])
    assert r2.grad(x) is None


# ---------------------------------------------------------------------------
# gradient rules vs central differences


def _scalarize(rng, fn):
    """Wrap an op into a scalar function of theta via a fixed projection."""
    cache = {}

    def build(theta):
        out = fn(theta)
        if "proj" not in cache:
            cache["proj"] = Tensor(rng.standard_normal(out.shape))
        return tape.sum_reduce(tape.mul(out, cache["proj"]))
    return build


OP_CASES = {
    "add": lambda t, c: tape.add(t, c),
    "add_broadcast": lambda t, c: tape.add(t, tape.reshape(c, (1, c.shape[0] * c.shape[1]))[:1] if False else c),
    "sub": lambda t, c: tape.sub(c, t),
    "mul": lambda t, c: tape.mul(t, c),
    "neg": lambda t, c: tape.neg(t),
    "scale": lambda t, c: tape.scale(t, 1.7),
    "matmul": lambda t, c: tape.matmul(t, tape.transpose(c)),
    "transpose": lambda t, c: tape.transpose(t),
    "reshape": lambda t, c: tape.reshape(t, (t.size,)),
    "concat": lambda t, c: tape.concat([t, c], axis=0),
    "gather": lambda t, c: tape.gather_flat(t, np.array([[0, 1], [1, 2]])),
    "sum": lambda t, c: tape.sum_reduce(t, axis=1),
    "mean": lambda t, c: tape.mean_reduce(t, axis=0),
    "max": lambda t, c: tape.max_reduce(t, axis=1),
    "relu": lambda t, c: tape.relu(t),
    "gelu": lambda t, c: tape.gelu(t),
    "sigmoid": lambda t, c: tape.sigmoid(t),
    "softplus": lambda t, c: tape.softplus(t),
    "softmax": lambda t, c: tape.softmax(t, axis=-1),
    "log_softmax": lambda t, c: tape.log_softmax(t, axis=-1),
    "layer_norm": lambda t, c: tape.layer_norm_core(t),
}
del OP_CASES["add_broadcast"]


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_every_op_passes_grad_check(name):
    fn = OP_CASES[name]
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        theta = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        const = Tensor(rng.standard_normal((3, 4)))
        err = grad_check(_scalarize(rng, lambda t: fn(t, const)), theta)
        worst = max(worst, err)
    assert worst < 1e-6, f"{name}: max rel err {worst}"


def test_grad_check_sum_of_squares():
    theta = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    err = grad_check(lambda t: tape.sum_reduce(tape.mul(t, t)), theta)
    assert err < 1e-8


def test_grad_check_softmax_cross_entropy():
    rng = np.random.default_rng(7)
    theta = Tensor(rng.standard_normal(3), requires_grad=True)

    def f(t):
        ls = tape.log_softmax(t, axis=-1)
        return tape.neg(tape.gather_flat(ls, np.array(1)))

    assert grad_check(f, theta) < 1e-6


def test_broadcast_add_gradient_shape():
    w = Tensor(np.random.default_rng(0).standard_normal((4,)), requires_grad=True)
    x = Tensor(np.random.default_rng(1).standard_normal((3, 4)))
    with ComputationRecord() as rec:
        out = tape.sum_reduce(tape.add(x, w))
    rec.backward(out)
    assert_array_equal(rec.grad(w), np.full(4, 3.0))


def test_grad_check_raises_on_non_finite():
    theta = Tensor(np.array([710.0]), requires_grad=True)  # exp overflows

    def f(t):
        e = tape.softplus(tape.scale(t, 3.0))
        return tape.sum_reduce(tape.mul(e, e))

    with pytest.raises(NumericsError):
        grad_check(lambda t: tape.sum_reduce(tape.mul(t, Tensor(np.array([np.inf])))), theta)


# ---------------------------------------------------------------------------
# determinism


def test_forward_and_gradients_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(42)
        x = Tensor(rng.standard_normal((5, 6)), requires_grad=True)
        w = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
        with ComputationRecord() as rec:
            h = tape.gelu(tape.matmul(x, w))
            y = tape.softmax(h, axis=-1)
            loss = tape.mean_reduce(tape.mul(y, y))
        rec.backward(loss)
        return loss.data.tobytes(), rec.grad(w).tobytes(), rec.grad(x).tobytes()

    assert run() == run()
