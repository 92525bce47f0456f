import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lla import autodiff as ad
from lla.autodiff import Adam, AdamState, SparseRows, Tensor, adam_step
from lla.errors import DimensionError, DomainError, PreconditionError, TrainingError

from conftest import analytic_grads, numerical_grad, rel_error

# op name -> (builder, input generator); inputs avoid kinks and log's pole
OPS = {
    "matmul": (lambda a, b: ad.matmul(a, b), lambda r: [r.standard_normal((3, 4)), r.standard_normal((4, 2))]),
    "matvec": (lambda a, b: ad.matmul(a, b), lambda r: [r.standard_normal((3, 4)), r.standard_normal(4)]),
    "add": (lambda a, b: ad.add(a, b), lambda r: [r.standard_normal(5), r.standard_normal(5)]),
    "mul": (lambda a, b: ad.mul(a, b), lambda r: [r.standard_normal(5), r.standard_normal(5)]),
    "scale": (lambda a: ad.scale(a, -2.5), lambda r: [r.standard_normal(4)]),
    "sum": (lambda a: ad.sum(a), lambda r: [r.standard_normal(6)]),
    "mean": (lambda a: ad.mean(a), lambda r: [r.standard_normal(6)]),
    "add_n": (lambda a, b, c: ad.add_n([a, b, c]), lambda r: [r.standard_normal(3) for _ in range(3)]),
    "sigmoid": (ad.sigmoid, lambda r: [r.standard_normal(6) * 3]),
    "tanh": (ad.tanh, lambda r: [r.standard_normal(6) * 2]),
    "relu": (ad.relu, lambda r: [np.where(np.abs(x := r.standard_normal(6)) < 0.05, 0.5, x)]),
    "log": (ad.log, lambda r: [r.uniform(0.1, 3.0, 5)]),
    "log_eps": (lambda a: ad.log(a, eps=1e-12), lambda r: [r.uniform(0.1, 3.0, 5)]),
    "concat": (lambda a, b: ad.concat([a, b]), lambda r: [r.standard_normal(3), r.standard_normal(4)]),
    "slice": (lambda a: ad.slice_(a, 2, 5), lambda r: [r.standard_normal(7)]),
    "row": (lambda t: ad.row(t, 2), lambda r: [r.standard_normal((4, 3))]),
    "maxpool": (lambda a, b, c: ad.maxpool_vectors([a, b, c]), lambda r: [r.standard_normal(8) for _ in range(3)]),
    "grad_reverse": (lambda a: ad.grad_reverse(a, 0.3), lambda r: [r.standard_normal(4)]),
    "softmax": (ad.softmax, lambda r: [r.standard_normal(6)]),
    "bce": (lambda p: ad.bce_loss(p, np.array([1.0, 0.0, 1.0, 0.3])), lambda r: [r.uniform(0.05, 0.95, 4)]),
    "nll": (lambda lp: ad.nll_loss(lp, 2), lambda r: [r.standard_normal(5)]),
    "lstm_like": (lambda w, x: ad.mul(ad.sigmoid(ad.matmul(w, x)), ad.tanh(ad.matmul(w, x))),
                  lambda r: [r.standard_normal((3, 4)), r.standard_normal(4)]),
}


def _sparse_to_dense(g, like):
    return g.to_dense() if isinstance(g, SparseRows) else g


# grad_reverse is deliberately not the derivative of its forward pass
FD_FACTOR = {"grad_reverse": -0.3}


def check_gradients(name, seed):
    build, gen = OPS[name]
    arrays = gen(np.random.default_rng(seed))
    grads, scalar = analytic_grads(build, arrays)
    for i, g in enumerate(grads):
        num = FD_FACTOR.get(name, 1.0) * numerical_grad(scalar, arrays, i)
        err = rel_error(_sparse_to_dense(g, arrays[i]), num)
        assert err < 1e-4, f"{name} operand {i}: relative error {err}"


@pytest.mark.parametrize("name", sorted(OPS))
def test_finite_differences_100_trials(name):
    for seed in range(100):
        check_gradients(name, seed)


# ---------------------------------------------------------------------------
# matmul

def test_matmul_identity():
    out = ad.matmul(np.eye(2), np.array([[5.0], [7.0]]))
    np.testing.assert_array_equal(out.data, [[5.0], [7.0]])


def test_matmul_scalar_matrices():
    assert ad.matmul([[2.0]], [[3.0]]).data.tolist() == [[6.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


# ---------------------------------------------------------------------------
# elementwise

def test_sigmoid_relu_values():
    assert ad.sigmoid(np.array(0.0)).item() == 0.5
    np.testing.assert_array_equal(ad.relu(np.array([-3.0, 2.0])).data, [0.0, 2.0])


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    ad.sum(ad.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_mul_and_gradient_of_sum():
    a = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    b = Tensor(np.array([4.0, 5.0]))
    out = ad.mul(a, b)
    np.testing.assert_array_equal(out.data, [8.0, 15.0])
    ad.sum(out).backward()
    np.testing.assert_array_equal(a.grad, [4.0, 5.0])


def test_binary_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.add(np.ones(2), np.ones(3))
    with pytest.raises(DimensionError):
        ad.concat([np.ones((2, 2)), np.ones((2, 3))])


def test_log_domain_error_without_guard():
    with pytest.raises(DomainError):
        ad.log(np.array([1.0, 0.0]))
    assert np.isfinite(ad.log(np.array([0.0]), eps=ad.EPS).data).all()


# ---------------------------------------------------------------------------
# maxpool

def test_maxpool_values():
    out = ad.maxpool_vectors([np.array([1.0, 2.0]), np.array([3.0, 0.0])])
    np.testing.assert_array_equal(out.data, [3.0, 2.0])


def test_maxpool_single_vector_is_identity():
    v = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(ad.maxpool_vectors([v]).data, v)


def test_maxpool_matches_loop_and_routes_one_hot():
    rng = np.random.default_rng(7)
    raw = [rng.standard_normal(8) for _ in range(5)]
    vs = [Tensor(v, requires_grad=True) for v in raw]
    out = ad.maxpool_vectors(vs)
    expected = [max(v[i] for v in raw) for i in range(8)]
    np.testing.assert_array_equal(out.data, expected)
    ad.sum(out).backward()
    received = np.array([[v.grad[i] != 0 if v.grad is not None else False for v in vs] for i in range(8)])
    assert (received.sum(axis=1) == 1).all()


def test_maxpool_ties_go_to_lowest_index():
    a = Tensor(np.zeros(3), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    ad.sum(ad.maxpool_vectors([a, b])).backward()
    np.testing.assert_array_equal(a.grad, [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(b.grad, [0.0, 0.0, 0.0])


def test_maxpool_empty_list():
    with pytest.raises(PreconditionError):
        ad.maxpool_vectors([])


# ---------------------------------------------------------------------------
# gradient reversal

def test_grad_reverse_forward_identity():
    x = np.array([1.5, -2.0])
    np.testing.assert_array_equal(ad.grad_reverse(x, 0.5).data, x)


def test_grad_reverse_scales_upstream_by_minus_lambda():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    ad.grad_reverse(x, 0.0001).backward(np.array([1.0, 1.0]))
    np.testing.assert_array_equal(x.grad, [-0.0001, -0.0001])


def test_grad_reverse_twice_restores_gradient():
    x = Tensor(np.array([0.7, 2.0, -1.0]), requires_grad=True)
    up = np.array([0.25, -3.0, 1.5])
    ad.grad_reverse(ad.grad_reverse(x, 1.0), 1.0).backward(up)
    np.testing.assert_array_equal(x.grad, up)


def test_grad_reverse_requires_positive_lambda():
    with pytest.raises(PreconditionError):
        ad.grad_reverse(np.ones(2), 0.0)


# ---------------------------------------------------------------------------
# softmax

def test_softmax_symmetric_and_stable():
    np.testing.assert_array_equal(ad.softmax(np.zeros(2)).data, [0.5, 0.5])
    out = ad.softmax(np.array([1000.0, 0.0])).data
    assert np.isfinite(out).all()
    assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_is_a_distribution(xs):
    s = ad.softmax(np.array(xs)).data
    assert abs(s.sum() - 1.0) < 1e-9
    assert ((s >= 0) & (s <= 1)).all()


# ---------------------------------------------------------------------------
# losses

def test_bce_analytic_value():
    assert ad.bce_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0])).item() == pytest.approx(math.log(2))


def test_bce_at_target_is_zero():
    eps = ad.EPS
    pred = np.array([eps, 1 - eps, eps])
    assert ad.bce_loss(pred, np.array([0.0, 1.0, 0.0])).item() == pytest.approx(0.0, abs=1e-9)


def test_bce_matches_loop():
    rng = np.random.default_rng(3)
    p = rng.uniform(0.01, 0.99, 7)
    t = rng.uniform(0, 1, 7)
    expected = 0.0
    for pi, ti in zip(p, t):
        expected -= ti * math.log(pi) + (1 - ti) * math.log(1 - pi)
    expected /= 7
    assert abs(ad.bce_loss(p, t).item() - expected) < 1e-10


def test_bce_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.bce_loss(np.full(3, 0.5), np.zeros(2))


def test_nll_values():
    lp = ad.log(np.array([1.0, 0.0, 0.0]), eps=ad.EPS)
    assert ad.nll_loss(lp, 0).item() == pytest.approx(0.0, abs=1e-9)
    uniform = np.log(np.full(4, 0.25))
    for k in range(4):
        assert ad.nll_loss(uniform, k).item() == pytest.approx(math.log(4))
    rng = np.random.default_rng(5)
    v = rng.standard_normal(6)
    assert ad.nll_loss(v, 3).item() == -v[3]


def test_nll_index_out_of_range():
    with pytest.raises(PreconditionError):
        ad.nll_loss(np.zeros(3), 3)


# ---------------------------------------------------------------------------
# engine behaviour

def test_shared_subexpression_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = ad.mul(x, x)
    ad.sum(ad.add(y, y)).backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = ad.sigmoid(x)
    assert not y.requires_grad


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(11)
        w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        x = Tensor(rng.standard_normal(3))
        loss = ad.nll_loss(ad.log(ad.softmax(ad.matmul(w, x)), eps=ad.EPS), 1)
        loss.backward()
        return loss.data.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_sparse_row_gradient():
    table = Tensor(np.zeros((5, 2)), requires_grad=True, sparse_grad=True)
    ad.sum(ad.add(ad.row(table, 1), ad.row(table, 3))).backward()
    assert isinstance(table.grad, SparseRows)
    assert table.grad.nonzero_rows() == [1, 3]


# ---------------------------------------------------------------------------
# Adam

def test_adam_zero_gradient_dense():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = AdamState()
    adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_hand_computed():
    # m = 0.1, v = 0.001; bias-corrected m_hat = 1, v_hat = 1
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState(lr=0.1)
    adam_step([p], [np.array([1.0])], state)
    assert p.data[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)


def test_adam_second_step_hand_computed():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState(lr=0.1)
    adam_step([p], [np.array([1.0])], state)
    adam_step([p], [np.array([-0.5])], state)
    m = 0.9 * 0.1 + 0.1 * -0.5
    v = 0.999 * 0.001 + 0.001 * 0.25
    m_hat = m / (1 - 0.9 ** 2)
    v_hat = v / (1 - 0.999 ** 2)
    expected = -0.1 / (1 + 1e-8) - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p.data[0] == pytest.approx(expected, rel=1e-10)


def test_sparse_adam_touches_only_nonzero_rows():
    rng = np.random.default_rng(2)
    p = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
    opt = Adam([p], lr=0.1, sparse=True)
    p.grad = rng.standard_normal((6, 4))
    opt.step()
    before = p.data.copy()
    m_before = opt.state.m[0].copy()
    v_before = opt.state.v[0].copy()
    g = np.zeros((6, 4))
    g[3] = rng.standard_normal(4)
    p.grad = g
    opt.step()
    others = [i for i in range(6) if i != 3]
    assert p.data[others].tobytes() == before[others].tobytes()
    assert opt.state.m[0][others].tobytes() == m_before[others].tobytes()
    assert opt.state.v[0][others].tobytes() == v_before[others].tobytes()
    assert not np.array_equal(p.data[3], before[3])


def test_sparse_adam_accepts_sparse_rows():
    p = Tensor(np.zeros((4, 2)), requires_grad=True, sparse_grad=True)
    ad.sum(ad.row(p, 2)).backward()
    Adam([p], lr=0.1, sparse=True).step()
    assert np.count_nonzero(p.data[[0, 1, 3]]) == 0
    np.testing.assert_allclose(p.data[2], [-0.1, -0.1], rtol=1e-6)


def test_adam_nan_gradient_names_parameter():
    p = Tensor(np.zeros(2), requires_grad=True, name="decoder.w_hh")
    with pytest.raises(TrainingError, match="decoder.w_hh"):
        adam_step([p], [np.array([np.nan, 0.0])], AdamState())


def test_adam_state_validates_betas():
    with pytest.raises(PreconditionError):
        AdamState(beta1=1.0)


def test_shared_weight_accumulates_rank_one_updates():
    rng = np.random.default_rng(7)
    w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    xs = [rng.standard_normal(3) for _ in range(3)]
    gs = [rng.standard_normal(4) for _ in range(3)]
    ad.add_n([ad.sum(ad.mul(ad.matmul(w, x), Tensor(g))) for x, g in zip(xs, gs)]).backward()
    np.testing.assert_allclose(w.grad, sum(np.outer(g, x) for x, g in zip(xs, gs)), rtol=1e-14)
