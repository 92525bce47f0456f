import numpy as np
import pytest

from lla.autodiff import Tensor


def numerical_grad(f, arrays, index, h=1e-6):
    """Central finite differences of scalar ``f(*arrays)`` w.r.t. ``arrays[index]``."""
    base = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = target[idx]
        target[idx] = orig + h
        plus = f(*base)
        target[idx] = orig - h
        minus = f(*base)
        target[idx] = orig
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def analytic_grads(build, arrays):
    """Gradients of ``sum(build(*tensors) * weights)`` via backward, plus the scalar function.

    A fixed random projection turns vector outputs into a scalar so every
    output component is exercised.
    """
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = build(*tensors)
    weights = np.random.default_rng(1234).standard_normal(out.shape)
    out.backward(weights if out.shape else None)

    def scalar(*raw):
        value = build(*[Tensor(r) for r in raw]).data
        return float(np.sum(value * weights)) if out.shape else float(value)

    return [t.grad for t in tensors], scalar


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
