# %% [markdown]
# Checking the autodiff engine against finite differences
#
# Every operation in `lla.autodiff` carries a hand-written backward rule.
# Here we compare a few of them with central differences, then look at the
# one rule that deliberately lies: gradient reversal.

# %%
import numpy as np

from lla import autodiff as ad
from lla.autodiff import Tensor

rng = np.random.default_rng(0)


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# %% An LSTM-ish expression: sum(sigmoid(W x) * tanh(W x))
W = rng.standard_normal((3, 4))
x = rng.standard_normal(4)


def forward(x_raw, track=False):
    xt = Tensor(x_raw, requires_grad=track)
    h = ad.matmul(Tensor(W), xt)
    return xt, ad.sum(ad.mul(ad.sigmoid(h), ad.tanh(h)))


xt, out = forward(x, track=True)
out.backward()
numeric = fd_grad(lambda v: forward(v)[1].item(), x)
print("analytic ", np.round(xt.grad, 6))
print("numeric  ", np.round(numeric, 6))
print("max abs difference", np.abs(xt.grad - numeric).max())

# %% [markdown]
# Gradient reversal is the identity going forward and multiplies the
# incoming gradient by -lambda going back.  The adversary sits behind one
# of these so that the encoder is pushed *away* from what the adversary
# can read.

# %%
v = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
y = ad.grad_reverse(v, 1e-4)
y.backward(np.ones(3))
print("forward", y.data, " backward", v.grad)
