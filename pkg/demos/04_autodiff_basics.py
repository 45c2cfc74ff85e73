"""
The reverse-mode autodiff core on its own
=========================================

The training stack sits on a small tape-based tensor library.  This
script shows the raw pieces: build a graph, call backward, compare one
gradient against finite differences, then fit a two-layer network to
a toy function with the bundled AdamW.
"""

import numpy as np

from event2vec import autodiff as ad
from event2vec.optim import AdamW

# a scalar graph by hand: loss = mean((tanh(x @ w) - y)^2)
rng = np.random.default_rng(0)
x = ad.Tensor(rng.standard_normal((8, 3)))
w = ad.Tensor(rng.standard_normal((3, 1)) * 0.5, requires_grad=True)
y = ad.Tensor(rng.standard_normal((8, 1)))
loss = ad.mse(ad.tanh(ad.matmul(x, w)), y)
loss.backward()
print(f"loss {float(loss.data):.4f}, dloss/dw {w.grad.ravel().round(4)}")

# the same gradient by central finite differences
h = 1e-6
fd = np.zeros(3)
for i in range(3):
    for sign in (+1, -1):
        w.data[i, 0] += sign * h
        val = float(ad.mse(ad.tanh(ad.matmul(x, w)), y).data)
        fd[i] += sign * val / (2 * h)
        w.data[i, 0] -= sign * h
print(f"finite differences   {fd.round(4)}")
print(f"max abs difference   {np.abs(fd - w.grad.ravel()).max():.2e}")

# fit sin on [-pi, pi] with a 32-unit ReLU layer and AdamW
xs = np.linspace(-np.pi, np.pi, 256)[:, None]
ys = np.sin(xs)
w1 = ad.Tensor(rng.standard_normal((1, 32)) * 0.5, requires_grad=True)
b1 = ad.Tensor(np.zeros(32), requires_grad=True)
w2 = ad.Tensor(rng.standard_normal((32, 1)) * 0.2, requires_grad=True)
b2 = ad.Tensor(np.zeros(1), requires_grad=True)
opt = AdamW([w1, b1, w2, b2], lr=1e-2)

def forward():
    h1 = ad.relu(ad.add(ad.matmul(ad.Tensor(xs), w1), b1))
    return ad.add(ad.matmul(h1, w2), b2)

for step in range(400):
    opt.zero_grad()
    loss = ad.mse(forward(), ad.Tensor(ys))
    loss.backward()
    opt.step()
    if step % 100 == 0 or step == 399:
        print(f"step {step:3d}: mse {float(loss.data):.5f}")

with ad.no_grad():
    pred = forward().data
print(f"fit sin(x): max abs error {np.abs(pred - ys).max():.3f}")
