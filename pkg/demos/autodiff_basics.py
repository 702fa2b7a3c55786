"""Tape-based reverse-mode differentiation on a few small graphs."""

import numpy as np

from npactive import autodiff as ad

# ---- scalar chain ----------------------------------------------------------
# y = sum(tanh(W x + b)) and we want dy/dW, dy/db.

rng = np.random.default_rng(0)
W = ad.parameter(rng.standard_normal((3, 4)), name="W")
b = ad.parameter(np.zeros(3), name="b")
x = ad.constant(rng.standard_normal((4, 1)))

with ad.Tape() as tape:
    h = ad.tanh(ad.add(ad.matmul(W, x), ad.reshape(b, (3, 1))))
    y = ad.sum_(h)
tape.backward(y)

print("y        =", float(y.data))
print("dy/dW row norms:", np.linalg.norm(W.grad, axis=1))
print("dy/db    =", b.grad)

# ---- check one entry against central differences ----------------------------

h_step = 1e-6
w0 = W.data.copy()
i, j = 1, 2


def forward(w):
    hidden = np.tanh(w @ x.data + b.data.reshape(3, 1))
    return hidden.sum()


w_plus = w0.copy()
w_plus[i, j] += h_step
w_minus = w0.copy()
w_minus[i, j] -= h_step
fd = (forward(w_plus) - forward(w_minus)) / (2 * h_step)
print(f"dW[{i},{j}]: tape {W.grad[i, j]:.8f} vs fd {fd:.8f}")

# ---- a few optimizer steps on a quadratic bowl ------------------------------

target = np.array([2.0, -1.0])
p = ad.parameter(np.zeros(2), name="p")
opt = ad.Adam([p], lr=0.1)
for step in range(200):
    with ad.Tape() as tape:
        diff = ad.sub(p, ad.constant(target))
        loss = ad.sum_(ad.mul(diff, diff))
    opt.zero_grad()
    tape.backward(loss)
    opt.step()
print("after 200 Adam steps p =", p.data, "(target", target, ")")
