# %% [markdown]
# A short walk through the numpy autodiff engine that every model in the
# package is built on.  Run with ``python demos/01_autodiff_tour.py``.

# %%
import numpy as np

from igrsr import tensor as T
from igrsr.tensor import Tensor, grad_check

rng = np.random.default_rng(0)

# %%
# A Tensor wraps a float64 array.  Operations record how to push gradients
# back, and ``backward`` on a scalar fills ``.grad`` on every leaf.
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
y = T.relu(x @ w).sum()
y.backward()
print("loss", y.item())
print("d loss / d w\n", w.grad)

# %%
# Broadcasting works the way numpy does it; the gradient of a broadcast
# operand is summed back down to that operand's own shape.
bias = Tensor(np.zeros(2), requires_grad=True)
(x @ w + bias).sum().backward()
print("bias grad (one count per row):", bias.grad)

# %%
# Attention with a boolean mask.  True means "may attend".  Here each query
# sees only the keys up to its own position.
q = Tensor(rng.normal(size=(1, 4, 8)))
mask = np.tril(np.ones((4, 4), dtype=bool))
out, weights = T.scaled_dot_attention(q, q, q, mask, return_weights=True)
print("causal attention weights\n", np.round(weights.data[0], 3))

# %%
# grad_check compares reverse-mode gradients with central differences and
# reports the worst relative error.  Anything near 1e-8 is round-off.
a = Tensor(rng.normal(size=(5, 3)))
b = Tensor(rng.normal(size=(5, 3)))
err = grad_check(lambda a, b: T.cosine_similarity(a, b).sum(), [a, b])
print(f"cosine similarity grad check: {err:.2e}")
