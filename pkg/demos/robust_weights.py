"""How the worst client gets more say.

Run with ``python demos/robust_weights.py``.
"""

import numpy as np

from comfedl import derive_stream, kl_to_uniform, lse_value, minimax_value, softmax_weights

losses = np.array([0.2, 0.25, 0.3, 1.4])  # three similar clients and one struggling one

# The implied weights are a softmax of the losses.  Small gamma concentrates
# the mass on the worst client; large gamma flattens it back to uniform.
for gamma in (0.05, 0.2, 1.0, 100.0):
    r = softmax_weights(losses, gamma)
    print(f"gamma={gamma:<6} weights={np.round(r, 3)}  KL to uniform={kl_to_uniform(r):.3f}")

# The weighted minimax value and the log-sum-exp value are the same number,
# computed in two unrelated ways.
gamma = 0.2
print("\nminimax:", minimax_value(losses, gamma))
print("lse:    ", lse_value(losses, gamma))

# Between the mean and the max, moving with gamma.
print("\nmean", losses.mean(), "max", losses.max())
for gamma in (1e3, 1.0, 0.1, 1e-3):
    print(f"  lse at gamma={gamma:g}: {lse_value(losses, gamma):.4f}")

# Shifting every loss leaves the weights alone and shifts the value.
rng = derive_stream(0, 0, 0, 0, "demo")
shift = rng.uniform(-5, 5)
print("\nweights unchanged under a shift:",
      np.allclose(softmax_weights(losses + shift, 0.2), softmax_weights(losses, 0.2)))
