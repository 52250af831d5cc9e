"""
Gradients through a fractional neighbor index
=============================================

Reading message m at a fractional position n blends the rows floor(n) and
floor(n)+1 with a triangular kernel.  The blend is differentiable in n, and
the sign of dL/dn says whether the loss wants the index to move toward older
or newer neighbors.
"""

import numpy as np

from tns import interp

rng = np.random.default_rng(0)
rows = rng.standard_normal((6, 3))        # messages at positions 1..6
M = interp.MessageMatrix(rows)

n = np.array([1.0, 2.25, 4.5])
sampled, tape = interp.interpolate(M, n)
print("integral index 1 reads row 1 exactly:", np.array_equal(sampled[0], rows[0]))
print("n=2.25 equals 0.75*m2 + 0.25*m3:", np.allclose(sampled[1], 0.75 * rows[1] + 0.25 * rows[2]))

# Take a loss L = <u, sampled>.  dL/dn is u . (m_hi - m_lo) on the segment,
# and 0 at integral positions where the kernel has a kink.
u = rng.standard_normal(sampled.shape)
dn = interp.backward_indices(tape, M, u)
print("dL/dn:", dn)

# Compare with a central difference away from the kinks.
eps = 1e-6
for k in (1, 2):
    hi, lo = n.copy(), n.copy()
    hi[k] += eps
    lo[k] -= eps
    f = lambda idx: np.sum(u * interp.interpolate(M, idx)[0])
    print(f"n={n[k]}: analytic {dn[k]:+.6f}, finite difference {(f(hi) - f(lo)) / (2 * eps):+.6f}")

# Gradient descent moves n against dL/dn: a positive sign pulls the index
# toward the newer row floor(n), a negative one pushes it to the older row.
print("move signs:", interp.index_move_sign(tape, M, u))

# Every index is 1 + (s-1) r, so the rate collects the index gradients
# weighted by s-1.  The first index never depends on the rate.
print("dL/dr =", interp.rate_grad(dn))
