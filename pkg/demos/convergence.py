# Self-convergence of the scheme: tau = h on three levels, one finer level as reference.
import math

import numpy as np

from kellersegel import harness
from kellersegel.mesh import build_uniform_rect_mesh

coarse = build_uniform_rect_mesh((0, 1), (0, 1), 16, 16)
initial = harness.Gaussian(width=0.2, mass=4 * math.pi)

table = harness.convergence_study(coarse, initial, final_time=0.0625, levels=3)
print("reference h =", table.reference_h)
print(" h        err_u(L2_h)   err_v(H1)    rate_u  rate_v")
for r in table.rows:
    print(f"{r.h:<8.5f} {r.err_u_l2h:12.5e} {r.err_v_h1:12.5e}  {r.rate_u:6.3f}  {r.rate_v:6.3f}")

# The reference is itself only first-order accurate, which biases the
# pairwise rates upward on the finest pair. A straight-line fit is steadier.
h = np.array([r.h for r in table.rows])
for name, err in [("u", [r.err_u_l2h for r in table.rows]), ("v", [r.err_v_h1 for r in table.rows])]:
    print("fitted rate", name, np.polyfit(np.log(h), np.log(err), 1)[0])

# Halving tau relative to h shrinks both errors together
half = harness.convergence_study(coarse, initial, final_time=0.0625, levels=3, coupling=0.5)
print("coupling 0.5, finest err_u:", half.rows[-1].err_u_l2h, "vs", table.rows[-1].err_u_l2h)
