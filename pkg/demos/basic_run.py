# A subcritical Keller-Segel run on the unit square, step by step.
import math

import numpy as np

from kellersegel import diagnostics as dg
from kellersegel import harness, scheme
from kellersegel.mesh import build_uniform_rect_mesh

mesh = build_uniform_rect_mesh((0, 1), (0, 1), 32, 32)
print(mesh.n_vertices, "vertices,", mesh.n_triangles, "triangles, h =", mesh.h)

# mass 4 pi is half the critical mass 8 pi / (alpha chi) when alpha = chi = 1
params = scheme.SchemeParams(chi=1.0, alpha=1.0, tau=1 / 32)
print("critical mass:", dg.blowup_threshold(params.alpha, params.chi))

state = harness.initial_state(mesh, harness.Gaussian(width=0.1, mass=4 * math.pi), params)
weight = dg.build_moment_weight(mesh)

# One step by hand. Newton reports its own iteration count.
out = scheme.nonlinear_step(state)
print("first step:", out.status, out.newton_iterations, "Newton iterations")

# Many steps, with a diagnostics record per step
result = scheme.advance(state, 64, weight=weight)
for r in result.history[::8]:
    print(f"t={r.t:6.3f}  mass={r.mass:.12f}  u_max={r.u_max:9.4f}  energy={r.energy:10.5f}  moment={r.moment:.5f}")

print("mass drift:", dg.max_mass_drift(result.history))
print("energy increases:", dg.energy_violations(result.history))
# the density relaxes to the uniform state u = mass / area
print("max - min of u at the end:", np.ptp(result.state.u), "around", 4 * math.pi)
