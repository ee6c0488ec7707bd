# Supercritical versus subcritical mass: watch the moment and the peak.
import math

from kellersegel import harness
from kellersegel.mesh import build_uniform_rect_mesh

mesh = build_uniform_rect_mesh((0, 1), (0, 1), 64, 64)

for mass in (4 * math.pi, 10 * math.pi):
    r = harness.blowup_study(mesh, harness.Gaussian(width=0.05, mass=mass), final_time=1.0)
    print(f"\nmass {mass:.4f}: verdict {r.verdict}, status {r.status}, t_max {r.t_max}")
    print("growth of u_max:", round(r.growth, 2))
    for rec in r.history[:10]:
        print(f"  k={rec.k:3d} u_max={rec.u_max:12.4f} moment={rec.moment:.6e}")

# On a fixed mesh the density cannot exceed mass / (lumped weight of one vertex);
# the run stops once one vertex carries 99% of the mass.
print("\npeak a single vertex can hold:", 10 * math.pi / (mesh.area / mesh.n_triangles * 2))
print("moment decrements (M^{k+1} - M^k) / tau:", r.moment_decrements())
