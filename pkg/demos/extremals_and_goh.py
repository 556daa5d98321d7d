"""Normal extremals by shooting, reconstruction from a terminal covector, Goh data."""
import numpy as np

from srlab.endpoint import d_endpoint_operator
from srlab.extremal import (goh_diagnostics, nodes_to_control, normal_controls, reconstruct, shoot_normal)
from srlab.flow import Control, integrate
from srlab.srgeom import preset

engel = preset("engel")
p0 = np.array([0.4, -0.7, 0.5, 0.3])
ext = shoot_normal(engel, np.zeros(4), p0, substeps=1024)
H = ext.hamiltonian_values(engel)
print("Engel shot endpoint:", np.round(ext.gamma[-1], 6), " Hamiltonian drift:", np.ptp(H) / H[0])

# the control u = B^T p reproduces the same covector path through the adjoint
for N in (64, 128, 256):
    u = nodes_to_control(normal_controls(engel, ext), N)
    rec = reconstruct(integrate(engel, u, np.zeros(4)), ext.p[-1], 1)
    step = 1024 // (4 * N)
    print(f"N={N}: sup covector error {np.max(np.abs(rec.p - ext.p[::step])):.2e}")

mart = preset("martinet")
b = integrate(mart, Control.constant([0, 1]), [0, 0, 0])
op = d_endpoint_operator(b)
lam = op.null_covectors()[0]
g = goh_diagnostics(reconstruct(b, lam, 0), mart, op.corank, op)
print("Martinet singular line: abnormal covector", np.round(lam, 12), " Goh residual", g.normalized,
      " goh_rank", g.goh_rank)
