"""Trajectories, the variational matrix and the end-point differentials."""
import numpy as np

from srlab.endpoint import d2_endpoint, d_endpoint, d_endpoint_operator, endpoint
from srlab.flow import Control, endpoint_only, integrate
from srlab.srgeom import preset

heis = preset("heisenberg")


def circle(N):
    return Control.from_function(lambda t: 2 * np.pi * np.vstack([-np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)]), N)


# the circle control sweeps the enclosed area into the z coordinate
for N in (64, 256, 1024, 4096):
    z = endpoint_only(heis, circle(N), [0, 0, 0])[2]
    print(f"N={N:5d}: z(1) = {z:.10f}  (pi - z = {np.pi - z:.2e}, polygon area error)")

u = Control.constant([1.0, 0.2])
v = Control.from_function(lambda t: np.vstack([np.cos(3 * t), t ** 2]), 64)
# E is exactly quadratic on the Heisenberg frame, so test the expansion on Engel
engel = preset("engel")
b = integrate(engel, u, np.zeros(4))
d1, d2 = d_endpoint(b, v).d_endpoint, d2_endpoint(b, v)
for s in (1e-1, 1e-2, 1e-3):
    err = endpoint(engel, u + s * v, np.zeros(4)) - b.endpoint - s * d1 - 0.5 * s * s * d2
    print(f"step {s:.0e}: second-order Taylor remainder {np.linalg.norm(err):.2e}")

mart = preset("martinet")
for label, c in (("singular line", [0, 1]), ("generic", [0.3, 1])):
    op = d_endpoint_operator(integrate(mart, Control.constant(c), [0, 0, 0]))
    print(f"Martinet {label}: singular values {np.round(op.singular_values, 6)}, corank {op.corank}")
