"""Minimizing geodesics, multipliers, the penalized value and second-order certificates."""
import numpy as np

from srlab.extremal import shoot_normal
from srlab.flow import Control, integrate
from srlab.geodesic import (PenaltyBarrier, SolverOptions, extract_multiplier, penalty_W,
                            second_order_certificate, solve_geodesic)
from srlab.srgeom import preset

heis = preset("heisenberg")
opts = SolverOptions(restarts=8)
for y in ([1, 0, 0], [0, 0, 1 / (2 * np.pi)], [0.4, 0.3, 0.1]):
    r = solve_geodesic(heis, [0, 0, 0], y, opts)
    print(f"y={np.round(y, 4)}: distance {r.distance:.6f}, multiplier {np.round(r.multiplier, 4)}, "
          f"corank {r.corank}, goh_rank {r.goh.goh_rank}")
    # the multiplier, transported to t = 0, shoots back to the target
    end = shoot_normal(heis, [0, 0, 0], r.multiplier @ r.bundle.S[-1], 1024).gamma[-1]
    print("   exp(p(0)) =", np.round(end, 6))

y = [0, 0, 1 / (2 * np.pi)]
circle = Control.from_function(lambda t: np.sqrt(2) * np.vstack([-np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)]))
for delta in (0.5, 1.0, 4.0):
    print(f"W with barrier delta={delta}: {penalty_W(heis, [0, 0, 0], y, circle, PenaltyBarrier(delta)):.6f}")

r = np.sqrt(1 / (2 * np.pi ** 2))
twice = Control.from_function(lambda t: 4 * np.pi * r * np.vstack([-np.sin(4 * np.pi * t), np.cos(4 * np.pi * t)]))
b = integrate(heis, twice, [0, 0, 0])
cert = second_order_certificate(b, extract_multiplier(b)["multiplier"])
print("double loop to", np.round(b.endpoint, 4), "min eigenvalue on the kernel:", round(cert["min_eig_on_kernel"], 4))
