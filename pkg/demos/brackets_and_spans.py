"""Field jets, Lie brackets and bracket-span ranks on the shipped frames."""
import numpy as np

from srlab.srgeom import bracket_span, eval_jet, lie_bracket, pre_medium_fat_scan, preset

heis, mart = preset("heisenberg"), preset("martinet")

jet = eval_jet(mart, 2, [2.0, 0.0, 0.0])
print("Martinet X2 at (2,0,0):", jet.value, " d2/dx2 of the z-component:", jet.hessian[2, 0, 0])

for a in (0.0, 0.5, 1.0):
    print(f"Martinet [X1,X2] at x={a}:", lie_bracket(mart, 1, 2, [a, 0.0, 0.0]))

# along x = 0 only a section with an X1 component reaches full span
for c in ([1, 0], [0, 1], [1, 1]):
    r = bracket_span(mart, [0, 0, 0], c)
    print(f"section {c}: dims {r.dim_delta}, {r.dim_delta2}, {r.dim_with_section}")

for name, fr in (("heisenberg", heis), ("martinet", mart)):
    scan = pre_medium_fat_scan(fr, np.zeros(3), 64)
    print(f"{name}: worst section {np.round(scan['worst_section'], 4)}, "
          f"min dim {scan['min_dim']}, passes {scan['passes']}")
