"""Dini derivatives, the dichotomy scan and the comparison verifier."""
import numpy as np

from srlab.nonsmooth import classify_point, comparison_check, dichotomy_scan, dini
from srlab.srgeom import preset

print("|x| at 0:", dini(np.abs, 0.0).as_tuple())
print("sqrt|x| at 0:", dini(lambda x: np.sqrt(np.abs(x)), 0.0).as_tuple())
print("x sin(1/x) at 0:", np.round(dini(lambda x: x * np.sin(1 / np.where(x == 0, 1, x)), 0.0).as_tuple(), 3))

k = np.arange(21)
weier = lambda x: np.sum(2.0 ** (-k / 2) * np.cos(np.multiply.outer(np.asarray(x, float), 2.0 ** k)), axis=-1)
for name, f in (("sin", np.sin), ("Weierstrass", weier)):
    labels = [lab for _, lab, _ in dichotomy_scan(f, (0, 1), 1000)]
    print(name, {lab: labels.count(lab) for lab in sorted(set(labels))})

print("V-shaped dip:", comparison_check(lambda s: -2 * np.minimum(s, 1 - s), 0, 1, 1, 1))
# at eps = sigma (b - a) / 4 a shallow convex dip meets the hypothesis yet undercuts D
print("shallow dip, eps = 1/4:", comparison_check(lambda s: -0.5 * s * (1 - s), 0, 1, 0.25, 1))
print("shallow dip, eps = 1:  ", comparison_check(lambda s: -0.5 * s * (1 - s), 0, 1, 1.0, 1))

# the vertical axis is cut locus: the multipliers of the rotated circles are
# supergradients of f there, and none of them supports f from below
est = classify_point(preset("heisenberg"), [0, 0, 0], [0, 0, 1 / (2 * np.pi)])
print("Heisenberg vertical target:", est.lipschitz_class, "with", len(est.candidates), "candidates")
for c in est.candidates:
    print("  ", c["source"], np.round(c["covector"], 4), "supported" if c["supported"] else "not supported")
