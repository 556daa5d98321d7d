"""Restricted second variation, Goh probes and the openness experiment."""
import numpy as np

from srlab.endpoint import d_endpoint_operator
from srlab.flow import Control, integrate
from srlab.index import (OscProbe, form_on_basis, goh_quadratic, kernel_basis, negative_index,
                         openness_experiment, probe_span, restricted_form)
from srlab.srgeom import preset

heis = preset("heisenberg")
lam = [0, 0, 1]
for N in (64, 256, 1024):
    b = integrate(heis, Control.constant([1, 0], N), [0, 0, 0])
    g = goh_quadratic(b, lam, OscProbe(0.5, 0.25, 1, 2))
    print(f"N={N:4d}: q_exact {g['q_exact']:.8f}  q_model {g['q_model']:.8f}")

b = integrate(heis, Control.constant([1, 0]), [0, 0, 0])
for cap in (10, 20, 40):
    form = restricted_form(b, lam, kernel_basis(d_endpoint_operator(b), cap))
    print(f"kernel dim {cap}: negative index {negative_index(form)}")

M = np.array([[0.0, 1.0], [-1.0, 0.0]])
for n_bar in (2, 4, 8):
    G = form_on_basis(M, probe_span(OscProbe(0.0, 1.0, 1, 2), n_bar, 512), 0.0)
    print(f"antisymmetric model, {2 * n_bar} probes: negative index {negative_index(G)}")

mart = preset("martinet")
rep = openness_experiment(mart, Control.constant([0, 1]), radii=(1e-2, 1e-3, 1e-4),
                          directions=[[0, 0, 1], [0, 0, -1]])
for s in rep["split_norms"]:
    print(f"radius {s['radius']:.0e} target {s['target']}: |w1| {s['w1']:.4f} |w2| {s['w2']:.2e} "
          f"{'reached' if s['success'] else 'not reached'}")
