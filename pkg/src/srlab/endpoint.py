"""End-point map, energy and their first and second differentials."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SegmentationMismatch
from .flow import (DEFAULT_SUBSTEPS, Control, TrajectoryBundle, endpoint_only)
from .srgeom import RANK_RTOL, PolyFrame


@dataclass(frozen=True, eq=False)
class FirstVariation:
    delta1: np.ndarray
    d_endpoint: np.ndarray


@dataclass(frozen=True, eq=False)
class EndpointOperator:
    """Discretized D_uE acting on the flattened control values.

    ``singular_values``, ``left`` and ``right`` come from the SVD of
    ``matrix * sqrt(N)``, i.e. of the operator measured in the L2 norm.
    """

    matrix: np.ndarray
    singular_values: np.ndarray
    left: np.ndarray
    right: np.ndarray
    corank: int
    bundle: TrajectoryBundle = field(repr=False)

    @property
    def rank(self) -> int:
        return self.matrix.shape[0] - self.corank

    @property
    def svd(self):
        return self.left, self.singular_values, self.right

    def null_covectors(self) -> np.ndarray:
        """Orthonormal basis of (Im D_uE)^perp as rows."""
        return self.left[:, self.rank:].T.copy()

    def kernel_coefficients(self) -> np.ndarray:
        """Euclidean-orthonormal basis of Ker(matrix) in coefficient space, as rows."""
        c = self.__dict__.get("_kernel")
        if c is None:
            N = self.bundle.control.n_segments
            _, s, vt = np.linalg.svd(self.matrix * np.sqrt(N), full_matrices=True)
            r = int(np.sum(s > RANK_RTOL * max(s[0] if len(s) else 0.0, 1.0)))
            c = vt[r:].copy()
            self.__dict__["_kernel"] = c
        return c

    def dump(self, csv_path, json_path) -> None:
        np.savetxt(csv_path, self.matrix, delimiter=",", fmt="%.17g")
        with open(json_path, "w") as fh:
            json.dump({"singular_values": [float(s) for s in self.singular_values],
                       "corank": int(self.corank)}, fh, indent=2)


def endpoint(frame: PolyFrame, control: Control, x0, substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    return endpoint_only(frame, control, x0, substeps)


def _check(bundle: TrajectoryBundle, v: Control):
    if v.n_segments != bundle.control.n_segments or v.m != bundle.control.m:
        raise SegmentationMismatch(
            f"direction has {v.n_segments}x{v.m} values, bundle uses "
            f"{bundle.control.n_segments}x{bundle.control.m}; resample first")


def _interval_integrals(bundle: TrajectoryBundle) -> np.ndarray:
    """W[k] ~ int over step k of S^-1 B dt, Hermite-corrected trapezoid (4th order).

    The derivative of G = S^-1 B uses the control of the segment owning the
    step, so values at segment boundaries are one-sided.
    """
    W = bundle.__dict__.get("_gint")
    if W is not None:
        return W
    h = bundle.grid[1] - bundle.grid[0]
    Si, B, J = bundle.S_inv, bundle.B, bundle.jac
    U = bundle.control.values[bundle.seg_index]           # (K, m)
    G = Si @ B                                              # (K+1, n, m)

    def gdot(idx):
        u = U
        A = np.einsum("ki,kiab->kab", u, J[idx])
        gdot_ = np.einsum("kam,km->ka", B[idx], u)          # gamma'
        Bdot = np.einsum("kiab,kb->kai", J[idx], gdot_)     # columns J_i gamma'
        return Si[idx] @ (Bdot - A @ B[idx])

    left, right = np.arange(len(U)), np.arange(1, len(U) + 1)
    W = 0.5 * h * (G[:-1] + G[1:]) + h * h / 12.0 * (gdot(left) - gdot(right))
    bundle.__dict__["_gint"] = W
    return W


def _delta1_batch(bundle: TrajectoryBundle, V: np.ndarray) -> np.ndarray:
    """delta1 at every node for a batch of directions V (batch, N, m)."""
    W = _interval_integrals(bundle)
    inc = np.einsum("kam,zkm->zka", W, V[:, bundle.seg_index])
    acc = np.concatenate([np.zeros((V.shape[0], 1, W.shape[1])), np.cumsum(inc, axis=1)], axis=1)
    return np.einsum("kac,zkc->zka", bundle.S, acc)


def d_endpoint(bundle: TrajectoryBundle, v: Control) -> FirstVariation:
    _check(bundle, v)
    d1 = _delta1_batch(bundle, v.values[None])[0]
    return FirstVariation(d1, d1[-1].copy())


def d_endpoint_operator(bundle: TrajectoryBundle) -> EndpointOperator:
    W = _interval_integrals(bundle)
    N, m = bundle.control.n_segments, bundle.control.m
    n = W.shape[1]
    per_seg = W.reshape(N, bundle.substeps, n, m).sum(axis=1)         # (N, n, m)
    mat = np.einsum("ab,sbm->asm", bundle.S[-1], per_seg).reshape(n, N * m)
    u, s, vt = np.linalg.svd(mat * np.sqrt(N), full_matrices=False)
    rank = int(np.sum(s > RANK_RTOL * max(s[0] if len(s) else 0.0, 1.0)))
    if u.shape[1] < n:
        u = np.linalg.svd(mat, full_matrices=True)[0]
    return EndpointOperator(mat, s, u, vt, n - rank, bundle)


def _simpson_weights(sub: int, h: float) -> np.ndarray:
    if sub % 2 == 0:
        w = np.ones(sub + 1)
        w[1:-1:2], w[2:-1:2] = 4.0, 2.0
        return w * h / 3.0
    w = np.ones(sub + 1)
    w[1:-1] = 2.0
    return w * h / 2.0


def d2_endpoint_batch(bundle: TrajectoryBundle, V: np.ndarray) -> np.ndarray:
    """D^2E(v) for a batch of directions given as (batch, N, m) value arrays.

    D^2E(v) = 2 int S(1) S(t)^-1 [sum v_i J_i delta1 + 1/2 sum u_i H_i(delta1, delta1)] dt,
    integrated segment by segment with composite Simpson on the RK4 nodes.
    """
    V = np.asarray(V, float)
    N, sub = bundle.control.n_segments, bundle.substeps
    d1 = _delta1_batch(bundle, V)                                       # (b, K+1, n)
    nodes = np.arange(N)[:, None] * sub + np.arange(sub + 1)[None, :]  # (N, q)
    u = bundle.control.values
    Hu = bundle.__dict__.get("_hu")
    if Hu is None:
        Hu = np.einsum("si,sqiabc->sqabc", u, bundle.hess[nodes])
        bundle.__dict__["_hu"] = Hu
    Jn = bundle.jac[nodes]                                              # (N, q, m, n, n)
    dn = d1[:, nodes]                                                   # (b, N, q, n)
    av = np.einsum("zsi,sqiac,zsqc->zsqa", V, Jn, dn, optimize=True)
    dv = 0.5 * np.einsum("sqabc,zsqb,zsqc->zsqa", Hu, dn, dn, optimize=True)
    f = np.einsum("sqab,zsqb->zsqa", bundle.S_inv[nodes], av + dv, optimize=True)
    w = _simpson_weights(sub, bundle.grid[1] - bundle.grid[0])
    integral = np.einsum("zsqa,q->za", f, w)
    return 2.0 * integral @ bundle.S[-1].T


def kernel_gram_bilinear(bundle: TrajectoryBundle, lam, V: np.ndarray) -> np.ndarray:
    """Matrix of the symmetric bilinear form lam.D^2E(v_a, v_b) over directions V (D, N, m).

    Same quadrature as ``d2_endpoint_batch``; used where polarization over all
    pairs would be too costly.
    """
    V = np.asarray(V, float)
    N, sub = bundle.control.n_segments, bundle.substeps
    lam = np.asarray(lam, float).reshape(-1)
    d1 = _delta1_batch(bundle, V)
    nodes = np.arange(N)[:, None] * sub + np.arange(sub + 1)[None, :]
    p = np.einsum("a,ab,sqbc->sqc", lam, bundle.S[-1], bundle.S_inv[nodes])
    pj = np.einsum("sqa,sqiab->sqib", p, bundle.jac[nodes])
    hp = np.einsum("si,sqa,sqiabc->sqbc", bundle.control.values, p, bundle.hess[nodes], optimize=True)
    w = _simpson_weights(sub, bundle.grid[1] - bundle.grid[0])
    dn = d1[:, nodes]                                                   # (D, N, q, n)
    T = np.einsum("sqib,zsqb->zsqi", pj, dn, optimize=True)
    t1 = np.einsum("asi,bsqi,q->ab", V, T, w, optimize=True)
    t3 = np.einsum("asqb,sqbc,zsqc,q->az", dn, hp, dn, w, optimize=True)
    return t1 + t1.T + t3


def d2_endpoint(bundle: TrajectoryBundle, v: Control) -> np.ndarray:
    _check(bundle, v)
    return d2_endpoint_batch(bundle, v.values[None])[0]


def d_energy(control: Control, v: Control) -> float:
    """D_uC(v) = int <u, v> dt."""
    if v.n_segments != control.n_segments or v.m != control.m:
        raise SegmentationMismatch("direction segmentation differs from the control")
    return float(np.sum(control.values * v.values) / control.n_segments)


def d2_energy(v: Control) -> float:
    """D^2_uC(v) = ||v||^2 (independent of u)."""
    return v.l2_norm2()


def energy_gradient(control: Control) -> np.ndarray:
    """D_uC as a row vector on the flattened coefficients."""
    return control.flat() / control.n_segments
