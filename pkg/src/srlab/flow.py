"""Piecewise-constant controls and RK4 integration of the path and its linearization."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from . import _kernels as K
from .errors import BlowUp, NonFinite
from .srgeom import PolyFrame

DEFAULT_SEGMENTS = 64
DEFAULT_SUBSTEPS = 4
DEFAULT_BOUND = 1e6


class Control:
    """Piecewise-constant control on [0, 1]: ``values[k]`` holds on slice k."""

    __slots__ = ("values",)

    def __init__(self, values):
        v = np.array(values, dtype=float, copy=True)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("values must be an (n_segments, m) array with n_segments >= 1")
        v.setflags(write=False)
        self.values = v

    @property
    def n_segments(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1).copy()

    def l2_norm2(self) -> float:
        return float(np.sum(self.values ** 2) / self.n_segments)

    def __add__(self, other: "Control") -> "Control":
        return Control(self.values + other.values)

    def __sub__(self, other: "Control") -> "Control":
        return Control(self.values - other.values)

    def __mul__(self, s: float) -> "Control":
        return Control(self.values * s)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Control(n_segments={self.n_segments}, m={self.m})"

    @classmethod
    def constant(cls, value, n_segments: int = DEFAULT_SEGMENTS) -> "Control":
        value = np.asarray(value, float).reshape(1, -1)
        return cls(np.repeat(value, n_segments, axis=0))

    @classmethod
    def zeros(cls, m: int, n_segments: int = DEFAULT_SEGMENTS) -> "Control":
        return cls(np.zeros((n_segments, m)))

    @classmethod
    def from_flat(cls, coeffs, m: int) -> "Control":
        return cls(np.asarray(coeffs, float).reshape(-1, m))

    @classmethod
    def from_function(cls, fun: Callable, n_segments: int = DEFAULT_SEGMENTS,
                      order: int = 8) -> "Control":
        """Segment averages of ``fun(t) -> R^m`` (the L2 projection), by Gauss-Legendre."""
        xg, wg = np.polynomial.legendre.leggauss(order)
        edges = np.linspace(0.0, 1.0, n_segments + 1)
        mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
        t = mid[:, None] + half[:, None] * xg[None, :]
        vals = np.asarray(fun(t.reshape(-1)), float)
        vals = vals.reshape(vals.shape[0], n_segments, order) if vals.ndim == 2 else vals.reshape(1, n_segments, order)
        return cls(0.5 * np.einsum("mkq,q->km", vals, wg))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"u{i + 1}" for i in range(self.m)])
            for row in self.values:
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "Control":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not all(h.strip().startswith("u") for h in header):
            raise ValueError("control CSV header must be u1,...,um")
        return cls(np.array(body, dtype=float).reshape(len(body), len(header)))


def energy(control: Control) -> float:
    """C(u) = 1/2 * (1/N) * sum |u_k|^2."""
    return 0.5 * control.l2_norm2()


def resample(control: Control, new_segments: int) -> Control:
    """L2-orthogonal projection onto the piecewise-constant space with ``new_segments`` slices."""
    if new_segments < 1:
        raise ValueError("new_segments must be >= 1")
    old = control.n_segments
    if new_segments == old:
        return Control(control.values)
    # overlap matrix between old and new uniform partitions
    lcm = np.lcm(old, new_segments)
    fine = np.repeat(control.values, lcm // old, axis=0)
    return Control(fine.reshape(new_segments, lcm // new_segments, -1).mean(axis=1))


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    """Path, variational matrices and B(t) on the refined grid."""

    grid: np.ndarray
    gamma: np.ndarray
    S: np.ndarray
    S_inv: np.ndarray
    B: np.ndarray
    control: Control
    frame: PolyFrame
    substeps: int

    @property
    def x0(self) -> np.ndarray:
        return self.gamma[0]

    @property
    def endpoint(self) -> np.ndarray:
        return self.gamma[-1]

    @cached_property
    def jac(self) -> np.ndarray:
        """Field Jacobians at every node, shape (K+1, m, n, n)."""
        return self.frame.jacobians(self.gamma)

    @cached_property
    def hess(self) -> np.ndarray:
        return self.frame.hessians(self.gamma)

    @cached_property
    def seg_index(self) -> np.ndarray:
        """Control segment of each step interval."""
        return np.arange(len(self.grid) - 1) // self.substeps


def _status(code):
    if code == K.BLOWUP:
        raise BlowUp("state left the chart bound during integration")
    if code == K.NONFINITE:
        raise NonFinite("non-finite state during integration")


def _prep(frame: PolyFrame, control: Control, x0):
    x0 = np.asarray(x0, float).reshape(-1)
    if x0.shape[0] != frame.dim_n:
        raise ValueError("x0 has wrong dimension")
    if control.m != frame.rank_m:
        raise ValueError("control dimension does not match the frame rank")
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(control.values))):
        raise NonFinite("non-finite control or start point")
    return x0, np.ascontiguousarray(control.values)


def integrate(frame: PolyFrame, control: Control, x0, substeps: int = DEFAULT_SUBSTEPS,
              bound: float = DEFAULT_BOUND) -> TrajectoryBundle:
    """Fixed-step RK4 for (gamma, S, S^-1); S^-1 has its own ODE dS^-1 = -S^-1 A."""
    x0, U = _prep(frame, control, x0)
    code, G, S, Si = K.rk4_bundle(x0, U, int(substeps), *frame.kernel_tables,
                                  frame.rank_m, float(bound))
    _status(code)
    Kn = G.shape[0] - 1
    grid = np.linspace(0.0, 1.0, Kn + 1)
    B = np.transpose(frame.values(G), (0, 2, 1))
    for a in (G, S, Si, B, grid):
        a.setflags(write=False)
    return TrajectoryBundle(grid, G, S, Si, B, control, frame, int(substeps))


def endpoint_only(frame: PolyFrame, control: Control, x0, substeps: int = DEFAULT_SUBSTEPS,
                  bound: float = DEFAULT_BOUND) -> np.ndarray:
    """gamma(1) without the variational matrices (same RK4 grid as ``integrate``)."""
    x0, U = _prep(frame, control, x0)
    code, x = K.rk4_endpoint(x0, U, int(substeps), *frame.kernel_tables,
                             frame.rank_m, float(bound))
    _status(code)
    return x
