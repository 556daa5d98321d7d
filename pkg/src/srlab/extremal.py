"""Normal and abnormal extremals, Goh residuals and Goh-rank."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .endpoint import EndpointOperator
from .errors import ZeroCovector
from .flow import DEFAULT_BOUND, Control, TrajectoryBundle, _status
from .srgeom import PolyFrame

GOH_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Extremal:
    grid: np.ndarray
    gamma: np.ndarray
    p: np.ndarray
    kind: str
    terminal_covector: np.ndarray
    multiplier0: int

    def hamiltonian_values(self, frame: PolyFrame) -> np.ndarray:
        X = frame.values(self.gamma)
        return 0.5 * np.sum(np.einsum("kin,kn->ki", X, self.p) ** 2, axis=1)

    def csv_text(self, frame: PolyFrame | None = None) -> str:
        """JSON comment line (kind, multiplier0, H), header t,gamma_*,p_*, then rows."""
        n = self.gamma.shape[1]
        ham = float(self.hamiltonian_values(frame)[0]) if frame is not None else None
        head = {"kind": self.kind, "multiplier0": int(self.multiplier0), "hamiltonian": ham}
        cols = ["t"] + [f"gamma_{a + 1}" for a in range(n)] + [f"p_{a + 1}" for a in range(n)]
        buf = io.StringIO()
        buf.write("# " + json.dumps(head, sort_keys=True) + "\n")
        buf.write(",".join(cols) + "\n")
        np.savetxt(buf, np.column_stack([self.grid, self.gamma, self.p]), delimiter=",", fmt="%.17g")
        return buf.getvalue()

    def to_csv(self, path, frame: PolyFrame | None = None) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text(frame))

    @classmethod
    def from_csv(cls, path) -> "Extremal":
        with open(path) as fh:
            head = json.loads(fh.readline()[1:])
            fh.readline()
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        n = (data.shape[1] - 1) // 2
        p = data[:, 1 + n:]
        return cls(data[:, 0], data[:, 1:1 + n], p, head["kind"], p[-1].copy(),
                   int(head["multiplier0"]))


@dataclass(frozen=True)
class GohDiagnostics:
    residual: float
    normalized: float
    goh_holds: bool
    goh_rank: int


def hamiltonian(frame: PolyFrame, x, p) -> float:
    """H(x, p) = 1/2 sum_i (p . X^i(x))^2 for an orthonormal frame."""
    X = frame.values(np.asarray(x, float))[0]
    return float(0.5 * np.sum((X @ np.asarray(p, float)) ** 2))


def hamiltonian_flow(frame: PolyFrame, x0, p0, time: float = 1.0, steps: int = 256,
                     bound: float = DEFAULT_BOUND):
    """RK4 of x' = dH/dp, p' = -dH/dx on [0, time]; returns (t, xs, ps)."""
    x0 = np.asarray(x0, float).reshape(-1)
    p0 = np.asarray(p0, float).reshape(-1)
    code, xs, ps = K.rk4_hamiltonian(x0, p0, float(time), int(steps),
                                     *frame.kernel_tables, frame.rank_m, float(bound))
    _status(code)
    return np.linspace(0.0, time, steps + 1), xs, ps


def shoot_normal(frame: PolyFrame, x0, p0, substeps: int = 256) -> Extremal:
    """Normal extremal with initial covector p0; its endpoint is exp_{x0}(p0)."""
    t, xs, ps = hamiltonian_flow(frame, x0, p0, 1.0, substeps)
    return Extremal(t, xs, ps, "normal", ps[-1].copy(), 1)


def exp_map(frame: PolyFrame, x0, p0, substeps: int = 256) -> np.ndarray:
    return shoot_normal(frame, x0, p0, substeps).gamma[-1]


def normal_controls(frame: PolyFrame, extremal: Extremal) -> np.ndarray:
    """u(t) = B(t)^T p(t)^T at every node, shape (K+1, m)."""
    X = frame.values(extremal.gamma)
    return np.einsum("kin,kn->ki", X, extremal.p)


def nodes_to_control(values: np.ndarray, n_segments: int) -> Control:
    """Segment averages of nodal samples by composite Simpson (trapezoid if odd)."""
    K_ = values.shape[0] - 1
    if K_ % n_segments:
        raise ValueError("node count must refine the segment grid")
    sub = K_ // n_segments
    idx = np.arange(n_segments)[:, None] * sub + np.arange(sub + 1)[None, :]
    if sub % 2 == 0:
        w = np.ones(sub + 1)
        w[1:-1:2], w[2:-1:2] = 4.0, 2.0
        w /= 3.0 * sub
    else:
        w = np.ones(sub + 1)
        w[1:-1] = 2.0
        w /= 2.0 * sub
    return Control(np.einsum("sqm,q->sm", values[idx], w))


def covector_path(bundle: TrajectoryBundle, p1) -> np.ndarray:
    """p(t) = p1 S(1) S(t)^-1 on the bundle grid."""
    p1 = np.asarray(p1, float).reshape(-1)
    return np.einsum("a,ab,kbc->kc", p1, bundle.S[-1], bundle.S_inv)


def reconstruct(bundle: TrajectoryBundle, p1, multiplier0: int) -> Extremal:
    p1 = np.asarray(p1, float).reshape(-1)
    if multiplier0 not in (0, 1):
        raise ValueError("multiplier0 must be 0 or 1")
    if multiplier0 == 0 and not np.any(p1):
        raise ZeroCovector("an abnormal lift needs a nonzero terminal covector")
    p = covector_path(bundle, p1)
    kind = "normal" if multiplier0 == 1 else "abnormal"
    return Extremal(bundle.grid, bundle.gamma, p, kind, p1.copy(), int(multiplier0))


def abnormal_covectors(op: EndpointOperator, tol: float | None = None) -> list:
    """Unit covectors spanning (Im D_uE)^perp.

    With ``tol`` given, directions whose L2 singular value is at most
    ``tol * max(sigma_max, 1)`` are also treated as annihilating.
    """
    if tol is None:
        return list(op.null_covectors())
    s = op.singular_values
    n = op.matrix.shape[0]
    rank = int(np.sum(s > tol * max(s[0] if len(s) else 0.0, 1.0)))
    return list(op.left[:, rank:n].T.copy())


def bracket_path(frame: PolyFrame, gamma: np.ndarray) -> np.ndarray:
    """[X^i, X^j](gamma(t)) for i < j at every node, shape (K+1, pairs, n)."""
    X, J = frame.values(gamma), frame.jacobians(gamma)
    m = frame.rank_m
    out = [np.einsum("kab,kb->ka", J[:, j], X[:, i]) - np.einsum("kab,kb->ka", J[:, i], X[:, j])
           for i in range(m) for j in range(i + 1, m)]
    if not out:
        return np.zeros((gamma.shape[0], 0, frame.dim_n))
    return np.stack(out, axis=1)


def _residuals(p: np.ndarray, brackets: np.ndarray) -> np.ndarray:
    return np.einsum("ka,kpa->kp", p, brackets)


def goh_diagnostics(extremal: Extremal, frame: PolyFrame, corank: int,
                    op: EndpointOperator, tol: float = GOH_TOL) -> GohDiagnostics:
    """Goh residual of ``extremal`` and the Goh-rank of the abnormal lifts of ``op``.

    The Goh-rank is the dimension of the subspace of (Im D_uE)^perp whose
    lifts annihilate all first brackets along the path. It is estimated
    from residual vectors of the null-basis covectors and their pairwise
    sums (polarization of a PSD Gram matrix) at the bundle resolution.
    """
    brackets = bracket_path(frame, extremal.gamma)
    r = _residuals(extremal.p, brackets)
    residual = float(np.max(np.abs(r))) if r.size else 0.0
    pmax = float(np.max(np.linalg.norm(extremal.p, axis=1)))
    normalized = residual / pmax if pmax > 0 else 0.0
    holds = normalized <= tol
    rank = 0
    if corank > 0 and brackets.shape[1] > 0:
        basis = abnormal_covectors(op)[:corank]
        bb = op.bundle
        bbr = bracket_path(frame, bb.gamma) if bb.gamma is not extremal.gamma else brackets
        paths = [covector_path(bb, lam) for lam in basis]
        scale = max(float(np.max(np.linalg.norm(pp, axis=1))) for pp in paths)

        def sq(pp):
            # mean-square normalized residual over the grid
            return float(np.mean(_residuals(pp, bbr) ** 2)) / scale ** 2

        r_ = len(paths)
        G = np.zeros((r_, r_))
        for a in range(r_):
            G[a, a] = sq(paths[a])
        for a in range(r_):
            for b in range(a + 1, r_):
                G[a, b] = G[b, a] = 0.5 * (sq(paths[a] + paths[b]) - G[a, a] - G[b, b])
        ev = np.linalg.eigvalsh(G)
        rank = int(np.sum(ev <= tol ** 2))
    elif corank > 0:
        rank = corank
    return GohDiagnostics(residual, normalized, bool(holds), rank)
