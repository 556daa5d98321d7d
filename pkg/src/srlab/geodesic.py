"""Minimizing controls, Lagrange multipliers and the penalized value function W."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .endpoint import (EndpointOperator, d_endpoint_operator,
                       kernel_gram_bilinear)
from .errors import Ambiguous, BlowUp, NoConvergence, NonFinite
from .extremal import (GOH_TOL, GohDiagnostics, goh_diagnostics, reconstruct)
from . import _kernels as K
from .flow import (DEFAULT_BOUND, DEFAULT_SEGMENTS, DEFAULT_SUBSTEPS, Control, TrajectoryBundle,
                   _prep, _status, energy, integrate)
from .srgeom import PolyFrame

STATIONARITY_TOL = 1e-4


@dataclass(frozen=True)
class SolverOptions:
    segments: int = DEFAULT_SEGMENTS
    restarts: int = 8
    tol: float = 1e-9              # endpoint tolerance
    substeps: int = DEFAULT_SUBSTEPS
    seed: int = 0
    max_outer: int = 25
    inner_iter: int = 400
    stationarity_tol: float = STATIONARITY_TOL
    goh_tol: float = GOH_TOL
    energy_rtol: float = 1e-6      # restarts within this of the best count as ties
    warm_start: Control | None = None


@dataclass(frozen=True, eq=False)
class Run:
    """One converged restart."""
    control: Control
    energy: float
    endpoint_error: float
    multiplier: np.ndarray | None
    multiplier0: int


@dataclass(frozen=True, eq=False)
class GeodesicResult:
    control: Control
    endpoint_error: float
    energy: float
    distance: float
    multiplier: np.ndarray | None
    multiplier0: int
    corank: int
    goh: GohDiagnostics
    n_restarts_used: int
    abnormal: list = field(default_factory=list)
    runs: list = field(default_factory=list, repr=False)
    bundle: TrajectoryBundle | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "distance": float(self.distance),
            "energy": float(self.energy),
            "endpoint_error": float(self.endpoint_error),
            "multiplier": None if self.multiplier is None else [float(v) for v in self.multiplier],
            "multiplier0": int(self.multiplier0),
            "corank": int(self.corank),
            "goh_rank": int(self.goh.goh_rank),
            "goh_residual": float(self.goh.normalized),
            "restarts": int(self.n_restarts_used),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# endpoint and Jacobian in scaled coordinates z = values / sqrt(N), so C = |z|^2 / 2

class _Problem:
    def __init__(self, frame, x0, y, N, sub):
        self.frame, self.x0, self.y = frame, np.asarray(x0, float), np.asarray(y, float)
        self.N, self.sub, self.m = N, sub, frame.rank_m
        self.sq = np.sqrt(N)
        self._cache_key = None

    def control(self, z) -> Control:
        return Control(np.asarray(z).reshape(self.N, self.m) * self.sq)

    def eval(self, z):
        """(E(u) - y, D_uE in scaled coordinates) from one fused RK4 pass."""
        key = z.tobytes()
        if key != self._cache_key:
            x0, U = _prep(self.frame, self.control(z), self.x0)
            code, x, mat = K.rk4_jacobian(x0, U, self.sub, *self.frame.kernel_tables,
                                          self.m, DEFAULT_BOUND)
            _status(code)
            self._cache_key, self._val = key, (x - self.y, mat * self.sq)
        return self._val

    def bundle(self, z) -> TrajectoryBundle:
        return integrate(self.frame, self.control(z), self.x0, self.sub)

    def safe_eval(self, z):
        try:
            return self.eval(z)
        except (BlowUp, NonFinite):
            return None


def _polish(prob: _Problem, z, tol, iters=30):
    """Minimum-norm Gauss-Newton steps onto E(u) = y."""
    best = None
    for _ in range(iters):
        ev = prob.safe_eval(z)
        if ev is None:
            return best
        r, J = ev
        err = np.linalg.norm(r)
        if best is None or err < best[1]:
            best = (z.copy(), err)
        if err <= tol:
            break
        step = np.linalg.lstsq(J, -r, rcond=1e-12)[0]
        # damp until the residual decreases
        for _ in range(20):
            ev2 = prob.safe_eval(z + step)
            if ev2 is not None and np.linalg.norm(ev2[0]) < err:
                break
            step *= 0.5
        z = z + step
    return best


def _augmented_lagrangian(prob: _Problem, z0, opts: SolverOptions, extra=None):
    """Minimize |z|^2/2 (+ extra) subject to E = y; returns (z, feasibility) or None.

    Inner L-BFGS tolerances tighten with the constraint violation; the
    penalty grows x10 whenever the violation fails to drop by 4x.
    """
    n = prob.y.shape[0]
    mu = np.zeros(n)
    rho = 100.0
    gtol = 1e-4
    z = np.asarray(z0, float).copy()
    prev = np.inf

    def fun(zz):
        ev = prob.safe_eval(zz)
        if ev is None:
            return 1e12, -zz
        r, J = ev
        f = 0.5 * zz @ zz - mu @ r + 0.5 * rho * r @ r
        g = zz + J.T @ (rho * r - mu)
        if extra is not None:
            fe, ge = extra(zz)
            f, g = f + fe, g + ge
        return f, g

    for _ in range(opts.max_outer):
        res = minimize(fun, z, jac=True, method="L-BFGS-B",
                       options={"maxiter": opts.inner_iter, "gtol": gtol, "ftol": 1e-15,
                                "maxcor": 20})
        z = res.x
        ev = prob.safe_eval(z)
        if ev is None:
            return None
        err = np.linalg.norm(ev[0])
        mu = mu - rho * ev[0]
        if err < 1e-8 and gtol <= 1e-8:
            break
        if err > 0.25 * prev:
            rho = min(rho * 10.0, 1e8)
        prev = err
        gtol = max(1e-9, min(gtol, 0.1 * err))
    return _polish(prob, z, opts.tol)


def _straight_guess(prob: _Problem):
    """Minimum-norm solution of the linearization at u = 0."""
    ev = prob.safe_eval(np.zeros(prob.N * prob.m))
    if ev is None:
        return np.zeros(prob.N * prob.m)
    r, J = ev
    return np.linalg.lstsq(J, -r, rcond=1e-10)[0]


def _fourier_seed(rng, N, m, scale, modes=3):
    """Random low-frequency control with L2 norm in [0.5, 1.5] * scale (scaled coordinates)."""
    t = (np.arange(N) + 0.5) / N
    vals = np.zeros((N, m))
    for i in range(m):
        vals[:, i] = rng.normal()
        for k in range(1, modes + 1):
            a, b = rng.normal(size=2) / k
            vals[:, i] += a * np.cos(2 * np.pi * k * t) + b * np.sin(2 * np.pi * k * t)
    z = vals.reshape(-1) / np.sqrt(N)
    return z * scale * rng.uniform(0.5, 1.5) / max(np.linalg.norm(z), 1e-300)


def arc_length_reparametrize(control: Control) -> Control:
    """Resample u to constant speed on the uniform grid (length is preserved)."""
    v = control.values
    N = control.n_segments
    speed = np.linalg.norm(v, axis=1)
    L = speed.sum() / N
    if L == 0:
        return Control(v)
    pos = np.concatenate([[0.0], np.cumsum(speed / N)]) / L      # new-time breakpoints
    edges = np.linspace(0.0, 1.0, N + 1)
    lo = np.maximum(pos[:-1][None, :], edges[:-1][:, None])
    hi = np.minimum(pos[1:][None, :], edges[1:][:, None])
    overlap = np.clip(hi - lo, 0.0, None)                          # (new, old)
    direction = np.divide(v, speed[:, None], out=np.zeros_like(v), where=speed[:, None] > 0)
    return Control(N * overlap @ (L * direction))


def extract_multiplier(bundle: TrajectoryBundle, tol: float = STATIONARITY_TOL,
                       op: EndpointOperator | None = None) -> dict:
    """Least-squares Lagrange multiplier p with p D_uE = p0 D_uC.

    The residual is measured in the dual L2 norm relative to ||u||.
    """
    op = op or d_endpoint_operator(bundle)
    u = bundle.control
    N = u.n_segments
    g = u.flat() / N
    M = op.matrix
    p = np.linalg.lstsq(M.T, g, rcond=1e-12)[0]
    unorm = np.sqrt(u.l2_norm2())
    res_n = np.sqrt(N) * np.linalg.norm(M.T @ p - g) / max(unorm, 1e-300)
    abn = [a for a in op.null_covectors()]
    if res_n <= tol:
        return {"multiplier": p, "multiplier0": 1, "residual": float(res_n), "abnormal": abn}
    if op.corank > 0:
        lam = abn[0]
        res_a = np.sqrt(N) * np.linalg.norm(M.T @ lam)
        if res_a <= tol:
            return {"multiplier": lam, "multiplier0": 0, "residual": float(res_a), "abnormal": abn}
    raise Ambiguous(f"normal fit residual {res_n:.3e} exceeds {tol:.1e} and no abnormal fit")


def _kkt_residual(prob: _Problem, z):
    ev = prob.safe_eval(z)
    if ev is None:
        return None
    r, J = ev
    p = np.linalg.lstsq(J.T, z, rcond=1e-12)[0]
    return r, J, p, np.linalg.norm(z - J.T @ p) / max(np.linalg.norm(z), 1e-300)


def _kkt_refine(prob: _Problem, z, tol, iters=6, target=1e-7):
    """Newton steps on z = J^T p, E(z) = y with the exact Hessian of p.E.

    Runs only while the relative stationarity residual exceeds ``target``;
    steps are kept only while feasibility stays within ``tol`` and the
    residual decreases.
    """
    cur = _kkt_residual(prob, z)
    if cur is None:
        return z
    d = z.shape[0]
    eye = np.eye(d) * prob.sq
    basis = eye.reshape(d, prob.N, prob.m)
    for _ in range(iters):
        r, J, p, st = cur
        if st <= target:
            break
        Hp = kernel_gram_bilinear(prob.bundle(z), p, basis)
        n = r.shape[0]
        K = np.block([[np.eye(d) - Hp, -J.T], [J, np.zeros((n, n))]])
        rhs = -np.concatenate([z - J.T @ p, r])
        step = np.linalg.lstsq(K, rhs, rcond=1e-12)[0]
        z_new = z + step[:d]
        got = _polish(prob, z_new, tol, iters=5)
        if got is None or got[1] > tol:
            break
        nxt = _kkt_residual(prob, got[0])
        if nxt is None or nxt[3] >= st:
            break
        z, cur = got[0], nxt
    return z


def _finish(prob: _Problem, z, opts: SolverOptions):
    """Arc-length reparametrization, feasibility polish and a KKT refinement."""
    z2 = arc_length_reparametrize(prob.control(z)).flat() / prob.sq
    best = _polish(prob, z2, opts.tol)
    if best is None or best[1] > opts.tol:
        return None
    z3 = _kkt_refine(prob, best[0], opts.tol)
    return z3, float(np.linalg.norm(prob.eval(z3)[0]))


def _serialize(values: np.ndarray) -> bytes:
    return np.round(values, 12).tobytes()


def solve_geodesic(frame: PolyFrame, x0, y, opts: SolverOptions | None = None,
                   **kw) -> GeodesicResult:
    """Best-of-restarts minimizer of C(u) subject to E(u) = y.

    Restart 0 is the minimum-norm solution of the linearization at u = 0
    (or ``opts.warm_start`` if given); the others are random smooth Fourier
    controls. Ties in energy are broken by the smallest serialized control.
    """
    opts = replace(opts or SolverOptions(), **kw)
    N, sub = opts.segments, opts.substeps
    prob = _Problem(frame, x0, y, N, sub)
    rng = np.random.default_rng(opts.seed)
    scale = max(np.linalg.norm(prob.y - prob.x0), 1.0)
    seeds = []
    if opts.warm_start is not None:
        from .flow import resample
        zw = resample(opts.warm_start, N).flat() / prob.sq
        seeds.append(zw)
        # a perturbed copy escapes saddles such as abnormal warm starts
        kick = _fourier_seed(rng, N, frame.rank_m, 0.05 * max(np.linalg.norm(zw), 1e-3))
        seeds.append(zw + kick)
    seeds.append(_straight_guess(prob))
    while len(seeds) < max(opts.restarts, 1):
        seeds.append(_fourier_seed(rng, N, frame.rank_m, scale))
    seeds = seeds[:max(opts.restarts, 1)]
    runs = []
    for z0 in seeds:
        got = _augmented_lagrangian(prob, z0, opts)
        if got is None:
            continue
        fin = _finish(prob, got[0], opts)
        if fin is None:
            if got[1] <= opts.tol:
                fin = got
            else:
                continue
        z, err = fin
        ctrl = prob.control(z)
        runs.append((energy(ctrl), _serialize(ctrl.values), ctrl, err))
    if not runs:
        raise NoConvergence(f"no restart reached endpoint tolerance {opts.tol:g}")
    best_e = min(r[0] for r in runs)
    ties = [r for r in runs if r[0] <= best_e * (1 + opts.energy_rtol) + 1e-15]
    e_best, _, ctrl, err = min(ties, key=lambda r: (r[1]))
    bundle = integrate(frame, ctrl, prob.x0, sub)
    op = d_endpoint_operator(bundle)
    mult = extract_multiplier(bundle, opts.stationarity_tol, op)
    # Goh data refer to the abnormal lift whenever one exists
    if op.corank > 0:
        ext = reconstruct(bundle, mult["abnormal"][0], 0)
    else:
        ext = reconstruct(bundle, mult["multiplier"], mult["multiplier0"])
    goh = goh_diagnostics(ext, frame, op.corank, op, opts.goh_tol)
    summaries = []
    for e, _, c, er in sorted(runs, key=lambda r: (r[0], r[1])):
        try:
            b = integrate(frame, c, prob.x0, sub)
            mm = extract_multiplier(b, opts.stationarity_tol)
            summaries.append(Run(c, e, er, mm["multiplier"], mm["multiplier0"]))
        except Ambiguous:
            summaries.append(Run(c, e, er, None, -1))
    return GeodesicResult(ctrl, float(err), float(e_best), float(np.sqrt(2 * e_best)),
                          mult["multiplier"], mult["multiplier0"], op.corank, goh,
                          len(seeds), mult["abnormal"], summaries, bundle)


# --------------------------------------------------------------------------
# penalized value function

@dataclass(frozen=True)
class PenaltyBarrier:
    """h = 0 on [0, d^2/4], (a - d^2/4)^2 / (d^2 - a) on (d^2/4, d^2), +inf beyond."""

    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def __call__(self, alpha):
        return self.value_and_derivative(alpha)[0]

    def value_and_derivative(self, alpha):
        d2 = self.delta ** 2
        a = np.asarray(alpha, float)
        lo = a - d2 / 4.0
        hi = d2 - a
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(lo <= 0, 0.0, np.where(hi > 0, lo ** 2 / hi, np.inf))
            der = np.where(lo <= 0, 0.0, np.where(hi > 0, 2 * lo / hi + lo ** 2 / hi ** 2, np.inf))
        if val.ndim == 0:
            return float(val), float(der)
        return val, der


def penalty_W(frame: PolyFrame, x0, y, u_hat: Control, barrier: PenaltyBarrier,
              opts: SolverOptions | None = None, **kw) -> float:
    """inf C(u) + h(||u - u_hat||^2) subject to E(u) = y, restarts seeded near u_hat."""
    opts = replace(opts or SolverOptions(restarts=4), **kw)
    N = u_hat.n_segments
    prob = _Problem(frame, x0, y, N, opts.substeps)
    zh = u_hat.flat() / prob.sq
    d2 = barrier.delta ** 2
    big = 1e12

    def extra(z):
        diff = z - zh
        a = diff @ diff
        if a >= d2 * (1 - 1e-12):
            return big * (1 + a), big * 2 * diff
        h, dh = barrier.value_and_derivative(a)
        return h, 2 * dh * diff

    rng = np.random.default_rng(opts.seed)
    seeds = [zh]
    while len(seeds) < max(opts.restarts, 1):
        noise = rng.normal(size=zh.shape)
        seeds.append(zh + noise / np.linalg.norm(noise) * barrier.delta * 0.2 * rng.uniform())
    vals = []
    for z0 in seeds:
        got = _augmented_lagrangian(prob, z0, opts, extra)
        if got is None or got[1] > max(opts.tol, 1e-8):
            continue
        z = got[0]
        diff = z - zh
        a = diff @ diff
        if a >= d2:
            continue
        vals.append(0.5 * z @ z + barrier(a))
    if not vals:
        raise NoConvergence("penalized problem did not reach the endpoint constraint")
    return float(min(vals))


def second_order_certificate(bundle: TrajectoryBundle, multiplier) -> dict:
    """Smallest eigenvalue of ||v||^2 - p.D^2E(v) on the discretized Ker D_uE."""
    op = d_endpoint_operator(bundle)
    ker = op.kernel_coefficients()
    N = bundle.control.n_segments
    V = ker.reshape(len(ker), N, bundle.control.m) * np.sqrt(N)   # L2-orthonormal
    if len(V) == 0:
        return {"min_eig_on_kernel": float("inf"), "kernel_dim": 0}
    G = np.eye(len(V)) - kernel_gram_bilinear(bundle, multiplier, V)
    ev = np.linalg.eigvalsh(0.5 * (G + G.T))
    return {"min_eig_on_kernel": float(ev[0]), "kernel_dim": int(len(V))}
