"""Sampled nonsmooth analysis: supports from below, Dini derivatives, scans, comparison checks."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import Ambiguous, BlowUp, NoConvergence, NonFinite, PreconditionViolated
from .geodesic import GeodesicResult, SolverOptions, solve_geodesic
from .srgeom import PolyFrame

DIVERGENCE = 1e6
BLOWUP_RATIO = 10.0


@dataclass(frozen=True)
class DiniQuad:
    d_plus_sup: float
    d_plus_inf: float
    d_minus_sup: float
    d_minus_inf: float

    def as_tuple(self) -> tuple:
        return (self.d_plus_sup, self.d_plus_inf, self.d_minus_sup, self.d_minus_inf)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_tuple())))


@dataclass(frozen=True, eq=False)
class SubdiffEstimate:
    point: np.ndarray
    candidates: list
    lipschitz_class: str
    blowup_scale: float
    growth_ratio: float = float("nan")
    geodesic: GeodesicResult | None = field(default=None, repr=False)


# --------------------------------------------------------------------------
# support from below

def _ball_grid(x: np.ndarray, radius: float, grid) -> np.ndarray:
    if grid is not None and not np.isscalar(grid):
        return np.atleast_2d(np.asarray(grid, float))
    n = x.shape[0]
    k = int(grid) if grid is not None else {1: 201, 2: 41, 3: 13}.get(n, 7)
    axes = [np.linspace(-radius, radius, k)] * n
    off = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    off = off[np.linalg.norm(off, axis=1) <= radius * (1 + 1e-12)]
    return x[None, :] + off


def support_below_check(f, phi, x, radius: float, grid=None, tol: float = 1e-9) -> bool:
    """True iff phi touches f at x and stays below it on the sampled ball.

    ``f`` and ``phi`` map an (P, n) array of points to (P,) values. ``grid`` is
    either a point count per axis or an explicit (P, n) array of points.
    """
    x = np.atleast_1d(np.asarray(x, float))
    pts = _ball_grid(x, radius, grid)
    fx = float(np.asarray(f(x[None, :])).reshape(-1)[0])
    px = float(np.asarray(phi(x[None, :])).reshape(-1)[0])
    if abs(fx - px) > tol:
        return False
    return bool(np.all(np.asarray(f(pts)).reshape(-1) >= np.asarray(phi(pts)).reshape(-1) - tol))


# --------------------------------------------------------------------------
# Dini derivatives

def default_h_grid(scale: float = 1.0, decades: int = 8, per_decade: int = 400) -> np.ndarray:
    return scale * np.geomspace(1e-2, 1e-2 * 10.0 ** (-decades), decades * per_decade + 1)


def _decade_stats(h: np.ndarray, q: np.ndarray, reducer):
    """Reducer over consecutive decades of a geometric grid, largest h first."""
    n_dec = max(int(round(np.log10(h[0] / h[-1]))), 1)
    return np.array([reducer(c) for c in np.array_split(q, n_dec)])


def _limit(h, q, which: str, threshold: float) -> float:
    """sup (or inf) of q over the tail, with divergence flags.

    Diverges when the smallest decade exceeds ``threshold`` in magnitude, or
    when the per-decade statistic grows geometrically over the last three
    decades to at least sqrt(threshold).
    """
    red = np.max if which == "sup" else np.min
    stats = _decade_stats(h, q, red)
    last = stats[-1]
    if abs(last) >= threshold:
        return float(np.sign(last) * np.inf)
    tail = stats[-3:]
    if len(tail) == 3 and np.all(np.sign(tail) == np.sign(last)) and abs(last) >= np.sqrt(threshold):
        growth = np.abs(tail[1:]) / np.abs(tail[:-1])
        if np.all(growth >= 10 ** 0.25):
            return float(np.sign(last) * np.inf)
    return float(red(q))


def dini(f, x: float, h_grid=None, tail: float = 0.5, threshold: float = DIVERGENCE) -> DiniQuad:
    """Four Dini derivatives of a 1-D sampler at x.

    Forward quotients (f(x+h) - f(x)) / h and backward quotients
    (f(x) - f(x-h)) / h are reduced over the last ``tail`` fraction of the
    decreasing ``h_grid``.
    """
    h = default_h_grid() if h_grid is None else np.asarray(h_grid, float)
    if np.any(h <= 0) or np.any(np.diff(h) >= 0):
        raise ValueError("h_grid must be positive and decreasing")
    h = h[int(np.floor(len(h) * (1 - tail))):]
    fx = float(np.asarray(f(np.array([x]))).reshape(-1)[0])
    fp = np.asarray(f(x + h), float).reshape(-1)
    fm = np.asarray(f(x - h), float).reshape(-1)
    qp = (fp - fx) / h
    qm = (fx - fm) / h
    return DiniQuad(_limit(h, qp, "sup", threshold), _limit(h, qp, "inf", threshold),
                    _limit(h, qm, "sup", threshold), _limit(h, qm, "inf", threshold))


def _interior_min(vals: np.ndarray) -> bool:
    inner = vals[1:-1]
    return bool(np.any((inner < vals[:-2]) & (inner < vals[2:])))


def dichotomy_scan(f, interval, n_points: int = 1000, window: float | None = None,
                   tol: float = 1e-3, scales: int = 3, samples: int = 33) -> list:
    """Label interior grid points as differentiable, local-min-accumulation or undecided.

    ``differentiable``: the four Dini values (h grid scaled to the window)
    are finite and agree within tol * max(1, |D|). Otherwise
    ``local-min-accumulation`` when every window of half-width window/2^j,
    j < scales, centred at the point holds an interior strict minimum of the
    sampled values. Returns rows (x, label, DiniQuad).
    """
    if n_points < 10:
        raise ValueError("n_points must be at least 10")
    a, b = map(float, interval)
    xs = np.linspace(a, b, n_points + 2)[1:-1]
    w = (b - a) / (n_points + 1) if window is None else float(window)
    hg = w * np.geomspace(1.0, 1e-8, 801)
    rows = []
    for x in xs:
        q = dini(f, x, hg)
        vals = np.array(q.as_tuple())
        if q.is_finite() and np.ptp(vals) <= tol * max(1.0, np.max(np.abs(vals))):
            label = "differentiable"
        else:
            hits = 0
            for j in range(scales):
                r = w / 2 ** j
                s = np.linspace(x - r, x + r, samples)
                if _interior_min(np.asarray(f(s), float).reshape(-1)):
                    hits += 1
            label = "local-min-accumulation" if hits == scales else "undecided"
        rows.append((float(x), label, q))
    return rows


def scan_to_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "label", "d_plus_sup", "d_plus_inf", "d_minus_sup", "d_minus_inf"])
        for x, label, q in rows:
            wr.writerow([repr(x), label] + [repr(float(v)) for v in q.as_tuple()])


# --------------------------------------------------------------------------
# comparison verifier

def comparison_check(h, a: float, b: float, eps: float, sigma: float, grid=None,
                     tol: float = 1e-9) -> dict:
    """Sampled check of: upper quadratic bounds at small subgradients force h >= D.

    D(s) = max(-eps (s - a), eps (s - b)). At an interior grid point the
    discrete subgradients are the slopes between the left and right secants
    (empty when the left secant exceeds the right one). The hypothesis asks,
    for each such slope p with |p| <= eps, that h(s') <= h(s) + p (s' - s)
    + sigma (s' - s)^2 at every grid point s'. ``h`` is a callable or an
    array of samples on ``grid``.
    """
    if not b > a:
        raise ValueError("need b > a")
    if eps < (b - a) * sigma / 4:
        raise PreconditionViolated(f"eps={eps} < (b - a) sigma / 4 = {(b - a) * sigma / 4}")
    s = np.linspace(a, b, 1001) if grid is None else (
        np.linspace(a, b, int(grid)) if np.isscalar(grid) else np.asarray(grid, float))
    hv = np.asarray(h(s) if callable(h) else h, float).reshape(-1)
    if hv.shape != s.shape:
        raise ValueError("samples must match the grid")
    if abs(hv[0]) > tol or abs(hv[-1]) > tol:
        raise PreconditionViolated("h must vanish at both ends")
    D = np.maximum(-eps * (s - a), eps * (s - b))
    conclusion_ok = bool(np.all(hv >= D - tol))
    sec = np.diff(hv) / np.diff(s)
    left, right = sec[:-1], sec[1:]
    witness = None
    worst = 0.0
    for k in np.nonzero(left <= right + tol)[0] + 1:
        lo, hi = max(left[k - 1], -eps), min(right[k - 1], eps)
        if lo > hi + tol:
            continue
        hi = max(hi, lo)
        d = s - s[k]
        p = np.where(d > 0, lo, hi)        # the slope minimizing the bound at each s'
        excess = hv - (hv[k] + p * d + sigma * d * d)
        j = int(np.argmax(excess))
        if excess[j] > tol and excess[j] > worst:
            worst = float(excess[j])
            witness = {"s": float(s[k]), "p": float(p[j]), "s_prime": float(s[j]),
                       "excess": worst}
    return {"hypothesis_ok": witness is None, "conclusion_ok": conclusion_ok, "witness": witness}


# --------------------------------------------------------------------------
# classification of a point of the squared distance

@dataclass(frozen=True)
class ClassifyOptions:
    solver: SolverOptions = SolverOptions()
    stencil_radius: float = 0.05
    stencil_restarts: int = 2
    stencil_max_outer: int = 12
    blowup_ratio: float = BLOWUP_RATIO
    near_optimal_rtol: float = 1e-4
    support_curvature: float = 10.0
    dedupe_rtol: float = 1e-3


def _stencil(frame, x0, y, r, res: GeodesicResult, opts: ClassifyOptions):
    """Geodesics at y +- r e_k; returns (points, energies, multiplier norms); failures give nan."""
    n = frame.dim_n
    pts, ens, norms = [], [], []
    sopts = replace(opts.solver, restarts=opts.stencil_restarts, warm_start=res.control,
                    max_outer=opts.stencil_max_outer)
    for k in range(n):
        for sgn in (1.0, -1.0):
            z = y.copy()
            z[k] += sgn * r
            pts.append(z)
            try:
                try:
                    g = solve_geodesic(frame, x0, z, replace(sopts, restarts=1))
                except (NoConvergence, Ambiguous):
                    if sopts.restarts <= 1:
                        raise
                    g = solve_geodesic(frame, x0, z, sopts)
                ens.append(g.energy)
                norms.append(float(np.linalg.norm(g.multiplier)) if g.multiplier0 == 1 else np.inf)
            except (NoConvergence, BlowUp, NonFinite, Ambiguous):
                ens.append(np.nan)
                norms.append(np.nan)
    return np.array(pts), np.array(ens), np.array(norms)


def classify_point(frame: PolyFrame, x0, y, opts: ClassifyOptions | None = None,
                   result: GeodesicResult | None = None) -> SubdiffEstimate:
    """Candidate subgradients of f = d^2/2 at y and a Lipschitz classification.

    Candidates are multipliers of near-optimal normal restarts at y, plus a
    central-difference gradient from the stencil ("grid-support"); each is
    validated as a C^2 support from below with curvature allowance
    ``support_curvature`` against the stencil samples. The multiplier norms at
    stencil radii r and r/4 are compared; a growth ratio of at least
    ``blowup_ratio`` flags suspected-nonlipschitz.
    """
    opts = opts or ClassifyOptions()
    x0 = np.asarray(x0, float)
    y = np.asarray(y, float)
    res = result if result is not None else solve_geodesic(frame, x0, y, opts.solver)
    scale = max(1.0, float(np.linalg.norm(y - x0)))
    r1 = opts.stencil_radius * scale
    P1, E1, N1 = _stencil(frame, x0, y, r1, res, opts)
    P2, E2, N2 = _stencil(frame, x0, y, r1 / 4, res, opts)

    # candidate covectors
    cands = []
    for run in res.runs:
        if run.multiplier0 != 1 or run.energy > res.energy * (1 + opts.near_optimal_rtol) + 1e-12:
            continue
        p = np.asarray(run.multiplier, float)
        if all(np.linalg.norm(p - c["covector"]) > opts.dedupe_rtol * max(1.0, np.linalg.norm(p))
               for c in cands):
            cands.append({"covector": p, "source": "normal-extremal"})
    n = frame.dim_n
    if np.all(np.isfinite(E2)):
        grad = (E2[0::2] - E2[1::2]) / (2 * r1 / 4)
        cands.append({"covector": grad, "source": "grid-support"})

    pts = np.vstack([y[None, :], P1, P2])
    vals = np.concatenate([[res.energy], E1, E2])
    ok = np.isfinite(vals)
    table = {tuple(np.round(p, 14)): v for p, v in zip(pts[ok], vals[ok])}

    def f(q):
        return np.array([table[tuple(np.round(p, 14))] for p in np.atleast_2d(q)])

    for c in cands:
        p = c["covector"]

        def phi(q, p=p):
            d = np.atleast_2d(q) - y
            return res.energy + d @ p - opts.support_curvature * np.sum(d * d, axis=1)

        c["supported"] = support_below_check(f, phi, y, r1 * (1 + 1e-9), grid=pts[ok], tol=1e-8)

    # blowup of multipliers
    base = float(np.linalg.norm(res.multiplier)) if res.multiplier0 == 1 else np.inf
    m1 = np.nanmax(np.append(N1, base)) if np.any(np.isfinite(N1)) else np.nan
    m2 = np.nanmax(np.append(N2, base)) if np.any(np.isfinite(N2)) else np.nan
    if np.isnan(m1) or np.isnan(m2) or np.any(np.isnan(N1)) or np.any(np.isnan(N2)):
        ratio = float("nan")
        cls = "undecided"
    else:
        ratio = float(m2 / m1) if np.isfinite(m1) and m1 > 0 else float("inf")
        cls = "suspected-nonlipschitz" if not ratio < opts.blowup_ratio else "lipschitz"
    blowup = float(np.nanmax([base, m1, m2]))
    return SubdiffEstimate(y, cands, cls, blowup, ratio, res)
