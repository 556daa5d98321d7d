"""Second-order forms: restricted Gram matrices, oscillatory probes, Goh forms, openness."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .endpoint import (EndpointOperator, d2_endpoint, d2_endpoint_batch, d_endpoint_operator,
                       kernel_gram_bilinear)
from .errors import BlowUp, NonFinite, SegmentationMismatch, WindowOutOfRange
from .extremal import covector_path
from .flow import DEFAULT_SUBSTEPS, Control, TrajectoryBundle, endpoint_only, integrate
from .srgeom import PolyFrame

DIM_CAP = 40


@dataclass(frozen=True, eq=False)
class RestrictedForm:
    kernel_basis: list
    gram: np.ndarray
    lam: np.ndarray

    @property
    def spectrum(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.gram)


@dataclass(frozen=True)
class OscProbe:
    """cos/sin pair on the window [t_bar, t_bar + delta] in fields i_bar, j_bar (1-based)."""

    t_bar: float
    delta: float
    i_bar: int
    j_bar: int
    coeffs: tuple = (1.0,)

    def norm2(self) -> float:
        return float(self.delta * np.sum(np.square(self.coeffs)))


def kernel_basis(op: EndpointOperator, dim_cap: int = DIM_CAP) -> list:
    """L2-orthonormal controls spanning the discretized Ker D_uE (at most ``dim_cap``)."""
    ker = op.kernel_coefficients()[:max(int(dim_cap), 0)]
    N, m = op.bundle.control.n_segments, op.bundle.control.m
    return [Control(row.reshape(N, m) * np.sqrt(N)) for row in ker]


def _stack(basis, bundle) -> np.ndarray:
    N, m = bundle.control.n_segments, bundle.control.m
    for v in basis:
        if v.n_segments != N or v.m != m:
            raise SegmentationMismatch("basis control segmentation differs from the bundle")
    return np.array([v.values for v in basis]).reshape(len(basis), N, m)


def restricted_form(bundle: TrajectoryBundle, lam, basis: list, chunk: int = 256) -> RestrictedForm:
    """gram[i, j] = lam.D^2E(v_i, v_j) by polarization 1/4 (Q(v+w) - Q(v-w))."""
    lam = np.asarray(lam, float).reshape(-1)
    V = _stack(basis, bundle)
    d = len(V)
    iu, ju = np.triu_indices(d)
    plus, minus = V[iu] + V[ju], V[iu] - V[ju]
    qp = np.concatenate([d2_endpoint_batch(bundle, plus[s:s + chunk]) @ lam
                         for s in range(0, len(iu), chunk)]) if len(iu) else np.zeros(0)
    qm = np.concatenate([d2_endpoint_batch(bundle, minus[s:s + chunk]) @ lam
                         for s in range(0, len(iu), chunk)]) if len(iu) else np.zeros(0)
    gram = np.zeros((d, d))
    gram[iu, ju] = 0.25 * (qp - qm)
    gram[ju, iu] = gram[iu, ju]
    return RestrictedForm(list(basis), gram, lam)


def negative_index(form, tol: float = 1e-8) -> int:
    """Number of eigenvalues below -tol * max(spectral radius, 1)."""
    g = form.gram if isinstance(form, RestrictedForm) else np.asarray(form, float)
    if g.size == 0:
        return 0
    ev = np.linalg.eigvalsh(0.5 * (g + g.T))
    rad = max(np.max(np.abs(ev)), 1.0)
    return int(np.sum(ev < -tol * rad))


def _check_window(probe: OscProbe, m: int | None = None):
    eps = 1e-12
    if probe.delta <= 0 or probe.t_bar < -eps or probe.t_bar + probe.delta > 1 + eps:
        raise WindowOutOfRange(f"window [{probe.t_bar}, {probe.t_bar + probe.delta}] not inside [0, 1]")
    if probe.i_bar == probe.j_bar:
        raise ValueError("i_bar and j_bar must differ")
    if m is not None and not (1 <= probe.i_bar <= m and 1 <= probe.j_bar <= m):
        raise ValueError("probe field indices out of range")


def osc_probe(probe: OscProbe, n_segments: int, m: int = 2) -> Control:
    """Segment averages (L2 projection) of the cos/sin pair, zero off the window."""
    _check_window(probe, m)
    edges = np.linspace(0.0, 1.0, n_segments + 1)
    lo = np.clip(edges[:-1], probe.t_bar, probe.t_bar + probe.delta) - probe.t_bar
    hi = np.clip(edges[1:], probe.t_bar, probe.t_bar + probe.delta) - probe.t_bar
    vc = np.zeros(n_segments)
    vs = np.zeros(n_segments)
    for k, a in enumerate(probe.coeffs, start=1):
        w = 2 * np.pi * k / probe.delta
        vc += a * (np.sin(w * hi) - np.sin(w * lo)) / w
        vs += a * (np.cos(w * lo) - np.cos(w * hi)) / w
    vals = np.zeros((n_segments, m))
    vals[:, probe.i_bar - 1] = vc * n_segments
    vals[:, probe.j_bar - 1] = vs * n_segments
    return Control(vals)


def _interp_rows(grid, arr, t):
    return np.array([np.interp(t, grid, arr[:, a]) for a in range(arr.shape[1])])


def goh_matrix(bundle: TrajectoryBundle, lam, t_bar: float) -> np.ndarray:
    """M_ij = 2 p(t_bar) . J_i(gamma(t_bar)) X^j(gamma(t_bar)) with p(t) = lam S(1) S(t)^-1."""
    p = _interp_rows(bundle.grid, covector_path(bundle, lam), t_bar)
    x = _interp_rows(bundle.grid, bundle.gamma, t_bar)
    X, J = bundle.frame.values(x)[0], bundle.frame.jacobians(x)[0]
    return 2.0 * np.einsum("a,iab,jb->ij", p, J, X)


def goh_form_closed(m_matrix: np.ndarray, probe: OscProbe) -> float:
    """Goh form on the continuous cos/sin probe.

    Q(v) = int sum_ij M_ij v_i(t) w_j(t) dt with w(t) = int_{t_bar}^t v, which on
    the probe equals sum_k delta^2 a_k^2 / (4 pi k) * (M_ji - M_ij).
    """
    i, j = probe.i_bar - 1, probe.j_bar - 1
    k = np.arange(1, len(probe.coeffs) + 1)
    s = np.sum(probe.delta ** 2 * np.square(probe.coeffs) / (4 * np.pi * k))
    return float(s * (m_matrix[j, i] - m_matrix[i, j]))


def goh_form_quadrature(m_matrix: np.ndarray, v: Control, t_bar: float) -> float:
    """Same form for an arbitrary piecewise-constant v supported after t_bar (exact on each slice)."""
    N = v.n_segments
    edges = np.linspace(0.0, 1.0, N + 1)
    h = np.clip(edges[1:], t_bar, None) - np.clip(edges[:-1], t_bar, None)
    inc = v.values * h[:, None]
    w_left = np.concatenate([np.zeros((1, v.m)), np.cumsum(inc, axis=0)[:-1]])
    w_mid = w_left + 0.5 * inc               # w is affine on each slice
    return float(np.sum(h * np.einsum("ij,ki,kj->k", m_matrix, v.values, w_mid)))


def goh_quadratic(bundle: TrajectoryBundle, lam, probe: OscProbe) -> dict:
    """q_exact = lam.D^2E on the discretized probe; q_model from the closed form."""
    _check_window(probe, bundle.control.m)
    lam = np.asarray(lam, float).reshape(-1)
    v = osc_probe(probe, bundle.control.n_segments, bundle.control.m)
    q_exact = float(lam @ d2_endpoint(bundle, v))
    M = goh_matrix(bundle, lam, probe.t_bar)
    return {"q_exact": q_exact, "q_model": goh_form_closed(M, probe), "m_matrix": M,
            "norm2": v.l2_norm2()}


def probe_span(probe: OscProbe, n_modes: int, n_segments: int, m: int = 2) -> list:
    """L2-normalized controls cos_k e_i, sin_k e_j (k = 1..n_modes) on the probe window."""
    out = []
    for k in range(1, n_modes + 1):
        coeffs = tuple(1.0 if q == k else 0.0 for q in range(1, k + 1))
        both = osc_probe(OscProbe(probe.t_bar, probe.delta, probe.i_bar, probe.j_bar, coeffs),
                         n_segments, m)
        for idx in (probe.i_bar - 1, probe.j_bar - 1):
            vals = np.zeros_like(both.values)
            vals[:, idx] = both.values[:, idx]
            c = Control(vals)
            out.append(c * (1.0 / np.sqrt(c.l2_norm2())))
    return out


def form_on_basis(m_matrix: np.ndarray, basis: list, t_bar: float) -> np.ndarray:
    """Gram of the Goh form over ``basis`` by polarization."""
    d = len(basis)
    G = np.zeros((d, d))
    for a in range(d):
        for b in range(a, d):
            G[a, b] = G[b, a] = 0.25 * (goh_form_quadrature(m_matrix, basis[a] + basis[b], t_bar)
                                        - goh_form_quadrature(m_matrix, basis[a] - basis[b], t_bar))
    return G


def index_report(op: EndpointOperator, form: RestrictedForm, goh: dict | None = None,
                 tol: float = 1e-8) -> dict:
    ev = form.spectrum
    rep = {"corank": int(op.corank), "kernel_dim": len(form.kernel_basis),
           "negative_index": negative_index(form, tol),
           "spectrum_head": [float(x) for x in ev[:10]]}
    if goh is not None:
        rep["goh"] = {"m_matrix": np.asarray(goh["m_matrix"]).tolist(),
                      "q_exact": float(goh["q_exact"]), "q_model": float(goh["q_model"])}
    return rep


# --------------------------------------------------------------------------
# openness experiment

@dataclass(frozen=True, eq=False)
class _Split:
    radius: float
    target: int
    w1: float
    w2: float
    residual: float
    success: bool


def _kernel_with_energy(op: EndpointOperator, u: Control) -> np.ndarray:
    """Coefficient basis of Ker D_uE intersected with Ker D_uC (rows, Euclidean-orthonormal)."""
    K = op.kernel_coefficients()
    g = u.flat()
    c = K @ g
    if np.linalg.norm(c) <= 1e-12 * max(np.linalg.norm(g), 1.0):
        return K
    # drop the direction of the energy gradient inside the kernel
    q = c / np.linalg.norm(c)
    comp = np.linalg.svd(np.eye(len(q)) - np.outer(q, q))[0][:, :len(q) - 1]
    return comp.T @ K


def openness_experiment(frame: PolyFrame, u: Control, n_targets: int = 8,
                        radii=(1e-1, 3e-2, 1e-2, 3e-3), x0=None, directions=None,
                        seed: int = 0, substeps: int = DEFAULT_SUBSTEPS,
                        tol: float = 1e-10) -> dict:
    """Reach targets x near E(u) with u + w1 + w2, w1 in Ker D_uE cap Ker D_uC.

    w2 lives in the row space of D_uE and absorbs first-order errors; when
    the operator has corank, w1 is seeded by the second-order term along a
    kernel eigenvector of lam.D^2E of the required sign and both parts are
    then solved jointly. Returns envelope constants and per-target norms.
    """
    x0 = np.zeros(frame.dim_n) if x0 is None else np.asarray(x0, float)
    N, m = u.n_segments, u.m
    sq = np.sqrt(N)
    bundle = integrate(frame, u, x0, substeps)
    op = d_endpoint_operator(bundle)
    Fu = bundle.gamma[-1]
    rows = op.right[:op.rank]                               # coefficient row space basis
    K = _kernel_with_energy(op, u)
    nulls = op.null_covectors()
    if directions is None:
        rng = np.random.default_rng(seed)
        d = rng.normal(size=(n_targets, frame.dim_n))
        directions = d / np.linalg.norm(d, axis=1, keepdims=True)
    directions = np.atleast_2d(np.asarray(directions, float))
    # second-order seeds: per null covector, kernel eigenvectors of lam.D^2E
    eig = []
    if len(nulls):
        Vk = K.reshape(len(K), N, m) * sq
        for lam in nulls:
            G = kernel_gram_bilinear(bundle, lam, Vk)
            ev, evec = np.linalg.eigh(0.5 * (G + G.T))
            eig.append((ev, evec))

    def E(coef):
        return endpoint_only(frame, Control(u.values + coef.reshape(N, m)), x0, substeps)

    splits = []
    for r in radii:
        for t_idx, dvec in enumerate(directions):
            x = Fu + r * dvec
            delta = x - Fu
            w1_dirs = np.zeros((0, N * m))
            alpha0 = np.zeros(0)
            ok = True
            for (ev, evec), lam in zip(eig, nulls):
                tau = lam @ delta
                if abs(tau) < 1e-15:
                    continue
                s = np.sign(tau)
                cand = np.where(s * ev > 1e-12)[0]
                if len(cand) == 0:
                    ok = False
                    break
                best = cand[np.argmax(s * ev[cand])]
                e_vals = (evec[:, best] @ K) * sq            # values of an L2-unit control
                alpha = np.sqrt(2 * abs(tau) / abs(ev[best]))
                w1_dirs = np.vstack([w1_dirs, e_vals])
                alpha0 = np.append(alpha0, alpha)
            if not ok:
                splits.append(_Split(r, t_idx, np.nan, np.nan, np.inf, False))
                continue
            n_rows = len(rows)

            def resid(params):
                a, b = params[:len(alpha0)], params[len(alpha0):]
                coef = a @ w1_dirs + (b @ rows) * sq
                try:
                    return E(coef) - x
                except (BlowUp, NonFinite):
                    return np.full(frame.dim_n, 1e6)

            p0 = np.concatenate([alpha0, np.zeros(n_rows)])
            # first-order part of the initial guess
            lin = np.linalg.lstsq((op.matrix @ (rows.T * sq)), delta - op.matrix @ (alpha0 @ w1_dirs),
                                  rcond=1e-12)[0] if n_rows else np.zeros(0)
            p0[len(alpha0):] = lin
            sol = least_squares(resid, p0, method="lm" if len(p0) >= frame.dim_n else "trf",
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
            res = float(np.linalg.norm(resid(sol.x)))
            a, b = sol.x[:len(alpha0)], sol.x[len(alpha0):]
            w1 = float(np.linalg.norm(a @ w1_dirs) / sq)
            w2 = float(np.linalg.norm(b))
            splits.append(_Split(r, t_idx, w1, w2, res, res <= max(tol, 1e-9 * r)))
    succ = [s for s in splits if s.success]
    K1 = max([s.w1 / np.sqrt(s.radius) for s in succ], default=np.nan)
    K2 = max([s.w2 / s.radius for s in succ], default=np.nan)
    per_r = {}
    for s in splits:
        per_r.setdefault(s.radius, []).append(s.success)
    full = [r for r, v in per_r.items() if all(v)]
    table = [{"radius": s.radius, "target": s.target, "w1": s.w1, "w2": s.w2,
              "residual": s.residual, "success": s.success} for s in splits]
    return {
        "empirical_K": float(np.nanmax([K1, K2])) if succ else float("nan"),
        "K_w1": float(K1), "K_w2": float(K2),
        "empirical_rho": float(max(full)) if full else 0.0,
        "success_rate": len(succ) / len(splits) if splits else 0.0,
        "corank": int(op.corank),
        "split_norms": table,
    }
