"""Polynomial vector-field frames, exact jets, Lie brackets and span tests."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtri
from scipy.stats import qmc

from .errors import DegenerateFrame, IndexOutOfRange

# singular values below RANK_RTOL * max(sigma_max, 1) count as zero
RANK_RTOL = 1e-9


def numerical_rank(mat: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(s > rtol * max(s[0], 1.0)))


def _term_tables(fields, n):
    """Flatten polynomial fields to (field, component, coeff, exponents) arrays."""
    fi, ci, co, ex = [], [], [], []
    for i, fld in enumerate(fields):
        for a, comp in enumerate(fld):
            for mi, c in comp.items():
                if c == 0.0:
                    continue
                fi.append(i)
                ci.append(a)
                co.append(float(c))
                ex.append(mi)
    if not co:
        return (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0),
                np.zeros((0, n), np.int64))
    return (np.asarray(fi, np.int64), np.asarray(ci, np.int64),
            np.asarray(co, float), np.asarray(ex, np.int64).reshape(-1, n))


def _differentiate(coef, exps, var):
    """Term-wise derivative of monomials with respect to one variable."""
    e = exps[:, var]
    keep = e > 0
    new_exps = exps[keep].copy()
    new_exps[:, var] -= 1
    return coef[keep] * e[keep], new_exps, keep


@dataclass(frozen=True)
class Jet2:
    value: np.ndarray
    jacobian: np.ndarray
    hessian: np.ndarray


@dataclass(frozen=True)
class BracketReport:
    dim_delta: int
    dim_delta2: int
    dim_with_section: int
    section_coeffs: np.ndarray


@dataclass(frozen=True, eq=False)
class PolyFrame:
    """m polynomial vector fields on R^n.

    ``fields[i][a]`` is a dict mapping exponent tuples to coefficients for
    component ``a`` of field ``i``.
    """

    dim_n: int
    rank_m: int
    fields: tuple
    name: str | None = None
    _tables: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n, m = self.dim_n, self.rank_m
        if n < 1 or m < 1:
            raise ValueError("dim_n and rank_m must be positive")
        if len(self.fields) != m or any(len(f) != n for f in self.fields):
            raise ValueError("fields must be an m x n table of polynomials")
        norm = tuple(tuple({tuple(int(e) for e in k): float(v) for k, v in comp.items()}
                           for comp in fld) for fld in self.fields)
        for fld in norm:
            for comp in fld:
                for k in comp:
                    if len(k) != n or min(k, default=0) < 0:
                        raise ValueError(f"bad multi-index {k}")
        object.__setattr__(self, "fields", norm)
        object.__setattr__(self, "_tables", self._compile())

    def _compile(self):
        n, m = self.dim_n, self.rank_m
        fi, ci, co, ex = _term_tables(self.fields, n)
        slot = fi * n + ci
        # value terms: dense scatter map  (T, m*n)
        val_map = np.zeros((len(co), m * n))
        val_map[np.arange(len(co)), slot] = co
        # first derivatives
        j_exps, j_map = [], []
        for b in range(n):
            dc, de, keep = _differentiate(co, ex, b)
            mp = np.zeros((len(dc), m * n * n))
            mp[np.arange(len(dc)), slot[keep] * n + b] = dc
            j_exps.append(de)
            j_map.append(mp)
        # second derivatives
        h_exps, h_map = [], []
        for b in range(n):
            dc, de, keep = _differentiate(co, ex, b)
            sl = slot[keep]
            for c in range(n):
                dc2, de2, keep2 = _differentiate(dc, de, c)
                mp = np.zeros((len(dc2), m * n * n * n))
                mp[np.arange(len(dc2)), (sl[keep2] * n + b) * n + c] = dc2
                h_exps.append(de2)
                h_map.append(mp)
        return {
            "fidx": fi, "cidx": ci, "coef": co, "exps": ex,
            "val": (ex, val_map),
            "jac": (np.vstack(j_exps) if j_exps else np.zeros((0, n), np.int64),
                    np.vstack(j_map) if j_map else np.zeros((0, m * n * n))),
            "hess": (np.vstack(h_exps) if h_exps else np.zeros((0, n), np.int64),
                     np.vstack(h_map) if h_map else np.zeros((0, m * n ** 3))),
        }

    @property
    def kernel_tables(self):
        t = self._tables
        return t["fidx"], t["cidx"], t["coef"], t["exps"]

    def _batch(self, key, pts):
        exps, mp = self._tables[key]
        pts = np.atleast_2d(np.asarray(pts, float))
        if len(exps) == 0:
            return np.zeros((pts.shape[0], mp.shape[1]))
        mono = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)
        return mono @ mp

    def values(self, pts) -> np.ndarray:
        """Field values at points, shape (P, m, n)."""
        out = self._batch("val", pts)
        return out.reshape(-1, self.rank_m, self.dim_n)

    def jacobians(self, pts) -> np.ndarray:
        """J[p, i, a, b] = d X^i_a / d x_b, shape (P, m, n, n)."""
        n = self.dim_n
        return self._batch("jac", pts).reshape(-1, self.rank_m, n, n)

    def hessians(self, pts) -> np.ndarray:
        """H[p, i, a, b, c] = d^2 X^i_a / dx_b dx_c, shape (P, m, n, n, n)."""
        n = self.dim_n
        return self._batch("hess", pts).reshape(-1, self.rank_m, n, n, n)

    def scaled(self, factor: float) -> "PolyFrame":
        """Frame with every field multiplied by ``factor``."""
        flds = [[{k: v * factor for k, v in comp.items()} for comp in fld]
                for fld in self.fields]
        return PolyFrame(self.dim_n, self.rank_m, tuple(map(tuple, flds)), self.name)

    def to_json(self) -> str:
        return json.dumps(frame_to_dict(self), sort_keys=True)


# --------------------------------------------------------------------------
# serialization and presets

def _key(mi) -> str:
    return ",".join(str(int(e)) for e in mi)


def _parse_key(k, n):
    if isinstance(k, (list, tuple)):
        mi = tuple(int(e) for e in k)
    else:
        s = str(k).strip()
        mi = tuple(int(e) for e in s.split(",")) if "," in s else tuple(int(e) for e in s)
    if len(mi) != n:
        raise ValueError(f"multi-index {k!r} does not have {n} entries")
    return mi


def frame_to_dict(frame: PolyFrame) -> dict:
    return {
        "n": frame.dim_n,
        "m": frame.rank_m,
        "name": frame.name,
        "fields": [[{"coeffs": {_key(k): v for k, v in sorted(comp.items())}}
                    for comp in fld] for fld in frame.fields],
    }


def frame_from_dict(d: dict) -> PolyFrame:
    n, m = int(d["n"]), int(d["m"])
    fields = tuple(tuple({_parse_key(k, n): float(v) for k, v in comp["coeffs"].items()}
                         for comp in fld) for fld in d["fields"])
    return PolyFrame(n, m, fields, d.get("name"))


def load_frame(path) -> PolyFrame:
    with open(path) as fh:
        return frame_from_dict(json.load(fh))


def _e(n, *idx):
    mi = [0] * n
    for i in idx:
        mi[i] += 1
    return tuple(mi)


def heisenberg() -> PolyFrame:
    z = _e(3)
    x1 = ({z: 1.0}, {}, {_e(3, 1): -0.5})
    x2 = ({}, {z: 1.0}, {_e(3, 0): 0.5})
    return PolyFrame(3, 2, (x1, x2), "heisenberg")


def martinet() -> PolyFrame:
    z = _e(3)
    x1 = ({z: 1.0}, {}, {})
    x2 = ({}, {z: 1.0}, {_e(3, 0, 0): 0.5})
    return PolyFrame(3, 2, (x1, x2), "martinet")


def engel() -> PolyFrame:
    z = _e(4)
    x1 = ({z: 1.0}, {}, {}, {})
    x2 = ({}, {z: 1.0}, {_e(4, 0): 1.0}, {_e(4, 0, 0): 0.5})
    return PolyFrame(4, 2, (x1, x2), "engel")


def flat(n: int = 2) -> PolyFrame:
    flds = tuple(tuple({_e(n): 1.0} if a == i else {} for a in range(n)) for i in range(n))
    return PolyFrame(n, n, flds, "flat-rn")


PRESETS = ("heisenberg", "martinet", "engel", "flat-rn")


def preset(name: str, n: int = 2) -> PolyFrame:
    """Load a named frame. ``flat-rn`` takes the dimension ``n`` (also ``flat-r3`` etc.)."""
    key = name.lower()
    if key == "heisenberg":
        return heisenberg()
    if key == "martinet":
        return martinet()
    if key == "engel":
        return engel()
    if key in ("flat-rn", "flat"):
        return flat(n)
    if key.startswith("flat-r") and key[6:].isdigit():
        return flat(int(key[6:]))
    raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")


# --------------------------------------------------------------------------
# jets and brackets

def _check_index(frame: PolyFrame, i: int) -> int:
    if not (1 <= int(i) <= frame.rank_m):
        raise IndexOutOfRange(f"field index {i} outside 1..{frame.rank_m}")
    return int(i) - 1


def _point(frame, x):
    x = np.asarray(x, float).reshape(-1)
    if x.shape[0] != frame.dim_n or not np.all(np.isfinite(x)):
        raise ValueError("point must be a finite vector of length n")
    return x


def eval_jet(frame: PolyFrame, i: int, x) -> Jet2:
    """Exact value, Jacobian and Hessian of field ``i`` (1-based) at ``x``."""
    k = _check_index(frame, i)
    x = _point(frame, x)
    return Jet2(frame.values(x)[0, k], frame.jacobians(x)[0, k], frame.hessians(x)[0, k])


def bracket_from_jets(vi, ji, vj, jj):
    """[X^i, X^j] = J_j X^i - J_i X^j."""
    return jj @ vi - ji @ vj


def lie_bracket(frame: PolyFrame, i: int, j: int, x) -> np.ndarray:
    a, b = _check_index(frame, i), _check_index(frame, j)
    x = _point(frame, x)
    X, J = frame.values(x)[0], frame.jacobians(x)[0]
    return bracket_from_jets(X[a], J[a], X[b], J[b])


def _bracket_data(frame: PolyFrame, x):
    """Fields, first brackets and depth-3 brackets [X^k, [X^i, X^j]] at x."""
    X, J, H = frame.values(x)[0], frame.jacobians(x)[0], frame.hessians(x)[0]
    m = frame.rank_m
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    first, third = [], []
    for i, j in pairs:
        z = J[j] @ X[i] - J[i] @ X[j]
        # Jacobian of Z = J_j X_i - J_i X_j
        jz = (np.einsum("abc,c->ab", H[j], X[i]) + J[j] @ J[i]
              - np.einsum("abc,c->ab", H[i], X[j]) - J[i] @ J[j])
        first.append(z)
        third.append([jz @ X[k] - J[k] @ z for k in range(m)])
    n = frame.dim_n
    first = np.array(first).reshape(-1, n)
    third = np.array(third).reshape(len(pairs), m, n)
    return X, first, third


def bracket_span(frame: PolyFrame, x, section_coeffs) -> BracketReport:
    x = _point(frame, x)
    c = np.asarray(section_coeffs, float).reshape(-1)
    if c.shape[0] != frame.rank_m:
        raise ValueError("section_coeffs must have m entries")
    nrm = np.linalg.norm(c)
    if nrm == 0:
        raise ValueError("section_coeffs must be nonzero")
    c = c / nrm
    X, first, third = _bracket_data(frame, x)
    return _span_dims(frame, X, first, third, c)


def _span_dims(frame, X, first, third, c):
    d1 = numerical_rank(X.T)
    if d1 < frame.rank_m:
        raise DegenerateFrame("frame fields are linearly dependent at this point")
    g2 = np.vstack([X, first])
    d2 = numerical_rank(g2.T)
    sec = np.einsum("k,pkn->pn", c, third)
    d3 = numerical_rank(np.vstack([g2, sec]).T)
    return BracketReport(d1, d2, d3, c)


def _sphere_samples(m: int, count: int) -> np.ndarray:
    if m == 1:
        return np.array([[1.0], [-1.0]])
    if m == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    axes = np.vstack([np.eye(m), -np.eye(m)])
    rest = max(count - len(axes), 0)
    if rest == 0:
        return axes
    pts = qmc.Halton(d=m, scramble=False).random(rest + 1)[1:]
    g = ndtri(np.clip(pts, 1e-12, 1 - 1e-12))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return np.vstack([axes, g])


def pre_medium_fat_scan(frame: PolyFrame, x, n_sphere_samples: int = 64) -> dict:
    """Heuristic minimum of dim(D + [D,D] + [X,[D,D]]) over constant sections.

    Samples unit coefficient vectors deterministically, then refines the worst
    one by Nelder-Mead on the singular value whose vanishing would lower the
    dimension further. The result is a lower-bound estimate over constant
    sections only.
    """
    if n_sphere_samples < frame.rank_m:
        raise ValueError("n_sphere_samples must be at least m")
    x = _point(frame, x)
    X, first, third = _bracket_data(frame, x)
    best = None
    for c in _sphere_samples(frame.rank_m, n_sphere_samples):
        rep = _span_dims(frame, X, first, third, c)
        if best is None or rep.dim_with_section < best.dim_with_section:
            best = rep
    g2 = np.vstack([X, first])

    def surrogate(c):
        nc = np.linalg.norm(c)
        if nc == 0:
            return np.inf
        sec = np.einsum("k,pkn->pn", c / nc, third)
        s = np.linalg.svd(np.vstack([g2, sec]).T, compute_uv=False)
        idx = best.dim_with_section - 1
        return s[idx] / max(s[0], 1.0) if idx < len(s) else 0.0

    if frame.rank_m > 1 and best.dim_with_section > best.dim_delta2:
        res = minimize(surrogate, best.section_coeffs, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 400})
        if np.linalg.norm(res.x) > 0:
            rep = _span_dims(frame, X, first, third, res.x / np.linalg.norm(res.x))
            if rep.dim_with_section < best.dim_with_section:
                best = rep
    return {
        "min_dim": best.dim_with_section,
        "worst_section": best.section_coeffs,
        "passes": best.dim_with_section >= frame.dim_n - 1,
        "heuristic": True,
    }
