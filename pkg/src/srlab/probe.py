"""Grid experiments over end points: geodesics, multipliers, Goh data and classifications."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import IoError, SRLabError
from .extremal import GOH_TOL
from .geodesic import SolverOptions, solve_geodesic
from .nonsmooth import BLOWUP_RATIO, ClassifyOptions, classify_point
from .srgeom import PolyFrame, frame_from_dict, frame_to_dict, preset

FAILED = "solver-failure"
CSV_TAIL = ["distance", "corank", "goh_rank", "goh_residual", "multiplier_norm", "lipschitz_class"]


@dataclass(frozen=True)
class ProbeConfig:
    preset: str | None = "heisenberg"
    n: int = 2                                  # dimension for flat-rn
    frame: dict | None = None                   # explicit frame, overrides preset
    x0: tuple | None = None
    box: tuple = ((-0.75, 0.75), (-0.75, 0.75), (-0.2, 0.2))
    shape: tuple = (4, 4, 4)
    jitter: float = 0.0                         # fraction of the cell size
    segments: int = 64
    restarts: int = 4
    tol: float = 1e-9
    stencil_radius: float = 0.05
    blowup_threshold: float = BLOWUP_RATIO
    goh_tol: float = GOH_TOL
    seed: int = 0
    csv_path: str | None = None
    json_path: str | None = None

    def __post_init__(self):
        if len(self.box) != len(self.shape):
            raise ValueError("box and shape must have one entry per coordinate")
        if any(int(k) < 1 for k in self.shape):
            raise ValueError("grid shape entries must be positive")
        if any(not float(hi) > float(lo) for lo, hi in self.box):
            raise ValueError("every box interval must satisfy lo < hi")
        object.__setattr__(self, "box", tuple(tuple(map(float, b)) for b in self.box))
        object.__setattr__(self, "shape", tuple(int(k) for k in self.shape))
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(map(float, self.x0)))

    def build_frame(self) -> PolyFrame:
        if self.frame is not None:
            return frame_from_dict(self.frame)
        return preset(self.preset, n=self.n)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        for k in ("box", "shape", "x0"):
            if k in d and d[k] is not None:
                d[k] = tuple(tuple(v) if isinstance(v, list) else v for v in d[k])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ProbeConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_config(name: str, **kw) -> ProbeConfig:
    """Default sweeps: flat 5x5, Heisenberg 4x4x4 off the z-axis, Martinet across x = 0."""
    if name in ("flat-rn", "flat"):
        base = ProbeConfig(preset="flat-rn", n=2, box=((0.5, 1.5), (0.5, 1.5)), shape=(5, 5))
    elif name == "heisenberg":
        base = ProbeConfig(preset="heisenberg")
    elif name == "martinet":
        base = ProbeConfig(preset="martinet", box=((-0.4, 0.4), (0.6, 1.0), (-0.1, 0.1)),
                           shape=(3, 2, 1))
    else:
        raise ValueError(f"no default sweep for {name!r}")
    return replace(base, **kw)


@dataclass(frozen=True, eq=False)
class ProbeReport:
    rows: list
    aggregates: dict
    config: dict

    @property
    def dim(self) -> int:
        return len(self.config["shape"])


def sample_points(config: ProbeConfig) -> np.ndarray:
    axes = []
    for (lo, hi), k in zip(config.box, config.shape):
        axes.append(np.linspace(lo, hi, k) if k > 1 else np.array([0.5 * (lo + hi)]))
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    if config.jitter > 0:
        rng = np.random.default_rng(config.seed)
        cell = np.array([(hi - lo) / max(k - 1, 1) for (lo, hi), k in zip(config.box, config.shape)])
        pts = pts + config.jitter * cell * rng.uniform(-0.5, 0.5, size=pts.shape)
    return pts


def _row(y, distance=math.nan, corank=-1, goh_rank=-1, goh_residual=math.nan,
         multiplier_norm=math.nan, lipschitz_class=FAILED, error=None):
    return {"y": [float(v) for v in y], "distance": float(distance), "corank": int(corank),
            "goh_rank": int(goh_rank), "goh_residual": float(goh_residual),
            "multiplier_norm": float(multiplier_norm), "lipschitz_class": lipschitz_class,
            "error": error}


def _run_sample(args):
    config, y = args
    frame = config.build_frame()
    x0 = np.zeros(frame.dim_n) if config.x0 is None else np.asarray(config.x0)
    sopts = SolverOptions(segments=config.segments, restarts=config.restarts, tol=config.tol,
                          seed=config.seed, goh_tol=config.goh_tol)
    copts = ClassifyOptions(solver=sopts, stencil_radius=config.stencil_radius,
                            blowup_ratio=config.blowup_threshold)
    try:
        res = solve_geodesic(frame, x0, y, sopts)
        est = classify_point(frame, x0, y, copts, result=res)
    except SRLabError as exc:
        return _row(y, error=f"{type(exc).__name__}: {exc}")
    mn = float(np.linalg.norm(res.multiplier)) if res.multiplier is not None else math.nan
    return _row(y, res.distance, res.corank, res.goh.goh_rank, res.goh.normalized, mn,
                est.lipschitz_class)


def aggregate(rows: list) -> dict:
    ok = [r for r in rows if r["lipschitz_class"] != FAILED]
    n = len(ok)
    return {
        "n_samples": len(rows),
        "n_failures": len(rows) - n,
        "fraction_suspected_nonlipschitz":
            sum(r["lipschitz_class"] == "suspected-nonlipschitz" for r in ok) / n if n else 0.0,
        "fraction_corank_positive": sum(r["corank"] > 0 for r in ok) / n if n else 0.0,
        "consistency_violations":
            sum(r["lipschitz_class"] == "suspected-nonlipschitz" and r["goh_rank"] == 0 for r in ok),
        "inclusion_violations": sum(r["goh_rank"] >= 1 and r["corank"] < 1 for r in ok),
    }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SRLAB_THREADS", "1")))
    except ValueError:
        return 1


def run_probe(config: ProbeConfig) -> ProbeReport:
    """Run the per-sample pipeline over the grid; failures are recorded, never raised.

    Rows keep the sample order whatever the degree of parallelism
    (SRLAB_THREADS); every sample uses the same seeded solver settings.
    """
    pts = sample_points(config)
    jobs = [(config, y) for y in pts]
    workers = min(_threads(), len(jobs)) if jobs else 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_run_sample, jobs))
    else:
        rows = [_run_sample(j) for j in jobs]
    report = ProbeReport(rows, aggregate(rows), config.to_dict())
    if config.csv_path:
        export(report, "csv", config.csv_path)
    if config.json_path:
        export(report, "json", config.json_path)
    return report


def _num(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def export(report: ProbeReport, fmt: str, path) -> None:
    try:
        if fmt == "csv":
            n = report.dim
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow([f"y_{a + 1}" for a in range(n)] + CSV_TAIL)
                for r in report.rows:
                    wr.writerow([repr(v) for v in r["y"]]
                                + [repr(r["distance"]), r["corank"], r["goh_rank"],
                                   repr(r["goh_residual"]), repr(r["multiplier_norm"]),
                                   r["lipschitz_class"]])
        elif fmt == "json":
            rows = [{k: _num(v) for k, v in r.items()} for r in report.rows]
            with open(path, "w") as fh:
                json.dump({"config": report.config, "rows": rows, "aggregates": report.aggregates},
                          fh, indent=2, sort_keys=True)
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_report(path) -> ProbeReport:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    rows = [{k: (math.nan if v is None and k in ("distance", "goh_residual", "multiplier_norm")
                 else v) for k, v in r.items()} for r in d["rows"]]
    return ProbeReport(rows, d["aggregates"], d["config"])
