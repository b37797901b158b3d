"""Coupled Monte Carlo error studies, log-log rate fits and moment tracking.

A study draws one noise sheet per path at the finest resolution, coarsens it
to every level of the ladder and compares each level's value at the probe
points with the reference run on the same sheet.  Because coarsened sheets
are bitwise identical however they are obtained, a level equal to the
reference reproduces it exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np

from . import noise
from ._parallel import map_chunks, path_chunks
from .dynamics import NewtonConvergenceError, SchemeConfig, SolverStats, simulate_batch
from .grid import Grid, h1_seminorm_differences

BOOTSTRAP_RESAMPLES = 1000
MAX_FAILED_FRACTION = 0.01


class StudyAborted(NewtonConvergenceError):
    """Too many paths hit a Newton failure for the study to be meaningful."""


def _is_pow2(k) -> bool:
    return int(k) == k and k >= 1 and (int(k) & (int(k) - 1)) == 0


def _bootstrap_rng(seed: int, stream: int = 0) -> np.random.Generator:
    # spawn keys of length 2 never collide with the per-path keys (p,)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0xB007, stream)))


def _bootstrap_counts(rng, M: int, resamples: int) -> np.ndarray:
    """Multiplicity of every path in each resample, shape (resamples, M)."""
    idx = rng.integers(0, M, size=(resamples, M))
    counts = np.zeros((resamples, M))
    np.add.at(counts, (np.arange(resamples)[:, None], idx), 1.0)
    return counts


def _probe_index(x: float, grid: Grid) -> int:
    r = x / grid.h
    k = round(r)
    if abs(r - k) > 1e-9 or not 1 <= k <= grid.n - 1:
        raise ValueError(f"probe point {x} is not an interior node of the n={grid.n} grid")
    return k - 1


# ---------------------------------------------------------------------------
# regression


def fit_rate(points) -> tuple[float, float, float]:
    """Least-squares line through ``(log scale, log error)``.

    Returns ``(slope, intercept, r_squared)`` with ``error ~ exp(intercept) * scale**slope``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (scale, error) pairs")
    if np.any(~np.isfinite(pts)) or np.any(pts <= 0):
        raise ValueError("scales and errors must be finite and positive")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("scales must not all coincide")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _batch_slopes(log_scales, errors):
    """Slopes of the log-log fit for every row of ``errors``; NaN where an error is 0."""
    with np.errstate(divide="ignore"):
        ly = np.log(errors)
    x = log_scales - log_scales.mean()
    slopes = ((ly - ly.mean(axis=1, keepdims=True)) @ x) / (x @ x)
    slopes[~np.all(np.isfinite(ly), axis=1)] = np.nan
    return slopes


# ---------------------------------------------------------------------------
# strong error studies


@dataclass(frozen=True)
class StudyPlan:
    base_cfg: SchemeConfig
    axis: str
    levels: tuple
    reference_level: int
    M: int
    zeta: float = 1.0
    seed: int = 0
    probe_points: tuple = (math.pi / 2,)
    check_resolution: bool = True
    bootstrap: int = BOOTSTRAP_RESAMPLES

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        object.__setattr__(self, "probe_points", tuple(float(x) for x in self.probe_points))
        if self.axis not in ("spatial", "temporal"):
            raise ValueError(f"axis must be 'spatial' or 'temporal', got {self.axis!r}")
        if len(self.levels) < 1:
            raise ValueError("levels must not be empty")
        if any(not _is_pow2(v) for v in self.levels + (self.reference_level,)):
            raise ValueError("levels and reference_level must be powers of two")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError(f"levels must be strictly increasing, got {self.levels}")
        # a level equal to the reference is allowed: its error is exactly zero
        if self.reference_level < self.levels[-1]:
            raise ValueError(
                f"reference_level={self.reference_level} is coarser than the finest level {self.levels[-1]}"
            )
        if self.axis == "spatial" and self.levels[0] < 2:
            raise ValueError("spatial levels need n >= 2")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M!r}")
        if not 1 <= self.zeta <= 2:
            raise ValueError(f"zeta must lie in [1, 2], got {self.zeta}")
        if self.bootstrap < 1:
            raise ValueError(f"bootstrap must be >= 1, got {self.bootstrap}")
        for x in self.probe_points:
            for cfg in self.level_configs():
                _probe_index(x, cfg.grid)
        if self.axis == "spatial" and self.check_resolution:
            lhs = self.base_cfg.tau ** 0.375
            rhs = 0.2 / self.levels[0]
            if lhs > rhs:
                raise ValueError(
                    f"time step too coarse for a spatial study: tau^(3/8)={lhs:.4g} > "
                    f"(1/5)/n_coarsest={rhs:.4g}; increase m or pass check_resolution=False"
                )

    @property
    def diagnostic(self) -> bool:
        """zeta = 2 is outside the proven range; such reports are diagnostic only."""
        return self.zeta >= 2

    def _cfg(self, level: int) -> SchemeConfig:
        key = "n" if self.axis == "spatial" else "m"
        return self.base_cfg.with_(**{key: level})

    def level_configs(self) -> list[SchemeConfig]:
        return [self._cfg(v) for v in self.levels]

    def reference_config(self) -> SchemeConfig:
        return self._cfg(self.reference_level)

    def scales(self) -> np.ndarray:
        cfgs = self.level_configs()
        return np.array([c.grid.h if self.axis == "spatial" else c.tau for c in cfgs])


@dataclass
class RateReport:
    axis: str
    levels: list
    scales: list
    errors: list
    stderr: list
    slope: float
    intercept: float
    r_squared: float
    slope_interval: tuple
    zeta: float
    diagnostic: bool
    reference_level: int
    probe_points: list
    paths_used: int
    failed_paths: int
    seed: int
    solver: SolverStats = field(default_factory=SolverStats)

    def rows(self):
        return list(zip(self.levels, self.scales, self.errors, self.stderr))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "scale", "error", "stderr"])
            for level, scale, err, se in self.rows():
                w.writerow([level, repr(float(scale)), repr(float(err)), repr(float(se))])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slope_interval"] = list(self.slope_interval)
        return d

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _study_chunk(plan: StudyPlan, paths: range):
    ref = plan.reference_config()
    cells = noise.sample_sheet_batch(plan.seed, paths, ref.n, ref.m, ref.T)
    cfgs = plan.level_configs() + [ref]
    values = np.empty((len(paths), len(cfgs), len(plan.probe_points)))
    failed = np.zeros(len(paths), dtype=bool)
    stats = SolverStats()
    # reference first: a path that fails there is useless for every level
    for slot in [len(cfgs) - 1] + list(range(len(cfgs) - 1)):
        cfg = cfgs[slot]
        res = simulate_batch(cfg, noise.coarsen_cells(cells, cfg.n, cfg.m))
        stats.merge(res.stats)
        failed |= res.failed
        idx = [_probe_index(x, cfg.grid) for x in plan.probe_points]
        values[:, slot, :] = res.final[:, idx]
    return values, failed, stats


def run_study(plan: StudyPlan, workers: int = 1) -> RateReport:
    """Strong error of every ladder level against the reference, with a log-log fit."""
    parts = map_chunks(partial(_study_chunk, plan), path_chunks(plan.M), workers)
    values = np.concatenate([p[0] for p in parts])
    failed = np.concatenate([p[1] for p in parts])
    stats = SolverStats()
    for p in parts:
        stats.merge(p[2])
    n_failed = int(failed.sum())
    if n_failed > MAX_FAILED_FRACTION * plan.M:
        first = int(np.flatnonzero(failed)[0])
        raise StudyAborted(
            f"{n_failed} of {plan.M} paths failed to converge (first: path {first}); "
            f"the limit is {MAX_FAILED_FRACTION:.0%}",
            path=first,
        )
    good = values[~failed]
    dev = np.abs(good[:, :-1, :] - good[:, -1:, :]) ** plan.zeta  # (M', L, P)
    Mg = dev.shape[0]
    errors = np.max(np.mean(dev, axis=0), axis=-1) ** (1.0 / plan.zeta)

    counts = _bootstrap_counts(_bootstrap_rng(plan.seed), Mg, plan.bootstrap)
    boot = (counts @ dev.reshape(Mg, -1) / Mg).reshape(plan.bootstrap, *dev.shape[1:])
    boot_err = np.max(boot, axis=-1) ** (1.0 / plan.zeta)
    stderr = boot_err.std(axis=0, ddof=1) if plan.bootstrap > 1 else np.zeros_like(errors)

    scales = plan.scales()
    if len(scales) >= 2 and np.all(errors > 0):
        slope, intercept, r2 = fit_rate(np.column_stack([scales, errors]))
        slopes = _batch_slopes(np.log(scales), boot_err)
        slopes = slopes[np.isfinite(slopes)]
        interval = tuple(float(q) for q in np.percentile(slopes, [2.5, 97.5])) if slopes.size else (math.nan,) * 2
    else:
        slope = intercept = r2 = math.nan
        interval = (math.nan, math.nan)
    return RateReport(
        axis=plan.axis,
        levels=list(plan.levels),
        scales=[float(s) for s in scales],
        errors=[float(e) for e in errors],
        stderr=[float(s) for s in stderr],
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        slope_interval=interval,
        zeta=plan.zeta,
        diagnostic=plan.diagnostic,
        reference_level=plan.reference_level,
        probe_points=list(plan.probe_points),
        paths_used=Mg,
        failed_paths=n_failed,
        seed=plan.seed,
        solver=stats,
    )


# ---------------------------------------------------------------------------
# discrete H^1 moments


@dataclass
class MomentRow:
    n: int
    m: int
    p: int
    max_moment: float
    max_time: float
    max_interval: tuple
    final_moment: float
    final_interval: tuple
    failed_paths: int
    solver: SolverStats = field(default_factory=SolverStats)


def _moment_chunk(cfg: SchemeConfig, seed: int, paths: range):
    cells = noise.sample_sheet_batch(seed, paths, cfg.n, cfg.m, cfg.T)
    norms = np.empty((len(paths), cfg.m + 1))
    grid = cfg.grid

    def observe(i, U, alive):
        norms[:, i] = h1_seminorm_differences(U, grid)

    res = simulate_batch(cfg, cells, observer=observe)
    return norms, res.failed, res.stats


def h1_norm_paths(cfg: SchemeConfig, M: int, seed: int, workers: int = 1):
    """Per-path discrete H^1 norms at every snapshot, shape (M, m+1), plus failure flags and stats."""
    parts = map_chunks(partial(_moment_chunk, cfg, seed), path_chunks(M), workers)
    stats = SolverStats()
    for p in parts:
        stats.merge(p[2])
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]), stats


def moment_sweep(cfgs, p: int, M: int, seed: int, workers: int = 1, bootstrap: int = BOOTSTRAP_RESAMPLES):
    """Monte Carlo ``E ||(-A_n)^(1/2) U^i||^p`` per configuration.

    Each row reports the maximum over snapshot times, where it occurs, the
    value at the final time, and 95% path-bootstrap intervals for both.
    Paths with a Newton failure are left out and counted.
    """
    cfgs = list(cfgs)
    if p not in (2, 4):
        raise ValueError(f"p must be 2 or 4, got {p!r}")
    if not cfgs:
        raise ValueError("need at least one configuration")
    if any(not math.isclose(c.T, cfgs[0].T) for c in cfgs):
        raise ValueError("all configurations must share T")
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M!r}")
    rows = []
    for slot, cfg in enumerate(cfgs):
        norms, failed, stats = h1_norm_paths(cfg, M, seed, workers)
        vals = norms[~failed] ** p
        Mg = vals.shape[0]
        if Mg == 0:
            raise NewtonConvergenceError(f"every path failed for n={cfg.n}, m={cfg.m}")
        mean = vals.mean(axis=0)
        i_max = int(np.argmax(mean))
        counts = _bootstrap_counts(_bootstrap_rng(seed, slot + 1), Mg, bootstrap)
        boot = counts @ vals / Mg
        rows.append(
            MomentRow(
                n=cfg.n,
                m=cfg.m,
                p=p,
                max_moment=float(mean[i_max]),
                max_time=i_max * cfg.tau,
                max_interval=tuple(float(q) for q in np.percentile(boot.max(axis=1), [2.5, 97.5])),
                final_moment=float(mean[-1]),
                final_interval=tuple(float(q) for q in np.percentile(boot[:, -1], [2.5, 97.5])),
                failed_paths=int(failed.sum()),
                solver=stats,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Hoelder probes


@dataclass
class HolderReport:
    """Empirical L^p increments at dyadic lags and their fitted exponents."""

    time_lags: list
    time_increments: list
    time_exponent: float
    space_lags: list
    space_increments: list
    space_exponent: float


def _holder_chunk(cfg: SchemeConfig, seed: int, k0: int, paths: range):
    cells = noise.sample_sheet_batch(seed, paths, cfg.n, cfg.m, cfg.T)
    series = np.empty((len(paths), cfg.m + 1))

    def observe(i, U, alive):
        series[:, i] = U[:, k0]

    res = simulate_batch(cfg, cells, observer=observe)
    return series, res.final, res.failed


def holder_probe(cfg: SchemeConfig, M: int, seed: int, p: float = 2.0, x: float = math.pi / 2,
                 workers: int = 1) -> HolderReport:
    """Fit ``||u(T, x) - u(T - d, x)||_p ~ d^a`` and ``||u(T, x + d) - u(T, x)||_p ~ d^b``.

    Time lags run over tau, 2 tau, ... up to T/4; space lags over h, 2h, ...
    while x + d stays at most halfway to the boundary.
    """
    grid = cfg.grid
    k0 = _probe_index(x, grid)
    parts = map_chunks(partial(_holder_chunk, cfg, seed, k0), path_chunks(M), workers)
    series = np.concatenate([q[0] for q in parts])
    final = np.concatenate([q[1] for q in parts])
    ok = ~np.concatenate([q[2] for q in parts])
    series, final = series[ok], final[ok]

    t_steps = [2**k for k in range(int(math.log2(max(cfg.m // 4, 1))) + 1)]
    t_inc = [float(np.mean(np.abs(series[:, -1] - series[:, -1 - L]) ** p) ** (1 / p)) for L in t_steps]
    room = (grid.n - 2 - k0) // 2
    s_steps = [2**k for k in range(int(math.log2(room)) + 1)] if room >= 1 else []
    s_inc = [float(np.mean(np.abs(final[:, k0 + L] - final[:, k0]) ** p) ** (1 / p)) for L in s_steps]

    def exponent(lags, inc):
        if len(lags) < 2 or min(inc) <= 0:
            return math.nan
        return fit_rate(np.column_stack([lags, inc]))[0]

    t_lags = [L * cfg.tau for L in t_steps]
    s_lags = [L * grid.h for L in s_steps]
    return HolderReport(t_lags, t_inc, exponent(t_lags, t_inc), s_lags, s_inc, exponent(s_lags, s_inc))
