"""Densities of the numerical solution at one space-time point and L^1 distances between them.

The L^1 distance between two densities equals the total variation distance
between the laws (normalised to lie in [0, 2]).  Estimates are Gaussian
kernel density estimates on a uniform mesh; distances integrate the
difference of the two piecewise-linear estimates exactly, each extended by
zero outside its own mesh.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import noise
from ._parallel import map_chunks, path_chunks
from .convergence import _probe_index
from .dynamics import DriftSpec, NewtonConvergenceError, SchemeConfig, SolverStats, simulate_batch

MESH_NODES = 2048
MIN_SAMPLES = 50


class DegenerateNoiseWarning(UserWarning):
    """sigma is not bounded away from zero, so the law need not have a density."""


@dataclass(frozen=True)
class DensityEstimate:
    mesh: np.ndarray
    values: np.ndarray
    bandwidth: float
    sample_count: int

    @property
    def lo(self) -> float:
        return float(self.mesh[0])

    @property
    def hi(self) -> float:
        return float(self.mesh[-1])

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.mesh))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "density"])
            for x, v in zip(self.mesh, self.values):
                w.writerow([repr(float(x)), repr(float(v))])


def silverman_bandwidth(samples) -> float:
    """``1.06 sigma_hat M^(-1/5)``, floored so identical samples still give a finite peak."""
    x = np.asarray(samples, dtype=float)
    b = 1.06 * float(np.std(x, ddof=1)) * x.size ** -0.2
    floor = 1e-6 * max(1.0, float(np.max(np.abs(x))))
    return max(b, floor)


def kde(samples, bandwidth="auto") -> DensityEstimate:
    """Gaussian kernel density estimate on 2048 nodes spanning [min - 4b, max + 4b]."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if isinstance(bandwidth, str):
        if bandwidth != "auto":
            raise ValueError(f"bandwidth must be a positive number or 'auto', got {bandwidth!r}")
        b = silverman_bandwidth(x)
    else:
        b = float(bandwidth)
        if not b > 0:
            raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    mesh = np.linspace(x.min() - 4 * b, x.max() + 4 * b, MESH_NODES)
    values = np.zeros(MESH_NODES)
    for chunk in np.array_split(x, max(1, x.size // 2048)):
        values += np.exp(-0.5 * ((mesh[:, None] - chunk[None, :]) / b) ** 2).sum(axis=1)
    values /= x.size * b * math.sqrt(2 * math.pi)
    return DensityEstimate(mesh, values, b, int(x.size))


def _limits(d: DensityEstimate, a: np.ndarray, b: np.ndarray):
    """Values just right of a and just left of b on sub-intervals [a, b] of the merged mesh."""
    inside = (a >= d.lo) & (b <= d.hi)
    left = np.where(inside, np.interp(a, d.mesh, d.values), 0.0)
    right = np.where(inside, np.interp(b, d.mesh, d.values), 0.0)
    return left, right


def l1_distance(d1: DensityEstimate, d2: DensityEstimate) -> float:
    """``int |p1 - p2|`` for the piecewise-linear estimates, zero outside their meshes."""
    nodes = np.union1d(d1.mesh, d2.mesh)
    a, b = nodes[:-1], nodes[1:]
    l1, r1 = _limits(d1, a, b)
    l2, r2 = _limits(d2, a, b)
    ga, gb = np.abs(l1 - l2), np.abs(r1 - r2)
    same_sign = (l1 - l2) * (r1 - r2) >= 0
    width = b - a
    total = ga + gb
    with np.errstate(invalid="ignore", divide="ignore"):
        crossing = np.where(total > 0, (ga**2 + gb**2) / (2 * total), 0.0)
    return float(np.sum(width * np.where(same_sign, 0.5 * total, crossing)))


# ---------------------------------------------------------------------------
# sampling u(T, x) and the resolution ladder


def _sample_chunk(cfg: SchemeConfig, seed: int, x: float, ns, paths: range):
    """Values at (T, x) for each spatial size in ``ns``; all driven by the sheet of the largest."""
    cells = noise.sample_sheet_batch(seed, paths, max(ns), cfg.m, cfg.T)
    out = np.empty((len(paths), len(ns)))
    failed = np.zeros(len(paths), dtype=bool)
    stats = SolverStats()
    for slot, n in enumerate(ns):
        c = cfg.with_(n=n)
        res = simulate_batch(c, noise.coarsen_cells(cells, n, c.m))
        out[:, slot] = res.final[:, _probe_index(x, c.grid)]
        failed |= res.failed
        stats.merge(res.stats)
    return out, failed, stats


def sample_values(cfg: SchemeConfig, x: float, M: int, seed: int, first_path: int = 0, workers: int = 1,
                  ns=None):
    """``U^m`` at the node x for paths ``first_path .. first_path + M - 1``.

    With ``ns`` a list of spatial sizes (powers of two apart), every path is
    run at each size on coarsenings of one sheet and the result has shape
    ``(M, len(ns))``; otherwise it is the ``(M,)`` vector at ``cfg.n``.
    Raises if any path fails.
    """
    sizes = [cfg.n] if ns is None else [int(v) for v in ns]
    for n in sizes:
        _probe_index(x, cfg.with_(n=n).grid)
    chunks = [range(first_path + r.start, first_path + r.stop) for r in path_chunks(M)]
    parts = map_chunks(partial(_sample_chunk, cfg, seed, x, sizes), chunks, workers)
    failed = np.concatenate([p[1] for p in parts])
    if failed.any():
        raise NewtonConvergenceError(
            f"{int(failed.sum())} paths failed at n={sizes}, m={cfg.m}",
            path=first_path + int(np.flatnonzero(failed)[0]),
        )
    stats = SolverStats()
    for p in parts:
        stats.merge(p[2])
    vals = np.concatenate([p[0] for p in parts])
    return (vals[:, 0] if ns is None else vals), stats


def warn_if_degenerate(cfg: SchemeConfig) -> bool:
    if cfg.diffusion.sigma0 == 0:
        warnings.warn(
            "diffusion coefficient has no positive lower bound; the solution law may have no density",
            DegenerateNoiseWarning,
            stacklevel=3,
        )
        return True
    return False


@dataclass
class DensityStudy:
    levels: list
    probe_x: float
    M: int
    distances: list  # L^1 distance of each level but the last to the last
    estimates: list
    solver: SolverStats

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "bandwidth", "l1_distance"])
            for n, est, dist in zip(self.levels, self.estimates, self.distances + [0.0]):
                w.writerow([n, repr(est.bandwidth), repr(float(dist))])


def density_study(cfg: SchemeConfig, levels, M: int, seed: int, probe_x: float = math.pi / 2,
                  workers: int = 1, coupled: bool = True, min_paths: int = 1000) -> DensityStudy:
    """KDE of ``u^{n,tau}(T, probe_x)`` for each n in ``levels``; distances to the last (finest) level.

    ``coupled=True`` drives every level with coarsenings of the same sheets, so
    the sampling noise shared by the estimates largely cancels in their
    distances.  With ``coupled=False`` level l uses paths ``l*M .. (l+1)*M - 1``
    and the levels are independent.
    """
    levels = [int(v) for v in levels]
    if len(levels) < 2:
        raise ValueError("need at least two levels")
    if M < min_paths:
        raise ValueError(f"M must be >= {min_paths} for a density study, got {M}")
    warn_if_degenerate(cfg)
    stats = SolverStats()
    if coupled:
        vals, stats = sample_values(cfg, probe_x, M, seed, workers=workers, ns=levels)
        columns = list(vals.T)
    else:
        columns = []
        for slot, n in enumerate(levels):
            v, st = sample_values(cfg.with_(n=n), probe_x, M, seed, first_path=slot * M, workers=workers)
            stats.merge(st)
            columns.append(v)
    estimates = [kde(v) for v in columns]
    dists = [l1_distance(e, estimates[-1]) for e in estimates[:-1]]
    return DensityStudy(levels, probe_x, M, dists, estimates, stats)


# ---------------------------------------------------------------------------
# localization


@dataclass
class LocalizationReport:
    R: float
    omega_R_fraction: float
    max_pathwise_gap: float
    paths: int
    failed_paths: int = 0
    solver: SolverStats = field(default_factory=SolverStats)


def _localization_chunk(cfg: SchemeConfig, R: float, seed: int, paths: range):
    cells = noise.sample_sheet_batch(seed, paths, cfg.n, cfg.m, cfg.T)
    B = len(paths)
    runs = []
    stats = SolverStats()
    for drift in (cfg.drift, DriftSpec.localized(R)):
        snaps = np.empty((cfg.m + 1, B, cfg.n - 1))

        def keep(i, U, alive, snaps=snaps):
            snaps[i] = U

        res = simulate_batch(cfg.with_(drift=drift), cells, observer=keep)
        stats.merge(res.stats)
        runs.append((snaps, res.failed))
    (u, fail_u), (v, fail_v) = runs
    sup = np.max(np.abs(u), axis=(0, 2))
    gap = np.max(np.abs(u - v), axis=(0, 2))
    return sup, gap, fail_u | fail_v, stats


def localization_fidelity(cfg: SchemeConfig, R: float, M: int, seed: int, workers: int = 1) -> LocalizationReport:
    """Compare the scheme with its cut-off version on identical noise.

    A path is in Omega_R when every value of the uncut run stays in [-R, R];
    on those paths both runs should agree up to solver tolerance.  Paths
    where either run fails count as outside Omega_R.
    """
    if not R >= 1:
        raise ValueError(f"R must be >= 1, got {R}")
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M!r}")
    parts = map_chunks(partial(_localization_chunk, cfg, float(R), seed), path_chunks(M), workers)
    sup = np.concatenate([p[0] for p in parts])
    gap = np.concatenate([p[1] for p in parts])
    failed = np.concatenate([p[2] for p in parts])
    inside = (sup <= R) & ~failed
    stats = SolverStats()
    for p in parts:
        stats.merge(p[3])
    return LocalizationReport(
        R=float(R),
        omega_R_fraction=float(inside.mean()),
        max_pathwise_gap=float(gap[inside].max()) if inside.any() else 0.0,
        paths=int(M),
        failed_paths=int(failed.sum()),
        solver=stats,
    )
