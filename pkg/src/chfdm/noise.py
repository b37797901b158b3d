"""Brownian-sheet increments on the space-time mesh.

A sheet stores the white-noise mass of every cell
``[t_i, t_{i+1}] x [k h, (k+1) h]`` as an ``(m, n)`` array.  Each Monte Carlo
path owns an independent Philox stream keyed by ``(seed, path)``, so paths can
be generated in any order or on any worker.

Cells are rounded to a dyadic lattice whose spacing is 2^-40 of the cell
standard deviation.  Sums of lattice values are exact in float64, so coarsening
in space and time is associative: any coarse sheet is bitwise the same however
it was reached from the finest one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid

_LATTICE_BITS = 40


def path_rng(seed: int, path: int = 0) -> np.random.Generator:
    """Counter-based generator for one path, independent of every other path index."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path),))
    return np.random.Generator(np.random.Philox(ss))


def cell_lattice(std: float) -> float:
    """Lattice spacing used for cells of the given standard deviation."""
    return 2.0 ** (math.floor(math.log2(std)) - _LATTICE_BITS)


def _validate(n, m, T):
    if int(n) != n or n < 2:
        raise ValueError(f"n must be an integer >= 2, got {n!r}")
    if int(m) != m or m < 1:
        raise ValueError(f"m must be an integer >= 1, got {m!r}")
    if not T > 0:
        raise ValueError(f"T must be > 0, got {T!r}")


@dataclass(frozen=True)
class NoiseSheet:
    n: int
    m: int
    T: float
    seed: int | None
    cells: np.ndarray
    path: int = 0

    @property
    def tau(self) -> float:
        return self.T / self.m

    @property
    def h(self) -> float:
        return math.pi / self.n

    @property
    def grid(self) -> Grid:
        return Grid(self.n)


def sample_cells(rng: np.random.Generator, n: int, m: int, T: float) -> np.ndarray:
    std = math.sqrt((T / m) * (math.pi / n))
    q = cell_lattice(std)
    z = rng.standard_normal((m, n))
    return np.rint(z * (std / q)) * q


def sample_sheet(seed: int, n: int, m: int, T: float, path: int = 0) -> NoiseSheet:
    """Draw an ``(m, n)`` sheet of i.i.d. N(0, tau h) cells for one path."""
    _validate(n, m, T)
    cells = sample_cells(path_rng(seed, path), int(n), int(m), float(T))
    cells.setflags(write=False)
    return NoiseSheet(int(n), int(m), float(T), seed, cells, int(path))


def sample_sheet_batch(seed: int, paths, n: int, m: int, T: float) -> np.ndarray:
    """Cells for several paths stacked as ``(len(paths), m, n)``."""
    _validate(n, m, T)
    return np.stack([sample_cells(path_rng(seed, p), int(n), int(m), float(T)) for p in paths])


def coarsen_space_cells(cells: np.ndarray) -> np.ndarray:
    if cells.shape[-1] % 2:
        raise ValueError(f"cannot coarsen {cells.shape[-1]} spatial cells: count must be even")
    return cells[..., 0::2] + cells[..., 1::2]


def coarsen_time_cells(cells: np.ndarray) -> np.ndarray:
    if cells.shape[-2] % 2:
        raise ValueError(f"cannot coarsen {cells.shape[-2]} time steps: count must be even")
    return cells[..., 0::2, :] + cells[..., 1::2, :]


def coarsen_cells(cells: np.ndarray, n: int, m: int) -> np.ndarray:
    """Coarsen ``(..., m_fine, n_fine)`` cells down to ``(..., m, n)`` by repeated halving."""
    mf, nf = cells.shape[-2:]
    if nf % n or mf % m:
        raise ValueError(f"target ({m}, {n}) does not divide sheet ({mf}, {nf})")
    for ratio, name in ((nf // n, "spatial"), (mf // m, "temporal")):
        if ratio & (ratio - 1):
            raise ValueError(f"{name} coarsening ratio {ratio} is not a power of two")
    while cells.shape[-1] > n:
        cells = coarsen_space_cells(cells)
    while cells.shape[-2] > m:
        cells = coarsen_time_cells(cells)
    return cells


def _derived(sheet: NoiseSheet, cells: np.ndarray) -> NoiseSheet:
    cells.setflags(write=False)
    m, n = cells.shape
    return NoiseSheet(n, m, sheet.T, sheet.seed, cells, sheet.path)


def coarsen_space(sheet: NoiseSheet) -> NoiseSheet:
    if sheet.n % 2:
        raise ValueError(f"spatial coarsening needs even n, got {sheet.n}")
    if sheet.n < 4:
        raise ValueError("spatial coarsening below n=2 is not a grid")
    return _derived(sheet, coarsen_space_cells(sheet.cells))


def coarsen_time(sheet: NoiseSheet) -> NoiseSheet:
    if sheet.m % 2:
        raise ValueError(f"temporal coarsening needs even m, got {sheet.m}")
    return _derived(sheet, coarsen_time_cells(sheet.cells))


def beta_increments(cells: np.ndarray) -> np.ndarray:
    """Brownian increments ``sqrt(n/pi) * cell(i, k)``, k = 1..n-1, for every step.

    Works on ``(m, n)`` or batched ``(B, m, n)`` cells; output drops the k=0 cell.
    """
    n = cells.shape[-1]
    return math.sqrt(n / math.pi) * cells[..., 1:]


def beta_increment(sheet: NoiseSheet, i: int) -> np.ndarray:
    if int(i) != i or not 0 <= i < sheet.m:
        raise IndexError(f"time index {i} outside 0..{sheet.m - 1}")
    return math.sqrt(sheet.n / math.pi) * sheet.cells[i, 1:]


def save_sheet_csv(sheet: NoiseSheet, path) -> None:
    """Dump cells as CSV, one row per time step; a comment header holds (n, m, T, seed, path)."""
    header = f"n={sheet.n} m={sheet.m} T={sheet.T!r} seed={sheet.seed} path={sheet.path}"
    np.savetxt(path, sheet.cells, delimiter=",", header=header, fmt="%.17g")


def load_sheet_csv(path) -> NoiseSheet:
    first = Path(path).read_text().splitlines()[0].lstrip("# ").split()
    meta = dict(item.split("=", 1) for item in first)
    cells = np.loadtxt(path, delimiter=",", ndmin=2)
    cells.setflags(write=False)
    seed = None if meta["seed"] == "None" else int(meta["seed"])
    return NoiseSheet(int(meta["n"]), int(meta["m"]), float(meta["T"]), seed, cells, int(meta["path"]))
