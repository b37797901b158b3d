"""Coefficients and the backward-Euler finite difference scheme.

One step of the fully discrete scheme solves, for the unknown X = U^{i+1},

    X + tau A_n^2 X - tau A_n F_n(X) = U^i + sqrt(n/pi) Sigma_n(U^i) dbeta_i

with Newton's method: the Jacobian ``I + tau A_n^2 - tau A_n diag(f'(X))`` is
pentadiagonal and is factorised with partial pivoting.  Simulation runs a
whole batch of independent paths at once; every per-path operation is
elementwise or row-local, so a path's result does not depend on which other
paths share its batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import noise as _noise
from ._banded import solve_banded_batch
from .grid import Grid, apply_An, norm_lp

Array = np.ndarray


class NewtonConvergenceError(RuntimeError):
    """Newton did not reach the residual tolerance; usually means tau is too large."""

    def __init__(self, message, residual=float("nan"), step=None, path=None):
        super().__init__(message)
        self.residual = residual
        self.step = step
        self.path = path


# ---------------------------------------------------------------------------
# drift


def _smoothstep(t):
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def _smoothstep_prime(t):
    return 30.0 * t * t * (1.0 - t) ** 2


def cutoff(R: float, x):
    """Even cut-off equal to 1 on |x| < R and 0 on |x| >= R+1.

    The transition is the quintic smoothstep of ``R + 1 - |x|``; it is C^2 with
    ``|K_R'| <= 15/8``.
    """
    if R < 1:
        raise ValueError(f"cut-off radius R must be >= 1, got {R}")
    t = np.clip(R + 1.0 - np.abs(np.asarray(x, dtype=float)), 0.0, 1.0)
    out = _smoothstep(t)
    return out if np.ndim(out) else float(out)


def cutoff_prime(R: float, x):
    x = np.asarray(x, dtype=float)
    t = R + 1.0 - np.abs(x)
    inside = (t > 0.0) & (t < 1.0)
    out = np.where(inside, -np.sign(x) * _smoothstep_prime(np.clip(t, 0.0, 1.0)), 0.0)
    return out if np.ndim(out) else float(out)


def _cubic(x):
    return x**3 - x


def _cubic_prime(x):
    return 3.0 * x**2 - 1.0


@dataclass(frozen=True)
class DriftSpec:
    """Nonlinearity f inside ``Delta f(u)``: cubic, cut-off cubic, or user supplied."""

    mode: str = "cubic"
    R: float | None = None
    f: Callable | None = field(default=None, compare=False)
    fprime: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.mode not in ("cubic", "cubic_localized", "custom"):
            raise ValueError(f"unknown drift mode {self.mode!r}")
        if self.mode == "cubic_localized" and (self.R is None or self.R < 1):
            raise ValueError(f"cubic_localized drift needs R >= 1, got {self.R!r}")
        if self.mode == "custom" and (self.f is None or self.fprime is None):
            raise ValueError("custom drift needs both f and fprime")

    @classmethod
    def cubic(cls):
        return cls("cubic")

    @classmethod
    def localized(cls, R: float):
        return cls("cubic_localized", R=float(R))

    @classmethod
    def custom(cls, f, fprime):
        return cls("custom", f=f, fprime=fprime)

    @classmethod
    def zero(cls):
        return cls("custom", f=np.zeros_like, fprime=np.zeros_like)


def eval_drift(spec: DriftSpec, v) -> Array:
    v = np.asarray(v, dtype=float)
    if spec.mode == "cubic":
        return _cubic(v)
    if spec.mode == "cubic_localized":
        return _cubic(v) * cutoff(spec.R, v)
    return np.asarray(spec.f(v), dtype=float)


def eval_drift_prime(spec: DriftSpec, v) -> Array:
    v = np.asarray(v, dtype=float)
    if spec.mode == "cubic":
        return _cubic_prime(v)
    if spec.mode == "cubic_localized":
        return _cubic_prime(v) * cutoff(spec.R, v) + _cubic(v) * cutoff_prime(spec.R, v)
    return np.asarray(spec.fprime(v), dtype=float)


# ---------------------------------------------------------------------------
# diffusion


def _default_sigma(x):
    return 0.5 + 0.25 * np.sin(x)


def _default_sigma_prime(x):
    return 0.25 * np.cos(x)


@dataclass(frozen=True)
class _Constant:
    # picklable stand-in for ``lambda x: c`` so configs can cross process boundaries
    value: float

    def __call__(self, x):
        return np.full(np.shape(x), self.value)


@dataclass(frozen=True)
class DiffusionSpec:
    """Noise coefficient sigma with its declared bounds (sup |sigma|, Lipschitz constant, sigma_0)."""

    sigma: Callable = field(default=_default_sigma, compare=False)
    sigma_prime: Callable = field(default=_default_sigma_prime, compare=False)
    sup_abs: float = 0.75
    lipschitz: float = 0.25
    sigma0: float = 0.25
    name: str = "0.5+0.25*sin(u)"

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ValueError(f"sigma0 must be >= 0, got {self.sigma0}")
        if self.sigma0 > 0:
            probe = np.linspace(-10.0, 10.0, 10_000)
            low = float(np.min(np.abs(self.sigma(probe))))
            if not low > self.sigma0:
                raise ValueError(
                    f"declared lower bound sigma0={self.sigma0} violated: min |sigma| on probe grid is {low}"
                )

    @classmethod
    def default(cls):
        return cls()

    @classmethod
    def constant(cls, c: float):
        c = float(c)
        return cls(
            sigma=_Constant(c),
            sigma_prime=_Constant(0.0),
            sup_abs=abs(c),
            lipschitz=0.0,
            sigma0=0.0 if c == 0 else abs(c) * 0.5,
            name=f"{c!r}",
        )


def eval_diffusion(spec: DiffusionSpec, v) -> Array:
    """Diagonal of ``Sigma_n(v)``."""
    v = np.asarray(v, dtype=float)
    return np.asarray(spec.sigma(v), dtype=float) * np.ones_like(v)


# ---------------------------------------------------------------------------
# configuration and trajectories


def sine_initial(x):
    return np.sin(x)


def zero_initial(x):
    return np.zeros(np.shape(x))


@dataclass(frozen=True)
class SchemeConfig:
    n: int = 16
    m: int = 1000
    T: float = 0.1
    drift: DriftSpec = field(default_factory=DriftSpec.cubic)
    diffusion: DiffusionSpec = field(default_factory=DiffusionSpec.default)
    u0: Callable = field(default=sine_initial, compare=False)
    newton_tol: float = 1e-10
    max_iters: int = 50

    def __post_init__(self):
        Grid(self.n)
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be an integer >= 1, got {self.m!r}")
        if not self.T > 0:
            raise ValueError(f"T must be > 0, got {self.T!r}")
        if not self.newton_tol > 0:
            raise ValueError(f"newton_tol must be > 0, got {self.newton_tol!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters!r}")
        ends = np.asarray(self.u0(np.array([0.0, math.pi])), dtype=float)
        if np.max(np.abs(ends)) > 1e-12:
            raise ValueError(f"initial value must vanish at 0 and pi, got {ends.tolist()}")

    @property
    def tau(self) -> float:
        return self.T / self.m

    @property
    def grid(self) -> Grid:
        return Grid(self.n)

    def initial_state(self) -> Array:
        return np.asarray(self.u0(self.grid.points), dtype=float) * np.ones(self.n - 1)

    def with_(self, **changes) -> "SchemeConfig":
        return replace(self, **changes)


@dataclass
class SolverStats:
    """Aggregate Newton diagnostics over every solve of a simulation."""

    solves: int = 0
    max_iterations: int = 0
    max_residual: float = 0.0
    failures: int = 0

    def merge(self, other: "SolverStats") -> None:
        self.solves += other.solves
        self.max_iterations = max(self.max_iterations, other.max_iterations)
        self.max_residual = max(self.max_residual, other.max_residual)
        self.failures += other.failures


@dataclass
class Trajectory:
    config: SchemeConfig
    snapshots: Array  # (m+1, n-1)
    newton_iterations: Array  # (m,)
    residuals: Array  # (m,)

    @property
    def times(self) -> Array:
        return np.arange(self.snapshots.shape[0]) * self.config.tau

    def final(self) -> Array:
        return self.snapshots[-1]


# ---------------------------------------------------------------------------
# Newton solve


def _linear_bands(grid: Grid, tau: float) -> Array:
    """Bands of ``I + tau A_n^2`` in the ``(5, N)`` layout of :mod:`._banded`."""
    N = grid.interior_count
    a2 = tau * grid.laplacian_scale**2
    ab = np.zeros((5, N))
    diag = np.full(N, 6.0)
    diag[0] -= 1.0
    diag[-1] -= 1.0
    ab[2] = 1.0 + a2 * diag
    ab[1, 1:] = -4.0 * a2
    ab[3, :-1] = -4.0 * a2
    ab[0, 2:] = a2
    ab[4, :-2] = a2
    return ab


def _apply_An2(x: Array, grid: Grid) -> Array:
    return apply_An(apply_An(x, grid), grid)


def _residual(x, rhs, cfg: SchemeConfig, grid: Grid) -> Array:
    tau = cfg.tau
    return x + tau * _apply_An2(x, grid) - tau * apply_An(eval_drift(cfg.drift, x), grid) - rhs


def _jacobian_bands(x, base: Array, cfg: SchemeConfig, grid: Grid) -> Array:
    # subtract tau * A_n diag(f'(x)): tridiagonal, column j scaled by f'(x_j)
    d = cfg.tau * grid.laplacian_scale * eval_drift_prime(cfg.drift, x)
    ab = np.broadcast_to(base, x.shape[:-1] + base.shape).copy()
    ab[..., 2, :] += 2.0 * d
    ab[..., 1, 1:] -= d[..., 1:]
    ab[..., 3, :-1] -= d[..., :-1]
    return ab


def newton_solve(rhs: Array, x0: Array, cfg: SchemeConfig, base_bands: Array | None = None):
    """Solve the implicit equation for a batch ``(B, N)`` of right-hand sides.

    Returns ``(x, iterations, residual_norms, converged)``; unconverged rows
    keep their last iterate.
    """
    grid = cfg.grid
    if base_bands is None:
        base_bands = _linear_bands(grid, cfg.tau)
    x = np.array(x0, dtype=float, copy=True)
    res = _residual(x, rhs, cfg, grid)
    rnorm = np.asarray(norm_lp(res, 2, grid), dtype=float).reshape(x.shape[0])
    iters = np.zeros(x.shape[0], dtype=int)
    active = rnorm > cfg.newton_tol
    for _ in range(cfg.max_iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa = x[idx]
        ab = _jacobian_bands(xa, base_bands, cfg, grid)
        x[idx] = xa - solve_banded_batch(ab, res[idx])
        iters[idx] += 1
        res[idx] = _residual(x[idx], rhs[idx], cfg, grid)
        rnorm[idx] = np.asarray(norm_lp(res[idx], 2, grid)).reshape(idx.size)
        bad = ~np.isfinite(rnorm[idx])
        active[idx] = (rnorm[idx] > cfg.newton_tol) & ~bad
        if bad.any():
            rnorm[idx[bad]] = np.inf
    converged = rnorm <= cfg.newton_tol
    return x, iters, rnorm, converged


def implicit_step(U, dbeta, cfg: SchemeConfig) -> Array:
    """One backward-Euler step from U with Brownian increment dbeta (length n-1)."""
    U = np.asarray(U, dtype=float)
    dbeta = np.asarray(dbeta, dtype=float)
    N = cfg.n - 1
    if U.shape[-1] != N or dbeta.shape[-1] != N:
        raise ValueError(f"state and increment must have length {N}")
    single = U.ndim == 1
    U2 = np.atleast_2d(U)
    rhs = U2 + math.sqrt(cfg.n / math.pi) * eval_diffusion(cfg.diffusion, U2) * np.atleast_2d(dbeta)
    x, _, rnorm, ok = newton_solve(rhs, U2, cfg)
    if not ok.all():
        worst = float(np.max(rnorm[~ok]))
        raise NewtonConvergenceError(
            f"Newton did not reach tol {cfg.newton_tol:g} in {cfg.max_iters} iterations "
            f"(residual {worst:.3e}); tau={cfg.tau:g} may be too large",
            residual=worst,
        )
    return x[0] if single else x


@dataclass
class BatchResult:
    final: Array  # (B, n-1)
    failed: Array  # (B,) bool
    failed_step: Array  # (B,) int, -1 when the path succeeded
    stats: SolverStats
    iterations: Array | None = None  # (m, B) when recorded
    residuals: Array | None = None  # (m, B) when recorded


def simulate_batch(cfg: SchemeConfig, cells: Array, observer=None, record_iterations=False) -> BatchResult:
    """Run the scheme for a batch of sheets ``cells`` of shape ``(B, m, n)``.

    ``observer(i, U, alive)`` is called with every snapshot ``U^i`` (including
    i = 0) for the rows still alive.  A path whose Newton solve fails is frozen
    and flagged; the others continue.
    """
    cells = np.asarray(cells, dtype=float)
    if cells.ndim != 3 or cells.shape[1:] != (cfg.m, cfg.n):
        raise ValueError(f"sheet cells of shape {cells.shape[1:]} do not match (m, n) = ({cfg.m}, {cfg.n})")
    B = cells.shape[0]
    grid = cfg.grid
    base = _linear_bands(grid, cfg.tau)
    # (n/pi) * cell = sqrt(n/pi) * dbeta
    scale = cfg.n / math.pi
    U = np.broadcast_to(cfg.initial_state(), (B, cfg.n - 1)).copy()
    alive = np.ones(B, dtype=bool)
    failed_step = np.full(B, -1)
    stats = SolverStats()
    iterations = np.zeros((cfg.m, B), dtype=int) if record_iterations else None
    residuals = np.full((cfg.m, B), np.nan) if record_iterations else None
    if observer is not None:
        observer(0, U, alive)
    for i in range(cfg.m):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        Ua = U[idx]
        rhs = Ua + scale * eval_diffusion(cfg.diffusion, Ua) * cells[idx, i, 1:]
        x, its, rnorm, ok = newton_solve(rhs, Ua, cfg, base)
        # failed rows keep their last converged state
        U[idx[ok]] = x[ok]
        stats.solves += idx.size
        stats.max_iterations = max(stats.max_iterations, int(its.max()))
        if ok.any():
            stats.max_residual = max(stats.max_residual, float(rnorm[ok].max()))
        if iterations is not None:
            iterations[i, idx] = its
            residuals[i, idx] = rnorm
        if not ok.all():
            lost = idx[~ok]
            alive[lost] = False
            failed_step[lost] = i
            stats.failures += lost.size
        if observer is not None:
            observer(i + 1, U, alive)
    return BatchResult(U, ~alive, failed_step, stats, iterations, residuals)


def simulate(cfg: SchemeConfig, sheet: _noise.NoiseSheet) -> Trajectory:
    """Full trajectory ``U^0..U^m`` driven by one noise sheet."""
    if (sheet.n, sheet.m) != (cfg.n, cfg.m) or not math.isclose(sheet.T, cfg.T, rel_tol=1e-12):
        raise ValueError(
            f"sheet (n={sheet.n}, m={sheet.m}, T={sheet.T}) does not match config "
            f"(n={cfg.n}, m={cfg.m}, T={cfg.T})"
        )
    snaps = np.empty((cfg.m + 1, cfg.n - 1))

    def keep(i, U, alive):
        snaps[i] = U[0]

    out = simulate_batch(cfg, sheet.cells[None], observer=keep, record_iterations=True)
    if out.failed[0]:
        step = int(out.failed_step[0])
        raise NewtonConvergenceError(
            f"Newton failed at step {step} (tau={cfg.tau:g}, n={cfg.n})", step=step, path=sheet.path
        )
    return Trajectory(cfg, snaps, out.iterations[:, 0].copy(), out.residuals[:, 0].copy())


def semidiscrete_reference(cfg: SchemeConfig, sheet: _noise.NoiseSheet, refinement: int) -> Trajectory:
    """Approximate the time-continuous spatial scheme by running with step ``tau / refinement``.

    The sheet must resolve the fine step: it is coarsened in time to
    ``m * refinement`` steps if it is finer still.  The returned trajectory is
    subsampled back onto the coarse time grid ``t_i = i * tau``.
    """
    if int(refinement) != refinement or refinement < 1 or refinement & (refinement - 1):
        raise ValueError(f"refinement must be a power of two, got {refinement!r}")
    mf = cfg.m * int(refinement)
    if sheet.m < mf or sheet.m % mf:
        raise ValueError(f"sheet with m={sheet.m} cannot drive {mf} fine steps")
    while sheet.m > mf:
        sheet = _noise.coarsen_time(sheet)
    fine_cfg = cfg.with_(m=mf)
    fine = simulate(fine_cfg, sheet)
    r = int(refinement)
    its = fine.newton_iterations.reshape(cfg.m, r).sum(axis=1)
    res = fine.residuals.reshape(cfg.m, r).max(axis=1)
    return Trajectory(cfg, fine.snapshots[::r].copy(), its, res)
