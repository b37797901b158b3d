"""Uniform mesh on (0, pi), the discrete Dirichlet Laplacian and its spectral calculus.

Grid functions are plain numpy arrays whose last axis holds the n-1 interior
values (slot k-1 is the value at k*h).  Leading axes are treated as a batch,
so every operator here acts on a single vector or on a stack of vectors.

The Laplacian ``A_n`` is diagonalised by the discrete sine basis

    e_j(k) = sqrt(2/n) sin(j k pi / n),        lambda_{j,n} = -j^2 c_{j,n},

with ``c_{j,n} = sin^2(j pi / 2n) / (j pi / 2n)^2``.  Eigenvalues always come
from this closed form; forward/inverse expansions use the orthonormal DST-I
from :mod:`scipy.fft`, which is exactly the e_j transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft


@dataclass(frozen=True)
class Grid:
    """Uniform spatial mesh with step ``h = pi / n`` and n-1 interior nodes."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"grid size n must be an integer >= 2, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return math.pi / self.n

    @property
    def interior_count(self) -> int:
        return self.n - 1

    @cached_property
    def points(self) -> np.ndarray:
        return np.arange(1, self.n) * self.h

    @cached_property
    def c_factors(self) -> np.ndarray:
        a = np.arange(1, self.n) * math.pi / (2 * self.n)
        return (np.sin(a) / a) ** 2

    @cached_property
    def lambdas(self) -> np.ndarray:
        j = np.arange(1, self.n, dtype=float)
        return -(j**2) * self.c_factors

    @property
    def laplacian_scale(self) -> float:
        """The factor n^2 / pi^2 in front of the second-difference stencil."""
        return self.n**2 / math.pi**2


def make_grid(n: int) -> Grid:
    return Grid(n)


@dataclass(frozen=True)
class SpectralBasis:
    grid: Grid
    lambdas: np.ndarray
    c_factors: np.ndarray


def spectral_basis(grid: Grid) -> SpectralBasis:
    return SpectralBasis(grid, grid.lambdas, grid.c_factors)


def _check(v, grid: Grid) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] != grid.interior_count:
        raise ValueError(
            f"grid function has {v.shape[-1] if v.ndim else 0} entries, "
            f"grid with n={grid.n} needs {grid.interior_count}"
        )
    return v


def eigen_pair(j: int, grid: Grid) -> tuple[float, np.ndarray]:
    """Return ``(lambda_{j,n}, e_j)`` for ``1 <= j <= n-1``."""
    if int(j) != j or not 1 <= j <= grid.n - 1:
        raise ValueError(f"mode index j must lie in 1..{grid.n - 1}, got {j!r}")
    k = np.arange(1, grid.n)
    e = math.sqrt(2.0 / grid.n) * np.sin(j * k * math.pi / grid.n)
    return float(grid.lambdas[j - 1]), e


def spectral_transform(v, grid: Grid, direction: str = "forward") -> np.ndarray:
    """Expand in (forward) or reconstruct from (inverse) the basis ``e_j``.

    The orthonormal DST-I is an involution, so both directions are the same
    transform; the argument only documents intent and is validated.
    """
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    v = _check(v, grid)
    return fft.dst(v, type=1, norm="ortho", axis=-1)


def _spectral_apply(v, grid: Grid, multiplier: np.ndarray) -> np.ndarray:
    coeffs = spectral_transform(v, grid)
    return spectral_transform(coeffs * multiplier, grid, "inverse")


def apply_An(v, grid: Grid) -> np.ndarray:
    """Second-difference stencil with homogeneous Dirichlet values at 0 and pi."""
    v = _check(v, grid)
    padded = np.zeros(v.shape[:-1] + (v.shape[-1] + 2,))
    padded[..., 1:-1] = v
    return grid.laplacian_scale * (padded[..., :-2] - 2.0 * v + padded[..., 2:])


def apply_frac_power(v, gamma: float, grid: Grid) -> np.ndarray:
    """``(-A_n)^gamma v`` for any real gamma (all eigenvalues are nonzero)."""
    return _spectral_apply(v, grid, (-grid.lambdas) ** gamma)


def apply_semigroup(v, t: float, grid: Grid) -> np.ndarray:
    """``exp(-A_n^2 t) v``."""
    if t < 0:
        raise ValueError(f"semigroup time must be >= 0, got {t}")
    return _spectral_apply(v, grid, np.exp(-(grid.lambdas**2) * t))


def apply_resolvent_power(v, tau: float, iota: int, grid: Grid) -> np.ndarray:
    """``(I + tau A_n^2)^(-iota) v``; this is iota backward-Euler steps of the linear part."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if int(iota) != iota or iota < 0:
        raise ValueError(f"iota must be a nonnegative integer, got {iota!r}")
    return _spectral_apply(v, grid, (1.0 + tau * grid.lambdas**2) ** (-float(iota)))


def norm_lp(v, p: float, grid: Grid) -> np.ndarray | float:
    """Discrete L^p norm ``((pi/n) sum |v_k|^p)^(1/p)``; ``p = inf`` gives the max norm."""
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    v = np.abs(_check(v, grid))
    if math.isinf(p):
        out = v.max(axis=-1)
    else:
        # scale by the max so tiny or huge entries do not under/overflow
        scale = v.max(axis=-1, keepdims=True)
        safe = np.where(scale > 0, scale, 1.0)
        out = scale[..., 0] * (grid.h * np.sum((v / safe) ** p, axis=-1)) ** (1.0 / p)
    return out if np.ndim(out) else float(out)


def norm_sobolev(v, gamma: float, grid: Grid) -> np.ndarray | float:
    """``||(-A_n)^gamma v||`` in the discrete L^2 norm."""
    return norm_lp(apply_frac_power(v, gamma, grid), 2, grid)


def h1_seminorm_differences(v, grid: Grid) -> np.ndarray | float:
    """Discrete H^1 seminorm from forward differences, ``((n/pi) sum_{j=1}^n |v_j - v_{j-1}|^2)^(1/2)``.

    Equal to ``norm_sobolev(v, 1/2)``; kept separate so the two routes can be
    compared.
    """
    v = _check(v, grid)
    padded = np.zeros(v.shape[:-1] + (v.shape[-1] + 2,))
    padded[..., 1:-1] = v
    out = np.sqrt(np.sum(np.diff(padded, axis=-1) ** 2, axis=-1) / grid.h)
    return out if np.ndim(out) else float(out)


def _check_position(x: float, name: str = "x") -> float:
    if not 0.0 <= x <= math.pi:
        raise ValueError(f"{name} must lie in [0, pi], got {x}")
    return float(x)


def kappa(y: float, grid: Grid) -> float:
    """Largest grid node ``h * floor(y / h)`` not exceeding y."""
    y = _check_position(y, "y")
    return grid.h * _cell_index(y, grid)


def _cell_index(y, grid: Grid):
    # y/h can land a few ulps below an integer when y is itself a node; snap those.
    r = np.asarray(y, dtype=float) / grid.h
    k = np.floor(r)
    k = np.where(np.isclose(r, k + 1.0, rtol=0.0, atol=1e-9), k + 1.0, k)
    k = np.clip(k, 0, grid.n)
    return k.astype(int) if np.ndim(k) else int(k)


def interpolate_linear(v, x: float, grid: Grid) -> float:
    """Piecewise-linear interpolant of the nodal values (zero at 0 and pi) at x."""
    x = _check_position(x)
    v = _check(v, grid)
    padded = np.zeros(v.shape[:-1] + (v.shape[-1] + 2,))
    padded[..., 1:-1] = v
    k = _cell_index(x, grid)
    if k >= grid.n:
        return padded[..., grid.n] if padded.ndim > 1 else float(padded[grid.n])
    frac = x / grid.h - k
    out = padded[..., k] + frac * (padded[..., k + 1] - padded[..., k])
    return out if np.ndim(out) else float(out)
