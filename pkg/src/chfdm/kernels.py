"""Green functions of ``d/dt + Delta^2`` with Dirichlet data and their finite difference analogues.

Three kernels are available:

* ``exact``: ``sum_{j<=J} exp(-j^4 t) phi_j(x) phi_j(y)`` with
  ``phi_j = sqrt(2/pi) sin(j .)``, truncated at J;
* ``semi``: ``sum_{j<n} exp(-lambda_{j,n}^2 t) phi_{j,n}(x) phi_j(kappa_n(y))``,
  where ``phi_{j,n}`` is the piecewise-linear interpolant of ``phi_j``;
* ``full``: the same with ``exp(-lambda^2 t)`` replaced by
  ``(1 + tau lambda^2)^(-floor(t / tau))``.

``order=1`` multiplies mode j by its eigenvalue, i.e. applies the
(discrete) Laplacian.  The discrete kernels are piecewise constant in y, so
their y-integrals are exact cell sums; integrals against the exact kernel use
a per-cell composite trapezoid rule.  Time integrals use two-point Gauss rules on
geometrically graded panels, 64 per decade, refined toward the kernel
singularity at zero time lag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .grid import Grid, _cell_index, _check_position

PANELS_PER_DECADE = 64
SQ2PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class KernelSpec:
    family: str
    n: int | None = None
    J: int | None = None
    tau: float | None = None
    order: int = 0

    def __post_init__(self):
        if self.order not in (0, 1):
            raise ValueError(f"order must be 0 or 1, got {self.order!r}")
        if self.family == "exact":
            if self.J is None or self.J < 1:
                raise ValueError(f"exact kernel needs truncation J >= 1, got {self.J!r}")
        elif self.family in ("semi", "full"):
            Grid(self.n)
            if self.family == "full" and not (self.tau is not None and self.tau > 0):
                raise ValueError(f"full kernel needs tau > 0, got {self.tau!r}")
        else:
            raise ValueError(f"unknown kernel family {self.family!r}")

    @classmethod
    def exact(cls, J: int, order: int = 0):
        return cls("exact", J=int(J), order=order)

    @classmethod
    def semi(cls, n: int, order: int = 0):
        return cls("semi", n=int(n), order=order)

    @classmethod
    def full(cls, n: int, tau: float, order: int = 0):
        return cls("full", n=int(n), tau=float(tau), order=order)


def phi(j, x):
    return SQ2PI * np.sin(np.multiply.outer(np.asarray(j, dtype=float), np.asarray(x, dtype=float)))


def phi_interp(j, x, grid: Grid):
    """``Pi_n(phi_j)(x)`` for modes j (rows) and positions x (columns)."""
    x = np.asarray(x, dtype=float)
    k = _cell_index(x, grid)
    left = np.asarray(k) * grid.h
    frac = x / grid.h - k
    lo = phi(j, left)
    hi = phi(j, left + grid.h)
    # at x = pi the cell index is n and frac is 0, so hi never contributes
    return lo + frac * (hi - lo)


def _steps(t, tau):
    """``floor(t / tau)`` with node times snapped to their integer."""
    r = np.asarray(t, dtype=float) / tau
    k = np.floor(r)
    return np.where(np.isclose(r, k + 1.0, rtol=1e-12, atol=1e-9), k + 1.0, k)


def _mode_weights(spec: KernelSpec, t):
    """Time-dependent factor of each mode, shape ``t.shape + (modes,)``."""
    t = np.asarray(t, dtype=float)[..., None]
    if spec.family == "exact":
        lam = -np.arange(1, spec.J + 1, dtype=float) ** 2
        w = np.exp(-(lam**2) * t)
    else:
        lam = Grid(spec.n).lambdas
        if spec.family == "semi":
            w = np.exp(-(lam**2) * t)
        else:
            w = (1.0 + spec.tau * lam**2) ** (-_steps(t, spec.tau))
    return w * lam if spec.order == 1 else w


def _left_factor(spec: KernelSpec, x):
    if spec.family == "exact":
        return phi(np.arange(1, spec.J + 1), x)
    grid = Grid(spec.n)
    return phi_interp(np.arange(1, spec.n), x, grid)


def _right_factor(spec: KernelSpec, y):
    if spec.family == "exact":
        return phi(np.arange(1, spec.J + 1), y)
    grid = Grid(spec.n)
    return phi(np.arange(1, spec.n), _cell_index(y, grid) * grid.h)


def kernel_value(spec: KernelSpec, t: float, x: float, y):
    """Evaluate the kernel (or its Laplacian for order 1) at time t; y may be an array."""
    if not t > 0:
        raise ValueError(f"kernel time must be > 0, got {t}")
    if spec.family == "full" and _steps(t, spec.tau) < 1:
        raise ValueError(f"full kernel needs t >= tau={spec.tau}, got {t}")
    _check_position(x)
    y_arr = np.asarray(y, dtype=float)
    if np.any((y_arr < 0) | (y_arr > math.pi)):
        raise ValueError("y must lie in [0, pi]")
    w = _mode_weights(spec, t) * _left_factor(spec, x)
    out = w @ _right_factor(spec, y_arr)
    return out if np.ndim(out) else float(out)


def kernel_tail_bound(J: int, t: float, order: int = 0) -> float:
    """Bound on the modes beyond J of the exact kernel: ``(2/pi) int_J^inf z^(2 order) e^(-z^4 t) dz``."""
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t}")
    val, _ = integrate.quad(lambda z: z ** (2 * order) * math.exp(-(z**4) * t), J, np.inf)
    return 2.0 / math.pi * val


# ---------------------------------------------------------------------------
# quadrature building blocks


def graded_panels(a: float, b: float, smallest: float, per_decade: int = PANELS_PER_DECADE, points: int = 2):
    """Quadrature nodes and weights on [a, b] from panels graded geometrically toward a.

    The first panel is ``[a, a + smallest]``; after that panel edges grow by a
    factor ``10^(1/per_decade)``.  Each panel carries a ``points``-point
    Gauss-Legendre rule (``points=1`` is the midpoint rule).
    """
    length = b - a
    if length <= 0:
        return np.empty(0), np.empty(0)
    smallest = min(smallest, length)
    count = max(1, math.ceil(per_decade * math.log10(length / smallest)))
    offsets = np.concatenate([[0.0], np.geomspace(smallest, length, count + 1)])
    edges = a + offsets
    mid, width = 0.5 * (edges[1:] + edges[:-1]), np.diff(edges)
    g, gw = np.polynomial.legendre.leggauss(points)
    nodes = mid[:, None] + 0.5 * width[:, None] * g[None, :]
    return nodes.ravel(), (0.5 * width[:, None] * gw[None, :]).ravel()


def _cell_nodes(n: int, nodes_total: int):
    """Per-cell trapezoid nodes: positions, weights and owning cell index."""
    q = max(1, math.ceil(nodes_total / n))
    h = math.pi / n
    frac = np.linspace(0.0, 1.0, q + 1)
    y = (np.arange(n)[:, None] + frac[None, :]) * h
    w = np.full(q + 1, h / q)
    w[0] = w[-1] = h / (2 * q)
    cell = np.repeat(np.arange(n), q + 1)
    return y.ravel(), np.tile(w, n), cell


def _cell_sum(values, n: int, power: int):
    """y-integral of a function constant on each cell [kh, (k+1)h); values has shape (..., n)."""
    return (math.pi / n) * np.sum(np.abs(values) ** power, axis=-1)


def _discrete_cell_values(grid: Grid, x: float, weights):
    """Discrete kernel on every cell: ``weights @ (phi_{j,n}(x) phi_j(k h))``, shape (S, n)."""
    j = np.arange(1, grid.n)
    left = phi_interp(j, x, grid)
    right = phi(j, np.arange(grid.n) * grid.h)
    return (weights * left) @ right


def _check_dims(n, T):
    Grid(n)
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")


def kernel_error_space(n: int, T: float, x: float, order: int = 0) -> float:
    """Spatial kernel error at x over [0, T].

    order 0: ``int_0^T int |G^n_s(x,y) - G_s(x,y)|^2 dy ds``;
    order 1: ``int_0^T int |Delta_n G^n_s(x,y) - Delta G_s(x,y)| dy ds``.
    The exact kernel is truncated at J = 8n.
    """
    _check_dims(n, T)
    _check_position(x)
    if order not in (0, 1):
        raise ValueError(f"order must be 0 or 1, got {order!r}")
    if T == 0:
        return 0.0
    grid = Grid(n)
    J = 8 * n
    semi = KernelSpec.semi(n, order)
    exact = KernelSpec.exact(J, order)
    y, wy, cell = _cell_nodes(n, 16 * max(J, n))
    disc_right = phi(np.arange(1, n), cell * grid.h)
    exact_right = phi(np.arange(1, J + 1), y)
    disc_left = phi_interp(np.arange(1, n), x, grid)
    exact_left = phi(np.arange(1, J + 1), x)
    # below J^-4 the truncated series has stopped growing
    s, ws = graded_panels(0.0, T, 1e-4 * float(J) ** -4)
    total = 0.0
    for chunk in np.array_split(np.arange(s.size), max(1, s.size // 128)):
        diff = (_mode_weights(semi, s[chunk]) * disc_left) @ disc_right
        diff -= (_mode_weights(exact, s[chunk]) * exact_left) @ exact_right
        inner = (np.abs(diff) ** (2 - order)) @ wy
        total += float(ws[chunk] @ inner)
    return total


def _check_tau(tau, T):
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    m = T / tau
    if T > 0 and abs(m - round(m)) > 1e-9 * max(1.0, m):
        raise ValueError(f"tau={tau} does not divide T={T}")
    return int(round(m))


def kernel_error_time(n: int, tau: float, T: float, x: float, order: int = 0) -> float:
    """Temporal kernel error at x over [0, T].

    order 0: ``int_0^T int |G^{n,tau}_{s+tau}(x,y) - G^n_s(x,y)|^2 dy ds``;
    order 1: ``int_0^T int |Delta_n G^{n,tau}_{s+tau} - Delta_n G^n_s| dy ds``.
    On ``[k tau, (k+1) tau)`` the resolvent exponent is k+1; each such
    interval gets its own graded panels.
    """
    _check_dims(n, T)
    _check_position(x)
    if order not in (0, 1):
        raise ValueError(f"order must be 0 or 1, got {order!r}")
    m = _check_tau(tau, T)
    grid = Grid(n)
    lam = grid.lambdas
    lam_pow = lam if order == 1 else np.ones_like(lam)
    s_loc, ws = graded_panels(0.0, tau, 1e-8 * tau)
    total = 0.0
    for k in range(m):
        s = k * tau + s_loc
        weights = lam_pow * ((1.0 + tau * lam**2) ** (-(k + 1.0)) - np.exp(-np.outer(s, lam**2)))
        vals = _discrete_cell_values(grid, x, weights)
        total += float(ws @ _cell_sum(vals, n, 2 - order))
    return total


@dataclass(frozen=True)
class RegularityProbe:
    """Increment integrals of the semi-discrete kernel between (t, x1) and (s, x2).

    ``mixed``: over [0, s], kernel at (t - r, x1) minus kernel at (s - r, x2);
    ``tail``: over [s, t], kernel at (t - r, x1);
    ``spatial``: over [0, t], same time lag, positions x1 vs x2;
    ``temporal``: the mixed integral with x2 replaced by x1, plus the tail.
    Order 0 integrates squares, order 1 absolute values of the discrete Laplacian.
    """

    mixed: float
    tail: float
    spatial: float
    temporal: float

    @property
    def total(self) -> float:
        return self.mixed + self.tail


def kernel_regularity_probe(n, T, x1, x2, s, t, order=0) -> RegularityProbe:
    grid = Grid(n)
    _check_position(x1, "x1")
    _check_position(x2, "x2")
    if not (0 <= s <= t <= T and t > 0):
        raise ValueError(f"need 0 <= s <= t <= T and t > 0, got s={s}, t={t}, T={T}")
    if order not in (0, 1):
        raise ValueError(f"order must be 0 or 1, got {order!r}")
    spec = KernelSpec.semi(n, order)
    p = 2 - order

    def integral(lag_a, lag_b, xa, xb, lo, hi):
        # int_lo^hi int |G_{lag_a(r)}(xa,z) - G_{lag_b(r)}(xb,z)|^p dz dr, graded toward r = hi
        if hi <= lo:
            return 0.0
        u, wu = graded_panels(0.0, hi - lo, 1e-10)
        r = hi - u
        vals = _discrete_cell_values(grid, xa, _mode_weights(spec, lag_a(r)))
        if lag_b is not None:
            vals = vals - _discrete_cell_values(grid, xb, _mode_weights(spec, lag_b(r)))
        return float(wu @ _cell_sum(vals, n, p))

    now = lambda r: t - r  # noqa: E731
    then = lambda r: s - r  # noqa: E731
    tail = integral(now, None, x1, x1, s, t)
    spatial = 0.0 if x1 == x2 else integral(now, now, x1, x2, 0.0, t)
    same_x = 0.0 if s == t else integral(now, then, x1, x1, 0.0, s)
    if x1 == x2:
        mixed = same_x
    elif s == t:
        mixed = integral(now, now, x1, x2, 0.0, s)
    else:
        mixed = integral(now, then, x1, x2, 0.0, s)
    return RegularityProbe(mixed, tail, spatial, same_x + tail)
