"""Property suites: exact identities and explicit-constant inequalities checked on random probes.

Every suite returns a list of :class:`PropertyResult`, one per tag, with the
number of probes, the number of violations and the worst observed ratio
``lhs / rhs`` (or error / tolerance for identities).  Inequalities that can be
attained with equality allow a relative rounding slack of ``SLACK``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import gamma as gamma_fn

from .grid import (
    Grid,
    apply_An,
    apply_semigroup,
    eigen_pair,
    h1_seminorm_differences,
    norm_lp,
    norm_sobolev,
    spectral_transform,
)

SLACK = 1e-12
IDENTITY_TOL = 1e-12


@dataclass
class PropertyResult:
    tag: str
    description: str
    probes: int
    violations: int
    worst_ratio: float

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _result(tag, description, lhs, rhs, slack=SLACK):
    lhs = np.asarray(lhs, dtype=float).ravel()
    rhs = np.asarray(rhs, dtype=float).ravel()
    bad = lhs > rhs * (1.0 + slack) + 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    return PropertyResult(tag, description, int(lhs.size), int(bad.sum()), float(np.max(ratio)))


# ---------------------------------------------------------------------------
# constants


def sup_embedding_constant() -> float:
    """``C0 = (int_0^inf exp(-32 z^4 / pi^4) dz)^(1/2)``, via ``int e^(-a z^4) = Gamma(5/4) a^(-1/4)``."""
    return math.sqrt(gamma_fn(1.25) * (32.0 / math.pi**4) ** -0.25)


def semigroup_smoothing_constant(g: float) -> float:
    """``sup_{x>=0} x^g exp(-x^2/2) = (g/e)^(g/2)``."""
    return 1.0 if g == 0 else (g / math.e) ** (g / 2)


def resolvent_smoothing_constant(g: float) -> float:
    """``sup_{y>=0} y^g / (1 + y^2)`` for ``0 <= g <= 2``, attained at ``y^2 = g / (2 - g)``."""
    if not 0 <= g <= 2:
        raise ValueError(f"g must lie in [0, 2], got {g}")
    if g in (0, 2):
        return 1.0
    y2 = g / (2 - g)
    return y2 ** (g / 2) * (2 - g) / 2


# ---------------------------------------------------------------------------
# spectral identities


def _eigen_residual_extended(n: int) -> np.ndarray:
    """Per-mode ``||A_n e_j - lambda_j e_j|| / |lambda_j|`` in extended precision."""
    ld = np.longdouble
    pi = ld("3.14159265358979323846264338327950288")
    j = np.arange(1, n, dtype=ld)[:, None]
    k = np.arange(0, n + 1, dtype=ld)[None, :]
    e = np.sqrt(ld(2) / ld(n)) * np.sin(j * k * pi / ld(n))
    e[:, 0] = 0
    e[:, -1] = 0
    a = j[:, 0] * pi / (ld(2) * ld(n))
    lam = -(j[:, 0] ** 2) * (np.sin(a) / a) ** 2
    Ae = (ld(n) ** 2 / pi**2) * (e[:, :-2] - 2 * e[:, 1:-1] + e[:, 2:])
    res = np.sqrt(np.sum((Ae - lam[:, None] * e[:, 1:-1]) ** 2, axis=1))
    return np.asarray(res / np.abs(lam), dtype=float)


def spectral_suite(ns=tuple(2**k for k in range(1, 9)), rng=None) -> list[PropertyResult]:
    rng = np.random.default_rng(0) if rng is None else rng
    eig_ext, eig_norm, orth, pars, h1, round_trip, cb = [], [], [], [], [], [], []
    for n in ns:
        g = Grid(n)
        E = np.array([eigen_pair(j, g)[1] for j in range(1, n)])
        lam = g.lambdas
        scale = np.max(np.abs(lam))
        eig_norm.append(np.linalg.norm(apply_An(E, g) - lam[:, None] * E, axis=1) / scale)
        eig_ext.append(_eigen_residual_extended(n))
        orth.append(np.abs(E @ E.T - np.eye(n - 1)).ravel())
        v = rng.standard_normal((64, n - 1))
        coeffs = spectral_transform(v, g)
        pars.append(np.abs(np.sum(coeffs**2, axis=1) / np.sum(v**2, axis=1) - 1))
        round_trip.append(
            np.max(np.abs(spectral_transform(coeffs, g, "inverse") - v), axis=1) / np.max(np.abs(v), axis=1)
        )
        spec = norm_sobolev(v, 0.5, g)
        h1.append(np.abs(spec / h1_seminorm_differences(v, g) - 1))
        jj = np.arange(1, n)
        c = g.c_factors
        cb.append(np.concatenate([4 / math.pi**2 / c, c, (1 - c) / (math.pi**2 * jj**2 / (12 * n**2))]))
    tol = lambda parts: np.full(np.concatenate(parts).size, IDENTITY_TOL)  # noqa: E731
    cat = np.concatenate
    return [
        _result("eigen-relation", "closed-form eigenpairs, per mode relative to |lambda_j|, extended precision",
                cat(eig_ext), tol(eig_ext), 0.0),
        _result("eigen-relation-float64", "stencil A_n e_j vs lambda_j e_j in float64, relative to ||A_n||",
                cat(eig_norm), tol(eig_norm), 0.0),
        _result("orthonormality", "|<e_i, e_j> - delta_ij|", cat(orth), tol(orth), 0.0),
        _result("parseval", "sum a_j^2 vs |v|^2, relative", cat(pars), tol(pars), 0.0),
        _result("round-trip", "inverse(forward(v)) vs v, relative to max|v|", cat(round_trip), tol(round_trip), 0.0),
        _result("h1-identity", "spectral half power norm vs difference quotient, relative", cat(h1), tol(h1), 0.0),
        _result("c-factor-bounds", "4/pi^2 <= c <= 1 and 1 - c <= pi^2 j^2 / (12 n^2)", cat(cb),
                np.ones(cat(cb).size)),
    ]


# ---------------------------------------------------------------------------
# discrete embedding and interpolation inequalities


def _probe_vectors(n: int, count: int, rng) -> np.ndarray:
    """Gaussian, uniform, spiky, smooth and oscillating vectors, ``count`` in total."""
    g = Grid(n)
    N = n - 1
    kinds = np.array_split(np.arange(count), 5)
    out = np.empty((count, N))
    out[kinds[0]] = rng.standard_normal((kinds[0].size, N))
    out[kinds[1]] = rng.uniform(-1, 1, (kinds[1].size, N))
    spikes = np.zeros((kinds[2].size, N))
    spikes[np.arange(kinds[2].size), rng.integers(0, N, kinds[2].size)] = rng.choice([-1.0, 1.0], kinds[2].size)
    out[kinds[2]] = spikes + 1e-3 * rng.standard_normal(spikes.shape)
    # few low modes with random weights
    j = np.arange(1, N + 1)
    for rows, decay in ((kinds[3], 4.0), (kinds[4], 0.0)):
        w = rng.standard_normal((rows.size, N)) / j**decay
        if decay == 0:
            w *= j >= N // 2  # high modes only
        out[rows] = spectral_transform(w, g, "inverse")
    return out


def embedding_suite(ns=(4, 16, 64), count=10_000, rng=None) -> list[PropertyResult]:
    rng = np.random.default_rng(1) if rng is None else rng
    C0 = sup_embedding_constant()
    cols = {k: ([], []) for k in ("i", "ii", "iii", "iv-l2", "iv-sup")}
    for n in ns:
        g = Grid(n)
        a = _probe_vectors(n, count, rng)
        sup = norm_lp(a, math.inf, g)
        l2 = norm_lp(a, 2, g)
        h1 = norm_sobolev(a, 0.5, g)
        l6 = norm_lp(a, 6, g)
        t = 10.0 ** rng.uniform(-8, 1, count)
        flow = np.stack([apply_semigroup(a[i], t[i], g) for i in range(count)])
        for key, lhs, rhs in (
            ("i", sup, math.sqrt(math.pi) * h1),
            ("ii", sup**2, 2 * h1 * l2),
            ("iii", l6**6, 4 * h1**2 * l2**4),
            ("iv-l2", norm_lp(flow, 2, g), l2),
            ("iv-sup", norm_lp(flow, math.inf, g), C0 * t ** -0.125 * l2),
        ):
            cols[key][0].append(lhs)
            cols[key][1].append(rhs)
    desc = {
        "i": "sup norm <= sqrt(pi) * H1 norm",
        "ii": "sup norm^2 <= 2 * H1 norm * L2 norm",
        "iii": "L6 norm^6 <= 4 * H1 norm^2 * L2 norm^4",
        "iv-l2": "semigroup contracts the L2 norm",
        "iv-sup": f"semigroup sup norm <= C0 t^(-1/8) L2 norm, C0 = {C0:.6f}",
    }
    return [
        _result(f"embedding-{k}", desc[k], np.concatenate(l), np.concatenate(r)) for k, (l, r) in cols.items()
    ]


# ---------------------------------------------------------------------------
# smoothing of the semigroup and of resolvent powers


def smoothing_suite(ns=(4, 16, 64, 256), rng=None) -> list[PropertyResult]:
    """Spectral smoothing bounds on a 10 x 100 lattice of (gamma, time) probes."""
    rng = np.random.default_rng(2) if rng is None else rng
    gammas = np.linspace(0.0, 2.0, 10)
    times = np.geomspace(1e-6, 10.0, 100)
    semi_l, semi_r, res_l, res_r = [], [], [], []
    for n in ns:
        mu = -Grid(n).lambdas
        for g in gammas:
            # semigroup: max_j exp(-lambda^2 t / 2) (-lambda)^g <= C_g t^(-g/2)
            lhs = np.max(np.exp(-np.outer(times, mu**2) / 2) * mu**g, axis=1)
            semi_l.append(lhs)
            semi_r.append(semigroup_smoothing_constant(g) * times ** (-g / 2))
            # resolvent powers: iota steps of size tau with iota * tau on the same time lattice
            iota = rng.integers(1, 200, times.size).astype(float)
            tau = times / iota
            lhs = np.max(mu[None, :] ** g * (1 + np.outer(tau, mu**2)) ** -iota[:, None], axis=1)
            res_l.append(lhs)
            res_r.append(resolvent_smoothing_constant(g) * times ** (-g / 2))
    return [
        _result("semigroup-smoothing", "max_j e^(-lambda^2 t/2) (-lambda)^g <= (g/e)^(g/2) t^(-g/2)",
                np.concatenate(semi_l), np.concatenate(semi_r)),
        _result("resolvent-smoothing", "max_j (-lambda)^g (1+tau lambda^2)^(-iota) <= C'_g (iota tau)^(-g/2)",
                np.concatenate(res_l), np.concatenate(res_r)),
    ]


# ---------------------------------------------------------------------------
# structure of the cubic drift


def drift_suite(count=100_000, rng=None) -> list[PropertyResult]:
    rng = np.random.default_rng(3) if rng is None else rng
    a = rng.uniform(-5, 5, count) * 10.0 ** rng.uniform(-3, 0, count)
    b = rng.uniform(-5, 5, count) * 10.0 ** rng.uniform(-3, 0, count)
    f = lambda x: x**3 - x  # noqa: E731
    d = f(b) - f(a)
    out = [
        _result("drift-one-sided", "(f(b) - f(a))(a - b) <= (a - b)^2", d * (a - b), (a - b) ** 2),
        _result("drift-growth", "|f(b) - f(a)| <= 3 (1 + a^2 + b^2) |b - a|", np.abs(d),
                3 * (1 + a**2 + b**2) * np.abs(b - a)),
    ]
    lhs, rhs = [], []
    ns = (4, 16, 64)
    for n, rows in zip(ns, np.array_split(np.arange(count), len(ns))):
        g = Grid(n)
        x = rng.standard_normal((rows.size, n - 1)) * 10.0 ** rng.uniform(-2, 1, (rows.size, 1))
        inner = np.sum(x * apply_An(x**3, g), axis=1)
        # the exact value is -(n^2/pi^2) sum (x_k - x_{k-1})(x_k^3 - x_{k-1}^3) <= 0; allow rounding
        scale = 4 * g.laplacian_scale * np.sum(x**4, axis=1)
        lhs.append(inner)
        rhs.append(SLACK * scale)
    out.append(
        _result("drift-dissipativity", "<x, A_n x^3> <= 0 (up to rounding)", np.concatenate(lhs), np.concatenate(rhs),
                0.0)
    )
    return out


SUITES = {
    "spectral": spectral_suite,
    "embedding": embedding_suite,
    "smoothing": smoothing_suite,
    "drift": drift_suite,
}


def run_all() -> list[PropertyResult]:
    results = []
    for suite in SUITES.values():
        results.extend(suite())
    return results
