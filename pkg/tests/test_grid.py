import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import eigh, expm

from chfdm.grid import (
    Grid,
    apply_An,
    apply_frac_power,
    apply_resolvent_power,
    apply_semigroup,
    eigen_pair,
    h1_seminorm_differences,
    interpolate_linear,
    kappa,
    make_grid,
    norm_lp,
    norm_sobolev,
    spectral_basis,
    spectral_transform,
)


def dense_A(n):
    """Oracle: the (n-1)x(n-1) second-difference matrix built entry by entry."""
    N = n - 1
    A = np.zeros((N, N))
    for k in range(N):
        A[k, k] = -2.0
        if k > 0:
            A[k, k - 1] = 1.0
        if k < N - 1:
            A[k, k + 1] = 1.0
    return A * n**2 / math.pi**2


def dense_function(n, fn):
    """Oracle: fn applied to the symmetric matrix -A via a dense eigendecomposition."""
    w, V = eigh(-dense_A(n))
    return V @ np.diag(fn(w)) @ V.T


def test_make_grid_small_cases():
    g = make_grid(2)
    assert g.h == math.pi / 2 and g.interior_count == 1
    g = make_grid(4)
    assert g.h == math.pi / 4 and g.interior_count == 3
    np.testing.assert_allclose(g.points, [math.pi / 4, math.pi / 2, 3 * math.pi / 4])


@pytest.mark.parametrize("bad", [1, 0, -3, 2.5])
def test_make_grid_rejects_bad_sizes(bad):
    with pytest.raises(ValueError):
        make_grid(bad)


def test_eigenvalue_examples():
    lam, e = eigen_pair(1, Grid(2))
    assert lam == pytest.approx(-8 / math.pi**2, rel=1e-14)
    assert lam == pytest.approx(-0.810569, abs=1e-6)
    np.testing.assert_allclose(e, [1.0])
    lam, e = eigen_pair(1, Grid(4))
    assert lam == pytest.approx(-0.9496413, abs=1e-7)
    np.testing.assert_allclose(e, [0.5, 1 / math.sqrt(2), 0.5], atol=1e-15)


def test_eigenvalues_match_dense_diagonalization():
    for n in (2, 3, 8, 33):
        w = np.sort(np.linalg.eigvalsh(dense_A(n)))[::-1]
        np.testing.assert_allclose(Grid(n).lambdas, w, rtol=1e-12)


def test_eigenvalues_tend_to_minus_j_squared():
    for j in (1, 2, 3):
        lams = [eigen_pair(j, Grid(n))[0] for n in (8, 64, 512, 4096)]
        gaps = [abs(lam + j**2) for lam in lams]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-5 * j**4


@pytest.mark.parametrize("j", [0, 4, -1])
def test_eigen_pair_out_of_range(j):
    with pytest.raises(ValueError):
        eigen_pair(j, Grid(4))


def test_spectral_basis_bounds():
    for n in (2, 5, 64, 257):
        b = spectral_basis(Grid(n))
        j = np.arange(1, n)
        assert np.all(b.c_factors >= 4 / math.pi**2) and np.all(b.c_factors <= 1)
        assert np.all(b.lambdas < 0)
        assert np.all(1 - b.c_factors <= math.pi**2 * j**2 / (12 * n**2))


def test_transform_of_basis_vectors():
    g = Grid(8)
    coeffs = spectral_transform(eigen_pair(3, g)[1], g)
    expected = np.zeros(7)
    expected[2] = 1.0
    np.testing.assert_allclose(coeffs, expected, atol=1e-15)
    g = Grid(4)
    v = eigen_pair(1, g)[1] + 2 * eigen_pair(2, g)[1]
    np.testing.assert_allclose(spectral_transform(v, g), [1, 2, 0], atol=1e-15)


def test_transform_matches_explicit_sum():
    n = 12
    g = Grid(n)
    v = np.random.default_rng(0).standard_normal(n - 1)
    k = np.arange(1, n)
    E = np.sqrt(2 / n) * np.sin(np.outer(k, k) * math.pi / n)
    np.testing.assert_allclose(spectral_transform(v, g), E @ v, atol=1e-13)


def test_transform_round_trip_and_direction_check():
    g = Grid(16)
    v = np.random.default_rng(1).standard_normal(15)
    back = spectral_transform(spectral_transform(v, g), g, "inverse")
    assert np.max(np.abs(back - v)) <= 1e-12 * np.max(np.abs(v))
    with pytest.raises(ValueError):
        spectral_transform(v, g, "sideways")


def test_length_mismatch_raises():
    with pytest.raises(ValueError):
        spectral_transform(np.ones(5), Grid(8))
    with pytest.raises(ValueError):
        apply_An(np.ones(3), Grid(8))


def test_apply_An_examples():
    g = Grid(4)
    lam, e = eigen_pair(1, g)
    np.testing.assert_allclose(apply_An(e, g), -0.9496413 * e, atol=1e-7)
    np.testing.assert_array_equal(apply_An(np.zeros(3), g), np.zeros(3))
    g = Grid(16)
    v = np.random.default_rng(2).standard_normal(15)
    np.testing.assert_allclose(apply_An(v, g), dense_A(16) @ v, rtol=1e-12, atol=1e-12)
    spectral = spectral_transform(g.lambdas * spectral_transform(v, g), g, "inverse")
    assert np.max(np.abs(spectral - apply_An(v, g))) <= 1e-12 * np.max(np.abs(apply_An(v, g)))


def test_apply_An_batched():
    g = Grid(6)
    V = np.random.default_rng(3).standard_normal((4, 2, 5))
    out = apply_An(V, g)
    np.testing.assert_allclose(out[2, 1], dense_A(6) @ V[2, 1], atol=1e-12)


def test_frac_power_examples():
    g = Grid(4)
    v = np.random.default_rng(4).standard_normal(3)
    np.testing.assert_allclose(apply_frac_power(v, 0.0, g), v, atol=1e-15)
    e = eigen_pair(1, g)[1]
    np.testing.assert_allclose(apply_frac_power(e, 1.0, g), 0.9496413 * e, atol=1e-7)
    np.testing.assert_allclose(apply_frac_power(e, 1.0, g), -apply_An(e, g), atol=1e-14)
    g = Grid(16)
    v = np.random.default_rng(5).standard_normal(15)
    twice = apply_frac_power(apply_frac_power(v, 0.5, g), 0.5, g)
    np.testing.assert_allclose(twice, apply_frac_power(v, 1.0, g), atol=1e-12 * np.abs(twice).max())


@pytest.mark.parametrize("gamma", [-1.0, -0.3, 0.25, 0.5, 1.5])
def test_frac_power_matches_dense_oracle(gamma):
    n = 9
    v = np.random.default_rng(6).standard_normal(n - 1)
    expected = dense_function(n, lambda w: w**gamma) @ v
    np.testing.assert_allclose(apply_frac_power(v, gamma, Grid(n)), expected, rtol=1e-10, atol=1e-12)


def test_semigroup_examples():
    g = Grid(4)
    v = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(apply_semigroup(v, 0.0, g), v, atol=1e-15)
    e = eigen_pair(1, g)[1]
    coeff = spectral_transform(apply_semigroup(e, 1.0, g), g)[0]
    assert coeff == pytest.approx(0.40585, abs=5e-5)
    np.testing.assert_allclose(apply_semigroup(e, 1.0, g), np.exp(-(0.9496413**2)) * e, atol=1e-7)
    with pytest.raises(ValueError):
        apply_semigroup(v, -0.1, g)


def test_semigroup_matches_matrix_exponential():
    n, t = 7, 0.013
    A = dense_A(n)
    v = np.random.default_rng(7).standard_normal(n - 1)
    np.testing.assert_allclose(apply_semigroup(v, t, Grid(n)), expm(-A @ A * t) @ v, rtol=1e-9, atol=1e-12)


def test_semigroup_contracts():
    g = Grid(16)
    v = np.random.default_rng(8).standard_normal(15)
    assert norm_lp(apply_semigroup(v, 0.5, g), 2, g) <= norm_lp(v, 2, g)


def test_resolvent_examples():
    g = Grid(4)
    e = eigen_pair(1, g)[1]
    np.testing.assert_allclose(apply_resolvent_power(e, 0.1, 1, g), 0.91728 * e, atol=1e-5)
    np.testing.assert_allclose(apply_resolvent_power(e, 0.1, 1, g), e / (1 + 0.1 * 0.9496413**2), atol=1e-7)
    np.testing.assert_array_equal(apply_resolvent_power(np.zeros(3), 3.0, 4, g), np.zeros(3))
    g = Grid(16)
    v = np.random.default_rng(9).standard_normal(15)
    once = apply_resolvent_power(v, 0.01, 1, g)
    np.testing.assert_allclose(apply_resolvent_power(v, 0.01, 2, g), apply_resolvent_power(once, 0.01, 1, g),
                               atol=1e-12)
    A = dense_A(16)
    np.testing.assert_allclose(once, np.linalg.solve(np.eye(15) + 0.01 * A @ A, v), rtol=1e-9, atol=1e-12)
    with pytest.raises(ValueError):
        apply_resolvent_power(v, 0.0, 1, g)
    with pytest.raises(ValueError):
        apply_resolvent_power(v, -1.0, 1, g)


def test_norm_examples():
    g = Grid(4)
    ones = np.ones(3)
    assert norm_lp(ones, 2, g) == pytest.approx(math.sqrt(3 * math.pi / 4), rel=1e-15)
    assert norm_lp(ones, 2, g) == pytest.approx(1.534990, abs=1e-6)
    assert norm_lp(ones, math.inf, g) == 1.0
    for p in (1, 2, 3.5, math.inf):
        assert norm_lp(np.zeros(3), p, g) == 0.0
    with pytest.raises(ValueError):
        norm_lp(ones, 0.5, g)


def test_sobolev_examples():
    g = Grid(4)
    v = np.array([0.2, -0.7, 1.1])
    assert norm_sobolev(v, 0.0, g) == pytest.approx(norm_lp(v, 2, g), rel=1e-14)
    e = eigen_pair(1, g)[1]
    assert norm_sobolev(e, 0.5, g) == pytest.approx(math.sqrt(math.pi / 4) * math.sqrt(0.9496413), abs=1e-7)
    assert norm_sobolev(e, 0.5, g) == pytest.approx(0.863624, abs=1e-6)
    g = Grid(16)
    v = np.random.default_rng(10).standard_normal(15)
    assert norm_sobolev(v, 0.5, g) == pytest.approx(h1_seminorm_differences(v, g), rel=1e-12)
    # <-A v, v> in the discrete inner product
    assert norm_sobolev(v, 0.5, g) ** 2 == pytest.approx(g.h * float(v @ -apply_An(v, g)), rel=1e-12)


def test_kappa_and_interpolation():
    g = Grid(4)
    assert kappa(0.0, g) == 0.0
    assert kappa(math.pi / 4, g) == pytest.approx(math.pi / 4)
    assert kappa(math.pi / 4 - 1e-3, g) == 0.0
    assert kappa(math.pi, g) == pytest.approx(math.pi)
    v = np.array([1.0, 2.0, -1.0])
    assert interpolate_linear(v, 0.0, g) == 0.0
    assert interpolate_linear(v, math.pi, g) == 0.0
    assert interpolate_linear(v, math.pi / 2, g) == pytest.approx(2.0)
    assert interpolate_linear(v, 3 * math.pi / 8, g) == pytest.approx(1.5)
    assert interpolate_linear(v, math.pi / 8, g) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        interpolate_linear(v, -0.1, g)
    with pytest.raises(ValueError):
        kappa(4.0, g)


vectors = st.integers(2, 40).flatmap(
    lambda n: st.tuples(st.just(n), arrays(np.float64, n - 1, elements=st.floats(-1e3, 1e3)))
)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_parseval_and_round_trip(nv):
    n, v = nv
    g = Grid(n)
    c = spectral_transform(v, g)
    scale = max(float(np.sum(v**2)), 1e-300)
    assert abs(np.sum(c**2) - np.sum(v**2)) <= 1e-12 * scale
    back = spectral_transform(c, g, "inverse")
    assert np.max(np.abs(back - v)) <= 1e-12 * max(np.max(np.abs(v)), 1e-300)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_stencil_equals_spectral_route(nv):
    n, v = nv
    g = Grid(n)
    stencil = apply_An(v, g)
    spectral = spectral_transform(g.lambdas * spectral_transform(v, g), g, "inverse")
    bound = 1e-12 * np.max(-g.lambdas) * max(np.max(np.abs(v)), 1e-300) * math.sqrt(n)
    assert np.max(np.abs(stencil - spectral)) <= bound


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_norm_ordering(nv):
    n, v = nv
    g = Grid(n)
    # ||v||_p <= pi^(1/p - 1/q) ||v||_q for p <= q on a domain of length pi
    l1, l2, linf = norm_lp(v, 1, g), norm_lp(v, 2, g), norm_lp(v, math.inf, g)
    assert l1 <= math.sqrt(math.pi) * l2 * (1 + 1e-12) + 1e-300
    assert l2 <= math.sqrt(math.pi) * linf * (1 + 1e-12) + 1e-300
