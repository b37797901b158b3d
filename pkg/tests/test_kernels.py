import math

import numpy as np
import pytest
from scipy import integrate, special

from chfdm.grid import Grid
from chfdm.kernels import (
    KernelSpec,
    graded_panels,
    kernel_error_space,
    kernel_error_time,
    kernel_regularity_probe,
    kernel_tail_bound,
    kernel_value,
    phi,
    phi_interp,
)

HALF = math.pi / 2


def semi_oracle(n, t, x_node, y):
    """Semi-discrete kernel with x on a node, summed mode by mode in plain Python."""
    h = math.pi / n
    ky = math.floor(y / h + 1e-12) * h
    total = 0.0
    for j in range(1, n):
        lam = -(n**2 / math.pi**2) * 4 * math.sin(j * math.pi / (2 * n)) ** 2
        total += math.exp(-lam * lam * t) * (2 / math.pi) * math.sin(j * x_node) * math.sin(j * ky)
    return total


def test_exact_kernel_series_value():
    oracle = (2 / math.pi) * sum(math.exp(-(j**4)) * math.sin(j * HALF) ** 2 for j in range(1, 51))
    assert kernel_value(KernelSpec.exact(50), 1.0, HALF, HALF) == pytest.approx(oracle, rel=1e-14)
    # leading term dominates
    assert oracle == pytest.approx(2 / math.pi / math.e, rel=1e-30 + 1e-12)


@pytest.mark.parametrize("n", [4, 8])
def test_semi_kernel_matches_mode_sum(n):
    x = 3 * math.pi / n
    for y in (0.1, 1.0, HALF, 2.9):
        assert kernel_value(KernelSpec.semi(n), 0.05, x, y) == pytest.approx(semi_oracle(n, 0.05, x, y), abs=1e-14)


def test_semi_kernel_symmetric_on_nodes():
    n = 8
    pts = Grid(n).points
    K = np.array([[kernel_value(KernelSpec.semi(n), 0.02, a, b) for b in pts] for a in pts])
    np.testing.assert_allclose(K, K.T, atol=1e-14)


def test_boundary_zeros():
    for spec in (KernelSpec.exact(20), KernelSpec.semi(8), KernelSpec.full(8, 0.01)):
        assert kernel_value(spec, 0.1, 0.0, 1.0) == pytest.approx(0.0, abs=1e-15)
        assert kernel_value(spec, 0.1, math.pi, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert kernel_value(KernelSpec.exact(20), 0.1, 1.0, 0.0) == 0.0


def test_spectral_gap_long_time():
    n, t = 4, 5.0
    lam1 = -(4**2 / math.pi**2) * 4 * math.sin(math.pi / 8) ** 2
    lead = math.exp(-(lam1**2) * t) * (2 / math.pi) * math.sin(HALF) * math.sin(HALF)
    val = kernel_value(KernelSpec.semi(n), t, HALF, HALF)
    assert val == pytest.approx(lead, rel=1e-15)
    assert val == pytest.approx(math.exp(-(0.9496413**2) * 5) * 2 / math.pi, rel=1e-6)


def test_full_kernel_approaches_semi():
    n, t = 4, 0.1
    for x, y in ((HALF, HALF), (math.pi / 4, 2.5)):
        semi = kernel_value(KernelSpec.semi(n), t, x, y)
        full = kernel_value(KernelSpec.full(n, 1e-5), t, x, y)
        assert abs(full - semi) <= 1e-3
        coarse = kernel_value(KernelSpec.full(n, 1e-3), t, x, y)
        assert abs(full - semi) < abs(coarse - semi)


def test_semi_kernel_converges_to_exact():
    t = 0.1
    # on a common node the gap shrinks like h^2
    exact = kernel_value(KernelSpec.exact(400), t, HALF, HALF)
    gaps = [abs(kernel_value(KernelSpec.semi(n), t, HALF, HALF) - exact) for n in (8, 16, 32, 64, 128)]
    assert all(3.5 < a / b < 5.0 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-5


def test_full_kernel_floor_in_time():
    spec = KernelSpec.full(4, 0.1)
    a = kernel_value(spec, 0.3, HALF, HALF)
    assert kernel_value(spec, 0.35, HALF, HALF) == a
    assert kernel_value(spec, 0.3 * (1 - 1e-14), HALF, HALF) == a  # node times snap
    oracle = 0.0
    for j in (1, 2, 3):
        lam = -(16 / math.pi**2) * 4 * math.sin(j * math.pi / 8) ** 2
        oracle += (1 + 0.1 * lam**2) ** -3 * (2 / math.pi) * math.sin(j * HALF) ** 2
    assert a == pytest.approx(oracle, rel=1e-12)


def test_kernel_value_validation():
    with pytest.raises(ValueError):
        kernel_value(KernelSpec.semi(4), 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        kernel_value(KernelSpec.full(4, 0.1), 0.05, 1.0, 1.0)
    with pytest.raises(ValueError):
        kernel_value(KernelSpec.semi(4), 0.1, 1.0, 4.0)
    with pytest.raises(ValueError):
        KernelSpec.exact(0)
    with pytest.raises(ValueError):
        KernelSpec.full(4, 0.0)
    with pytest.raises(ValueError):
        KernelSpec.semi(4, order=2)


def test_order_one_is_laplacian_of_kernel():
    # exact kernel: d^2/dx^2 of the series equals the order-1 kernel
    spec0, spec1 = KernelSpec.exact(30), KernelSpec.exact(30, order=1)
    x, y, t, d = 1.1, 0.7, 0.01, 1e-4
    fd = (kernel_value(spec0, t, x + d, y) - 2 * kernel_value(spec0, t, x, y) + kernel_value(spec0, t, x - d, y)) / d**2
    assert kernel_value(spec1, t, x, y) == pytest.approx(fd, rel=1e-5)


def test_phi_interp():
    g = Grid(4)
    np.testing.assert_allclose(phi_interp([1, 2], g.points, g), phi([1, 2], g.points), atol=1e-15)
    mid = 3 * math.pi / 8
    assert phi_interp(1, mid, g) == pytest.approx(0.5 * (phi(1, math.pi / 4) + phi(1, HALF)))
    assert phi_interp(3, math.pi, g) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("order", [0, 1])
def test_tail_bound_matches_incomplete_gamma(order):
    J, t = 10, 1e-3
    a = (2 * order + 1) / 4
    oracle = (2 / math.pi) * 0.25 * t ** (-a) * special.gamma(a) * special.gammaincc(a, J**4 * t)
    assert kernel_tail_bound(J, t, order) == pytest.approx(oracle, rel=1e-8)
    with pytest.raises(ValueError):
        kernel_tail_bound(J, 0.0)


def test_graded_panels():
    mid, w = graded_panels(0.0, 1.0, 1e-6, points=1)
    assert w.sum() == pytest.approx(1.0, rel=1e-14)
    assert w[0] == pytest.approx(1e-6)
    assert np.all(np.diff(mid) > 0)
    nodes, wg = graded_panels(0.0, 1.0, 1e-6)
    assert nodes.size == 2 * mid.size
    assert float(wg @ nodes**3) == pytest.approx(0.25, rel=1e-12)
    # the first panel [0, 1e-6] holds the singularity and carries the error
    assert float(wg @ nodes**-0.5) == pytest.approx(2.0, abs=1e-3)
    # integrable singularity at the left end
    assert float(w @ mid**-0.5) == pytest.approx(2.0, abs=2e-3)
    assert graded_panels(1.0, 1.0, 1e-3)[0].size == 0


def test_space_error_basics():
    assert kernel_error_space(4, 0.0, HALF) == 0.0
    e = [kernel_error_space(n, 0.1, HALF) for n in (4, 8, 16)]
    assert all(v > 0 for v in e)
    assert e[0] / e[1] > 2.5 and e[1] / e[2] > 2.5
    e1 = [kernel_error_space(n, 0.1, HALF, order=1) for n in (4, 8)]
    assert e1[0] > e1[1] > 0
    with pytest.raises(ValueError):
        kernel_error_space(4, -1.0, HALF)
    with pytest.raises(ValueError):
        kernel_error_space(4, 0.1, 4.0)


def single_mode_time_oracle(tau, order):
    """n = 2, x = pi/2, T = tau: one mode, kernel nonzero only on the cell [pi/2, pi)."""
    L = (8 / math.pi**2) ** 2
    a = 1 / (1 + tau * L)
    amp = 2 / math.pi  # phi_1(pi/2) phi_1(pi/2)
    h = math.pi / 2
    if order == 0:
        inner = a * a * tau - 2 * a * (1 - math.exp(-L * tau)) / L + (1 - math.exp(-2 * L * tau)) / (2 * L)
        return h * amp**2 * inner
    cross = math.log(1 + tau * L) / L
    f = lambda s: abs(a - math.exp(-L * s))  # noqa: E731
    val = integrate.quad(f, 0, cross)[0] + integrate.quad(f, cross, tau)[0]
    return h * amp * math.sqrt(L) * val


@pytest.mark.parametrize("order", [0, 1])
@pytest.mark.parametrize("tau", [0.1, 0.5])
def test_time_error_single_mode(order, tau):
    got = kernel_error_time(2, tau, tau, HALF, order)
    # order 1 integrates |.|, whose kink inside a panel limits the Gauss rule
    rel = 1e-7 if order == 0 else 1e-4
    assert got == pytest.approx(single_mode_time_oracle(tau, order), rel=rel)


def test_time_error_decreases_and_validates():
    e = [kernel_error_time(8, tau, 0.1, HALF) for tau in (0.01, 0.005, 0.0025)]
    assert e[0] > e[1] > e[2] > 0
    with pytest.raises(ValueError):
        kernel_error_time(8, 0.03, 0.1, HALF)
    with pytest.raises(ValueError):
        kernel_error_time(8, 0.0, 0.1, HALF)


def test_regularity_probe_examples():
    p = kernel_regularity_probe(16, 0.1, 1.0, 1.0, 0.05, 0.1)
    assert p.spatial == 0.0
    assert p.mixed == pytest.approx(p.temporal - p.tail, rel=1e-14)
    q = kernel_regularity_probe(16, 0.1, 1.0, 1.2, 0.1, 0.1)
    assert q.tail == 0.0 and q.temporal == 0.0
    assert q.mixed == pytest.approx(q.spatial, rel=1e-14) and q.spatial > 0
    assert q.total == q.mixed
    with pytest.raises(ValueError):
        kernel_regularity_probe(16, 0.1, 1.0, 1.0, 0.1, 0.05)
    with pytest.raises(ValueError):
        kernel_regularity_probe(16, 0.1, 1.0, 1.0, 0.0, 0.0)


def test_regularity_probe_scales_with_distance():
    base = HALF
    vals = [kernel_regularity_probe(64, 0.1, base, base + d, 0.1, 0.1).spatial for d in (0.2, 0.1, 0.05)]
    # order-0 spatial increment behaves like d^alpha with alpha well above 1
    assert vals[0] / vals[1] > 2.5 and vals[1] / vals[2] > 2.5
    lags = [kernel_regularity_probe(64, 0.1, base, base, 0.1 - d, 0.1).temporal for d in (0.01, 0.005)]
    assert lags[0] > lags[1] > 0
