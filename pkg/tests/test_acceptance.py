"""End-to-end acceptance checks at the stated sizes and tolerances.

Each test records one pass/fail line, printed in the terminal summary.
"""

import math
import time

import pytest

from chfdm._parallel import default_workers
from chfdm.convergence import StudyPlan, fit_rate, moment_sweep, run_study
from chfdm.density import density_study, localization_fidelity
from chfdm.dynamics import DriftSpec, SchemeConfig, SolverStats
from chfdm.kernels import kernel_error_space, kernel_error_time
from chfdm.properties import drift_suite, embedding_suite, smoothing_suite, spectral_suite

HALF = math.pi / 2
WORKERS = default_workers()
# solver statistics of every run in criteria 6-10, for criterion 11
SOLVER_RUNS = {}


def record(log, k, ok, detail):
    log[k] = (bool(ok), detail)
    assert ok, f"criterion {k}: {detail}"


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def suite_check(log, k, suite, limit):
    results, elapsed = timed(suite)
    bad = [f"{r.tag}({r.violations}/{r.probes})" for r in results if not r.passed]
    probes = sum(r.probes for r in results)
    ok = not bad and elapsed < limit
    detail = f"{len(results)} checks, {probes} probes, violations: {', '.join(bad) or 'none'}; {elapsed:.2f}s (< {limit}s)"
    record(log, k, ok, detail)
    return results


def test_criterion_01_spectral(acceptance_log):
    results = suite_check(acceptance_log, 1, spectral_suite, 1.0)
    assert {"eigen-relation", "orthonormality", "parseval", "h1-identity"} <= {r.tag for r in results}


def test_criterion_02_embeddings(acceptance_log):
    results = suite_check(acceptance_log, 2, embedding_suite, 10.0)
    assert all(r.probes >= 3 * 10_000 for r in results)


def test_criterion_03_smoothing(acceptance_log):
    results = suite_check(acceptance_log, 3, smoothing_suite, 5.0)
    assert all(r.probes >= 1000 for r in results)


def test_criterion_04_drift(acceptance_log):
    results = suite_check(acceptance_log, 4, drift_suite, 5.0)
    assert all(r.probes >= 100_000 for r in results)


def test_criterion_05_kernel_rates(acceptance_log):
    T = 0.1
    ns = [4, 8, 16, 32]
    taus = [T / k for k in (8, 16, 32, 64)]
    slopes = {}
    for order in (0, 1):
        err = [kernel_error_space(n, T, HALF, order) for n in ns]
        slopes[f"space{order}"] = fit_rate(list(zip(ns, err)))[0]
        err = [kernel_error_time(16, tau, T, HALF, order) for tau in taus]
        slopes[f"time{order}"] = fit_rate(list(zip(taus, err)))[0]
    bands = {"space0": (-2.4, -1.6), "space1": (-1.4, -0.6), "time0": (0.55, 0.95), "time1": (0.25, 0.50)}
    ok = all(lo <= slopes[k] <= hi for k, (lo, hi) in bands.items())
    detail = ", ".join(f"{k} slope {slopes[k]:.3f} in [{lo}, {hi}]" for k, (lo, hi) in bands.items())
    record(acceptance_log, 5, ok, detail)


def spatial_plan(seed=7):
    return StudyPlan(SchemeConfig(n=16, m=1000, T=0.1), "spatial", (4, 8, 16), 32, M=100, zeta=1.0, seed=seed)


@pytest.fixture(scope="module")
def spatial_report():
    rep = run_study(spatial_plan(), WORKERS)
    SOLVER_RUNS["6 spatial"] = (rep.solver, rep.failed_paths)
    return rep


def test_criterion_06_spatial_rate(acceptance_log, spatial_report):
    rep = spatial_report
    slope = rep.slope  # fitted against h = pi/n, so this is the order in n^-1
    ok = 0.6 <= slope <= 1.4 and rep.r_squared >= 0.9
    errs = ", ".join(f"{e:.4g}" for e in rep.errors)
    detail = f"errors [{errs}], order {slope:.3f} in [0.6, 1.4], r2 {rep.r_squared:.4f} >= 0.9"
    record(acceptance_log, 6, ok, detail)


def test_criterion_07_temporal_rate(acceptance_log):
    plan = StudyPlan(SchemeConfig(n=16, m=1000, T=0.1), "temporal", (8, 16, 32, 64), 512, M=200, zeta=1.0, seed=7)
    rep = run_study(plan, WORKERS)
    SOLVER_RUNS["7 temporal"] = (rep.solver, rep.failed_paths)
    errs = ", ".join(f"{e:.4g}" for e in rep.errors)
    ok = 0.25 <= rep.slope <= 0.65
    record(acceptance_log, 7, ok, f"errors [{errs}], slope {rep.slope:.3f} in [0.25, 0.65], r2 {rep.r_squared:.4f}")


def test_criterion_08_moments(acceptance_log):
    cfgs = [SchemeConfig(n=n, m=1000, T=0.1) for n in (8, 16, 32, 64)]
    rows = moment_sweep(cfgs, 2, M=200, seed=3, workers=WORKERS)
    for r in rows:
        SOLVER_RUNS[f"8 moments n={r.n}"] = (r.solver, r.failed_paths)
    vals = [r.final_moment for r in rows]
    ratio = max(vals) / min(vals)
    detail = "E||U^m||_{1/2}^2 = " + ", ".join(f"{v:.4f}" for v in vals) + f"; max/min {ratio:.3f} < 2"
    record(acceptance_log, 8, ratio < 2, detail)


def test_criterion_09_density(acceptance_log):
    cfg = SchemeConfig(m=100, T=0.1)
    passes, lines = 0, []
    for seed in (5, 6, 7):
        study = density_study(cfg, [8, 16, 32, 64], M=4000, seed=seed, probe_x=HALF, workers=WORKERS)
        SOLVER_RUNS[f"9 density seed {seed}"] = (study.solver, 0)
        d = study.distances
        ok = all(a > b for a, b in zip(d, d[1:])) and d[-1] <= 0.15
        passes += ok
        lines.append(f"seed {seed}: [{', '.join(f'{v:.4f}' for v in d)}] {'ok' if ok else 'no'}")
        if passes == 2 or (passes == 0 and seed == 6):
            break
    record(acceptance_log, 9, passes >= 2, "; ".join(lines) + f" (majority: {passes} pass)")


def test_criterion_10_localization(acceptance_log):
    rep = localization_fidelity(SchemeConfig(drift=DriftSpec.cubic()), 2.0, M=500, seed=11, workers=WORKERS)
    SOLVER_RUNS["10 localization"] = (rep.solver, rep.failed_paths)
    ok = rep.max_pathwise_gap <= 1e-8 and rep.omega_R_fraction > 0
    detail = f"Omega_R fraction {rep.omega_R_fraction:.3f}, max gap {rep.max_pathwise_gap:.3g} <= 1e-8"
    record(acceptance_log, 10, ok, detail)


def test_criterion_11_solver_contract(acceptance_log):
    expected = ["6 spatial", "7 temporal", "10 localization"]
    missing = [k for k in expected if k not in SOLVER_RUNS]
    if not any(k.startswith("8 ") for k in SOLVER_RUNS):
        missing.append("8 moments")
    if not any(k.startswith("9 ") for k in SOLVER_RUNS):
        missing.append("9 density")
    total = SolverStats()
    failed_paths = 0
    for stats, failed in SOLVER_RUNS.values():
        total.merge(stats)
        failed_paths += failed
    ok = not missing and total.max_residual <= 1e-10 and total.failures == 0 and failed_paths == 0
    detail = (f"{total.solves} solves, max residual {total.max_residual:.6g} <= 1e-10, "
              f"{total.failures} nonconvergence events, max {total.max_iterations} iterations"
              + (f"; missing runs: {missing}" if missing else ""))
    record(acceptance_log, 11, ok, detail)


def test_criterion_12_determinism(acceptance_log, spatial_report):
    again = run_study(spatial_plan(), WORKERS)
    same = [a.hex() == b.hex() for a, b in zip(spatial_report.errors, again.errors)]
    ok = all(same) and len(same) == 3
    record(acceptance_log, 12, ok, f"{sum(same)}/{len(same)} per-level errors bit-identical on rerun")
