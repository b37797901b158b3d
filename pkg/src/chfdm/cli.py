"""Command-line runner: one YAML file describes an experiment, one directory receives its results.

Usage::

    chfdm --config run.yaml [--seed 7] [--workers 4] [--out runs/]

Results land in ``<out>/<command>-seed<seed>/``: ``manifest.json`` (resolved
configuration, seed, library versions, timestamp), the command's CSV/JSON
tables, and ``summary.txt``.  Exit status is 0 on success, 1 when a property
suite reports violations, 2 for configuration errors and 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import platform
import re
import sys
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from ._parallel import default_workers
from .convergence import StudyPlan, fit_rate, moment_sweep, run_study
from .density import density_study, localization_fidelity
from .dynamics import (
    DiffusionSpec,
    DriftSpec,
    NewtonConvergenceError,
    SchemeConfig,
    simulate,
    sine_initial,
    zero_initial,
)
from .grid import h1_seminorm_differences, interpolate_linear, norm_lp
from .kernels import kernel_error_space, kernel_error_time
from .noise import sample_sheet, save_sheet_csv
from .properties import run_all

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

COMMANDS = (
    "simulate",
    "spatial-rate",
    "temporal-rate",
    "density",
    "kernel-check",
    "properties",
    "moments",
    "localization",
)
INITIAL_VALUES = {"sin": sine_initial, "zero": zero_initial}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""


# ---------------------------------------------------------------------------
# field parsing


def _position(value, field):
    """A number or an expression like ``pi/2``, ``3*pi/4``, ``0.5 pi``."""
    if isinstance(value, bool):
        raise ConfigError(f"{field}: expected a position in [0, pi], got {value!r}")
    if isinstance(value, (int, float)):
        x = float(value)
    else:
        m = re.fullmatch(r"\s*([0-9.]*)\s*\*?\s*pi\s*(?:/\s*([0-9.]+))?\s*", str(value))
        if not m:
            raise ConfigError(f"{field}: cannot read {value!r} as a position (use a number or e.g. 'pi/2')")
        num = float(m.group(1)) if m.group(1) else 1.0
        den = float(m.group(2)) if m.group(2) else 1.0
        x = num * math.pi / den
    if not 0 <= x <= math.pi:
        raise ConfigError(f"{field}: position {x} outside [0, pi]")
    return x


def _number(d, key, field, default, *, kind=float, lo=None, lo_open=False, hi=None):
    value = d.get(key, default)
    name = f"{field}.{key}"
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        # YAML reads 1e-10 without a dot as a string
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected a number, got {value!r}") from None
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if lo is not None and (value <= lo if lo_open else value < lo):
        raise ConfigError(f"{name}: must be {'>' if lo_open else '>='} {lo}, got {value!r}")
    if hi is not None and value > hi:
        raise ConfigError(f"{name}: must be <= {hi}, got {value!r}")
    return value


def _int_list(d, key, field, default, lo=1):
    value = d.get(key, default)
    name = f"{field}.{key}"
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{name}: expected a non-empty list of integers, got {value!r}")
    return [_number({key: v}, key, field, None, kind=int, lo=lo) for v in value]


def _reject_unknown(d, allowed, field):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{field}: unknown key(s) {', '.join(map(str, extra))}")


def _mapping(value, field):
    if value is None:
        return {}
    if isinstance(value, str):
        return {"kind": value}
    if not isinstance(value, dict):
        raise ConfigError(f"{field}: expected a mapping, got {value!r}")
    return dict(value)


def parse_scheme(raw) -> tuple[SchemeConfig, dict]:
    d = _mapping(raw, "scheme")
    _reject_unknown(d, {"n", "m", "T", "u0", "drift", "diffusion", "newton_tol", "max_iters"}, "scheme")
    n = _number(d, "n", "scheme", 16, kind=int, lo=2)
    m = _number(d, "m", "scheme", 1000, kind=int, lo=1)
    T = _number(d, "T", "scheme", 0.1, lo=0, lo_open=True)
    tol = _number(d, "newton_tol", "scheme", 1e-10, lo=0, lo_open=True)
    iters = _number(d, "max_iters", "scheme", 50, kind=int, lo=1)
    u0 = d.get("u0", "sin")
    if u0 not in INITIAL_VALUES:
        raise ConfigError(f"scheme.u0: must be one of {sorted(INITIAL_VALUES)}, got {u0!r}")

    drift_d = _mapping(d.get("drift", "cubic"), "scheme.drift")
    _reject_unknown(drift_d, {"kind", "R"}, "scheme.drift")
    kind = drift_d.get("kind", "cubic")
    if kind == "cubic":
        drift = DriftSpec.cubic()
    elif kind == "localized":
        drift = DriftSpec.localized(_number(drift_d, "R", "scheme.drift", None, lo=1))
    elif kind == "zero":
        drift = DriftSpec.zero()
    else:
        raise ConfigError(f"scheme.drift.kind: must be cubic, localized or zero, got {kind!r}")

    diff_d = _mapping(d.get("diffusion", "default"), "scheme.diffusion")
    _reject_unknown(diff_d, {"kind", "value"}, "scheme.diffusion")
    kind = diff_d.get("kind", "default")
    if kind == "default":
        diffusion = DiffusionSpec.default()
    elif kind == "constant":
        diffusion = DiffusionSpec.constant(_number(diff_d, "value", "scheme.diffusion", None))
    else:
        raise ConfigError(f"scheme.diffusion.kind: must be default or constant, got {kind!r}")

    try:
        cfg = SchemeConfig(n, m, T, drift, diffusion, INITIAL_VALUES[u0], tol, iters)
    except ValueError as exc:
        raise ConfigError(f"scheme: {exc}") from None
    resolved = {
        "n": n, "m": m, "T": T, "u0": u0, "newton_tol": tol, "max_iters": iters,
        "drift": {"kind": drift_d.get("kind", "cubic"), **({"R": drift.R} if drift.R else {})},
        "diffusion": {"kind": diff_d.get("kind", "default"),
                      **({"value": float(diff_d["value"])} if "value" in diff_d else {})},
    }
    return cfg, resolved


# per-command study keys and their defaults
STUDY_DEFAULTS = {
    "simulate": {"path": 0, "probe": "pi/2", "save_noise": False},
    "spatial-rate": {"levels": [4, 8, 16], "reference_level": 32, "M": 100, "zeta": 1.0,
                     "probe_points": ["pi/2"], "check_resolution": True},
    "temporal-rate": {"levels": [8, 16, 32, 64], "reference_level": 512, "M": 200, "zeta": 1.0,
                      "probe_points": ["pi/2"]},
    "density": {"levels": [8, 16, 32, 64], "M": 4000, "probe": "pi/2", "coupled": True},
    "kernel-check": {"space_n": [4, 8, 16, 32], "time_n": 16, "time_m": [8, 16, 32, 64], "x": "pi/2"},
    "properties": {},
    "moments": {"levels": [8, 16, 32, 64], "M": 200, "p": 2},
    "localization": {"R": 2.0, "M": 500},
}


@dataclass
class ExperimentConfig:
    command: str
    scheme: SchemeConfig
    study: dict
    output: str
    seed: int
    resolved: dict

    @property
    def run_dir(self) -> Path:
        return Path(self.output) / f"{self.command}-seed{self.seed}"


def _bool(d, key, field):
    v = d[key]
    if not isinstance(v, bool):
        raise ConfigError(f"{field}.{key}: expected true or false, got {v!r}")
    return v


def parse_study(command: str, raw, cfg: SchemeConfig, seed: int):
    d = {**STUDY_DEFAULTS[command], **_mapping(raw, "study")}
    _reject_unknown(d, STUDY_DEFAULTS[command], "study")
    f = "study"
    out = {}
    if command == "simulate":
        out["path"] = _number(d, "path", f, 0, kind=int, lo=0)
        out["probe"] = _position(d["probe"], f"{f}.probe")
        out["save_noise"] = _bool(d, "save_noise", f)
    elif command in ("spatial-rate", "temporal-rate"):
        out["levels"] = _int_list(d, "levels", f, None)
        out["reference_level"] = _number(d, "reference_level", f, None, kind=int, lo=1)
        out["M"] = _number(d, "M", f, None, kind=int, lo=1)
        out["zeta"] = _number(d, "zeta", f, 1.0, lo=1, hi=2)
        out["probe_points"] = [_position(x, f"{f}.probe_points") for x in d["probe_points"]]
        if command == "spatial-rate":
            out["check_resolution"] = _bool(d, "check_resolution", f)
        try:
            StudyPlan(cfg, command.split("-")[0], tuple(out["levels"]), out["reference_level"], out["M"],
                      out["zeta"], seed, tuple(out["probe_points"]), out.get("check_resolution", True))
        except ValueError as exc:
            raise ConfigError(f"study: {exc}") from None
    elif command == "density":
        out["levels"] = _int_list(d, "levels", f, None, lo=2)
        if len(out["levels"]) < 2:
            raise ConfigError("study.levels: need at least two levels")
        out["M"] = _number(d, "M", f, None, kind=int, lo=1000)
        out["probe"] = _position(d["probe"], f"{f}.probe")
        out["coupled"] = _bool(d, "coupled", f)
        _check_node(out["probe"], out["levels"], "study.probe")
        if out["coupled"]:
            _check_pow2_ladder(out["levels"], "study.levels")
    elif command == "kernel-check":
        out["space_n"] = _int_list(d, "space_n", f, None, lo=2)
        out["time_n"] = _number(d, "time_n", f, None, kind=int, lo=2)
        out["time_m"] = _int_list(d, "time_m", f, None, lo=1)
        out["x"] = _position(d["x"], f"{f}.x")
    elif command == "moments":
        out["levels"] = _int_list(d, "levels", f, None, lo=2)
        out["M"] = _number(d, "M", f, None, kind=int, lo=1)
        out["p"] = _number(d, "p", f, None, kind=int)
        if out["p"] not in (2, 4):
            raise ConfigError(f"study.p: must be 2 or 4, got {out['p']}")
    elif command == "localization":
        out["R"] = _number(d, "R", f, None, lo=1)
        out["M"] = _number(d, "M", f, None, kind=int, lo=1)
    return out


def _check_node(x, ns, field):
    for n in ns:
        r = x * n / math.pi
        if abs(r - round(r)) > 1e-9 or not 1 <= round(r) <= n - 1:
            raise ConfigError(f"{field}: {x} is not an interior node of the n={n} grid")


def _check_pow2_ladder(ns, field):
    for a, b in zip(ns, ns[1:]):
        if b <= a or b % a or (b // a) & (b // a - 1):
            raise ConfigError(f"{field}: coupled levels must increase by powers of two, got {ns}")


def load_config(path, seed_override=None, out_override=None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: not valid YAML: {exc}") from None
    raw = _mapping(raw, "config")
    _reject_unknown(raw, {"command", "scheme", "study", "output", "seed"}, "config")
    command = raw.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"command: must be one of {', '.join(COMMANDS)}, got {command!r}")
    seed = seed_override if seed_override is not None else raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed: expected an integer in [0, 2^64), got {seed!r}")
    output = out_override if out_override is not None else raw.get("output", "runs")
    if not isinstance(output, str) or not output:
        raise ConfigError(f"output: expected a directory path, got {output!r}")
    cfg, scheme = parse_scheme(raw.get("scheme"))
    study = parse_study(command, raw.get("study"), cfg, seed)
    resolved = {"command": command, "seed": seed, "output": output, "scheme": scheme, "study": study}
    return ExperimentConfig(command, cfg, study, output, seed, resolved)


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dict__"):
        return vars(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _versions():
    out = {"chfdm": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba", "pyyaml"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _fit_line(xs, ys):
    try:
        slope, _, r2 = fit_rate(np.column_stack([xs, ys]))
    except ValueError:
        return math.nan, math.nan
    return slope, r2


# ---------------------------------------------------------------------------
# commands; each returns (summary lines, exit status)


def cmd_simulate(exp: ExperimentConfig, run_dir: Path, workers: int):
    cfg, st = exp.scheme, exp.study
    sheet = sample_sheet(exp.seed, cfg.n, cfg.m, cfg.T, path=st["path"])
    if st["save_noise"]:
        save_sheet_csv(sheet, run_dir / "noise.csv")
    traj = simulate(cfg, sheet)
    grid = cfg.grid
    U = traj.snapshots

    probe = interpolate_linear(U, st["probe"], grid)
    iters = np.concatenate([[0], traj.newton_iterations])
    resid = np.concatenate([[0.0], traj.residuals])
    write_csv(
        run_dir / "trajectory.csv",
        ["step", "time", "probe_value", "sup_norm", "l2_norm", "h1_norm", "newton_iterations", "residual"],
        zip(range(cfg.m + 1), traj.times, probe, norm_lp(U, math.inf, grid), norm_lp(U, 2, grid),
            h1_seminorm_differences(U, grid), iters, resid),
    )
    write_csv(run_dir / "final_state.csv", ["x", "u"],
              zip(np.r_[0.0, grid.points, math.pi], np.r_[0.0, traj.final(), 0.0]))
    return [
        f"simulated one path (index {st['path']}) with n={cfg.n}, m={cfg.m}, T={cfg.T}",
        f"u(T, {st['probe']:.6g}) = {probe[-1]:.10g}",
        f"max Newton iterations {int(traj.newton_iterations.max())}, max residual {float(traj.residuals.max()):.3g}",
    ], EXIT_OK


def cmd_rate(exp: ExperimentConfig, run_dir: Path, workers: int):
    st = exp.study
    axis = exp.command.split("-")[0]
    plan = StudyPlan(exp.scheme, axis, tuple(st["levels"]), st["reference_level"], st["M"], st["zeta"], exp.seed,
                     tuple(st["probe_points"]), st.get("check_resolution", True))
    report = run_study(plan, workers=workers)
    report.to_csv(run_dir / "rates.csv")
    report.to_json(run_dir / "report.json")
    lines = [f"{axis} study, levels {st['levels']} against reference {st['reference_level']}, "
             f"{report.paths_used} paths, zeta={plan.zeta}" + (" (diagnostic)" if report.diagnostic else "")]
    for level, scale, err, se in report.rows():
        lines.append(f"  level {level:5d}  scale {scale:.6g}  error {err:.6g} +- {se:.2g}")
    lines.append(f"slope {report.slope:.4f} (95% bootstrap {report.slope_interval[0]:.4f} .. "
                 f"{report.slope_interval[1]:.4f}), r^2 {report.r_squared:.4f}")
    lines.append(f"Newton: {report.solver.solves} solves, max residual {report.solver.max_residual:.3g}, "
                 f"{report.solver.failures} failures")
    return lines, EXIT_OK


def cmd_density(exp: ExperimentConfig, run_dir: Path, workers: int):
    st = exp.study
    study = density_study(exp.scheme, st["levels"], st["M"], exp.seed, st["probe"], workers=workers,
                          coupled=st["coupled"])
    study.to_csv(run_dir / "distances.csv")
    for n, est in zip(study.levels, study.estimates):
        est.to_csv(run_dir / f"density_n{n}.csv")
    write_json(run_dir / "study.json", {"levels": study.levels, "distances": study.distances,
                                        "bandwidths": [e.bandwidth for e in study.estimates],
                                        "M": study.M, "probe": study.probe_x, "coupled": st["coupled"]})
    lines = [f"density of u(T, {st['probe']:.6g}) with {st['M']} samples per level"]
    for n, dist in zip(study.levels, study.distances):
        lines.append(f"  n={n:4d}  L1 distance to n={study.levels[-1]}: {dist:.5f}")
    return lines, EXIT_OK


def cmd_kernel(exp: ExperimentConfig, run_dir: Path, workers: int):
    st, T = exp.study, exp.scheme.T
    space, time_rows, lines = [], [], []
    for order in (0, 1):
        errs = [kernel_error_space(n, T, st["x"], order) for n in st["space_n"]]
        space += [(n, order, e) for n, e in zip(st["space_n"], errs)]
        slope, r2 = _fit_line(st["space_n"], errs)
        lines.append(f"space error order {order}: slope in n {slope:.4f} (r^2 {r2:.4f})")
    for order in (0, 1):
        taus = [T / m for m in st["time_m"]]
        errs = [kernel_error_time(st["time_n"], tau, T, st["x"], order) for tau in taus]
        time_rows += [(m, tau, order, e) for m, tau, e in zip(st["time_m"], taus, errs)]
        slope, r2 = _fit_line(taus, errs)
        lines.append(f"time error order {order} (n={st['time_n']}): slope in tau {slope:.4f} (r^2 {r2:.4f})")
    write_csv(run_dir / "kernel_space.csv", ["n", "order", "error"], space)
    write_csv(run_dir / "kernel_time.csv", ["m", "tau", "order", "error"], time_rows)
    return lines, EXIT_OK


def cmd_properties(exp: ExperimentConfig, run_dir: Path, workers: int):
    results = run_all()
    write_csv(run_dir / "properties.csv", ["tag", "probes", "violations", "worst_ratio", "passed"],
              [(r.tag, r.probes, r.violations, r.worst_ratio, r.passed) for r in results])
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.tag:24s} {r.violations}/{r.probes} violations  ({r.description})"
             for r in results]
    for line in lines:
        print(line)
    return lines, EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY


def cmd_moments(exp: ExperimentConfig, run_dir: Path, workers: int):
    st = exp.study
    cfgs = [exp.scheme.with_(n=n) for n in st["levels"]]
    rows = moment_sweep(cfgs, st["p"], st["M"], exp.seed, workers=workers)
    write_csv(run_dir / "moments.csv",
              ["n", "m", "p", "max_moment", "max_time", "max_lo", "max_hi", "final_moment", "final_lo", "final_hi"],
              [(r.n, r.m, r.p, r.max_moment, r.max_time, *r.max_interval, r.final_moment, *r.final_interval)
               for r in rows])
    finals = [r.final_moment for r in rows]
    lines = [f"E ||(-A_n)^(1/2) U||^{st['p']} with {st['M']} paths"]
    lines += [f"  n={r.n:4d}  max over time {r.max_moment:.5g} at t={r.max_time:.4g}  final {r.final_moment:.5g}"
              for r in rows]
    lines.append(f"spread of final values across n: factor {max(finals) / min(finals):.4f}")
    return lines, EXIT_OK


def cmd_localization(exp: ExperimentConfig, run_dir: Path, workers: int):
    st = exp.study
    rep = localization_fidelity(exp.scheme, st["R"], st["M"], exp.seed, workers=workers)
    write_json(run_dir / "localization.json", vars(rep))
    return [f"R={rep.R}: {rep.omega_R_fraction:.4f} of {rep.paths} paths stay in [-R, R]; "
            f"max gap to the cut-off run on those paths {rep.max_pathwise_gap:.3g}"], EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "spatial-rate": cmd_rate,
    "temporal-rate": cmd_rate,
    "density": cmd_density,
    "kernel-check": cmd_kernel,
    "properties": cmd_properties,
    "moments": cmd_moments,
    "localization": cmd_localization,
}


def run(config_path, seed=None, workers=None, out=None) -> int:
    try:
        exp = load_config(config_path, seed, out)
        if workers is not None and workers < 1:
            raise ConfigError(f"--workers: must be >= 1, got {workers}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    workers = default_workers() if workers is None else workers
    run_dir = exp.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "manifest.json", {
        "config": exp.resolved,
        "seed": exp.seed,
        "workers": workers,
        "versions": _versions(),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    })
    try:
        lines, status = HANDLERS[exp.command](exp, run_dir, workers)
    except NewtonConvergenceError as exc:
        where = ", ".join(f"{k}={v}" for k, v in (("path", exc.path), ("step", exc.step)) if v is not None)
        msg = f"numerical failure: {exc}" + (f" ({where})" if where else "")
        print(msg, file=sys.stderr)
        (run_dir / "summary.txt").write_text(msg + "\n")
        return EXIT_NUMERIC
    (run_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    if exp.command != "properties":
        print("\n".join(lines))
    print(f"results in {run_dir}")
    return status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="chfdm", description=__doc__.split("\n")[0])
    ap.add_argument("--config", required=True, help="YAML experiment file")
    ap.add_argument("--seed", type=int, help="override the seed in the file")
    ap.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    ap.add_argument("--out", help="override the output directory")
    args = ap.parse_args(argv)
    return run(args.config, args.seed, args.workers, args.out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
