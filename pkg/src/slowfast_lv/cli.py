"""Command-line entry point.

Subcommands: geometry, particle, sde, boundaries, stationary, verify.
Every run echoes its fully resolved configuration into the output header;
identical canonical configurations produce byte-identical files (the one
timestamp line is suppressed with --deterministic).  Config files hold
key=value lines (keys are the long flag names); command-line flags override
file values.  Exit codes: 0 ok, 2 flag/config validation, 3 numeric
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import analysis, fast_dynamics, particle, sde
from .core import CountState, ModelParams, SimplexPoint, Z_MAX

_EXIT_CONFIG = 2
_EXIT_NUMERIC = 3
_EXIT_IO = 4

_DEFAULTS = {
    "geometry": {"z_grid": 64, "grid": "theta", "out": "-", "format": "csv",
                 "deterministic": False},
    "particle": {"n": 200, "a": 1.0, "t_final": 1.0, "runs": 1, "seed": 0,
                 "obs_times": "", "obs_count": 50, "init": "center", "out": "-",
                 "format": "csv", "threads": 0, "deterministic": False},
    "sde": {"a": 1.0, "z0": 1.0 / 54.0, "t_final": 1.0, "dt": 1e-4,
            "paths": 100, "seed": 0, "obs_times": "", "obs_count": 10,
            "out": "-", "format": "csv", "threads": 0, "deterministic": False},
    "boundaries": {"a": 0.5, "r": 1.0 / 54.0, "eps_ladder": "1e-3,1e-5,1e-7",
                   "out": "-", "format": "json", "deterministic": False},
    "stationary": {"a": 2.0, "z_grid": 200, "out": "-", "format": "csv",
                   "deterministic": False},
    "verify": {"check": None, "n": 0, "a": -1.0, "seed": 0, "runs": 0,
               "paths": 0, "z0": 0.0, "t_final": 0.0, "dt": 1e-4, "threads": 0,
               "out": "-", "format": "json", "deterministic": False},
}

_VERIFY_CHECKS = ("prop21", "prop22", "thm31", "prop27", "feller",
                  "stationarity-exact")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved subcommand options; equal canonical forms give equal outputs.

    The output path is I/O plumbing, not an experiment parameter, so it is
    excluded from the canonical form.
    """

    subcommand: str
    options: dict

    def canonical(self) -> str:
        payload = {k: v for k, v in self.options.items() if k != "out"}
        return json.dumps({"subcommand": self.subcommand, **payload},
                          sort_keys=True, separators=(",", ":"))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slowfast-lv",
        description="Cyclic three-species particle system, its fast flow, "
                    "and the averaged slow diffusion.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value config file; flags override it")
        p.add_argument("--out", help="output path ('-' for stdout; default stdout)")
        p.add_argument("--format", choices=("csv", "json"), help="output format")
        p.add_argument("--deterministic", action="store_true", default=None,
                       help="suppress the timestamp header line")

    p = sub.add_parser("geometry", help="per-level loop geometry table")
    p.add_argument("--z-grid", type=int, help="number of levels (default 64)")
    p.add_argument("--grid", choices=("theta", "linear"),
                   help="level spacing: uniform in the root angle or in z")
    add_common(p)

    p = sub.add_parser("particle", help="stochastic particle trajectories")
    p.add_argument("--n", type=int, help="population size")
    p.add_argument("--a", type=float, help="intrinsic rate")
    p.add_argument("--t-final", type=float, help="time horizon")
    p.add_argument("--runs", type=int, help="independent runs")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--obs-times", help="comma-separated observation times")
    p.add_argument("--obs-count", type=int,
                   help="observation grid size when --obs-times is not given")
    p.add_argument("--init", help="'center' or explicit counts n1,n2,n3")
    p.add_argument("--threads", type=int, help="worker threads (0 = machine)")
    add_common(p)

    p = sub.add_parser("sde", help="averaged-diffusion ensembles")
    p.add_argument("--a", type=float, help="intrinsic rate")
    p.add_argument("--z0", type=float, help="initial level in (0, 1/27)")
    p.add_argument("--t-final", type=float, help="time horizon")
    p.add_argument("--dt", type=float, help="Euler-Maruyama step")
    p.add_argument("--paths", type=int, help="independent paths")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--obs-times", help="comma-separated observation times")
    p.add_argument("--obs-count", type=int,
                   help="observation grid size when --obs-times is not given")
    p.add_argument("--threads", type=int, help="worker threads (0 = machine)")
    add_common(p)

    p = sub.add_parser("boundaries", help="boundary types and Feller integral ladders")
    p.add_argument("--a", type=float, help="intrinsic rate")
    p.add_argument("--r", type=float, help="interior reference level")
    p.add_argument("--eps-ladder", help="comma-separated truncation distances")
    add_common(p)

    p = sub.add_parser("stationary", help="stationary density of the diffusion")
    p.add_argument("--a", type=float, help="intrinsic rate (> 0)")
    p.add_argument("--z-grid", type=int, help="number of interior levels")
    add_common(p)

    p = sub.add_parser("verify", help="named numerical verification checks")
    p.add_argument("check", choices=_VERIFY_CHECKS)
    p.add_argument("--n", type=int, help="population size")
    p.add_argument("--a", type=float, help="intrinsic rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--z0", type=float)
    p.add_argument("--t-final", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--threads", type=int)
    add_common(p)
    return parser


class ConfigError(ValueError):
    pass


def config_from_file(path: str, valid_keys) -> dict:
    """Parse key=value lines; unknown keys are rejected by name."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            key = key.strip().replace("-", "_")
            val = val.strip()
            if key not in valid_keys:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, val, path, lineno)
    return values


def _coerce(key, val, path, lineno):
    target = None
    for defaults in _DEFAULTS.values():
        if key in defaults:
            target = type(defaults[key])
            break
    if target is bool:
        if val.lower() in ("1", "true", "yes"):
            return True
        if val.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{path}:{lineno}: {key} expects a boolean, got {val!r}")
    if target in (int, float):
        try:
            return target(val)
        except ValueError:
            raise ConfigError(
                f"{path}:{lineno}: {key} expects {target.__name__}, got {val!r}") from None
    return val


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    subcommand = args.subcommand
    defaults = dict(_DEFAULTS[subcommand])
    merged = dict(defaults)
    if getattr(args, "config", None):
        merged.update(config_from_file(args.config, set(defaults)))
    for key in defaults:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            merged[key] = cli_val
    if subcommand == "verify":
        merged["check"] = args.check
    env_threads = os.environ.get("SLOWFAST_LV_THREADS")
    if "threads" in merged and env_threads is not None:
        try:
            merged["threads"] = int(env_threads)
        except ValueError:
            raise ConfigError(f"SLOWFAST_LV_THREADS must be an integer, "
                              f"got {env_threads!r}") from None
    return ExperimentConfig(subcommand=subcommand, options=merged)


def _threads(config: ExperimentConfig) -> int:
    t = config.options.get("threads", 0)
    return t if t and t > 0 else (os.cpu_count() or 1)


def _parse_times(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip() != ""])
    except ValueError:
        raise ConfigError(f"malformed time list {text!r}") from None


def _obs_times(config) -> np.ndarray:
    opts = config.options
    if opts.get("obs_times"):
        return _parse_times(opts["obs_times"])
    t_final = opts["t_final"]
    count = opts["obs_count"]
    return np.linspace(t_final / count, t_final, count)


# ---------------------------------------------------------------------------
# output plumbing
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_text(out: str, text: str) -> None:
    if out in ("-", "", None):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _emit(config: ExperimentConfig, columns, rows, extra=None) -> None:
    opts = config.options
    created = None if opts["deterministic"] else datetime.now(timezone.utc).isoformat()
    if opts["format"] == "csv":
        lines = [f"# slowfast-lv {config.subcommand}",
                 f"# config: {config.canonical()}"]
        if created:
            lines.append(f"# created: {created}")
        lines.append(",".join(columns))
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        _write_text(opts["out"], "\n".join(lines) + "\n")
    else:
        payload = {"tool": "slowfast-lv", "subcommand": config.subcommand,
                   "config": json.loads(config.canonical())}
        if created:
            payload["created"] = created
        if extra:
            payload.update(extra)
        else:
            payload["columns"] = list(columns)
            payload["rows"] = [[_json_value(v) for v in row] for row in rows]
        _write_text(opts["out"], json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _run_geometry(config: ExperimentConfig) -> None:
    opts = config.options
    k = opts["z_grid"]
    if k < 1:
        raise ValueError("--z-grid must be >= 1")
    if opts["grid"] == "theta":
        theta = (np.arange(k) + 0.5) * np.pi / k
        levels = (1.0 + np.cos(theta)) / 54.0
        levels = np.sort(levels)
    else:
        levels = np.linspace(Z_MAX / (k + 1), Z_MAX * k / (k + 1), k)
    rows = []
    for z in levels:
        g = fast_dynamics.loop_geometry(float(z))
        rows.append((g.z, g.theta, g.x_min, g.x_max, g.x_add, g.period,
                     g.action, g.m))
    _emit(config, ("z", "theta", "x_min", "x_max", "x_add", "period", "action", "m"),
          rows)


def _parse_init(text: str, n: int) -> CountState:
    if text == "center":
        k = n // 3
        return CountState(n - 2 * k, k, k)
    try:
        parts = [int(v) for v in text.split(",")]
        state = CountState(*parts)
    except (ValueError, TypeError):
        raise ConfigError(f"--init expects 'center' or n1,n2,n3; got {text!r}") from None
    if state.n != n:
        raise ConfigError(f"--init counts sum to {state.n}, expected n={n}")
    return state


def _run_particle(config: ExperimentConfig) -> None:
    opts = config.options
    obs = _obs_times(config)
    init = _parse_init(opts["init"], opts["n"])
    ens = particle.ssa_ensemble(init, ModelParams(a=opts["a"], n=opts["n"]),
                                obs, opts["runs"], opts["seed"],
                                threads=_threads(config))
    n3 = float(opts["n"]) ** 3
    rows = []
    for r in range(ens.runs):
        for k, t in enumerate(obs):
            c = ens.counts[r, k]
            rows.append((r, opts["seed"], t, c[0], c[1], c[2],
                         c[0] * c[1] * c[2] / n3))
    _emit(config, ("run", "seed", "t", "n1", "n2", "n3", "z"), rows)


def _run_sde(config: ExperimentConfig) -> None:
    opts = config.options
    obs = _obs_times(config)
    ens = sde.sde_ensemble(opts["z0"], opts["a"], float(obs[-1]), opts["dt"],
                           opts["paths"], opts["seed"], obs_times=obs,
                           threads=_threads(config))
    rows = []
    for p in range(ens.paths):
        for k, t in enumerate(obs):
            absorbed = int(opts["a"] == 0.0 and ens.z[p, k] <= 0.0)
            rows.append((p, t, ens.z[p, k], absorbed,
                         ens.hit_time_lower[p], ens.hit_time_upper[p]))
    _emit(config, ("path", "t", "z", "absorbed_flag", "hit_time_lower",
                   "hit_time_upper"), rows)


def _run_boundaries(config: ExperimentConfig) -> None:
    opts = config.options
    ladder = _parse_times(opts["eps_ladder"])
    cls = sde.classify_boundaries(opts["a"])
    entries = []
    for eps in ladder:
        fi = sde.feller_integrals(opts["a"], r=opts["r"], eps=float(eps))
        entries.append({"eps": float(eps), "sdp_lower": fi.sdp_lower,
                        "pds_lower": fi.pds_lower, "sdp_upper": fi.sdp_upper,
                        "pds_upper": fi.pds_upper})
    _emit(config, (), (), extra={
        "classification": {"a": cls.a, "at_zero": cls.at_zero, "at_max": cls.at_max},
        "ladder": entries})


def _run_stationary(config: ExperimentConfig) -> None:
    opts = config.options
    density = sde.stationary_density(opts["a"])
    k = opts["z_grid"]
    levels = np.linspace(Z_MAX / (k + 1), Z_MAX * k / (k + 1), k)
    rows = [(z, float(density.pdf(z))) for z in levels]
    _emit(config, ("z", "density"), rows)


def _run_verify(config: ExperimentConfig) -> None:
    opts = config.options
    check = opts["check"]
    seed = opts["seed"]
    threads = _threads(config)
    if check == "prop21":
        a = opts["a"] if opts["a"] > 0 else 2.0
        report = analysis.check_invariant_measure_limit((20, 60, 180), a)
    elif check == "prop22":
        n = opts["n"] or 500
        a = opts["a"] if opts["a"] >= 0 else 1.0
        runs = opts["runs"] or 30
        report = analysis.check_fast_flow_limit(
            n, a, SimplexPoint(0.4, 0.3, 0.3), np.linspace(0.5, 5.0, 10),
            runs, seed, threads=threads)
    elif check == "thm31":
        n = opts["n"] or 250
        a = opts["a"] if opts["a"] >= 0 else 2.0
        runs = opts["runs"] or 100
        paths = opts["paths"] or 1000
        z0 = opts["z0"] or 1.0 / 54.0
        report = analysis.check_slow_diffusion_limit(
            n, a, z0, (0.1, 0.2), runs, paths, seed, dt=opts["dt"],
            threads=threads)
    elif check == "prop27":
        report = analysis.check_stationary_integral()
    elif check == "feller":
        a = opts["a"] if opts["a"] >= 0 else 0.5
        report = analysis.check_feller_trends(a)
    elif check == "stationarity-exact":
        n = opts["n"] or 5
        a = opts["a"] if opts["a"] > 0 else 0.7
        report = analysis.check_exact_stationarity((n,), (a,))
    else:  # unreachable; argparse restricts choices
        raise ConfigError(f"unknown check {check!r}")
    _emit(config, (), (), extra=report.as_json_dict())


_RUNNERS = {
    "geometry": _run_geometry,
    "particle": _run_particle,
    "sde": _run_sde,
    "boundaries": _run_boundaries,
    "stationary": _run_stationary,
    "verify": _run_verify,
}


def run(config: ExperimentConfig) -> int:
    """Execute a resolved configuration; returns the process exit status."""
    try:
        _RUNNERS[config.subcommand](config)
    except ConfigError as exc:
        print(f"slowfast-lv: config error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except (ValueError, ArithmeticError, fast_dynamics.IntegrationError) as exc:
        print(f"slowfast-lv: numeric failure: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC
    except OSError as exc:
        print(f"slowfast-lv: i/o failure: {exc}", file=sys.stderr)
        return _EXIT_IO
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
    except ConfigError as exc:
        print(f"slowfast-lv: config error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except OSError as exc:
        print(f"slowfast-lv: i/o failure: {exc}", file=sys.stderr)
        return _EXIT_IO
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
