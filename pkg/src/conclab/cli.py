"""``conclab`` command line.

Exit status: 0 pass, 1 assertion failure, 2 invalid input or config,
3 inconclusive.  Everything a run writes goes under ``--out``; only
``run.log`` carries timestamps and timings.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import drifts as D
from . import experiments as E
from . import sde, torus
from .experiments import ConfigError, parse_number
from .fields import BoxGrid, DivFreeVelocity, write_field
from .rearrange import concentration, gamma, symm_decreasing_rearrangement
from .semigroups import SplittingSchedule, direct_solve, dissipation_integral, heat_record, pulsed_diffusion

EXIT = {"pass": 0, "fail": 1, "invalid": 2, "inconclusive": 3}
log = logging.getLogger("conclab")

_FIELD_KEYS = ("d", "L", "N", "datum", "datum.sigma", "datum.radius", "datum.eps", "datum.center", "datum.bumps", "seed")
_DRIFT_KEYS = ("drift", "drift.lambda", "drift.k", "drift.omega", "drift.radius", "drift.width", "drift.taper", "drift.velocity", "drift.file")


def _subschema(keys, **extra):
    s = {k: E.EXPERIMENT_SCHEMA[k] for k in keys}
    s.update(extra)
    return s


def _opt(text):
    s = str(text).strip()
    return None if s in ("", "none") else parse_number(s)


def _flag(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


SCHEMAS = {
    "rearrange": _subschema(_FIELD_KEYS),
    "evolve": _subschema(_FIELD_KEYS + _DRIFT_KEYS + ("t.list",), dt=(_opt, ""), epsilon=(_opt, "")),
    "pulsed": _subschema(_FIELD_KEYS + _DRIFT_KEYS + ("t.list",), delta=(parse_number, "0.005"), epsilon=(_opt, "")),
    "torus": {
        "T": (parse_number, "0.05"),
        "h": (parse_number, "0.002"),
        "K": (E._int, "16"),
        "d": (E._int, "2"),
        "dt": (_opt, ""),
        "t_max": (_opt, ""),
        "seed": (E._int, "0"),
    },
    "sde": {
        "d": (E._int, "2"),
        "drift": (E._str, "zero"),
        "drift.lambda": (parse_number, "4"),
        "drift.radius": (parse_number, "2"),
        "drift.width": (_opt, "1"),
        "drift.eps": (parse_number, "0.1"),
        "init": (E._str, "point"),
        "init.sigma": (parse_number, "1"),
        "init.radius": (parse_number, "1"),
        "init.R": (parse_number, "1"),
        "M": (E._int, "20000"),
        "dt": (parse_number, "1e-3"),
        "t.list": (E._floats, "0.5,1,2"),
        "seed": (E._int, "0"),
        "check": (_flag, "false"),
        "dump": (_flag, "false"),
    },
    "ns2d": _subschema(("d", "L", "N", "t.list", "ns.sigma", "ns.scales", "ns.mass", "richardson", "seed")),
}


def _usage() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conclab", description="Concentration comparison experiments for advection-diffusion.")
    p.add_argument("--version", action="version", version=f"conclab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("rearrange", "rearrange a datum and write its concentration profile"),
        ("evolve", "advect-diffuse a datum with the direct solver"),
        ("pulsed", "advect-diffuse a datum with the split operator"),
        ("torus", "torus counterexample for one (T, h)"),
        ("sde", "Euler-Maruyama variance curve"),
        ("ns2d", "vorticity run against the heat flow of the rearranged datum"),
        ("experiment", "run experiment recipes from config files"),
        ("selftest", "fast identity and contract checks"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", action="append", default=[], help="flat key = value file (repeatable for experiment)")
        s.add_argument("--set", action="append", default=[], metavar="K=V", help="override a config key")
        s.add_argument("--out", default=None, help="output directory")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--threads", type=int, default=None)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("CONCLAB_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError as exc:
        raise ConfigError(f"CONCLAB_THREADS={env!r} is not an integer") from exc


def _cfg(args, schema, path=None):
    overrides = list(args.set)
    if args.seed is not None:
        if "seed" not in schema:
            raise ConfigError("this command takes no seed")
        overrides.append(f"seed={args.seed}")
    return E.load_config(path, overrides, schema)


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# --- subcommands ---------------------------------------------------------------


def cmd_rearrange(args):
    cfg = _cfg(args, SCHEMAS["rearrange"], *args.config[:1])
    out = _out(args, "out/rearrange")
    grid = BoxGrid(cfg["d"], cfg["L"], cfg["N"])
    f = E.build_datum(cfg, grid)
    fs = symm_decreasing_rearrangement(f)
    write_field(out / "input.bin", f)
    write_field(out / "rearranged.bin", fs)
    concentration(f).to_csv(out / "concentration.csv")
    vmax = float(f.values.max())
    gamma(f, np.linspace(0.0, vmax, 257)).to_csv(out / "gamma.csv")
    return "pass", cfg


def _velocity(cfg, grid):
    try:
        return E.build_velocity(cfg, grid)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_evolve(args):
    cfg = _cfg(args, SCHEMAS["evolve"], *args.config[:1])
    out = _out(args, "out/evolve")
    grid = BoxGrid(cfg["d"], cfg["L"], cfg["N"])
    f = E.build_datum(cfg, grid)
    u = _velocity(cfg, grid)
    times = sorted(cfg["t.list"])
    rec = direct_solve(f, u, times[-1], dt=cfg["dt"], times=times, epsilon=cfg["epsilon"])
    rec.export(out / "direct")
    _dissipation_csv(out / "direct" / "dissipation.csv", rec)
    return "pass", cfg


def cmd_pulsed(args):
    cfg = _cfg(args, SCHEMAS["pulsed"], *args.config[:1])
    out = _out(args, "out/pulsed")
    grid = BoxGrid(cfg["d"], cfg["L"], cfg["N"])
    f = E.build_datum(cfg, grid)
    u = _velocity(cfg, grid)
    t = max(cfg["t.list"])
    rec = pulsed_diffusion(f, u, SplittingSchedule(t, cfg["delta"]), epsilon=cfg["epsilon"])
    rec.export(out / "pulsed")
    return "pass", cfg


def _dissipation_csv(path, rec):
    c = dissipation_integral(rec)
    with open(path, "w") as fh:
        fh.write("t,cumulative\n")
        for t, v in zip(c.times, c.cumulative):
            fh.write(f"{t:.17g},{v:.17g}\n")


def cmd_torus(args):
    cfg = _cfg(args, SCHEMAS["torus"], *args.config[:1])
    out = _out(args, "out/torus")
    tmax = cfg["t_max"] if cfg["t_max"] is not None else max(50 * cfg["T"], cfg["T"] + cfg["h"] + 1.0)
    try:
        params = torus.CounterexampleParams(cfg["T"], cfg["h"], cfg["K"], cfg["dt"], tmax, cfg["d"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    v = torus.verify_counterexample(params)
    v.write(out)
    status = {"found": "pass", "not found": "fail", "inconclusive": "inconclusive"}[v.status]
    return status, cfg


def _sde_drift(cfg):
    name, d = cfg["drift"], cfg["d"]
    if name == "zero":
        return D.Zero(d)
    if name == "shear":
        return D.Shear(cfg["drift.lambda"], 1.0, d)
    if name == "cellular":
        return D.Cellular(cfg["drift.lambda"], 1.0, d)
    if name == "strain":
        return D.Strain(radius=cfg["drift.radius"], width=cfg["drift.width"], d=d)
    if name == "inward":
        return D.inward(cfg["drift.eps"], d)
    if name == "outward":
        return D.outward(cfg["drift.eps"], d)
    raise ConfigError(f"unknown drift {name!r} for sde")


def cmd_sde(args):
    cfg = _cfg(args, SCHEMAS["sde"], *args.config[:1])
    out = _out(args, "out/sde")
    u = _sde_drift(cfg)
    kw = {"gaussian": {"sigma": cfg["init.sigma"]}, "ball": {"radius": cfg["init.radius"]}, "two_atom": {"R": cfg["init.R"]}}.get(cfg["init"], {})
    if cfg["init"] not in ("point", "gaussian", "ball", "two_atom"):
        raise ConfigError(f"unknown init {cfg['init']!r}")
    times = sorted(cfg["t.list"])
    X0 = sde.sample_init(cfg["init"], cfg["M"], cfg["d"], cfg["seed"], **kw)
    try:
        res = sde.simulate(u, X0, times[-1], cfg["dt"], cfg["seed"], record_times=[0.0] + times)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    res.curve.to_csv(out / "variance.csv")
    if cfg["dump"]:
        res.final.write(out / "ensemble.bin")
    status = "pass"
    if cfg["check"]:
        ref = sde.init_variance(cfg["init"], cfg["d"], **kw) + 2 * cfg["d"] * res.curve.times
        ok = bool(np.all(res.curve.var >= ref - 3 * res.curve.ci_half))
        status = "pass" if ok else "fail"
        log.info("variance ordering %s", "holds" if ok else "fails")
    return status, cfg


def cmd_ns2d(args):
    cfg = _cfg(args, SCHEMAS["ns2d"], *args.config[:1])
    out = _out(args, "out/ns2d")
    full = E.resolve_config({"experiment": "ns2d"})
    full.update(cfg)
    rep = E.run_vortex_orderings(full)
    rep.write(out)
    if "ns" in rep.data:
        rep.data["ns"].export(out / "vorticity")
        rep.data["heat"].export(out / "heat")
    log.info("\n%s", rep.text())
    return rep.status, cfg


def cmd_experiment(args):
    if not args.config and not args.set:
        raise ConfigError("experiment needs --config or --set")
    paths = args.config or [None]
    cfgs = []
    for p in paths:
        cfg = _cfg(args, E.EXPERIMENT_SCHEMA, p)
        if args.out:
            sub = Path(args.out) if len(paths) == 1 else Path(args.out) / Path(p).stem
            cfg["out.dir"] = str(sub)
        elif not cfg["out.dir"]:
            cfg["out.dir"] = str(Path("out") / (Path(p).stem if p else cfg["experiment"]))
        cfgs.append(cfg)
    dirs = [c["out.dir"] for c in cfgs]
    if len(set(dirs)) != len(dirs):
        raise ConfigError("experiments would share an output directory")
    if not any(isinstance(h, logging.FileHandler) for h in log.handlers):
        _attach_file(Path(dirs[0]) if len(dirs) == 1 else Path(os.path.commonpath(dirs)))
    with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
        reps = list(pool.map(E.run_experiment, cfgs))
    worst = "pass"
    for rep in reps:
        log.info("\n%s", rep.text())
        sys.stdout.write(f"{rep.experiment}: {rep.status}\n")
        if EXIT[rep.status] > EXIT[worst]:
            worst = rep.status
    return worst, {"configs": [str(p) for p in paths], "runs": len(reps)}


def cmd_selftest(args):
    from . import selftest

    if args.config or args.set:
        raise ConfigError("selftest takes no config")
    ok, rows = selftest.run(verbose=args.verbose, stream=sys.stdout)
    for name, good, detail, sec in rows:
        log.info("%s %s %.3fs %s", name, "ok" if good else "FAIL", sec, detail)
    sys.stdout.write(f"selftest: {sum(r[1] for r in rows)}/{len(rows)} passed\n")
    return ("pass" if ok else "fail"), {}


COMMANDS = {
    "rearrange": cmd_rearrange,
    "evolve": cmd_evolve,
    "pulsed": cmd_pulsed,
    "torus": cmd_torus,
    "sde": cmd_sde,
    "ns2d": cmd_ns2d,
    "experiment": cmd_experiment,
    "selftest": cmd_selftest,
}


def _start_log(out: Path | None, verbose: bool):
    log.handlers.clear()
    log.setLevel(logging.INFO)
    log.propagate = False
    if verbose:
        log.addHandler(logging.StreamHandler(sys.stderr))
    if out is not None:
        _attach_file(out)


def _attach_file(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    fh = logging.FileHandler(out / "run.log", mode="w")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(fh)


def main(argv=None) -> int:
    parser = _usage()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    out = Path(args.out) if args.out else (None if args.command == "selftest" else Path("out") / args.command)
    if args.command == "experiment" and not args.out:
        out = None  # each experiment logs into its own directory
    _start_log(out, args.verbose)
    t0 = time.perf_counter()
    log.info("conclab %s, python %s, numpy %s, scipy %s", __version__, platform.python_version(), np.__version__, scipy.__version__)
    log.info("argv: %s", " ".join(sys.argv[1:] if argv is None else argv))
    try:
        status, cfg = COMMANDS[args.command](args)
    except ConfigError as exc:
        sys.stderr.write(f"conclab: {exc}\n")
        parser.print_usage(sys.stderr)
        log.error("config error: %s", exc)
        return 2
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"conclab: invalid input: {exc}\n")
        log.error("invalid input: %s", exc)
        return 2
    finally:
        log.info("elapsed %.3f s", time.perf_counter() - t0)
    for k in sorted(cfg):
        log.info("param %s = %s", k, cfg[k])
    log.info("status %s", status)
    if args.command not in ("experiment", "selftest"):
        sys.stdout.write(f"{args.command}: {status}\n")
    for h in list(log.handlers):
        h.close()
        log.removeHandler(h)
    return EXIT[status]


if __name__ == "__main__":
    sys.exit(main())
