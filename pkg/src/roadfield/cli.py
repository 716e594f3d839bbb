"""Command-line entry point: ``roadfield <subcommand> [--config FILE] [flags]``.

Exit status is 0 on success, 1 when a computation fails (or a ``verify``
check fails) and 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from .discretization import COUPLED, NEUMANN, build_grid
from .dynamics import bump_state, evolve_classify, export_frames, simulate
from .eigensolver import SolverError, StructuralError, export_eigenfunction, snap_to_grid
from .model import ConfigurationError, NicheProfile, OutOfDomainError, Parameters, ReactionTerm

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("roadfield")

COMMANDS = ("eigen", "eigen-no-road", "simulate", "critical-speed", "threshold-d", "sweep",
            "homogeneous-speed", "verify")

DEFAULTS = {
    "parameters": {"D": 1.0, "d": 1.0, "mu": 1.0, "nu": 1.0, "c": 0.0},
    "niche": {"kind": None, "L": None, "m0": None, "homogeneous": False, "table": None,
              "clamp": True},
    "numerics": {"h": 0.5, "X0": "auto", "growth": 1.5, "stop_tol": 1e-4, "max_steps": 6,
                 "tol": 1e-9, "dt": "auto", "horizon": 500.0, "steady_tol": 1e-6,
                 "extinction_tol": 1e-6, "speed_tol": 1e-2, "n_scan": 21, "d_max": 100.0,
                 "d_min": 1e-3, "enlarge": 1.5, "stride": 0},
    "command": {"axis": None, "values": None, "check": [], "neumann": True, "verdicts": False,
                "seed": 0, "jobs": 1},
    "output": {"dir": "roadfield-out"},
}

# per-command numerics defaults, applied beneath the config file
COMMAND_DEFAULTS = {
    "homogeneous-speed": {"numerics": {"h": an.HOMOGENEOUS_NUMERICS.h,
                                       "X0": an.HOMOGENEOUS_NUMERICS.X0,
                                       "stop_tol": an.HOMOGENEOUS_NUMERICS.stop_tol,
                                       "max_steps": an.HOMOGENEOUS_NUMERICS.max_steps}},
}

NEEDS_NICHE = {"eigen", "eigen-no-road", "simulate", "critical-speed", "threshold-d", "sweep"}


# configuration ------------------------------------------------------------

def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key {name!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {name!r} must be a table")
            out[key] = _merge(base[key], value, name + ".")
        else:
            out[key] = value
    return out


def _parse_set(item: str):
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigurationError(f"--set expects section.key=value, got {item!r}")
    path, raw = item.split("=", 1)
    section, key = path.split(".", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return {section: {key: value}}


def read_config_file(path) -> dict:
    """A TOML run config, or a previous run's manifest.json (its resolved config)."""
    path = Path(path)
    try:
        if path.suffix == ".json":
            data = json.loads(path.read_text())
            if "resolved_config" not in data:
                raise ConfigurationError(f"{path}: JSON configs must be run manifests")
            return data["resolved_config"]
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def load_config(path=None, overrides=(), command=None) -> dict:
    """Defaults, command defaults, the config file, then flag overrides.

    Unknown keys are errors at every layer.
    """
    cfg = _merge(DEFAULTS, COMMAND_DEFAULTS.get(command, {}))
    if path is not None:
        cfg = _merge(cfg, read_config_file(path))
    for ov in overrides:
        cfg = _merge(cfg, ov)
    return cfg


def _num(cfg, section, key, kind=float):
    value = cfg[section][key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{section}.{key} must be a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ConfigurationError(f"{section}.{key} must be an integer")
        return int(value)
    return float(value)


def build_parameters(cfg) -> Parameters:
    vals = {k: _num(cfg, "parameters", k) for k in ("D", "d", "mu", "nu", "c")}
    return Parameters(**vals)


def build_profile(cfg, base_dir: Path | None = None) -> NicheProfile:
    n = cfg["niche"]
    kind = n["kind"]
    if kind is None:
        raise ConfigurationError("niche.kind is required (radial, constant or tabulated)")
    if kind == "radial":
        if n["L"] is None:
            raise ConfigurationError("niche.L is required for a radial niche")
        return NicheProfile.radial(_num(cfg, "niche", "L"))
    if kind == "constant":
        if n["m0"] is None:
            raise ConfigurationError("niche.m0 is required for a constant niche")
        return NicheProfile.constant(_num(cfg, "niche", "m0"), bool(n["homogeneous"]))
    if kind == "tabulated":
        if not n["table"]:
            raise ConfigurationError("niche.table is required for a tabulated niche")
        table = Path(n["table"])
        if base_dir is not None and not table.is_absolute():
            table = base_dir / table
        if not table.exists():
            raise ConfigurationError(f"niche.table: file {table} not found")
        return NicheProfile.from_csv(table, clamp=bool(n["clamp"]))
    raise ConfigurationError(f"niche.kind must be radial, constant or tabulated, got {kind!r}")


def resolve_x0(cfg, command: str, profile: NicheProfile | None) -> None:
    """Replace ``numerics.X0 = "auto"`` by the first ladder half-width.

    Radial niches start 4 units outside the niche (outside the largest one
    for a sweep in L); everything else starts at 4.
    """
    if cfg["numerics"]["X0"] != "auto":
        return
    h = _num(cfg, "numerics", "h")
    base = an.Numerics(h=h, X0=snap_to_grid(4.0, h))
    if profile is not None:
        if command == "sweep" and cfg["command"]["axis"] == "L" and profile.kind == "radial":
            values = an.parse_range(str(cfg["command"]["values"]))
            profile = NicheProfile.radial(max(values))
        base = base.for_profile(profile)
    cfg["numerics"]["X0"] = base.X0


def build_numerics(cfg) -> an.Numerics:
    return an.Numerics(h=_num(cfg, "numerics", "h"), X0=_num(cfg, "numerics", "X0"),
                       growth=_num(cfg, "numerics", "growth"),
                       stop_tol=_num(cfg, "numerics", "stop_tol"),
                       max_steps=_num(cfg, "numerics", "max_steps", int),
                       tol=_num(cfg, "numerics", "tol"))


def _dt(cfg):
    dt = cfg["numerics"]["dt"]
    if dt == "auto":
        return None
    dt = _num(cfg, "numerics", "dt")
    if dt <= 0:
        raise ConfigurationError("numerics.dt must be > 0 or \"auto\"")
    return dt


def validate(cfg, command: str, base_dir=None) -> None:
    """Fail fast on every config problem before computing anything."""
    for key in ("h", "growth", "stop_tol", "tol"):
        _num(cfg, "numerics", key)
    _num(cfg, "numerics", "max_steps", int)
    if cfg["numerics"]["X0"] != "auto":
        _num(cfg, "numerics", "X0")
    _dt(cfg)
    for key in ("horizon", "steady_tol", "extinction_tol", "speed_tol", "d_max", "d_min",
                "enlarge"):
        if _num(cfg, "numerics", key) <= 0:
            raise ConfigurationError(f"numerics.{key} must be > 0")
    for key in ("n_scan", "stride"):
        if _num(cfg, "numerics", key, int) < 0:
            raise ConfigurationError(f"numerics.{key} must be >= 0")
    if _num(cfg, "numerics", "n_scan", int) < 2:
        raise ConfigurationError("numerics.n_scan must be >= 2")
    if command in NEEDS_NICHE or command == "homogeneous-speed":
        build_parameters(cfg)
    if command in NEEDS_NICHE:
        build_profile(cfg, base_dir)
    if command == "sweep":
        axis = cfg["command"]["axis"]
        if axis not in an.AXES:
            raise ConfigurationError(f"command.axis must be one of {an.AXES}, got {axis!r}")
        if not cfg["command"]["values"]:
            raise ConfigurationError("command.values is required for sweep (start:stop:count)")
        an.parse_range(str(cfg["command"]["values"]))
    if _num(cfg, "command", "jobs", int) < 1:
        raise ConfigurationError("command.jobs must be >= 1")


# output -------------------------------------------------------------------

class Output:
    """Collects files under the run directory and writes the manifest last."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def json(self, rel: str, obj) -> Path:
        p = self.path(rel)
        p.write_text(dumps(obj) + "\n")
        return p

    def inventory(self) -> list:
        out = []
        for p in sorted(set(self.files)):
            data = p.read_bytes()
            out.append({"path": p.relative_to(self.root).as_posix(),
                        "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        return out

    def manifest(self, payload: dict) -> Path:
        payload = dict(payload, outputs=self.inventory())
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".manifest-", suffix=".json")
        with os.fdopen(fd, "w") as fh:
            fh.write(dumps(payload) + "\n")
        target = self.root / "manifest.json"
        os.replace(tmp, target)
        return target


def _plain(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return x.as_posix()
    raise TypeError(f"not serializable: {type(x).__name__}")


def dumps(obj) -> str:
    # float repr is the shortest string that round-trips exactly
    return json.dumps(obj, indent=2, sort_keys=True, default=_plain, allow_nan=True)


# commands -----------------------------------------------------------------

def _ladder_dict(res) -> dict:
    return {"ladder": [list(map(float, r)) for r in res.ladder],
            "lambda_inf": res.lambda_inf, "converged": res.converged,
            "residual": res.last.residual, "iterations": res.last.iterations,
            "grid": {"X": res.last.grid.X, "Y": res.last.grid.Y, "h": res.last.grid.h}}


def cmd_eigen(cfg, out: Output, ctx) -> dict:
    kind = COUPLED if ctx["command"] == "eigen" else NEUMANN
    p, profile, num = ctx["p"], ctx["profile"], ctx["numerics"]
    res = an.evaluate(p, profile, kind, num)
    info = dict(_ladder_dict(res), kind=kind)
    out.json("eigen.json", info)
    road = out.path("fields/eigen_road.csv") if kind == COUPLED else None
    export_eigenfunction(res.last, road, out.path("fields/eigen_field.csv"))
    print(f"lambda_inf = {res.lambda_inf:.10g} (converged: {res.converged})")
    return {"exhaustion": {"converged": res.converged, "rungs": len(res.ladder)}}


def cmd_simulate(cfg, out: Output, ctx) -> dict:
    p, profile, num = ctx["p"], ctx["profile"], ctx["numerics"]
    res = an.evaluate(p, profile, COUPLED, num)
    g0 = res.last.grid
    X = snap_to_grid(_num(cfg, "numerics", "enlarge") * g0.X, g0.h)
    grid = build_grid(X, X, g0.h)
    term = ReactionTerm(profile)
    n = cfg["numerics"]
    cl = evolve_classify(p, term, grid, horizon=float(n["horizon"]), dt=_dt(cfg),
                         steady_tol=float(n["steady_tol"]), extinction_tol=float(n["extinction_tol"]))
    report = dict(cl.as_dict(), grid={"X": grid.X, "Y": grid.Y, "h": grid.h},
                  exhaustion=_ladder_dict(res))
    out.json("classification.json", report)
    stride = int(n["stride"])
    if stride:
        _, frames = simulate(p, term, bump_state(grid, (0.0, 1.0)), float(n["horizon"]),
                             _dt(cfg), stride)
        export_frames(frames, out.path("fields/trajectory_field.csv"),
                      out.path("fields/trajectory_road.csv"))
    print(f"verdict: {cl.verdict} (lambda_R = {cl.lam:.6g})")
    return {"classification": {"verdict": cl.verdict, "t_final": cl.t_final}}


def cmd_critical_speed(cfg, out: Output, ctx) -> dict:
    n = cfg["numerics"]
    p, profile = ctx["p"], ctx["profile"]
    num = ctx["numerics"]
    pair = an.critical_speeds(p, profile, float(n["speed_tol"]), num, int(n["n_scan"]),
                              ctx["jobs"])
    out.json("tables/critical_speed.json", pair.as_dict())
    with open(out.path("tables/critical_speed_scan.csv"), "w") as fh:
        fh.write("c,lambda,converged\n")
        for c, lam, conv in pair.scan:
            fh.write(f"{c:.17g},{lam:.17g},{str(bool(conv)).lower()}\n")
    print(f"c_star = {pair.c_star:.6g}, c_star_upper = {pair.c_star_upper:.6g}, "
          f"bound = {pair.bound:.6g}{' (provisional)' if pair.provisional else ''}")
    return {"critical_speed": {"provisional": pair.provisional}}


def cmd_threshold_d(cfg, out: Output, ctx) -> dict:
    n = cfg["numerics"]
    res = an.diffusion_threshold(ctx["p"], ctx["profile"], float(n["d_max"]),
                                 float(n["speed_tol"]), float(n["d_min"]),
                                 ctx["numerics"])
    out.json("tables/diffusion_threshold.json", res.as_dict())
    print(f"d_star = {res.d_star:.6g} (bracket [{res.lo:.6g}, {res.hi:.6g}])")
    return {"threshold": {"width": res.width}}


def cmd_sweep(cfg, out: Output, ctx) -> dict:
    c = cfg["command"]
    values = an.parse_range(str(c["values"]))
    table = an.sweep(c["axis"], values, ctx["p"], ctx["profile"], ctx["numerics"], with_neumann=bool(c["neumann"]),
                     with_verdicts=bool(c["verdicts"]), jobs=ctx["jobs"])
    table.to_csv(out.path("tables/sweep.csv"))
    out.json("tables/sweep.json", table.as_dict())
    failed = [r for r in table.rows if r["error"]]
    for r in failed:
        log.error("sweep row %s=%g failed: %s", c["axis"], r["value"], r["error"])
    print(f"sweep over {c['axis']}: {len(table.rows)} rows, {len(failed)} failed")
    return {"sweep": {"rows": len(table.rows), "failed": len(failed),
                      "converged": all(r["converged"] for r in table.rows)}}


def cmd_homogeneous(cfg, out: Output, ctx) -> dict:
    p = ctx["p"]
    cH = an.homogeneous_speed_cH(p, float(cfg["numerics"]["speed_tol"]), ctx["numerics"])
    consts = an.DerivedConstants(c_KPP=an.c_kpp(p.d), c_H=cH)
    out.json("tables/homogeneous_speed.json", consts.as_dict())
    print(f"c_H = {cH:.6g}, c_KPP = {consts.c_KPP:.6g}")
    return {}


def cmd_verify(cfg, out: Output, ctx) -> dict:
    names = list(cfg["command"]["check"]) or None
    report = an.verify_suite(names, seed=ctx["seed"])
    out.path("verify.json").write_text(report.to_json() + "\n")
    print(report.summary())
    ctx["status"] = 0 if report.passed else 1
    return {"verify": {"passed": report.passed, "checks": [r.name for r in report.results]}}


HANDLERS = {
    "eigen": cmd_eigen,
    "eigen-no-road": cmd_eigen,
    "simulate": cmd_simulate,
    "critical-speed": cmd_critical_speed,
    "threshold-d": cmd_threshold_d,
    "sweep": cmd_sweep,
    "homogeneous-speed": cmd_homogeneous,
    "verify": cmd_verify,
}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roadfield", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="TOML run configuration")
    ap.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    ap.add_argument("--jobs", type=int, help="concurrent scan/sweep evaluations")
    ap.add_argument("--seed", type=int, help="seed for randomized verification inputs")
    ap.add_argument("--axis", help="sweep axis: c, L, d, D, mu or nu")
    ap.add_argument("--values", help="sweep values as start:stop:count")
    ap.add_argument("--check", action="append", help="verification check name (repeatable)")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override one config entry, e.g. parameters.c=1.5")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _flag_overrides(args) -> list:
    ov = [_parse_set(s) for s in args.set]
    cmd = {}
    for key in ("axis", "values", "check", "seed", "jobs"):
        value = getattr(args, key)
        if value is not None:
            cmd[key] = value
    if cmd:
        ov.append({"command": cmd})
    if args.out is not None:
        ov.append({"output": {"dir": str(args.out)}})
    return ov


def _join_values(argv: list) -> list:
    # ranges such as -2:8:21 start with a dash and would read as an option
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--values" and i + 1 < len(argv):
            out.append(f"--values={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = make_parser().parse_args(_join_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        overrides = _flag_overrides(args)
        cfg = load_config(args.config, overrides, args.command)
        base_dir = args.config.parent if args.config else None
        validate(cfg, args.command, base_dir)
        ctx = {"command": args.command, "status": 0,
               "seed": _num(cfg, "command", "seed", int),
               "jobs": _num(cfg, "command", "jobs", int)}
        if args.command in NEEDS_NICHE or args.command == "homogeneous-speed":
            ctx["p"] = build_parameters(cfg)
        if args.command in NEEDS_NICHE:
            ctx["profile"] = build_profile(cfg, base_dir)
        resolve_x0(cfg, args.command, ctx.get("profile"))
        ctx["numerics"] = build_numerics(cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = Output(Path(cfg["output"]["dir"]))
    try:
        stages = HANDLERS[args.command](cfg, out, ctx)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, StructuralError, OutOfDomainError, RuntimeError,
            FloatingPointError) as exc:
        print(f"computation failed in {args.command}: {exc}", file=sys.stderr)
        return 1
    out.manifest({
        "tool": "roadfield",
        "version": __version__,
        "command": args.command,
        "resolved_config": cfg,
        "wall_clock_seconds": time.time() - started,
        "stages": stages,
    })
    return ctx["status"]


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
