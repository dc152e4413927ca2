"""Command-line front end.

Each subcommand reads an optional JSON config, merges it over its defaults,
rejects unknown keys, runs, and writes its outputs plus ``manifest.json``
into ``--out`` atomically. Exit codes: 0 ok, 1 failing suite criterion,
2 bad config, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import io
import json
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import stream

EXIT_OK, EXIT_SUITE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4

DEFAULTS = {
    "degree": {
        "map": "identity",
        "n": 2,
        "refinement": 5,
        "points": None,
        "mesh_file": None,
        "values_file": None,
    },
    "inv-check": {
        "map": "identity",
        "n": 2,
        "resolution": 16,
        "center": None,
        "r_max": None,
        "radii": None,
        "samples": 10_000,
        "mesh_file": None,
        "values_file": None,
    },
    "cap-solve": {
        "angle": 0.5,
        "axis": [0.0, 0.0, 1.0],
        "p": 2.0,
        "refinement": 4,
        "layers": 8,
        "data": "random",
    },
    "ponomarev": {"alpha": 0.4, "n": 3, "K": 4, "p": None, "beta": 2.0, "resolution": 64, "save_mesh": False},
    "lsc": {
        "alpha": 0.4,
        "n": 3,
        "K": 4,
        "m_list": [1, 2, 3],
        "resolution": 64,
        "p": None,
        "beta": 2.0,
        "A": "power_A",
        "phi": "phi_identityish",
    },
    "minimize": {
        "model": "F_model",
        "n": 3,
        "resolution": 8,
        "boundary": "shear",
        "amplitude": 0.2,
        "start_noise": 0.02,
        "mesh": None,
        "boundary_map_file": None,
        "phi": "phi_identityish",
        "A": "power_A",
        "options": {"max_iter": 2000, "tol": 1e-10, "step0": 1.0, "inv_balls": 5, "inv_samples": 2000},
    },
    "energy": {
        "model": "F_model",
        "map": "identity",
        "n": 3,
        "resolution": 4,
        "phi": "phi_identityish",
        "A": "power_A",
        "mesh_file": None,
        "values_file": None,
    },
    "suite": {"only": None, "coarse": False},
}

TOLERANCES = {
    "cap-solve": {"solver": 1e-10},
    "minimize": {"descent": None},
    "inv-check": {"skip_cells": 2.0},
}


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    command: str
    params: dict
    seed: int = 0
    output_dir: str = "out"
    tolerances: dict = field(default_factory=dict)
    threads: int = 1

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "params": self.params,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "tolerances": self.tolerances,
            "threads": self.threads,
        }


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if k not in defaults:
            raise ConfigError(f"unknown key {where}{k!r}")
        if isinstance(defaults[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k!r} must be an object")
            out[k] = _merge(defaults[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def resolve_config(command: str, raw: dict | None, seed: int, out: str, tol: list[str], threads: int) -> ExperimentConfig:
    """Validate a config against the command defaults."""
    raw = dict(raw or {})
    if "command" in raw:
        if raw.pop("command") != command:
            raise ConfigError("config command does not match the subcommand")
    if "params" in raw:
        extra = set(raw) - {"params", "seed", "tolerances"}
        if extra:
            raise ConfigError(f"unknown top-level keys {sorted(extra)}")
        params = raw["params"]
        seed = raw.get("seed", seed)
        tol_cfg = raw.get("tolerances", {})
    else:
        params, tol_cfg = raw, {}
    if not isinstance(params, dict):
        raise ConfigError("params must be an object")
    merged = _merge(DEFAULTS[command], params, "")
    allowed = TOLERANCES.get(command, {})
    tols = dict(allowed)
    for k, v in tol_cfg.items():
        if k not in allowed:
            raise ConfigError(f"unknown tolerance {k!r}")
        tols[k] = float(v)
    for item in tol:
        name, sep, value = item.partition("=")
        if not sep or name not in allowed:
            raise ConfigError(f"bad --tol {item!r}; known: {sorted(allowed)}")
        try:
            tols[name] = float(value)
        except ValueError as exc:
            raise ConfigError(f"bad --tol value {item!r}") from exc
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return ExperimentConfig(command, merged, seed, out, tols, threads)


# ---------------------------------------------------------------------------
# output handling


class Outputs:
    """Collects named files in memory until the run finishes."""

    def __init__(self):
        self.files: dict[str, bytes] = {}
        self.stages: dict[str, float] = {}
        self.lines: list[str] = []

    def text(self, name: str, content: str) -> None:
        self.files[name] = content.encode()

    def json(self, name: str, obj) -> None:
        self.text(name, json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")

    def csv(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for r in rows:
            buf.write(",".join(_fmt(x) for x in r) + "\n")
        self.text(name, buf.getvalue())

    def stage(self, name: str, seconds: float) -> None:
        self.stages[name] = seconds

    def say(self, line: str) -> None:
        self.lines.append(line)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


def _finite(obj):
    """Replace non-finite floats by string sentinels for JSON output."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if v != v:
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "infinite" if v > 0 else "-infinite"
        return v
    return obj


def write_atomically(out_dir: Path, files: dict[str, bytes]) -> None:
    """Write into a sibling temp dir, then move the files into place."""
    out_dir = out_dir.resolve()
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        for name, data in files.items():
            (tmp / name).write_bytes(data)
        if not out_dir.exists():
            os.rename(tmp, out_dir)
            return
        for name in files:
            os.replace(tmp / name, out_dir / name)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def _manifest(cfg: ExperimentConfig, outputs: Outputs, started: str, wall: float) -> dict:
    return {
        "config": cfg.as_dict(),
        "version": __version__,
        "started": started,
        "wall_seconds": wall,
        "stages": outputs.stages,
        "outputs": [
            {"file": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
            for name, data in sorted(outputs.files.items())
        ],
    }


# ---------------------------------------------------------------------------
# helpers shared by commands


def _convex(name):
    from .convex import make_builtin

    return None if name is None else make_builtin(name)


def _load_map(p, label):
    from .mesh import load_map

    return load_map(p["mesh_file"], p["values_file"], label)


def _volume_fixture(p, rng):
    from . import fixtures
    from .counterexamples import build_cavity_map
    from .mesh import build_box_mesh

    name, n, res = p["map"], int(p["n"]), int(p["resolution"])
    if p.get("mesh_file"):
        return _load_map(p, name)
    if name == "identity":
        return fixtures.identity_map(build_box_mesh(n, res))
    if name == "cavity":
        return build_cavity_map(n, res)
    if name == "bubble-escape":
        return fixtures.bubble_escape_map(res)
    if name == "shear":
        return fixtures.shear_map(n, res)
    if name == "random-homeomorphism":
        return fixtures.random_pl_homeomorphism(n, res, rng)
    raise ConfigError(f"unknown map {name!r}")


def _save_map_files(outputs: Outputs, fmap, stem: str) -> None:
    from .mesh import save_map

    with tempfile.TemporaryDirectory() as d:
        mp, vp = Path(d) / "m", Path(d) / "v"
        save_map(fmap, mp, vp)
        outputs.files[f"{stem}_mesh.txt"] = mp.read_bytes()
        outputs.files[f"{stem}_values.txt"] = vp.read_bytes()


# ---------------------------------------------------------------------------
# commands


def cmd_degree(cfg: ExperimentConfig, out: Outputs) -> int:
    from . import fixtures
    from .degree import degree_pl

    p = cfg.params
    n, r = int(p["n"]), int(p["refinement"])
    builders = {
        "identity": fixtures.sphere_identity,
        "angle-doubling": fixtures.angle_doubling_map,
        "reflection": fixtures.reflected_sphere_map,
    }
    if p["mesh_file"]:
        bmap = _load_map(p, "loaded")
    elif p["map"] == "random-circle":
        bmap = fixtures.random_circle_map(stream(cfg.seed, "cli-degree"), 4 * 2**r)
    elif p["map"] in builders:
        bmap = builders[p["map"]](n, r)
    else:
        raise ConfigError(f"unknown map {p['map']!r}")
    pts = p["points"]
    if pts is None:
        pts = [[0.0] * bmap.mesh.n, [2.0] + [0.0] * (bmap.mesh.n - 1)]
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != bmap.mesh.n:
        raise ConfigError("points must be a list of n-vectors")
    rows = [(*y, degree_pl(bmap, y)) for y in pts]
    out.csv("degree.csv", [f"y{i + 1}" for i in range(bmap.mesh.n)] + ["degree"], rows)
    out.say("point\tdegree")
    for row in rows:
        out.say(f"{tuple(float(v) for v in row[:-1])}\t{row[-1]}")
    return EXIT_OK


def cmd_inv_check(cfg: ExperimentConfig, out: Outputs) -> int:
    from .inv import check_inv_radii

    p = cfg.params
    rng = stream(cfg.seed, "cli-inv")
    fmap = _volume_fixture(p, rng)
    lo, hi = fmap.mesh.vertices.min(axis=0), fmap.mesh.vertices.max(axis=0)
    center = np.asarray(p["center"] if p["center"] is not None else (lo + hi) / 2, dtype=float)
    r_max = p["r_max"] if p["r_max"] is not None else float(np.min(np.minimum(center - lo, hi - center)))
    reports = check_inv_radii(
        fmap, tuple(center), float(r_max), p["radii"], int(p["samples"]), cfg.seed,
        skip_cells=cfg.tolerances["skip_cells"],
    )
    out.json("inv_report.json", {"map": fmap.label, "reports": [r.as_dict() for r in reports]})
    n = fmap.mesh.n
    out.csv(
        "violations.csv",
        ["radius"] + [f"x{i + 1}" for i in range(n)],
        [(r.ball.radius, *pt) for r in reports for pt in r.violation_points],
    )
    out.say("radius\tinside\toutside\tskipped")
    for r in reports:
        out.say(f"{r.ball.radius:.4g}\t{r.inside_violations}\t{r.outside_violations}\t{r.inside_skipped + r.outside_skipped}")
    total = sum(r.violations for r in reports)
    out.say(f"{len(reports)} radii, {total} violations")
    return EXIT_OK


def cmd_cap_solve(cfg: ExperimentConfig, out: Outputs) -> int:
    from .caps import make_cap_problem, oscillation_check, solve_cap

    p = cfg.params
    rng = stream(cfg.seed, "cli-cap")
    if p["data"] == "random":
        data = lambda x: rng.standard_normal((len(x), len(x[0])))
    elif p["data"] == "identity":
        data = lambda x: np.array(x, copy=True)
    else:
        raise ConfigError("data must be 'random' or 'identity'")
    axis = np.asarray(p["axis"], dtype=float)
    prob = make_cap_problem(np.zeros(len(axis)), 1.0, axis, float(p["angle"]), data, int(p["refinement"]), int(p["layers"]), float(p["p"]))
    sol = solve_cap(prob, tol=cfg.tolerances["solver"])
    lhs, rhs, ok = oscillation_check(sol, prob)
    out.text("cap_problem.json", prob.to_json() + "\n")
    out.text("cap_solution.json", sol.to_json() + "\n")
    out.json("cap_summary.json", {"iterations": sol.iterations, "energy": sol.energy, "oscillation": [lhs, rhs], "oscillation_ok": ok})
    out.say(f"iterations {sol.iterations}, energy {float(sol.energy.sum()):.6g}, oscillation {lhs:.4g} <= {rhs:.4g}: {ok}")
    return EXIT_OK


def _cantor_params(p):
    from .counterexamples import CantorSchemeParams

    return CantorSchemeParams(alpha=float(p["alpha"]), n=int(p["n"]), K=int(p["K"]), p=p["p"], beta=p["beta"])


def cmd_ponomarev(cfg: ExperimentConfig, out: Outputs) -> int:
    from .counterexamples import build_ponomarev, energy_of_ponomarev

    p = cfg.params
    params = _cantor_params(p)
    pm = build_ponomarev(params)
    exp = params.p if params.p is not None else params.n - 1
    rep = energy_of_ponomarev(pm, exp, _convex("power_A"), _convex("phi_identityish"), int(p["resolution"]))
    out.json(
        "ponomarev.json",
        _finite(
            {
                "params": {"alpha": params.alpha, "n": params.n, "K": params.K, "p": params.p, "beta": params.beta},
                "source_cantor_measure": params.source_measure(),
                "target_cantor_measure": params.target_measure(),
                "energy": rep.as_dict(),
                "warnings": pm.warnings,
            }
        ),
    )
    if p["save_mesh"]:
        _save_map_files(out, pm.to_pl(int(p["resolution"])), "ponomarev")
    out.say(f"source measure {params.source_measure():.6g}, target measure {params.target_measure():.6g}")
    return EXIT_OK


def cmd_lsc(cfg: ExperimentConfig, out: Outputs) -> int:
    from .counterexamples import lsc_gap_experiment

    p = cfg.params
    params = _cantor_params(p)
    rep = lsc_gap_experiment(params, [int(m) for m in p["m_list"]], int(p["resolution"]), A=_convex(p["A"]), phi=_convex(p["phi"]))
    out.json("lsc.json", _finite(rep))
    out.csv("lsc.csv", ["m", "frame_jacobian_integral", "jac_min"], [(r["m"], r["frame_jacobian_integral"], r["jac_min"]) for r in rep["rows"]])
    out.say(f"common value {rep['common_value']:.12g}, limit {rep['limit_value']:.12g}, gap {rep['gap']:.6g}")
    return EXIT_OK


def _model(p, n):
    from .variational import e_model, f_model, g_model, standard_polyconvex

    phi, A = _convex(p["phi"]), _convex(p["A"])
    kind = p["model"]
    if kind == "F_model":
        return f_model(n, phi, A)
    if kind == "G_model":
        return g_model(n, phi)
    if kind == "E_polyconvex":
        return e_model(n, standard_polyconvex(n, phi, A), phi, A)
    raise ConfigError(f"unknown model {kind!r}")


def cmd_minimize(cfg: ExperimentConfig, out: Outputs) -> int:
    from .fixtures import shear_values
    from .mesh import build_box_mesh, load_map
    from .variational import MinimizeOptions, minimize

    p = cfg.params
    n = int(p["n"])
    if p["boundary_map_file"]:
        if not p["mesh"]:
            raise ConfigError("boundary_map_file needs mesh")
        f0 = load_map(p["mesh"], p["boundary_map_file"], "boundary")
        n = f0.mesh.n
    else:
        mesh = build_box_mesh(n, int(p["resolution"]))
        if p["boundary"] == "shear":
            Y = shear_values(mesh.vertices, float(p["amplitude"]))
        elif p["boundary"] == "identity":
            Y = mesh.vertices.copy()
        else:
            raise ConfigError("boundary must be 'shear' or 'identity'")
        from .mesh import PiecewiseAffineMap

        f0 = PiecewiseAffineMap(mesh, Y, p["boundary"])
        noise = float(p["start_noise"])
        if noise > 0:
            rng = stream(cfg.seed, "cli-minimize-start")
            inner = ~mesh.boundary_vertex_mask
            d = rng.uniform(-1, 1, Y.shape)
            for _ in range(60):
                Z = Y.copy()
                Z[inner] += noise * d[inner]
                if f0.with_values(Z).jacobians.min() > 0:
                    f0 = f0.with_values(Z, "start")
                    break
                noise *= 0.5
    o = dict(p["options"])
    if cfg.tolerances.get("descent") is not None:
        o["tol"] = cfg.tolerances["descent"]
    opts = MinimizeOptions(
        max_iter=int(o["max_iter"]), tol=float(o["tol"]), step0=float(o["step0"]), seed=cfg.seed,
        inv_balls=int(o["inv_balls"]), inv_samples=int(o["inv_samples"]),
    )
    res = minimize(_model(p, n), f0, opts)
    out.csv("energy_trace.csv", ["iteration", "energy", "jac_min"], [(i, e, j) for i, (e, j) in enumerate(zip(res.energy_trace, res.jac_min_trace))])
    out.json("inv_report.json", [r.as_dict() for r in res.inv_reports])
    out.json("minimize.json", _finite(res.summary()))
    _save_map_files(out, res.final_map, "final")
    out.say(f"{res.iterations} iterations, energy {res.energy_trace[0]:.8g} -> {res.energy_trace[-1]:.8g}, inv violations {res.inv_violations}")
    return EXIT_OK


def cmd_energy(cfg: ExperimentConfig, out: Outputs) -> int:
    from .variational import energy

    p = cfg.params
    fmap = _volume_fixture(p, stream(cfg.seed, "cli-energy"))
    rep = energy(fmap, _model(p, fmap.mesh.n))
    out.json("energy.json", _finite(rep.as_dict()))
    out.say(f"total {rep.total if rep.feasible else 'infinite'}")
    return EXIT_OK


def cmd_suite(cfg: ExperimentConfig, out: Outputs) -> int:
    from .acceptance import run_suite

    p = cfg.params
    results = run_suite(cfg.seed, p["only"], bool(p["coarse"]))
    rows = []
    for r in results:
        out.stage(f"criterion_{r.number}", r.seconds)
        out.say(r.line())
        d = r.as_dict()
        d.pop("seconds")
        rows.append(d)
    out.json("suite.json", rows)
    out.csv("suite.csv", ["criterion", "passed"], [(r.number, r.passed) for r in results])
    return EXIT_OK if all(r.passed and r.within_time for r in results) else EXIT_SUITE


COMMANDS = {
    "degree": cmd_degree,
    "inv-check": cmd_inv_check,
    "cap-solve": cmd_cap_solve,
    "ponomarev": cmd_ponomarev,
    "lsc": cmd_lsc,
    "minimize": cmd_minimize,
    "energy": cmd_energy,
    "suite": cmd_suite,
}


def run(cfg: ExperimentConfig, stdout=None) -> tuple[int, dict | None]:
    """Execute one command; returns the exit code and the manifest."""
    stdout = stdout or sys.stdout
    outputs = Outputs()
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        code = COMMANDS[cfg.command](cfg, outputs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC, None
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO, None
    wall = time.perf_counter() - t0
    outputs.stage("total", wall)
    manifest = _manifest(cfg, outputs, started, wall)
    files = dict(outputs.files)
    files["manifest.json"] = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
    try:
        write_atomically(Path(cfg.output_dir), files)
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO, None
    for line in outputs.lines:
        print(line, file=stdout)
    return code, manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="invlab", description="Degree, INV and energy experiments on PL maps.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with command parameters")
    common.add_argument("--seed", type=int, default=0, help="64-bit seed for all random draws")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="recorded in the manifest")
    common.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE", help="tolerance override")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    raw = None
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except OSError as exc:
            print(f"I/O failure: {exc}", file=sys.stderr)
            return EXIT_IO
        if not isinstance(raw, dict):
            print("config error: config must be a JSON object", file=sys.stderr)
            return EXIT_CONFIG
    try:
        cfg = resolve_config(args.command, raw, args.seed, args.out, args.tol, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, _ = run(cfg)
    return code


if __name__ == "__main__":
    sys.exit(main())
