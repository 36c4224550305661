"""Command-line entry point: JSON configs in, JSON reports and CSV tables out.

Exit codes: 0 pass, 1 numerical check failed, 2 configuration or I/O
error, 3 request outside the supported scope, 4 ambiguous result.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import report
from .forward import (
    FARFIELD_TOL,
    BoundaryCondition,
    DirectionGrid,
    FarFieldPattern,
    PlaneWave,
    SolveError,
    SolveOptions,
    far_field,
    read_far_field,
    solve,
    write_far_field,
)
from .geometry import (
    StarShape,
    StarShapeError,
    as_direction,
    direction_from_angles,
    read_shape,
    shape_perturb,
    shape_sphere,
    write_shape,
)
from .identities import (
    LEMMA5_OPTS,
    ObstaclePair,
    OutOfScopeError,
    RaySpec,
    check_farfield_expansion,
    check_lemma1,
    check_lemma2,
    check_lemma5,
    check_reciprocity,
    preset_family,
    random_direction_pairs,
    uniqueness_gap_scan,
)
from .inverse import InverseProblem, classify_boundary_condition, reconstruct_shape
from .mie import SeriesTruncationError, mie_coefficients, mie_far_field_directions
from .specialfn import real_sph_harm

logger = logging.getLogger(__name__)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_SCOPE, EXIT_AMBIGUOUS = 0, 1, 2, 3, 4
RESOLUTION = {"low": 0.5, "default": 1.0, "high": 2.0}
VERIFY_CHECKS = ("lemma1", "lemma2", "lemma5", "reciprocity", "expansion14")


class ConfigError(Exception):
    pass


# --- schemas --------------------------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}

DEFS = {
    "vec3": _VEC3,
    "direction": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 3},
    "bc": {
        "type": "object",
        "properties": {"type": {"enum": ["dirichlet", "neumann", "impedance"]},
                       "h": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
        "required": ["type"],
        "additionalProperties": False,
    },
    "shape": {
        "anyOf": [
            {"type": "object", "properties": {"file": {"type": "string"}},
             "required": ["file"], "additionalProperties": False},
            {"type": "object",
             "properties": {"lmax": {"type": "integer", "minimum": 0},
                            "coeffs": {"type": "array", "items": _NUM, "minItems": 1},
                            "center": _VEC3},
             "required": ["lmax", "coeffs"], "additionalProperties": False},
            {"type": "object",
             "properties": {
                 "sphere": {"type": "object",
                            "properties": {"radius": _POS, "center": _VEC3},
                            "required": ["radius"], "additionalProperties": False},
                 "perturb": {"type": "array",
                             "items": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}}},
             "required": ["sphere"], "additionalProperties": False},
        ]
    },
    "solver": {
        "type": "object",
        "properties": {"n_sources": {"type": "integer", "minimum": 1},
                       "dilation": _POS, "oversampling": _POS, "rcond": _POS, "tol": _POS},
        "additionalProperties": False,
    },
    "grid": {
        "type": "object",
        "properties": {"n_theta": {"type": "integer", "minimum": 2},
                       "n_phi": {"type": "integer", "minimum": 1}},
        "required": ["n_theta", "n_phi"],
        "additionalProperties": False,
    },
}


def _schema(properties: dict, required: list[str]) -> dict:
    return {
        "$defs": DEFS,
        "type": "object",
        "properties": properties,
        "required": required,
        "additionalProperties": False,
    }


def _ref(name: str) -> dict:
    return {"$ref": f"#/$defs/{name}"}


_COMMON = {"k": _POS, "solver": _ref("solver")}

SCHEMAS = {
    "forward": _schema({**_COMMON, "shape": _ref("shape"), "alpha": _ref("direction"), "bc": _ref("bc"),
                        "grid": _ref("grid"), "output": {"type": "string"}},
                       ["shape", "k", "alpha", "bc"]),
    "mie": _schema({"k": _POS, "radius": _POS, "center": _ref("vec3"), "alpha": _ref("direction"),
                    "bc": _ref("bc"), "grid": _ref("grid"), "lmax": {"type": "integer", "minimum": 0},
                    "output": {"type": "string"}},
                   ["radius", "k", "alpha", "bc"]),
    "lemma1": _schema({**_COMMON, "shape": _ref("shape"), "bc": _ref("bc"), "x": _ref("vec3"),
                       "alpha0": _ref("direction"), "eta": _ref("vec3"),
                       "tau_values": {"type": "array", "items": _POS, "minItems": 3}},
                      ["bc", "k", "x", "alpha0", "tau_values"]),
    "lemma2": _schema({**_COMMON, "shape1": _ref("shape"), "shape2": _ref("shape"), "bc1": _ref("bc"),
                       "bc2": _ref("bc"), "alpha": _ref("direction"), "beta": _ref("direction"),
                       "n_theta": {"type": "integer", "minimum": 8}},
                      ["shape1", "shape2", "bc1", "bc2", "k", "alpha", "beta"]),
    "lemma5": _schema({**_COMMON, "shape": _ref("shape"),
                       "f": {"anyOf": [
                           {"type": "object", "properties": {"constant": _NUM},
                            "required": ["constant"], "additionalProperties": False},
                           {"type": "object",
                            "properties": {"harmonic": {"type": "array", "items": {"type": "integer"},
                                                        "minItems": 2, "maxItems": 2}},
                            "required": ["harmonic"], "additionalProperties": False}]},
                       "foot": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                       "distances": {"type": "array", "items": _POS, "minItems": 3},
                       "cap_radius": _POS},
                      ["shape", "k", "f"]),
    "reciprocity": _schema({**_COMMON, "shape": _ref("shape"), "bc": _ref("bc"),
                            "n_pairs": {"type": "integer", "minimum": 5}, "seed": {"type": "integer"}},
                           ["shape", "bc", "k"]),
    "expansion14": _schema({**_COMMON, "shape": _ref("shape"), "bc": _ref("bc"), "alpha": _ref("direction"),
                            "beta": _ref("direction"), "radii": {"type": "array", "items": _POS, "minItems": 3}},
                           ["bc", "k", "alpha", "beta", "radii"]),
    "gapscan": _schema({**_COMMON, "truth": _ref("shape"), "bc": _ref("bc"), "alpha": _ref("direction"),
                        "preset": {"enum": ["theorem1", "theorem2", "theorem3"]},
                        "params": {"type": "array", "minItems": 1},
                        "grid": _ref("grid"), "tolerance": _POS},
                       ["truth", "bc", "k", "alpha", "preset", "params"]),
    "invert": _schema({"data": {"type": "string"}, "init": _ref("shape"),
                       "lmax_recon": {"type": "integer", "minimum": 0},
                       "bc_hypothesis": _ref("bc"), "lambda0": _POS,
                       "max_iters": {"type": "integer", "minimum": 1}, "step_tol": _POS,
                       "residual_tol": _POS, "solver": _ref("solver"), "classify": {"type": "boolean"}},
                      ["data", "init"]),
    "classify-bc": _schema({"data": {"type": "string"}, "shape": _ref("shape"), "solver": _ref("solver")},
                           ["data", "shape"]),
}


# --- config interpretation ------------------------------------------------------------------


class Context:
    """Parsed command line: config dict, output directory and resolution factor."""

    def __init__(self, config: dict, config_dir: Path, out: Path, resolution: str):
        self.config = config
        self.config_dir = config_dir
        self.out = out
        self.factor = RESOLUTION[resolution]
        self.resolution = resolution

    def path(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.config_dir / p

    def shape(self, spec: dict) -> StarShape:
        if "file" in spec:
            return read_shape(self.path(spec["file"]))
        if "sphere" in spec:
            s = spec["sphere"]
            shape = shape_sphere(s["radius"], s.get("center", (0.0, 0.0, 0.0)))
            for l, m, delta in spec.get("perturb", []):
                shape = shape_perturb(shape, int(l), int(m), float(delta))
            return shape
        return StarShape.from_dict(spec)

    def opts(self, base: SolveOptions | None = None) -> SolveOptions:
        fields = dict(self.config.get("solver", {}))
        base = base or SolveOptions()
        return replace(base, **fields).scaled(self.factor)

    def write(self, name: str, obj) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        p.write_text(report.dumps(obj) + "\n")
        return p


def direction(v) -> np.ndarray:
    if len(v) == 2:
        return direction_from_angles(float(v[0]), float(v[1]))
    return as_direction(v)


def boundary_condition(spec: dict) -> BoundaryCondition:
    return BoundaryCondition.from_dict(spec)


def _grid(cfg: dict, default=(32, 64)) -> DirectionGrid:
    g = cfg.get("grid", {"n_theta": default[0], "n_phi": default[1]})
    return DirectionGrid.gauss(int(g["n_theta"]), int(g["n_phi"]))


def _status(passed: bool) -> int:
    return EXIT_PASS if passed else EXIT_FAIL


# --- commands -------------------------------------------------------------------------------


def cmd_forward(ctx: Context) -> int:
    cfg = ctx.config
    shape = ctx.shape(cfg["shape"])
    bc = boundary_condition(cfg["bc"])
    alpha = direction(cfg["alpha"])
    sol = solve(shape, bc, PlaneWave(alpha), cfg["k"], ctx.opts())
    pattern = far_field(sol, _grid(cfg))
    name = cfg.get("output", "far_field")
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_far_field(pattern, ctx.out / f"{name}.csv")
    ctx.write(f"{name}_report.json", {
        "check": "forward",
        "inputs": {**cfg, "resolution": ctx.resolution},
        "outputs": {"boundary_residual": sol.boundary_residual,
                    "condition_estimate": sol.condition_estimate,
                    "n_sources": len(sol.sources), "rows": len(pattern.values)},
        "residuals": [sol.boundary_residual],
        "slope": None,
        "pass": True,
        "tolerance": ctx.opts().tol,
    })
    return EXIT_PASS


def cmd_mie(ctx: Context) -> int:
    cfg = ctx.config
    bc = boundary_condition(cfg["bc"])
    alpha = direction(cfg["alpha"])
    center = np.asarray(cfg.get("center", [0.0, 0.0, 0.0]), dtype=float)
    series = mie_coefficients(cfg["radius"], cfg["k"], bc, cfg.get("lmax"), center)
    grid = _grid(cfg)
    values = mie_far_field_directions(series, grid.directions, alpha)
    name = cfg.get("output", "mie")
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_far_field(FarFieldPattern(grid, values, alpha, cfg["k"], bc), ctx.out / f"{name}.csv")
    ctx.write(f"{name}_report.json", {
        "check": "mie",
        "inputs": cfg,
        "outputs": {"lmax_used": series.lmax_used, "rows": len(values)},
        "residuals": [],
        "slope": None,
        "pass": True,
        "tolerance": None,
    })
    return EXIT_PASS


def _lemma5_data(spec: dict):
    if "constant" in spec:
        c = float(spec["constant"])
        return lambda theta, phi, pts: np.full(np.shape(theta), c)
    l, m = spec["harmonic"]
    return lambda theta, phi, pts: real_sph_harm(int(l), int(m), theta, phi)


def cmd_verify(ctx: Context, which: str) -> int:
    cfg = ctx.config
    k = cfg["k"]
    inputs = {**cfg, "resolution": ctx.resolution}
    if which == "lemma1":
        shape = ctx.shape(cfg["shape"]) if "shape" in cfg else None
        ray = RaySpec(direction(cfg["alpha0"]), cfg.get("eta", [0.0, 0.0, 0.0]), cfg["tau_values"])
        rep = check_lemma1(shape, boundary_condition(cfg["bc"]), k, cfg["x"], ray, ctx.opts())
        out = rep.to_report("lemma1", inputs)
    elif which == "expansion14":
        shape = ctx.shape(cfg["shape"]) if "shape" in cfg else None
        rep = check_farfield_expansion(shape, boundary_condition(cfg["bc"]), k, direction(cfg["alpha"]),
                                       direction(cfg["beta"]), cfg["radii"], ctx.opts())
        out = rep.to_report("expansion14", inputs)
        if shape is None:
            out["pass"] = bool(np.max(rep.residuals) <= 1e-15)
    elif which == "lemma2":
        pair = ObstaclePair(ctx.shape(cfg["shape1"]), ctx.shape(cfg["shape2"]),
                            boundary_condition(cfg["bc1"]), boundary_condition(cfg["bc2"]))
        n_theta = int(math.ceil(cfg.get("n_theta", 40) * ctx.factor))
        res = check_lemma2(pair, k, direction(cfg["alpha"]), direction(cfg["beta"]), n_theta, ctx.opts())
        out = res.to_report({**inputs, "relation": pair.relation})
    elif which == "lemma5":
        kwargs = {}
        if "foot" in cfg:
            kwargs["foot"] = tuple(cfg["foot"])
        if "distances" in cfg:
            kwargs["distances"] = tuple(cfg["distances"])
        if "cap_radius" in cfg:
            kwargs["cap_fraction_radius"] = cfg["cap_radius"]
        res = check_lemma5(ctx.shape(cfg["shape"]), k, _lemma5_data(cfg["f"]),
                           opts=ctx.opts(LEMMA5_OPTS), **kwargs)
        out = res.to_report(inputs)
    elif which == "reciprocity":
        pairs = random_direction_pairs(cfg.get("n_pairs", 5), cfg.get("seed", 0))
        res = check_reciprocity(ctx.shape(cfg["shape"]), boundary_condition(cfg["bc"]), k, pairs, ctx.opts())
        out = res.to_report(inputs)
    else:
        raise ConfigError(f"unknown check {which!r}")
    ctx.write(f"{which}.json", out)
    print(f"{which}: {'pass' if out['pass'] else 'FAIL'}")
    return _status(out["pass"])


def cmd_gapscan(ctx: Context) -> int:
    cfg = ctx.config
    truth = ctx.shape(cfg["truth"])
    bc = boundary_condition(cfg["bc"])
    tol = cfg.get("tolerance", FARFIELD_TOL)
    params = cfg["params"]
    if cfg["preset"] == "theorem1":
        params = [tuple(p) for p in params]
    family, ids = preset_family(cfg["preset"], truth, params)
    rows = uniqueness_gap_scan(truth, bc, cfg["k"], direction(cfg["alpha"]), family,
                               _grid(cfg, (24, 48)), ctx.opts(), ids)
    ok = True
    for r in rows:
        if r.error is not None:
            ok = False
        elif r.d_shape > 0:
            ok &= r.d_ff > 10 * tol
        else:
            ok &= r.d_ff <= 2 * tol
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "gapscan.csv").write_text(
        report.table_csv(["shape_id", "d_shape", "d_ff"], [(r.shape_id, r.d_shape, r.d_ff) for r in rows]))
    ctx.write("gapscan.json", {
        "check": "gapscan",
        "inputs": {**cfg, "resolution": ctx.resolution},
        "outputs": {"rows": [{"shape_id": r.shape_id, "d_shape": r.d_shape, "d_ff": r.d_ff,
                              "error": r.error} for r in rows]},
        "residuals": [r.d_ff for r in rows],
        "slope": None,
        "pass": ok,
        "tolerance": tol,
    })
    print(f"gapscan: {'pass' if ok else 'FAIL'}")
    return _status(ok)


def _problem(ctx: Context, init: StarShape, lmax_recon: int) -> InverseProblem:
    cfg = ctx.config
    data = read_far_field(ctx.path(cfg["data"]))
    kwargs = {k: cfg[k] for k in ("lambda0", "max_iters", "step_tol", "residual_tol") if k in cfg}
    bc = boundary_condition(cfg["bc_hypothesis"]) if "bc_hypothesis" in cfg else None
    return InverseProblem(data, init, lmax_recon, bc, opts=ctx.opts(), **kwargs)


def cmd_invert(ctx: Context) -> int:
    cfg = ctx.config
    init = ctx.shape(cfg["init"])
    problem = _problem(ctx, init, cfg.get("lmax_recon", init.lmax))
    rep = reconstruct_shape(problem)
    code = _status(rep.converged)
    if cfg.get("classify", False):
        rep.bc_result = classify_boundary_condition(rep.final_shape, problem)
        if rep.bc_result.ambiguous:
            code = EXIT_AMBIGUOUS
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_shape(rep.final_shape, ctx.out / "recovered_shape.json")
    ctx.write("reconstruction_report.json", rep.to_dict())
    print(f"invert: {rep.status} after {rep.iterations} steps, misfit {rep.residual_history[-1]:.3e}")
    return code


def cmd_classify_bc(ctx: Context) -> int:
    cfg = ctx.config
    shape = ctx.shape(cfg["shape"])
    problem = _problem(ctx, shape, shape.lmax)
    res = classify_boundary_condition(shape, problem)
    out = res.to_dict()
    if res.ambiguous:
        out["bc"] = "ambiguous"
    ctx.write("classify_bc.json", out)
    print(f"classify-bc: {out['bc']}")
    return EXIT_AMBIGUOUS if res.ambiguous else EXIT_PASS


# --- argument parsing -----------------------------------------------------------------------


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="JSON configuration file")
    p.add_argument("--out", default=d if suppress else ".", help="output directory")
    p.add_argument("--resolution", choices=sorted(RESOLUTION), default=d if suppress else "default",
                   help="scales source count, collocation and check quadratures together")
    p.add_argument("-v", "--verbose", action="store_true", default=d if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="helmscat", description=__doc__.splitlines()[0])
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("forward", "mie", "gapscan", "invert", "classify-bc"):
        _add_globals(sub.add_parser(name), suppress=True)
    verify = sub.add_parser("verify")
    verify.add_argument("which", choices=VERIFY_CHECKS)
    _add_globals(verify, suppress=True)
    return parser


def load_config(path: str | None, schema_name: str) -> tuple[dict, Path]:
    if path is None:
        raise ConfigError("--config is required")
    p = Path(path)
    try:
        cfg = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {p}: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCHEMAS[schema_name])
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {loc}: {exc.message}") from exc
    return cfg, p.parent


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    schema_name = args.which if args.command == "verify" else args.command
    try:
        cfg, cfg_dir = load_config(args.config, schema_name)
        ctx = Context(cfg, cfg_dir, Path(args.out), args.resolution)
        if args.command == "forward":
            return cmd_forward(ctx)
        if args.command == "mie":
            return cmd_mie(ctx)
        if args.command == "verify":
            return cmd_verify(ctx, args.which)
        if args.command == "gapscan":
            return cmd_gapscan(ctx)
        if args.command == "invert":
            return cmd_invert(ctx)
        return cmd_classify_bc(ctx)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutOfScopeError as exc:
        print(f"out of scope: {exc}", file=sys.stderr)
        return EXIT_SCOPE
    except (SolveError, SeriesTruncationError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (StarShapeError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
