"""Command-line entry point: problem generation, solving, and validation.

Experiments are described by a JSON config file (schema below); scalar
fields can be overridden with flags.  Exit codes: 0 success, 1 configuration
error, 2 solver failure, 3 diagnostic failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .errors import BilevelError, ConfigError
from .harness import (
    ExperimentSpec,
    SolverRun,
    load_csv_matrix,
    make_linear_inverse,
    make_min_norm_synthetic,
    make_regression_problem,
    run_diagnostics,
    run_experiment,
    _min_norm_data,
)
from .oracles import BilevelProblem, SmoothOracle, smooth_part

_SOLVER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["method"],
    "properties": {
        "method": {"enum": ["agm-bio", "r-apm", "pb-apg"]},
        "label": {"type": "string"},
        "gamma_policy": {"enum": ["compact", "holderian", "weak_sharp", "manual"]},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "r": {"type": "number", "minimum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "M": {"type": "number", "exclusiveMinimum": 0},
        "aux_mode": {"enum": ["per_iteration", "constant_last"]},
        "K": {"type": "integer", "minimum": 1},
        "eta": {"type": "number", "minimum": 0},
        "penalty": {"type": "number", "minimum": 0},
        "x0": {"type": "array", "items": {"type": "number"}},
        "dump_aux": {"type": "boolean"},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "seed", "K", "output_dir", "solvers"],
    "properties": {
        "name": {"type": "string"},
        "kind": {"enum": ["linear_inverse", "min_norm", "regression"]},
        "problem": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0},
        "K": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "x0": {
            "oneOf": [
                {"enum": ["origin", "random_nonneg"]},
                {"type": "array", "items": {"type": "number"}},
            ]
        },
        "solvers": {"type": "array", "minItems": 1, "items": _SOLVER_SCHEMA},
    },
}

_PROBLEM_KEYS = {
    "linear_inverse": {"n", "alpha", "corrupt_gradient"},
    "min_norm": {"m", "d", "radius_mult", "problem_seed"},
    "regression": {"data", "has_header", "outcome_col", "train_frac", "radius"},
}


def _schema_error_path(err: jsonschema.ValidationError) -> str:
    parts = []
    for p in err.absolute_path:
        if isinstance(p, int):
            parts.append(f"[{p}]")
        else:
            parts.append(("." if parts else "") + str(p))
    return "".join(parts) or "<root>"


def validate_config(cfg: dict) -> None:
    """Schema validation plus the policy-conditional requirements."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(err.message, key=_schema_error_path(err))

    kind = cfg["kind"]
    allowed = _PROBLEM_KEYS[kind]
    problem_cfg = cfg.get("problem", {})
    for key in problem_cfg:
        if key not in allowed:
            raise ConfigError(
                f"unknown key for kind {kind!r}", key=f"problem.{key}"
            )
    if kind == "regression" and "data" not in problem_cfg:
        raise ConfigError("regression needs a data CSV path", key="problem.data")

    for i, solver in enumerate(cfg["solvers"]):
        policy = solver.get("gamma_policy", "compact")
        where = f"solvers[{i}]"
        if solver["method"] != "agm-bio":
            for key in ("gamma_policy", "gamma", "r", "alpha", "M", "aux_mode", "dump_aux"):
                if key in solver:
                    raise ConfigError(
                        f"{key} only applies to agm-bio", key=f"{where}.{key}"
                    )
            continue
        if policy == "holderian" and "r" not in solver:
            raise ConfigError("holderian policy requires r", key=f"{where}.r")
        if policy == "manual" and "gamma" not in solver:
            raise ConfigError("manual policy requires gamma", key=f"{where}.gamma")
        if policy == "weak_sharp":
            for key in ("alpha", "M"):
                if key not in solver:
                    raise ConfigError(
                        f"weak_sharp policy requires {key}", key=f"{where}.{key}"
                    )


def _corrupt_upper_gradient(problem: BilevelProblem) -> BilevelProblem:
    # Test fixture: doubles the upper gradient so cmd_check's gradient
    # validation has a negative control reachable from a config file.
    up = smooth_part(problem.upper)
    broken = SmoothOracle(
        value=up.value,
        gradient=lambda x: 2.0 * np.asarray(up.gradient(x), dtype=float),
        lipschitz=up.lipschitz,
    )
    return BilevelProblem(
        upper=broken, lower=problem.lower, set=problem.set,
        truth=None, holder=problem.holder,
    )


def build_experiment(cfg: dict) -> ExperimentSpec:
    """Materialize the problem and solver list described by a config."""
    kind = cfg["kind"]
    pc = dict(cfg.get("problem", {}))
    seed = cfg["seed"]
    params = {}

    if kind == "linear_inverse":
        n = int(pc.get("n", 3))
        problem = make_linear_inverse(n, alpha=float(pc.get("alpha", 1.0)))
        params.update(n=n)
        default_x0 = "random_nonneg"
    elif kind == "min_norm":
        m = int(pc.get("m", 5))
        d = int(pc.get("d", 10))
        radius_mult = float(pc.get("radius_mult", 2.0))
        problem_seed = int(pc.get("problem_seed", seed))
        problem = make_min_norm_synthetic(m, d, radius_mult, problem_seed)
        params.update(m=m, d=d, radius_mult=radius_mult, seed=problem_seed)
        default_x0 = "origin"
    else:  # regression
        data = load_csv_matrix(pc["data"], has_header=bool(pc.get("has_header", False)))
        outcome = pc.get("outcome_col", "random")
        if outcome == "random":
            rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
            outcome = int(rng.integers(data.shape[1]))
        problem = make_regression_problem(
            data, int(outcome),
            float(pc.get("train_frac", 0.75)), float(pc.get("radius", 1.0)), seed,
        )
        params.update(outcome_col=int(outcome), rows=int(data.shape[0]))
        default_x0 = "origin"

    if pc.get("corrupt_gradient"):
        problem = _corrupt_upper_gradient(problem)

    x0_cfg = cfg.get("x0", default_x0)
    if isinstance(x0_cfg, list):
        x0_mode = "explicit"
        params["x0"] = [float(v) for v in x0_cfg]
    else:
        x0_mode = x0_cfg

    solvers = []
    for s in cfg["solvers"]:
        solvers.append(SolverRun(
            method=s["method"],
            label=s.get("label"),
            gamma_regime=s.get("gamma_policy", "compact"),
            gamma=s.get("gamma"),
            r=s.get("r"),
            alpha=s.get("alpha"),
            M=s.get("M"),
            aux_mode=s.get("aux_mode", "per_iteration"),
            K=s.get("K"),
            eta=s.get("eta"),
            penalty=s.get("penalty"),
            x0=np.asarray(s["x0"], dtype=float) if "x0" in s else None,
            dump_aux=bool(s.get("dump_aux", False)),
        ))

    return ExperimentSpec(
        name=cfg.get("name", kind),
        problem=problem,
        solvers=solvers,
        K=int(cfg["K"]),
        seed=seed,
        output_dir=Path(cfg["output_dir"]),
        kind=kind,
        params=params,
        x0_mode=x0_mode,
    )


def _load_config(path: str, args) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        cfg["output_dir"] = args.out
    validate_config(cfg)
    return cfg


def cmd_solve(args) -> int:
    cfg = _load_config(args.config, args)
    spec = build_experiment(cfg)
    run_experiment(spec)
    with open(spec.output_dir / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    failed = False
    for label, entry in manifest["results"].items():
        if entry["error"] is not None:
            failed = True
            print(f"{label}: FAILED ({entry['error']})")
            continue
        final = entry["final"]
        if final.get("f_gap") is not None:
            print(
                f"{label}: f_gap={final['f_gap']:.6e} g_gap={final['g_gap']:.6e}"
            )
        else:
            print(f"{label}: f_val={final['f_val']:.6e} g_val={final['g_val']:.6e}")
    return 2 if failed else 0


def cmd_check(args) -> int:
    cfg = _load_config(args.config, args)
    spec = build_experiment(cfg)
    checks = run_diagnostics(spec)
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name:<{width}}  {c.detail}")
    return 0 if all(c.passed for c in checks) else 3


def _write_matrix(path: Path, mat: np.ndarray) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "linear_inverse":
        n = args.n
        A = np.ones((1, n))
        b = np.ones(1)
        x_star = np.full(n, 1.0 / n)
        truth = {"x_star": list(x_star), "f_star": 1.0 / (2.0 * n), "g_star": 0.0}
    elif args.kind == "min_norm":
        A, b, x_star, used_seed = _min_norm_data(args.m, args.d, args.seed or 0)
        truth = {
            "x_star": [float(v) for v in x_star],
            "f_star": 0.5 * float(x_star @ x_star),
            "g_star": 0.5 * float(np.linalg.norm(A @ x_star - b)) ** 2,
            "seed": used_seed,
        }
    else:
        print(f"unsupported kind {args.kind!r} (choose linear_inverse or min_norm)",
              file=sys.stderr)
        return 1
    _write_matrix(out / "A.csv", A)
    _write_matrix(out / "b.csv", b.reshape(-1, 1))
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote A.csv, b.csv, truth.json to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilevel-agm",
        description="Accelerated cutting-plane solvers for simple bilevel optimization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run the solvers described by a config file")
    p_solve.add_argument("config", help="JSON experiment config")
    p_solve.add_argument("--seed", type=int, help="override the config seed")
    p_solve.add_argument("--out", help="override the output directory")
    p_solve.set_defaults(func=cmd_solve)

    p_check = sub.add_parser("check", help="run the diagnostic certificate suite")
    p_check.add_argument("config", help="JSON experiment config")
    p_check.add_argument("--seed", type=int, help="override the config seed")
    p_check.add_argument("--out", help="override the output directory")
    p_check.set_defaults(func=cmd_check)

    p_gen = sub.add_parser("gen", help="write a synthetic problem's data and truth sidecar")
    p_gen.add_argument("kind", help="linear_inverse or min_norm")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--n", type=int, default=3, help="dimension (linear_inverse)")
    p_gen.add_argument("--m", type=int, default=5, help="rows (min_norm)")
    p_gen.add_argument("--d", type=int, default=10, help="columns (min_norm)")
    p_gen.add_argument("--seed", type=int, default=0, help="generator seed (min_norm)")
    p_gen.set_defaults(func=cmd_gen)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        where = f" at {exc.key}" if exc.key else ""
        print(f"configuration error{where}: {exc}", file=sys.stderr)
        return 1
    except BilevelError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
