"""Experiment construction, trace persistence, and runtime diagnostics.

Builds the benchmark problems (over-parameterized regression from a CSV
matrix, the linear inverse problem, and a synthetic min-norm instance with
fully computable truth), runs configured solvers with a shared start point,
persists one CSV trace per solver plus a JSON manifest, and evaluates the
per-iteration theoretical certificates as pass/fail checks.

All randomness flows from the experiment seed through numpy's PCG64
generator; traces are bit-reproducible for a fixed seed on one platform.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .agm_bio import GammaPolicy, GammaRegime, SolverConfig, gamma_for, solve
from .aux_bound import AuxMode, run_lower_apg
from .baselines import pb_apg_solve, r_apm_solve
from .errors import BilevelError, ConfigError, ContractViolationError
from .geometry import Ball, NonnegOrthant
from .oracles import (
    BilevelProblem,
    HolderParams,
    Truth,
    check_gradient,
    least_squares_oracle,
    quadratic_norm_oracle,
    smooth_part,
)
from .trace import IterateTrace, TraceRecord

TRACE_COLUMNS = ["k", "wall_s", "f_val", "g_val", "f_gap", "abs_f_gap", "g_gap", "a_k", "A_k"]
TRACE_HEADER = ",".join(TRACE_COLUMNS)
FLUSH_EVERY = 100


# ---------------------------------------------------------------------------
# CSV ingestion


def load_csv_matrix(path, has_header: bool = False) -> np.ndarray:
    """Parse a rectangular numeric CSV into a float matrix.

    Ragged rows and non-numeric cells raise ContractViolationError carrying
    the 1-based line number.
    """
    path = Path(path)
    rows: List[List[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and has_header:
                continue
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ContractViolationError(
                    f"{path}:{lineno}: ragged row ({len(cells)} cells, expected {width})"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise ContractViolationError(f"{path}:{lineno}: non-numeric cell ({exc})")
    if not rows:
        raise ContractViolationError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


# ---------------------------------------------------------------------------
# Problem constructors


def split_rows(n_rows: int, train_frac: float, seed: int):
    """Seeded shuffle and split: floor(train_frac * rows) training rows."""
    if not (0.0 < train_frac < 1.0):
        raise ConfigError("train_frac must be in (0, 1)", key="train_frac")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    perm = rng.permutation(n_rows)
    n_train = int(math.floor(train_frac * n_rows))
    if n_train < 1 or n_train >= n_rows:
        raise ConfigError("split leaves an empty train or validation set", key="train_frac")
    return perm[:n_train], perm[n_train:]


def make_regression_problem(
    data: np.ndarray,
    outcome_col: int,
    train_frac: float,
    radius: float,
    seed: int,
) -> BilevelProblem:
    """Over-parameterized regression: training loss below, validation above.

    Rows are shuffled with the seed, split with floor(train_frac * rows)
    training rows; both levels are least-squares losses over a ball of the
    given radius.  Ground truth is unknown for this problem.
    """
    data = np.asarray(data, dtype=float)
    n_rows, n_cols = data.shape
    if not (0 <= outcome_col < n_cols):
        raise ConfigError(f"outcome_col {outcome_col} out of range", key="outcome_col")
    tr, va = split_rows(n_rows, train_frac, seed)
    b_all = data[:, outcome_col]
    A_all = np.delete(data, outcome_col, axis=1)
    lower = least_squares_oracle(A_all[tr], b_all[tr])
    upper = least_squares_oracle(A_all[va], b_all[va])
    return BilevelProblem(upper=upper, lower=lower, set=Ball(np.zeros(A_all.shape[1]), radius))


def make_linear_inverse(n: int, alpha: float = 1.0) -> BilevelProblem:
    """Min-norm recovery for the all-ones underdetermined system.

    f = 0.5 ||x||^2, g = 0.5 (sum x - 1)^2 over the nonnegative orthant;
    the solution is x* = (1/n) 1 with f* = 1/(2n), g* = 0.  The lower level
    has quadratic growth (order-2 error bound); M is the upper gradient norm
    at x*, and alpha is supplied by the caller (default 1).
    """
    if n < 1:
        raise ConfigError("n must be >= 1", key="n")
    A = np.ones((1, n))
    b = np.ones(1)
    lower = least_squares_oracle(A, b, lipschitz=float(n))
    upper = quadratic_norm_oracle(n)
    x_star = np.full(n, 1.0 / n)
    return BilevelProblem(
        upper=upper,
        lower=lower,
        set=NonnegOrthant(n),
        truth=Truth(x_star=x_star, g_star=0.0, f_star=1.0 / (2.0 * n)),
        holder=HolderParams(r=2.0, alpha=float(alpha), M=1.0 / math.sqrt(n)),
    )


def _min_norm_data(m: int, d: int, seed: int, max_attempts: int = 16):
    # Regenerates deterministically from the seed; bumps the seed when the
    # normal-equations system is too ill conditioned to trust the oracle.
    if not (m < d):
        raise ConfigError("min-norm synthesis requires m < d", key="m")
    attempt_seed = seed
    for _ in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence([attempt_seed, 0]))
        A = rng.standard_normal((m, d))
        x_seed = rng.standard_normal(d)
        b = A @ x_seed
        gram = A @ A.T
        cond = float(np.linalg.cond(gram))
        if cond < 1e10:
            x_star = A.T @ np.linalg.solve(gram, b)
            return A, b, x_star, attempt_seed
        warnings.warn(
            f"min-norm seed {attempt_seed} gives condition number {cond:.2e}; "
            "regenerating with the next seed"
        )
        attempt_seed += 1
    raise ConfigError("could not generate a well-conditioned min-norm instance", key="seed")


def make_min_norm_synthetic(
    m: int, d: int, radius_mult: float, seed: int
) -> BilevelProblem:
    """Seeded Gaussian min-norm instance with fully computable truth.

    g is the consistent least-squares loss, f = 0.5 ||x||^2; the minimum-norm
    solution comes from the normal equations (an oracle independent of any
    solver), and the feasible ball radius is radius_mult * ||x*|| so the
    optimum is interior.
    """
    if radius_mult <= 1.0:
        raise ConfigError("radius_mult must exceed 1", key="radius_mult")
    A, b, x_star, _ = _min_norm_data(m, d, seed)
    lower = least_squares_oracle(A, b)
    upper = quadratic_norm_oracle(d)
    radius = radius_mult * float(np.linalg.norm(x_star))
    # the system is consistent by construction, so the true optimum is exactly 0
    return BilevelProblem(
        upper=upper,
        lower=lower,
        set=Ball(np.zeros(d), radius),
        truth=Truth(x_star=x_star, g_star=0.0),
    )


# ---------------------------------------------------------------------------
# Trace persistence


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def format_record(rec: TraceRecord, dump_aux: bool = False) -> str:
    fields = [
        str(rec.k), _fmt(rec.wall_s), _fmt(rec.f_val), _fmt(rec.g_val),
        _fmt(rec.f_gap), _fmt(rec.abs_f_gap), _fmt(rec.g_gap),
        _fmt(rec.a_k), _fmt(rec.A_k),
    ]
    if dump_aux:
        fields.append(_fmt(rec.aux_g))
    return ",".join(fields)


class TraceWriter:
    """Streams trace rows to CSV, flushing every FLUSH_EVERY rows."""

    def __init__(self, path, dump_aux: bool = False):
        self.path = Path(path)
        self.dump_aux = dump_aux
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        header = TRACE_HEADER + (",aux_g" if dump_aux else "")
        self._fh.write(header + "\n")
        self._count = 0

    def write(self, rec: TraceRecord):
        self._fh.write(format_record(rec, self.dump_aux) + "\n")
        self._count += 1
        if self._count % FLUSH_EVERY == 0:
            self._fh.flush()

    def close(self):
        self._fh.flush()
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trace_csv(path, trace: IterateTrace, dump_aux: bool = False) -> Path:
    with TraceWriter(path, dump_aux=dump_aux) as w:
        for rec in trace.records:
            w.write(rec)
    return Path(path)


def read_trace_csv(path) -> Dict[str, np.ndarray]:
    """Read a trace CSV back into column arrays (NaN for empty fields)."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        cols: Dict[str, list] = {h: [] for h in header}
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            for h, cell in zip(header, line.split(",")):
                cols[h].append(float(cell) if cell else math.nan)
    return {h: np.array(v, dtype=float) for h, v in cols.items()}


# ---------------------------------------------------------------------------
# Experiment runner


@dataclass
class SolverRun:
    """One solver's configuration within an experiment."""

    method: str  # "agm-bio" | "r-apm" | "pb-apg"
    label: Optional[str] = None
    gamma_regime: str = "compact"
    gamma: Optional[float] = None
    r: Optional[float] = None
    alpha: Optional[float] = None
    M: Optional[float] = None
    aux_mode: str = "per_iteration"
    K: Optional[int] = None
    eta: Optional[float] = None
    penalty: Optional[float] = None
    x0: Optional[np.ndarray] = None
    record_cuts: bool = False
    dump_aux: bool = False

    def resolved_label(self) -> str:
        return self.label or self.method


@dataclass
class ExperimentSpec:
    """A named experiment: problem, solver list, horizon, seed, output dir."""

    name: str
    problem: BilevelProblem
    solvers: List[SolverRun]
    K: int
    seed: int
    output_dir: Path
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    x0_mode: str = "origin"  # "origin" | "random_nonneg" | explicit vector in params["x0"]

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1", key="K")
        self.output_dir = Path(self.output_dir)


def resolve_x0(spec: ExperimentSpec) -> np.ndarray:
    """Shared start point for every solver in the experiment."""
    if "x0" in spec.params and spec.params["x0"] is not None:
        return np.asarray(spec.params["x0"], dtype=float)
    if spec.x0_mode == "random_nonneg":
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
        return rng.random(spec.problem.dim)
    return np.zeros(spec.problem.dim)


def _gamma_policy_for(run: SolverRun, problem: BilevelProblem, K: int) -> GammaPolicy:
    regime = GammaRegime(run.gamma_regime)
    holder = problem.holder
    r = run.r if run.r is not None else (holder.r if holder else None)
    alpha = run.alpha if run.alpha is not None else (holder.alpha if holder else None)
    M = run.M if run.M is not None else (holder.M if holder else None)
    return gamma_for(
        regime, L_f=problem.L_f, L_g=problem.L_g, T=K,
        r=r, alpha=alpha, M=M, gamma=run.gamma,
    )


def run_solver(
    run: SolverRun,
    problem: BilevelProblem,
    K: int,
    x0: np.ndarray,
    on_record=None,
) -> IterateTrace:
    K_run = run.K or K
    x0_run = x0 if run.x0 is None else np.asarray(run.x0, dtype=float)
    if run.method == "agm-bio":
        config = SolverConfig(
            K=K_run,
            policy=_gamma_policy_for(run, problem, K_run),
            aux_mode=AuxMode(run.aux_mode),
            x0=x0_run,
            label=run.resolved_label(),
            record_cuts=run.record_cuts,
            dump_aux=run.dump_aux,
        )
        return solve(problem, config, on_record=on_record)
    if run.method == "r-apm":
        return r_apm_solve(problem, K_run, eta=run.eta, x0=x0_run, on_record=on_record)
    if run.method == "pb-apg":
        return pb_apg_solve(problem, K_run, penalty=run.penalty, x0=x0_run, on_record=on_record)
    raise ConfigError(f"unknown solver method {run.method!r}", key="method")


def _record_dict(rec: TraceRecord) -> dict:
    return {
        "k": rec.k, "wall_s": rec.wall_s, "f_val": rec.f_val, "g_val": rec.g_val,
        "f_gap": rec.f_gap, "abs_f_gap": rec.abs_f_gap, "g_gap": rec.g_gap,
        "a_k": rec.a_k, "A_k": rec.A_k,
    }


def run_experiment(spec: ExperimentSpec) -> List[Path]:
    """Run every configured solver on the shared problem.

    Writes one CSV per solver (rows streamed, flushed every 100 iterations)
    plus manifest.json echoing the experiment definition, the version, the chosen start
    point, final metrics, and any per-solver failures.  A failing solver
    does not stop the others.  Returns the paths of the successful traces.
    """
    if not spec.solvers:
        raise ConfigError("experiment has no solvers", key="solvers")
    labels = [r.resolved_label() for r in spec.solvers]
    if len(set(labels)) != len(labels):
        raise ConfigError("solver labels must be unique", key="solvers")
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    x0 = resolve_x0(spec)

    results: Dict[str, dict] = {}

    def one(run: SolverRun) -> Tuple[str, Optional[Path], Optional[str], Optional[IterateTrace]]:
        label = run.resolved_label()
        path = spec.output_dir / f"{label}.csv"
        try:
            with TraceWriter(path, dump_aux=run.dump_aux) as writer:
                trace = run_solver(run, spec.problem, spec.K, x0, on_record=writer.write)
            return label, path, None, trace
        except (BilevelError, FloatingPointError) as exc:
            return label, path, f"{type(exc).__name__}: {exc}", None

    max_workers = max(1, int(os.environ.get("BILEVEL_AGM_THREADS", "1")))
    if max_workers > 1 and len(spec.solvers) > 1:
        with ThreadPoolExecutor(max_workers=min(max_workers, len(spec.solvers))) as ex:
            outcomes = list(ex.map(one, spec.solvers))
    else:
        outcomes = [one(run) for run in spec.solvers]

    paths: List[Path] = []
    for (label, path, error, trace), run in zip(outcomes, spec.solvers):
        entry = {
            "trace": path.name,
            "method": run.method,
            "error": error,
            "final": _record_dict(trace.final) if trace is not None else None,
        }
        results[label] = entry
        if error is None:
            paths.append(path)

    manifest = {
        "name": spec.name,
        "kind": spec.kind,
        "version": __version__,
        "seed": spec.seed,
        "K": spec.K,
        "x0_mode": spec.x0_mode,
        "x0": [float(v) for v in x0],
        "params": {k: v for k, v in spec.params.items() if k != "x0"},
        "solvers": [
            {
                "label": r.resolved_label(), "method": r.method,
                "gamma_regime": r.gamma_regime, "gamma": r.gamma,
                "aux_mode": r.aux_mode, "K": r.K or spec.K,
                "eta": r.eta, "penalty": r.penalty,
            }
            for r in spec.solvers
        ],
        "results": results,
    }
    with open(spec.output_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


# ---------------------------------------------------------------------------
# Solution-set samplers (for cutting-plane containment checks)


def sample_lower_solution_set(
    kind: str, params: dict, problem: BilevelProblem, count: int, seed: int
) -> Optional[np.ndarray]:
    """Seeded samples from the lower-level solution set, when computable.

    linear_inverse: the unit simplex, sampled via normalized exponentials.
    min_norm: x* plus null-space perturbations kept inside the ball.
    Returns None for problem kinds without a computable solution set.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    if kind == "linear_inverse":
        n = problem.dim
        e = rng.exponential(1.0, size=(count, n))
        return e / e.sum(axis=1, keepdims=True)
    if kind == "min_norm":
        A, _, x_star, _ = _min_norm_data(int(params["m"]), int(params["d"]), int(params["seed"]))
        d = A.shape[1]
        # Orthonormal basis of null(A): columns d-m..d of V^T.
        _, _, vt = np.linalg.svd(A, full_matrices=True)
        null_basis = vt[A.shape[0]:].T
        radius = problem.set.radius
        slack = radius - float(np.linalg.norm(x_star))
        coeffs = rng.standard_normal((count, null_basis.shape[1]))
        coeffs /= np.maximum(np.linalg.norm(coeffs, axis=1, keepdims=True), 1e-30)
        scales = rng.random((count, 1)) * 0.95 * slack
        return x_star[None, :] + (coeffs * scales) @ null_basis.T
    return None


# ---------------------------------------------------------------------------
# Certified-bound helpers and diagnostics


def loglog_slope(k: np.ndarray, vals: np.ndarray, k_min: int, k_max: int) -> float:
    """Least-squares slope of log(vals) against log(k) over [k_min, k_max]."""
    mask = (k >= k_min) & (k <= k_max) & np.isfinite(vals)
    kk = k[mask]
    vv = np.maximum(vals[mask], 1e-300)
    if kk.size < 2:
        raise ContractViolationError("not enough points for a slope fit")
    lx = np.log(kk)
    ly = np.log(vv)
    lx = lx - lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))


def compact_suboptimality_bound(L_f: float, dist0_sq: float, k: int) -> float:
    return 4.0 * L_f * dist0_sq / (k * (k + 1.0))


def compact_infeasibility_bound(L_g: float, dist0_sq: float, D: float, k: int) -> float:
    return 4.0 * L_g * dist0_sq * (math.log(k) + 1.0) / (k * (k + 1.0)) + 2.0 * L_g * D * D / (k + 1.0)


def aux_decay_bound(L_g: float, dist0_sq: float, k: int) -> float:
    return 2.0 * L_g * dist0_sq / (k + 1.0) ** 2


def holder_suboptimality_floor(holder: HolderParams, g_gap: float) -> float:
    return -holder.M * (holder.r * max(g_gap, 0.0) / holder.alpha) ** (1.0 / holder.r)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def run_diagnostics(spec: ExperimentSpec) -> List[CheckResult]:
    """Evaluate the runtime certificates for an experiment's problem.

    Runs gradient validation, the auxiliary-sequence certificate, the
    compact-set per-iteration bounds, cutting-plane containment sampling,
    the Holderian lower-bound inequality, and the Holderian-regime slope
    check, each where its preconditions (truth, bounded set, holder
    parameters, a computable solution set) are met.
    """
    problem = spec.problem
    checks: List[CheckResult] = []
    x0 = resolve_x0(spec)

    for side, obj in (("upper", problem.upper), ("lower", problem.lower)):
        rep = check_gradient(smooth_part(obj), probes=20, seed=spec.seed + 11, dim=problem.dim)
        checks.append(CheckResult(
            f"gradient:{side}", rep.max_rel_err < 1e-5,
            f"max relative error {rep.max_rel_err:.3e}",
        ))

    truth = problem.truth
    if truth is not None:
        dist0_sq = float(np.linalg.norm(x0 - truth.x_star)) ** 2
        aux = run_lower_apg(problem.lower, problem.set, x0, spec.K)
        gaps = aux.values - truth.g_star
        bounds = np.array([aux_decay_bound(problem.L_g, dist0_sq, k) for k in range(len(aux))])
        ok = bool(np.all(gaps >= -1e-12) and np.all(gaps <= bounds) and np.all(np.diff(aux.values) <= 0.0))
        checks.append(CheckResult(
            "aux-certificate", ok,
            f"max gap/bound ratio {float(np.max(gaps / np.maximum(bounds, 1e-300))):.3f}",
        ))

    agm_runs = [r for r in spec.solvers if r.method == "agm-bio"]
    if agm_runs:
        run = agm_runs[0]
        run_copy = SolverRun(**{**run.__dict__, "record_cuts": True})
        trace = run_solver(run_copy, problem, spec.K, x0)
        kcol = trace.column("k")

        if truth is not None:
            dist0_sq = float(np.linalg.norm(x0 - truth.x_star)) ** 2
            if run.gamma_regime == "compact" and problem.set.diameter is not None:
                f_ok = all(
                    rec.f_gap <= 1.05 * compact_suboptimality_bound(problem.L_f, dist0_sq, rec.k)
                    for rec in trace.records if rec.k >= 2
                )
                g_ok = all(
                    rec.g_gap <= 1.05 * compact_infeasibility_bound(
                        problem.L_g, dist0_sq, problem.set.diameter, rec.k)
                    for rec in trace.records if rec.k >= 2
                )
                checks.append(CheckResult("compact-bound:f", f_ok, "suboptimality within certificate"))
                checks.append(CheckResult("compact-bound:g", g_ok, "infeasibility within certificate"))
            if problem.holder is not None:
                p_ok = all(
                    rec.f_gap >= holder_suboptimality_floor(problem.holder, rec.g_gap) - 1e-9
                    for rec in trace.records
                )
                checks.append(CheckResult("holder-lower-bound", p_ok, "suboptimality floor holds"))
            if run.gamma_regime == "holderian":
                slope = loglog_slope(kcol, trace.column("g_gap"), max(2, spec.K // 10), spec.K)
                checks.append(CheckResult(
                    "holderian-slope", slope <= -1.2, f"log-log slope {slope:.3f}",
                ))

        samples = sample_lower_solution_set(spec.kind, spec.params, problem, 1000, spec.seed)
        if samples is not None and trace.cuts:
            worst = -math.inf
            for cut in trace.cuts:
                if cut.trivial:
                    continue
                viol = samples @ cut.normal - cut.offset
                worst = max(worst, float(np.max(viol)))
            checks.append(CheckResult(
                "cut-containment", worst <= 1e-10, f"worst violation {worst:.3e}",
            ))

    return checks
