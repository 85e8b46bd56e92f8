import json
import math
import os

import numpy as np
import pytest

from bilevel_agm.errors import ConfigError, ContractViolationError
from bilevel_agm.harness import (
    ExperimentSpec,
    SolverRun,
    TRACE_HEADER,
    load_csv_matrix,
    loglog_slope,
    make_linear_inverse,
    make_min_norm_synthetic,
    make_regression_problem,
    read_trace_csv,
    run_diagnostics,
    run_experiment,
    sample_lower_solution_set,
    split_rows,
    write_trace_csv,
    _min_norm_data,
)
from bilevel_agm.oracles import check_gradient, smooth_part


# --- CSV ingestion ----------------------------------------------------------


def test_load_csv_matrix_basic(tmp_path):
    f = tmp_path / "m.csv"
    f.write_text("1,2\n3,4\n5,6\n")
    m = load_csv_matrix(f)
    np.testing.assert_array_equal(m, [[1, 2], [3, 4], [5, 6]])


def test_load_csv_matrix_header_skipped(tmp_path):
    f = tmp_path / "m.csv"
    f.write_text("a,b\n1,2\n3,4\n")
    m = load_csv_matrix(f, has_header=True)
    assert m.shape == (2, 2)


def test_load_csv_matrix_ragged_row(tmp_path):
    f = tmp_path / "m.csv"
    f.write_text("1,2\n3,4,5\n")
    with pytest.raises(ContractViolationError, match=":2"):
        load_csv_matrix(f)


def test_load_csv_matrix_non_numeric(tmp_path):
    f = tmp_path / "m.csv"
    f.write_text("1,2\n3,x\n")
    with pytest.raises(ContractViolationError, match=":2"):
        load_csv_matrix(f)


def test_load_csv_matrix_empty(tmp_path):
    f = tmp_path / "m.csv"
    f.write_text("")
    with pytest.raises(ContractViolationError):
        load_csv_matrix(f)


# --- problem constructors -----------------------------------------------------


def test_split_rows_benchmark_fractions():
    tr, va = split_rows(1068, 0.75, seed=0)
    assert len(tr) == 801 and len(va) == 267
    # reproducible partition
    tr2, va2 = split_rows(1068, 0.75, seed=0)
    np.testing.assert_array_equal(tr, tr2)
    np.testing.assert_array_equal(va, va2)
    tr3, _ = split_rows(1068, 0.75, seed=1)
    assert not np.array_equal(tr, tr3)


def test_regression_problem_small_synthetic():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((8, 6))
    prob = make_regression_problem(data, outcome_col=2, train_frac=0.75,
                                   radius=1.0, seed=0)
    assert prob.dim == 5
    assert prob.set.radius == 1.0
    assert prob.truth is None
    for obj in (prob.upper, prob.lower):
        rep = check_gradient(smooth_part(obj), probes=20, seed=1, dim=5)
        assert rep.max_rel_err < 1e-5


def test_regression_problem_validation():
    data = np.ones((4, 3))
    with pytest.raises(ConfigError):
        make_regression_problem(data, 0, train_frac=1.5, radius=1.0, seed=0)
    with pytest.raises(ConfigError):
        make_regression_problem(data, 5, train_frac=0.5, radius=1.0, seed=0)


def test_linear_inverse_truth():
    p3 = make_linear_inverse(3)
    assert p3.truth.f_star == pytest.approx(1.0 / 6.0)
    np.testing.assert_allclose(p3.truth.x_star, np.full(3, 1.0 / 3.0), atol=0)
    assert p3.L_f == 1.0 and p3.L_g == 3.0
    assert p3.holder.r == 2.0
    assert p3.holder.M == pytest.approx(1.0 / math.sqrt(3.0))

    assert make_linear_inverse(100).truth.f_star == pytest.approx(0.005)

    p1 = make_linear_inverse(1)
    assert p1.truth.x_star[0] == 1.0
    assert p1.lower_value(p1.truth.x_star) == 0.0


def test_min_norm_truth_and_geometry():
    prob = make_min_norm_synthetic(3, 6, 2.0, 7)
    x_star = prob.truth.x_star
    assert prob.lower_value(x_star) <= 1e-10
    assert prob.set.diameter == pytest.approx(4.0 * np.linalg.norm(x_star))
    # cross-check the normal-equations solution against lstsq
    A, b, _, _ = _min_norm_data(3, 6, 7)
    ref = np.linalg.lstsq(A, b, rcond=None)[0]
    np.testing.assert_allclose(x_star, ref, atol=1e-10)


def test_min_norm_is_min_norm_over_solution_set():
    prob = make_min_norm_synthetic(3, 6, 2.0, 7)
    samples = sample_lower_solution_set(
        "min_norm", {"m": 3, "d": 6, "seed": 7}, prob, 100, seed=7)
    A, b, x_star, _ = _min_norm_data(3, 6, 7)
    f_star = prob.truth.f_star
    for z in samples:
        assert np.linalg.norm(A @ z - b) <= 1e-9
        assert prob.set.contains(z, tol=1e-9)
        if np.linalg.norm(z - x_star) > 1e-8:
            assert prob.upper_value(z) > f_star


def test_min_norm_requires_underdetermined():
    with pytest.raises(ConfigError):
        make_min_norm_synthetic(6, 6, 2.0, 0)
    with pytest.raises(ConfigError):
        make_min_norm_synthetic(3, 6, 1.0, 0)


def test_simplex_sampler():
    prob = make_linear_inverse(5)
    s = sample_lower_solution_set("linear_inverse", {}, prob, 1000, seed=3)
    assert s.shape == (1000, 5)
    assert np.all(s >= 0.0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    assert sample_lower_solution_set("regression", {}, prob, 10, seed=0) is None


# --- trace persistence ----------------------------------------------------


def _small_spec(tmp_path, K=40, solvers=None, name="demo"):
    prob = make_linear_inverse(3)
    if solvers is None:
        solvers = [
            SolverRun(method="agm-bio", gamma_regime="holderian", r=2.0),
            SolverRun(method="r-apm"),
            SolverRun(method="pb-apg"),
        ]
    return ExperimentSpec(
        name=name, problem=prob, solvers=solvers, K=K, seed=7,
        output_dir=tmp_path / name, kind="linear_inverse", params={"n": 3},
        x0_mode="random_nonneg",
    )


def test_run_experiment_writes_traces_and_manifest(tmp_path):
    spec = _small_spec(tmp_path)
    paths = run_experiment(spec)
    assert len(paths) == 3
    manifest = json.loads((spec.output_dir / "manifest.json").read_text())
    assert manifest["name"] == "demo"
    assert manifest["seed"] == 7
    assert set(manifest["results"]) == {"agm-bio", "r-apm", "pb-apg"}
    for entry in manifest["results"].values():
        assert entry["error"] is None
        assert entry["final"]["k"] == 40

    cols = read_trace_csv(paths[0])
    assert list(cols) == TRACE_HEADER.split(",")
    assert cols["k"].shape == (41,)
    assert np.all(np.diff(cols["wall_s"]) >= 0.0)


def test_trace_header_and_empty_fields(tmp_path):
    # truth-less problem leaves the gap columns empty
    rng = np.random.default_rng(0)
    data = rng.standard_normal((8, 4))
    prob = make_regression_problem(data, 0, 0.75, 1.0, seed=0)
    spec = ExperimentSpec(
        name="reg", problem=prob, solvers=[SolverRun(method="r-apm")],
        K=5, seed=0, output_dir=tmp_path, kind="regression",
    )
    paths = run_experiment(spec)
    text = paths[0].read_text()
    lines = text.split("\n")
    assert lines[0] == TRACE_HEADER
    first = lines[1].split(",")
    assert first[4] == "" and first[5] == "" and first[6] == ""
    assert "\r" not in text


def test_float_round_trip(tmp_path):
    spec = _small_spec(tmp_path, K=20, solvers=[SolverRun(method="agm-bio",
                                                          gamma_regime="compact")])
    from bilevel_agm.harness import run_solver, resolve_x0

    x0 = resolve_x0(spec)
    trace = run_solver(spec.solvers[0], spec.problem, spec.K, x0)
    path = write_trace_csv(tmp_path / "t.csv", trace)
    cols = read_trace_csv(path)
    for i, rec in enumerate(trace.records):
        assert cols["f_val"][i] == rec.f_val  # bit-exact round trip
        assert cols["g_gap"][i] == rec.g_gap


def test_determinism_bit_exact(tmp_path):
    spec1 = _small_spec(tmp_path, name="one")
    spec2 = _small_spec(tmp_path, name="two")
    paths1 = run_experiment(spec1)
    paths2 = run_experiment(spec2)

    def strip_wall(path):
        rows = []
        with open(path) as fh:
            next(fh)
            for line in fh:
                cells = line.rstrip("\n").split(",")
                del cells[1]  # wall_s may differ
                rows.append(",".join(cells))
        return rows

    for p1, p2 in zip(paths1, paths2):
        assert strip_wall(p1) == strip_wall(p2)


def test_failed_solver_recorded_but_others_continue(tmp_path):
    bad = SolverRun(method="agm-bio", label="bad", gamma_regime="weak_sharp")
    good = SolverRun(method="r-apm", label="good")
    spec = _small_spec(tmp_path, solvers=[bad, good])
    # linear inverse holder has r=2; weak_sharp needs alpha and M, and M is
    # present, so force the failure with a dimension-mismatched x0 instead
    bad.x0 = np.array([1.0, 2.0])
    paths = run_experiment(spec)
    manifest = json.loads((spec.output_dir / "manifest.json").read_text())
    assert manifest["results"]["bad"]["error"] is not None
    assert manifest["results"]["good"]["error"] is None
    assert len(paths) == 1


def test_empty_solver_list_rejected(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment(_small_spec(tmp_path, solvers=[]))


def test_duplicate_labels_rejected(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment(_small_spec(
            tmp_path, solvers=[SolverRun(method="r-apm"), SolverRun(method="r-apm")]))


def test_thread_env_parallel_runs_match_sequential(tmp_path):
    spec_seq = _small_spec(tmp_path, name="seq")
    run_experiment(spec_seq)
    os.environ["BILEVEL_AGM_THREADS"] = "3"
    try:
        spec_par = _small_spec(tmp_path, name="par")
        run_experiment(spec_par)
    finally:
        del os.environ["BILEVEL_AGM_THREADS"]

    def strip_wall(path):
        lines = path.read_text().split("\n")
        return [",".join(c for i, c in enumerate(l.split(",")) if i != 1)
                for l in lines[1:] if l]

    for label in ("agm-bio", "r-apm", "pb-apg"):
        assert strip_wall(spec_seq.output_dir / f"{label}.csv") == \
            strip_wall(spec_par.output_dir / f"{label}.csv")


# --- metrics and diagnostics ------------------------------------------------


def test_loglog_slope_recovers_power():
    k = np.arange(1, 2001, dtype=float)
    assert loglog_slope(k, k ** -2.0, 200, 2000) == pytest.approx(-2.0, abs=1e-9)
    assert loglog_slope(k, 3.0 * k ** -0.5, 10, 100) == pytest.approx(-0.5, abs=1e-9)


def test_diagnostics_min_norm_all_pass(tmp_path):
    prob = make_min_norm_synthetic(5, 10, 2.0, 7)
    spec = ExperimentSpec(
        name="mn", problem=prob,
        solvers=[SolverRun(method="agm-bio", gamma_regime="compact")],
        K=300, seed=7, output_dir=tmp_path, kind="min_norm",
        params={"m": 5, "d": 10, "radius_mult": 2.0, "seed": 7},
    )
    checks = run_diagnostics(spec)
    names = {c.name for c in checks}
    assert {"gradient:upper", "gradient:lower", "aux-certificate",
            "compact-bound:f", "compact-bound:g", "cut-containment"} <= names
    assert all(c.passed for c in checks)


def test_diagnostics_flag_broken_gradient(tmp_path):
    from bilevel_agm.cli import _corrupt_upper_gradient

    prob = _corrupt_upper_gradient(make_linear_inverse(3))
    spec = ExperimentSpec(
        name="broken", problem=prob,
        solvers=[SolverRun(method="agm-bio", gamma_regime="compact")],
        K=50, seed=0, output_dir=tmp_path, kind="linear_inverse", params={"n": 3},
    )
    checks = run_diagnostics(spec)
    upper = [c for c in checks if c.name == "gradient:upper"]
    assert len(upper) == 1 and not upper[0].passed


def test_dump_aux_column_opt_in(tmp_path):
    spec = _small_spec(tmp_path, K=20, solvers=[
        SolverRun(method="agm-bio", gamma_regime="compact", dump_aux=True)])
    paths = run_experiment(spec)
    lines = paths[0].read_text().split("\n")
    assert lines[0] == TRACE_HEADER + ",aux_g"
    aux_vals = [float(l.split(",")[-1]) for l in lines[1:] if l]
    assert all(np.diff(aux_vals) <= 0.0)


def test_diagnostics_without_truth_runs_gradient_checks_only(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.standard_normal((12, 5))
    prob = make_regression_problem(data, 1, 0.75, 1.0, seed=1)
    spec = ExperimentSpec(
        name="reg", problem=prob,
        solvers=[SolverRun(method="agm-bio", gamma_regime="manual", gamma=0.01)],
        K=30, seed=1, output_dir=tmp_path, kind="regression",
    )
    checks = run_diagnostics(spec)
    names = {c.name for c in checks}
    assert names == {"gradient:upper", "gradient:lower"}
    assert all(c.passed for c in checks)


def test_load_csv_matrix_dataset_scale(tmp_path):
    # the benchmark dataset shape: 1068 samples, 730 features + outcome
    rng = np.random.default_rng(0)
    data = rng.integers(0, 100, size=(1068, 731))
    path = tmp_path / "wide.csv"
    with open(path, "w") as fh:
        for row in data:
            fh.write(",".join(str(int(v)) for v in row) + "\n")
    m = load_csv_matrix(path)
    assert m.shape == (1068, 731)
