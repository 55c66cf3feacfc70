"""Experiment drivers: hypothesis checks, simulation, averaging, action,
quasi-potential, and exit-time runs, plus result emission.

Every run writes the fully resolved config and a manifest (config hash, code
version, per-output checksums, wall clock, path counts) next to its outputs,
so a results directory is self-describing and re-runnable.  Process exit
status convention: 0 success, 2 required hypothesis failed, 3 numerical
divergence.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import check_coefficient_hypotheses, check_nondegeneracy
from .config import BuiltSystem, build_system, config_hash, parse_rho_bar, rho_bar_limit
from .errors import DivergenceError
from .exit_times import build_domain, check_exit_hypotheses, exit_time_mc
from .ldp import (
    ScalarPath,
    action_I,
    control_cost,
    minimizing_control,
    quasi_potential_explicit,
    quasi_potential_variational,
)
from .noise import RngStream, check_hyp_eigenvalues
from .operator import Field, check_spectral_gap, invariant_average
from .solver import averaging_error_ensemble, solve_limit_ode, solve_spde

EXIT_OK = 0
EXIT_HYPOTHESIS_FAILED = 2
EXIT_DIVERGED = 3


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def finalize_run(out_dir: Path, resolved: dict, outputs: list[Path], started: float, n_paths_total: int) -> None:
    """Write the resolved config and the run manifest next to the outputs."""
    cfg_path = out_dir / "config_resolved.json"
    cfg_path.write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    manifest = {
        "config_hash": config_hash(resolved),
        "version": __version__,
        "experiment_kind": resolved["experiment"]["kind"],
        "seed": resolved["seed"],
        "outputs": {p.name: _sha256(p) for p in sorted(set(outputs) | {cfg_path}, key=lambda q: q.name)},
        "wall_clock_s": time.monotonic() - started,
        "n_paths_total": n_paths_total,
    }
    _write_json(out_dir / "run_manifest.json", manifest)


def _default_sup_norms(system: BuiltSystem):
    cfg = system.config["noise"].get("e_sup_norms")
    if cfg is not None:
        return np.asarray(cfg, dtype=float)
    return np.abs(system.op.modes_on_grid).max(axis=1)


def hypothesis_checks(system: BuiltSystem) -> dict:
    """All hypothesis probes applicable to this configuration."""
    cfg = system.config
    op = system.op
    rng = np.random.Generator(np.random.Philox(key=cfg["seed"]))
    checks = {}

    gram = (op.modes_on_grid * op.quad_weights) @ op.modes_on_grid.T
    ortho_err = float(np.abs(gram - np.eye(op.n_modes)).max())
    checks["operator_orthonormality"] = {"passed": ortho_err < 1e-10, "max_error": ortho_err}

    gap_ok, worst = True, np.inf
    for _ in range(20):
        h = Field(rng.standard_normal(op.n_modes))
        rep = check_spectral_gap(op, h, [0.1, 0.5, 1.0])
        gap_ok &= rep.passed
        worst = min(worst, float(rep.margins.min()))
    checks["spectral_gap"] = {"passed": bool(gap_ok), "min_margin": worst, "gap": op.spectral_gap}

    checks["coefficient_hypotheses"] = {
        **_jsonable(check_coefficient_hypotheses(system.cs, op, rng)),
    }

    dim = cfg["noise"]["dimension"]
    eig = check_hyp_eigenvalues(dim, system.spec_q.lambdas, _default_sup_norms(system), system.spec_b.thetas)
    checks["eigenvalue_condition"] = _jsonable(eig)

    floor = cfg["experiment"]["nondegeneracy_floor"]
    nd = check_nondegeneracy(system.model, [0.0], np.linspace(-2.0, 2.0, 41), floor=floor)
    checks["nondegeneracy"] = _jsonable(nd)

    ms = cfg["multiscale"]
    declared = parse_rho_bar(ms["rho_bar"])
    limit = rho_bar_limit(ms["alpha_law"], ms["beta_law"])
    if math.isinf(declared) or math.isinf(limit):
        consistent = declared == limit
    else:
        consistent = abs(declared - limit) <= 1e-9 * max(1.0, abs(declared))
    checks["rho_bar_consistency"] = {
        "passed": bool(consistent),
        "declared": repr(declared),
        "law_limit": repr(limit),
        "ratios_at_eps": {repr(p.eps): p.schedule_ratio() for p in system.params_list},
    }

    if cfg["experiment"].get("domain"):
        dspec = dict(cfg["experiment"]["domain"])
        level = dspec.pop("level")
        try:
            dom = build_domain(dspec, level, op, probe_seed=cfg["seed"])
        except ValueError as exc:
            checks["exit_hypotheses"] = {"passed": False, "error": str(exc)}
        else:
            inv = _jsonable(dom.invariance_report)
            inv["passed"] = bool(inv["monotone_passed"] and inv["jensen_passed"])
            checks["domain_invariance"] = inv
            checks["exit_hypotheses"] = _jsonable(check_exit_hypotheses(system.model, dom))
            x0_in = bool(
                (dom.g_convex.value(op.to_grid(system.x0.coeffs)) * op.quad_weights).sum() < level
            )
            checks["exit_hypotheses"]["x0_inside_domain"] = x0_in
            checks["exit_hypotheses"]["passed"] = bool(checks["exit_hypotheses"]["passed"] and x0_in)
    return checks


def required_check_names(kind: str, checks: dict) -> list[str]:
    base = [
        "operator_orthonormality",
        "spectral_gap",
        "coefficient_hypotheses",
        "eigenvalue_condition",
        "nondegeneracy",
        "rho_bar_consistency",
    ]
    if kind == "exit" or (kind == "check" and "exit_hypotheses" in checks):
        base += ["exit_hypotheses", "domain_invariance"]
    return [name for name in base if name in checks] + (
        ["exit_hypotheses"] if kind == "exit" and "exit_hypotheses" not in checks else []
    )


def run_check(resolved: dict, out_dir: Path) -> int:
    started = time.monotonic()
    system = build_system(resolved)
    checks = hypothesis_checks(system)
    required = required_check_names(resolved["experiment"]["kind"], checks)
    missing = [n for n in required if n not in checks]
    all_passed = not missing and all(checks[n].get("passed", False) for n in required)
    report = {
        "passed": all_passed,
        "required": required,
        "missing": missing,
        "checks": checks,
    }
    path = out_dir / "check_report.json"
    _write_json(path, report)
    finalize_run(out_dir, resolved, [path], started, 0)
    return EXIT_OK if all_passed else EXIT_HYPOTHESIS_FAILED


def run_simulate(resolved: dict, out_dir: Path) -> int:
    started = time.monotonic()
    system = build_system(resolved)
    sol = resolved["solver"]
    outputs = []
    status = EXIT_OK
    for i, params in enumerate(system.params_list):
        path = out_dir / f"trajectory_eps{i}.csv"
        try:
            traj = solve_spde(
                system.op, system.cs, system.spec_q, system.spec_b, params, system.x0,
                sol["t_final"], sol["dt"], RngStream(resolved["seed"], stream=i),
            )
        except DivergenceError as exc:
            _write_json(out_dir / f"divergence_eps{i}.json", {"eps": params.eps, "step": exc.step, "t": exc.t})
            outputs.append(out_dir / f"divergence_eps{i}.json")
            status = EXIT_DIVERGED
            continue
        traj.write_csv(path)
        outputs.append(path)
    finalize_run(out_dir, resolved, outputs, started, len(system.params_list))
    return status


def run_average(resolved: dict, out_dir: Path, threads: int = 1) -> int:
    started = time.monotonic()
    system = build_system(resolved)
    sol = resolved["solver"]
    n_paths = resolved["n_paths"]
    x_mean = invariant_average(system.op, system.x0)
    ref = solve_limit_ode(system.model, x_mean, sol["t_final"], sol["dt"])
    rows, summary_rows = [], []
    status = EXIT_OK
    error_note = None
    for i, params in enumerate(system.params_list):
        try:
            errors, _ = averaging_error_ensemble(
                system.op, system.cs, system.spec_q, system.spec_b, params, system.x0,
                sol["t_final"], sol["dt"], sol["delta"], ref, n_paths,
                seed=resolved["seed"], stream_base=i << 32, threads=threads,
            )
        except DivergenceError as exc:
            status, error_note = EXIT_DIVERGED, f"eps={params.eps}: {exc}"
            break
        valid = errors[np.isfinite(errors)]
        n_diverged = int(n_paths - valid.size)
        if valid.size == 0:
            status, error_note = EXIT_DIVERGED, f"eps={params.eps}: all paths diverged"
            break
        mean = float(valid.mean())
        ci = 1.96 * float(valid.std(ddof=1)) / math.sqrt(valid.size) if valid.size > 1 else 0.0
        rows.append([params.eps, valid.size, mean, ci])
        summary_rows.append({"eps": params.eps, "mean_err": mean, "ci": ci, "n_diverged": n_diverged})
    csv_path = out_dir / "averaging_errors.csv"
    _write_csv(csv_path, ["eps", "n_paths", "mean_err", "ci"], rows)
    monotone = all(
        summary_rows[i + 1]["mean_err"] - summary_rows[i + 1]["ci"]
        <= summary_rows[i]["mean_err"] + summary_rows[i]["ci"]
        for i in range(len(summary_rows) - 1)
    )
    summary = {
        "delta": sol["delta"],
        "levels": summary_rows,
        "monotone_within_ci": monotone,
        "error": error_note,
    }
    sum_path = out_dir / "averaging_summary.json"
    _write_json(sum_path, summary)
    finalize_run(out_dir, resolved, [csv_path, sum_path], started, n_paths * len(rows))
    return status


def _load_scalar_path(path: Path) -> ScalarPath:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return ScalarPath(times=data[:, 0], values=data[:, 1])


def run_action(resolved: dict, out_dir: Path) -> int:
    started = time.monotonic()
    system = build_system(resolved)
    sol = resolved["solver"]
    pf = resolved["experiment"]["path_file"]
    if pf:
        w = _load_scalar_path(Path(pf))
    else:
        x_mean = invariant_average(system.op, system.x0)
        w = ScalarPath.from_trajectory(solve_limit_ode(system.model, x_mean, sol["t_final"], sol["dt"]))
    action = action_I(system.model, w)
    ctrl = minimizing_control(system.model, w)
    cost = control_cost(ctrl)
    ctrl_path = out_dir / "minimizing_control.csv"
    ctrl.write_csv(ctrl_path)
    path_path = out_dir / "path.csv"
    _write_csv(path_path, ["t", "value"], zip(w.times, w.values))
    report = {
        "action": action.value,
        "control_half_norm_sq": cost,
        "duality_gap": abs(cost - action.value),
        "path_source": pf or "limit_ode",
    }
    rep_path = out_dir / "action.json"
    _write_json(rep_path, report)
    finalize_run(out_dir, resolved, [ctrl_path, path_path, rep_path], started, 1)
    return EXIT_OK


def run_quasipotential(resolved: dict, out_dir: Path) -> int:
    started = time.monotonic()
    system = build_system(resolved)
    exp = resolved["experiment"]
    rows = []
    for y in exp["y_values"]:
        v_var = quasi_potential_variational(system.model, y, tuple(exp["horizons"]), exp["n_nodes"])
        v_exp = quasi_potential_explicit(system.model, y) if system.model.is_additive else float("nan")
        rows.append([y, v_var, v_exp])
    csv_path = out_dir / "quasipotential.csv"
    _write_csv(csv_path, ["y", "v_variational", "v_explicit"], rows)
    finalize_run(out_dir, resolved, [csv_path], started, 0)
    return EXIT_OK


def _extrapolate(gammas: np.ndarray, values: np.ndarray, cis: np.ndarray):
    if gammas.size < 2:
        return None
    w = 1.0 / np.clip(cis, 1e-12, None) ** 2
    sw, swx = w.sum(), (w * gammas).sum()
    swy, swxx, swxy = (w * values).sum(), (w * gammas**2).sum(), (w * gammas * values).sum()
    denom = sw * swxx - swx**2
    slope = (sw * swxy - swx * swy) / denom
    intercept = (swxx * swy - swx * swxy) / denom
    return {"slope": float(slope), "intercept": float(intercept)}


def run_exit(resolved: dict, out_dir: Path, threads: int = 1) -> int:
    started = time.monotonic()
    system = build_system(resolved)
    checks = hypothesis_checks(system)
    required = required_check_names("exit", checks)
    check_path = out_dir / "check_report.json"
    passed = all(checks.get(n, {}).get("passed", False) for n in required)
    _write_json(check_path, {"passed": passed, "required": required, "checks": checks})
    if not passed:
        finalize_run(out_dir, resolved, [check_path], started, 0)
        return EXIT_HYPOTHESIS_FAILED
    exp = resolved["experiment"]
    dspec = dict(exp["domain"])
    level = dspec.pop("level")
    dom = build_domain(dspec, level, system.op, probe_seed=resolved["seed"])
    stats = exit_time_mc(
        system.model, system.params_list, dom, system.x0,
        n_paths=resolved["n_paths"], dt=resolved["solver"]["dt"], seed=resolved["seed"],
        t_max=exp["t_max"], t_max_cap=exp["t_max_cap"], rho_ball=exp["rho_ball"],
        threads=threads,
    )
    rows = [
        [s.gamma, s.eps, s.alpha, s.beta, s.n_paths, s.n_censored, s.mean_tau,
         s.log_mean_tau, s.gamma_log_mean, s.ci_halfwidth, s.v_bar_target]
        for s in stats
    ]
    csv_path = out_dir / "exit_stats.csv"
    _write_csv(
        csv_path,
        ["gamma", "eps", "alpha", "beta", "n", "censored", "mean_tau",
         "log_mean_tau", "gamma_log_mean", "ci_halfwidth", "v_bar_target"],
        rows,
    )
    tau_rows = []
    for s in stats:
        tau_rows.extend([s.gamma, p, t] for p, t in enumerate(s.taus))
    taus_path = out_dir / "exit_taus.csv"
    _write_csv(taus_path, ["gamma", "path", "tau"], tau_rows)
    gammas = np.array([s.gamma for s in stats])
    values = np.array([s.gamma_log_mean for s in stats])
    cis = np.array([max(s.ci_halfwidth * s.gamma, 1e-12) for s in stats])
    fit = _extrapolate(gammas, values, cis)
    vb = stats[0].v_bar_target
    summary = {
        "v_bar_target": vb,
        "levels": [s.row() | {"eps_log_mean": s.eps_log_mean, "lower_bound_only": s.lower_bound_only,
                              "n_diverged": s.n_diverged,
                              "concentration_fraction": s.concentration_fraction}
                   for s in stats],
        "extrapolation": fit,
        "extrapolated_value": fit["intercept"] if fit else None,
        "relative_gap": abs(fit["intercept"] - vb) / vb if fit else None,
        "lower_bound_only": any(s.lower_bound_only for s in stats),
        "speed_note": (
            "gamma = (alpha + beta)^2 is used as the rate speed; the raw-eps "
            "normalization eps * log E tau is reported per level as eps_log_mean"
        ),
    }
    sum_path = out_dir / "exit_summary.json"
    _write_json(sum_path, summary)
    finalize_run(out_dir, resolved, [check_path, csv_path, taus_path, sum_path], started,
                 resolved["n_paths"] * len(stats))
    return EXIT_OK


def emit_plot_data(results_dir: Path, out_dir: Path | None = None) -> list[Path]:
    """Reshape run outputs into tidy plot-ready CSVs; no rendering."""
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise FileNotFoundError(f"results directory not found: {results_dir}")
    out_dir = Path(out_dir) if out_dir else results_dir
    written = []
    exit_stats = results_dir / "exit_stats.csv"
    if exit_stats.exists():
        data = np.genfromtxt(exit_stats, delimiter=",", names=True)
        data = np.atleast_1d(data)
        rows = [
            [float(r["gamma"]), float(r["gamma_log_mean"]),
             float(r["ci_halfwidth"]) * float(r["gamma"]), float(r["v_bar_target"])]
            for r in data
        ]
        p = out_dir / "exit_scaling.csv"
        _write_csv(p, ["gamma", "gamma_log_mean", "ci", "v_bar"], rows)
        written.append(p)
    avg = results_dir / "averaging_errors.csv"
    if avg.exists():
        data = np.atleast_1d(np.genfromtxt(avg, delimiter=",", names=True))
        rows = [[float(r["eps"]), float(r["mean_err"]), float(r["ci"])] for r in data]
        p = out_dir / "averaging.csv"
        _write_csv(p, ["eps", "mean_err", "ci"], rows)
        written.append(p)
    if not written:
        raise FileNotFoundError(
            f"no plottable artifacts (exit_stats.csv or averaging_errors.csv) in {results_dir}"
        )
    return written
