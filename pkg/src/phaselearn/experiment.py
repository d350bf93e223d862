"""Config-driven experiment runners and report emitters.

Every run is a pure function of (config, seed): outputs are written with
sorted keys, repr-formatted floats, and fixed orderings so reruns are
byte-identical.  Wall-clock timings go to ``timing.log`` (plain text), never
into the CSV/JSON data files.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import ExperimentConfig
from .diagnostics import (
    DEFAULT_T_GRID,
    DecayFit,
    calibrate_constants,
    compatibility_scan,
    lieb_robinson_scan,
    ltqo_scan,
    mixing_scan,
    stability_scan,
)
from .errors import ConfigError
from .lattice import Lattice, Region, ball, enlarge, observable_from_string
from .learner import LearnerPlan, PlanConstants, coverage_report, plan, predict
from .models import Model, generate_state, instantiate, sample_parameters
from .plotting import decay_plot_svg, sweep_plot_svg
from .seeding import stream_seed
from .shadows import (
    TrainingSet,
    measure_snapshot,
    measure_snapshot_product,
    write_shadows,
)

__all__ = [
    "build_plan_constants",
    "run_plan_stage",
    "run_train_stage",
    "run_predict_stage",
    "run_learning_experiment",
    "run_diagnostic_battery",
    "emit_plots",
]


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map over an optional thread pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _digest(x: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(x, dtype="<f8").tobytes()).hexdigest()[:16]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _probe_model(cfg: ExperimentConfig) -> Model:
    """A smaller instance of the configured model for constant calibration."""
    lat = cfg.lattice
    if lat.dim == 1:
        probe_lat = Lattice(1, (min(lat.n_sites, 5),), lat.boundary, lat.local_dim)
    else:
        probe_lat = Lattice(2, (2, 3), lat.boundary, lat.local_dim)
    return instantiate(cfg.model_name, probe_lat, omega=0, **cfg.hyper)


def build_plan_constants(cfg: ExperimentConfig, model: Model) -> PlanConstants:
    """Merge structural constants with measured or explicitly configured ones.

    Measurement runs the mixing and localisation scans on a reduced instance;
    1/xi = min(fitted mixing rate, fitted spatial rate / 2).
    """
    sc = model.structural_constants()
    observables = [observable_from_string(s, cfg.lattice, k0=max(cfg.k0, 2))
                   for s in cfg.observables]
    k0_eff = max(cfg.k0, max(len(o.support) for o in observables))
    if cfg.constants_source == "explicit":
        vals = dict(cfg.constants)
    else:
        probe = _probe_model(cfg)
        rng = np.random.default_rng(stream_seed(cfg.seed, "calibration"))
        x = np.clip(rng.uniform(-1, 1, probe.family.m), -0.8, 0.8)
        xp = np.clip(rng.uniform(-1, 1, probe.family.m), -0.8, 0.8)
        center = probe.lattice.n_sites // 2
        obs = observable_from_string(f"Z@{center}", probe.lattice)
        cal = calibrate_constants(probe.family, x, xp, obs, probe.reference_state(),
                                  kappa=cfg.kappa_exponent)
        vals = {k: cal[k] for k in ("xi", "gamma_prime", "c_prime")}
    return PlanConstants(
        J=sc["J"], ell=sc["ell"], r0=sc["r0"], D=sc["D"], n=sc["n"], m=sc["m"],
        k0=k0_eff, M=len(observables), W=sc["W"],
        xi=float(vals["xi"]), gamma_prime=float(vals["gamma_prime"]),
        c_prime=float(vals["c_prime"]), kappa=cfg.kappa_exponent, f_n=cfg.f_n,
    )


def _apply_overrides(cfg: ExperimentConfig, p: LearnerPlan) -> LearnerPlan:
    fields = {}
    if cfg.r_override is not None:
        fields["r"] = int(cfg.r_override)
    if cfg.gamma_override is not None:
        fields["gamma"] = float(cfg.gamma_override)
    if cfg.q_override is not None:
        fields["q"] = int(cfg.q_override)
    if cfg.n_override is not None:
        fields["N"] = int(cfg.n_override)
    return replace(p, **fields) if fields else p


def _training_states(model: Model, samples, seed: int, workers: int) -> list:
    """One snapshot per sample; product oracle states use the fast sampler."""
    if model.oracle is not None:
        def one(item):
            i, s = item
            n_sys = model.family.n_system
            site_states = np.stack(
                [model.oracle.site_state(float(s.x[j]), s.tau) for j in range(n_sys)]
            )
            return measure_snapshot_product(
                site_states, stream_seed(seed, "measurement", i),
                x=s.x, tau=s.tau, omega=s.omega,
            )
    else:
        def one(item):
            i, s = item
            rho = generate_state(model, s.x, s.tau)
            return measure_snapshot(
                rho, stream_seed(seed, "measurement", i),
                x=s.x, tau=s.tau, omega=s.omega, n_system=model.family.n_system,
            )
    return _pmap(one, list(enumerate(samples)), workers)


def _exact_value(model: Model, x: np.ndarray, tau: float, observables, rtol=1e-9):
    """Ground truth sum_i tr[O_i rho(x, tau)] via oracle or dense simulation."""
    if model.oracle is not None:
        return sum(model.oracle_expectation(x, tau, o) for o in observables)
    if model.family.n_total > 6:
        return None
    rho = generate_state(model, x, tau, rtol=rtol, prefer_oracle=False)
    from .lattice import embed

    total = 0.0
    for o in observables:
        total += rho.expectation(embed(o, model.lattice, n_total=model.family.n_total))
    return total


def _setup(cfg: ExperimentConfig):
    model = instantiate(cfg.model_name, cfg.lattice, omega=cfg.omega, **cfg.hyper)
    observables = [observable_from_string(s, cfg.lattice, k0=max(cfg.k0, 2))
                   for s in cfg.observables]
    return model, observables


def run_plan_stage(cfg: ExperimentConfig) -> LearnerPlan:
    """Derive the plan (measuring constants if configured) and write plan.json."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, _ = _setup(cfg)
    constants = build_plan_constants(cfg, model)
    p = plan(cfg.epsilon, cfg.delta, cfg.delta_prime, constants, cfg.mode,
             n_cap=cfg.n_cap)
    p = _apply_overrides(cfg, p)
    (out / "plan.json").write_text(p.to_json() + "\n")
    return p


def _make_training(cfg: ExperimentConfig, model: Model, p: LearnerPlan) -> TrainingSet:
    samples = sample_parameters(model, p.N, p.t_eps, stream_seed(cfg.seed, "sampling"),
                                cfg.mode)
    snaps = _training_states(model, samples, cfg.seed, cfg.workers)
    return TrainingSet(snaps, model_name=model.name,
                       lattice_json=cfg.lattice.to_json(), mode=cfg.mode,
                       seed=cfg.seed, m=model.family.m)


def run_train_stage(cfg: ExperimentConfig) -> dict:
    """Plan plus training-set generation; writes plan.json and training.shadows."""
    out = Path(cfg.out_dir)
    p = run_plan_stage(cfg)
    model, _ = _setup(cfg)
    training = _make_training(cfg, model, p)
    with open(out / "training.shadows", "w") as fh:
        write_shadows(fh, training)
    return {"plan": "plan.json", "training": "training.shadows"}


def _predictions_stage(cfg: ExperimentConfig, model: Model, observables,
                       p: LearnerPlan, training: TrainingSet, out: Path,
                       t_start: float) -> dict:
    rng_test = np.random.default_rng(stream_seed(cfg.seed, "test_points"))
    test_x = rng_test.uniform(-1.0, 1.0, size=(cfg.n_test, model.family.m))
    if cfg.mode == "steady_state":
        test_t = np.full(cfg.n_test, np.inf)
    else:
        test_t = rng_test.uniform(0.0, p.t_eps, size=cfg.n_test)

    def eval_point(i: int, tr: TrainingSet):
        pred = predict(observables, test_x[i], float(test_t[i]), tr, p,
                       model.family, omega=cfg.omega, mom_batches=cfg.mom_batches)
        exact = _exact_value(model, test_x[i], float(test_t[i]), observables)
        return pred, exact

    results = _pmap(lambda i: eval_point(i, training), list(range(cfg.n_test)),
                    cfg.workers)
    lines = ["index,x_digest,tau,f_exact,f_pred,abs_error,min_cell_count,fallback"]
    errors = []
    for i, (pred, exact) in enumerate(results):
        err = "" if exact is None else repr(abs(pred.value - exact))
        if exact is not None:
            errors.append(abs(pred.value - exact))
        tau_s = "inf" if math.isinf(test_t[i]) else repr(float(test_t[i]))
        lines.append(
            f"{i},{_digest(test_x[i])},{tau_s},"
            f"{'' if exact is None else repr(exact)},{pred.value!r},{err},"
            f"{min(pred.counts)},{int(bool(pred.warnings))}"
        )
    (out / "predictions.csv").write_text("\n".join(lines) + "\n")

    regions = [enlarge(cfg.lattice, o.support, p.r) for o in observables]
    cov = coverage_report(training, p.gamma, regions, model.family, q=p.q,
                          mode=cfg.mode, t_eps=p.t_eps)
    (out / "coverage.json").write_text(cov.to_json() + "\n")

    sweep_rows = []
    if cfg.sweep:
        for n_k in sorted(cfg.sweep):
            n_k = min(n_k, len(training))
            sub = training.subset(n_k)
            sub_res = _pmap(lambda i: eval_point(i, sub), list(range(cfg.n_test)),
                            cfg.workers)
            errs = [abs(pr.value - ex) for pr, ex in sub_res if ex is not None]
            med = float(np.median(errs)) if errs else math.nan
            sweep_rows.append((n_k, med))
        s_lines = ["n,median_abs_error"] + [f"{n},{e!r}" for n, e in sweep_rows]
        (out / "sweep.csv").write_text("\n".join(s_lines) + "\n")

    success = (
        float(np.mean([e <= cfg.epsilon for e in errors])) if errors else None
    )
    summary = {
        "model": model.name,
        "mode": cfg.mode,
        "epsilon": cfg.epsilon,
        "delta": cfg.delta,
        "delta_prime": cfg.delta_prime,
        "planned_N_log2": p.N_log2,
        "planned_N_capped": p.capped,
        "used_N": p.N,
        "n_test": cfg.n_test,
        "success_fraction": success,
        "success_target": 1.0 - cfg.delta,
        "coverage_min_fraction": cov.min_fraction,
        "coverage_failure_bound": max(e.failure_bound for e in cov.entries),
        "empty_cell_fallbacks": sum(int(bool(pr.warnings)) for pr, _ in results),
        "sweep": [[n, e] for n, e in sweep_rows],
    }
    _write_json(out / "summary.json", summary)
    manifest = emit_plots(out, planned_n=2.0**p.N_log2)
    with open(out / "timing.log", "w") as fh:
        fh.write(f"wall_clock_seconds {time.perf_counter() - t_start:.3f}\n")
    manifest.update(
        predictions="predictions.csv", coverage="coverage.json",
        summary="summary.json", timing="timing.log",
    )
    if sweep_rows:
        manifest["sweep"] = "sweep.csv"
    return manifest


def run_predict_stage(cfg: ExperimentConfig) -> dict:
    """Predictions from an existing plan.json and training.shadows in the out dir."""
    from .shadows import read_shadows

    t_start = time.perf_counter()
    out = Path(cfg.out_dir)
    plan_path, train_path = out / "plan.json", out / "training.shadows"
    if not plan_path.exists() or not train_path.exists():
        raise ConfigError(
            f"predict stage needs {plan_path.name} and {train_path.name} in {out}"
        )
    p = LearnerPlan.from_json(plan_path.read_text())
    with open(train_path) as fh:
        training = read_shadows(fh)
    model, observables = _setup(cfg)
    if training.model_name and training.model_name != model.name:
        raise ConfigError(
            f"training set was collected on {training.model_name!r}, "
            f"config asks for {model.name!r}"
        )
    return _predictions_stage(cfg, model, observables, p, training, out, t_start)


def run_learning_experiment(cfg: ExperimentConfig) -> dict:
    """Full pipeline: plan, train, predict, report; returns the file manifest.

    Emits plan.json, training.shadows, predictions.csv, coverage.json,
    summary.json, optionally sweep.csv and error_vs_n.svg, plus timing.log.
    """
    t_start = time.perf_counter()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, observables = _setup(cfg)
    p = run_plan_stage(cfg)
    training = _make_training(cfg, model, p)
    with open(out / "training.shadows", "w") as fh:
        write_shadows(fh, training)
    manifest = _predictions_stage(cfg, model, observables, p, training, out, t_start)
    manifest.update(plan="plan.json", training="training.shadows")
    return manifest


def _fit_csv(path: Path, fit: DecayFit, xlabel: str) -> None:
    lines = [f"{xlabel},value,error,envelope"]
    for a, v, e, u in fit.csv_rows():
        env = "" if u is None else repr(float(u))
        val = "nan" if not math.isfinite(v) else repr(float(v))
        lines.append(f"{a!r},{val},{e!r},{env}")
    path.write_text("\n".join(lines) + "\n")


def _auto_regions(cfg: ExperimentConfig) -> tuple[Region, Region, Region]:
    lat = cfg.lattice
    center = lat.n_sites // 2
    a = ball(lat, center, 0)
    r = ball(lat, center, 1)
    w = ball(lat, center, 2)
    return a, r, w


def run_diagnostic_battery(cfg: ExperimentConfig) -> dict:
    """All five structural scans on the configured model; per-scan CSV + SVG.

    The battery aggregates a pass flag per scan: positive decay certified
    (lower bootstrap CI bound above zero) or an identically-zero curve.
    """
    t_start = time.perf_counter()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = instantiate(cfg.model_name, cfg.lattice, omega=cfg.omega, **cfg.hyper)
    fam = model.family
    if fam.n_total > 8:
        raise ConfigError("diagnostic battery caps the system at 8 sites")
    obs = observable_from_string(cfg.observables[0], cfg.lattice, k0=max(cfg.k0, 2))
    rng = np.random.default_rng(stream_seed(cfg.seed, "diagnostics"))
    x = np.clip(rng.uniform(-1, 1, fam.m), -0.8, 0.8)
    xp = np.clip(rng.uniform(-1, 1, fam.m), -0.8, 0.8)
    ref = model.reference_state()
    if cfg.diagnostics_regions:
        a = Region(tuple(cfg.diagnostics_regions["a"]))
        r = Region(tuple(cfg.diagnostics_regions["r"]))
        w = Region(tuple(cfg.diagnostics_regions["w"]))
    else:
        a, r, w = _auto_regions(cfg)

    diam = max(1, cfg.lattice.n_sites - 1) if cfg.lattice.dim == 1 else 4
    boot = stream_seed(cfg.seed, "bootstrap")
    fits: dict[str, DecayFit] = {}
    fits["lieb_robinson"] = lieb_robinson_scan(fam, x, xp, obs, t=1.0,
                                               r_max=min(diam, 6), rtol=1e-8,
                                               boot_seed=boot)
    fits["mixing"] = mixing_scan(fam, x, ref, obs, DEFAULT_T_GRID, boot_seed=boot)
    fits["ltqo"] = ltqo_scan(fam, x, xp, obs, s_grid=list(range(min(diam, 4) + 1)),
                             gamma_mix=max(fits["mixing"].rate, 0.1),
                             kappa=cfg.kappa_exponent, boot_seed=boot)
    fits["compatibility"] = compatibility_scan(fam, x, a, r, w,
                                               t_grid=(0.5, 1.0, 2.0, 4.0),
                                               boot_seed=boot)
    fits["stability"] = stability_scan(fam, np.zeros(fam.m), 0.5, obs, ref,
                                       gamma_mix=max(fits["mixing"].rate, 0.1),
                                       kappa=cfg.kappa_exponent, boot_seed=boot)
    battery = {}
    xlabels = {"lieb_robinson": "radius", "mixing": "time", "ltqo": "radius",
               "compatibility": "time", "stability": "distance"}
    for name, fit in fits.items():
        _fit_csv(out / f"diag_{name}.csv", fit, xlabels[name])
        _write_json(out / f"diag_{name}.json", fit.to_json_dict())
        with open(out / f"diag_{name}.svg", "w") as fh:
            decay_plot_svg(fh, f"{model.name}: {name}", xlabels[name],
                           fit.abscissa, fit.values, fit.envelope,
                           None if fit.all_below_floor else fit.rate,
                           None if fit.all_below_floor else fit.prefactor)
        battery[name] = {
            "passes": fit.passes,
            "rate": fit.rate,
            "rate_ci": list(fit.rate_ci),
            "all_below_floor": fit.all_below_floor,
            "envelope_ok": fit.envelope_ok,
        }
    battery["all_pass"] = all(v["passes"] for v in battery.values() if isinstance(v, dict))
    _write_json(out / "battery.json", battery)
    with open(out / "timing.log", "w") as fh:
        fh.write(f"wall_clock_seconds {time.perf_counter() - t_start:.3f}\n")
    files = {f"diag_{n}": f"diag_{n}.csv" for n in fits}
    files["battery"] = "battery.json"
    return files


def emit_plots(out_dir: str | Path, planned_n: float | None = None) -> dict:
    """(Re)build SVG plots from the CSV files present in the bundle.

    The planned-N marker on the sweep plot defaults to the prescription in
    the bundle's own plan.json (off-scale prescriptions simply fall outside
    the frame).
    """
    out = Path(out_dir)
    manifest = {}
    if planned_n is None and (out / "plan.json").exists():
        planned_n = 2.0 ** json.loads((out / "plan.json").read_text())["N_log2"]
    sweep = out / "sweep.csv"
    if sweep.exists():
        rows = sweep.read_text().strip().split("\n")[1:]
        ns, errs = [], []
        for row in rows:
            n_s, e_s = row.split(",")
            ns.append(int(n_s))
            errs.append(float(e_s))
        with open(out / "error_vs_n.svg", "w") as fh:
            sweep_plot_svg(fh, "median error vs training size", ns, errs, planned_n)
        manifest["error_vs_n"] = "error_vs_n.svg"
    for csv_path in sorted(out.glob("diag_*.csv")):
        name = csv_path.stem
        fitfile = out / f"{name}.json"
        rate = pref = None
        envelope = None
        if fitfile.exists():
            fit = json.loads(fitfile.read_text())
            if not fit.get("all_below_floor"):
                rate, pref = fit.get("rate"), fit.get("prefactor")
            envelope = fit.get("envelope")
        rows = csv_path.read_text().strip().split("\n")
        header = rows[0].split(",")
        absc, vals = [], []
        for row in rows[1:]:
            parts = row.split(",")
            absc.append(float(parts[0]))
            vals.append(float(parts[1]))
        with open(out / f"{name}.svg", "w") as fh:
            decay_plot_svg(fh, name, header[0], absc, vals, envelope, rate, pref)
        manifest[name] = f"{name}.svg"
    return manifest
