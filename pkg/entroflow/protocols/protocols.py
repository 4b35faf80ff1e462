"""Verification protocols: the solve, simulate, verify, slopes and hwi stages
and `run_experiment`, which runs them in dependency order and writes the
verdict.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np
import pandas as pd

from .. import sde
from ..analysis.tables import ensemble_frame, hwi_frame, slope_ladder_frame, snapshot_frame, write_frame
from ..config import ExperimentConfig, PerturbationSpec, Problem, ToleranceSpec, build_problem, make_potential
from ..entropy import (
    dissipation_functional,
    entropy_functional,
    entropy_rate_check,
    mean_dissipation_check,
    verify_identity,
)
from ..errors import EntroflowError, SingularDirectionError
from ..g import patch_global_g
from ..grid import DensityField, write_field_csv, write_field_json
from ..pde import PdeRun, plan_steps, solve, stable_dt
from ..potential import Potential
from ..transport import (
    build_plan,
    curve_metric_slope,
    displacement_convexity,
    displacement_rate_check,
    entropy_slope_comparison,
    geodesic_check,
    hwi_check,
    hwi_sweep,
    velocity_and_flow_check,
    w2_1d,
    w2_grid,
)
from ..utils import get_readable_gin_config, write_json
from .checks import Verdict

__all__ = ["STAGES", "RunContext", "plan_stages", "run_experiment"]

log = logging.getLogger(__name__)

STAGES = ("solve", "simulate", "verify", "slopes", "hwi")
REQUIRES = {"simulate": ("solve",), "verify": ("solve",), "slopes": ("solve",)}
# snapshots kept in snapshots.csv
SNAPSHOT_ROWS = 100
SLOPE_RUN_INTERVALS = 64
ZERO_RESIDUAL = 1e-14
ZERO_SPREAD = 1e-12
SIMULATE_CHECKS = (
    ("Eq8-martingale", "Eq8"),
    ("Eq8-mean-F", "Eq8"),
    ("Eq8-decomposition", "Eq8-decomposition"),
    ("marginal", "marginal"),
    ("conditional-rate", "conditional-rate"),
)
PERTURBED_SIMULATE_CHECKS = (
    ("Eq8-perturbed-mean-F", "Eq8"),
    ("cross-term-mc", "Eq17"),
)


@dataclass
class RunContext:
    problem: Problem
    out: Path
    verdict: Verdict = field(default_factory=Verdict)
    run: PdeRun | None = None
    run_beta: PdeRun | None = None

    @property
    def config(self) -> ExperimentConfig:
        return self.problem.config

    @property
    def tol(self) -> ToleranceSpec:
        return self.problem.config.tolerances

    def warn(self, messages: Iterable[str]) -> None:
        for message in messages:
            if message not in self.verdict.warnings:
                self.verdict.warnings.append(message)


def plan_stages(stages: Iterable[str] | None = None) -> list[str]:
    """Requested stages plus their prerequisites, in pipeline order."""
    wanted = set(STAGES if stages is None else stages)
    unknown = wanted - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages: {sorted(unknown)}")
    for stage in list(wanted):
        wanted.update(REQUIRES.get(stage, ()))
    return [s for s in STAGES if s in wanted]


def _solve(p0: DensityField, problem: Problem, beta: Potential | None, t_end: float) -> PdeRun:
    ts = problem.config.time_stepping
    if ts.dt == "cfl":
        dt_max = stable_dt(p0, problem.nl, beta, ts.safety_factor)
    else:
        dt_max = float(ts.dt)
    dt, every = plan_steps(t_end - p0.time_tag, dt_max, ts.snapshot_interval)
    return solve(p0, problem.nl, beta, t_end, dt=dt, snapshot_every=every, safety_factor=ts.safety_factor)


def _max_mass_error(run: PdeRun) -> float:
    return max(abs(s.mass - 1.0) for s in run.snapshots)


def _anchor(problem: Problem) -> tuple[float, float] | None:
    """Closed-form (F(p0), I(p0)) where one is known."""
    cfg = problem.config
    unit = all(tuple(e) == (0.0, 1.0) for e in cfg.grid.extent)
    if not unit:
        return None
    if cfg.initial_density.family == "uniform":
        return -1.0, 0.0
    nl = cfg.nonlinearity
    if cfg.initial_density.family == "cosine" and cfg.grid.dim == 1 and nl.kind == "porous_medium" and nl.m == 2:
        a = cfg.initial_density.amplitude
        return a**2 / 2 - 1.0, 2 * a**2 * math.pi**2
    return None


def solve_stage(ctx: RunContext) -> None:
    problem, verdict, tol = ctx.problem, ctx.verdict, ctx.tol
    t_end = ctx.config.time_stepping.t_end
    ctx.run = _solve(problem.p0, problem, None, t_end)
    summary: dict[str, Any] = {"unperturbed": ctx.run.summary()}
    if problem.beta is not None:
        ctx.run_beta = _solve(problem.p0, problem, problem.beta, t_end)
        summary["perturbed"] = ctx.run_beta.summary()
        ctx.warn(ctx.run_beta.warnings)

    runs = [r for r in (ctx.run, ctx.run_beta) if r is not None]
    verdict.within("mass", "mass", max(_max_mass_error(r) for r in runs), tol.mass)

    anchor = _anchor(problem)
    if anchor is None:
        verdict.skip("anchors", "anchors", "no closed form for this initial density")
    else:
        entropy = entropy_functional(problem.p0, problem.nl)
        dissipation = dissipation_functional(problem.p0, problem.nl)
        entropy_error = abs(entropy - anchor[0])
        dissipation_error = abs(dissipation - anchor[1]) / max(anchor[1], 1.0)
        summary["anchors"] = {
            "entropy": entropy,
            "entropy_exact": anchor[0],
            "dissipation": dissipation,
            "dissipation_exact": anchor[1],
        }
        # both errors in units of their own tolerance
        metric = max(entropy_error / tol.anchor_entropy, dissipation_error / tol.anchor_dissipation)
        verdict.within("anchors", "anchors", metric, 1.0)

    write_json(summary, ctx.out / "pde-summary.json")
    write_field_csv(problem.p0, ctx.out / "p0.csv")
    write_field_csv(ctx.run.snapshots[-1], ctx.out / "p_end.csv")
    write_field_json(ctx.run.snapshots[-1], ctx.out / "p_end.json")
    every = max(1, len(ctx.run.snapshots) // SNAPSHOT_ROWS)
    write_frame(snapshot_frame(ctx.run, every), ctx.out / "snapshots.csv")


def _step_of(t: float, t_start: float, dt: float) -> int:
    return int(round((t - t_start) / dt))


def _perturbed_ensemble(ctx: RunContext) -> dict[str, Any]:
    """Particles of the perturbed SDE; E[F^beta] and the Monte Carlo cross term against the PDE."""
    spec, verdict, tol = ctx.config.particles, ctx.verdict, ctx.tol
    run_beta, nl = ctx.run_beta, ctx.problem.nl
    assert run_beta is not None
    result = sde.simulate_ensemble(
        run_beta,
        nl,
        ctx.problem.beta,
        spec.count,
        spec.dt,
        spec.seed,
        histogram_bins=spec.histogram_bins,
        n_workers=spec.n_workers,
    )
    ctx.warn(result.warnings)
    final = result.summaries[-1]
    with verdict.guard("Eq8-perturbed-mean-F", "Eq8"):
        expected = sde.expected_mean_f(run_beta, nl, final["t"])
        bound = max(tol.martingale_se * final["se_f"], tol.mean_f * abs(expected)) + 1e-12
        verdict.within("Eq8-perturbed-mean-F", "Eq8", abs(final["mean_f"] - expected), bound)
    out = result.to_json()
    with verdict.guard("cross-term-mc", "Eq17"):
        assert result.cross_term_mc is not None
        mc = float(result.cross_term_mc[-1])
        exact = sde.expected_cross_integral(run_beta, nl, final["t"])
        out["cross_term_mc"] = result.cross_term_mc.tolist()
        out["cross_term_pde"] = exact
        verdict.within("cross-term-mc", "Eq17", abs(mc - exact), tol.mean_f * abs(exact) + 1e-12)
    return out


def simulate_stage(ctx: RunContext) -> None:
    spec, verdict, tol = ctx.config.particles, ctx.verdict, ctx.tol
    if not spec.enabled:
        for name, equation in (*SIMULATE_CHECKS, *PERTURBED_SIMULATE_CHECKS):
            verdict.skip(name, equation, "particles disabled")
        return
    run, nl = ctx.run, ctx.problem.nl
    assert run is not None
    k_marginal = _step_of(ctx.config.marginal_time, run.t_start, spec.dt)
    k0 = _step_of(spec.regression_t0, run.t_start, spec.dt)
    record_steps = [k_marginal, k0, *(k0 + lag for lag in spec.regression_lags)]
    result = sde.simulate_ensemble(
        run,
        nl,
        None,
        spec.count,
        spec.dt,
        spec.seed,
        record_steps=record_steps,
        histogram_bins=spec.histogram_bins,
        n_workers=spec.n_workers,
    )
    ctx.warn(result.warnings)
    final = result.summaries[-1]

    with verdict.guard("Eq8-martingale", "Eq8"):
        verdict.within(
            "Eq8-martingale", "Eq8", abs(final["mean_m"]), tol.martingale_se * final["se_m"] + 1e-12
        )
    with verdict.guard("Eq8-mean-F", "Eq8"):
        expected = sde.expected_mean_f(run, nl, final["t"])
        bound = max(tol.martingale_se * final["se_f"], tol.mean_f * abs(expected)) + 1e-12
        verdict.within("Eq8-mean-F", "Eq8", abs(final["mean_f"] - expected), bound)
    with verdict.guard("Eq8-decomposition", "Eq8-decomposition"):
        halving = sde.decomposition_halving(run, nl, None, spec.dt, spec.halving_count, spec.seed)
        if halving["median_dt"] <= ZERO_RESIDUAL:
            verdict.judged("Eq8-decomposition", "Eq8-decomposition", True, None, tol.halving_high)
        else:
            ratio = halving["ratio"]
            verdict.judged(
                "Eq8-decomposition",
                "Eq8-decomposition",
                tol.halving_low <= ratio <= tol.halving_high,
                ratio,
                tol.halving_high,
            )
    with verdict.guard("marginal", "marginal"):
        t_marginal = run.t_start + k_marginal * spec.dt
        l1 = sde.marginal_l1(result, run, t_marginal, spec.histogram_bins)
        verdict.within("marginal", "marginal", l1, tol.marginal)

    rows: list[dict[str, float]] = []
    with verdict.guard("conditional-rate", "conditional-rate"):
        i0 = result.record.index_of_step(k0)
        if np.ptp(result.record.d_path[i0]) <= ZERO_SPREAD:
            verdict.skip("conditional-rate", "conditional-rate", "dissipation has no spread at t0")
        else:
            rows = sde.conditional_rate_regression(result, spec.regression_t0, spec.regression_lags)
            scale = math.sqrt(dissipation_functional(run.field_at(spec.regression_t0), nl))
            worst = max(abs(r["slope"] - 1.0) for r in rows)
            intercepts_ok = all(abs(r["intercept"]) <= tol.regression_intercept * scale for r in rows)
            verdict.within("conditional-rate", "conditional-rate", worst, tol.regression_slope, intercepts_ok)

    summary = result.to_json()
    if spec.perturbed and ctx.run_beta is not None:
        summary["perturbed"] = _perturbed_ensemble(ctx)
    else:
        reason = "perturbed particles off" if not spec.perturbed else "no perturbation"
        for name, equation in PERTURBED_SIMULATE_CHECKS:
            verdict.skip(name, equation, reason)

    write_json(summary, ctx.out / "ensemble-summary.json")
    write_frame(ensemble_frame(result), ctx.out / "ensemble.csv")
    if spec.dump_particles:
        write_frame(result.record.to_frame(spec.dump_particles), ctx.out / "trajectories.csv")
    if rows:
        write_frame(pd.DataFrame(rows), ctx.out / "conditional-rate.csv")


def _judge_flow_halving(verdict: Verdict, full: float, half: float, minimum: float) -> None:
    """Halving the span must shrink the push-forward error by `minimum` or more."""
    if full <= ZERO_RESIDUAL or half <= 0:
        # no error left to shrink
        verdict.judged("flow-map-halving", "flow-map", True, None, minimum)
        return
    ratio = full / half
    verdict.judged("flow-map-halving", "flow-map", ratio >= minimum, ratio, minimum)


def verify_stage(ctx: RunContext) -> None:
    cfg, verdict, tol = ctx.config, ctx.verdict, ctx.tol
    run, nl = ctx.run, ctx.problem.nl
    assert run is not None

    if cfg.verification.identity:
        with verdict.guard("Eq4", "Eq4"):
            report = verify_identity(run, nl)
            write_frame(report.to_frame(), ctx.out / "identity.csv")
            write_json(report.summary(), ctx.out / "identity.json")
            verdict.within("Eq4", "Eq4", float(report.rel_residual[-1]), tol.identity, report.monotone)
        with verdict.guard("Eq4-rate", "Eq4"):
            rate = entropy_rate_check(run, nl)
            verdict.within("Eq4-rate", "Eq4", rate["rel_error"], tol.entropy_rate)
        with verdict.guard("Eq8-mean-D", "Eq8"):
            frame = mean_dissipation_check(run, nl)
            write_frame(frame, ctx.out / "mean-dissipation.csv")
            verdict.within("Eq8-mean-D", "Eq8", float(frame["rel_error"].max()), tol.mean_dissipation)
    else:
        for name, equation in (("Eq4", "Eq4"), ("Eq4-rate", "Eq4"), ("Eq8-mean-D", "Eq8")):
            verdict.skip(name, equation, "identity toggle off")

    if cfg.verification.perturbed_identity and ctx.run_beta is not None:
        run_beta = ctx.run_beta
        with verdict.guard("Eq17", "Eq17"):
            report = verify_identity(run_beta, nl)
            write_frame(report.to_frame(), ctx.out / "identity-perturbed.csv")
            write_json(report.summary(), ctx.out / "identity-perturbed.json")
            verdict.within("Eq17", "Eq17", float(report.rel_residual[-1]), tol.perturbed_identity)
        with verdict.guard("Eq16", "Eq16"):
            frame = mean_dissipation_check(run_beta, nl)
            write_frame(frame, ctx.out / "mean-dissipation-perturbed.csv")
            verdict.within("Eq16", "Eq16", float(frame["rel_error"].max()), tol.mean_dissipation)
    else:
        reason = "perturbed identity toggle off" if not cfg.verification.perturbed_identity else "no perturbation"
        verdict.skip("Eq17", "Eq17", reason)
        verdict.skip("Eq16", "Eq16", reason)

    if cfg.verification.flow:
        with verdict.guard("flow-map", "flow-map"):
            t0 = run.t_start
            t1 = min(t0 + cfg.verification.flow_span, run.horizon)
            full = velocity_and_flow_check(run, nl, None, t0, t1)
            half = velocity_and_flow_check(run, nl, None, t0, t0 + (t1 - t0) / 2)
            ctx.warn(full.warnings)
            write_json({"span": full.to_json(), "half_span": half.to_json()}, ctx.out / "flow.json")
            verdict.within("flow-map", "flow-map", full.l1_error, tol.flow)
            _judge_flow_halving(verdict, full.l1_error, half.l1_error, tol.flow_halving)
    else:
        verdict.skip("flow-map", "flow-map", "flow toggle off")
        verdict.skip("flow-map-halving", "flow-map", "flow toggle off")


def _w2_oracle(ctx: RunContext, t0: float) -> float:
    run = ctx.run
    assert run is not None
    k0 = run.index_of(t0)
    pairs = [(ctx.problem.p0, DensityField.uniform(run.grid))]
    if k0 + 1 < len(run.snapshots):
        pairs.append((run.snapshots[k0], run.snapshots[k0 + 1]))
    return max(abs(w2_1d(a, b) - w2_grid(a, b)) for a, b in pairs)


def _slope_run(ctx: RunContext, spec: PerturbationSpec, p_t0: DensityField) -> tuple[Potential, PdeRun] | None:
    problem = ctx.problem
    beta = make_potential(spec, problem.grid, p_t0, problem.nl)
    if beta is None:
        return None
    ts = ctx.config.time_stepping
    t_end = min(p_t0.time_tag + SLOPE_RUN_INTERVALS * ts.snapshot_interval, ts.t_end)
    if t_end <= p_t0.time_tag:
        return None
    run_beta = _solve(p_t0, problem, beta, t_end)
    ctx.warn(run_beta.warnings)
    return beta, run_beta


def slopes_stage(ctx: RunContext) -> None:
    cfg, verdict, tol = ctx.config, ctx.verdict, ctx.tol
    names = ("Eq19", "Eq20", "W2-oracle", "FW", "FWp", "FW-FWp", "FW-equality")
    if ctx.problem.grid.dim != 1:
        for name in names:
            verdict.skip(name, name, "slope checks are 1-D")
        return
    if not cfg.verification.slopes:
        for name in names[:3]:
            verdict.skip(name, name, "slopes toggle off")
    run, nl = ctx.run, ctx.problem.nl
    assert run is not None
    t0 = cfg.verification.slope_t0
    artifact: dict[str, Any] = {}

    if cfg.verification.slopes:
        with verdict.guard("Eq19", "Eq19"):
            report = curve_metric_slope(run, nl, None, t0)
            artifact["unperturbed"] = report.to_json()
            write_frame(slope_ladder_frame(report), ctx.out / "slope-ladder.csv")
            verdict.within("Eq19", "Eq19", report.finest_rel_error, tol.metric_slope)
        if ctx.run_beta is not None:
            with verdict.guard("Eq20", "Eq20"):
                report = curve_metric_slope(ctx.run_beta, nl, ctx.run_beta.beta, t0)
                artifact["perturbed"] = report.to_json()
                verdict.within("Eq20", "Eq20", report.finest_rel_error, tol.metric_slope)
        else:
            verdict.skip("Eq20", "Eq20", "no perturbation")
        with verdict.guard("W2-oracle", "W2-oracle"):
            verdict.within("W2-oracle", "W2-oracle", _w2_oracle(ctx, t0), tol.w2_oracle)

    if not cfg.verification.gradient_flow:
        for name in names[3:]:
            verdict.skip(name, name, "gradient flow toggle off")
        write_json(artifact, ctx.out / "slopes.json")
        return

    with verdict.guard("FW", "FW"):
        p_t0 = run.snapshots[run.index_of(t0)]
        dissipation = dissipation_functional(p_t0, nl)
        root = math.sqrt(dissipation)
        comparisons: dict[str, dict[str, Any]] = {}
        fw, fw_fd = None, None
        for spec in cfg.slope_perturbations:
            perturbed = _slope_run(ctx, spec, p_t0)
            if perturbed is None:
                continue
            beta, run_beta = perturbed
            try:
                report = entropy_slope_comparison(run, [perturbed], nl, t0)
            except SingularDirectionError as exc:
                ctx.warn([f"{spec.label}: {exc}"])
                continue
            ctx.warn(report.warnings)
            fw, fw_fd = report.entropy_slope_unperturbed, report.entropy_slope_fd_unperturbed
            speed = curve_metric_slope(run_beta, nl, beta, t0).analytic_slope
            comparisons[spec.label] = {
                "kind": spec.kind,
                "analytic": report.entropy_slope_perturbed.get(beta.label),
                "finite_difference": report.entropy_slope_fd_perturbed.get(beta.label),
                "speed": speed,
            }
        if fw is None:
            fw = -root
        artifact["gradient_flow"] = {
            "t0": p_t0.time_tag,
            "dissipation": dissipation,
            "entropy_slope_unperturbed": fw,
            "entropy_slope_fd_unperturbed": fw_fd,
            "perturbations": comparisons,
        }

        identity_error = abs(fw + root)
        if fw_fd is None:
            verdict.within("FW", "FW", identity_error, tol.slope_equality)
        else:
            rel = abs(fw_fd - fw) / max(root, ZERO_SPREAD)
            verdict.within("FW", "FW", rel, tol.entropy_slope_fd, identity_error <= tol.slope_equality)

        errors = []
        for entry in comparisons.values():
            if entry["analytic"] is None or entry["finite_difference"] is None:
                continue
            scale = max(abs(entry["analytic"]), entry["speed"], ZERO_SPREAD)
            errors.append(abs(entry["finite_difference"] - entry["analytic"]) / scale)
        if errors:
            verdict.within("FWp", "FWp", max(errors), tol.entropy_slope_fd)
        else:
            verdict.skip("FWp", "FWp", "no usable perturbation")

        gaps = [fw - e["analytic"] for e in comparisons.values() if e["analytic"] is not None]
        if gaps:
            verdict.within("FW-FWp", "FW-FWp", max(gaps), tol.slope_order)
        else:
            verdict.skip("FW-FWp", "FW-FWp", "no usable perturbation")

        collinear = [e for e in comparisons.values() if e["kind"] == "collinear" and e["analytic"] is not None]
        if collinear:
            gap = max(abs(fw - e["analytic"]) for e in collinear)
            verdict.within("FW-equality", "FW-equality", gap, tol.slope_equality)
        else:
            verdict.skip("FW-equality", "FW-equality", "no collinear perturbation")
    write_json(artifact, ctx.out / "slopes.json")


def hwi_stage(ctx: RunContext) -> None:
    cfg, verdict, tol = ctx.config, ctx.verdict, ctx.tol
    names = ("HWI", "HWI-sweep", "geodesic", "displacement-rate", "displacement-convexity")
    problem = ctx.problem
    if problem.grid.dim != 1 or not cfg.verification.hwi:
        reason = "HWI checks are 1-D" if problem.grid.dim != 1 else "hwi toggle off"
        for name in names:
            verdict.skip(name, name, reason)
        return
    nl = problem.nl
    rho1 = DensityField.uniform(problem.grid)
    artifact: dict[str, Any] = {}

    with verdict.guard("HWI", "HWI"):
        result = hwi_check(problem.p0, rho1, nl)
        ctx.warn(result.warnings)
        artifact["pair"] = result.to_json()
        verdict.judged("HWI", "HWI", result.holds, max(result.lhs - result.mid, result.mid - result.rhs), result.tol)
    with verdict.guard("HWI-sweep", "HWI"):
        results = hwi_sweep(problem.grid, nl, cfg.verification.hwi_pairs, cfg.particles.seed, cfg.particles.n_workers)
        write_frame(hwi_frame(results), ctx.out / "hwi-sweep.csv")
        # violation in units of each pair's own tolerance
        worst = max(max(r.lhs - r.mid, r.mid - r.rhs) / r.tol for r in results)
        verdict.judged("HWI-sweep", "HWI", all(r.holds for r in results), worst, 1.0)

    plan = None
    with verdict.guard("geodesic", "geodesic"):
        plan = build_plan(problem.p0, rho1)
        geodesic = geodesic_check(plan)
        artifact["geodesic"] = geodesic
        verdict.within("geodesic", "geodesic", geodesic["max_abs_error"], tol.geodesic)
    if plan is None:
        verdict.skip("displacement-rate", "displacement-rate", "no transport plan")
        verdict.skip("displacement-convexity", "displacement-convexity", "no transport plan")
    else:
        with verdict.guard("displacement-rate", "displacement-rate"):
            rate = displacement_rate_check(plan, nl)
            artifact["displacement_rate"] = rate
            verdict.within("displacement-rate", "displacement-rate", rate["rel_error"], tol.displacement_rate)
        with verdict.guard("displacement-convexity", "displacement-convexity"):
            convexity = displacement_convexity(plan, nl)
            artifact["displacement_convexity"] = convexity
            verdict.within(
                "displacement-convexity",
                "displacement-convexity",
                max(0.0, -convexity["min_second_difference"]),
                tol.convexity,
            )
    write_json(artifact, ctx.out / "hwi.json")


RUNNERS: dict[str, Callable[[RunContext], None]] = {
    "solve": solve_stage,
    "simulate": simulate_stage,
    "verify": verify_stage,
    "slopes": slopes_stage,
    "hwi": hwi_stage,
}


def run_experiment(config: ExperimentConfig, stages: Iterable[str] | None = None) -> Verdict:
    """Runs the requested stages and writes verdict.json into config.out_dir.

    A ConfigError from building the problem propagates before anything is
    written. Numerical errors inside a stage fail that stage and skip the
    stages that depend on it.
    """
    problem = build_problem(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = patch_global_g(str(out), config.storage_type)
    g.init_exp(config.exp_name, config.description, config.model_dump(mode="json"))

    ctx = RunContext(problem=problem, out=out)
    failed: set[str] = set()
    for stage in plan_stages(stages):
        blocked = [dep for dep in REQUIRES.get(stage, ()) if dep in failed]
        if blocked:
            log.warning({"msg": "stage skipped", "stage": stage, "blocked_by": ",".join(blocked)})
            ctx.verdict.skip(f"{stage}-stage", stage, f"{blocked[0]} failed")
            failed.add(stage)
            continue
        log.info({"msg": "stage start", "stage": stage})
        try:
            RUNNERS[stage](ctx)
        except EntroflowError as exc:
            log.warning({"msg": "stage failed", "stage": stage, "error": repr(exc)})
            ctx.verdict.fail(f"{stage}-stage", stage, str(exc))
            failed.add(stage)
        log.info({"msg": "stage stop", "stage": stage})

    settings = config.model_dump(mode="json", exclude={"out_dir", "storage_type"})
    write_json(ctx.verdict.to_json(exp_name=config.exp_name, config=settings), out / "verdict.json")
    write_json(get_readable_gin_config(), out / "operative-config.json")
    g.end_exp(ctx.verdict.statuses())
    return ctx.verdict
