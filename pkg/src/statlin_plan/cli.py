"""Command-line front end (``statlin-plan``)."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import artifacts as art
from .bounds import (brockett_model, check_membership, controllability_probe,
                     empirical_budget, empirical_error, loglog_slope, mc_standard_error)
from .config import ConfigError, RunConfig, default_config_text, load
from .core import ControlTrajectory, NonFiniteError
from .descent import (BUILDERS, STATE_SCALE, DryMassError, MASS_FLOOR,
                      feedback_model, feedback_norm_channel, feedback_scale, plain_model)
from .descent import simulation_model
from .lie import latin_hypercube, lifted_rank, plain_rank
from .ocp import SolverError, SolverOptions, solve, transcribe
from .propagate import PropagationError, propagate
from .sde import (ModelValidityError, default_dt, ensemble_from_paths, relative_errors,
                  simulate_paths)

log = logging.getLogger("statlin_plan")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
NUMERIC_ERRORS = (PropagationError, NonFiniteError, SolverError, FloatingPointError,
                  ModelValidityError, DryMassError, np.linalg.LinAlgError)
REMARK_CONTROLS = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (2 ** -0.5, 2 ** -0.5)]


class NumericFailure(RuntimeError):
    pass


# ------------------------------------------------------------------ helpers
def _out_dir(cfg, args):
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    return out


def _load_config(args):
    cfg = load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.simulation.seed = args.seed
        cfg.accessibility.seed = args.seed
    if getattr(args, "paths", None) is not None:
        if args.paths < 2:
            raise ConfigError("--paths must be >= 2")
        cfg.simulation.n_paths = args.paths
    if getattr(args, "epsilon", None) is not None:
        if not args.epsilon >= 0:
            raise ConfigError("--epsilon must be non-negative")
        cfg.bound.epsilon = args.epsilon
    return cfg


def build_nlp(cfg):
    ocp = BUILDERS[cfg.problem](cfg.model)
    return transcribe(ocp, cfg.solver.nodes, substeps=cfg.solver.substeps, fd=cfg.solver.fd)


def control_norms(cfg, W, means):
    if cfg.problem == "problem4":
        return np.abs(W[:, 0])
    return np.abs(feedback_norm_channel(W, means[:, :4]))


def _null_breakdown():
    return {k: None for k in ("terminal", "terminal_cov", "running", "regularization")}


# ------------------------------------------------------------------ commands
def cmd_solve(cfg, args):
    nlp = build_nlp(cfg)
    base = {"schema_version": art.SCHEMA_VERSION, "scenario": cfg.scenario,
            "formulation": cfg.formulation, "n_nodes": nlp.N, "n_decision": nlp.n_dec,
            "n_equality": nlp.n_eq, "n_inequality": nlp.n_ineq,
            "chance_margin": nlp.ocp.chance[0].margin if nlp.ocp.chance else None}
    if args.dry_run:
        x0 = nlp.initial_decision()
        value, parts = nlp.objective(x0)
        W, t_f = nlp.unpack(x0)
        summary = dict(base, dry_run=True, initial_t_f=t_f, initial_objective=value,
                       initial_breakdown=parts, control_labels=list(nlp.ocp.control_labels))
        print(json.dumps(art._jsonable(summary), indent=2, sort_keys=True))
        return EXIT_OK
    out = _out_dir(cfg, args)
    opts = SolverOptions(max_outer=cfg.solver.max_outer, max_inner=cfg.solver.max_inner,
                         kkt_tol=cfg.solver.kkt_tol, feas_tol=cfg.solver.feas_tol,
                         time_limit=cfg.solver.time_limit or None)
    report = {}
    try:
        rep = solve(nlp, opts)
    except NUMERIC_ERRORS as exc:
        report = dict(base, converged=False, message="numeric failure", error=str(exc),
                      t_f=nlp.unpack(nlp.initial_decision())[1], objective=None,
                      breakdown=_null_breakdown(), final_std=[None] * 4,
                      violations={"terminal": None, "path": None},
                      iterations={"outer": 0, "inner": 0}, kkt=None, wall_time=0.0)
        art.validate_report(report)
        art.write_json(os.path.join(out, "report.json"), report)
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    traj = nlp.belief_trajectory(rep.decision)
    ctrl = ControlTrajectory(traj.times, rep.W)
    art.write_belief(os.path.join(out, "belief_trajectory.csv"), traj)
    labels = nlp.ocp.control_labels or tuple(f"u{i}" for i in range(nlp.k))
    art.write_control(os.path.join(out, "control.csv"), ctrl, labels,
                      control_norms(cfg, rep.W, traj.means[:-1]))
    final_std = np.sqrt(np.clip(np.diag(traj.covs[-1]), 0.0, None))
    history = [{k: v for k, v in h.items() if k != "inner_message"} for h in rep.history]
    report = dict(base, converged=rep.converged, message=rep.message, t_f=rep.t_f,
                  objective=rep.objective, breakdown=rep.breakdown,
                  final_std=final_std[:4], final_mean=traj.means[-1],
                  violations={"terminal": rep.eq_violation, "path": rep.ineq_violation},
                  iterations={"outer": rep.outer_iterations, "inner": rep.inner_iterations},
                  kkt=rep.kkt, wall_time=rep.wall_time, history=history)
    art.validate_report(report)
    art.write_json(os.path.join(out, "report.json"), report)
    print(f"{cfg.scenario}: converged={rep.converged} t_f={rep.t_f:.3f}s "
          f"objective={rep.objective:.6e} final_std={np.round(final_std[:4], 3).tolist()}")
    return EXIT_OK if rep.converged else EXIT_NUMERIC


def _solver_belief(cfg, ctrl):
    """Statistical linearization of the planning model along a stored control."""
    ocp = BUILDERS[cfg.problem](cfg.model)
    return ocp, propagate(ocp.model, ocp.init, ctrl, cfg.solver.substeps)


def _node_indices(sim_times, nodes):
    idx = np.searchsorted(sim_times, nodes - 1e-9 * max(1.0, nodes[-1]))
    return np.clip(idx, 0, sim_times.size - 1)


def cmd_simulate(cfg, args):
    out = _out_dir(cfg, args)
    ctrl_path = args.control or os.path.join(out, "control.csv")
    if not os.path.exists(ctrl_path):
        raise art.ArtifactError(f"control artifact not found: {ctrl_path}")
    ctrl, _ = art.read_control(ctrl_path)
    params = cfg.model.rocket()
    model = simulation_model(params, cfg.problem)
    if ctrl.k != model.k:
        raise art.ArtifactError("control artifact does not match the scenario")
    sim = cfg.simulation
    dt = sim.dt or default_dt(ctrl)
    init = cfg.model.initial_belief()
    times, X = simulate_paths(model, init, ctrl, dt, sim.n_paths, sim.seed,
                              floor=(4, MASS_FLOOR))
    node_idx = _node_indices(times, ctrl.nodes)
    stats = ensemble_from_paths(times[node_idx], X[:, node_idx], sim.seed)
    _, traj = _solver_belief(cfg, ctrl)
    stats = stats.restrict(traj.times) if stats.times.size != traj.times.size else stats
    em, eP = relative_errors(stats, traj)

    k = min(sim.sample_paths, sim.n_paths)
    rows = [np.column_stack([np.full(times.size, p), times, X[p]]) for p in range(k)]
    art.write_csv(os.path.join(out, "paths_sample.csv"),
                  ["path", "t", *art.STATE_NAMES], np.vstack(rows) if rows else
                  np.empty((0, 7)))
    art.write_ensemble(os.path.join(out, "ensemble_stats.csv"), stats)
    art.write_csv(os.path.join(out, "relative_errors.csv"), ["t", "mean_rel_err", "cov_rel_err"],
                  np.column_stack([traj.times, em, eP]))
    # pre-saturation control norm at the nodes, every path
    if cfg.problem == "problem4":
        s = np.broadcast_to(ctrl.values[:, 0], (sim.n_paths, ctrl.n_intervals))
    else:
        s = feedback_norm_channel(ctrl.values[None], X[:, node_idx[:-1], :4])
    inside = (s >= params.u_min) & (s <= params.u_max)
    summary = {"n_paths": sim.n_paths, "seed": sim.seed, "dt": dt,
               "presaturation_in_bounds_fraction": float(inside.mean()),
               "max_mean_rel_err": float(em.max()), "max_cov_rel_err": float(eP.max())}
    art.write_json(os.path.join(out, "simulation.json"), summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_verify_bound(cfg, args):
    out = _out_dir(cfg, args)
    traj = art.read_belief(os.path.join(out, "belief_trajectory.csv"))
    ctrl, _ = art.read_control(os.path.join(out, "control.csv"))
    sim_path = os.path.join(out, "simulation.json")
    try:
        with open(sim_path, encoding="utf-8") as fh:
            sim = json.load(fh)
    except OSError:
        raise art.ArtifactError(f"missing {sim_path}; run 'simulate' first") from None
    stats = art.read_ensemble(os.path.join(out, "ensemble_stats.csv"), sim["n_paths"],
                              sim["seed"])
    if stats.times.size != traj.times.size or not np.allclose(stats.times, traj.times):
        raise art.ArtifactError("belief and ensemble grids differ")
    if ctrl.nodes.size != traj.times.size or not np.allclose(ctrl.nodes, traj.times):
        raise art.ArtifactError("control and belief grids differ")
    ocp = BUILDERS[cfg.problem](cfg.model)
    budget = empirical_budget(ocp.model, traj, ctrl, cfg.bound.epsilon)
    member = check_membership(budget, ctrl, traj)
    sup_m, sup_P = empirical_error(traj, stats)
    se = mc_standard_error(stats)
    result = {"constraint_lhs": member.value, "epsilon": cfg.bound.epsilon,
              "verdict": member.verdict, "sup_mean_err_sq": sup_m, "sup_cov_err": sup_P,
              "mc_standard_error": se,
              "bound_holds": bool(sup_m + sup_P <= member.value + 3 * se)}
    art.write_json(os.path.join(out, "bound_report.json"), result)
    print(json.dumps(art._jsonable(result), sort_keys=True))
    return EXIT_OK


def accessibility_points(count, seed):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(-5000, 5000, (count, 2)),
                            rng.uniform(-300, 300, (count, 2)),
                            rng.uniform(5000, 40000, count)])


def accessibility_table(cfg):
    a = cfg.accessibility
    params = cfg.model.rocket()
    open_model = plain_model(params)
    fb_model = feedback_model(params, eps_sat=None)
    nus = latin_hypercube(10, a.feedback_samples, seed=a.seed) * feedback_scale()
    rows = []
    for family, model, samples, depth, count in (
            ("open_loop", open_model, REMARK_CONTROLS, a.open_loop_depth, a.open_loop_points),
            ("feedback", fb_model, nus, a.feedback_depth, a.feedback_points)):
        for x in accessibility_points(count, a.seed + (0 if family == "open_loop" else 1)):
            rep = lifted_rank(model, x, samples, depth, a.tol_sv, state_scale=STATE_SCALE)
            pr = plain_rank(model, x, samples, 2, a.tol_sv, state_scale=STATE_SCALE)
            rows.append((family, x, rep, pr))
    return rows


def cmd_check_accessibility(cfg, args):
    out = _out_dir(cfg, args)
    rows = accessibility_table(cfg)
    codes = {"open_loop": 0, "feedback": 1}
    data = np.array([[codes[f], *x, r.lifted_dim, r.target_dim, pr] for f, x, r, pr in rows])
    art.write_csv(os.path.join(out, "accessibility.csv"),
                  ["family", *art.STATE_NAMES, "lifted_dim", "target_dim", "plain_rank"], data)
    summary = {}
    for fam in codes:
        dims = [r.lifted_dim for f, _, r, _ in rows if f == fam]
        summary[fam] = {"points": len(dims), "lifted_dim_min": min(dims),
                        "lifted_dim_max": max(dims), "target_dim": rows[0][2].target_dim,
                        "verdict": "accessible" if min(dims) == rows[0][2].target_dim
                        else "inconclusive"}
    summary["family_codes"] = codes
    art.write_json(os.path.join(out, "accessibility.json"), summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_probe(cfg, args):
    out = _out_dir(cfg, args)
    p = cfg.probe
    model = brockett_model(p.noise)
    base = ControlTrajectory(np.linspace(0.0, 1.0, p.base_intervals + 1),
                             np.ones((p.base_intervals, 2)))
    rows = controllability_probe(model, np.zeros(3), np.array([1.0, 1.0, 0.0]), base,
                                 p.eta, np.zeros((3, 3)), t_f=p.t_f,
                                 steps_per_interval=p.steps_per_interval)
    art.write_csv(os.path.join(out, "probe.csv"), ["eta", "constraint_value", "terminal_error"],
                  [[r.eta, r.constraint_value, r.terminal_error] for r in rows])
    slope = loglog_slope(rows) if len(rows) > 1 else math.nan
    art.write_json(os.path.join(out, "probe.json"), {"loglog_slope": slope})
    for r in rows:
        print(f"eta={r.eta:<8g} constraint={r.constraint_value:.6e} "
              f"terminal_error={r.terminal_error:.3e}")
    print(f"log-log slope: {slope:.4f}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate,
            "check-accessibility": cmd_check_accessibility,
            "verify-bound": cmd_verify_bound, "probe": cmd_probe}


def _parser():
    p = argparse.ArgumentParser(prog="statlin-plan",
                                description="Robust planning by statistical linearization.")
    p.add_argument("--print-default-config", action="store_true",
                   help="print the reference scenario configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--out", help="output directory (overrides run.out)")
        sp.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")

    sp = sub.add_parser("solve", help="solve the configured planning problem")
    common(sp)
    sp.add_argument("--dry-run", action="store_true", help="print the transcription only")
    sp = sub.add_parser("simulate", help="Monte Carlo simulation of a stored control")
    common(sp)
    sp.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    sp.add_argument("--control", help="control.csv to simulate (default: <out>/control.csv)")
    sp = sub.add_parser("check-accessibility", help="lifted rank tests")
    common(sp)
    sp = sub.add_parser("verify-bound", help="post-process the error functional")
    common(sp)
    sp.add_argument("--epsilon", type=float, help="admissibility threshold")
    sp = sub.add_parser("probe", help="time-rescaling probe on a control-linear model")
    common(sp)
    sp = sub.add_parser("print-default-config", help="print the reference configuration")
    sp.add_argument("--scenario", default="problem4", choices=("problem4", "problem5",
                                                                "problem6"))
    return p


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_default_config or args.command == "print-default-config":
        sys.stdout.write(default_config_text(getattr(args, "scenario", "problem4")))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, art.ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
