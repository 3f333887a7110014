"""Command line entry point: analyze, localize, simulate and noise-sweep on scenario files.

Exit codes: 0 success, 1 error (bad input, divergence, internal failure),
2 scenario not localizable.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import scenario as scen
from .constraints import check_assumptions
from .errors import (
    AssumptionViolationError,
    BoundInapplicableError,
    DivergenceError,
    LocalizationError,
    NotLocalizableError,
)
from .fileio import atomic_write_csv, atomic_write_text, rows_to_csv
from .localize import (
    error_bound,
    inject_matrix_noise,
    noise_nonsingularity_check,
    perturb_from_measurement_noise,
    solve_free,
    spectral_norm,
)
from .measurements import MODALITIES
from .protocol import (
    ProtocolNetwork,
    default_step,
    exponential_rate_estimate,
    predicted_rate,
    random_initialization,
    run_matrix_flow,
    run_protocol,
)
from .rigidity import assemble_rigidity_matrix, information_matrix, nullity_report, partition

EXIT_OK, EXIT_ERROR, EXIT_NOT_LOCALIZABLE = 0, 1, 2


def _embed(P, n):
    P = np.asarray(P, dtype=float).reshape(n, -1)
    return P if P.shape[1] == 3 else np.hstack([P, np.zeros((n, 3 - P.shape[1]))])


class Setup:
    """Everything derived from a scenario that the commands share."""

    def __init__(self, sc, modality=None, frames_seed=None):
        if modality is not None:
            sc = sc.with_(modality=modality)
        if frames_seed is not None:
            sc = sc.with_(frames_seed=frames_seed)
        self.sc = sc
        self.graph = sc.graph()
        self.na, self.n = sc.n_anchors, sc.n
        self.p_a = _embed(sc.anchor_positions, self.na)
        self.truth = sc.true_free_positions()
        self.ms = None if sc.explicit_mu else sc.measurements()
        self.assumptions = "ok"
        if self.ms is not None:
            try:
                check_assumptions(self.graph, self.ms)
            except AssumptionViolationError as exc:
                self.assumptions = f"violated: {exc}"
        self.cs = sc.constraint_set(measurements=self.ms) if self.ms is not None else sc.constraint_set()
        self.R = assemble_rigidity_matrix(self.cs, self.p_a, self.n, self.na)
        self.D = information_matrix(self.R)
        _, _, self.D_fa, self.D_ff = partition(self.D, self.na)

    def report(self):
        cfg = self.sc.configuration()
        if cfg is not None:
            return nullity_report(self.R, cfg.embedded())
        # without ground truth the trivial motions are taken at the solved positions
        try:
            free = self.solve().reshape(-1, 3)
        except NotLocalizableError:
            free = np.zeros((self.n - self.na, 3))
        return nullity_report(self.R, np.vstack([self.p_a, free]))

    def solve(self):
        return solve_free(self.D_ff, self.D_fa, self.p_a.ravel())

    def node_ids(self):
        return self.sc.ids


def _analysis_report(setup):
    rep = setup.report()
    ids = setup.node_ids()
    center = {i: 0 for i in range(setup.n)}
    member = {i: 0 for i in range(setup.n)}
    for dc in setup.cs.displacements:
        center[dc.center] += 1
        for j in dc.neighbors:
            member[j] += 1
    motion = np.zeros(setup.n - setup.na)
    if rep.free_null_motions.size:
        motion = np.linalg.norm(rep.free_null_motions.reshape(setup.n - setup.na, 3, -1), axis=(1, 2))
    nodes = []
    for i in range(setup.n):
        nodes.append({
            "id": ids[i],
            "role": "anchor" if i < setup.na else "free",
            "degree": setup.graph.degree(i),
            "constraints_centered": center[i],
            "constraints_member": member[i],
            "free_null_motion_weight": None if i < setup.na else float(motion[i - setup.na]),
        })
    out = {
        "scenario": setup.sc.name,
        "dimension": setup.sc.dimension,
        "modality": setup.cs.modality,
        "frames_seed": setup.sc.frames_seed,
        "m_r": setup.cs.m_r,
        "m_d": setup.cs.m_d,
        "skipped_stars": len(setup.cs.skipped),
        "assumptions": setup.assumptions,
    }
    out.update(rep.as_dict())
    out["nodes"] = nodes
    return out, rep


def cmd_analyze(args):
    setup = Setup(scen.load(args.scenario), args.modality, args.seed)
    report, rep = _analysis_report(setup)
    text = json.dumps(report, indent=2) + "\n"
    sys.stdout.write(text)
    if args.out:
        atomic_write_text(args.out, text)
    return EXIT_OK if rep.is_localizable else EXIT_NOT_LOCALIZABLE


def _describe_motions(motions, ids, na, limit=3):
    lines = []
    nf = motions.shape[0] // 3
    for m in range(min(limit, motions.shape[1])):
        v = motions[:, m].reshape(nf, 3)
        parts = [f"{ids[na + k]}:({v[k, 0]:+.3f},{v[k, 1]:+.3f},{v[k, 2]:+.3f})" for k in range(nf)
                 if np.linalg.norm(v[k]) > 1e-9]
        lines.append(f"  motion {m}: " + " ".join(parts))
    return "\n".join(lines)


def cmd_localize(args):
    setup = Setup(scen.load(args.scenario), args.modality, args.seed)
    ids, na, dim = setup.node_ids(), setup.na, setup.sc.dimension
    try:
        p_f = setup.solve()
    except NotLocalizableError as exc:
        msg = f"not localizable: {exc}\n"
        if exc.motions is not None and exc.motions.size:
            msg += "free-node motions that leave every constraint unchanged:\n"
            msg += _describe_motions(exc.motions, ids, na) + "\n"
        sys.stderr.write(msg)
        return EXIT_NOT_LOCALIZABLE
    P = p_f.reshape(-1, 3)
    resid = np.linalg.norm(setup.D_ff @ p_f + setup.D_fa @ setup.p_a.ravel())
    header = ["node"] + list("xyz"[:dim]) + ["error"]
    rows = []
    for k, p in enumerate(P):
        err = "" if setup.truth is None else f"{np.linalg.norm(p - setup.truth[k]):.6e}"
        rows.append([ids[na + k]] + [repr(float(c)) for c in p[:dim]] + [err])
    text = rows_to_csv(header, rows)
    sys.stdout.write(text)
    if args.out:
        atomic_write_csv(args.out, header, rows)
    sys.stderr.write(f"residual ||D_ff p_f + D_fa p_a|| = {resid:.3e}\n")
    if setup.truth is not None and len(P):
        sys.stderr.write(f"max error vs true positions = {np.abs(P - setup.truth).max():.3e}\n")
    return EXIT_OK


def _trajectory_rows(traj, ids, dim):
    rows = []
    if len(traj.times) == 0:
        return rows
    for r in range(len(traj.times)):
        for k, nid in enumerate(ids):
            err = "" if traj.errors is None else repr(float(traj.errors[r, k]))
            rows.append([r, nid] + [repr(float(c)) for c in traj.estimates[r, k, :dim]] + [err])
    return rows


def _trajectory_header(dim):
    return ["round", "node"] + list("xyz"[:dim]) + ["error"]


def _noise_perturbation(setup, model, sigma, rng_seed):
    if model == "matrix":
        return inject_matrix_noise(setup.D, setup.na, sigma, np.random.default_rng(rng_seed)), None
    ms = setup.ms if setup.ms is not None else setup.sc.measurements()
    stars = [dc.members for dc in setup.cs.displacements]
    D_hat, pert = perturb_from_measurement_noise(ms, sigma, rng_seed, setup.graph, setup.sc.anchor_positions,
                                                 stars=stars, angle_mode=setup.sc.angle_mode, D=setup.D)
    return pert, D_hat


def cmd_simulate(args):
    sc = scen.load(args.scenario)
    setup = Setup(sc, args.modality, None)
    ps = sc.protocol
    seed = ps.init_seed if args.seed is None else args.seed
    max_iters = ps.max_iters if args.max_iters is None else args.max_iters
    tol = ps.tol if args.tol is None else args.tol
    step = ps.step if args.step is None else args.step
    out = args.out or f"{sc.name}_simulate"
    os.makedirs(out, exist_ok=True)
    ids = setup.sc.free_ids
    dim = sc.dimension
    header = _trajectory_header(dim)
    nf = setup.n - setup.na

    if nf == 0:
        atomic_write_csv(os.path.join(out, "trajectory.csv"), header, [])
        summary = {"scenario": sc.name, "free_nodes": 0, "rounds": 0, "stop_reason": "no_free_nodes",
                   "init_seed": seed}
        atomic_write_text(os.path.join(out, "summary.json"), json.dumps(summary, indent=2) + "\n")
        sys.stdout.write(json.dumps(summary, indent=2) + "\n")
        return EXIT_OK

    network = ProtocolNetwork(setup.cs, setup.p_a, setup.n, setup.na)
    init = random_initialization(setup.p_a, nf, seed)
    t0 = time.perf_counter()
    try:
        traj = run_protocol(network, init=init, h=step, max_iters=max_iters, tol=tol, truth=setup.truth,
                            stop=ps.stop if setup.truth is not None else "increment")
    except DivergenceError as exc:
        sys.stderr.write(f"diverged: {exc}; try --step below {exc.suggested_step:.3e}\n")
        return EXIT_ERROR
    elapsed = time.perf_counter() - t0
    atomic_write_csv(os.path.join(out, "trajectory.csv"), header, _trajectory_rows(traj, ids, dim))
    rate = exponential_rate_estimate(traj)
    summary = {
        "scenario": sc.name,
        "modality": setup.cs.modality,
        "init_seed": seed,
        "step": traj.h,
        "rounds": traj.rounds,
        "stop_reason": traj.stop_reason,
        "locality_ok": network.check_locality(),
        "final_errors": None if traj.errors is None else dict(zip(ids, map(float, traj.errors[-1]))),
        "max_final_error": None if traj.errors is None else float(traj.errors[-1].max()),
        "measured_rate_per_round": rate,
        "elapsed_s": elapsed,
    }
    if network.D_ff.size and np.linalg.eigvalsh(network.D_ff)[0] > 0:
        summary["predicted_rate_per_round"] = predicted_rate(network.D_ff, traj.h)[0]

    sigma = args.sigma[0] if args.sigma else sc.noise.sigma
    trials = sc.noise.trials if args.trials is None else args.trials
    noisy = []
    if sigma > 0:
        trial_rows = []
        for k in range(trials):
            pert, D_hat = _noise_perturbation(setup, sc.noise.model, sigma, [sc.noise.seed, k])
            D_ff = setup.D_ff + pert.dD_ff
            D_fa = setup.D_fa + pert.dD_fa
            h = default_step(D_ff) if step is None else step
            tr = run_matrix_flow(D_ff, D_fa, setup.p_a.ravel(), init, h, max_iters, tol, setup.truth)
            noisy.append(tr)
            atomic_write_csv(os.path.join(out, f"trajectory_trial{k:02d}.csv"), header,
                             _trajectory_rows(tr, ids, dim))
            row = {"trial": k, "seed": [sc.noise.seed, k], "norm_dD_ff": spectral_norm(pert.dD_ff),
                   "final_error": None if tr.errors is None else float(np.linalg.norm(tr.errors[-1]))}
            p_f = setup.truth.ravel() if setup.truth is not None else setup.solve()
            try:
                row["bound"] = error_bound(setup.D_ff, pert.dD_ff, pert.dD_fa, setup.p_a.ravel(), p_f)
                row["within_bound"] = row["final_error"] is None or row["final_error"] <= row["bound"] * (1 + 1e-6)
            except BoundInapplicableError:
                row["bound"], row["within_bound"] = None, None
            trial_rows.append(row)
        summary["noise"] = {"model": sc.noise.model, "sigma": sigma, "trials": trial_rows}

    text = json.dumps(summary, indent=2) + "\n"
    atomic_write_text(os.path.join(out, "summary.json"), text)
    sys.stdout.write(text)
    if not args.no_plots:
        from .plotting import plot_convergence, plot_trials

        plot_convergence(traj, os.path.join(out, "convergence.png"), ids, f"{sc.name}: per-node error")
        if noisy:
            plot_trials(noisy, os.path.join(out, "noisy_trials.png"), f"{sc.name}: sigma={sigma:g}")
    return EXIT_OK


NOISE_SWEEP_HEADER = ["sigma", "trial", "seed", "norm_dD_ff", "lambda_min", "applicable", "actual_error", "bound"]


def noise_sweep(setup, sigmas, trials, seed, model):
    """One row per (sigma, trial) comparing the perturbed solve with the noise-free one."""
    lam_min = float(np.linalg.eigvalsh(setup.D_ff)[0]) if setup.D_ff.size else float("inf")
    p_f = setup.solve()
    rows = []
    for sigma in sigmas:
        for k in range(trials):
            pert, _ = _noise_perturbation(setup, model, sigma, [seed, k])
            applicable = noise_nonsingularity_check(setup.D_ff, pert.dD_ff)
            try:
                p_hat = solve_free(setup.D_ff + pert.dD_ff, setup.D_fa + pert.dD_fa, setup.p_a.ravel())
                actual = float(np.linalg.norm(p_hat - p_f))
            except NotLocalizableError:
                actual = float("nan")
            bound = error_bound(setup.D_ff, pert.dD_ff, pert.dD_fa, setup.p_a.ravel(), p_f) if applicable \
                else float("nan")
            rows.append({"sigma": sigma, "trial": k, "seed": seed, "norm_dD_ff": spectral_norm(pert.dD_ff),
                         "lambda_min": lam_min, "applicable": applicable, "actual_error": actual, "bound": bound})
    return rows


def cmd_noise_sweep(args):
    sc = scen.load(args.scenario)
    setup = Setup(sc, args.modality, None)
    try:
        setup.solve()
    except NotLocalizableError as exc:
        sys.stderr.write(f"not localizable: {exc}\n")
        return EXIT_NOT_LOCALIZABLE
    sigmas = args.sigma or [0.0, sc.noise.sigma or 1e-3]
    trials = sc.noise.trials if args.trials is None else args.trials
    seed = sc.noise.seed if args.seed is None else args.seed
    rows = noise_sweep(setup, sigmas, trials, seed, sc.noise.model)
    table = [[repr(r["sigma"]), r["trial"], r["seed"], f"{r['norm_dD_ff']:.6e}", f"{r['lambda_min']:.6e}",
              str(r["applicable"]).lower(), f"{r['actual_error']:.6e}", f"{r['bound']:.6e}"] for r in rows]
    sys.stdout.write(f"# model={sc.noise.model} seed={seed} trials={trials}\n")
    sys.stdout.write(rows_to_csv(NOISE_SWEEP_HEADER, table))
    if args.out:
        atomic_write_csv(args.out, NOISE_SWEEP_HEADER, table)
        if not args.no_plots:
            from .plotting import plot_noise_sweep

            plot_noise_sweep(rows, os.path.splitext(args.out)[0] + ".png")
    violations = sum(1 for r in rows if r["applicable"] and r["actual_error"] > r["bound"] * (1 + 1e-9))
    sys.stderr.write(f"{sum(r['applicable'] for r in rows)}/{len(rows)} trials within the nonsingularity "
                     f"condition; {violations} bound violations\n")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="adrigidity", description="Angle-displacement localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_help):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, help=seed_help)
        p.add_argument("--modality", choices=MODALITIES, help="override the scenario's measurement modality")
        p.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    common(sub.add_parser("analyze", help="rigidity and localizability report"), "local-frame seed")
    common(sub.add_parser("localize", help="direct solve for free-node positions"), "local-frame seed")
    p = sub.add_parser("simulate", help="run the distributed protocol")
    common(p, "initialization seed")
    p.add_argument("--step", type=float, help="Euler step h (default 1/(2 lambda_max(D_ff)))")
    p.add_argument("--max-iters", type=int, help="round budget")
    p.add_argument("--tol", type=float, help="stopping tolerance")
    p.add_argument("--sigma", type=float, action="append", help="noise level for perturbed trials")
    p.add_argument("--trials", type=int, help="number of noisy trials")
    p = sub.add_parser("noise-sweep", help="perturbation table over a sigma grid")
    common(p, "noise seed")
    p.add_argument("--sigma", type=float, action="append", help="noise level (repeatable)")
    p.add_argument("--trials", type=int, help="trials per sigma")
    return parser


COMMANDS = {"analyze": cmd_analyze, "localize": cmd_localize, "simulate": cmd_simulate,
            "noise-sweep": cmd_noise_sweep}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except LocalizationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
