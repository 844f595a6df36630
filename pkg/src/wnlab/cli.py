"""Command-line surface.

Subcommands: gen, run, sweep, reproduce, audit, oracle, prob.  All outputs go
to files (atomic write) plus a one-line summary on stdout.  Exit codes:
0 success (infeasible LPs and non-converged runs are outcomes, not errors),
1 usage/configuration, 2 data, 3 numerical failure.  WNLAB_THREADS caps the
campaign worker pool.  Config precedence: file < flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, bounds, dataio, invariants, oracle
from .bench import ExperimentSpec, gen_instance, run_campaign
from .errors import (
    ConfigurationError,
    DataFormatError,
    DegenerateInstanceError,
    DivergedError,
    DomainError,
    InvariantOverflowError,
    NotApplicableError,
    PreconditionError,
    SingularStateError,
    SolverFailureError,
    StallError,
    WnlabError,
)
from .flow import FlowConfig, InitSpec, Terminal, TrajectoryRecord, integrate
from .model import DenseState, PolarState, ProblemInstance, SignedState, projectors, xtilde

FIGURES = ("fig2", "fig3", "fig4", "fig5")
_USAGE_ERRORS = (ConfigurationError, DomainError, NotApplicableError)
_DATA_ERRORS = (DataFormatError, DegenerateInstanceError, FileNotFoundError)
_NUMERICAL_ERRORS = (
    SolverFailureError,
    DivergedError,
    StallError,
    InvariantOverflowError,
    PreconditionError,
    SingularStateError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


# ---------------------------------------------------------------------------
# shared flag groups
# ---------------------------------------------------------------------------

def _add_flow_flags(p: argparse.ArgumentParser):
    p.add_argument("--variant", default="plain",
                   choices=("plain", "wn_constant", "wn_dynamic", "signed"))
    p.add_argument("--eta-ratio", type=float, default=0.1)
    p.add_argument("--r0", type=float, default=1.0)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--max-iters", type=int, default=200_000)
    p.add_argument("--loss-tol", type=float, default=1e-12)
    p.add_argument("--step", default="linesearch",
                   help="'linesearch', 'fixed' (default size) or 'fixed:<h>'")
    p.add_argument("--renormalize", choices=("on", "off"), default="on")
    p.add_argument("--snapshot-stride", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)


def _parse_step(step: str) -> tuple[str, float | None]:
    if step == "linesearch":
        return "linesearch", None
    if step == "fixed":
        return "fixed", None
    if step.startswith("fixed:"):
        try:
            return "fixed", float(step.split(":", 1)[1])
        except ValueError:
            raise ConfigurationError(f"bad step size in {step!r}")
    raise ConfigurationError(f"unknown step policy {step!r}")


def _flow_config(args) -> FlowConfig:
    policy, h = _parse_step(args.step)
    return FlowConfig(
        depth=args.depth,
        variant=args.variant,
        eta_ratio=args.eta_ratio,
        step=policy,
        step_size=h,
        max_iters=args.max_iters,
        loss_tol=args.loss_tol,
        snapshot_stride=args.snapshot_stride,
        seed=args.seed,
        init=InitSpec(mode="random_positive", r0=args.r0, seed=args.seed),
        renormalize=args.renormalize == "on",
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_or_gen_instance(args) -> ProblemInstance:
    if args.inst:
        return dataio.load_instance(args.inst)
    return gen_instance(args.n, args.m, args.ground_truth, args.seed, args.s)


def _add_instance_flags(p, with_files=True):
    if with_files:
        p.add_argument("--inst", help="instance directory (A/b[/x_star/w])")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--ground-truth", default="gaussian_abs",
                   choices=bench.GROUND_TRUTHS)
    p.add_argument("--s", type=int, default=10, help="sparsity of sparse truths")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    inst = gen_instance(args.n, args.m, args.ground_truth, args.seed, args.s)
    out = _out_dir(args)
    dataio.save_instance(inst, out, fmt=args.fmt)
    print(f"gen: wrote {args.ground_truth} instance {inst.m}x{inst.n} to {out}")
    return 0


def cmd_run(args) -> int:
    inst = _load_or_gen_instance(args)
    cfg = _flow_config(args)
    rec = integrate(cfg, inst)
    out = _out_dir(args)
    coords = None
    if args.coords:
        coords = [int(c) for c in args.coords.split(",")]
    dataio.write_trajectory_csv(out / "trajectory.csv", rec, coords=coords)
    dataio.write_terminal_json(out / "summary.json", rec)
    t = rec.terminal
    print(
        f"run: {cfg.variant} depth={cfg.depth} -> {t.reason} after {t.iters} iters, "
        f"loss={t.final_loss:.3e}, |xtilde|_1={np.sum(np.abs(t.final_xtilde)):.6g}"
    )
    return 0


def _spec_from_json(path) -> ExperimentSpec:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: {exc}")
    flow_raw = raw.pop("flow", {})
    sweep = [tuple(x) for x in raw.pop("sweep", [])]
    try:
        cfg = FlowConfig(**flow_raw)
        return ExperimentSpec(sweep=sweep, flow=cfg, **raw)
    except TypeError as exc:
        raise DataFormatError(f"{path}: {exc}")


def _write_campaign(out: Path, results, prefix="") -> None:
    dataio.write_results_csv(out / f"{prefix}results.csv", results)
    dataio.write_summary_csv(out / f"{prefix}summary.csv", bench.aggregate(results))


def cmd_sweep(args) -> int:
    spec = _spec_from_json(args.config)
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed_override is not None:
        overrides["seed"] = args.seed_override
    if overrides:
        spec = replace(spec, **overrides)
    out = _out_dir(args)
    collector: list = []
    try:
        results = run_campaign(spec, workers=args.workers, collector=collector)
    except KeyboardInterrupt:
        _write_campaign(out, sorted(collector, key=lambda r: (r.sweep_index, r.trial)))
        print(f"sweep: interrupted; flushed {len(collector)} completed trials to {out}")
        return 0
    _write_campaign(out, results)
    failed = sum(1 for r in results if r.error)
    print(f"sweep: {len(results)} trials ({failed} failed) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# figure reproduction
# ---------------------------------------------------------------------------

_R0_GRID = (0.1, 0.316, 1.0, 3.16, 10.0)
_ETA_GRID = (1.0, 0.3, 0.1, 0.03)


def figure_spec(figure: str, scale: str, seed: int = 0) -> ExperimentSpec:
    if figure not in FIGURES:
        raise ConfigurationError(f"unknown figure id {figure!r}")
    if scale == "desk":
        N, M, trials, iters = 200, 50, 3, 200_000
    elif scale == "paper":
        N, M, trials, iters = 1000, 150, 10, 1_000_000
    else:
        raise ConfigurationError(f"unknown scale {scale!r}")
    cfg = FlowConfig(step="linesearch", max_iters=iters, loss_tol=1e-12,
                     snapshot_stride=10_000)
    if figure == "fig2":
        truth = "gaussian_abs"
        sweep = [(r0, 0.1, v) for r0 in _R0_GRID for v in ("plain", "wn_constant")]
    elif figure == "fig3":
        truth = "gaussian_abs"
        sweep = [(1.0, eta, "wn_constant") for eta in _ETA_GRID]
        sweep.append((1.0, 0.1, "plain"))  # reference level
    elif figure == "fig4":
        truth = "sparse_abs"
        grid = _R0_GRID + (100.0,)
        sweep = [(r0, 0.1, v) for r0 in grid for v in ("plain", "wn_constant")]
    else:  # fig5
        truth = "sparse_signed"
        sweep = [(r0, 0.1, "signed") for r0 in _R0_GRID]
    return ExperimentSpec(
        N=N, M=M, ground_truth=truth, s=10, sweep=sweep, trials=trials,
        flow=cfg, seed=seed,
    )


def _loss_curve_rows(spec: ExperimentSpec, sweep_index: int, cap=2000):
    """Loss trace of trial 0 at one sweep point, downsampled for plotting."""
    r0, eta, variant = spec.sweep[sweep_index]
    inst = gen_instance(
        spec.N, spec.M, spec.ground_truth,
        bench.derive_seed(spec.seed, sweep_index, 0, 1), spec.s,
    )
    cfg = replace(
        spec.flow, variant=variant, eta_ratio=eta,
        init=InitSpec(mode="random_positive", r0=r0,
                      seed=bench.derive_seed(spec.seed, sweep_index, 0, 2)),
    )
    rec = integrate(cfg, inst)
    idx = np.unique(np.linspace(0, len(rec.losses) - 1, min(cap, len(rec.losses))).astype(int))
    return [(int(i), float(rec.losses[i])) for i in idx], (r0, eta, variant)


def _panel_header(figure, panel, x, y) -> str:
    return f"# figure={figure} panel={panel} x={x} y={y}"


def cmd_reproduce(args) -> int:
    if args.scale == "paper" and not args.accept_runtime:
        runs = {"fig2": 100, "fig3": 50, "fig4": 120, "fig5": 50}[args.figure]
        print(
            f"reproduce: paper scale means ~{runs} runs of up to 1e6 iterations "
            f"at N=1000 (hours of compute); pass --accept-runtime to proceed"
        )
        return 1
    spec = figure_spec(args.figure, args.scale, seed=args.seed)
    if args.trials is not None:
        spec = replace(spec, trials=args.trials)
    if args.n is not None:
        spec = replace(spec, N=args.n)
    if args.m is not None:
        spec = replace(spec, M=args.m)
    if args.max_iters is not None:
        spec = replace(spec, flow=replace(spec.flow, max_iters=args.max_iters))
    out = _out_dir(args)

    collector: list = []
    try:
        results = run_campaign(spec, workers=args.workers, collector=collector)
    except KeyboardInterrupt:
        _write_campaign(out, sorted(collector, key=lambda r: (r.sweep_index, r.trial)))
        print(f"reproduce: interrupted; flushed {len(collector)} trials to {out}")
        return 0
    _write_campaign(out, results)
    summaries = bench.aggregate(results)

    # panel a: error metric against the swept axis
    metric = "eps2" if args.figure in ("fig4", "fig5") else "eps1"
    xname = "eta_ratio" if args.figure == "fig3" else "r0"
    lines = [
        _panel_header(args.figure, "a", xname, metric),
        f"{xname},variant,{metric}_mean,{metric}_min,{metric}_max",
    ]
    for s in summaries:
        mean = getattr(s, f"{metric}_mean")
        lo = getattr(s, f"{metric}_min")
        hi = getattr(s, f"{metric}_max")
        x = s.eta_ratio if xname == "eta_ratio" else s.r0
        lines.append(
            ",".join(
                "" if v is None else f"{v:.17g}" if isinstance(v, float) else str(v)
                for v in (x, s.variant, mean, lo, hi)
            )
        )
    dataio.atomic_write_text(out / "panel_a.csv", "\n".join(lines) + "\n")

    # fig3 also reports the accuracy/iterations trade-off
    if args.figure == "fig3":
        lines = [
            _panel_header("fig3", "b", "eta_ratio", "iters"),
            "eta_ratio,variant,iters_mean,iters_min,iters_max",
        ]
        for s in summaries:
            lines.append(
                f"{s.eta_ratio:.17g},{s.variant},"
                f"{'' if s.iters_mean is None else f'{s.iters_mean:.17g}'},"
                f"{'' if s.iters_min is None else s.iters_min},"
                f"{'' if s.iters_max is None else s.iters_max}"
            )
        dataio.atomic_write_text(out / "panel_b.csv", "\n".join(lines) + "\n")
    else:
        # loss curves for trial 0 of each swept point of the main variant
        lines = [
            _panel_header(args.figure, "b", "iter", "loss"),
            "r0,eta_ratio,variant,iter,loss",
        ]
        for si in range(len(spec.sweep)):
            r0, eta, variant = spec.sweep[si]
            if args.figure != "fig5" and variant != "wn_constant":
                continue
            rows, _ = _loss_curve_rows(spec, si)
            for it, lo in rows:
                lines.append(f"{r0:.17g},{eta:.17g},{variant},{it},{lo:.17g}")
        dataio.atomic_write_text(out / "panel_b.csv", "\n".join(lines) + "\n")

    failed = sum(1 for r in results if r.error)
    print(
        f"reproduce {args.figure} ({args.scale}): {len(results)} trials "
        f"({failed} failed) -> {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------

def _audit_checks(traj, inst, proj, eta, drift_tol, res_tol):
    """Per-flow applicable checks; returns (checks dict, drift reports, series rows)."""
    cfg = traj.config
    L = cfg.depth
    checks: dict[str, str] = {}
    refs = None
    if cfg.variant == "wn_dynamic":
        sol = oracle.min_weighted_l1_nonneg(inst)
        if sol.optimal:
            refs = {"lp_vertex": sol.z}
            # x_star lives in product space; it is feasible whenever nonnegative
            if inst.x_star is not None and np.all(inst.x_star >= 0):
                refs["truth"] = inst.x_star
    reports = invariants.drift_report(traj, proj, bregman_refs=refs)
    by_name = {r.quantity: r for r in reports}

    if cfg.variant == "plain":
        if "h0" in by_name and np.isfinite(by_name["h0"].max_abs_drift):
            checks["h0_conserved"] = _verdict(by_name["h0"].max_abs_drift <= drift_tol)
        else:
            checks["h0_conserved"] = "skipped (left domain)"
        checks["h_eta_conserved"] = "skipped (plain run)"
    elif cfg.variant == "wn_constant":
        if "h_eta" in by_name and np.isfinite(by_name["h_eta"].max_abs_drift):
            checks["h_eta_conserved"] = _verdict(by_name["h_eta"].max_abs_drift <= drift_tol)
        else:
            checks["h_eta_conserved"] = "skipped (left domain)"
        try:
            res = invariants.invariant_comparison_residual(traj, proj, L, eta)
            checks["comparison_identity"] = _verdict(float(np.max(res)) <= res_tol)
        except WnlabError as exc:
            checks["comparison_identity"] = f"skipped ({exc})"
    if isinstance(traj.snapshots[0].state, PolarState):
        if cfg.renormalize:
            checks["u_norm_unit"] = _verdict(by_name["u_norm"].max_abs_drift <= 1e-12)
        else:
            checks["u_norm_unit"] = (
                f"info (renormalization off; drift {by_name['u_norm'].max_abs_drift:.3g})"
            )
    if cfg.step == "linesearch":
        checks["loss_monotone"] = _verdict(bool(np.all(np.diff(traj.losses) <= 0)))
    else:
        checks["loss_monotone"] = "skipped (fixed step)"
    checks["positivity"] = _verdict(traj.positivity_violations == 0)
    if refs:
        bads = [
            by_name[f"bregman[{k}]"].violations
            for k in refs
            if f"bregman[{k}]" in by_name and by_name[f"bregman[{k}]"].violations is not None
        ]
        checks["bregman_monotone"] = _verdict(bool(bads) and all(v == 0 for v in bads))
    elif cfg.variant == "wn_dynamic":
        checks["bregman_monotone"] = "skipped (no feasible reference)"
    return checks, reports


def _verdict(ok: bool) -> str:
    return "pass" if ok else "FAIL"


def _infer_variant(snaps, requested: str) -> str:
    state = snaps[0].state
    if isinstance(state, DenseState):
        return "plain"
    if isinstance(state, SignedState):
        return "signed"
    # polar states: keep the requested polar flavor
    return requested if requested in ("wn_constant", "wn_dynamic") else "wn_constant"


def cmd_audit(args) -> int:
    inst = _load_or_gen_instance(args)
    proj = projectors(inst)
    if args.traj:
        snaps = dataio.read_trajectory_csv(args.traj)
        args.variant = _infer_variant(snaps, args.variant)
        cfg = _flow_config(args)
        losses = np.array([s.loss for s in snaps])
        ts = np.array([s.t for s in snaps])
        last = snaps[-1]
        from .flow import min_entry as state_min_entry

        violations = sum(1 for s in snaps[1:] if state_min_entry(s.state) <= 0)
        traj = TrajectoryRecord(
            config=cfg, snapshots=snaps, losses=losses, ts=ts,
            terminal=Terminal(
                reason="loaded", iters=last.iter, final_loss=last.loss,
                final_effective_x=np.zeros(inst.n),
                final_xtilde=xtilde(last.state, cfg.depth),
            ),
            positivity_violations=violations,
        )
    else:
        traj = integrate(_flow_config(args), inst)
    checks, reports = _audit_checks(
        traj, inst, proj, args.eta_ratio, args.drift_tol, args.res_tol
    )
    out = _out_dir(args)
    dataio.write_json(out / "drift_report.json", [r.to_dict() for r in reports])
    dataio.write_json(out / "checks.json", checks)
    _write_invariant_series_csv(out / "invariants.csv", traj, proj)
    for name, verdict in checks.items():
        print(f"audit: {name}: {verdict}")
    return 0


def _write_invariant_series_csv(path, traj, proj):
    series = invariants.invariant_series(traj, proj)
    h0_ref = series[0].h0
    he_ref = series[0].h_eta
    lines = ["t,u_norm,min_entry,gamma,h0_drift,h_eta_drift"]
    for item in series:
        h0_d = (
            "" if (item.h0 is None or h0_ref is None)
            else f"{np.max(np.abs(item.h0 - h0_ref)):.17g}"
        )
        he_d = (
            "" if (item.h_eta is None or he_ref is None)
            else f"{np.max(np.abs(item.h_eta - he_ref)):.17g}"
        )
        lines.append(
            f"{item.t:.17g},"
            f"{'' if item.u_norm is None else f'{item.u_norm:.17g}'},"
            f"{item.min_entry:.17g},"
            f"{'' if item.gamma is None else f'{item.gamma:.17g}'},"
            f"{h0_d},{he_d}"
        )
    dataio.atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# oracle and probability
# ---------------------------------------------------------------------------

def cmd_oracle(args) -> int:
    inst = dataio.load_instance(args.inst)
    if args.witness:
        v = oracle.positive_kernel_witness(inst)
        payload = {"witness_exists": v is not None,
                   "witness": None if v is None else v.tolist()}
        dataio.write_json(args.out, payload)
        print(f"oracle: positive kernel witness {'found' if v is not None else 'absent'}")
        return 0
    if args.signed:
        sol = oracle.min_l1_signed(inst)
    else:
        w = None
        if args.weights:
            w = dataio.read_matrix_csv(args.weights).ravel()
        sol = oracle.min_weighted_l1_nonneg(inst, w)
    dataio.write_json(args.out, sol.to_dict())
    if sol.optimal:
        print(f"oracle: optimal, objective {sol.objective:.12g} ({sol.iterations} pivots)")
    else:
        print(f"oracle: {sol.status}")
    return 0


def cmd_prob(args) -> int:
    if args.k is None:
        if args.m is None:
            raise ConfigurationError("give --k (kernel dimension) or --m (rows)")
        k = args.n - args.m
        if k < 1:
            raise ConfigurationError("kernel dimension N - M must be >= 1")
    else:
        k = args.k
    p = bounds.kernel_orthant_probability(args.n, k)
    print(f"{p:.12g}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wnlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random problem instance")
    _add_instance_flags(p, with_files=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fmt", choices=("csv", "bin"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="integrate one trajectory")
    _add_instance_flags(p)
    _add_flow_flags(p)
    p.add_argument("--coords", help="comma-separated coordinate subset to dump")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a campaign from a JSON experiment spec")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed-override", type=int)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reproduce", help="rebuild a result figure's data files")
    p.add_argument("--figure", required=True, choices=FIGURES)
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--accept-runtime", action="store_true",
                   help="confirm the multi-hour paper-scale budget")
    p.add_argument("--trials", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("audit", help="invariant drift and flow-law checks")
    _add_instance_flags(p)
    _add_flow_flags(p)
    p.add_argument("--traj", help="existing (full) trajectory CSV to audit")
    p.add_argument("--drift-tol", type=float, default=1e-4)
    p.add_argument("--res-tol", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("oracle", help="exact LP solves on an instance")
    p.add_argument("--inst", required=True)
    p.add_argument("--signed", action="store_true")
    p.add_argument("--witness", action="store_true")
    p.add_argument("--weights", help="CSV column of l1 weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("prob", help="kernel-orthant intersection probability")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--m", type=int)
    p.set_defaults(func=cmd_prob)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
