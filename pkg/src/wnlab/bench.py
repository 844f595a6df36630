"""Random problem ensembles, trial campaigns and the error metrics.

An experiment sweeps (r0, eta_ratio, variant) triples over freshly drawn
instances.  Per trial the harness integrates the flow, solves the exact LP,
and reports

    eps1 = ||xtilde_inf||_1 - min { ||z||_1 : z >= 0, A z = b }   (l1 gap)
    eps2 = ||xtilde_inf - x_star||_1                              (reconstruction)

eps1 uses unweighted l1 and the nonnegative LP; the weighted LP value behind
the closed-form bound is reported separately inside the per-trial bound
report.  Trials are deterministic: every random stream is derived from
(seed, sweep index, trial index), so execution order and worker count do not
change any result.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import bounds, oracle
from .errors import ConfigurationError, NotApplicableError, WnlabError
from .flow import FlowConfig, InitSpec, LOSS_TOL, integrate
from .model import ProblemInstance, xtilde

GROUND_TRUTHS = ("gaussian_abs", "sparse_abs", "sparse_signed")


def derive_seed(*parts: int) -> int:
    """Stable 64-bit stream seed from integer parts."""
    ss = np.random.SeedSequence([int(p) & 0x7FFFFFFF for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class ExperimentSpec:
    N: int = 200
    M: int = 50
    ground_truth: str = "gaussian_abs"
    s: int = 10  # sparsity for the sparse ground truths
    sweep: list[tuple[float, float, str]] = field(default_factory=list)
    trials: int = 3
    flow: FlowConfig = field(default_factory=FlowConfig)
    seed: int = 0

    def __post_init__(self):
        if self.ground_truth not in GROUND_TRUTHS:
            raise ConfigurationError(f"unknown ground truth {self.ground_truth!r}")
        if self.s > self.N:
            raise ConfigurationError("sparsity s cannot exceed N")
        if self.trials < 1:
            raise ConfigurationError("need at least one trial")


@dataclass
class TrialResult:
    sweep_index: int
    trial: int
    r0: float
    eta_ratio: float
    variant: str
    eps1: float | None = None
    eps2: float | None = None
    final_loss: float = np.nan
    iters: int = 0
    terminal: str = ""
    q_unweighted: float | None = None
    bound: dict | None = None
    error: str | None = None


def gen_instance(N: int, M: int, ground_truth: str, seed: int, s: int = 10) -> ProblemInstance:
    """A = G/sqrt(M) with standard normal G; b = A x_star.

    gaussian_abs: x_star = |z|; sparse_abs: s-sparse, |z| on a random support
    scaled to ||x_star||_1 = s; sparse_signed: same support scaling without
    the absolute value.
    """
    if ground_truth not in GROUND_TRUTHS:
        raise ConfigurationError(f"unknown ground truth {ground_truth!r}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((M, N)) / np.sqrt(M)
    if ground_truth == "gaussian_abs":
        x_star = np.abs(rng.standard_normal(N))
    else:
        z = rng.standard_normal(N)
        support = rng.choice(N, size=s, replace=False)
        z_star = np.zeros(N)
        z_star[support] = z[support]
        scaled = s * z_star / np.sum(np.abs(z_star))
        x_star = np.abs(scaled) if ground_truth == "sparse_abs" else scaled
    return ProblemInstance(A=A, b=A @ x_star, x_star=x_star)


def _run_trial(args) -> TrialResult:
    spec, sweep_index, trial = args
    r0, eta, variant = spec.sweep[sweep_index]
    result = TrialResult(
        sweep_index=sweep_index, trial=trial, r0=r0, eta_ratio=eta, variant=variant
    )
    try:
        inst_seed = derive_seed(spec.seed, sweep_index, trial, 1)
        init_seed = derive_seed(spec.seed, sweep_index, trial, 2)
        inst = gen_instance(spec.N, spec.M, spec.ground_truth, inst_seed, spec.s)
        cfg = replace(
            spec.flow,
            variant=variant,
            eta_ratio=eta,
            init=InitSpec(mode="random_positive", r0=r0, seed=init_seed),
        )
        rec = integrate(cfg, inst)
        result.final_loss = rec.terminal.final_loss
        result.iters = rec.terminal.iters
        result.terminal = rec.terminal.reason
        xt_inf = rec.terminal.final_xtilde

        if variant == "signed":
            sol = oracle.min_l1_signed(inst)
        else:
            sol = oracle.min_weighted_l1_nonneg(inst, np.ones(inst.n))
        if sol.optimal:
            result.q_unweighted = sol.objective
            if variant != "signed":
                result.eps1 = float(np.sum(np.abs(xt_inf))) - sol.objective
        if inst.x_star is not None:
            result.eps2 = float(np.sum(np.abs(xt_inf - inst.x_star)))

        if variant != "signed" and rec.terminal.reason == LOSS_TOL and sol.optimal:
            # depth-2 weights are all ones, so the weighted LP value equals
            # the unweighted one already solved; deeper models need their own
            try:
                xt0 = xtilde(rec.initial_state, cfg.depth)
                if cfg.depth == 2:
                    q_w = sol.objective
                else:
                    sol_w = oracle.min_weighted_l1_nonneg(
                        inst, bounds.depth_weights(xt0, cfg.depth)
                    )
                    if not sol_w.optimal:
                        raise NotApplicableError("weighted LP infeasible")
                    q_w = sol_w.objective
                result.bound = bounds.theorem_gap_check(rec, q_w, inst).to_dict()
            except WnlabError:
                pass
    except WnlabError as exc:
        result.error = f"{type(exc).__name__}: {exc}"
    except FloatingPointError as exc:  # pragma: no cover - defensive
        result.error = f"FloatingPointError: {exc}"
    return result


def worker_count() -> int:
    env = os.environ.get("WNLAB_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"WNLAB_THREADS must be an integer, got {env!r}")
    return 1


def run_campaign(
    spec: ExperimentSpec,
    workers: int | None = None,
    collector: list | None = None,
) -> list[TrialResult]:
    """All (sweep point, trial) pairs; failures are recorded per trial, never
    raised.  Results come back sorted by (sweep_index, trial) regardless of
    execution order.  Completed trials are appended to collector as they
    finish, so an interrupted campaign can still flush partial results."""
    if not spec.sweep:
        raise ConfigurationError("sweep list is empty")
    jobs = [
        (spec, si, tr)
        for si in range(len(spec.sweep))
        for tr in range(spec.trials)
    ]
    if workers is None:
        workers = worker_count()
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_trial, jobs):
                results.append(res)
                if collector is not None:
                    collector.append(res)
    else:
        for job in jobs:
            res = _run_trial(job)
            results.append(res)
            if collector is not None:
                collector.append(res)
    return sorted(results, key=lambda r: (r.sweep_index, r.trial))


@dataclass
class SweepSummary:
    sweep_index: int
    r0: float
    eta_ratio: float
    variant: str
    n_trials: int
    n_failed: int
    eps1_mean: float | None = None
    eps1_min: float | None = None
    eps1_max: float | None = None
    eps2_mean: float | None = None
    eps2_min: float | None = None
    eps2_max: float | None = None
    iters_mean: float | None = None
    iters_min: int | None = None
    iters_max: int | None = None


def _stats(values):
    vals = [v for v in values if v is not None and np.isfinite(v)]
    if not vals:
        return None, None, None
    return float(np.mean(vals)), float(np.min(vals)), float(np.max(vals))


def aggregate(results: list[TrialResult]) -> list[SweepSummary]:
    """Per sweep point: mean/min/max of the metrics over successful trials."""
    if not results:
        raise ConfigurationError("no results to aggregate")
    out = []
    for si in sorted({r.sweep_index for r in results}):
        group = [r for r in results if r.sweep_index == si]
        ok = [r for r in group if r.error is None]
        head = group[0]
        summ = SweepSummary(
            sweep_index=si,
            r0=head.r0,
            eta_ratio=head.eta_ratio,
            variant=head.variant,
            n_trials=len(group),
            n_failed=len(group) - len(ok),
        )
        summ.eps1_mean, summ.eps1_min, summ.eps1_max = _stats([r.eps1 for r in ok])
        summ.eps2_mean, summ.eps2_min, summ.eps2_max = _stats([r.eps2 for r in ok])
        im, imin, imax = _stats([float(r.iters) for r in ok])
        summ.iters_mean = im
        summ.iters_min = int(imin) if imin is not None else None
        summ.iters_max = int(imax) if imax is not None else None
        out.append(summ)
    return out
