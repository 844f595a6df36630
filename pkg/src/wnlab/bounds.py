"""Closed-form constants, error bounds and certificates for the flows.

The suboptimality of the flow's limit against the exact LP value Q is
controlled by the closed-form error

    eps(beta1, beta_min) = log(beta1/beta_min) / log(Q/beta1)      depth 2,
                           L (beta1^g - beta_min^g)
                           -------------------------               depth > 2,
                           2 Q^g - L beta1^g

with g = 1 - 2/L, evaluated at the weighted l1 statistics of the
initialization -- and, for the constant-rate polar flow, at initialization
statistics shrunk by rho**(-L), where rho is the exponential magnification
factor of the flow.  theorem_gap_check() evaluates the inequality

    ||xtilde_inf||_{w,1} - Q <= eps * Q

on a finished trajectory.  rate_certificate() extracts the constants of the
linear-convergence estimate from a trajectory window, and
kernel_orthant_probability() gives the chance that a rotation-invariant
random kernel meets the open positive orthant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NotApplicableError, PreconditionError
from .flow import LOSS_TOL, TrajectoryRecord
from .model import PolarState, ProblemInstance, Projectors, xtilde


def c_L(L: int) -> float:
    """1 for depth 2, (L/2)**(L/(L-2)) above."""
    if L < 2:
        raise DomainError("constant defined for depth >= 2")
    if L == 2:
        return 1.0
    return (L / 2.0) ** (L / (L - 2.0))


def beta_stats(xtilde0: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    """(beta1, beta_min): weighted l1 norm and smallest weighted entry of the
    initial product vector."""
    xtilde0 = np.asarray(xtilde0, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(xtilde0 <= 0):
        raise DomainError("initial product vector must be strictly positive")
    weighted = w * xtilde0
    return float(np.sum(weighted)), float(np.min(weighted))


def depth_weights(xtilde0: np.ndarray, L: int) -> np.ndarray:
    """The bound's l1 weights: xtilde(0)**(2/L - 1); all ones at depth 2."""
    xtilde0 = np.asarray(xtilde0, dtype=float)
    if np.any(xtilde0 <= 0):
        raise DomainError("initial product vector must be strictly positive")
    return xtilde0 ** (2.0 / L - 1.0)


def epsilon_bound(beta1: float, beta_min: float, Q: float, L: int) -> float:
    """Closed-form error at the given initialization statistics."""
    if not (beta1 > 0 and beta_min > 0) or beta_min > beta1 * (1 + 1e-12):
        raise DomainError("need 0 < beta_min <= beta1")
    return epsilon_bound_from_logs(math.log(beta1), math.log(beta_min), Q, L)


def epsilon_bound_from_logs(
    log_beta1: float, log_beta_min: float, Q: float, L: int
) -> float:
    """Same bound with the betas given in log space, so that exponentially
    magnified statistics far below float range still evaluate."""
    if Q <= 0:
        raise PreconditionError("LP value must be positive", "Q > 0")
    cl = c_L(L)
    # hypothesis: Q > c_L * beta1**(2/L)
    if math.log(Q) <= math.log(cl) + (2.0 / L) * log_beta1:
        raise PreconditionError(
            "bound hypothesis violated", f"Q > c_L * beta1^(2/{L})"
        )
    if L == 2:
        return (log_beta1 - log_beta_min) / (math.log(Q) - log_beta1)
    g = 1.0 - 2.0 / L
    denom = 2.0 * Q**g - L * math.exp(g * log_beta1)
    if denom <= 0:
        # possible for beta1 > 1 even under the hypothesis above
        raise PreconditionError(
            "bound denominator not positive", f"2 Q^g > {L} beta1^g"
        )
    num = L * (math.exp(g * log_beta1) - math.exp(g * log_beta_min))
    return num / denom


def rho(r0: float, eta: float, inst: ProblemInstance, L: int) -> float:
    """Magnification factor of the constant-rate polar flow (may overflow;
    see log_rho)."""
    return math.exp(log_rho(r0, eta, inst, L))


def log_rho(
    r0: float,
    eta: float,
    inst: ProblemInstance,
    L: int,
    proj: Projectors | None = None,
) -> float:
    """log of rho = (r0 / ||A+b||^(1/L)) exp((||A+b||^(2/L) - r0^2)/(2 eta))."""
    if not r0 > 0:
        raise DomainError("r0 must be positive")
    if not np.any(inst.b):
        raise DomainError("observations b must be nonzero")
    if proj is None:
        from .model import projectors as make_projectors

        proj = make_projectors(inst)
    base = float(np.linalg.norm(proj.A_pinv @ inst.b))
    return (
        math.log(r0)
        - math.log(base) / L
        + (base ** (2.0 / L) - r0**2) / (2.0 * eta)
    )


def inside_hypotheses(r0: float, eta: float, inst: ProblemInstance, L: int) -> bool:
    """Whether r0 <= min(sqrt(eta), ||A+b||^(1/L)), the regime with rho >= 1."""
    from .model import projectors as make_projectors

    base = float(np.linalg.norm(make_projectors(inst).A_pinv @ inst.b))
    return r0 <= min(math.sqrt(eta), base ** (1.0 / L))


@dataclass
class BoundReport:
    """Evaluation of the limit's weighted l1 gap against its closed-form bound."""

    L: int
    c_L: float
    Q: float
    beta1: float
    beta_min: float
    log_rho: float
    precondition_ok: bool
    achieved_gap: float
    epsilon: float | None = None
    bound_satisfied: bool | None = None
    inside_hypotheses: bool | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "c_L": self.c_L,
            "Q": self.Q,
            "beta1": self.beta1,
            "beta_min": self.beta_min,
            "log_rho": self.log_rho,
            "rho": math.exp(self.log_rho) if self.log_rho < 700 else None,
            "precondition_ok": self.precondition_ok,
            "achieved_gap": self.achieved_gap,
            "epsilon": self.epsilon,
            "bound_satisfied": self.bound_satisfied,
            "inside_hypotheses": self.inside_hypotheses,
            "note": self.note,
        }


def theorem_gap_check(
    traj: TrajectoryRecord,
    oracle_Q: float,
    inst: ProblemInstance,
) -> BoundReport:
    """Check ||xtilde_inf||_{w,1} - Q <= eps(rho^-L beta1, rho^-L beta_min) Q.

    oracle_Q must be the exact LP value for the weights w = xtilde(0)**(2/L-1).
    The plain and dynamic-rate variants carry no magnification (rho = 1).
    """
    if traj.terminal.reason != LOSS_TOL:
        raise NotApplicableError(
            f"trajectory ended with {traj.terminal.reason!r}, not interpolation"
        )
    cfg = traj.config
    L = cfg.depth
    xt0 = xtilde(traj.initial_state, L)
    if np.any(xt0 <= 0):
        raise DomainError("bound needs a strictly positive initialization")
    w = depth_weights(xt0, L)
    beta1, beta_min = beta_stats(xt0, w)
    gap = float(np.sum(w * np.abs(traj.terminal.final_xtilde))) - oracle_Q

    if cfg.variant == "wn_constant":
        first = traj.initial_state
        assert isinstance(first, PolarState)
        lr = log_rho(first.r, cfg.eta_ratio, inst, L)
        inside = inside_hypotheses(first.r, cfg.eta_ratio, inst, L)
    else:
        lr = 0.0
        inside = None

    report = BoundReport(
        L=L,
        c_L=c_L(L),
        Q=oracle_Q,
        beta1=beta1,
        beta_min=beta_min,
        log_rho=lr,
        precondition_ok=True,
        achieved_gap=gap,
        inside_hypotheses=inside,
    )
    try:
        eps = epsilon_bound_from_logs(
            math.log(beta1) - L * lr, math.log(beta_min) - L * lr, oracle_Q, L
        )
    except PreconditionError as exc:
        report.precondition_ok = False
        report.note = f"hypotheses not met: {exc.inequality}"
        return report
    report.epsilon = eps
    report.bound_satisfied = bool(gap <= eps * oracle_Q)
    return report


# ---------------------------------------------------------------------------
# linear convergence rate certificate
# ---------------------------------------------------------------------------

@dataclass
class RateCertificate:
    support: list[int]
    sigma_min: float
    c_x: float
    c_r: float
    c_u: float
    predicted_rate: float
    t0: float
    t_end: float
    loss_t0: float


def rate_certificate(
    traj: TrajectoryRecord,
    inst: ProblemInstance,
    support: list[int] | None = None,
    start_index: int = 0,
) -> RateCertificate:
    """Extract the convergence-rate constants from a polar-trajectory window.

    The rate over a window where the chosen coordinates stay >= c_x is
    min(c_r, c_u c_x^2 |I|) * 2L * c_x^(2L-2) * sigma_min(A_I)^2; c_x is
    taken as the observed minimum on the window, c_r/c_u from the learning
    rates.  support defaults to the coordinates of the exact LP solution.
    """
    cfg = traj.config
    L = cfg.depth
    if cfg.variant not in ("wn_constant", "wn_dynamic"):
        raise NotApplicableError("rate certificate applies to the polar variants")
    snaps = traj.snapshots[start_index:]
    if len(snaps) < 2:
        raise NotApplicableError("window needs at least two snapshots")

    if support is None:
        from .oracle import min_weighted_l1_nonneg

        sol = min_weighted_l1_nonneg(inst)
        if not sol.optimal:
            raise NotApplicableError("LP oracle found no feasible point")
        support = [int(i) for i in np.nonzero(sol.z > 1e-12)[0]]
    if not support:
        raise NotApplicableError("empty coordinate set")

    states = [s.state for s in snaps]
    if not all(isinstance(st, PolarState) for st in states):
        raise NotApplicableError("rate certificate needs polar states")
    c_x = min(
        float(np.min(np.abs((st.r / np.linalg.norm(st.u)) * st.u[support])))
        for st in states
    )
    if c_x <= 0:
        raise NotApplicableError("a tracked coordinate touches zero on the window")
    if cfg.variant == "wn_constant":
        c_r = cfg.eta_ratio
    else:
        c_r = min(float(st.r) ** 2 for st in states)
    c_u = 1.0
    sigma_min = float(np.linalg.svd(inst.A[:, support], compute_uv=False)[-1])
    rate = min(c_r, c_u * c_x**2 * len(support)) * 2 * L * c_x ** (2 * L - 2) * sigma_min**2
    return RateCertificate(
        support=list(support),
        sigma_min=sigma_min,
        c_x=c_x,
        c_r=c_r,
        c_u=c_u,
        predicted_rate=rate,
        t0=snaps[0].t,
        t_end=snaps[-1].t,
        loss_t0=snaps[0].loss,
        )


def rate_check(traj: TrajectoryRecord, cert: RateCertificate, slack: float = 1e-9) -> bool:
    """True when every snapshot in the certificate window obeys the decay bound."""
    ok = True
    for snap in traj.snapshots:
        if not (cert.t0 <= snap.t <= cert.t_end):
            continue
        bound = cert.loss_t0 * math.exp(-cert.predicted_rate * (snap.t - cert.t0))
        if snap.loss > bound * (1 + slack) + slack:
            ok = False
    return ok


# ---------------------------------------------------------------------------
# kernel-orthant probability
# ---------------------------------------------------------------------------

def kernel_orthant_probability(N: int, K: int) -> float:
    """Probability that a rotation-invariant random K-dimensional subspace of
    R^N meets the open positive orthant: 2^-(N-1) * sum_{i<K} C(N-1, i).

    Exact integer arithmetic up to N = 64, log-space summation beyond.
    """
    if not (1 <= K <= N):
        raise DomainError(f"need 1 <= K <= N, got K={K}, N={N}")
    if N <= 64:
        total = sum(math.comb(N - 1, i) for i in range(K))
        return total / 2 ** (N - 1)
    # log-space: p = exp(logsumexp(lgamma terms) - (N-1) log 2)
    logs = [
        math.lgamma(N) - math.lgamma(i + 1) - math.lgamma(N - i)
        for i in range(K)
    ]
    peak = max(logs)
    total = peak + math.log(sum(math.exp(v - peak) for v in logs))
    return min(1.0, math.exp(total - (N - 1) * math.log(2.0)))
