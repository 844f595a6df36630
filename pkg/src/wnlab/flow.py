"""Euler discretizations of the four gradient-flow variants.

Variants:

* ``plain``       -- x' = x - h * grad L(x)
* ``wn_constant`` -- polar flow with learning rates (eta_ratio, 1)
* ``wn_dynamic``  -- polar flow with learning rates (r^2, 1); equivalent, up
                     to O(h^2) per step, to x' = x - h ||x||^2 grad L(x)
* ``signed``      -- plain Euler on both blocks of the split parameterization

Step sizes are either fixed or chosen by backtracking line search with an
Armijo decrease condition, which makes the recorded loss non-increasing by
construction.  The direction vector of the polar variants is renormalized to
the unit sphere after every step by default; the continuous flow conserves
that norm exactly and renormalization removes the O(h^2) discrete drift.
"""

from __future__ import annotations


import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SingularStateError, StallError
from .model import (
    DenseState,
    PolarState,
    ProblemInstance,
    SignedState,
    State,
    effective_x,
    xtilde,
)

VARIANTS = ("plain", "wn_constant", "wn_dynamic", "signed")

# Terminal reasons
LOSS_TOL = "loss_tol"
MAX_ITERS = "max_iters"
DIVERGED = "diverged"
STALLED = "stalled"
POSITIVITY_HALT = "positivity_halt"

_MIN_LINE_SEARCH_STEP = 1e-18


@dataclass
class InitSpec:
    """Initialization: an explicit vector, explicit polar data, or a random
    positive unit direction (|standard normal|, normalized) at magnitude r0."""

    mode: str = "random_positive"  # "explicit" | "polar" | "random_positive"
    x0: np.ndarray | None = None
    r0: float = 1.0
    u0: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("explicit", "polar", "random_positive"):
            raise ConfigurationError(f"unknown init mode {self.mode!r}")
        if self.mode == "explicit" and self.x0 is None:
            raise ConfigurationError("explicit init requires x0")
        if self.mode == "polar" and self.u0 is None:
            raise ConfigurationError("polar init requires u0")
        if self.mode in ("polar", "random_positive") and not self.r0 > 0:
            raise ConfigurationError("r0 must be positive")


@dataclass
class FlowConfig:
    """Everything needed to reproduce one trajectory."""

    depth: int = 2
    variant: str = "plain"
    eta_ratio: float = 0.1  # magnitude/direction learning-rate ratio (wn_constant)
    step: str = "fixed"  # "fixed" | "linesearch"
    step_size: float | None = None  # None -> default scaling rule
    shrink: float = 0.5
    armijo_c: float = 1e-4
    max_iters: int = 200_000
    loss_tol: float = 1e-12
    snapshot_stride: int = 100
    seed: int = 0
    init: InitSpec = field(default_factory=InitSpec)
    renormalize: bool = True
    positivity: str = "track"  # "track" | "halt" | "off"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.step not in ("fixed", "linesearch"):
            raise ConfigurationError(f"unknown step policy {self.step!r}")
        if int(self.depth) != self.depth or self.depth < 1:
            raise ConfigurationError("depth must be an integer >= 1")
        if self.variant == "signed" and self.depth < 2:
            raise ConfigurationError("signed variant requires depth >= 2")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if not self.loss_tol > 0:
            raise ConfigurationError("loss_tol must be positive")
        if self.variant == "wn_constant" and not self.eta_ratio > 0:
            raise ConfigurationError("eta_ratio must be positive")
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigurationError("step_size must be positive")
        if not (0 < self.shrink < 1):
            raise ConfigurationError("shrink must lie in (0, 1)")
        if not (0 < self.armijo_c < 1):
            raise ConfigurationError("armijo_c must lie in (0, 1)")
        if self.positivity not in ("track", "halt", "off"):
            raise ConfigurationError(f"unknown positivity mode {self.positivity!r}")
        if self.snapshot_stride < 1:
            raise ConfigurationError("snapshot_stride must be >= 1")


@dataclass
class Snapshot:
    iter: int
    t: float
    state: State
    loss: float


@dataclass
class Terminal:
    reason: str
    iters: int
    final_loss: float
    final_effective_x: np.ndarray
    final_xtilde: np.ndarray


@dataclass
class TrajectoryRecord:
    config: FlowConfig
    snapshots: list[Snapshot]
    losses: np.ndarray  # loss after k steps, k = 0..iters
    ts: np.ndarray  # accumulated flow time, same indexing
    terminal: Terminal
    positivity_violations: int = 0
    first_violation_iter: int | None = None

    @property
    def initial_state(self) -> State:
        return self.snapshots[0].state

    @property
    def final_state(self) -> State:
        return self.snapshots[-1].state


# ---------------------------------------------------------------------------
# fused loss+gradient evaluations (one residual computation per step)
# ---------------------------------------------------------------------------

def _eval_dense(x, inst, L):
    # depth 2 dominates every experiment; avoid np.power there
    if L == 2:
        resid = inst.A @ (x * x) - inst.b
        val = float(resid @ resid) * 0.25
        return val, (inst.A.T @ resid) * x
    resid = inst.A @ x**L - inst.b
    val = float(resid @ resid) / (2 * L)
    grad = (inst.A.T @ resid) * x ** (L - 1)
    return val, grad


def _eval_polar(s: PolarState, inst, L):
    u = s.u
    nrm2 = float(u @ u)
    if nrm2 == 0.0:
        raise SingularStateError("direction vector u is zero")
    nrm = math.sqrt(nrm2)
    x = (s.r / nrm) * u
    val, g = _eval_dense(x, inst, L)
    ug = float(u @ g)
    g_r = ug / nrm
    g_u = (s.r / nrm) * (g - (ug / nrm2) * u)
    return val, g_r, g_u


def _eval_signed(s: SignedState, inst, L):
    resid = inst.A @ (s.u_plus**L - s.u_minus**L) - inst.b
    val = float(resid @ resid) / (2 * L)
    back = inst.A.T @ resid
    return val, back * s.u_plus ** (L - 1), -back * s.u_minus ** (L - 1)


def state_loss(state: State, inst: ProblemInstance, L: int) -> float:
    if isinstance(state, DenseState):
        return _eval_dense(state.x, inst, L)[0]
    if isinstance(state, PolarState):
        return _eval_polar(state, inst, L)[0]
    return _eval_signed(state, inst, L)[0]


def min_entry(state: State) -> float:
    """Smallest coordinate of the state (r included for polar)."""
    if isinstance(state, DenseState):
        return float(state.x.min())
    if isinstance(state, PolarState):
        return min(state.r, float(state.u.min()))
    return min(float(state.u_plus.min()), float(state.u_minus.min()))


def _is_finite(state: State) -> bool:
    if isinstance(state, DenseState):
        return bool(np.all(np.isfinite(state.x)))
    if isinstance(state, PolarState):
        return np.isfinite(state.r) and bool(np.all(np.isfinite(state.u)))
    return bool(np.all(np.isfinite(state.u_plus)) and np.all(np.isfinite(state.u_minus)))


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

def step_plain(x: np.ndarray, inst: ProblemInstance, L: int, h: float) -> np.ndarray:
    _, g = _eval_dense(x, inst, L)
    return x - h * g


def step_wn_constant(
    s: PolarState,
    inst: ProblemInstance,
    L: int,
    eta: float,
    h: float,
    eta_u: float = 1.0,
    renormalize: bool = True,
) -> PolarState:
    """One Euler step of the polar flow with rates (eta, eta_u).

    eta_u is exposed only so the rescaling equivalence (scaling u0 by a while
    scaling eta_u by a^2) can be checked numerically; production runs keep
    eta_u = 1.
    """
    _, g_r, g_u = _eval_polar(s, inst, L)
    r = s.r - h * eta * g_r
    u = s.u - h * eta_u * g_u
    if renormalize:
        u = u / np.linalg.norm(u)
    return PolarState(r=r, u=u)


def step_wn_dynamic(
    s: PolarState,
    inst: ProblemInstance,
    L: int,
    h: float,
    renormalize: bool = True,
) -> PolarState:
    """Polar step with the time-dependent magnitude rate eta_r = r^2."""
    _, g_r, g_u = _eval_polar(s, inst, L)
    r = s.r - h * s.r**2 * g_r
    u = s.u - h * g_u
    if renormalize:
        u = u / np.linalg.norm(u)
    return PolarState(r=r, u=u)


def step_dynamic_reduced(
    x: np.ndarray, inst: ProblemInstance, L: int, h: float
) -> np.ndarray:
    """Reduced form of the dynamic-rate step: x' = x - h ||x||^2 grad L(x)."""
    _, g = _eval_dense(x, inst, L)
    return x - h * float(x @ x) * g


def step_signed(s: SignedState, inst: ProblemInstance, L: int, h: float) -> SignedState:
    _, g_p, g_m = _eval_signed(s, inst, L)
    return SignedState(u_plus=s.u_plus - h * g_p, u_minus=s.u_minus - h * g_m)


def _prepare_step(state, inst, L, variant, eta, renormalize):
    """Evaluate loss and gradients once; return (loss, decrease_rate, apply).

    decrease_rate is the (preconditioned) squared gradient norm: the negative
    time derivative of the loss along the flow, used by the Armijo condition.
    apply(h) produces the post-step state without re-evaluating gradients.
    """
    if variant == "plain":
        val, g = _eval_dense(state.x, inst, L)
        dec = float(g @ g)

        def apply(h):
            return DenseState(x=state.x - h * g)

    elif variant in ("wn_constant", "wn_dynamic"):
        val, g_r, g_u = _eval_polar(state, inst, L)
        eta_r = eta if variant == "wn_constant" else state.r**2
        dec = eta_r * g_r**2 + float(g_u @ g_u)

        def apply(h):
            r = state.r - h * eta_r * g_r
            u = state.u - h * g_u
            if renormalize:
                u /= math.sqrt(u @ u)  # u is a fresh array here
            return PolarState(r=r, u=u)

    elif variant == "signed":
        val, g_p, g_m = _eval_signed(state, inst, L)
        dec = float(g_p @ g_p) + float(g_m @ g_m)

        def apply(h):
            return SignedState(
                u_plus=state.u_plus - h * g_p, u_minus=state.u_minus - h * g_m
            )

    else:
        raise ConfigurationError(f"unknown variant {variant!r}")
    return val, dec, apply


def _line_search_from(
    val, dec, apply, state, inst, L, shrink, armijo_c
) -> tuple[State, float, float]:
    """Backtrack from h=1 given a prepared step; returns (state', h, loss')."""
    if dec <= 0.0:
        raise StallError("gradient is zero; no descent direction")
    h = 1.0
    # Overflow in a rejected trial step is routine, not an error.
    with np.errstate(over="ignore", invalid="ignore"):
        while h >= _MIN_LINE_SEARCH_STEP:
            cand = apply(h)
            if _is_finite(cand):
                new_val = state_loss(cand, inst, L)
                if new_val <= val - armijo_c * h * dec:
                    return cand, h, new_val
            h *= shrink
    raise StallError("no acceptable line-search step above 1e-18")


def line_search_step(
    state: State,
    inst: ProblemInstance,
    L: int,
    variant: str,
    shrink: float = 0.5,
    armijo_c: float = 1e-4,
    eta: float = 0.1,
    renormalize: bool = True,
) -> tuple[State, float]:
    """Backtracking from h=1: largest h = shrink**k passing the Armijo test.

    Raises StallError if the gradient vanishes or no step above 1e-18 gives
    sufficient decrease.
    """
    val, dec, apply = _prepare_step(state, inst, L, variant, eta, renormalize)
    cand, h, _ = _line_search_from(val, dec, apply, state, inst, L, shrink, armijo_c)
    return cand, h


# ---------------------------------------------------------------------------
# initialization and integration
# ---------------------------------------------------------------------------

def default_step_size(inst: ProblemInstance, L: int) -> float:
    """0.01 * min(1, 1/||A||_2^2), halved for every depth beyond 2."""
    sigma = float(np.linalg.norm(inst.A, 2))
    base = 0.01 * min(1.0, 1.0 / sigma**2)
    return base / 2 ** max(L - 2, 0)


def make_initial_state(config: FlowConfig, inst: ProblemInstance) -> State:
    spec = config.init
    if spec.mode == "explicit":
        x0 = np.asarray(spec.x0, dtype=float)
        if x0.shape != (inst.n,):
            raise ConfigurationError(f"x0 has length {x0.size}, expected {inst.n}")
        if config.variant == "plain":
            return DenseState(x=x0.copy())
        r0 = float(np.linalg.norm(x0))
        if r0 == 0.0:
            raise ConfigurationError("x0 must be nonzero for polar/signed variants")
        u0 = x0 / r0
    elif spec.mode == "polar":
        u0 = np.asarray(spec.u0, dtype=float)
        if u0.shape != (inst.n,):
            raise ConfigurationError(f"u0 has length {u0.size}, expected {inst.n}")
        nrm = float(np.linalg.norm(u0))
        if nrm == 0.0:
            raise ConfigurationError("u0 must be nonzero")
        u0 = u0 / nrm
        r0 = float(spec.r0)
    else:  # random_positive
        seed = config.seed if spec.seed is None else spec.seed
        rng = np.random.default_rng(seed)
        u0 = np.abs(rng.standard_normal(inst.n))
        u0 = u0 / np.linalg.norm(u0)
        r0 = float(spec.r0)

    if config.variant == "plain":
        return DenseState(x=r0 * u0)
    if config.variant in ("wn_constant", "wn_dynamic"):
        return PolarState(r=r0, u=u0)
    # signed: balanced positive pair, effective vector starts at zero
    if np.any(u0 <= 0):
        raise ConfigurationError("signed variant requires a positive direction")
    return SignedState(u_plus=r0 * u0, u_minus=(r0 * u0).copy())


def _final_vectors(state: State, L: int) -> tuple[np.ndarray, np.ndarray]:
    return effective_x(state, L), xtilde(state, L)


def integrate(config: FlowConfig, inst: ProblemInstance) -> TrajectoryRecord:
    """Run the configured flow until loss_tol, max_iters, divergence or stall."""
    L = config.depth
    state = make_initial_state(config, inst)
    h_fixed = config.step_size if config.step_size is not None else default_step_size(inst, L)

    track_pos = config.positivity != "off" and min_entry(state) > 0
    violations = 0
    first_violation: int | None = None

    # One fused loss+gradient evaluation per iteration: the loss recorded for
    # the current state doubles as the Armijo baseline for the next step.
    # Overflow inside a diverging run is an expected signal, not an error.
    it = 0
    t = 0.0
    reason = MAX_ITERS
    with np.errstate(over="ignore", invalid="ignore"):
        cur_loss, dec, apply = _prepare_step(
            state, inst, L, config.variant, config.eta_ratio, config.renormalize
        )
        losses = [cur_loss]
        ts = [0.0]
        snapshots = [Snapshot(iter=0, t=0.0, state=state.clone(), loss=cur_loss)]

        while True:
            if cur_loss <= config.loss_tol:
                reason = LOSS_TOL
                break
            if it >= config.max_iters:
                reason = MAX_ITERS
                break
            try:
                if config.step == "linesearch":
                    state, h_used, cur_loss = _line_search_from(
                        cur_loss, dec, apply, state, inst, L,
                        config.shrink, config.armijo_c,
                    )
                    _, dec, apply = _prepare_step(
                        state, inst, L, config.variant, config.eta_ratio,
                        config.renormalize,
                    )
                else:
                    state, h_used = apply(h_fixed), h_fixed
                    cur_loss, dec, apply = _prepare_step(
                        state, inst, L, config.variant, config.eta_ratio,
                        config.renormalize,
                    )
            except StallError:
                reason = STALLED
                break

            it += 1
            t += h_used
            losses.append(cur_loss)
            ts.append(t)
            # a non-finite coordinate always drives the loss non-finite
            if not math.isfinite(cur_loss):
                reason = DIVERGED
                break

            if track_pos and min_entry(state) <= 0:
                violations += 1
                if first_violation is None:
                    first_violation = it
                if config.positivity == "halt":
                    reason = POSITIVITY_HALT
                    if it % config.snapshot_stride != 0:
                        snapshots.append(Snapshot(it, t, state.clone(), cur_loss))
                    break

            if it % config.snapshot_stride == 0:
                snapshots.append(Snapshot(it, t, state.clone(), cur_loss))

    if snapshots[-1].iter != it:
        snapshots.append(Snapshot(it, t, state.clone(), losses[-1]))

    if _is_finite(state):
        eff, xt = _final_vectors(state, L)
    else:
        eff = np.full(inst.n, np.nan)
        xt = np.full(inst.n, np.nan)
    terminal = Terminal(
        reason=reason,
        iters=it,
        final_loss=float(losses[-1]),
        final_effective_x=eff,
        final_xtilde=xt,
    )
    return TrajectoryRecord(
        config=config,
        snapshots=snapshots,
        losses=np.asarray(losses),
        ts=np.asarray(ts),
        terminal=terminal,
        positivity_violations=violations,
        first_violation_iter=first_violation,
    )
