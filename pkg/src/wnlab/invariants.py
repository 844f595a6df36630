"""Conserved quantities of the flows and their drift along trajectories.

Two vector invariants live in the kernel of A (the complement of the row
space):

* plain flow:   h0 = (I - A+A) log(x)        for depth 2,
                h0 = (I - A+A) x**(2-L)       otherwise;
* polar flow:   h_eta, the same expression in u with an exponential
                correction exp(r^2 / (2 eta)) folded in (depth 2 adds the
                exponent, other depths multiply by exp((2-L) r^2 / (2 eta))).

Both are constant along the exact flows; the Euler discretization drifts by
O(h^2) per step, which drift_report() measures.  The rescaling factor gamma
ties the polar trajectory's invariant to a plain trajectory started from a
gamma-scaled initialization, and the entropy-like potential F induces the
Bregman divergence that is non-increasing toward every feasible point under
the dynamic-rate flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvariantOverflowError, NotApplicableError
from .flow import TrajectoryRecord, min_entry as state_min_entry
from .model import PolarState, Projectors, effective_x, xtilde

_EXP_LIMIT = 700.0  # exp argument beyond which float64 overflows


def h0(x: np.ndarray, proj: Projectors, L: int) -> np.ndarray:
    """Kernel-complement invariant of the plain flow."""
    x = np.asarray(x, dtype=float)
    if L == 2:
        if np.any(x <= 0):
            raise DomainError("h0 with depth 2 needs strictly positive x (log)")
        return proj.kernel_complement(np.log(x))
    if L > 2 and np.any(x <= 0):
        raise DomainError("h0 with depth > 2 needs strictly positive x (negative powers)")
    return proj.kernel_complement(x ** (2.0 - L))


def h_eta(
    s: PolarState,
    proj: Projectors,
    L: int,
    eta: float,
    log_space: bool = False,
):
    """Kernel-complement invariant of the constant-rate polar flow.

    For depth 2 the value is (I - A+A)(log u + r^2/(2 eta)); no exponentials
    are evaluated.  For other depths the value is
    (I - A+A) u**(2-L) * exp((2-L) r^2/(2 eta)); with log_space=True the pair
    (projected power vector, scalar log factor) is returned instead so the
    caller can work at any magnitude.
    """
    if np.any(s.u <= 0):
        raise DomainError("h_eta needs strictly positive u")
    expo = s.r**2 / (2.0 * eta)
    if L == 2:
        vec = proj.kernel_complement(np.log(s.u) + expo)
        return (vec, 0.0) if log_space else vec
    vec = proj.kernel_complement(s.u ** (2.0 - L))
    log_factor = (2.0 - L) * expo
    if log_space:
        return vec, log_factor
    if abs(log_factor) > _EXP_LIMIT:
        raise InvariantOverflowError(
            f"exp({log_factor:.3g}) leaves float range; use log_space=True"
        )
    return vec * math.exp(log_factor)


def gamma(r0: float, r: float, eta: float) -> float:
    """Re-scaling factor (r/r0) exp((r0^2 - r^2)/(2 eta))."""
    if not r0 > 0:
        raise DomainError("r0 must be positive")
    expo = (r0**2 - r**2) / (2.0 * eta)
    if expo > _EXP_LIMIT:
        raise InvariantOverflowError(
            f"exp({expo:.3g}) leaves float range; use log_gamma"
        )
    return (r / r0) * math.exp(expo)


def log_gamma(r0: float, r: float, eta: float) -> float:
    """log of gamma(), safe at any magnitude (requires r > 0)."""
    if not r0 > 0 or not r > 0:
        raise DomainError("r0 and r must be positive")
    return math.log(r / r0) + (r0**2 - r**2) / (2.0 * eta)


def invariant_comparison_residual(
    traj_wn: TrajectoryRecord, proj: Projectors, L: int, eta: float
) -> np.ndarray:
    """Per-snapshot residual of the identity tying the polar trajectory to a
    gamma-rescaled copy of its own initialization.

    For depth 2 the residual at time t is
    || (I-A+A)[log x(t) - log(gamma(r0, r(t)) x(0))] ||_inf, and the
    power-form analogue for other depths.  Zero in exact arithmetic.
    """
    snaps = traj_wn.snapshots
    first = snaps[0].state
    if not isinstance(first, PolarState):
        raise NotApplicableError("comparison residual needs a polar trajectory")
    r0 = first.r
    x0 = effective_x(first, L)
    if np.any(x0 <= 0):
        raise DomainError("comparison residual needs a positive trajectory")

    out = np.empty(len(snaps))
    for k, snap in enumerate(snaps):
        st = snap.state
        x_t = effective_x(st, L)
        if np.any(x_t <= 0):
            raise DomainError(f"nonpositive effective vector at snapshot {k}")
        lg = log_gamma(r0, st.r, eta)
        if L == 2:
            diff = proj.kernel_complement(np.log(x_t) - np.log(x0) - lg)
        else:
            # power form keeps the t=0 residual exactly zero (gamma = 1)
            with np.errstate(over="ignore", divide="ignore"):
                ref = (x0 * math.exp(lg)) ** (2.0 - L)
            diff = proj.kernel_complement(x_t ** (2.0 - L) - ref)
        out[k] = np.max(np.abs(diff))
    return out


# ---------------------------------------------------------------------------
# Bregman divergence of the entropy-like potential
# ---------------------------------------------------------------------------

def bregman_F(xt: np.ndarray, L: int) -> float:
    """Potential F: (1/2)<x log x - x, 1> for depth 2,
    (L/(2(2-L))) <x**(2/L), 1> for deeper models (strictly convex on x > 0)."""
    xt = np.asarray(xt, dtype=float)
    if np.any(xt < 0):
        raise DomainError("potential needs nonnegative arguments")
    if L == 2:
        return 0.5 * float(np.sum(_xlogx(xt) - xt))
    if L < 2:
        raise DomainError("potential defined for depth >= 2")
    return L / (2.0 * (2.0 - L)) * float(np.sum(xt ** (2.0 / L)))


def _xlogx(v: np.ndarray) -> np.ndarray:
    """x log x extended by 0 log 0 = 0."""
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = v[pos] * np.log(v[pos])
    return out


def bregman_div(z: np.ndarray, xt: np.ndarray, L: int) -> float:
    """D_F(z, xt) = F(z) - F(xt) - <grad F(xt), z - xt>; needs xt > 0, z >= 0."""
    z = np.asarray(z, dtype=float)
    xt = np.asarray(xt, dtype=float)
    if np.any(xt <= 0):
        raise DomainError("second argument must be strictly positive")
    if np.any(z < 0):
        raise DomainError("first argument must be nonnegative")
    if L == 2:
        return 0.5 * float(np.sum(_xlogx(z) - z * np.log(xt) - z + xt))
    if L < 2:
        raise DomainError("divergence defined for depth >= 2")
    p = 2.0 / L
    return float(
        L / (2.0 * (2.0 - L)) * np.sum(z**p)
        + 0.5 * np.sum(xt**p)
        - 1.0 / (2.0 - L) * np.sum(xt ** (p - 1.0) * z)
    )


# ---------------------------------------------------------------------------
# drift measurement
# ---------------------------------------------------------------------------

@dataclass
class InvariantSnapshot:
    """Tracked quantities at one trajectory snapshot."""

    t: float
    u_norm: float | None
    min_entry: float
    h0: np.ndarray | None = None
    h_eta: np.ndarray | None = None
    gamma: float | None = None
    bregman: dict[str, float] = field(default_factory=dict)


@dataclass
class DriftReport:
    quantity: str
    max_abs_drift: float
    violations: int | None = None
    max_violation: float | None = None
    note: str = ""

    def to_dict(self) -> dict:
        d = {"quantity": self.quantity, "max_abs_drift": self.max_abs_drift}
        if self.violations is not None:
            d["violations"] = self.violations
        if self.max_violation is not None:
            d["max_violation"] = self.max_violation
        if self.note:
            d["note"] = self.note
        return d


def invariant_series(
    traj: TrajectoryRecord,
    proj: Projectors,
    bregman_refs: dict[str, np.ndarray] | None = None,
) -> list[InvariantSnapshot]:
    """Evaluate every applicable tracked quantity at each snapshot."""
    cfg = traj.config
    L = cfg.depth
    out = []
    first = traj.snapshots[0].state
    polar = isinstance(first, PolarState)
    r0 = first.r if polar else None
    for snap in traj.snapshots:
        st = snap.state
        item = InvariantSnapshot(
            t=snap.t,
            u_norm=float(np.linalg.norm(st.u)) if polar else None,
            min_entry=state_min_entry(st),
        )
        if cfg.variant == "plain":
            try:
                item.h0 = h0(st.x, proj, L)
            except DomainError:
                pass
        elif cfg.variant == "wn_constant" and polar:
            try:
                item.h_eta = h_eta(st, proj, L, cfg.eta_ratio)
            except (DomainError, InvariantOverflowError):
                pass
            item.gamma = gamma(r0, st.r, cfg.eta_ratio)
        if bregman_refs:
            xt = xtilde(st, L)
            if np.all(xt > 0):
                for name, z in bregman_refs.items():
                    item.bregman[name] = bregman_div(z, xt, L)
        out.append(item)
    return out


def drift_report(
    traj: TrajectoryRecord,
    proj: Projectors,
    bregman_refs: dict[str, np.ndarray] | None = None,
    bregman_tol: float = 1e-10,
) -> list[DriftReport]:
    """Max l-infinity drift of each applicable invariant against its t=0 value,
    plus Bregman monotonicity violation counts when reference points are given."""
    if len(traj.snapshots) < 2:
        raise NotApplicableError("drift needs at least two snapshots")
    series = invariant_series(traj, proj, bregman_refs)
    reports: list[DriftReport] = []

    def vector_drift(getter, name):
        ref = getter(series[0])
        if ref is None:
            return
        worst = 0.0
        for item in series[1:]:
            val = getter(item)
            if val is None:
                reports.append(
                    DriftReport(name, np.nan, note="left domain along trajectory")
                )
                return
            worst = max(worst, float(np.max(np.abs(val - ref))))
        reports.append(DriftReport(name, worst))

    vector_drift(lambda s: s.h0, "h0")
    vector_drift(lambda s: s.h_eta, "h_eta")

    if series[0].u_norm is not None:
        worst = max(abs(item.u_norm - 1.0) for item in series)
        reports.append(DriftReport("u_norm", worst))

    if bregman_refs:
        for name in bregman_refs:
            vals = [item.bregman.get(name) for item in series]
            if any(v is None for v in vals):
                reports.append(
                    DriftReport(f"bregman[{name}]", np.nan, note="left domain")
                )
                continue
            increments = np.diff(vals)
            bad = increments[increments > bregman_tol]
            reports.append(
                DriftReport(
                    f"bregman[{name}]",
                    max_abs_drift=float(np.max(np.abs(np.asarray(vals) - vals[0]))),
                    violations=int(bad.size),
                    max_violation=float(bad.max()) if bad.size else 0.0,
                )
            )
    return reports
