"""Problem data, losses and exact gradients for deep diagonal linear models.

The model predicts A @ x**L for a trainable vector x (entrywise power,
depth L >= 1).  Three parameterizations of the same predictor are supported:

* dense      -- train x directly,
* polar      -- weight normalization, x = (r / ||u||) * u with magnitude r
                and direction u trained separately,
* signed     -- a positive pair (u_plus, u_minus) whose powers subtract,
                so the effective vector u_plus**L - u_minus**L can have any
                sign pattern.

All gradients are closed forms (no autodiff); tests check them against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateInstanceError,
    SingularStateError,
)


def _as_vector(v, name: str) -> np.ndarray:
    if type(v) is np.ndarray and v.dtype == np.float64 and v.ndim == 1:
        return v  # hot path: states are rebuilt every integrator step
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim != 1:
        raise ConfigurationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


@dataclass
class ProblemInstance:
    """Measurement matrix A (M x N), observations b, optional ground truth and l1 weights."""

    A: np.ndarray
    b: np.ndarray
    x_star: np.ndarray | None = None
    w: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        if self.A.ndim != 2:
            raise ConfigurationError(f"A must be a matrix, got shape {self.A.shape}")
        self.b = _as_vector(self.b, "b")
        m, n = self.A.shape
        if m < 1 or n < 1:
            raise ConfigurationError("A must have at least one row and one column")
        if self.b.shape != (m,):
            raise ConfigurationError(f"b has length {self.b.size}, expected {m}")
        if not np.all(np.isfinite(self.A)) or not np.all(np.isfinite(self.b)):
            raise ConfigurationError("A and b must be finite")
        if self.x_star is not None:
            self.x_star = _as_vector(self.x_star, "x_star")
            if self.x_star.shape != (n,):
                raise ConfigurationError(f"x_star has length {self.x_star.size}, expected {n}")
        if self.w is not None:
            self.w = _as_vector(self.w, "w")
            if self.w.shape != (n,):
                raise ConfigurationError(f"w has length {self.w.size}, expected {n}")
            if not np.all(self.w > 0):
                raise ConfigurationError("weight vector w must be strictly positive")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def weights(self) -> np.ndarray:
        """l1 weights; defaults to all ones."""
        if self.w is None:
            return np.ones(self.n)
        return self.w


@dataclass
class DenseState:
    """Unnormalized parameter vector for the plain flow."""

    x: np.ndarray

    def __post_init__(self):
        self.x = _as_vector(self.x, "x")

    def clone(self) -> "DenseState":
        return DenseState(x=self.x.copy())


@dataclass
class PolarState:
    """Weight-normalized parameterization: magnitude r and direction u."""

    r: float
    u: np.ndarray

    def __post_init__(self):
        self.r = float(self.r)
        self.u = _as_vector(self.u, "u")

    def u_norm(self) -> float:
        return float(np.linalg.norm(self.u))

    def clone(self) -> "PolarState":
        return PolarState(r=self.r, u=self.u.copy())


@dataclass
class SignedState:
    """Positive factor pair; effective vector is u_plus**L - u_minus**L."""

    u_plus: np.ndarray
    u_minus: np.ndarray

    def __post_init__(self):
        self.u_plus = _as_vector(self.u_plus, "u_plus")
        self.u_minus = _as_vector(self.u_minus, "u_minus")
        if self.u_plus.shape != self.u_minus.shape:
            raise ConfigurationError("u_plus and u_minus must have equal length")

    def clone(self) -> "SignedState":
        return SignedState(u_plus=self.u_plus.copy(), u_minus=self.u_minus.copy())


State = DenseState | PolarState | SignedState


@dataclass
class Projectors:
    """Pseudoinverse of A and the orthogonal projector onto its row space."""

    A_pinv: np.ndarray
    P_A: np.ndarray
    rank: int
    sigma_max: float = field(default=0.0)

    def kernel_complement(self, v: np.ndarray) -> np.ndarray:
        """(I - P_A) v: component of v in the kernel of A (row-space complement)."""
        return v - self.P_A @ v


def _check_depth(L: int) -> int:
    if int(L) != L or L < 1:
        raise ConfigurationError(f"depth L must be an integer >= 1, got {L!r}")
    return int(L)


def effective_x(state: State, L: int = 2) -> np.ndarray:
    """Vector in predictor space whose L-th entrywise power is the model output.

    For the signed parameterization this is the signed L-th root of
    u_plus**L - u_minus**L, so effective_x(s)**L reproduces the predictor
    only up to sign conventions for even L; use xtilde() when the product
    vector itself is wanted.
    """
    L = _check_depth(L)
    if isinstance(state, DenseState):
        return state.x.copy()
    if isinstance(state, PolarState):
        nrm = state.u_norm()
        if nrm == 0.0:
            raise SingularStateError("direction vector u is zero")
        return (state.r / nrm) * state.u
    diff = state.u_plus**L - state.u_minus**L
    return np.sign(diff) * np.abs(diff) ** (1.0 / L)


def xtilde(state: State, L: int) -> np.ndarray:
    """Effective predictor-space vector x**L (difference of powers for signed)."""
    L = _check_depth(L)
    if isinstance(state, SignedState):
        return state.u_plus**L - state.u_minus**L
    return effective_x(state, L) ** L


def loss(x: np.ndarray, inst: ProblemInstance, L: int) -> float:
    """(1/2L) || A x**L - b ||_2^2."""
    L = _check_depth(L)
    x = _as_vector(x, "x")
    if x.shape != (inst.n,):
        raise ConfigurationError(f"x has length {x.size}, expected {inst.n}")
    resid = inst.A @ x**L - inst.b
    return float(resid @ resid) / (2 * L)


def grad_loss(x: np.ndarray, inst: ProblemInstance, L: int) -> np.ndarray:
    """Gradient of loss(): [A^T (A x**L - b)] * x**(L-1)."""
    L = _check_depth(L)
    x = _as_vector(x, "x")
    if x.shape != (inst.n,):
        raise ConfigurationError(f"x has length {x.size}, expected {inst.n}")
    resid = inst.A @ x**L - inst.b
    return (inst.A.T @ resid) * x ** (L - 1)


def wn_loss(s: PolarState, inst: ProblemInstance, L: int) -> float:
    """Loss of the weight-normalized parameterization; invariant to scaling of u."""
    nrm = s.u_norm()
    if nrm == 0.0:
        raise SingularStateError("direction vector u is zero")
    return loss((s.r / nrm) * s.u, inst, L)


def wn_grads(s: PolarState, inst: ProblemInstance, L: int) -> tuple[float, np.ndarray]:
    """Exact gradients of wn_loss with respect to (r, u).

    Returns (g_r, g_u) with g_r = <u, grad>/||u|| and
    g_u = (r/||u||)(I - u u^T/||u||^2) grad, where grad is the dense-model
    gradient at the effective vector.  g_u is orthogonal to u by construction.
    """
    nrm = s.u_norm()
    if nrm == 0.0:
        raise SingularStateError("direction vector u is zero")
    x = (s.r / nrm) * s.u
    g = grad_loss(x, inst, L)
    g_r = float(s.u @ g) / nrm
    g_u = (s.r / nrm) * (g - (s.u @ g) / nrm**2 * s.u)
    return g_r, g_u


def signed_loss_and_grads(
    s: SignedState, inst: ProblemInstance, L: int
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss (1/2L)||A(u_plus**L - u_minus**L) - b||^2 and its two gradients."""
    L = _check_depth(L)
    if s.u_plus.shape != (inst.n,):
        raise ConfigurationError(f"state has length {s.u_plus.size}, expected {inst.n}")
    resid = inst.A @ (s.u_plus**L - s.u_minus**L) - inst.b
    val = float(resid @ resid) / (2 * L)
    back = inst.A.T @ resid
    g_plus = back * s.u_plus ** (L - 1)
    g_minus = -back * s.u_minus ** (L - 1)
    return val, g_plus, g_minus


def projectors(inst: ProblemInstance) -> Projectors:
    """Pseudoinverse A+ and projector P_A = A+ A via SVD.

    Singular values below sigma_max * max(M, N) * 1e-12 are treated as zero.
    """
    if not np.any(inst.A):
        raise DegenerateInstanceError("matrix A is identically zero")
    U, sig, Vt = np.linalg.svd(inst.A, full_matrices=False)
    tol = sig[0] * max(inst.A.shape) * 1e-12
    rank = int(np.sum(sig > tol))
    Vr = Vt[:rank]
    A_pinv = Vr.T @ ((1.0 / sig[:rank])[:, None] * U[:, :rank].T)
    # V_r V_r^T is symmetric/idempotent by construction, unlike A_pinv @ A.
    P_A = Vr.T @ Vr
    return Projectors(A_pinv=A_pinv, P_A=P_A, rank=rank, sigma_max=float(sig[0]))
