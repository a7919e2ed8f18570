"""Fixed-point iterations on the trace-c PSD cone and their factorized forms.

The multiplicative family updates rho -> c * A rho A / tr(A rho A) with
A = I - eps * grad F(rho); the factorized form updates an N x r factor X with
rho = X X* and reproduces the full iteration step for step when r = N. A
projected-gradient solver serves as the independent reference for the convex
problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hermitian import DensityLike, _project_density_arr, entries_of
from .objectives import NEG_LOG_LIKELIHOOD, Objective

CONVERGED = "converged"
MAX_ITER = "max_iter"
EPS_EXHAUSTED = "eps_exhausted"

# Absolute slack on per-step objective comparisons; covers float noise at
# numerical fixed points without admitting real increases.
DESCENT_SLACK = 1e-12

_TRACE_FLOOR = 1e-300

# The sandwich map amplifies kernel rounding dirt (of either sign) by up to
# ||A||^2 per step; zeroing eigenvalues this far below the trace scale keeps
# iterates PSD and their numerical rank non-increasing.
_KERNEL_CLIP = 1e-13


class DegenerateStateError(RuntimeError):
    """An update annihilated the state (zero trace or zero factor)."""


class StepSizeError(RuntimeError):
    """The multiplicative step produced a vanishing normalizer; shrink eps."""


@dataclass(frozen=True)
class StepPolicy:
    """Shrink-only step-size control for the multiplicative iterations.

    initial_eps of None resolves to 1 / (||grad F(rho0)||_F + 1) at solve time.
    """

    initial_eps: float | None = None
    shrink: float = 0.5
    min_eps: float = 1e-14
    max_halvings_per_step: int = 60

    def __post_init__(self):
        if not 0.0 < self.shrink < 1.0:
            raise ValueError(f"shrink must lie in (0, 1), got {self.shrink}")
        if not self.min_eps > 0:
            raise ValueError(f"min_eps must be positive, got {self.min_eps}")
        if self.initial_eps is not None and not self.min_eps < self.initial_eps:
            raise ValueError(
                f"min_eps {self.min_eps} must be below initial_eps {self.initial_eps}"
            )
        if self.max_halvings_per_step < 0:
            raise ValueError("max_halvings_per_step must be nonnegative")

    def resolve_initial(self, gradient_norm: float) -> float:
        if self.initial_eps is not None:
            return self.initial_eps
        return 1.0 / (gradient_norm + 1.0)


@dataclass
class SolverTrace:
    """Per-iteration bookkeeping for a solve."""

    objective_values: list[float] = field(default_factory=list)
    eps_values: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    stop_reason: str = MAX_ITER
    fixed_point_residual: float = math.inf
    iterates_kept: list | None = None

    @property
    def iterations(self) -> int:
        return len(self.residuals)


@dataclass(frozen=True)
class FactorState:
    """An N x r factor X with ||X||_F = sqrt(c), representing rho = X X*."""

    X: np.ndarray
    trace_target: float = 1.0

    def __post_init__(self):
        arr = np.array(self.X, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"factor must be a 2-D array, got shape {arr.shape}")
        if arr.shape[1] > arr.shape[0]:
            raise ValueError(f"rank {arr.shape[1]} exceeds dimension {arr.shape[0]}")
        c = float(self.trace_target)
        if not c > 0:
            raise ValueError(f"trace_target must be positive, got {c}")
        norm_sq = float(np.linalg.norm(arr) ** 2)
        if abs(norm_sq - c) > 1e-9 * c:
            raise ValueError(f"||X||_F^2 = {norm_sq!r} deviates from trace target {c!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "X", arr)
        object.__setattr__(self, "trace_target", c)

    @property
    def dim(self) -> int:
        return self.X.shape[0]

    @property
    def rank(self) -> int:
        return self.X.shape[1]

    def density(self) -> DensityLike:
        rho = self.X @ self.X.conj().T
        return DensityLike.from_array(0.5 * (rho + rho.conj().T), self.trace_target)

    @classmethod
    def from_density(cls, rho: DensityLike, rank: int) -> "FactorState":
        """Spectral factor built from the top-`rank` eigenpairs of rho."""
        if not 1 <= rank <= rho.dim:
            raise ValueError(f"rank must satisfy 1 <= r <= {rho.dim}, got {rank}")
        vals, vecs = np.linalg.eigh(rho.entries)
        top = slice(rho.dim - rank, rho.dim)
        X = vecs[:, top] * np.sqrt(np.maximum(vals[top], 0.0))
        norm = np.linalg.norm(X)
        if norm == 0.0:
            raise DegenerateStateError("state has no mass on the requested rank")
        X = X * (np.sqrt(rho.trace_target) / norm)
        return cls(X, rho.trace_target)


# --- single steps ------------------------------------------------------------

def _sandwich(A: np.ndarray, rho: np.ndarray) -> np.ndarray:
    S = A @ rho @ A
    return 0.5 * (S + S.conj().T)


def _mle_step_arr(rho: np.ndarray, obj: Objective, c: float) -> np.ndarray:
    p = obj.operator._apply_arr(rho)
    R = obj.operator._adjoint_arr(obj.data.values / np.maximum(p, obj.floor))
    S = _sandwich(R, rho)
    t = float(S.trace().real)
    if t < _TRACE_FLOOR:
        raise DegenerateStateError(f"sandwich trace {t!r} vanished")
    return (c / t) * S


def mle_step(rho: DensityLike, obj: Objective) -> DensityLike:
    """One multiplicative likelihood update R(rho) rho R(rho) / tr(...)."""
    if obj.kind != NEG_LOG_LIKELIHOOD:
        raise ValueError("the multiplicative likelihood step requires the nll objective")
    c = rho.trace_target
    return DensityLike.from_array(_mle_step_arr(rho.entries, obj, c), c)


def _gm_step_arr(rho: np.ndarray, g: np.ndarray, eps: float, c: float) -> np.ndarray:
    A = (-eps) * g
    A.flat[:: rho.shape[0] + 1] += 1.0
    S = _sandwich(A, rho)
    t = float(S.trace().real)
    if t < _TRACE_FLOOR:
        raise StepSizeError(f"step normalizer {t!r} vanished at eps={eps!r}")
    return (c / t) * S


def gm_step(rho: DensityLike, g, eps: float, c: float | None = None) -> DensityLike:
    """One gradient-multiplication update with A = I - eps * g."""
    if c is None:
        c = rho.trace_target
    return DensityLike.from_array(_gm_step_arr(rho.entries, entries_of(g), eps, c), c)


def _fgd_apply_arr(X: np.ndarray, g: np.ndarray, eps: float, c: float) -> np.ndarray:
    half = X - eps * (g @ X)
    norm = np.linalg.norm(half)
    if norm < math.sqrt(_TRACE_FLOOR):
        raise DegenerateStateError(f"factor norm {norm!r} vanished at eps={eps!r}")
    return half * (np.sqrt(c) / norm)


def _outer(X: np.ndarray) -> np.ndarray:
    rho = X @ X.conj().T
    return 0.5 * (rho + rho.conj().T)


def fgd_step(state: FactorState, obj: Objective, eps: float, c: float | None = None) -> FactorState:
    """One factorized descent update X - eps * grad F(X X*) X, renormalized."""
    if c is None:
        c = state.trace_target
    g = obj._gradient_arr(_outer(state.X))
    return FactorState(_fgd_apply_arr(state.X, g, eps, c), c)


def factorized_mle_step(state: FactorState, obj: Objective) -> FactorState:
    """Factorized form of the multiplicative likelihood step: X -> R X / ||R X||."""
    if obj.kind != NEG_LOG_LIKELIHOOD:
        raise ValueError("the factorized likelihood step requires the nll objective")
    X = state.X
    p = obj.operator._apply_arr(_outer(X))
    R = obj.operator._adjoint_arr(obj.data.values / np.maximum(p, obj.floor))
    nxt = R @ X
    norm = np.linalg.norm(nxt)
    if norm < math.sqrt(_TRACE_FLOOR):
        raise DegenerateStateError("factor annihilated by the reweighting operator")
    return FactorState(nxt * (np.sqrt(state.trace_target) / norm), state.trace_target)


# --- full solves -------------------------------------------------------------

def _trace_norm_arr(arr: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvalsh(arr)).sum())


def _psd_hygiene(arr: np.ndarray, c: float) -> np.ndarray:
    """Zero out near-kernel eigenvalues of a full-matrix iterate."""
    vals, vecs = np.linalg.eigh(arr)
    cut = _KERNEL_CLIP * c
    if vals[0] >= cut:
        return arr
    vals = np.where(vals < cut, 0.0, vals)
    out = (vecs * vals) @ vecs.conj().T
    return 0.5 * (out + out.conj().T)


def _line_searched_solve(
    state: np.ndarray,
    obj: Objective,
    policy: StepPolicy,
    max_iter: int,
    tol: float,
    keep_trace: bool,
    density_of,
    step_fn,
    wrap,
):
    """Shared shrink-only descent loop for the full and factorized iterations.

    `density_of` maps the raw state to its density array, `step_fn(state, g,
    eps)` produces a trial state, `wrap` builds the public value for kept
    iterates. Raised StepSizeError/DegenerateStateError counts as a failed
    trial and shrinks eps.
    """
    rho = density_of(state)
    p = obj._forward_arr(rho)
    f = obj._value_from(p)
    g = obj._gradient_from(p)
    eps = policy.resolve_initial(float(np.linalg.norm(g)))

    trace = SolverTrace(objective_values=[f])
    if keep_trace:
        trace.iterates_kept = [wrap(state)]

    for _ in range(max_iter):
        accepted = None
        for _halving in range(policy.max_halvings_per_step + 1):
            try:
                candidate = step_fn(state, g, eps)
            except (StepSizeError, DegenerateStateError):
                f_cand = math.inf
            else:
                rho_cand = density_of(candidate)
                p_cand = obj._forward_arr(rho_cand)
                f_cand = obj._value_from(p_cand)
            if f_cand <= f + DESCENT_SLACK:
                accepted = candidate
                break
            eps *= policy.shrink
            if eps < policy.min_eps:
                break
        if accepted is None:
            trace.stop_reason = EPS_EXHAUSTED
            break

        residual = _trace_norm_arr(rho_cand - rho)
        state, rho, f = accepted, rho_cand, f_cand
        trace.objective_values.append(f)
        trace.eps_values.append(eps)
        trace.residuals.append(residual)
        trace.fixed_point_residual = residual
        if keep_trace:
            trace.iterates_kept.append(wrap(state))
        if residual < tol:
            trace.stop_reason = CONVERGED
            break
        g = obj._gradient_from(p_cand)
    else:
        trace.stop_reason = MAX_ITER

    return state, trace


def gm_solve(
    rho0: DensityLike,
    obj: Objective,
    policy: StepPolicy | None = None,
    max_iter: int = 20000,
    tol: float = 1e-10,
    keep_trace: bool = False,
) -> tuple[DensityLike, SolverTrace]:
    """Gradient-multiplication solve with shrink-only step control.

    Objective values along the trace are non-increasing (within a 1e-12
    slack); the stop residual is the trace norm of the last step. A small
    residual certifies a fixed point, not a solution: run the validity
    certificate on the result to tell the two apart.
    """
    policy = policy or StepPolicy()
    c = rho0.trace_target
    final, trace = _line_searched_solve(
        np.array(rho0.entries),
        obj,
        policy,
        max_iter,
        tol,
        keep_trace,
        density_of=lambda arr: arr,
        step_fn=lambda arr, g, eps: _psd_hygiene(_gm_step_arr(arr, g, eps, c), c),
        wrap=lambda arr: DensityLike.from_array(arr, c),
    )
    return DensityLike.from_array(final, c), trace


def fgd_solve(
    state0: FactorState,
    obj: Objective,
    policy: StepPolicy | None = None,
    max_iter: int = 20000,
    tol: float = 1e-10,
    keep_trace: bool = False,
) -> tuple[FactorState, SolverTrace]:
    """Factorized gradient descent with the same step control as gm_solve.

    Iterates stay rank <= r; residuals and objective values are measured on
    the outer products X X*.
    """
    policy = policy or StepPolicy()
    c = state0.trace_target
    final, trace = _line_searched_solve(
        np.array(state0.X),
        obj,
        policy,
        max_iter,
        tol,
        keep_trace,
        density_of=_outer,
        step_fn=lambda X, g, eps: _fgd_apply_arr(X, g, eps, c),
        wrap=lambda X: FactorState(X, c),
    )
    return FactorState(final, c), trace


def mle_solve(
    rho0: DensityLike,
    obj: Objective,
    max_iter: int = 20000,
    tol: float = 1e-10,
    keep_trace: bool = False,
) -> tuple[DensityLike, SolverTrace]:
    """Plain multiplicative likelihood iteration (no step size, no descent guarantee)."""
    if obj.kind != NEG_LOG_LIKELIHOOD:
        raise ValueError("mle_solve requires the nll objective")
    c = rho0.trace_target
    rho = np.array(rho0.entries)
    trace = SolverTrace(objective_values=[obj._value_arr(rho)])
    if keep_trace:
        trace.iterates_kept = [rho0]

    for _ in range(max_iter):
        nxt = _psd_hygiene(_mle_step_arr(rho, obj, c), c)
        residual = _trace_norm_arr(nxt - rho)
        rho = nxt
        trace.objective_values.append(obj._value_arr(rho))
        trace.eps_values.append(math.nan)
        trace.residuals.append(residual)
        trace.fixed_point_residual = residual
        if keep_trace:
            trace.iterates_kept.append(DensityLike.from_array(rho, c))
        if residual < tol:
            trace.stop_reason = CONVERGED
            break
    else:
        trace.stop_reason = MAX_ITER

    return DensityLike.from_array(rho, c), trace


def pgd_solve(
    rho0: DensityLike,
    obj: Objective,
    step: float | None = None,
    max_iter: int = 20000,
    tol: float = 1e-11,
) -> DensityLike:
    """Projected gradient descent onto the trace-c PSD set (reference oracle).

    Iterates are project(rho - step * grad F(rho)) with backtracking on
    objective increase; the trial step length is chosen spectrally from the
    last displacement (Barzilai-Borwein), which makes the stop tolerance on
    the trace-norm step translate into a comparably tight first-order
    optimality residual.
    """
    c = rho0.trace_target
    rho = np.array(rho0.entries)
    p = obj._forward_arr(rho)
    f = obj._value_from(p)
    g = obj._gradient_from(p)
    if step is None:
        step = 1.0 / (float(np.linalg.norm(g)) + 1.0)

    for _ in range(max_iter):
        s = step
        stalled = False
        while True:
            candidate = _project_density_arr(rho - s * g, c)
            p_cand = obj._forward_arr(candidate)
            f_cand = obj._value_from(p_cand)
            if f_cand <= f + DESCENT_SLACK:
                break
            s *= 0.5
            if s < 1e-18:
                stalled = True
                break
        if stalled:
            break
        displacement = candidate - rho
        residual = _trace_norm_arr(displacement)
        g_new = obj._gradient_from(p_cand)
        gradient_change = g_new - g
        rho, f, g = candidate, f_cand, g_new
        if residual < tol:
            break
        curvature = float(np.vdot(displacement, gradient_change).real)
        if curvature > 0.0:
            step = min(max(float(np.vdot(displacement, displacement).real) / curvature, 1e-12), 1e12)
        else:
            step = s * 2.0

    return DensityLike.from_array(rho, c)
