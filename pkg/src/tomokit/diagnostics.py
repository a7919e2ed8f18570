"""Telling true solutions apart from spurious fixed points.

A converged multiplicative iteration only certifies stationarity of the
iteration map. The first-order test implemented here decides whether such a
fixed point actually minimizes the objective over the trace-c PSD set: it
checks that Q = grad F(rho) + lambda * I is positive semi-definite, with
lambda = -tr(grad F(rho) rho) / c. Both the full-space eigenvalue summary and
the sharper restriction of Q to the kernel of rho are reported, since the
rank deficiency of Q makes the full-space minimum eigenvalue noisy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hermitian import DensityLike, HermitianMatrix, entries_of, random_density
from .objectives import Objective
from .operators import MeasurementData, MeasurementOperator, pauli_six_state
from .solvers import FactorState, StepPolicy, fgd_solve

VALID = "valid"
SPURIOUS = "spurious"
NOT_FIXED_POINT = "not_fixed_point"

# Eigenvectors of rho below this eigenvalue count as its numerical kernel.
KERNEL_EIG_CUTOFF = 1e-10

PSD_TOL_DEFAULT = 1e-6
RESTRICTED_PSD_TOL_DEFAULT = 1e-8
FIX_TOL_DEFAULT = 1e-8

SPURIOUS_T_MAX = 8.0 / 11.0


@dataclass(frozen=True)
class ValidityCertificate:
    """First-order optimality summary at a candidate fixed point."""

    lam: float
    Q: HermitianMatrix
    min_eig_Q: float
    min_eig_Q_restricted: float
    m_residual: float
    verdict: str

    def to_json_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "min_eig_Q": self.min_eig_Q,
            "min_eig_Q_restricted": self.min_eig_Q_restricted,
            "m_residual": self.m_residual,
            "verdict": self.verdict,
        }


def m_set_residual(rho, sigma) -> tuple[float, float]:
    """Best scaling factor and relative defect of the relation rho sigma = lam rho.

    Returns (lam, res) with lam = tr(sigma rho) / tr(rho); res vanishes exactly
    when sigma scales rho under multiplication.
    """
    rho_arr = entries_of(rho)
    sigma_arr = entries_of(sigma)
    rho_norm = float(np.linalg.norm(rho_arr))
    if rho_norm == 0.0:
        raise ValueError("rho must be nonzero")
    lam = float((sigma_arr @ rho_arr).trace().real) / float(rho_arr.trace().real)
    defect = rho_arr @ sigma_arr - lam * rho_arr
    return lam, float(np.linalg.norm(defect)) / rho_norm


def subgradient_membership(rho: DensityLike, M, tol: float = 1e-8) -> bool:
    """Test membership of M in the normal-cone set {lam*I - Q : Q PSD on ker rho}.

    lam is read off the block of M on the range of rho; membership then
    requires Q = lam*I - M to annihilate rho and to be PSD within tol.
    """
    rho_arr = rho.entries
    M_arr = entries_of(M)
    vals, vecs = np.linalg.eigh(rho_arr)
    range_vecs = vecs[:, vals > KERNEL_EIG_CUTOFF]
    if range_vecs.shape[1] == 0:
        raise ValueError("rho has empty numerical range")
    block = range_vecs.conj().T @ M_arr @ range_vecs
    lam = float(block.trace().real) / range_vecs.shape[1]
    Q = lam * np.eye(rho.dim) - M_arr
    if float(np.linalg.norm(Q @ rho_arr)) > tol:
        return False
    return bool(np.linalg.eigvalsh(Q)[0] >= -tol)


def validity_certificate(
    rho: DensityLike,
    obj: Objective,
    psd_tol: float = PSD_TOL_DEFAULT,
    fix_tol: float = FIX_TOL_DEFAULT,
    restricted_psd_tol: float = RESTRICTED_PSD_TOL_DEFAULT,
    kernel_cutoff: float = KERNEL_EIG_CUTOFF,
) -> ValidityCertificate:
    """First-order validity check of a candidate fixed point.

    Verdicts: not_fixed_point when -grad F(rho) fails to scale rho within
    fix_tol; otherwise valid when Q passes the PSD tests (full spectrum within
    psd_tol, kernel-restricted block within restricted_psd_tol), else spurious.
    The restricted minimum is +inf when rho has no numerical kernel.
    """
    g = obj._gradient_arr(rho.entries)
    lam, residual = m_set_residual(rho.entries, -g)
    Q_arr = g + lam * np.eye(rho.dim)
    Q_arr = 0.5 * (Q_arr + Q_arr.conj().T)
    min_eig = float(np.linalg.eigvalsh(Q_arr)[0])

    vals, vecs = np.linalg.eigh(rho.entries)
    kernel_vecs = vecs[:, vals < kernel_cutoff]
    if kernel_vecs.shape[1] == 0:
        min_eig_restricted = math.inf
    else:
        block = kernel_vecs.conj().T @ Q_arr @ kernel_vecs
        block = 0.5 * (block + block.conj().T)
        min_eig_restricted = float(np.linalg.eigvalsh(block)[0])

    if residual > fix_tol:
        verdict = NOT_FIXED_POINT
    elif min_eig >= -psd_tol and min_eig_restricted >= -restricted_psd_tol:
        verdict = VALID
    else:
        verdict = SPURIOUS

    return ValidityCertificate(
        lam=lam,
        Q=HermitianMatrix(Q_arr),
        min_eig_Q=min_eig,
        min_eig_Q_restricted=min_eig_restricted,
        m_residual=residual,
        verdict=verdict,
    )


def mu_exclusion(rho: DensityLike, obj: Objective, c: float | None = None) -> float:
    """The single step size at which a true solution stops being a fixed point.

    Returns mu = c / tr(grad F(rho) rho); math.inf signals that no finite step
    size is excluded (vanishing denominator, e.g. a perfect least-squares fit).
    """
    if c is None:
        c = rho.trace_target
    g = obj._gradient_arr(rho.entries)
    denom = float((g @ rho.entries).trace().real)
    if abs(denom) < np.finfo(float).tiny:
        return math.inf
    return c / denom


def construct_spurious_t2(t: float) -> tuple[DensityLike, MeasurementData, DensityLike]:
    """Analytic spurious fixed point for the six-state qubit operator.

    For t in (0, 8/11] returns (rho_fix, data, rho_true): rho_fix is a rank-one
    state fixed by the multiplicative iterations on `data`, while the actual
    constrained minimizer rho_true differs from it (and has full rank for
    t < 8/11). The data rows are normalized probabilities.
    """
    if not 0.0 < t <= SPURIOUS_T_MAX + 1e-12:
        raise ValueError(f"t must lie in (0, 8/11], got {t}")
    rho_fix = DensityLike.from_array(
        np.array([[1.0, 1.0 - 1.0j], [1.0 + 1.0j, 2.0]]) / 3.0
    )
    data = MeasurementData(
        np.array(
            [
                [2.0 + 4.0 * t, 4.0 - 4.0 * t],
                [5.0 - 5.0 * t, 1.0 + 5.0 * t],
                [5.0 - 5.0 * t, 1.0 + 5.0 * t],
            ]
        )
        / 6.0
    )
    preimage = pauli_six_state().pseudo_inverse_apply(data)
    rho_true = DensityLike(preimage)
    return rho_fix, data, rho_true


def spurious_via_rank(
    operator: MeasurementOperator,
    obj: Objective,
    true_rank: int,
    start_rank: int,
    seed: int,
    max_iter: int = 20000,
    tol: float = 1e-12,
) -> tuple[DensityLike, ValidityCertificate]:
    """Drive the factorized iteration into a spurious fixed point by rank starvation.

    Generates a truth of rank `true_rank` via random_density(dim, true_rank,
    seed), takes exact data from it, and runs the rank-limited factorized
    solve from a random rank-`start_rank` initializer (seed + 1). The limit
    has rank <= start_rank < true_rank, so it cannot be the solution. The
    `obj` argument supplies the fit kind and floor; its data is replaced.
    """
    if not 1 <= start_rank < true_rank:
        raise ValueError(
            f"need 1 <= start_rank < true_rank, got start={start_rank}, true={true_rank}"
        )
    N = operator.dim
    truth = random_density(N, true_rank, seed)
    data = MeasurementData(operator.apply(truth))
    fit = Objective(operator, data, kind=obj.kind, floor=obj.floor)
    start = FactorState.from_density(random_density(N, start_rank, seed + 1), start_rank)
    final, _trace = fgd_solve(start, fit, StepPolicy(), max_iter=max_iter, tol=tol)
    result = final.density()
    return result, validity_certificate(result, fit)
