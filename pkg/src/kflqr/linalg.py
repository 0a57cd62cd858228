"""Dense real linear algebra used throughout the package.

Everything here operates on plain float64 numpy arrays.  The matrix
exponential and triangular solves are delegated to scipy/LAPACK; the
continuous algebraic Riccati equation (CARE) is solved with the matrix
sign-function iteration, which needs nothing beyond inverses and products
and is robust for the moderate sizes (D <= 65) that occur here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class SingularMatrixError(ValueError):
    """A linear solve encountered a numerically singular matrix."""


class CareError(RuntimeError):
    """CARE could not be solved; carries numerical diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class CareDiagnostics:
    """Numerical evidence gathered while solving a CARE."""

    iterations: int
    relative_change: float
    subspace_rank: int
    subspace_cond: float
    residual: float


def _as_matrix(m, name="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def _as_square(m, name="matrix"):
    m = _as_matrix(m, name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def expm(m):
    """Matrix exponential e^M (Pade approximation with scaling and squaring)."""
    m = _as_square(m)
    return scipy.linalg.expm(m)


def solve_linear(a, b):
    """Solve AX = B by partial-pivot LU.

    Raises SingularMatrixError when a pivot falls below 1e-14 relative to
    the largest entry of A.
    """
    a = _as_square(a, "A")
    b = np.asarray(b, dtype=float)
    vector_rhs = b.ndim == 1
    b2 = b[:, None] if vector_rhs else b
    if b2.shape[0] != a.shape[0]:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")
    with warnings.catch_warnings():
        # exact zero pivots are detected below; scipy's warning is noise here
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    pivots = np.abs(np.diag(lu))
    scale = max(np.max(np.abs(a)), 1.0)
    if np.min(pivots) < 1e-14 * scale:
        raise SingularMatrixError(
            f"matrix is singular to working precision (min pivot {np.min(pivots):.3e})"
        )
    x = scipy.linalg.lu_solve((lu, piv), b2, check_finite=False)
    return x[:, 0] if vector_rhs else x


def inv(a):
    """Matrix inverse via solve_linear (same singularity policy)."""
    a = _as_square(a)
    return solve_linear(a, np.eye(a.shape[0]))


def discretize(a, b, dt):
    """Exact zero-order-hold discretisation of (A, B) at step dt.

    Uses the augmented exponential expm(dt*[[A, B], [0, 0]]) whose top
    blocks are (A_d, B_d).  Unlike A^{-1}(A_d - I)B this remains defined
    for singular A.
    """
    a = _as_square(a, "A")
    b = _as_matrix(b, "B")
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"A is {a.shape} but B is {b.shape}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n, m = b.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a
    aug[:n, n:] = b
    phi = expm(dt * aug)
    return phi[:n, :n], phi[:n, n:]


def _validate_symmetric(m, name):
    m = _as_square(m, name)
    asym = np.linalg.norm(m - m.T, "fro")
    if asym > 1e-12 * max(1.0, np.linalg.norm(m, "fro")):
        raise ValueError(f"{name} is not symmetric (asymmetry {asym:.3e})")
    return 0.5 * (m + m.T)


def _validate_psd(m, name):
    """Cheap PSD check via Cholesky of a minutely shifted copy."""
    shift = 1e-10 * max(1.0, float(np.trace(m)))
    try:
        np.linalg.cholesky(m + shift * np.eye(m.shape[0]))
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not positive semidefinite") from None


def matrix_sign(m, tol=1e-12, max_iter=100):
    """Matrix sign function via the scaled Newton iteration.

    Returns (S, converged, iterations, relative_change).  Determinant-based
    scaling c = |det Z|^(1/n) accelerates the initial phase.  Convergence
    fails when M has eigenvalues on (or numerically near) the imaginary
    axis.
    """
    z = _as_square(m).copy()
    n = z.shape[0]
    eye = np.eye(n)
    rel = np.inf
    for k in range(1, max_iter + 1):
        try:
            z_inv = solve_linear(z, eye)
        except SingularMatrixError:
            return z, False, k, rel
        sign_det, logabsdet = np.linalg.slogdet(z)
        if sign_det == 0 or not np.isfinite(logabsdet):
            return z, False, k, rel
        c = np.exp(logabsdet / n)
        z_next = 0.5 * (z / c + c * z_inv)
        delta = np.linalg.norm(z_next - z, "fro")
        rel = delta / max(np.linalg.norm(z, "fro"), 1e-300)
        z = z_next
        if delta <= tol * np.linalg.norm(z, "fro"):
            return z, True, k, rel
    return z, False, max_iter, rel


def is_hurwitz(m, tol=1e-6):
    """True when all eigenvalues of M have negative real part.

    Checked through the sign function: M is Hurwitz iff sign(M) = -I.
    Non-convergence (eigenvalues on the imaginary axis) counts as not
    Hurwitz.
    """
    m = _as_square(m)
    s, converged, _, _ = matrix_sign(m)
    if not converged:
        return False
    return np.linalg.norm(s + np.eye(m.shape[0]), "fro") <= tol * m.shape[0]


def care_residual(a, b, q, r, p):
    """Frobenius norm of A'P + PA - PBR^{-1}B'P + Q."""
    rinv_btp = solve_linear(r, b.T @ p)
    res = a.T @ p + p @ a - p @ b @ rinv_btp + q
    return np.linalg.norm(res, "fro")


def solve_lyapunov(a, q):
    """Solve A'X + XA + Q = 0 for Hurwitz A.

    Uses the sign function of the block-triangular Hamiltonian
    [[A', Q], [0, -A]], whose sign is [[-I, 2X], [0, I]].
    """
    a = _as_square(a, "A")
    q = _as_square(q, "Q")
    n = a.shape[0]
    h = np.block([[a.T, q], [np.zeros((n, n)), -a]])
    s, converged, iters, rel = matrix_sign(h)
    if not converged:
        raise CareError(
            f"Lyapunov solve failed: A is not Hurwitz (relative change {rel:.3e})"
        )
    return 0.5 * s[:n, n:]


def solve_care(a, b, q, r, tol=1e-12, max_iter=100):
    """Solve A'P + PA - PBR^{-1}B'P + Q = 0 for symmetric PSD P.

    The 2D x 2D Hamiltonian H = [[A, -BR^{-1}B'], [-Q, -A']]
    is run through the sign iteration; P is recovered from the stable
    invariant subspace (the range of I - sign(H)) by least squares.

    Raises CareError when the iteration stagnates (eigenvalues on the
    imaginary axis) or the stable subspace is degenerate, with the
    gathered diagnostics attached.
    """
    a = _as_square(a, "A")
    b = _as_matrix(b, "B")
    d = a.shape[0]
    if b.shape[0] != d:
        raise ValueError(f"A is {a.shape} but B is {b.shape}")
    q = _validate_symmetric(q, "Q")
    r = _validate_symmetric(r, "R")
    if q.shape[0] != d:
        raise ValueError(f"Q must be {d}x{d}, got {q.shape}")
    if r.shape[0] != b.shape[1]:
        raise ValueError(f"R must be {b.shape[1]}x{b.shape[1]}, got {r.shape}")
    _validate_psd(q, "Q")
    try:
        np.linalg.cholesky(r)
    except np.linalg.LinAlgError:
        raise ValueError("R is not positive definite") from None

    g = b @ solve_linear(r, b.T)  # B R^{-1} B'
    ham = np.block([[a, -g], [-q, -a.T]])

    s, converged, iters, rel = matrix_sign(ham, tol=tol, max_iter=max_iter)
    if not converged:
        raise CareError(
            "CARE unsolvable: sign iteration stagnated "
            f"(Hamiltonian eigenvalues near the imaginary axis; {iters} iterations, "
            f"relative change {rel:.3e})",
            CareDiagnostics(iters, rel, -1, np.inf, np.inf),
        )

    # Columns of I - sign(H) span the stable invariant subspace [X; PX];
    # orthonormalize it before extracting P so the solve is well scaled.
    w = np.eye(2 * d) - s
    u, svals, _ = np.linalg.svd(w)
    rank = int(np.sum(svals > 1e-8 * svals[0]))
    span = u[:, :d]
    span_top = span[:d, :]
    span_bot = span[d:, :]
    sv_top = np.linalg.svd(span_top, compute_uv=False)
    cond_top = sv_top[0] / sv_top[-1] if sv_top[-1] > 0 else np.inf
    if rank != d or not np.isfinite(cond_top) or cond_top > 1e14:
        raise CareError(
            "CARE unsolvable: degenerate stable subspace "
            f"(rank {rank} of expected {d}, extraction condition {cond_top:.3e}); "
            "the pair (A, B) may not be stabilizable",
            CareDiagnostics(iters, rel, rank, cond_top, np.inf),
        )

    p, *_ = np.linalg.lstsq(span_top.T, span_bot.T, rcond=None)
    p = p.T
    p = 0.5 * (p + p.T)

    # defect correction: one Newton step solves the closed-loop Lyapunov
    # equation for the residual and roughly squares the accuracy
    for _ in range(2):
        residual = care_residual(a, b, q, r, p)
        rel_residual = residual / (1.0 + np.linalg.norm(p, "fro"))
        if rel_residual <= 1e-12:
            break
        defect = a.T @ p + p @ a - p @ g @ p + q
        try:
            delta = solve_lyapunov(a - g @ p, defect)
        except CareError:
            break
        p = 0.5 * ((p + delta) + (p + delta).T)

    residual = care_residual(a, b, q, r, p)
    rel_residual = residual / (1.0 + np.linalg.norm(p, "fro"))
    if not np.isfinite(rel_residual) or rel_residual > 1e-8:
        raise CareError(
            f"CARE solution residual too large ({rel_residual:.3e})",
            CareDiagnostics(iters, rel, rank, cond_top, residual),
        )
    return p
