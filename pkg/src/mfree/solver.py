"""Solving the reduced system: direct factorization or matrix-free Krylov.

The reduced matrix applied to the normalized noisy counts gives
quasi-probabilities.  Small systems go through cached LU factorization;
large or implicit ones through diagonally preconditioned GMRES (BiCGSTAB
as a fallback), where each iteration only needs products with the matrix,
never the matrix itself.

The residual tolerance is absolute and applies to the preconditioned
system: convergence means ||D^-1 (A x - b)||_2 <= tol with D the diagonal
of the reduced matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from . import _kernels
from .amatrix import DENSE_LIMIT, ReducedAssignmentMatrix, build_reduced
from .bitstrings import CountsDistribution, QuasiDistribution, normalize
from .calibration import CalibrationSet
from .exceptions import ConvergenceError, SolverError, ValidationError

MITIGATED_SUM_TOL = 1e-6


@dataclass(frozen=True)
class SolveOptions:
    """Knobs for the linear solve."""

    method: str = "auto"  # auto | direct | iterative
    tol: float = 1e-5  # absolute residual tolerance, preconditioned system
    max_iter: int = 1024
    restart: int = 30  # GMRES restart length
    algorithm: str = "gmres"  # gmres | bicgstab

    def __post_init__(self):
        if self.method not in ("auto", "direct", "iterative"):
            raise ValidationError(f"unknown method {self.method!r}")
        if self.algorithm not in ("gmres", "bicgstab"):
            raise ValidationError(f"unknown algorithm {self.algorithm!r}")
        if not self.tol > 0:
            raise ValidationError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.restart < 1:
            raise ValidationError(f"restart must be >= 1, got {self.restart}")


@dataclass(frozen=True)
class SolveReport:
    """Diagnostics for one solve."""

    method_used: str
    iterations: int
    final_residual_norm: float
    dim: int
    converged: bool = True


def _as_vector(x, dim: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ValidationError(f"vector has shape {x.shape}, expected ({dim},)")
    return x


def _implicit_apply(A: ReducedAssignmentMatrix, x: np.ndarray, transpose: bool) -> np.ndarray:
    oracle = A.oracle
    M = A.dim
    if _kernels.HAVE_NUMBA and oracle.mode == "tensored":
        _kernels._apply_threads()
        out = np.empty(M, dtype=np.float64)
        if oracle.can_ratio:
            base = A.diagonal()
            kern = _kernels._nb_rmatvec_ratio if transpose else _kernels._nb_matvec_ratio
            kern(A.words, A.distance, base, oracle.ratio, x, out)
        else:
            scale = 1.0 / A.col_norms
            kern = (
                _kernels._nb_rmatvec_product if transpose else _kernels._nb_matvec_product
            )
            kern(A.words, oracle.width, A.distance, oracle.table, scale, x, out)
        return out
    inv_norms = 1.0 / A.col_norms
    bits = A.bits

    def values_fn(r_idx, c_idx):
        return oracle.elements(bits[r_idx], bits[c_idx]) * inv_norms[c_idx]

    out = np.zeros(M, dtype=np.float64)
    return _kernels.np_pair_apply(A.words, A.distance, values_fn, x, out, transpose)


def matvec(A: ReducedAssignmentMatrix, x) -> np.ndarray:
    """y[r] = sum_c A(r, c) x[c], from storage or the element oracle."""
    x = _as_vector(x, A.dim)
    if A.dense is not None:
        return A.dense @ x
    if A.sparse is not None:
        return A.sparse @ x
    return _implicit_apply(A, x, transpose=False)


def rmatvec(A: ReducedAssignmentMatrix, x) -> np.ndarray:
    """y[c] = sum_r A(r, c) x[r]: the transpose product."""
    x = _as_vector(x, A.dim)
    if A.dense is not None:
        return A.dense.T @ x
    if A.sparse is not None:
        return A.sparse.T @ x
    return _implicit_apply(A, x, transpose=True)


def _lu_factorization(A: ReducedAssignmentMatrix):
    if A._lu is None:
        if A.dense is None:
            raise SolverError(
                "direct solve requires dense storage "
                f"(matrix is '{A.storage}', dim {A.dim}); build with storage='dense' "
                "or use the iterative method"
            )
        lu, piv = scipy.linalg.lu_factor(A.dense, check_finite=False)
        if np.any(np.diag(lu) == 0.0):
            raise SolverError(
                f"reduced matrix is singular (dim {A.dim}, distance {A.distance})"
            )
        A._lu = (lu, piv)
    return A._lu


def _direct_solve_cached(A: ReducedAssignmentMatrix, b: np.ndarray, transpose=False) -> np.ndarray:
    lu_piv = _lu_factorization(A)
    return scipy.linalg.lu_solve(lu_piv, b, trans=1 if transpose else 0, check_finite=False)


def solve_direct(A: ReducedAssignmentMatrix, b) -> Tuple[np.ndarray, SolveReport]:
    """LU solve of the reduced system; the factorization is cached on A."""
    b = _as_vector(b, A.dim)
    x = _direct_solve_cached(A, b)
    residual = float(np.linalg.norm(A.dense @ x - b))
    report = SolveReport(
        method_used="direct",
        iterations=0,
        final_residual_norm=residual,
        dim=A.dim,
        converged=True,
    )
    return x, report


def solve_iterative(
    A: ReducedAssignmentMatrix, b, options: Optional[SolveOptions] = None, transpose=False
) -> Tuple[np.ndarray, SolveReport]:
    """Jacobi-preconditioned Krylov solve of the reduced system.

    Both sides are scaled by the reciprocal diagonal, so the tolerance is
    the absolute residual of the preconditioned system.  Non-convergence
    raises ConvergenceError carrying the best iterate; callers may retry
    with ``algorithm='bicgstab'``.
    """
    opts = options or SolveOptions()
    b = _as_vector(b, A.dim)
    M = A.dim
    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("reduced matrix has a non-positive diagonal entry")

    apply_fn = rmatvec if transpose else matvec

    def op(v):
        return apply_fn(A, v) / diag

    rhs = b / diag
    linop = scipy.sparse.linalg.LinearOperator((M, M), matvec=op, dtype=np.float64)

    iterations = 0

    if opts.algorithm == "gmres":

        def callback(pr_norm):
            nonlocal iterations
            iterations += 1

        restart = min(opts.restart, M)
        outer = max(1, math.ceil(opts.max_iter / restart))
        x, info = scipy.sparse.linalg.gmres(
            linop,
            rhs,
            rtol=0.0,
            atol=opts.tol,
            restart=restart,
            maxiter=outer,
            callback=callback,
            callback_type="pr_norm",
        )
    else:

        def callback(xk):
            nonlocal iterations
            iterations += 1

        x, info = scipy.sparse.linalg.bicgstab(
            linop,
            rhs,
            rtol=0.0,
            atol=opts.tol,
            maxiter=opts.max_iter,
            callback=callback,
        )

    residual = float(np.linalg.norm(op(x) - rhs))
    if info < 0:
        raise SolverError(
            f"{opts.algorithm} breakdown (code {info}) at dim {M}, "
            f"residual {residual:.3e}"
        )
    if info > 0 and residual > opts.tol:
        raise ConvergenceError(
            f"{opts.algorithm} did not reach tol {opts.tol:.1e} in "
            f"{iterations} iterations (residual {residual:.3e}); "
            "consider algorithm='bicgstab' or a larger max_iter",
            best_x=x,
            residual_norm=residual,
            iterations=iterations,
        )
    report = SolveReport(
        method_used=opts.algorithm,
        iterations=iterations,
        final_residual_norm=residual,
        dim=M,
        converged=True,
    )
    return x, report


def solve(
    A: ReducedAssignmentMatrix, b, options: Optional[SolveOptions] = None
) -> Tuple[np.ndarray, SolveReport]:
    """Dispatch on options.method ('auto' picks by size and storage)."""
    opts = options or SolveOptions()
    method = opts.method
    if method == "auto":
        method = "direct" if A.dense is not None else "iterative"
    if method == "direct":
        return solve_direct(A, b)
    return solve_iterative(A, b, opts)


def mitigate(
    cal: CalibrationSet,
    noisy: CountsDistribution,
    distance: int = 3,
    options: Optional[SolveOptions] = None,
    mode: Optional[str] = None,
) -> Tuple[QuasiDistribution, SolveReport]:
    """Readout-error mitigation of a counts distribution.

    Builds the reduced matrix over the observed bit-strings, normalizes the
    counts, solves, and returns quasi-probabilities keyed by the observed
    bit-strings together with the solve diagnostics.
    """
    opts = options or SolveOptions()
    M = len(noisy)
    if opts.method == "direct" or (opts.method == "auto" and M <= DENSE_LIMIT):
        storage = "dense"
    else:
        storage = "implicit"
    A = build_reduced(cal, noisy, distance=distance, storage=storage, mode=mode)
    probs = normalize(noisy)
    b = np.array([probs[bs] for bs in A.basis], dtype=np.float64)
    x, report = solve(A, b, opts)
    quasi = QuasiDistribution(
        dict(zip(A.basis, x.tolist())), width=noisy.width, sum_tol=MITIGATED_SUM_TOL
    )
    return quasi, report
