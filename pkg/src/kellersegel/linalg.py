"""Jacobi-preconditioned Krylov solvers for the two system types of the scheme."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DENSE_THRESHOLD = 2000


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    final_residual: float
    converged: bool
    method: str = ""


class SolverFailure(RuntimeError):
    def __init__(self, message, report: SolverReport):
        super().__init__(f"{message} ({report})")
        self.report = report


def _residual(A, x, b) -> float:
    return float(np.linalg.norm(b - A @ x))


def roundoff_floor(A, x, b) -> float:
    """Size of the rounding error in evaluating ``b - A x`` (no solver can certify less)."""
    absA = abs(A) if sp.issparse(A) else np.abs(A)
    return 8.0 * np.finfo(float).eps * float(np.linalg.norm(absA @ np.abs(x) + np.abs(b)))


def _jacobi(A) -> np.ndarray:
    d = A.diagonal() if sp.issparse(A) else np.diag(A).copy()
    d = np.where(d != 0.0, d, 1.0)
    return 1.0 / d


def solve_spd(A, b, tol=1e-12, max_iter=None, x0=None):
    """Preconditioned conjugate gradients.

    Stops once the true residual satisfies ``||b - A x|| <= tol * ||b||``, or
    sits at the rounding floor of its own evaluation (see :func:`roundoff_floor`),
    whichever is larger. The recurrence residual only triggers the true check.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if tol <= 0:
        raise ValueError("tol must be positive")
    max_iter = 10 * n + 10 if max_iter is None else max_iter
    bnorm = float(np.linalg.norm(b))
    target = tol * bnorm
    if bnorm == 0.0:
        x = np.zeros(n)
        return x, SolverReport(0, 0.0, True, "pcg")

    dinv = _jacobi(A)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    it = 0
    while it < max_iter:
        if np.linalg.norm(r) <= target:
            r = b - A @ x
            res = float(np.linalg.norm(r))
            if res <= max(target, roundoff_floor(A, x, b)):
                return x, SolverReport(it, res, True, "pcg")
            z = dinv * r
            p = z.copy()
            rz = r @ z
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0.0:
            break
        a = rz / pAp
        x += a * p
        r -= a * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    report = SolverReport(it, _residual(A, x, b), False, "pcg")
    if report.final_residual <= max(target, roundoff_floor(A, x, b)):
        return x, SolverReport(it, report.final_residual, True, "pcg")
    raise SolverFailure("conjugate gradients did not converge", report)


def _bicgstab(A, b, tol, max_iter, x0):
    n = b.size
    bnorm = float(np.linalg.norm(b))
    target = tol * bnorm
    dinv = _jacobi(A)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    it = 0
    while it < max_iter:
        if np.linalg.norm(r) <= target:
            res = _residual(A, x, b)
            if res <= max(target, roundoff_floor(A, x, b)):
                return x, SolverReport(it, res, True, "bicgstab")
            # recurrence drifted: restart from the true residual
            r = b - A @ x
            r_hat = r.copy()
            rho = alpha = omega = 1.0
            v = np.zeros(n)
            p = np.zeros(n)
        rho_new = r_hat @ r
        if rho_new == 0.0 or omega == 0.0:
            break
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        y = dinv * p
        v = A @ y
        denom = r_hat @ v
        if denom == 0.0:
            break
        alpha = rho / denom
        s = r - alpha * v
        x += alpha * y
        it += 1
        if np.linalg.norm(s) <= target:
            r = s
            continue
        zs = dinv * s
        t = A @ zs
        tt = t @ t
        if tt == 0.0:
            break
        omega = (t @ s) / tt
        x += omega * zs
        r = s - omega * t
    res = _residual(A, x, b)
    report = SolverReport(it, res, bool(res <= max(target, roundoff_floor(A, x, b))), "bicgstab")
    if report.converged:
        return x, report
    raise SolverFailure("BiCGSTAB broke down or did not converge", report)


def solve_general(A, b, tol=1e-10, max_iter=None, x0=None, dense_threshold=DENSE_THRESHOLD):
    """Solve a square nonsymmetric system.

    Systems with at most ``dense_threshold`` unknowns are solved by dense LU;
    larger ones by Jacobi-preconditioned BiCGSTAB. Either way the true residual
    is checked, so a singular system yields :class:`SolverFailure` rather than
    a wrong answer.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if A.shape != (n, n):
        raise ValueError(f"shape mismatch: A is {A.shape}, b has {n} entries")
    if tol <= 0:
        raise ValueError("tol must be positive")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolverReport(0, 0.0, True, "trivial")
    if n <= dense_threshold:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        try:
            with np.errstate(all="ignore"):
                x = np.linalg.solve(dense, b)
        except np.linalg.LinAlgError:
            raise SolverFailure("singular matrix", SolverReport(1, float("inf"), False, "dense"))
        res = _residual(A, x, b) if np.all(np.isfinite(x)) else float("inf")
        report = SolverReport(1, res, bool(res <= tol * bnorm), "dense")
        if not report.converged:
            raise SolverFailure("dense solve residual above tolerance (singular system?)", report)
        return x, report
    max_iter = 10 * n + 10 if max_iter is None else max_iter
    return _bicgstab(sp.csr_matrix(A), b, tol, max_iter, x0)
