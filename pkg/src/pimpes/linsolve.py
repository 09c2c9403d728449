"""Sparse solves with explicit residual contracts.

Every solve is checked against
``||residual|| <= rtol * (||M|| ||x|| + ||rhs||)`` in the infinity norm and
raises :class:`SolverError` when the contract is not met.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

RTOL = 1e-10


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveReport:
    kind: str
    relative_residual: float
    relative_residual_p: float = 0.0
    compatibility_defect: float = 0.0
    size: int = 0

    @property
    def worst(self) -> float:
        return max(self.relative_residual, self.relative_residual_p)


def _norm(M) -> float:
    if M.shape[0] == 0 or M.shape[1] == 0 or M.nnz == 0:
        return 0.0
    return float(abs(M).sum(axis=1).max())


def _inf(x) -> float:
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


def relative_residual(M, x, rhs) -> float:
    r = _inf(M @ x - rhs)
    scale = _norm(M) * _inf(x) + _inf(rhs)
    return r / scale if scale > 0 else r


def solve_spd(A, b, *, rtol: float = RTOL, backend: str = "direct", log: Optional[list] = None) -> np.ndarray:
    """Solve a symmetric positive definite system (constraints pre-eliminated)."""
    A = sps.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] == 0:
        return np.zeros(0)
    if not np.any(b):
        x = np.zeros_like(b)
    elif backend == "direct":
        try:
            x = spla.splu(A).solve(b)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
    elif backend == "iterative":
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError("nonpositive diagonal in SPD solve")
        M = sps.diags(1.0 / d)
        x, info = spla.cg(A, b, rtol=1e-14, atol=0.0, maxiter=20 * A.shape[0], M=M)
        if info != 0:
            raise SolverError(f"CG did not converge (info={info}), "
                              f"residual {relative_residual(A, x, b):.3e}")
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError("SPD solve produced non-finite values")
    rel = relative_residual(A, x, b)
    if rel > rtol:
        raise SolverError(f"SPD solve residual {rel:.3e} exceeds {rtol:.1e}")
    if log is not None:
        log.append(SolveReport("spd", rel, size=A.shape[0]))
    return x


@dataclass
class SaddleSystem:
    """``A u - B p = r_u`` (free rows of u) and ``C u = r_p``.

    ``fixed`` lists constrained u DOFs with values ``fixed_values``; their
    rows of the first block are dropped and their columns moved to the right
    side. ``gauge`` is ``None`` or ``(cell, value)`` pinning one pressure.
    """

    A: sps.spmatrix
    B: sps.spmatrix
    C: sps.spmatrix
    r_u: np.ndarray
    r_p: np.ndarray
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gauge: Optional[tuple] = None


def solve_saddle(sys: SaddleSystem, *, rtol: float = RTOL, backend: str = "direct",
                 log: Optional[list] = None) -> tuple[np.ndarray, np.ndarray]:
    A = sps.csr_matrix(sys.A)
    B = sps.csr_matrix(sys.B)
    C = sps.csr_matrix(sys.C)
    n, m = B.shape
    fixed = np.asarray(sys.fixed, dtype=np.int64)
    is_free = np.ones(n, dtype=bool)
    is_free[fixed] = False
    free = np.flatnonzero(is_free)

    u = np.zeros(n)
    u[fixed] = sys.fixed_values
    A_f = A[free]
    r_u = np.asarray(sys.r_u, dtype=float)[free] - A_f[:, fixed] @ u[fixed]
    A_ff = A_f[:, free]
    B_f = B[free]
    C_f = C[:, free]
    r_p = np.asarray(sys.r_p, dtype=float) - C[:, fixed] @ u[fixed]

    floating = m > 0 and not np.any(np.abs(B_f @ np.ones(m)) > 1e-12 * (_norm(B_f) or 1.0))
    defect = 0.0
    if floating:
        if sys.gauge is None:
            raise SolverError("pressure is only determined up to a constant "
                              "(no Dirichlet boundary); a pin-cell gauge is required")
        total = float(r_p.sum())
        scale = float(np.abs(sys.r_p).sum() + np.abs(C[:, fixed] @ u[fixed]).sum())
        defect = abs(total) / scale if scale > 0 else abs(total)
        if defect > rtol:
            raise SolverError(f"incompatible all-Neumann data: relative defect {defect:.3e}")
        r_p = r_p - total / m
    pinned = None
    if sys.gauge is not None and floating:
        pinned, p_pin = int(sys.gauge[0]), float(sys.gauge[1])

    keep_p = np.ones(m, dtype=bool)
    if pinned is not None:
        keep_p[pinned] = False
        r_u = r_u + B_f[:, [pinned]].toarray().ravel() * p_pin
    kp = np.flatnonzero(keep_p)

    K = sps.bmat([[A_ff, -B_f[:, kp]], [C_f[kp], None]], format="csc")
    rhs = np.concatenate([r_u, r_p[kp]])
    if backend == "direct":
        try:
            lu = spla.splu(K)
            sol = lu.solve(rhs)
            # one refinement step recovers the digits lost to the block scaling
            sol = sol + lu.solve(rhs - K @ sol)
        except RuntimeError as exc:
            raise SolverError(f"singular saddle-point system: {exc}") from exc
    elif backend == "iterative":
        sol = _gmres_saddle(K, A_ff, B_f[:, kp], C_f[kp], rhs)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if not np.all(np.isfinite(sol)):
        raise SolverError("saddle-point solve produced non-finite values")

    u[free] = sol[:len(free)]
    p = np.zeros(m)
    p[kp] = sol[len(free):]
    if pinned is not None:
        p[pinned] = p_pin

    # checked against the unreduced blocks, pinned pressure included
    top = sps.hstack([A, -B], format="csr")[free]
    res_u = A_f @ u - B_f @ p - np.asarray(sys.r_u, dtype=float)[free]
    scale_u = _norm(top) * max(_inf(u), _inf(p)) + _inf(np.asarray(sys.r_u)[free])
    rel_u = _inf(res_u) / scale_u if scale_u > 0 else _inf(res_u)
    # a near-zero exact velocity (e.g. gravity balanced by pressure) would make
    # the usual scale pure roundoff, so the largest velocity that either
    # momentum term could drive in any row sets a floor
    diag = np.abs(A_ff.diagonal())
    a_min = float(diag[diag > 0].min()) if np.any(diag > 0) else (_norm(A_ff) or 1.0)
    drive = _inf(np.asarray(sys.r_u)[free]) + _norm(B_f) * _inf(p)
    u_ref = max(_inf(u), drive / a_min)
    scale_p = _norm(C_f) * u_ref + _inf(r_p)
    res_p = _inf(C_f @ u[free] - r_p)
    rel_p = res_p / scale_p if scale_p > 0 else res_p
    if max(rel_u, rel_p) > rtol:
        raise SolverError(f"saddle-point residuals {rel_u:.3e}, {rel_p:.3e} exceed {rtol:.1e}")
    if log is not None:
        log.append(SolveReport("saddle", rel_u, rel_p, defect, K.shape[0]))
    return u, p


def _gmres_saddle(K, A, B, C, rhs):
    """Block-diagonal preconditioned GMRES (Jacobi on A, exact approximate Schur)."""
    d = A.diagonal()
    Dinv = sps.diags(1.0 / d)
    S = sps.csc_matrix(C @ Dinv @ B)
    S_lu = spla.splu(S)
    na = A.shape[0]

    def apply(x):
        return np.concatenate([x[:na] / d, S_lu.solve(x[na:])])

    M = spla.LinearOperator(K.shape, matvec=apply)
    sol, info = spla.gmres(K, rhs, M=M, rtol=1e-14, atol=0.0, restart=200, maxiter=50)
    if info != 0:
        raise SolverError(f"GMRES did not converge (info={info}), "
                          f"residual {relative_residual(K, sol, rhs):.3e}")
    return sol
