"""Dense matrix helpers shared by the whole package.

Symmetric vectorization (svec/smat), a fixed-point discrete Lyapunov
solver, spectral radius, and box projection. All functions are pure and
operate on plain numpy arrays.
"""

import numpy as np

# Symmetry check tolerance when building a SymMatrix from raw data.
SYM_TOL = 1e-12
# Lyapunov fixed point: stop when the update is below this relative size.
LYAP_RTOL = 1e-12
# Lyapunov fixed point: iteration budget (doubling squares F each pass).
LYAP_MAX_ITER = 200

SQRT2 = np.sqrt(2.0)


class InstabilityError(RuntimeError):
    """A spectral-radius precondition failed (closed loop not stable)."""


class NumericError(RuntimeError):
    """An iterative routine failed to converge or produced non-finite values."""


def ensure_symmetric(M, tol=SYM_TOL, name="matrix"):
    """Validate symmetry of a square array and return its exact symmetrization.

    Parameters
    ----------
    M : (d, d) array_like
    tol : float
        Largest allowed absolute asymmetry |M - M.T|.
    name : str
        Label used in error messages.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    gap = np.abs(M - M.T).max() if M.size else 0.0
    if gap > tol:
        raise ValueError(f"{name} is not symmetric (max asymmetry {gap:.3e} > {tol:.1e})")
    return 0.5 * (M + M.T)


def triu_order(d):
    """Row-major upper-triangle index arrays and svec weights for dimension d.

    Returns (rows, cols, weights) with weights sqrt(2) off the diagonal and 1
    on it. The fixed ordering is (0,0), (0,1), ..., (0,d-1), (1,1), ...,
    (d-1,d-1); only inner products matter downstream, but every caller must
    share one ordering.
    """
    rows, cols = np.triu_indices(d)
    weights = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, weights


def svec(M):
    """Vectorize a symmetric matrix, off-diagonal entries weighted by sqrt(2).

    The weighting makes plain dot products equal Frobenius inner products:
    dot(svec(A), svec(B)) == trace(A @ B).
    """
    M = ensure_symmetric(M, name="svec input")
    rows, cols, weights = triu_order(M.shape[0])
    return M[rows, cols] * weights


def smat(v):
    """Invert svec: rebuild the symmetric matrix from its weighted triangle."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"smat expects a vector, got shape {v.shape}")
    d = int(round((np.sqrt(8.0 * v.size + 1.0) - 1.0) / 2.0))
    if d * (d + 1) // 2 != v.size:
        raise ValueError(f"length {v.size} is not a triangular number")
    rows, cols, weights = triu_order(d)
    M = np.zeros((d, d))
    M[rows, cols] = v / weights
    M[cols, rows] = M[rows, cols]
    return M


def spectral_radius(F):
    """Largest eigenvalue modulus of a square matrix."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError(f"spectral_radius expects a square matrix, got {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ValueError("spectral_radius: non-finite entries")
    return float(np.abs(np.linalg.eigvals(F)).max())


def solve_discrete_lyapunov(F, C):
    """Solve P = C + F.T @ P @ F for the unique symmetric P, given rho(F) < 1.

    Fixed-point iteration with doubling: each pass adds the partial sum
    Fk.T @ P @ Fk and squares Fk, so pass k accounts for 2**k terms of the
    series sum_j F^j.T C F^j. Stops at relative update LYAP_RTOL or raises
    after LYAP_MAX_ITER passes.
    """
    F = np.asarray(F, dtype=float)
    C = ensure_symmetric(C, name="Lyapunov C")
    if F.shape != C.shape:
        raise ValueError(f"shape mismatch: F {F.shape} vs C {C.shape}")
    r = spectral_radius(F)
    if r >= 1.0:
        raise InstabilityError(f"solve_discrete_lyapunov needs rho(F) < 1, got {r:.6f}")
    P = C.copy()
    Fk = F.copy()
    for _ in range(LYAP_MAX_ITER):
        step = Fk.T @ P @ Fk
        P = P + step
        if not np.all(np.isfinite(P)):
            raise NumericError("Lyapunov iteration overflowed (rho(F) too close to 1)")
        if np.linalg.norm(step, "fro") <= LYAP_RTOL * (1.0 + np.linalg.norm(P, "fro")):
            return 0.5 * (P + P.T)
        Fk = Fk @ Fk
    raise NumericError(f"Lyapunov iteration did not converge in {LYAP_MAX_ITER} passes")


def project_box(X, lo, hi):
    """Entrywise clamp of X onto [lo, hi]; the Euclidean projection on a box."""
    if not lo < hi:
        raise ValueError(f"project_box needs lo < hi, got [{lo}, {hi}]")
    return np.clip(np.asarray(X, dtype=float), lo, hi)
