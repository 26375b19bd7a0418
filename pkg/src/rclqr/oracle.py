"""Model-based ground truth for the risk-constrained LQR problem.

Everything here assumes (A, B) are known: closed-form value and action-value
parameters, the exact Lagrangian and constraint values, the exact policy
gradient, and a primal-dual reference solver whose output certifies KKT
conditions. The learner never touches this module; tests and the CLI use it
to verify the model-free path.
"""

from dataclasses import dataclass

import numpy as np

from .matkit import (
    InstabilityError,
    NumericError,
    ensure_symmetric,
    solve_discrete_lyapunov,
    spectral_radius,
)
from .plant import ClosedLoopMoments, Policy, closed_loop_moments

# Central finite-difference step for gradient verification.
FD_STEP = 1e-5
# Reference solver defaults: tolerances and budgets.
INNER_TOL = 1e-8
OUTER_TOL = 1e-6
FEAS_TOL = 1e-9
INNER_MAX_ITER = 5000
OUTER_MAX_EVALS = 200
ARMIJO_C1 = 1e-4
GD_STEP0 = 1e-3
GD_GROWTH = 1.5
# Switch from gradient descent to the policy-iteration polish below this norm
# (relative to the starting gradient, with an absolute floor).
POLISH_RELATIVE = 1e-2
POLISH_FLOOR = 1e-3
# Candidate steps must stay strictly inside the stability region.
STABILITY_MARGIN = 1e-9


@dataclass(frozen=True)
class CostSpec:
    """Quadratic stage cost x'Qx + u'Ru and risk budget iota."""

    Q: np.ndarray
    R: np.ndarray
    iota: float

    def __post_init__(self):
        Q = ensure_symmetric(self.Q, name="Q")
        R = ensure_symmetric(self.R, name="R")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class LagrangianParams:
    """Per-mu cost reshaping: Qmu = Q + 4 mu QWQ, S = 2 mu Q M3, and bar_iota."""

    Qmu: np.ndarray
    S: np.ndarray
    mu: float
    bar_iota: float


@dataclass(frozen=True)
class ValueParams:
    """Differential value function V(x) = x'Px + g'x + z1 (zero mean under nu)."""

    P: np.ndarray
    g: np.ndarray
    z1: float


@dataclass(frozen=True)
class QParams:
    """Action-value Q(x,u) = [x;u]' Upsilon [x;u] + 2p'x + 2q'u + z2."""

    Upsilon: np.ndarray
    p: np.ndarray
    q: np.ndarray
    z2: float


@dataclass(frozen=True)
class GradientParts:
    """Exact policy gradient grad = 2 [E, G] Phi over X = [K, b]."""

    E: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Phi: np.ndarray
    grad: np.ndarray


@dataclass(frozen=True)
class Certificate:
    """KKT residuals of a reference solve."""

    grad_norm: float
    comp_slack: float
    feasibility: float
    L: float
    J: float
    Jc: float
    bar_iota: float
    inner_iters: int
    outer_evals: int
    converged: bool
    message: str


@dataclass(frozen=True)
class ReferenceSolution:
    policy: Policy
    mu: float
    certificate: Certificate


def bar_iota_value(cost, moments):
    """Reformulated risk budget: iota - m4 + 4 tr[(WQ)^2]."""
    WQ = moments.W @ cost.Q
    return float(cost.iota - moments.m4 + 4.0 * np.trace(WQ @ WQ))


def lagrangian_params(cost, moments, mu):
    """Assemble the mu-weighted stage-cost parameters."""
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    Q = cost.Q
    Qmu = Q + 4.0 * mu * (Q @ moments.W @ Q)
    S = 2.0 * mu * (Q @ moments.M3)
    return LagrangianParams(Qmu=0.5 * (Qmu + Qmu.T), S=S, mu=float(mu), bar_iota=bar_iota_value(cost, moments))


def stage_cost(lp, R, x, u):
    """c_mu(x, u) = x'Qmu x + 2 x'S + u'Ru - mu * bar_iota."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return float(x @ lp.Qmu @ x + 2.0 * x @ lp.S + u @ R @ u - lp.mu * lp.bar_iota)


def _moments_for(sys, moments, policy):
    return closed_loop_moments(sys, moments, policy)


def value_params(sys, cost, moments, policy, mu, cl=None):
    """Closed-form differential value function parameters for a stabilizing policy.

    P solves P = Qmu + K'RK + F'PF; g solves the companion linear system; z1
    normalizes the value to zero mean under the stationary distribution.
    """
    lp = lagrangian_params(cost, moments, mu)
    cl = _moments_for(sys, moments, policy) if cl is None else cl
    K, b = policy.K, policy.b
    F = policy.closed_loop(sys)
    P = solve_discrete_lyapunov(F, lp.Qmu + K.T @ cost.R @ K)
    rhs = lp.S - K.T @ cost.R @ b + F.T @ P @ (sys.B @ b + moments.wbar)
    g = 2.0 * np.linalg.solve(np.eye(sys.n) - F.T, rhs)
    z1 = float(-np.trace(P @ cl.Sigma) - cl.xbar @ P @ cl.xbar - g @ cl.xbar)
    return ValueParams(P=P, g=g, z1=z1)


def lagrangian_value(sys, cost, moments, policy, mu, cl=None):
    """Average stage cost of the policy under the mu-weighted objective."""
    lp = lagrangian_params(cost, moments, mu)
    cl = _moments_for(sys, moments, policy) if cl is None else cl
    K, b = policy.K, policy.b
    M = lp.Qmu + K.T @ cost.R @ K
    xbar, Sigma = cl.xbar, cl.Sigma
    return float(
        np.trace(M @ Sigma)
        + xbar @ M @ xbar
        + 2.0 * xbar @ (lp.S - K.T @ cost.R @ b)
        + policy.sigma**2 * np.trace(cost.R)
        + b @ cost.R @ b
        - mu * lp.bar_iota
    )


def constraint_value(sys, cost, moments, policy, cl=None):
    """Stationary expectation of 4 x'QWQ x + 4 x'Q M3 under the policy."""
    cl = _moments_for(sys, moments, policy) if cl is None else cl
    Q, W = cost.Q, moments.W
    second = cl.Sigma + np.outer(cl.xbar, cl.xbar)
    return float(4.0 * np.trace(Q @ W @ Q @ second) + 4.0 * cl.xbar @ Q @ moments.M3)


def q_params(sys, cost, moments, policy, mu, cl=None, vp=None):
    """Closed-form action-value parameters (Upsilon blocks, p, q, z2)."""
    lp = lagrangian_params(cost, moments, mu)
    cl = _moments_for(sys, moments, policy) if cl is None else cl
    vp = value_params(sys, cost, moments, policy, mu, cl=cl) if vp is None else vp
    A, B = sys.A, sys.B
    P, g = vp.P, vp.g
    wbar, W = moments.wbar, moments.W
    Upsilon = np.block([
        [lp.Qmu + A.T @ P @ A, A.T @ P @ B],
        [B.T @ P @ A, cost.R + B.T @ P @ B],
    ])
    p = lp.S + A.T @ P @ wbar + 0.5 * A.T @ g
    q = B.T @ P @ wbar + 0.5 * B.T @ g
    L = lagrangian_value(sys, cost, moments, policy, mu, cl=cl)
    z2 = float(vp.z1 + g @ wbar + wbar @ P @ wbar + np.trace(P @ W) - L - mu * lp.bar_iota)
    return QParams(Upsilon=0.5 * (Upsilon + Upsilon.T), p=p, q=q, z2=z2)


def stationary_weight(cl):
    """Phi = second moment of [x; -1] under the stationary law; always PD."""
    n = cl.xbar.shape[0]
    Phi = np.empty((n + 1, n + 1))
    Phi[:n, :n] = cl.Sigma + np.outer(cl.xbar, cl.xbar)
    Phi[:n, n] = -cl.xbar
    Phi[n, :n] = -cl.xbar
    Phi[n, n] = 1.0
    return Phi


def exact_gradient(sys, cost, moments, policy, mu, cl=None, qp=None):
    """Exact gradient of the Lagrangian over X = [K, b]: grad = 2 [E, G] Phi.

    E = Upsilon22 K - Upsilon21 and G = Upsilon22 b + q; both vanish exactly
    at a stationary policy.
    """
    cl = _moments_for(sys, moments, policy) if cl is None else cl
    qp = q_params(sys, cost, moments, policy, mu, cl=cl) if qp is None else qp
    n, m = sys.n, sys.m
    U22 = qp.Upsilon[n:, n:]
    U21 = qp.Upsilon[n:, :n]
    E = U22 @ policy.K - U21
    G = U22 @ policy.b + qp.q
    H = np.hstack([E, G[:, None]])
    Phi = stationary_weight(cl)
    return GradientParts(E=E, G=G, H=H, Phi=Phi, grad=2.0 * H @ Phi)


def fd_gradient(sys, cost, moments, policy, mu, h=FD_STEP):
    """Central finite differences of lagrangian_value over X = [K, b]."""
    X = policy.as_matrix()
    grad = np.zeros_like(X)
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            Xp, Xm = X.copy(), X.copy()
            Xp[i, j] += h
            Xm[i, j] -= h
            Lp = lagrangian_value(sys, cost, moments, Policy.from_matrix(Xp, policy.sigma), mu)
            Lm = lagrangian_value(sys, cost, moments, Policy.from_matrix(Xm, policy.sigma), mu)
            grad[i, j] = (Lp - Lm) / (2.0 * h)
    return grad


def _try_lagrangian(sys, cost, moments, policy, mu):
    """Lagrangian value of a candidate, or +inf when outside the stable region."""
    if not np.all(np.isfinite(policy.as_matrix())):
        return np.inf
    if spectral_radius(policy.closed_loop(sys)) >= 1.0 - STABILITY_MARGIN:
        return np.inf
    try:
        val = lagrangian_value(sys, cost, moments, policy, mu)
    except (NumericError, InstabilityError):
        return np.inf
    return val if np.isfinite(val) else np.inf


def _pi_polish(sys, cost, moments, policy, mu, max_pi=100):
    """Exact inner optimum for fixed mu via policy iteration plus a b-solve.

    The K-stationarity condition E = (R + B'PB)K - B'PA = 0 does not involve
    b, so K is driven to its fixed point by policy iteration (each pass
    re-solves the Lyapunov equation and re-optimizes the gain), which keeps
    iterates stabilizing from a stabilizing start. With K fixed, L is
    quadratic in b, so the b-stationarity G(b) = 0 is one linear solve.
    """
    lp = lagrangian_params(cost, moments, mu)
    A, B, R = sys.A, sys.B, cost.R
    K = policy.K
    for _ in range(max_pi):
        F = A - B @ K
        P = solve_discrete_lyapunov(F, lp.Qmu + K.T @ R @ K)
        K_new = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        drift = np.linalg.norm(K_new - K, "fro")
        K = K_new
        if drift <= 1e-14 * (1.0 + np.linalg.norm(K, "fro")):
            break
    F = A - B @ K
    if spectral_radius(F) >= 1.0:
        raise NumericError("policy iteration left the stable region")
    P = solve_discrete_lyapunov(F, lp.Qmu + K.T @ R @ K)
    U22 = R + B.T @ P @ B
    IFinvT = np.linalg.inv(np.eye(sys.n) - F.T)
    # G(b) = U22 b + q(b) is affine in b; solve G(b) = 0 directly.
    Mb = U22 + B.T @ IFinvT @ (F.T @ P @ B - K.T @ R)
    v = B.T @ P @ moments.wbar + B.T @ IFinvT @ (lp.S + F.T @ P @ moments.wbar)
    b = -np.linalg.solve(Mb, v)
    return Policy(K=K, b=b, sigma=policy.sigma)


def _solve_inner(sys, cost, moments, policy, mu, tol=INNER_TOL, max_iter=INNER_MAX_ITER):
    """Minimize L(X, mu) over X for fixed mu, from a stabilizing start.

    Gradient descent with backtracking and step growth does the bulk of the
    travel; once the gradient has dropped well below its starting size (or
    the line search stalls) the exact policy-iteration polish finishes the
    job, pushing the stationarity residual to solver precision.
    """
    L = _try_lagrangian(sys, cost, moments, policy, mu)
    if not np.isfinite(L):
        raise InstabilityError("inner solve requires a stabilizing initial policy")
    step = GD_STEP0
    iters = 0
    polishes = 0
    polish_at = None
    while iters < max_iter:
        iters += 1
        gp = exact_gradient(sys, cost, moments, policy, mu)
        grad_norm = float(np.linalg.norm(gp.grad, "fro"))
        if polish_at is None:
            polish_at = max(POLISH_FLOOR, POLISH_RELATIVE * grad_norm)
        if grad_norm < tol:
            break
        stalled = False
        if grad_norm >= polish_at:
            X = policy.as_matrix()
            accepted = False
            while step > 1e-18:
                cand = Policy.from_matrix(X - step * gp.grad, policy.sigma)
                Lc = _try_lagrangian(sys, cost, moments, cand, mu)
                if Lc <= L - ARMIJO_C1 * step * grad_norm**2:
                    policy, L = cand, Lc
                    step *= GD_GROWTH
                    accepted = True
                    break
                step *= 0.5
            stalled = not accepted
            if accepted:
                continue
        if polishes >= 3:
            break
        polishes += 1
        try:
            cand = _pi_polish(sys, cost, moments, policy, mu)
        except (NumericError, InstabilityError):
            break
        Lc = _try_lagrangian(sys, cost, moments, cand, mu)
        if not np.isfinite(Lc):
            break
        policy, L = cand, Lc
        step = GD_STEP0
        if stalled and polishes > 1:
            break
    gp = exact_gradient(sys, cost, moments, policy, mu)
    return policy, L, float(np.linalg.norm(gp.grad, "fro")), iters


def solve_reference(
    sys,
    cost,
    moments,
    policy0,
    tol_inner=INNER_TOL,
    tol_outer=OUTER_TOL,
    feas_tol=FEAS_TOL,
    mu_step0=1e-2,
    max_outer=OUTER_MAX_EVALS,
):
    """Model-based primal-dual solve of max_mu min_X L(X, mu).

    The dual function is concave in mu with derivative J_c(X_mu) - bar_iota,
    which is monotone decreasing; after an unconstrained check the outer loop
    brackets the root by doubling and closes in by bisection, keeping the
    complementary-slackness and feasibility residuals inside tolerance.
    Returns the solution with a KKT certificate.
    """
    bar_iota = bar_iota_value(cost, moments)
    inner_total = 0
    evals = 0

    def dual_eval(mu, start):
        nonlocal inner_total, evals
        pol, L, gnorm, iters = _solve_inner(sys, cost, moments, start, mu, tol=tol_inner)
        inner_total += iters
        evals += 1
        Jc = constraint_value(sys, cost, moments, pol)
        return pol, L, gnorm, Jc - bar_iota

    def finish(pol, mu, L, gnorm, phi, converged, message):
        Jc = phi + bar_iota
        J = lagrangian_value(sys, cost, moments, pol, 0.0)
        cert = Certificate(
            grad_norm=gnorm,
            comp_slack=abs(mu * phi),
            feasibility=max(0.0, phi),
            L=L,
            J=J,
            Jc=Jc,
            bar_iota=bar_iota,
            inner_iters=inner_total,
            outer_evals=evals,
            converged=converged,
            message=message,
        )
        return ReferenceSolution(policy=pol, mu=mu, certificate=cert)

    pol0, L0, g0, phi0 = dual_eval(0.0, policy0)
    if phi0 <= feas_tol:
        return finish(pol0, 0.0, L0, g0, phi0, True, "constraint slack at the unconstrained optimum")

    # Bracket the dual root: phi(lo) > 0 >= phi(hi).
    lo, phi_lo, pol_lo = 0.0, phi0, pol0
    hi = mu_step0
    pol, L, gnorm, phi = dual_eval(hi, pol_lo)
    while phi > 0.0 and evals < max_outer:
        lo, phi_lo, pol_lo = hi, phi, pol
        hi *= 2.0
        pol, L, gnorm, phi = dual_eval(hi, pol)
    if phi > 0.0:
        return finish(pol, hi, L, gnorm, phi, False, "failed to bracket the dual root")

    best = (pol, hi, L, gnorm, phi)
    while evals < max_outer:
        if abs(best[1] * best[4]) < tol_outer and best[4] <= feas_tol:
            break
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        pol, L, gnorm, phi = dual_eval(mid, best[0])
        if phi > 0.0:
            lo, phi_lo = mid, phi
        else:
            hi = mid
            best = (pol, mid, L, gnorm, phi)
    pol, mu, L, gnorm, phi = best
    ok = gnorm < tol_inner * 100 and abs(mu * phi) < tol_outer and phi <= feas_tol
    msg = "KKT satisfied" if ok else "budget exhausted before KKT tolerances"
    return finish(pol, mu, L, gnorm, phi, ok, msg)
