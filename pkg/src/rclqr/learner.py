"""Model-free actor-critic training loop for the risk-constrained regulator.

One recursion drives four coupled estimates on separated time scales: a TD
critic for the action-value parameters, exponential trackers for the running
objective, constraint, and state-weight matrix, a projected policy-gradient
actor, and projected dual ascent on the multiplier. The hot loop is compiled
with numba; all stochastic draws are made up front from split generator
streams so a run's per-step randomness does not depend on its length.
"""

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .matkit import project_box, smat, svec, triu_order
from .oracle import bar_iota_value
from .plant import Policy, sample_noise

# Warm-up: actor and dual stay frozen this many steps so the critic can leave
# its zero initialization.
WARMUP_DEFAULT = 500
# Entrywise policy box; projection keeps the iterate sequence bounded.
BOX_BOUND_DEFAULT = 10.0
# State-norm level treated as divergence; the run aborts above it.
BLOWUP_DEFAULT = 1e8
RECORD_EVERY_DEFAULT = 100
# Stability safeguard: trip when ||x|| exceeds this multiple of its running
# median; each tripped step halves the actor step once more and retries it
# from the last policy seen while calm.
SAFEGUARD_MULT_DEFAULT = 20.0
SAFEGUARD_MAX_LEVEL = 10
# Gradient estimates are norm-clipped per parameter block (gain matrix and
# offset vector separately) before the actor applies them, so one step moves
# each block at most beta_t times its clip. Early direction estimates can be
# orders of magnitude too large while the critic still lags the plant; the
# offset clip sets the per-step travel budget toward the mean-cancelling
# offset, and a separate gain clip keeps the gain matrix on a short leash
# while the plant transits through strongly off-centered regimes.
GRAD_CLIP_DEFAULT = 10.0
# Streaming median: move the estimate by this fraction of its magnitude
# (floored) toward each new sample.
MEDIAN_STEP_FRAC = 0.01
MEDIAN_FLOOR = 1e-3

STATUS_OK = 0
STATUS_BLOWUP = 1
STATUS_NONFINITE = 2

_STATUS_MESSAGES = {
    STATUS_OK: "completed",
    STATUS_BLOWUP: "state norm exceeded the blow-up threshold",
    STATUS_NONFINITE: "non-finite value entered the recursion",
}


@dataclass(frozen=True)
class StepSchedule:
    """Polynomially decaying step sizes alpha >> beta >> gamma.

    alpha_t = a0/(1+t)^ea, beta_t = b0/(1+t)^eb, gamma_t = c0/(1+t)^ec.
    Exponent ordering 0.5 < ea < eb < ec <= 1 gives every sequence infinite
    sum, finite square sum, and beta/alpha -> 0, gamma/beta -> 0.
    """

    a0: float = 0.5
    b0: float = 0.1
    c0: float = 0.05
    ea: float = 0.55
    eb: float = 0.7
    ec: float = 0.95

    def __post_init__(self):
        if min(self.a0, self.b0, self.c0) <= 0.0:
            raise ValueError("step-size scales must be positive")
        if not (0.5 < self.ea < self.eb < self.ec <= 1.0):
            raise ValueError(
                "step-size exponents must satisfy 0.5 < ea < eb < ec <= 1, got "
                f"ea={self.ea}, eb={self.eb}, ec={self.ec}"
            )

    def alpha(self, t):
        return self.a0 / (1.0 + np.asarray(t, dtype=float)) ** self.ea

    def beta(self, t):
        return self.b0 / (1.0 + np.asarray(t, dtype=float)) ** self.eb

    def gamma(self, t):
        return self.c0 / (1.0 + np.asarray(t, dtype=float)) ** self.ec


def feature_dim(n, m):
    """Length of the quadratic feature vector: d(d+1)/2 + n + m, d = n+m."""
    d = n + m
    return d * (d + 1) // 2 + n + m


def feature(x, u):
    """Quadratic feature psi(x, u) = [svec([x;u][x;u]'); 2x; 2u].

    With critic parameters theta = [svec(Upsilon); p; q] the dot product
    psi'theta equals [x;u]'Upsilon[x;u] + 2p'x + 2q'u.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.concatenate([x, u])
    return np.concatenate([svec(np.outer(v, v)), 2.0 * x, 2.0 * u])


@dataclass
class CriticParams:
    """TD parameters in mean-centered coordinates, plus their normalizers.

    The critic fits the differential action value on features built from the
    deviation of [x; u] around its running mean vbar: theta lays out
    [svec(Upsilon_hat); p_tilde; q_tilde] for the model
    Q(x, u) = d'Upsilon d + 2 p_tilde'dx + 2 q_tilde'du with d = [x;u] - vbar.
    Centering is a reparameterization of the same quadratic function class
    (constants cancel in temporal differences), so Upsilon_hat estimates the
    same matrix as in raw coordinates while the features stay well
    conditioned when the state carries a large mean offset. The raw linear
    coefficients are recovered as p_hat = p_tilde - (Upsilon_hat vbar)_x and
    q_hat = q_tilde - (Upsilon_hat vbar)_u.
    """

    theta: np.ndarray
    n: int
    m: int
    # Running squared norms of the three feature blocks (quadratic, state,
    # input); the theta update is normalized per block so the small linear
    # features are not starved by the large quadratic ones.
    psi_norm2: np.ndarray = None
    # Running mean of [x; u] the features are centered on.
    vbar: np.ndarray = None

    def __post_init__(self):
        if self.psi_norm2 is None:
            self.psi_norm2 = np.ones(3)
        if self.vbar is None:
            self.vbar = np.zeros(self.n + self.m)

    @classmethod
    def zeros(cls, n, m):
        return cls(theta=np.zeros(feature_dim(n, m)), n=n, m=m)

    @property
    def svec_len(self):
        d = self.n + self.m
        return d * (d + 1) // 2

    @property
    def upsilon_hat(self):
        return smat(self.theta[: self.svec_len])

    @property
    def p_hat(self):
        shift = self.upsilon_hat @ self.vbar
        return self.theta[self.svec_len : self.svec_len + self.n] - shift[: self.n]

    @property
    def q_hat(self):
        shift = self.upsilon_hat @ self.vbar
        return self.theta[self.svec_len + self.n :] - shift[self.n :]


@dataclass
class Trackers:
    """Exponential averages: objective L_hat, state weight Phi_hat, risk Jc_hat."""

    L_hat: float
    Phi_hat: np.ndarray
    Jc_hat: float

    @classmethod
    def initial(cls, n):
        return cls(L_hat=0.0, Phi_hat=np.eye(n + 1), Jc_hat=0.0)


@dataclass
class LearnerState:
    """Everything the recursion carries from step t to t+1."""

    t: int
    X: Policy
    mu: float
    critic: CriticParams
    trackers: Trackers
    x: np.ndarray


def td_error(c, L_hat, psi_now, psi_next, theta):
    """delta = c - L_hat + (psi_next - psi_now)' theta."""
    return float(c - L_hat + (psi_next - psi_now) @ theta)


def constraint_sample(x, cost, moments):
    """Per-step risk observation o = 4 x'QWQ x + 4 x'Q M3.

    The running average of o tracks the stationary risk value; the constraint
    level is subtracted once, in the dual step.
    """
    x = np.asarray(x, dtype=float)
    Qx = cost.Q @ x
    return float(4.0 * Qx @ moments.W @ Qx + 4.0 * Qx @ moments.M3)


def critic_step(state, c, o, u, x_next, u_next, alpha, critic_gain=1.0):
    """One TD update of (L_hat, theta, Phi_hat, Jc_hat) at rate alpha.

    The feature center vbar first absorbs the current (x, u) at rate alpha;
    both transition ends are then featurized around the same updated center,
    so the constant the centering introduces cancels in the temporal
    difference. The TD error is formed from the incoming L_hat and theta,
    then every tracker moves. The theta step is normalized per feature block
    (quadratic, state, input), each by its own running squared norm floored
    by the current one, so no block overshoots and no block is starved.
    Non-finite inputs abort: they mean the simulation left the stable regime.
    """
    if not (np.isfinite(c) and np.isfinite(o)):
        raise FloatingPointError("non-finite stage observation in critic step")
    cr, tr = state.critic, state.trackers
    n = cr.n
    v_now = np.concatenate([state.x, u])
    dc = alpha * (v_now - cr.vbar)
    vbar = cr.vbar + dc
    # Transport the linear coefficients to the moved center so the
    # represented function is unchanged; otherwise center drift leaks a
    # persistent Upsilon-scaled bias into them.
    theta = cr.theta.copy()
    theta[cr.svec_len :] += cr.upsilon_hat @ dc
    psi_now = feature(state.x - vbar[:n], u - vbar[n:])
    psi_next = feature(x_next - vbar[:n], u_next - vbar[n:])
    delta = td_error(c, tr.L_hat, psi_now, psi_next, theta)
    if not np.isfinite(delta):
        raise FloatingPointError("non-finite TD error in critic step")
    z = np.concatenate([state.x, [-1.0]])
    nsv = cr.svec_len
    blocks = (slice(0, nsv), slice(nsv, nsv + cr.n), slice(nsv + cr.n, None))
    psi_norm2 = cr.psi_norm2.copy()
    for k, blk in enumerate(blocks):
        nblk = float(psi_now[blk] @ psi_now[blk])
        psi_norm2[k] = (1.0 - alpha) * psi_norm2[k] + alpha * nblk
        gain = critic_gain * alpha / max(psi_norm2[k], nblk, 1e-12)
        theta[blk] += gain * delta * psi_now[blk]
    state.critic = replace(cr, theta=theta, psi_norm2=psi_norm2, vbar=vbar)
    state.trackers = Trackers(
        L_hat=(1.0 - alpha) * tr.L_hat + alpha * c,
        Phi_hat=(1.0 - alpha) * tr.Phi_hat + alpha * np.outer(z, z),
        Jc_hat=(1.0 - alpha) * tr.Jc_hat + alpha * o,
    )
    return state


def gradient_estimate(critic, K, b, Phi_hat):
    """Actor direction H_hat @ Phi_hat, one half of the exact gradient at the
    critic fixed point: E_hat = Ups22 K - Ups21, G_hat = Ups22 b + q_hat."""
    n = critic.n
    Ups = critic.upsilon_hat
    U21 = Ups[n:, :n]
    U22 = Ups[n:, n:]
    E = U22 @ K - U21
    G = U22 @ b + critic.q_hat
    H = np.hstack([E, G[:, None]])
    return H @ Phi_hat


def actor_step(
    state,
    beta,
    box_bound=BOX_BOUND_DEFAULT,
    grad_clip=GRAD_CLIP_DEFAULT,
    gain_clip=None,
):
    """Projected policy-gradient step X <- Box[X - beta * H_hat Phi_hat].

    The gain and offset blocks of the direction are Frobenius-norm clipped
    separately before scaling by beta, so one step displaces the offset by
    at most beta * grad_clip and the gain by at most beta * gain_clip
    (defaulting to grad_clip); clipping rescales a block, not its direction.
    """
    if gain_clip is None:
        gain_clip = grad_clip
    K, b = state.X.K, state.X.b
    n = K.shape[1]
    direction = gradient_estimate(state.critic, K, b, state.trackers.Phi_hat)
    if not np.all(np.isfinite(direction)):
        raise FloatingPointError("non-finite actor direction")
    direction = direction.copy()
    for block, clip in ((direction[:, :n], gain_clip), (direction[:, n], grad_clip)):
        bnorm = np.linalg.norm(block)
        if bnorm > clip:
            block *= clip / bnorm
    Xmat = np.hstack([K, b[:, None]]) - beta * direction
    Xmat = project_box(Xmat, -box_bound, box_bound)
    state.X = Policy(K=Xmat[:, :-1], b=Xmat[:, -1], sigma=state.X.sigma)
    return state


def dual_step(mu, Jc_hat, gamma, bar_iota, mu_cap=np.inf):
    """Dual ascent projected onto [0, mu_cap].

    A finite cap keeps the multiplier from winding up while the policy is
    still deep in the infeasible region; it must exceed the optimal
    multiplier for the constrained optimum to stay a fixed point.
    """
    return min(mu_cap, max(0.0, mu + gamma * (Jc_hat - bar_iota)))


@dataclass(frozen=True)
class RunParams:
    """Loop-level knobs for one training run."""

    steps: int
    seed: int
    record_every: int = RECORD_EVERY_DEFAULT
    warmup: int = WARMUP_DEFAULT
    box_bound: float = BOX_BOUND_DEFAULT
    blowup_threshold: float = BLOWUP_DEFAULT
    mu0: float = 0.0
    freeze_policy: bool = False
    critic_gain: float = 1.0
    safeguard_mult: float = SAFEGUARD_MULT_DEFAULT
    grad_clip: float = GRAD_CLIP_DEFAULT
    gain_clip: float = None
    mu_cap: float = np.inf

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.record_every <= 0:
            raise ValueError("record_every must be positive")
        if self.mu0 < 0:
            raise ValueError("mu0 must be nonnegative")
        if self.critic_gain <= 0:
            raise ValueError("critic_gain must be positive")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if self.gain_clip is None:
            object.__setattr__(self, "gain_clip", self.grad_clip)
        if self.gain_clip <= 0:
            raise ValueError("gain_clip must be positive")
        if self.mu_cap <= 0 or self.mu0 > self.mu_cap:
            raise ValueError("need 0 < mu_cap and mu0 <= mu_cap")


@dataclass
class TrainingResult:
    """Final state, recorded trace arrays, and policy snapshots."""

    status: int
    message: str
    steps_done: int
    state: LearnerState
    trace_t: np.ndarray
    trace_L_hat: np.ndarray
    trace_Jc_hat: np.ndarray
    trace_mu: np.ndarray
    trace_x_norm: np.ndarray
    trace_level: np.ndarray
    K_hist: np.ndarray
    b_hist: np.ndarray
    theta_hist: np.ndarray
    # Feature centers matching theta_hist rows; a recorded theta is only
    # interpretable together with the center it was fit around.
    vbar_hist: np.ndarray
    Phi_hist: np.ndarray

    @property
    def ok(self):
        return self.status == STATUS_OK

    @property
    def rows(self):
        return self.trace_t.shape[0]


@njit(cache=True)
def _train_loop(
    A,
    B,
    Q,
    R,
    QWQ4,
    QM34,
    bar_iota,
    K,
    b,
    sigma,
    mu,
    theta,
    L_hat,
    Phi,
    Jc_hat,
    psi_norm2,
    vbar,
    x,
    w_draws,
    eta_draws,
    tri_r,
    tri_c,
    tri_w,
    a0,
    ea,
    b0,
    eb,
    c0,
    ec,
    steps,
    warmup,
    box_bound,
    blowup,
    freeze_policy,
    critic_gain,
    safeguard_mult,
    grad_clip,
    gain_clip,
    mu_cap,
    record_every,
    out_t,
    out_L,
    out_Jc,
    out_mu,
    out_xn,
    out_level,
    out_K,
    out_b,
    out_theta,
    out_vbar,
    out_Phi,
):
    n = A.shape[0]
    m = B.shape[1]
    nsv = tri_r.shape[0]
    dim = nsv + n + m

    med = 0.0
    level = 0
    row = 0
    K_safe = K.copy()
    b_safe = b.copy()

    # Action at step 0 follows the initial policy.
    u = -K @ x + b + sigma * eta_draws[0]
    psi = np.zeros(dim)
    psi_next = np.zeros(dim)
    dv = np.zeros(n + m)
    dv_next = np.zeros(n + m)
    dc = np.zeros(n + m)
    shift = np.zeros(n + m)

    status = STATUS_OK
    t_done = 0
    for t in range(steps):
        tt = 1.0 + t
        alpha = a0 / tt**ea
        beta = b0 / tt**eb
        gamma = c0 / tt**ec

        x_next = A @ x + B @ u + w_draws[t]
        xn = np.sqrt(np.sum(x_next * x_next))
        if not np.isfinite(xn) or xn > blowup:
            status = STATUS_BLOWUP if np.isfinite(xn) else STATUS_NONFINITE
            break

        # Stage observations at (x_t, u_t); mu enters only through the
        # risk-weighted term, so cost-side constants suffice.
        o = x @ QWQ4 @ x + QM34 @ x
        c = x @ Q @ x + u @ R @ u + mu * (o - bar_iota)

        # Streaming median of ||x||; trips the safeguard on a large spike.
        if xn > med:
            med += MEDIAN_STEP_FRAC * max(med, MEDIAN_FLOOR)
        elif xn < med:
            med -= MEDIAN_STEP_FRAC * max(med, MEDIAN_FLOOR)
        tripped = xn > safeguard_mult * max(med, MEDIAN_FLOOR)

        # Actor and dual read only step-t quantities, so they run before the
        # trackers move; both stay frozen through warm-up.
        if (not freeze_policy) and t >= warmup:
            if tripped:
                if level < SAFEGUARD_MAX_LEVEL:
                    level += 1
                # Retry from the last calm policy with the halved step.
                for i in range(m):
                    for j in range(n):
                        K[i, j] = K_safe[i, j]
                    b[i] = b_safe[i]
            else:
                if level > 0:
                    level -= 1
                if level == 0:
                    for i in range(m):
                        for j in range(n):
                            K_safe[i, j] = K[i, j]
                        b_safe[i] = b[i]
            beta_eff = beta * 2.0 ** (-float(level))

            Ups = np.zeros((n + m, n + m))
            for i in range(nsv):
                val = theta[i] / tri_w[i]
                Ups[tri_r[i], tri_c[i]] = val
                Ups[tri_c[i], tri_r[i]] = val
            # Raw input-linear coefficient recovered from the centered fit.
            ush = Ups @ vbar
            qh = theta[nsv + n :] - ush[n:]
            U21 = np.ascontiguousarray(Ups[n:, :n])
            U22 = np.ascontiguousarray(Ups[n:, n:])
            E = U22 @ K - U21
            G = U22 @ b + qh
            H = np.concatenate((E, G.reshape(m, 1)), axis=1)
            D = H @ Phi
            dnK = 0.0
            dnb = 0.0
            for i in range(m):
                for j in range(n):
                    dnK += D[i, j] * D[i, j]
                dnb += D[i, n] * D[i, n]
            dnK = np.sqrt(dnK)
            dnb = np.sqrt(dnb)
            sK = 1.0 if dnK <= gain_clip else gain_clip / dnK
            sb = 1.0 if dnb <= grad_clip else grad_clip / dnb
            for i in range(m):
                for j in range(n):
                    Kij = K[i, j] - sK * beta_eff * D[i, j]
                    K[i, j] = min(max(Kij, -box_bound), box_bound)
                bi = b[i] - sb * beta_eff * D[i, n]
                b[i] = min(max(bi, -box_bound), box_bound)
            mu = min(mu_cap, max(0.0, mu + gamma * (Jc_hat - bar_iota)))

        u_next = -K @ x_next + b + sigma * eta_draws[t + 1]

        # Centered features: vbar absorbs (x, u), the linear coefficients are
        # transported to the moved center so the represented function is
        # unchanged (otherwise center drift leaks an Upsilon-scaled bias into
        # them), and both transition ends are featurized around the same
        # center so its constant cancels in the temporal difference.
        for i in range(n):
            dc[i] = alpha * (x[i] - vbar[i])
        for i in range(m):
            dc[n + i] = alpha * (u[i] - vbar[n + i])
        for i in range(n + m):
            vbar[i] += dc[i]
            shift[i] = 0.0
        for i in range(nsv):
            val = theta[i] / tri_w[i]
            ri = tri_r[i]
            ci = tri_c[i]
            shift[ri] += val * dc[ci]
            if ri != ci:
                shift[ci] += val * dc[ri]
        for i in range(n + m):
            theta[nsv + i] += shift[i]
        for i in range(n):
            dv[i] = x[i] - vbar[i]
            dv_next[i] = x_next[i] - vbar[i]
        for i in range(m):
            dv[n + i] = u[i] - vbar[n + i]
            dv_next[n + i] = u_next[i] - vbar[n + i]
        for i in range(nsv):
            psi[i] = tri_w[i] * dv[tri_r[i]] * dv[tri_c[i]]
            psi_next[i] = tri_w[i] * dv_next[tri_r[i]] * dv_next[tri_c[i]]
        for i in range(n + m):
            psi[nsv + i] = 2.0 * dv[i]
            psi_next[nsv + i] = 2.0 * dv_next[i]

        delta = c - L_hat
        for i in range(dim):
            delta += (psi_next[i] - psi[i]) * theta[i]
        if not np.isfinite(delta):
            status = STATUS_NONFINITE
            break

        L_hat = (1.0 - alpha) * L_hat + alpha * c
        Jc_hat = (1.0 - alpha) * Jc_hat + alpha * o
        for i in range(n):
            for j in range(n):
                Phi[i, j] = (1.0 - alpha) * Phi[i, j] + alpha * x[i] * x[j]
            Phi[i, n] = (1.0 - alpha) * Phi[i, n] - alpha * x[i]
            Phi[n, i] = Phi[i, n]
        Phi[n, n] = (1.0 - alpha) * Phi[n, n] + alpha

        # Per-block normalized theta update: quadratic, state, input features.
        lo = 0
        for k in range(3):
            hi = nsv if k == 0 else (nsv + n if k == 1 else dim)
            nblk = 0.0
            for i in range(lo, hi):
                nblk += psi[i] * psi[i]
            psi_norm2[k] = (1.0 - alpha) * psi_norm2[k] + alpha * nblk
            gain = critic_gain * alpha / max(psi_norm2[k], nblk, 1e-12)
            for i in range(lo, hi):
                theta[i] += gain * delta * psi[i]
            lo = hi

        x = x_next
        u = u_next
        t_done = t + 1

        if t_done % record_every == 0:
            out_t[row] = t_done
            out_L[row] = L_hat
            out_Jc[row] = Jc_hat
            out_mu[row] = mu
            out_xn[row] = xn
            out_level[row] = level
            out_K[row] = K
            out_b[row] = b
            out_theta[row] = theta
            out_vbar[row] = vbar
            out_Phi[row] = Phi
            row += 1

    return status, t_done, row, mu, L_hat, Jc_hat, psi_norm2, vbar, x


def train(sys, cost, moments, noise, policy0, schedule, params, x0=None):
    """Run the actor-critic recursion and return the result with its trace.

    Per iteration: execute u_t, observe x_{t+1} and the stage observations,
    take the actor and dual steps from step-t estimates (after warm-up), draw
    u_{t+1} from the updated policy, then apply the TD and tracker updates.
    Noise and exploration draws come from two generator streams split off the
    seed and are made up front, so identical (config, seed, steps) runs are
    bit-identical.
    """
    n, m = sys.n, sys.m
    if policy0.K.shape != (m, n) or policy0.b.shape != (m,):
        raise ValueError("initial policy dimensions do not match the system")
    if not policy0.is_stabilizing(sys):
        raise ValueError("initial policy must be stabilizing")
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)

    bar_iota = bar_iota_value(cost, moments)
    QWQ4 = 4.0 * cost.Q @ moments.W @ cost.Q
    QM34 = 4.0 * cost.Q @ moments.M3

    state = LearnerState(
        t=0,
        X=Policy(
            K=policy0.K.copy(), b=policy0.b.copy(), sigma=policy0.sigma
        ),
        mu=params.mu0,
        critic=CriticParams.zeros(n, m),
        trackers=Trackers.initial(n),
        x=x0.copy(),
    )

    T = params.steps
    rows = T // params.record_every
    dim = feature_dim(n, m)
    out_t = np.zeros(rows, dtype=np.int64)
    out_L = np.zeros(rows)
    out_Jc = np.zeros(rows)
    out_mu = np.zeros(rows)
    out_xn = np.zeros(rows)
    out_level = np.zeros(rows, dtype=np.int64)
    out_K = np.zeros((rows, m, n))
    out_b = np.zeros((rows, m))
    out_theta = np.zeros((rows, dim))
    out_vbar = np.zeros((rows, n + m))
    out_Phi = np.zeros((rows, n + 1, n + 1))

    if T == 0:
        return TrainingResult(
            status=STATUS_OK,
            message=_STATUS_MESSAGES[STATUS_OK],
            steps_done=0,
            state=state,
            trace_t=out_t,
            trace_L_hat=out_L,
            trace_Jc_hat=out_Jc,
            trace_mu=out_mu,
            trace_x_norm=out_xn,
            trace_level=out_level,
            K_hist=out_K,
            b_hist=out_b,
            theta_hist=out_theta,
            vbar_hist=out_vbar,
            Phi_hist=out_Phi,
        )

    # Stream 0: exploration; stream 1: plant noise. Splitting keeps draw t
    # identical across runs of different lengths with the same seed.
    rng_eta = np.random.default_rng([params.seed, 0])
    rng_w = np.random.default_rng([params.seed, 1])
    eta_draws = rng_eta.standard_normal((T + 1, m))
    w_draws = sample_noise(noise, rng_w, T)

    tri_r, tri_c, tri_w = triu_order(n + m)

    status, t_done, row, mu, L_hat, Jc_hat, psi_norm2, vbar, x = _train_loop(
        sys.A,
        sys.B,
        cost.Q,
        cost.R,
        QWQ4,
        QM34,
        bar_iota,
        state.X.K,
        state.X.b,
        float(policy0.sigma),
        float(params.mu0),
        state.critic.theta,
        0.0,
        state.trackers.Phi_hat,
        0.0,
        state.critic.psi_norm2,
        state.critic.vbar,
        state.x,
        w_draws,
        eta_draws,
        tri_r.astype(np.int64),
        tri_c.astype(np.int64),
        tri_w,
        schedule.a0,
        schedule.ea,
        schedule.b0,
        schedule.eb,
        schedule.c0,
        schedule.ec,
        T,
        params.warmup,
        params.box_bound,
        params.blowup_threshold,
        params.freeze_policy,
        params.critic_gain,
        params.safeguard_mult,
        params.grad_clip,
        params.gain_clip,
        params.mu_cap,
        params.record_every,
        out_t,
        out_L,
        out_Jc,
        out_mu,
        out_xn,
        out_level,
        out_K,
        out_b,
        out_theta,
        out_vbar,
        out_Phi,
    )

    state.t = t_done
    state.mu = mu
    state.trackers = Trackers(L_hat=L_hat, Phi_hat=state.trackers.Phi_hat, Jc_hat=Jc_hat)
    state.critic = replace(state.critic, psi_norm2=psi_norm2, vbar=vbar)
    state.x = x

    return TrainingResult(
        status=status,
        message=_STATUS_MESSAGES[status],
        steps_done=t_done,
        state=state,
        trace_t=out_t[:row],
        trace_L_hat=out_L[:row],
        trace_Jc_hat=out_Jc[:row],
        trace_mu=out_mu[:row],
        trace_x_norm=out_xn[:row],
        trace_level=out_level[:row],
        K_hist=out_K[:row],
        b_hist=out_b[:row],
        theta_hist=out_theta[:row],
        vbar_hist=out_vbar[:row],
        Phi_hist=out_Phi[:row],
    )
