"""Stochastic LTI plant: noise specification, moments, and simulation.

The plant is x_{t+1} = A x_t + B u_t + w_t with i.i.d. noise w_t built from
independent scalar channels pushed through an optional linear mapping. First
and second moments of w are computed analytically; the third and fourth
moments entering the risk constraint (M3 and m4) are estimated by seeded
Monte Carlo with reported standard errors.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .matkit import InstabilityError, ensure_symmetric, solve_discrete_lyapunov, spectral_radius

# Monte Carlo sample floors and defaults for M3/m4 estimation.
MC_MIN_SAMPLES = 10_000
MC_DEFAULT_SAMPLES = 1_000_000
# Eigenvalue floor below which the state-noise covariance counts as singular.
W_SINGULAR_FLOOR = 1e-9


@dataclass(frozen=True)
class Gaussian:
    """Scalar normal component with the second slot a variance, not a std."""

    mean: float
    var: float

    def __post_init__(self):
        if self.var <= 0:
            raise ValueError(f"Gaussian variance must be positive, got {self.var}")

    def moments(self):
        return self.mean, self.var

    def sample(self, rng, size):
        return rng.normal(self.mean, np.sqrt(self.var), size)


@dataclass(frozen=True)
class GaussianMixture:
    """Finite normal mixture; components given as (weight, mean, var) triples."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), float(m), float(v)) for w, m, v in self.components)
        object.__setattr__(self, "components", comps)
        weights = np.array([c[0] for c in comps])
        if np.any(weights <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1, got {weights.sum()!r}")
        if any(c[2] <= 0 for c in comps):
            raise ValueError("mixture variances must be positive")

    def moments(self):
        w = np.array([c[0] for c in self.components])
        mu = np.array([c[1] for c in self.components])
        var = np.array([c[2] for c in self.components])
        mean = float(w @ mu)
        second = float(w @ (var + mu**2))
        return mean, second - mean**2

    def sample(self, rng, size):
        w = np.array([c[0] for c in self.components])
        mu = np.array([c[1] for c in self.components])
        sd = np.sqrt([c[2] for c in self.components])
        idx = rng.choice(len(self.components), size=size, p=w)
        return rng.normal(mu[idx], sd[idx])


@dataclass(frozen=True)
class Uniform:
    """Scalar uniform component on [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"Uniform needs lo < hi, got [{self.lo}, {self.hi}]")

    def moments(self):
        return 0.5 * (self.lo + self.hi), (self.hi - self.lo) ** 2 / 12.0

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)


def component_from_dict(d):
    """Build a noise component from its config dictionary form."""
    kind = d.get("type")
    if kind == "gaussian":
        return Gaussian(float(d["mean"]), float(d["var"]))
    if kind == "mixture":
        return GaussianMixture(tuple(tuple(c) for c in d["components"]))
    if kind == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    raise ValueError(f"unknown noise component type {kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """Independent scalar channels (each a sum of components) times a mapping.

    w = mapping @ v where v stacks the channel values; mapping defaults to
    the identity, in which case the state dimension equals the channel count.
    """

    channels: tuple
    mapping: np.ndarray = None

    def __post_init__(self):
        chans = tuple(tuple(ch) if isinstance(ch, (list, tuple)) else (ch,) for ch in self.channels)
        if not chans or any(len(ch) == 0 for ch in chans):
            raise ValueError("noise spec needs at least one component per channel")
        object.__setattr__(self, "channels", chans)
        if self.mapping is not None:
            mapping = np.atleast_2d(np.asarray(self.mapping, dtype=float))
            if mapping.shape[1] != len(chans):
                raise ValueError(
                    f"mapping has {mapping.shape[1]} columns but spec has {len(chans)} channels"
                )
            object.__setattr__(self, "mapping", mapping)

    @property
    def k(self):
        return len(self.channels)

    @property
    def n(self):
        return self.k if self.mapping is None else self.mapping.shape[0]

    def channel_means(self):
        return np.array([sum(c.moments()[0] for c in ch) for ch in self.channels])

    def channel_vars(self):
        # Components within a channel are independent, so variances add.
        return np.array([sum(c.moments()[1] for c in ch) for ch in self.channels])

    def sample_channels(self, rng, size):
        v = np.zeros((size, self.k))
        for j, ch in enumerate(self.channels):
            for comp in ch:
                v[:, j] += comp.sample(rng, size)
        return v


@dataclass(frozen=True)
class NoiseMoments:
    """Moment summary of the state noise w for a given penalty matrix Q.

    wbar and W are analytic; M3 = E[(w-wbar)(w-wbar)' Q (w-wbar)] and
    m4 = E[((w-wbar)' Q (w-wbar) - tr(WQ))^2] are Monte Carlo estimates with
    standard errors M3_se and m4_se.
    """

    wbar: np.ndarray
    W: np.ndarray
    M3: np.ndarray
    m4: float
    M3_se: np.ndarray
    m4_se: float
    mc_samples: int

    def trWQ(self, Q):
        return float(np.trace(self.W @ Q))


def sample_noise(spec, rng, size=None):
    """Draw w ~ spec; one n-vector when size is None, else a (size, n) batch."""
    batch = 1 if size is None else int(size)
    v = spec.sample_channels(rng, batch)
    w = v if spec.mapping is None else v @ spec.mapping.T
    return w[0] if size is None else w


def compute_moments(spec, Q, mc_samples=MC_DEFAULT_SAMPLES, mc_seed=0):
    """Analytic wbar/W plus Monte Carlo M3/m4 for the noise spec under Q.

    The Monte Carlo stream is seeded (mc_seed) so repeated calls are
    reproducible; mc_samples below MC_MIN_SAMPLES is rejected because the
    m4 error would propagate into the constraint level.
    """
    if mc_samples < MC_MIN_SAMPLES:
        raise ValueError(f"mc_samples must be at least {MC_MIN_SAMPLES}, got {mc_samples}")
    Q = ensure_symmetric(Q, name="Q")
    n = spec.n
    if Q.shape[0] != n:
        raise ValueError(f"Q is {Q.shape[0]}x{Q.shape[0]} but noise dimension is {n}")
    means = spec.channel_means()
    covs = np.diag(spec.channel_vars())
    if spec.mapping is None:
        wbar, W = means, covs
    else:
        wbar = spec.mapping @ means
        W = spec.mapping @ covs @ spec.mapping.T
    W = 0.5 * (W + W.T)
    floor = np.linalg.eigvalsh(W).min()
    if floor < W_SINGULAR_FLOOR:
        warnings.warn(
            f"state-noise covariance W is singular to tolerance (min eig {floor:.3e}); "
            "exploration noise must supply the missing excitation",
            stacklevel=2,
        )

    rng = np.random.default_rng(mc_seed)
    trWQ = float(np.trace(W @ Q))
    vc = sample_noise(spec, rng, size=mc_samples) - wbar
    quad = np.einsum("ij,jk,ik->i", vc, Q, vc)
    m3_samples = vc * quad[:, None]
    M3 = m3_samples.mean(axis=0)
    M3_se = m3_samples.std(axis=0, ddof=1) / np.sqrt(mc_samples)
    m4_samples = (quad - trWQ) ** 2
    m4 = float(m4_samples.mean())
    m4_se = float(m4_samples.std(ddof=1) / np.sqrt(mc_samples))
    return NoiseMoments(wbar=wbar, W=W, M3=M3, m4=m4, M3_se=M3_se, m4_se=m4_se, mc_samples=int(mc_samples))


@dataclass(frozen=True)
class SystemModel:
    """Linear plant x' = A x + B u + w."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows but A is {A.shape[0]}x{A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class Policy:
    """Affine-Gaussian policy u = -K x + b + sigma * eta, eta ~ N(0, I)."""

    K: np.ndarray
    b: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if b.shape[0] != K.shape[0]:
            raise ValueError(f"b has length {b.shape[0]} but K has {K.shape[0]} rows")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "b", b)

    def closed_loop(self, sys):
        return sys.A - sys.B @ self.K

    def is_stabilizing(self, sys, margin=0.0):
        return spectral_radius(self.closed_loop(sys)) < 1.0 - margin

    def as_matrix(self):
        """Stack [K, b] as the m x (n+1) decision variable."""
        return np.hstack([self.K, self.b[:, None]])

    @staticmethod
    def from_matrix(X, sigma):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return Policy(K=X[:, :-1], b=X[:, -1], sigma=sigma)


@dataclass(frozen=True)
class ClosedLoopMoments:
    """Stationary mean and covariance of the closed loop under a policy."""

    xbar: np.ndarray
    Sigma: np.ndarray
    PsiZeta: np.ndarray
    zetabar: np.ndarray


def step(sys, x, policy, rng, noise=None):
    """One plant transition under the policy; returns (u, x_next).

    Draw order is fixed: the exploration noise eta first, then the process
    noise w (zero when no spec is given), so a seeded rng reproduces
    trajectories bit for bit.
    """
    x = np.asarray(x, dtype=float)
    eta = rng.standard_normal(sys.m)
    u = -policy.K @ x + policy.b + policy.sigma * eta
    w = np.zeros(sys.n) if noise is None else sample_noise(noise, rng)
    return u, sys.A @ x + sys.B @ u + w


def closed_loop_moments(sys, moments, policy):
    """Stationary moments: xbar = (I-F)^-1 (B b + wbar), Sigma the Lyapunov fix."""
    F = policy.closed_loop(sys)
    r = spectral_radius(F)
    if r >= 1.0:
        raise InstabilityError(f"policy is not stabilizing: rho(A-BK) = {r:.6f}")
    xbar = np.linalg.solve(np.eye(sys.n) - F, sys.B @ policy.b + moments.wbar)
    Psi = moments.W + policy.sigma**2 * (sys.B @ sys.B.T)
    # Sigma = Psi + F Sigma F' is the P = C + F'PF equation with F transposed.
    Sigma = solve_discrete_lyapunov(F.T, Psi)
    return ClosedLoopMoments(xbar=xbar, Sigma=Sigma, PsiZeta=Psi, zetabar=moments.wbar.copy())


@njit(cache=True)
def _sim_loop(A, B, K, b, sigma, eta, wseq, x0):
    T = eta.shape[0]
    xs = np.empty((T, A.shape[0]))
    us = np.empty((T, B.shape[1]))
    x = x0.copy()
    for t in range(T):
        u = -K @ x + b + sigma * eta[t]
        xs[t] = x
        us[t] = u
        x = A @ x + B @ u + wseq[t]
    return xs, us, x


def simulate(sys, policy, noise, steps, seed=0, x0=None):
    """Roll the closed loop for `steps` transitions with precomputed noise.

    Returns (xs, us, x_final) where row t holds the state and input at time t.
    All randomness comes from one seeded generator (eta batch drawn before
    the w batch), so trajectories are reproducible bit for bit.
    """
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal((steps, sys.m))
    if noise is None:
        wseq = np.zeros((steps, sys.n))
    else:
        wseq = np.ascontiguousarray(sample_noise(noise, rng, size=steps))
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
    return _sim_loop(sys.A, sys.B, policy.K, policy.b, float(policy.sigma), eta, wseq, x0)
