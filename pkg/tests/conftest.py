"""Shared fixtures: the shipped configs, their moment summaries, a two-state
test rig, and closed-form Bellman residual helpers used by several suites."""

import os
import warnings
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from rclqr.cli import load_config
from rclqr.oracle import CostSpec, lagrangian_params, solve_reference
from rclqr.plant import (
    Gaussian,
    GaussianMixture,
    NoiseSpec,
    Policy,
    SystemModel,
    compute_moments,
)

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"

# Keep CLI runs inside tests quiet.
os.environ.setdefault("RCLQR_LOG", "error")


def quiet_moments(spec, Q, mc_samples, mc_seed):
    """compute_moments with the rank-deficient-W warning silenced; the
    benchmark noise is singular by construction (two channels, four states)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return compute_moments(spec, Q, mc_samples, mc_seed)


@pytest.fixture(scope="session")
def benchmark_cfg():
    return load_config(CONFIGS / "benchmark4x2.json")


@pytest.fixture(scope="session")
def benchmark_moments(benchmark_cfg):
    cfg = benchmark_cfg
    return quiet_moments(cfg.noise, cfg.cost.Q, cfg.mc_samples, cfg.mc_seed)


@pytest.fixture(scope="session")
def benchmark_reference(benchmark_cfg, benchmark_moments):
    cfg = benchmark_cfg
    return solve_reference(cfg.sys, cfg.cost, benchmark_moments, cfg.policy0)


@pytest.fixture(scope="session")
def scalar_cfg():
    return load_config(CONFIGS / "scalar1x1.json")


@pytest.fixture(scope="session")
def scalar_moments(scalar_cfg):
    cfg = scalar_cfg
    return quiet_moments(cfg.noise, cfg.cost.Q, cfg.mc_samples, cfg.mc_seed)


@pytest.fixture(scope="session")
def twostate():
    """Two-state, one-input rig with mixed Gaussian/mixture noise; small
    enough that every closed-form quantity is cheap and well conditioned."""
    sysm = SystemModel(A=[[0.9, 0.2], [0.0, 0.8]], B=[[0.0], [1.0]])
    cost = CostSpec(Q=np.diag([1.0, 0.5]), R=[[0.5]], iota=50.0)
    noise = NoiseSpec(
        channels=(
            (Gaussian(0.0, 0.04),),
            (GaussianMixture(((0.4, 0.3, 0.05), (0.6, -0.1, 0.02))),),
        )
    )
    moments = compute_moments(noise, cost.Q, 1_000_000, 0)
    policy = Policy(K=[[0.3, 0.5]], b=[0.1], sigma=0.4)
    return SimpleNamespace(sys=sysm, cost=cost, noise=noise, moments=moments, policy=policy)


def draw_stabilizing(rng, sysm, K0, sigma, spread=0.3, margin=0.02):
    """Rejection-sample a stabilizing policy around K0 with N(0,1) offset."""
    while True:
        K = K0 + spread * rng.standard_normal(K0.shape)
        b = rng.standard_normal(K0.shape[0])
        pol = Policy(K=K, b=b, sigma=sigma)
        if pol.is_stabilizing(sysm, margin=margin):
            return pol


def v_bellman_residual(sysm, cost, moments, pol, mu, vp, L, x):
    """V(x) - E_{u,w}[c_mu(x,u) - L + V(Ax+Bu+w)] with the expectation taken
    in closed form over u ~ N(-Kx+b, sigma^2 I) and w ~ noise."""
    lp = lagrangian_params(cost, moments, mu)
    ub = -pol.K @ x + pol.b
    m1 = sysm.A @ x + sysm.B @ ub + moments.wbar
    C = pol.sigma**2 * (sysm.B @ sysm.B.T) + moments.W
    ev = m1 @ vp.P @ m1 + np.trace(vp.P @ C) + vp.g @ m1 + vp.z1
    ec = (
        x @ lp.Qmu @ x
        + 2.0 * x @ lp.S
        + ub @ cost.R @ ub
        + pol.sigma**2 * np.trace(cost.R)
        - mu * lp.bar_iota
    )
    V = x @ vp.P @ x + vp.g @ x + vp.z1
    return V - (ec - L + ev)


def q_bellman_residual(sysm, cost, moments, pol, mu, vp, qp, L, x, u):
    """Q(x,u) - (c_mu(x,u) - L + E_w[V(Ax+Bu+w)]) in closed form."""
    lp = lagrangian_params(cost, moments, mu)
    m1 = sysm.A @ x + sysm.B @ u + moments.wbar
    ev = m1 @ vp.P @ m1 + np.trace(vp.P @ moments.W) + vp.g @ m1 + vp.z1
    c = x @ lp.Qmu @ x + 2.0 * x @ lp.S + u @ cost.R @ u - mu * lp.bar_iota
    v = np.concatenate([x, u])
    Qv = v @ qp.Upsilon @ v + 2.0 * qp.p @ x + 2.0 * qp.q @ u + qp.z2
    return Qv - (c - L + ev)
