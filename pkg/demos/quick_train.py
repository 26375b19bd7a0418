"""Train the scalar system with the library API and track policy error.

Runs the three-time-scale recursion for 200k steps (a few seconds) and
prints the distance to the closed-form optimum at a few checkpoints.
"""

from pathlib import Path

import numpy as np

from rclqr.cli import load_config
from rclqr.learner import train
from rclqr.oracle import solve_reference
from rclqr.plant import compute_moments


def main():
    cfg_path = Path(__file__).resolve().parents[1] / "configs" / "scalar1x1.json"
    cfg = load_config(cfg_path)
    moments = compute_moments(cfg.noise, cfg.cost.Q, cfg.mc_samples, cfg.mc_seed)

    ref = solve_reference(cfg.sys, cfg.cost, moments, cfg.policy0)
    target = np.hstack([ref.policy.K.ravel(), ref.policy.b])
    print("closed-form optimum: K* = %.5f  b* = %.5f  mu* = %.5f" % (ref.policy.K[0, 0], ref.policy.b[0], ref.mu))

    res = train(cfg.sys, cfg.cost, moments, cfg.noise, cfg.policy0, cfg.schedule, cfg.run)
    print("training: %s after %d steps (seed %d)" % (res.message, res.steps_done, cfg.run.seed))

    err = np.linalg.norm(np.hstack([res.K_hist.reshape(len(res.trace_t), -1), res.b_hist]) - target, axis=1)
    print("\n%10s  %12s  %10s  %10s" % ("t", "||X - X*||", "Jc_hat", "mu"))
    for i in np.linspace(0, len(res.trace_t) - 1, 6, dtype=int):
        print("%10d  %12.5f  %10.4f  %10.5f" % (res.trace_t[i], err[i], res.trace_Jc_hat[i], res.trace_mu[i]))

    print("\nfinal policy: K = %.5f  b = %.5f  (error %.5f, started at %.5f)" % (res.state.X.K[0, 0], res.state.X.b[0], err[-1], err[0]))


if __name__ == "__main__":
    main()
