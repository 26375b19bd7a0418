"""Command-line surface: config loading, experiments, traces, and plots.

Subcommands: train (run the actor-critic recursion and write a CSV trace),
oracle (solve the reference problem from the model), evaluate (score a saved
policy against the oracle and a long simulation), moments (report the noise
moment summary). Configs are JSON trees with matrices as row-major nested
arrays; shipped examples live in configs/. Exit codes: 0 success, 2 config
error, 3 instability abort, 4 solver failure.
"""

import argparse
import hashlib
import json
import logging
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .learner import RunParams, StepSchedule, STATUS_OK, train
from .matkit import InstabilityError, NumericError, spectral_radius
from .oracle import (
    CostSpec,
    bar_iota_value,
    constraint_value,
    lagrangian_value,
    solve_reference,
)
from .plant import (
    NoiseSpec,
    Policy,
    SystemModel,
    component_from_dict,
    compute_moments,
    simulate,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INSTABILITY = 3
EXIT_SOLVER = 4

EVALUATE_SIM_STEPS = 1_000_000

log = logging.getLogger("rclqr")


class ConfigError(ValueError):
    """Raised for any config problem; the CLI maps it to exit code 2."""


@dataclass
class RunConfig:
    """Validated experiment description built from one JSON config file."""

    sys: SystemModel
    cost: CostSpec
    noise: NoiseSpec
    mc_samples: int
    mc_seed: int
    policy0: Policy
    schedule: StepSchedule
    run: RunParams
    trace_path: str
    plots: bool
    sha256: str


def _matrix(tree, key, context):
    try:
        M = np.asarray(tree[key], dtype=float)
    except KeyError:
        raise ConfigError(f"{context}: missing required key '{key}'")
    except (TypeError, ValueError):
        raise ConfigError(f"{context}: '{key}' is not a numeric array")
    if M.ndim != 2:
        raise ConfigError(f"{context}: '{key}' must be a nested (2-d) array")
    return M


def load_config(path):
    """Parse and validate a JSON config; any defect raises ConfigError."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    try:
        tree = json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"config parse error at line {e.lineno} column {e.colno}: {e.msg}"
        )
    if not isinstance(tree, dict):
        raise ConfigError("config root must be an object")
    for section in ("system", "cost", "noise", "policy0"):
        if section not in tree:
            raise ConfigError(f"missing required section '{section}'")

    A = _matrix(tree["system"], "A", "system")
    B = _matrix(tree["system"], "B", "system")
    try:
        sysm = SystemModel(A, B)
    except ValueError as e:
        raise ConfigError(f"system: {e}")

    Q = _matrix(tree["cost"], "Q", "cost")
    R = _matrix(tree["cost"], "R", "cost")
    if "iota" not in tree["cost"]:
        raise ConfigError("cost: missing required key 'iota'")
    try:
        cost = CostSpec(Q=Q, R=R, iota=float(tree["cost"]["iota"]))
    except ValueError as e:
        raise ConfigError(f"cost: {e}")
    if Q.shape != A.shape:
        raise ConfigError(
            f"cost: Q is {Q.shape[0]}x{Q.shape[1]} but the state dimension is {sysm.n}"
        )
    if R.shape != (sysm.m, sysm.m):
        raise ConfigError(
            f"cost: R is {R.shape[0]}x{R.shape[1]} but the input dimension is {sysm.m}"
        )

    ntree = tree["noise"]
    if "channels" not in ntree or not isinstance(ntree["channels"], list):
        raise ConfigError("noise: 'channels' must be a list of component lists")
    try:
        channels = tuple(
            tuple(component_from_dict(comp) for comp in chan)
            for chan in ntree["channels"]
        )
        mapping = ntree.get("mapping")
        mapping = None if mapping is None else np.asarray(mapping, dtype=float)
        noise = NoiseSpec(channels=channels, mapping=mapping)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"noise: {e}")
    if noise.n != sysm.n:
        raise ConfigError(
            f"noise: state-noise dimension {noise.n} does not match n={sysm.n}"
        )
    mc_samples = int(ntree.get("mc_samples", 1_000_000))
    mc_seed = int(ntree.get("mc_seed", 0))

    ptree = tree["policy0"]
    K0 = _matrix(ptree, "K0", "policy0")
    try:
        b0 = np.asarray(ptree["b0"], dtype=float)
        policy0 = Policy(K=K0, b=b0, sigma=float(ptree["sigma"]))
    except KeyError as e:
        raise ConfigError(f"policy0: missing required key {e}")
    except ValueError as e:
        raise ConfigError(f"policy0: {e}")
    if K0.shape != (sysm.m, sysm.n) or b0.shape != (sysm.m,):
        raise ConfigError(
            f"policy0: K0 must be {sysm.m}x{sysm.n} and b0 length {sysm.m}"
        )
    if not policy0.is_stabilizing(sysm):
        raise ConfigError(
            "policy0: K0 is not stabilizing, "
            f"rho(A - B K0) = {spectral_radius(A - B @ K0):.6g} >= 1"
        )

    try:
        schedule = StepSchedule(**tree.get("schedules", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"schedules: {e}")

    rtree = dict(tree.get("run", {}))
    rtree.setdefault("steps", 1_000_000)
    rtree.setdefault("seed", 0)
    try:
        run = RunParams(**rtree)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"run: {e}")

    otree = tree.get("output", {})
    return RunConfig(
        sys=sysm,
        cost=cost,
        noise=noise,
        mc_samples=mc_samples,
        mc_seed=mc_seed,
        policy0=policy0,
        schedule=schedule,
        run=run,
        trace_path=otree.get("trace_path") or "trace.csv",
        plots=bool(otree.get("plots", False)),
        sha256=hashlib.sha256(raw).hexdigest(),
    )


def _fmt(v):
    return f"{float(v):.17g}"


def write_trace(path, meta, t, L_hat, Jc_hat, mu, err_X, rho_cl, x_norm):
    """Write the trace CSV: '#'-metadata, header, then 17-digit rows.

    err_X entries may be None (no reference available); they render blank.
    """
    lines = [f"# {k}: {v}" for k, v in meta.items()]
    lines.append("t,L_hat,Jc_hat,mu,err_X,rho_cl,x_norm")
    for i in range(len(t)):
        e = "" if err_X is None else _fmt(err_X[i])
        lines.append(
            f"{int(t[i])},{_fmt(L_hat[i])},{_fmt(Jc_hat[i])},{_fmt(mu[i])},"
            f"{e},{_fmt(rho_cl[i])},{_fmt(x_norm[i])}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path):
    """Parse a trace CSV back into (meta dict, column dict of float arrays)."""
    meta, header, rows = {}, None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = val.strip()
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append([float(v) if v else np.nan for v in line.split(",")])
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    return meta, {name: data[:, j] for j, name in enumerate(header)}


PLOT_SCRIPT = '''"""Render the four training-trace panels from {trace_name}.

Standalone: run with any Python that has matplotlib and numpy installed.
"""
import numpy as np
import matplotlib.pyplot as plt

TRACE = {trace_name!r}
BAR_IOTA = {bar_iota}

names = None
rows = []
with open(TRACE) as fh:
    for line in fh:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if names is None:
            names = line.split(",")
            continue
        rows.append([float(v) if v else float("nan") for v in line.split(",")])
data = np.asarray(rows)
col = {{name: data[:, j] for j, name in enumerate(names)}}
t = col["t"]

fig, axes = plt.subplots(2, 2, figsize=(10, 7))
ax = axes[0, 0]
ax.semilogx(t, col["L_hat"])
ax.set_xlabel("t")
ax.set_ylabel("objective tracker")
ax = axes[0, 1]
ax.semilogx(t, col["Jc_hat"], label="risk tracker")
ax.axhline(BAR_IOTA, color="k", ls="--", lw=1, label="constraint level")
ax.set_xlabel("t")
ax.legend()
ax = axes[1, 0]
ax.semilogx(t, col["mu"])
ax.set_xlabel("t")
ax.set_ylabel("multiplier")
ax = axes[1, 1]
err = col["err_X"]
if np.isfinite(err).any():
    ax.loglog(t, err)
    ax.set_ylabel("policy error")
else:
    ax.semilogx(t, col["x_norm"])
    ax.set_ylabel("state norm")
ax.set_xlabel("t")
fig.tight_layout()
fig.savefig("trace_panels.png", dpi=150)
print("wrote trace_panels.png")
'''


def _policy_json(policy):
    return {"K": policy.K.tolist(), "b": policy.b.tolist(), "sigma": policy.sigma}


def _policy_from_json(obj):
    tree = obj.get("policy", obj)
    return Policy(
        K=np.asarray(tree["K"], dtype=float),
        b=np.asarray(tree["b"], dtype=float),
        sigma=float(tree["sigma"]),
    )


def _load_reference(cfg, out_dir):
    """Reference optimum for err_X: reuse a matching oracle.json, else solve."""
    path = Path(out_dir) / "oracle.json"
    if path.exists():
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
            if obj.get("config_sha256") == cfg.sha256:
                log.info("using reference from %s", path)
                return _policy_from_json(obj), float(obj["mu"])
            log.info("ignoring %s: config hash mismatch", path)
        except (KeyError, ValueError) as e:
            log.info("ignoring %s: %s", path, e)
    moments = compute_moments(cfg.noise, cfg.cost.Q, cfg.mc_samples, cfg.mc_seed)
    try:
        ref = solve_reference(cfg.sys, cfg.cost, moments, cfg.policy0)
    except (InstabilityError, NumericError, RuntimeError) as e:
        log.info("reference solve failed (%s); err_X left blank", e)
        return None
    if not ref.certificate.converged:
        log.info("reference solve did not converge; err_X left blank")
        return None
    return ref.policy, ref.mu


def _train_once(cfg, run, out_dir, plots):
    """One training run: trace CSV, results JSON, optional plot script."""
    moments = compute_moments(cfg.noise, cfg.cost.Q, cfg.mc_samples, cfg.mc_seed)
    bar_iota = bar_iota_value(cfg.cost, moments)
    reference = _load_reference(cfg, out_dir)

    log.info("training: steps=%d seed=%d", run.steps, run.seed)
    result = train(
        cfg.sys, cfg.cost, moments, cfg.noise, cfg.policy0, cfg.schedule, run
    )

    # Per-row diagnostics: closed-loop spectral radius and reference error.
    Acl = cfg.sys.A[None, :, :] - np.einsum("ij,rjk->rik", cfg.sys.B, result.K_hist)
    rho_cl = np.abs(np.linalg.eigvals(Acl)).max(axis=1) if result.rows else np.zeros(0)
    err_X = None
    if reference is not None:
        Xstar = reference[0].as_matrix()
        Xrows = np.concatenate([result.K_hist, result.b_hist[:, :, None]], axis=2)
        err_X = np.linalg.norm(Xrows - Xstar, axis=(1, 2))

    suffix = Path(cfg.trace_path).name
    trace_file = Path(out_dir) / suffix
    meta = {"config_sha256": cfg.sha256, "seed": run.seed}
    write_trace(
        trace_file,
        meta,
        result.trace_t,
        result.trace_L_hat,
        result.trace_Jc_hat,
        result.trace_mu,
        err_X,
        rho_cl,
        result.trace_x_norm,
    )
    log.info("wrote %s (%d rows)", trace_file, result.rows)

    results = {
        "status": result.status,
        "message": result.message,
        "steps_done": result.steps_done,
        "seed": run.seed,
        "config_sha256": cfg.sha256,
        "policy": _policy_json(result.state.X),
        "mu": result.state.mu,
        "L_hat": result.state.trackers.L_hat,
        "Jc_hat": result.state.trackers.Jc_hat,
        "bar_iota": bar_iota,
        "reference": None
        if reference is None
        else {"policy": _policy_json(reference[0]), "mu": reference[1]},
    }
    results_file = trace_file.with_name(trace_file.stem.replace("trace", "results") + ".json")
    if results_file.suffix != ".json":
        results_file = trace_file.with_suffix(".results.json")
    results_file.write_text(json.dumps(results, indent=2) + "\n", encoding="utf-8")
    log.info("wrote %s", results_file)

    if plots:
        script = PLOT_SCRIPT.format(trace_name=suffix, bar_iota=_fmt(bar_iota))
        plot_file = trace_file.with_name(trace_file.stem.replace("trace", "plots") + ".py")
        plot_file.write_text(script, encoding="utf-8")
        log.info("wrote %s", plot_file)

    if result.status != STATUS_OK:
        log.error("run aborted at step %d: %s", result.steps_done, result.message)
        return EXIT_INSTABILITY
    log.info(
        "done: L_hat=%.6g Jc_hat=%.6g mu=%.6g",
        result.state.trackers.L_hat,
        result.state.trackers.Jc_hat,
        result.state.mu,
    )
    return EXIT_OK


def cmd_train(cfg, args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = cfg.run
    if args.steps is not None:
        run = RunParams(**{**run.__dict__, "steps": args.steps})
    plots = cfg.plots or args.plots
    if args.seeds:
        m = re.fullmatch(r"(\d+)\.\.(\d+)", args.seeds)
        if not m or int(m.group(1)) > int(m.group(2)):
            raise ConfigError(f"--seeds must be 'a..b' with a <= b, got {args.seeds!r}")
        code = EXIT_OK
        base = Path(cfg.trace_path)
        for seed in range(int(m.group(1)), int(m.group(2)) + 1):
            seeded = RunParams(**{**run.__dict__, "seed": seed})
            seeded_cfg = RunConfig(
                **{
                    **cfg.__dict__,
                    "trace_path": base.with_stem(f"{base.stem}_seed{seed}").name,
                }
            )
            code = max(code, _train_once(seeded_cfg, seeded, out_dir, plots))
        return code
    if args.seed is not None:
        run = RunParams(**{**run.__dict__, "seed": args.seed})
    return _train_once(cfg, run, out_dir, plots)


def cmd_oracle(cfg, args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    moments = compute_moments(cfg.noise, cfg.cost.Q, cfg.mc_samples, cfg.mc_seed)
    try:
        ref = solve_reference(cfg.sys, cfg.cost, moments, cfg.policy0)
    except (InstabilityError, NumericError, RuntimeError) as e:
        print(f"reference solve failed: {e}")
        return EXIT_SOLVER
    cert = ref.certificate
    np.set_printoptions(precision=6, suppress=True)
    print(f"K* =\n{ref.policy.K}")
    print(f"b* = {ref.policy.b}")
    print(f"mu* = {ref.mu:.10g}")
    print(f"L(X*, mu*) = {cert.L:.10g}")
    print(f"J(X*) = {cert.J:.10g}")
    print(f"J_c(X*) = {cert.Jc:.10g}")
    print(f"constraint level = {cert.bar_iota:.10g}")
    print(
        f"certificate: grad_norm={cert.grad_norm:.3e} "
        f"comp_slack={cert.comp_slack:.3e} feasibility={cert.feasibility:.3e} "
        f"converged={cert.converged}"
    )
    if not cert.converged:
        print(f"solver did not converge: {cert.message}")
        return EXIT_SOLVER
    out = {
        "config_sha256": cfg.sha256,
        "policy": _policy_json(ref.policy),
        "mu": ref.mu,
        "bar_iota": cert.bar_iota,
        "certificate": {
            "grad_norm": cert.grad_norm,
            "comp_slack": cert.comp_slack,
            "feasibility": cert.feasibility,
            "L": cert.L,
            "J": cert.J,
            "Jc": cert.Jc,
            "converged": cert.converged,
            "message": cert.message,
        },
    }
    path = out_dir / "oracle.json"
    path.write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_evaluate(cfg, args):
    try:
        obj = json.loads(Path(args.policy).read_text(encoding="utf-8"))
        policy = _policy_from_json(obj)
    except (OSError, KeyError, ValueError) as e:
        raise ConfigError(f"cannot load policy file {args.policy}: {e}")
    rho = spectral_radius(cfg.sys.A - cfg.sys.B @ policy.K)
    print(f"rho(A - B K) = {rho:.6f}")
    if rho >= 1.0:
        print("policy is not stabilizing; simulation skipped")
        return EXIT_INSTABILITY
    moments = compute_moments(cfg.noise, cfg.cost.Q, cfg.mc_samples, cfg.mc_seed)
    bar_iota = bar_iota_value(cfg.cost, moments)
    J = lagrangian_value(cfg.sys, cfg.cost, moments, policy, 0.0)
    Jc = constraint_value(cfg.sys, cfg.cost, moments, policy)

    # Long-run sample averages alongside the closed forms.
    xs, us, _ = simulate(
        cfg.sys, policy, cfg.noise, EVALUATE_SIM_STEPS, seed=cfg.run.seed
    )
    J_sim = float(
        np.einsum("ti,ij,tj->t", xs, cfg.cost.Q, xs).mean()
        + np.einsum("ti,ij,tj->t", us, cfg.cost.R, us).mean()
    )
    Qx = xs @ cfg.cost.Q
    Jc_sim = float(
        4.0 * np.einsum("ti,ij,tj->t", Qx, moments.W, Qx).mean()
        + 4.0 * (Qx @ moments.M3).mean()
    )
    print(f"J(X)   oracle = {J:.6f}   simulated({EVALUATE_SIM_STEPS} steps) = {J_sim:.6f}")
    print(f"J_c(X) oracle = {Jc:.6f}   simulated({EVALUATE_SIM_STEPS} steps) = {Jc_sim:.6f}")
    print(f"constraint level = {bar_iota:.6f}   slack = {bar_iota - Jc:.6f}")
    print("constraint satisfied" if Jc <= bar_iota else "constraint violated")
    return EXIT_OK


def cmd_moments(cfg, args):
    moments = compute_moments(cfg.noise, cfg.cost.Q, cfg.mc_samples, cfg.mc_seed)
    np.set_printoptions(precision=6, suppress=True)
    trWQ = moments.trWQ(cfg.cost.Q)
    tr2 = 4.0 * float(np.trace(np.linalg.matrix_power(moments.W @ cfg.cost.Q, 2)))
    bar_iota = bar_iota_value(cfg.cost, moments)
    print(f"wbar = {moments.wbar}")
    print(f"W =\n{moments.W}")
    print(f"M3 = {moments.M3}")
    print(f"M3 standard errors = {moments.M3_se}")
    print(f"m4 = {moments.m4:.6f} +- {moments.m4_se:.6f} ({moments.mc_samples} samples)")
    print(f"tr(WQ) = {trWQ:.6f}")
    print(f"4 tr[(WQ)^2] = {tr2:.6f}")
    print(f"constraint level = iota - m4 + 4tr[(WQ)^2] = {bar_iota:.6f}")
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="rclqr",
        description="Risk-constrained LQR: train, oracle, evaluate, moments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("train", cmd_train),
        ("oracle", cmd_oracle),
        ("evaluate", cmd_evaluate),
        ("moments", cmd_moments),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.set_defaults(fn=fn)
        if name == "train":
            p.add_argument("--seed", type=int, help="override the config seed")
            p.add_argument("--steps", type=int, help="override the config step count")
            p.add_argument("--seeds", help="fan out over seeds a..b, one trace each")
            p.add_argument("--plots", action="store_true", help="emit a plot script")
        if name in ("train", "oracle"):
            p.add_argument("--out", default=".", help="output directory")
        if name == "evaluate":
            p.add_argument("policy", help="policy JSON from train or oracle")
    return parser


def main(argv=None):
    level = os.environ.get("RCLQR_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.INFO), format="%(levelname)s: %(message)s"
    )
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InstabilityError as e:
        print(f"instability: {e}", file=sys.stderr)
        return EXIT_INSTABILITY
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
