"""Command-line entry point: train, sweep, eval, analyze, serve."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import analysis
from .baseline_controller import run_sweep, sweep_grid
from .nets import (AdaptationModule, CheckpointError, EnvEncoder, PolicyNet,
                   ValueNet, load_checkpoint, load_into, save_checkpoint)
from .presets import PRESETS, ExperimentConfig, load_config


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def _write_csv(path: str, rows: list[dict], fieldnames: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in fieldnames})


# -- checkpoint helpers --------------------------------------------------------


def save_phase1(path: str, policy, value_net, encoder, meta: dict) -> None:
    meta = dict(meta, kind="phase1")
    save_checkpoint(path, {"policy": policy, "value": value_net,
                           "encoder": encoder}, meta)


def load_phase1(path: str):
    states, meta = load_checkpoint(path)
    if meta.get("kind") != "phase1":
        raise CheckpointError(f"{path}: expected a phase1 checkpoint, "
                              f"got {meta.get('kind')!r}")
    policy = PolicyNet()
    value_net = ValueNet()
    encoder = EnvEncoder()
    load_into(policy, states["policy"])
    load_into(value_net, states["value"])
    load_into(encoder, states["encoder"])
    return policy, value_net, encoder, meta


def save_conditioned(path: str, bundle, meta: dict) -> None:
    meta = dict(meta, kind="conditioned")
    save_checkpoint(path, {"policy": bundle.policy,
                           "adaptation": bundle.adaptation,
                           "value": bundle.value}, meta)


def load_conditioned(path: str):
    from .distill import ConditionedPolicyBundle
    states, meta = load_checkpoint(path)
    if meta.get("kind") != "conditioned":
        raise CheckpointError(f"{path}: expected a conditioned checkpoint, "
                              f"got {meta.get('kind')!r}")
    policy = PolicyNet(extra_dims=3)
    adaptation = AdaptationModule()
    value = ValueNet(extra_dims=3)
    load_into(policy, states["policy"])
    load_into(adaptation, states["adaptation"])
    load_into(value, states["value"])
    return ConditionedPolicyBundle(policy=policy, adaptation=adaptation,
                                   value=value), meta


def resolve_checkpoint(path: str) -> str:
    if os.path.isdir(path):
        cand = os.path.join(path, "final.ckpt")
        if not os.path.exists(cand):
            raise FileNotFoundError(f"{path}: no final.ckpt in run directory")
        return cand
    return path


# -- train -----------------------------------------------------------------------


def cmd_train(args) -> int:
    from .adaptation import train_phase2
    from .ppo import evaluate_policy, train_phase1, write_telemetry

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.iterations is not None:
        cfg.iterations = args.iterations
    if args.n_envs is not None:
        cfg.n_envs = args.n_envs
    if args.horizon is not None:
        cfg.horizon = args.horizon
    suffix = ""
    if args.no_energy:
        cfg.alpha_energy = 0.0
        suffix += "-noenergy"
    if args.flat_no_fractal:
        cfg.terrain = dict(cfg.terrain, amplitude=0.0)
        suffix += "-flat"
    if args.phase2:
        cfg.phase2 = True

    run_dir = args.out or os.path.join(cfg.out_dir,
                                       f"{cfg.name}{suffix}-seed{cfg.seed}")
    os.makedirs(run_dir, exist_ok=True)
    cfg.to_yaml(os.path.join(run_dir, "config.yaml"))
    factory = cfg.env_factory()
    meta_base = {"name": cfg.name, "v_target": cfg.v_target, "seed": cfg.seed,
                 "alpha_energy": cfg.alpha_energy}

    def checkpoint_fn(tag, modules, extra):
        save_phase1(os.path.join(run_dir, f"{tag}.ckpt"), modules["policy"],
                    modules["value"], modules["encoder"],
                    dict(meta_base, **extra))

    print(f"training {cfg.name}{suffix} seed={cfg.seed} "
          f"({cfg.iterations} iterations, {cfg.n_envs} envs)")
    policy, encoder, value_net, telemetry = train_phase1(
        factory, cfg.train_config(),
        telemetry_path=os.path.join(run_dir, "telemetry.csv"),
        checkpoint_fn=checkpoint_fn, quiet=args.quiet)

    summary = {"run_dir": run_dir, "iterations": cfg.iterations,
               "final_return": telemetry[-1]["mean_return"],
               "final_speed": telemetry[-1]["mean_speed"],
               "final_energy": telemetry[-1]["energy"]}

    if cfg.phase2:
        module, stats = train_phase2(policy, encoder, factory,
                                     cfg.adaptation_config(), quiet=args.quiet)
        save_checkpoint(os.path.join(run_dir, "adaptation.ckpt"),
                        {"adaptation": module},
                        dict(meta_base, kind="adaptation",
                             val_mse=stats["val_mse"],
                             baseline_mse=stats["baseline_mse"]))
        summary["phase2_val_mse"] = stats["val_mse"]
        summary["phase2_baseline_mse"] = stats["baseline_mse"]
        summary["phase2_improvement"] = stats["improvement"]

    if args.eval_episodes:
        results = evaluate_policy(policy, encoder, factory,
                                  episodes=args.eval_episodes,
                                  base_seed=cfg.seed + 50_000)
        summary["eval_mean_return"] = float(np.mean([r["return"] for r in results]))
        summary["eval_mean_speed"] = float(np.mean([r["mean_speed"] for r in results]))
        summary["eval_no_fall"] = int(sum(not r["fell"] for r in results))

    with open(os.path.join(run_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    print(f"run directory: {run_dir}")
    return 0


def cmd_distill(args) -> int:
    from .distill import DistillConfig, train_conditioned

    experts = {}
    for mode, path in zip((0.375, 0.9, 1.5),
                          (args.expert_walk, args.expert_trot, args.expert_bounce)):
        policy, _, encoder, meta = load_phase1(resolve_checkpoint(path))
        experts[mode] = (policy, encoder)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.distill_epochs = args.epochs
    run_dir = args.out or os.path.join(cfg.out_dir,
                                       f"{cfg.name}-distill-seed{cfg.seed}")
    os.makedirs(run_dir, exist_ok=True)
    cfg.to_yaml(os.path.join(run_dir, "config.yaml"))
    dcfg = DistillConfig(epochs=cfg.distill_epochs, n_envs=cfg.n_envs,
                         seed=cfg.seed)
    bundle, telemetry = train_conditioned(experts, cfg.env_factory(), dcfg,
                                          quiet=args.quiet)
    save_conditioned(os.path.join(run_dir, "final.ckpt"), bundle,
                     {"seed": cfg.seed, "epochs": cfg.distill_epochs})
    _write_csv(os.path.join(run_dir, "telemetry.csv"), telemetry,
               list(telemetry[0].keys()))
    print(f"run directory: {run_dir}")
    return 0


# -- sweep -----------------------------------------------------------------------

SWEEP_FIELDS = ["gait", "v_target", "realized_speed",
                "energy_per_meter_raw", "energy_per_meter_pos", "fell"]


def cmd_sweep(args) -> int:
    gaits = [g.strip() for g in args.gaits.split(",") if g.strip()]
    if not gaits:
        print("error: empty gait set", file=sys.stderr)
        return 2
    for g in gaits:
        if g not in ("walk", "trot", "bounce"):
            print(f"error: unknown gait {g!r}", file=sys.stderr)
            return 2
    os.makedirs(args.out, exist_ok=True)
    print(f"sweeping {gaits} over the published speed grids...")
    rows = run_sweep(gaits, duration=args.duration, seed=args.seed)
    _write_csv(os.path.join(args.out, "sweep.csv"), rows, SWEEP_FIELDS)

    policy_points = []
    for spec in args.policy or []:
        ckpt = resolve_checkpoint(spec)
        point = _policy_energy_point(ckpt, args.seed)
        if point:
            policy_points.append(point)
    analysis.render_energy_chart(rows, policy_points,
                                 path=os.path.join(args.out, "energy_chart.svg"))
    flags = analysis.sweep_flags(rows)
    flags["n_rows"] = len(rows)
    flags["policy_points"] = policy_points
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as f:
        json.dump(flags, f, indent=2, sort_keys=True)
    for gait, mono in flags["monotone"].items():
        if not mono:
            print(f"note: {gait} energy curve is not monotone in speed")
    if flags.get("walk_trot_crossing") is None:
        print("note: no walk/trot energy crossing found in [0.4, 1.0] m/s")
    print(f"sweep artifacts in {args.out}")
    return 0


def _policy_energy_point(ckpt_path: str, seed: int):
    from .ppo import evaluate_policy
    from .presets import PRESETS

    try:
        policy, value_net, encoder, meta = load_phase1(ckpt_path)
    except CheckpointError as e:
        print(f"warning: {e}", file=sys.stderr)
        return None
    v = float(meta.get("v_target", 0.375))
    name = meta.get("name", "walk-desk")
    cfg = PRESETS.get(name, PRESETS["walk-desk"])
    env = cfg.env_factory(seed)(0)
    env.enable_logging()
    from .ppo import scale_obs
    from .randomize import scale_factors
    import torch
    obs = env.reset(seed=seed + 123)
    prev = np.zeros(12)
    nominal_q = env.model.nominal_stand_q
    with torch.no_grad():
        for _ in range(env.config.episode_steps):
            e = scale_factors(env.factor_vector())
            x = torch.from_numpy(np.concatenate(
                [scale_obs(obs, nominal_q), prev, e])[None]).float()
            z = encoder(x[:, 42:])
            act = policy(torch.cat([x[:, :42], z], 1))[0].numpy()
            obs, _, done, info = env.step(act)
            prev = act
            if done:
                break
    cols = {k: np.array([row[k] for row in env.log_rows])
            for k in env.log_rows[0]}
    try:
        epm_raw, _ = analysis.energy_per_meter(
            cols["t"], cols["power_raw"],
            np.stack([cols["base_x"], cols["base_y"]], axis=1))
    except ValueError:
        return None
    dist = cols["base_x"][-1] - cols["base_x"][0]
    return {"v": v, "energy_per_meter": float(epm_raw),
            "realized_speed": float(dist / (len(cols["t"]) * 0.01)),
            "label": name}


# -- eval / analyze ---------------------------------------------------------------


def cmd_eval(args) -> int:
    import torch
    from .ppo import evaluate_policy, scale_obs
    from .randomize import scale_factors

    ckpt = resolve_checkpoint(args.checkpoint)
    policy, value_net, encoder, meta = load_phase1(ckpt)
    name = meta.get("name", "walk-desk")
    cfg = PRESETS.get(name)
    if cfg is None:
        cfg = PRESETS["walk-desk"]
    if args.v_target is not None:
        cfg.v_target = args.v_target
    factory = cfg.env_factory(args.seed)

    rows = []
    traces = []
    for trial in range(args.trials):
        env = factory(0)
        env.enable_logging()
        obs = env.reset(seed=args.seed + trial)
        prev = np.zeros(12)
        nominal_q = env.model.nominal_stand_q
        x0 = float(env.state.base_position[0])
        total = 0.0
        with torch.no_grad():
            for k in range(env.config.episode_steps):
                e = scale_factors(env.factor_vector())
                x = torch.from_numpy(np.concatenate(
                    [scale_obs(obs, nominal_q), prev, e])[None]).float()
                z = encoder(x[:, 42:])
                act = policy(torch.cat([x[:, :42], z], 1))[0].numpy()
                obs, r, done, info = env.step(act)
                prev = act
                total += r
                if done:
                    break
        steps = k + 1
        dist = float(env.state.base_position[0]) - x0
        cols = {key: np.array([row[key] for row in env.log_rows])
                for key in env.log_rows[0]}
        trace = analysis.trace_from_trajectory(cols)
        metrics = analysis.gait_metrics(trace)
        epm = float("nan")
        if abs(dist) > 0.01:
            epm = analysis.energy_per_meter(
                cols["t"], cols["power_raw"],
                np.stack([cols["base_x"], cols["base_y"]], axis=1))[0]
        rows.append({
            "trial": trial, "steps": steps, "return": total,
            "realized_speed": dist / (steps * 0.01),
            "energy_per_meter": epm,
            "gait_label": metrics.gait_label,
            "fell": bool(info["fell"]),
        })
        traces.append(trace)

    out_dir = args.out or os.path.dirname(ckpt) or "."
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "eval.csv"), rows,
               ["trial", "steps", "return", "realized_speed",
                "energy_per_meter", "gait_label", "fell"])
    analysis.render_contact_plot(traces[0], window=args.window,
                                 path=os.path.join(out_dir, "eval_contacts.svg"))
    mean_speed = float(np.mean([r["realized_speed"] for r in rows]))
    print(f"trials={args.trials} mean_speed={mean_speed:.3f} "
          f"labels={[r['gait_label'] for r in rows]}")
    print(f"eval artifacts in {out_dir}")
    return 0


def cmd_analyze(args) -> int:
    cols = analysis.load_trajectory_csv(args.log)
    trace = analysis.trace_from_trajectory(cols)
    metrics = analysis.gait_metrics(trace)
    print(f"label: {metrics.gait_label}")
    print(f"duty factors: {np.round(metrics.duty_factor, 3).tolist()}")
    print(f"relative phases: {np.round(metrics.relative_phase, 3).tolist()}")
    print(f"cycle period: {metrics.cycle_period:.4f} s" if np.isfinite(metrics.cycle_period)
          else "cycle period: aperiodic")
    print(f"flight fraction: {metrics.flight_fraction:.3f}")
    print(f"mean speed: {metrics.mean_speed:.3f} m/s")
    print(f"froude: {metrics.froude:.4f}" if np.isfinite(metrics.froude)
          else "froude: n/a")
    try:
        epm_raw, epm_pos = analysis.energy_per_meter(
            cols["t"], cols["power_raw"],
            np.stack([cols["base_x"], cols["base_y"]], axis=1))
        print(f"energy per meter: raw {epm_raw:.2f} J/m, "
              f"positive-clamped {epm_pos:.2f} J/m")
    except (ValueError, KeyError):
        print("energy per meter: n/a")
    if args.out:
        analysis.render_contact_plot(trace, window=args.window, path=args.out)
        print(f"contact plot: {args.out}")
    else:
        print(analysis.render_contact_text(trace, window=args.window))
    return 0


def cmd_serve(args) -> int:
    from .serve import run_server
    return run_server(checkpoint=args.checkpoint, scheduler=args.scheduler,
                      port=args.port, host=args.host, realtime=not args.fast)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaitlab",
                                description="quadruped locomotion energetics workbench")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy (phase 1, optional phase 2)")
    t.add_argument("--preset", "--config", dest="config", required=True,
                   help=f"preset name {sorted(PRESETS)} or config YAML path")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--iterations", type=int, default=None)
    t.add_argument("--n-envs", type=int, default=None)
    t.add_argument("--horizon", type=int, default=None)
    t.add_argument("--no-energy", action="store_true",
                   help="ablation: zero the energy reward weight")
    t.add_argument("--flat-no-fractal", action="store_true",
                   help="ablation: flat terrain without fractal perturbations")
    t.add_argument("--phase2", action="store_true",
                   help="also train the adaptation module")
    t.add_argument("--eval-episodes", type=int, default=0)
    t.add_argument("--out", default=None)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    d = sub.add_parser("distill", help="train the velocity-conditioned policy")
    d.add_argument("--preset", "--config", dest="config", default="transition-desk")
    d.add_argument("--expert-walk", required=True)
    d.add_argument("--expert-trot", required=True)
    d.add_argument("--expert-bounce", required=True)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--epochs", type=int, default=None)
    d.add_argument("--out", default=None)
    d.add_argument("--quiet", action="store_true")
    d.set_defaults(fn=cmd_distill)

    s = sub.add_parser("sweep", help="baseline energy-vs-speed sweep")
    s.add_argument("--gaits", default="walk,trot,bounce")
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--policy", action="append", default=None,
                   help="overlay a trained checkpoint (repeatable)")
    s.add_argument("--out", default="sweep_out")
    s.set_defaults(fn=cmd_sweep)

    e = sub.add_parser("eval", help="evaluate a trained checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--trials", type=int, default=3)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--v-target", type=float, default=None)
    e.add_argument("--window", type=float, default=10.0)
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("analyze", help="analyze a trajectory log CSV")
    a.add_argument("--log", required=True)
    a.add_argument("--window", type=float, default=10.0)
    a.add_argument("--out", default=None, help="write the contact plot SVG here")
    a.set_defaults(fn=cmd_analyze)

    v = sub.add_parser("serve", help="serve a live simulation over websocket")
    v.add_argument("--checkpoint", default=None,
                   help="conditioned-policy checkpoint")
    v.add_argument("--scheduler", action="store_true",
                   help="serve the scripted gait scheduler instead of a policy")
    v.add_argument("--port", type=int, default=8710)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--fast", action="store_true",
                   help="run unpaced (tests only)")
    v.set_defaults(fn=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
