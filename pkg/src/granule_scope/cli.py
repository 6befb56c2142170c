"""granule-scope command line: gen-data, train, rollout, harvest, insitu-run,
serve, report.

Exit codes: 0 success, 1 validation failure, 2 runtime failure, 3 numerical
divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import formats, gns, mpm, service
from . import report as report_mod
from .harvest import (
    ConfigValidationError,
    InSituConfig,
    build_config,
    detect_phases,
    scalar_range,
)
from .neural import optimizer_init
from .pipeline import run_pipeline
from .render import preset_cameras
from .specs import RunSpec, load_spec

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_DIVERGENCE = 3


def _resolve_spec(args) -> RunSpec:
    spec = load_spec(args.spec) if args.spec else RunSpec()
    if getattr(args, "seed", None) is not None:
        spec.seed = args.seed
    if getattr(args, "out", None) is not None:
        spec.out_dir = args.out
    return spec


def _vary_geometry(spec: RunSpec, index: int) -> mpm.SimConfig:
    """Randomized column geometry for one training trajectory."""
    rng = np.random.default_rng((spec.seed, index))
    base = spec.sim.to_dict()
    s = spec.sim.particle_spacing
    domain = spec.sim.bounds
    width = float(rng.uniform(0.7, 1.3)) * spec.sim.column_width
    aspect = float(rng.uniform(0.6, 2.2))
    height = aspect * width
    max_h = 0.85 * (domain[1, 1] - domain[1, 0])
    height = min(height, max_h)
    base["column_width"] = max(s, round(width / s) * s)
    base["column_height"] = max(s, round(height / s) * s)
    return mpm.SimConfig(**base)


def cmd_gen_data(args) -> int:
    spec = _resolve_spec(args)
    if spec.num_trajectories < 1:
        raise ValueError("data.num_trajectories must be >= 1")
    data_dir = Path(spec.out_dir) / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    failures = []
    for i in range(spec.num_trajectories):
        config = _vary_geometry(spec, i)
        name = f"traj_{i:03d}.gstrj"
        try:
            t0 = time.perf_counter()
            roll = mpm.run(config)
            formats.write_trajectory(data_dir / name, roll)
            entries.append({
                "file": name,
                "column_width": config.column_width,
                "column_height": config.column_height,
                "particles": roll.num_particles,
                "frames": roll.num_frames,
                "dt": roll.dt,
            })
            print(f"{name}: {roll.num_particles} particles, {roll.num_frames} frames "
                  f"({time.perf_counter() - t0:.1f} s)")
        except mpm.SimulationUnstable as exc:
            failures.append({"file": name, "error": str(exc)})
            print(f"{name}: FAILED ({exc})", file=sys.stderr)
    manifest = {
        "spec_hash": spec.spec_hash(),
        "sim_hash": spec.sim_hash(),
        "seed": spec.seed,
        "entries": entries,
        "failures": failures,
    }
    with open(data_dir / "manifest.json", "wb") as fh:
        fh.write(formats.canonical_json_bytes(manifest))
    print(f"manifest: {data_dir / 'manifest.json'} ({len(entries)} trajectories)")
    if not entries:
        print("all trajectories failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _load_dataset(spec: RunSpec):
    data_dir = Path(spec.out_dir) / "data"
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise ValueError(f"no manifest at {manifest_path}; run gen-data first")
    manifest = json.loads(manifest_path.read_text())
    rollouts = [formats.read_trajectory(data_dir / e["file"]) for e in manifest["entries"]]
    if not rollouts:
        raise ValueError("manifest lists no trajectories")
    return manifest, rollouts


def _split_dataset(rollouts):
    """Hold the last trajectory out for validation."""
    if len(rollouts) == 1:
        print("warning: single trajectory; validating on the training data",
              file=sys.stderr)
        return rollouts, rollouts[-1]
    return rollouts[:-1], rollouts[-1]


def cmd_train(args) -> int:
    spec = _resolve_spec(args)
    manifest, rollouts = _load_dataset(spec)
    train_rolls, val_roll = _split_dataset(rollouts)
    train_dir = Path(spec.out_dir) / "train"
    train_dir.mkdir(parents=True, exist_ok=True)

    start_step = 0
    if args.resume:
        model, meta = formats.read_checkpoint(args.resume)
        start_step = int(meta.get("step", 0))
        noise = spec.resolved_noise_std(model.stats)
        print(f"resuming from {args.resume} at step {start_step}")
    else:
        raw_stats = gns.compute_normalization(train_rolls)
        noise = spec.resolved_noise_std(raw_stats)
        model = gns.model_init(
            dim=val_roll.dim,
            radius=spec.resolved_gns_radius(),
            context=spec.gns_context,
            latent=spec.gns_latent,
            num_blocks=spec.gns_blocks,
            seed=spec.seed,
            stats=gns.compute_normalization(train_rolls, noise_std=noise),
        )

    train_samples = [s for r in train_rolls for s in gns.trajectory_samples(r, model.context)]
    val_all = gns.trajectory_samples(val_roll, model.context)
    val_samples = val_all[:: max(1, len(val_all) // 32)]
    steps = args.steps if args.steps is not None else spec.train_steps

    final_path = train_dir / "checkpoint_final.gsckpt"
    if steps == 0:
        formats.write_checkpoint(final_path, model, meta={"step": start_step, "seed": spec.seed})
        print(f"warning: steps=0, wrote untrained checkpoint", file=sys.stderr)
        print(f"checkpoint: {final_path}")
        return EXIT_OK

    curve_path = train_dir / "loss_curve.csv"
    mode = "a" if (args.resume and curve_path.exists()) else "w"
    curve = open(curve_path, mode, newline="")
    if mode == "w":
        curve.write("step,train_loss,val_loss\n")

    opt = optimizer_init(model.num_params, lr=spec.lr, lr_min=spec.lr_min,
                         decay_steps=max(steps, 1))
    last_good = None

    def checkpoint(step):
        path = train_dir / f"checkpoint_{step:06d}.gsckpt"
        formats.write_checkpoint(path, model, meta={"step": step, "seed": spec.seed})
        return path

    try:
        rng = np.random.default_rng((spec.seed, start_step))
        t0 = time.perf_counter()
        val_loss = gns.validation_loss(model, val_samples)
        print(f"initial validation loss: {val_loss:.6g}")
        for k in range(steps):
            idx = rng.integers(0, len(train_samples), size=spec.train_batch)
            batch = [train_samples[int(i)] for i in idx]
            loss = gns.train_step(model, opt, batch, noise, rng)
            step_no = start_step + k + 1
            record_val = step_no % spec.val_every == 0 or k == steps - 1
            if record_val:
                val_loss = gns.validation_loss(model, val_samples)
                curve.write(f"{step_no},{loss!r},{val_loss!r}\n")
                print(f"step {step_no}: train {loss:.6g} val {val_loss:.6g} "
                      f"({time.perf_counter() - t0:.0f} s)")
            else:
                curve.write(f"{step_no},{loss!r},\n")
            if step_no % spec.checkpoint_every == 0:
                last_good = checkpoint(step_no)
    except gns.DivergenceError as exc:
        curve.close()
        print(f"training diverged: {exc}", file=sys.stderr)
        if last_good is not None:
            print(f"last good checkpoint: {last_good}", file=sys.stderr)
        return EXIT_DIVERGENCE
    curve.close()
    formats.write_checkpoint(final_path, model,
                             meta={"step": start_step + steps, "seed": spec.seed})
    print(f"checkpoint: {final_path}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    spec = _resolve_spec(args)
    ckpt = args.checkpoint or str(Path(spec.out_dir) / "train" / "checkpoint_final.gsckpt")
    model, meta = formats.read_checkpoint(ckpt)
    if args.traj:
        source = formats.read_trajectory(args.traj)
    else:
        manifest, rollouts = _load_dataset(spec)
        source = rollouts[-1]
    window = np.stack([f.positions for f in source.frames[: model.context + 1]])
    if window.shape[0] < model.context + 1:
        raise ValueError("source trajectory shorter than the model context")
    num_steps = args.steps if args.steps is not None else spec.resolved_rollout_steps()
    t0 = time.perf_counter()
    result = gns.rollout(model, window, num_steps, source.dt, source.bounds)
    wall = time.perf_counter() - t0
    out_dir = Path(spec.out_dir) / "rollout"
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "surrogate.gstrj"
    formats.write_trajectory(path, result)
    duration = num_steps * source.dt
    print(f"rollout: {num_steps} steps at dt {source.dt:g} s -> duration {duration:g} s, "
          f"wall {wall:.2f} s")
    print(f"trajectory: {path}")
    if args.vtp:
        vtp_dir = out_dir / "vtp"
        vtp_dir.mkdir(exist_ok=True)
        for i, frame in enumerate(result.frames):
            formats.export_vtp(frame, vtp_dir / f"frame_{i:06d}.vtp")
        print(f"vtp: {vtp_dir} ({result.num_frames} files)")
    return EXIT_OK


def cmd_harvest(args) -> int:
    spec = _resolve_spec(args)
    roll_path = args.rollout or str(Path(spec.out_dir) / "rollout" / "surrogate.gstrj")
    roll = formats.read_trajectory(roll_path)
    cameras = preset_cameras(roll.bounds, spec.image_width, spec.image_height)
    value_range = scalar_range(roll, "displacement")
    phases = detect_phases(
        roll,
        epsilon=spec.resolved_epsilon(),
        threshold=spec.harvest_threshold,
        dt_ratio=spec.dt_ratio(),
        total_steps=spec.sim.total_steps,
    )
    if phases.flagged:
        print("warning: mobilization threshold never reached; "
              "falling back to a single full-window view", file=sys.stderr)
        cameras = cameras[:1]
    config = build_config(
        cameras, phases, value_range,
        cadence=spec.cadence,
        total_steps=spec.sim.total_steps,
        particle_radius=spec.resolved_render_radius(),
        run_label=f"informed-{spec.spec_hash()[:8]}",
    )
    out_path = Path(args.config_out or (Path(spec.out_dir) / "config.json"))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    formats.write_config(out_path, config)
    print(f"harvested range: ({value_range[0]:.6g}, {value_range[1]:.6g})")
    print(f"initiation ends at ground-truth step {phases.initiation_end_step}")
    for view, window in config.view_windows.items():
        print(f"  {view}: steps {window[0]}..{window[1]}")
    print(f"config: {out_path}")
    return EXIT_OK


def cmd_insitu_run(args) -> int:
    spec = _resolve_spec(args)
    config_path = args.config or str(Path(spec.out_dir) / "config.json")
    config = formats.read_config(config_path)
    if args.baseline:
        config = baseline_config(config)
    sim_dict = spec.sim.to_dict()
    sim_dict["snapshot_every"] = config.cadence
    sim = mpm.SimConfig(**sim_dict)
    if sim.total_steps != config.total_steps:
        raise ValueError(
            f"config covers {config.total_steps} steps but the spec simulates "
            f"{sim.total_steps}"
        )
    ranks = args.ranks or spec.insitu_ranks
    run_dir = Path(spec.out_dir) / "insitu" / config.run_label
    report, records = run_pipeline(
        mpm.simulate(sim), config, ranks, run_dir,
        sim_config_hash=spec.sim_hash(),
    )
    print(f"viz steps: {report.num_viz_steps}, images: {report.num_images}")
    for stage in ("receive", "setup", "render"):
        st = getattr(report, stage)
        print(f"  {stage:8s} {st.mean_s:8.4f} s/step ({st.pct:5.1f}%)  std {st.std_s:.4f}")
    print(f"  total    {report.total_mean_s:8.4f} s/step, wall {report.total_wall_s:.1f} s")
    print(f"artifacts: {run_dir}")
    if report.partial:
        print("run ended early; report flagged partial", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def baseline_config(config: InSituConfig) -> InSituConfig:
    """All-views/all-steps variant of a config, for savings comparisons."""
    full = InSituConfig(
        run_label=f"{config.run_label}-baseline",
        cameras=config.cameras,
        colormap=config.colormap,
        view_windows={c.name: (0, config.total_steps) for c in config.cameras},
        cadence=config.cadence,
        particle_radius=config.particle_radius,
        total_steps=config.total_steps,
        flagged=config.flagged,
    )
    return full.check()


def resolve_data_dir(arg_dir: str | None, spec_out_dir: str) -> str:
    """--dir wins, then $GRANULE_SCOPE_DATA, then the spec output directory."""
    return arg_dir or os.environ.get("GRANULE_SCOPE_DATA") or spec_out_dir


def cmd_serve(args) -> int:
    spec = _resolve_spec(args)
    service.serve(resolve_data_dir(args.dir, spec.out_dir), args.port, ui_dir=args.ui)
    return EXIT_OK


def cmd_report(args) -> int:
    out = args.report_out or args.run
    written = report_mod.render_run_report(args.run, out)
    if args.baseline:
        summary, paths = report_mod.render_comparison(args.baseline, args.run, out)
        written.extend(paths)
        print(f"savings vs baseline: {100 * summary.image_savings:.1f}% images, "
              f"{100 * summary.render_savings:.1f}% render time")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="granule-scope",
        description="surrogate-informed in situ visualization workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--spec", help="run-spec JSON file (defaults to desk scale)")
        p.add_argument("--seed", type=int, help="override the spec seed")
        p.add_argument("--out", help="override the spec output directory")

    p = sub.add_parser("gen-data", help="simulate training trajectories")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the surrogate on generated data")
    common(p)
    p.add_argument("--steps", type=int, help="override training step count")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="predict a trajectory with the surrogate")
    common(p)
    p.add_argument("--checkpoint", help="model checkpoint path")
    p.add_argument("--traj", help="trajectory file supplying the initial window")
    p.add_argument("--steps", type=int, help="number of prediction steps")
    p.add_argument("--vtp", action="store_true", help="also write one .vtp per frame")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("harvest", help="extract in situ config from a rollout")
    common(p)
    p.add_argument("--rollout", help="surrogate rollout file")
    p.add_argument("--config-out", dest="config_out", help="where to write config.json")
    p.set_defaults(func=cmd_harvest)

    p = sub.add_parser("insitu-run", help="full-resolution instrumented run")
    common(p)
    p.add_argument("--config", help="InSituConfig JSON path")
    p.add_argument("--ranks", type=int, help="number of producer ranks")
    p.add_argument("--baseline", action="store_true",
                   help="run the all-views/all-steps baseline instead")
    p.set_defaults(func=cmd_insitu_run)

    p = sub.add_parser("serve", help="HTTP service for the explorer UI")
    common(p)
    p.add_argument("--dir", help="data directory (default: $GRANULE_SCOPE_DATA or spec out_dir)")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--ui", help="static UI directory to serve at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="figures + summary for an instrumented run")
    p.add_argument("--run", required=True, help="run directory with timings.csv/report.json")
    p.add_argument("--baseline", help="baseline run directory for savings comparison")
    p.add_argument("--report-out", dest="report_out", help="output directory for figures")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigValidationError, formats.FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (gns.DivergenceError, mpm.SimulationUnstable) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        traceback.print_exc()
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
