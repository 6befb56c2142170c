"""Instrumented in situ loop: simulation ranks hand frames to one visualization
consumer over bounded channels; each viz step is timed as receive (gather +
decode + repartition), setup (acceleration structure), and render (per view).

The desk-scale analogue of the multi-process deployment: one driver thread
advances the simulation and streams per-rank partitions into P ordered,
bounded queues; the consumer blocks on all P channels per viz step, so
producers feel backpressure exactly as in synchronous in situ coupling.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .frames import ParticleFrame, merge_frames
from .harvest import InSituConfig, planned_view_counts
from .render import build_accel, map_colors, render_scene, write_ppm


@dataclass
class TimingRecord:
    """Stage durations for one viz step, wall-clock seconds."""

    step: int
    receive_s: float
    setup_s: float
    render_s: float
    per_view_s: dict[str, float] = field(default_factory=dict)
    particles: int = 0
    failed_views: list[str] = field(default_factory=list)


@dataclass
class StageStats:
    mean_s: float
    std_s: float
    pct: float

    def to_dict(self):
        return {"mean_s": self.mean_s, "std_s": self.std_s, "pct": self.pct}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean_s"], d["std_s"], d["pct"])


@dataclass
class RunReport:
    """Aggregated stage breakdown for one instrumented run."""

    run: str
    config_hash: str
    sim_config_hash: str
    num_viz_steps: int
    num_images: int
    images_per_view: dict[str, int]
    receive: StageStats
    setup: StageStats
    render: StageStats
    total_mean_s: float
    total_wall_s: float
    render_total_s: float
    partial: bool = False

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "run": self.run,
            "config_hash": self.config_hash,
            "sim_config_hash": self.sim_config_hash,
            "num_viz_steps": self.num_viz_steps,
            "num_images": self.num_images,
            "images_per_view": dict(sorted(self.images_per_view.items())),
            "stages": {
                "receive": self.receive.to_dict(),
                "setup": self.setup.to_dict(),
                "render": self.render.to_dict(),
            },
            "total_mean_s": self.total_mean_s,
            "total_wall_s": self.total_wall_s,
            "render_total_s": self.render_total_s,
            "partial": self.partial,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            run=d["run"],
            config_hash=d["config_hash"],
            sim_config_hash=d["sim_config_hash"],
            num_viz_steps=d["num_viz_steps"],
            num_images=d["num_images"],
            images_per_view=d["images_per_view"],
            receive=StageStats.from_dict(d["stages"]["receive"]),
            setup=StageStats.from_dict(d["stages"]["setup"]),
            render=StageStats.from_dict(d["stages"]["render"]),
            total_mean_s=d["total_mean_s"],
            total_wall_s=d["total_wall_s"],
            render_total_s=d["render_total_s"],
            partial=d["partial"],
        )


def report_from_records(records: list[TimingRecord], run: str, config_hash: str,
                        sim_config_hash: str, images_per_view: dict[str, int],
                        total_wall_s: float, partial: bool = False) -> RunReport:
    """Stage means/stds and percentage shares of the mean viz-step time."""

    def stats(values):
        if not values:
            return 0.0, 0.0
        arr = np.asarray(values)
        return float(arr.mean()), float(arr.std())

    recv_mean, recv_std = stats([r.receive_s for r in records])
    setup_mean, setup_std = stats([r.setup_s for r in records])
    render_mean, render_std = stats([r.render_s for r in records])
    total_mean = recv_mean + setup_mean + render_mean
    pct = (lambda m: 100.0 * m / total_mean if total_mean > 0 else 0.0)
    return RunReport(
        run=run,
        config_hash=config_hash,
        sim_config_hash=sim_config_hash,
        num_viz_steps=len(records),
        num_images=int(sum(images_per_view.values())),
        images_per_view=images_per_view,
        receive=StageStats(recv_mean, recv_std, pct(recv_mean)),
        setup=StageStats(setup_mean, setup_std, pct(setup_mean)),
        render=StageStats(render_mean, render_std, pct(render_mean)),
        total_mean_s=total_mean,
        total_wall_s=total_wall_s,
        render_total_s=float(sum(r.render_s for r in records)),
        partial=partial,
    )


# ---------------------------------------------------------------------------
# Repartitioning


@dataclass
class Partition:
    rank: int
    box: np.ndarray  # (dim, 2)
    indices: np.ndarray  # into the merged frame


def repartition(rank_frames: list[ParticleFrame], num_partitions: int | None = None,
                bounds: np.ndarray | None = None):
    """Merge per-rank frames and re-bin into non-overlapping boxes.

    Recursive median splits along the longest box axis; partition boxes are
    pairwise disjoint (sharing only faces) and cover the full domain, and
    every particle lands in exactly one partition.
    """
    merged = merge_frames(rank_frames)
    k = num_partitions if num_partitions is not None else len(rank_frames)
    if k < 1:
        raise ValueError("need at least one partition")
    if bounds is None:
        lo = merged.positions.min(axis=0) if merged.num_particles else np.zeros(merged.dim)
        hi = merged.positions.max(axis=0) if merged.num_particles else np.ones(merged.dim)
        pad = np.maximum(1e-9, 1e-9 * (hi - lo))
        bounds = np.stack([lo - pad, hi + pad], axis=1)
    else:
        bounds = np.asarray(bounds, dtype=np.float64)

    partitions: list[Partition] = []

    def split(indices: np.ndarray, box: np.ndarray, parts: int):
        if parts == 1:
            partitions.append(Partition(len(partitions), box, indices))
            return
        axis = int(np.argmax(box[:, 1] - box[:, 0]))
        left_parts = parts // 2
        order = np.argsort(merged.positions[indices, axis], kind="stable")
        n_left = int(round(len(indices) * left_parts / parts))
        left_idx = indices[order[:n_left]]
        right_idx = indices[order[n_left:]]
        if n_left == 0:
            cut = box[axis, 0]
        elif n_left == len(indices):
            cut = box[axis, 1]
        else:
            cut = 0.5 * (
                merged.positions[left_idx, axis].max()
                + merged.positions[right_idx, axis].min()
            )
        left_box = box.copy()
        left_box[axis, 1] = cut
        right_box = box.copy()
        right_box[axis, 0] = cut
        split(left_idx, left_box, left_parts)
        split(right_idx, right_box, parts - left_parts)

    split(np.arange(merged.num_particles), bounds.copy(), k)
    return merged, partitions


# ---------------------------------------------------------------------------
# Viz step


def view_active(config: InSituConfig, view: str, step: int) -> bool:
    start, end = config.view_windows[view]
    return start <= step <= end and step % config.cadence == 0


def viz_step(frame: ParticleFrame, config: InSituConfig, step: int,
             out_dir: Path | None = None, receive_s: float = 0.0,
             threads: int = 1):
    """Setup + render for every view active at this step.

    Returns (written image paths, TimingRecord). Render failures are recorded
    in the TimingRecord and do not abort the pipeline.
    """
    active = [c for c in config.cameras if c.name in config.view_windows
              and view_active(config, c.name, step)]
    record = TimingRecord(step=step, receive_s=receive_s, setup_s=0.0,
                         render_s=0.0, particles=frame.num_particles)
    paths = []
    if not active:
        return paths, record
    t0 = time.perf_counter()
    centers = frame.positions3()
    grid = build_accel(centers, config.particle_radius)
    colors = map_colors(config.colormap, frame.scalars["displacement"])
    record.setup_s = time.perf_counter() - t0
    for camera in active:
        t1 = time.perf_counter()
        try:
            image = render_scene(grid, centers, colors, camera,
                                 config.particle_radius, threads=threads)
        except Exception:
            record.failed_views.append(camera.name)
            record.per_view_s[camera.name] = time.perf_counter() - t1
            continue
        record.per_view_s[camera.name] = time.perf_counter() - t1
        if out_dir is not None:
            view_dir = Path(out_dir) / camera.name
            view_dir.mkdir(parents=True, exist_ok=True)
            path = view_dir / f"frame_{step:06d}.ppm"
            write_ppm(image, path)
            paths.append(path)
        else:
            paths.append(camera.name)
    record.render_s = float(sum(record.per_view_s.values()))
    return paths, record


# ---------------------------------------------------------------------------
# Full pipeline


_SENTINEL_DONE = ("done", None)


def _rank_assignment(frame: ParticleFrame, num_ranks: int) -> list[np.ndarray]:
    """Static spatial striping by initial x; each rank owns one contiguous strip."""
    order = np.argsort(frame.positions[:, 0], kind="stable")
    return [chunk for chunk in np.array_split(order, num_ranks)]


def run_pipeline(frame_source, config: InSituConfig, num_ranks: int,
                 out_dir, sim_config_hash: str = "", channel_depth: int = 4,
                 threads: int = 1, run_name: str | None = None):
    """Stream a simulation through the instrumented receive/setup/render loop.

    ``frame_source`` yields (step, ParticleFrame) at least at every cadence
    step. Returns (RunReport, records) after writing timings.csv, report.json
    and the per-view image tree under ``out_dir``.
    """
    if num_ranks < 1:
        raise ValueError("need at least one simulation rank")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    channels = [queue.Queue(maxsize=channel_depth) for _ in range(num_ranks)]
    active_views = set(config.view_windows)

    def step_is_viz(step: int) -> bool:
        return any(view_active(config, v, step) for v in active_views)

    def producer():
        assignment = None
        try:
            for step, frame in frame_source:
                if not step_is_viz(step):
                    continue
                if assignment is None:
                    assignment = _rank_assignment(frame, num_ranks)
                for rank, indices in enumerate(assignment):
                    shard = frame.select(indices)
                    channels[rank].put((step, formats.encode_frame(shard)))
            for rank in range(num_ranks):
                channels[rank].put(_SENTINEL_DONE)
        except Exception as exc:  # propagate failure to the consumer
            for rank in range(num_ranks):
                channels[rank].put(("error", repr(exc)))

    worker = threading.Thread(target=producer, name="sim-producer", daemon=True)
    t_start = time.perf_counter()
    worker.start()

    records: list[TimingRecord] = []
    images_per_view: dict[str, int] = {v: 0 for v in active_views}
    partial = False
    failure: str | None = None
    while True:
        t0 = time.perf_counter()
        messages = []
        for rank in range(num_ranks):
            messages.append(channels[rank].get())
        kinds = {m[0] for m in messages if m[0] in ("done", "error")}
        if "error" in kinds:
            partial = True
            failure = next(m[1] for m in messages if m[0] == "error")
            break
        if "done" in kinds:
            break
        step = messages[0][0]
        shards = [formats.decode_frame(payload) for _, payload in messages]
        merged, _parts = repartition(shards, num_partitions=num_ranks)
        receive_s = time.perf_counter() - t0
        paths, record = viz_step(merged, config, step, out_dir=out_dir,
                                 receive_s=receive_s, threads=threads)
        for camera in config.cameras:
            if camera.name in record.per_view_s and camera.name not in record.failed_views:
                images_per_view[camera.name] += 1
        records.append(record)
    worker.join(timeout=30.0)
    total_wall = time.perf_counter() - t_start

    report = report_from_records(
        records,
        run=run_name or config.run_label,
        config_hash=formats.content_hash(config.to_dict()),
        sim_config_hash=sim_config_hash,
        images_per_view=images_per_view,
        total_wall_s=total_wall,
        partial=partial,
    )
    formats.write_timings(out_dir / "timings.csv", records)
    formats.write_report(out_dir / "report.json", report)
    if failure is not None:
        (out_dir / "producer_error.txt").write_text(failure + "\n")
    return report, records


# ---------------------------------------------------------------------------
# Run comparison


@dataclass
class SavingsSummary:
    baseline_images: int
    informed_images: int
    image_savings: float  # 1 - informed/baseline
    baseline_render_s: float
    informed_render_s: float
    render_savings: float

    def to_dict(self) -> dict:
        return {
            "baseline_images": self.baseline_images,
            "informed_images": self.informed_images,
            "image_savings": self.image_savings,
            "baseline_render_s": self.baseline_render_s,
            "informed_render_s": self.informed_render_s,
            "render_savings": self.render_savings,
        }


def compare_runs(baseline: RunReport, informed: RunReport) -> SavingsSummary:
    """Image-count and render-time reduction of an informed config vs baseline."""
    if baseline.sim_config_hash != informed.sim_config_hash:
        raise ValueError("reports come from different simulation configs")

    def savings(base, new):
        return 1.0 - new / base if base > 0 else 0.0

    return SavingsSummary(
        baseline_images=baseline.num_images,
        informed_images=informed.num_images,
        image_savings=savings(baseline.num_images, informed.num_images),
        baseline_render_s=baseline.render_total_s,
        informed_render_s=informed.render_total_s,
        render_savings=savings(baseline.render_total_s, informed.render_total_s),
    )
