"""Run report rendering: matplotlib figures plus a delimited summary next to
the raw timing log.

Reads timings.csv / report.json from an instrumented run directory and writes
stage_times.png, stage_share.png, images_per_view.png, summary.csv, and a
loss_curve.png when a training curve is present.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import formats
from .pipeline import RunReport, SavingsSummary, compare_runs

_STAGES = ("receive", "setup", "render")
_COLORS = {"receive": "#4878cf", "setup": "#e8a33d", "render": "#6acc65"}


def render_run_report(run_dir, out_dir=None) -> list[Path]:
    """Figures + summary.csv for one run directory; returns written paths."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    report = formats.read_report(run_dir / "report.json")
    rows = formats.read_timings(run_dir / "timings.csv")
    written = []

    written.append(_stage_times_figure(rows, report, out_dir / "stage_times.png"))
    written.append(_stage_share_figure(report, out_dir / "stage_share.png"))
    written.append(_images_figure(report, out_dir / "images_per_view.png"))
    written.append(_summary_csv(report, out_dir / "summary.csv"))
    loss_curve = run_dir / "loss_curve.csv"
    if loss_curve.exists():
        written.append(render_loss_curve(loss_curve, out_dir / "loss_curve.png"))
    return written


def _stage_times_figure(rows, report: RunReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    if rows:
        steps = [r["step"] for r in rows]
        bottom = [0.0] * len(rows)
        for stage in _STAGES:
            values = [r[f"{stage}_s"] for r in rows]
            ax.bar(range(len(rows)), values, bottom=bottom, width=0.85,
                   label=stage.capitalize(), color=_COLORS[stage])
            bottom = [b + v for b, v in zip(bottom, values)]
        tick_every = max(1, len(rows) // 10)
        ax.set_xticks(range(0, len(rows), tick_every))
        ax.set_xticklabels([str(steps[i]) for i in range(0, len(rows), tick_every)])
    ax.set_xlabel("simulation step")
    ax.set_ylabel("time (s)")
    ax.set_title(f"{report.run}: per viz-step stage times")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _stage_share_figure(report: RunReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    stats = [getattr(report, stage) for stage in _STAGES]
    ax.bar([s.capitalize() for s in _STAGES],
           [st.mean_s for st in stats],
           yerr=[st.std_s for st in stats],
           color=[_COLORS[s] for s in _STAGES], capsize=4)
    for i, st in enumerate(stats):
        ax.annotate(f"{st.pct:.1f}%", (i, st.mean_s), ha="center",
                    va="bottom", fontsize=9)
    ax.set_ylabel("mean time per viz step (s)")
    ax.set_title(f"{report.run}: stage share (total {report.total_mean_s:.3g} s/step)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _images_figure(report: RunReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    views = sorted(report.images_per_view)
    ax.bar(views, [report.images_per_view[v] for v in views], color="#8172b2")
    ax.set_ylabel("images written")
    ax.set_title(f"{report.run}: {report.num_images} images over "
                 f"{report.num_viz_steps} viz steps")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _summary_csv(report: RunReport, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "mean_s", "std_s", "pct"])
        for stage in _STAGES:
            st = getattr(report, stage)
            writer.writerow([stage, repr(st.mean_s), repr(st.std_s), repr(st.pct)])
        writer.writerow(["total", repr(report.total_mean_s), "", ""])
    return path


def render_loss_curve(csv_path, out_path) -> Path:
    steps, train, val_steps, val = [], [], [], []
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            train.append(float(row["train_loss"]))
            if row.get("val_loss"):
                val_steps.append(int(row["step"]))
                val.append(float(row["val_loss"]))
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    ax.plot(steps, train, lw=0.8, label="train")
    if val:
        ax.plot(val_steps, val, "o-", ms=3, lw=1.2, label="validation")
    ax.set_yscale("log")
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def render_comparison(baseline_dir, informed_dir, out_dir) -> tuple[SavingsSummary, list[Path]]:
    """Baseline-vs-informed savings figure and JSON summary."""
    baseline = formats.read_report(Path(baseline_dir) / "report.json")
    informed = formats.read_report(Path(informed_dir) / "report.json")
    summary = compare_runs(baseline, informed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    fig, axes = plt.subplots(1, 2, figsize=(7.2, 3.2))
    axes[0].bar(["baseline", "informed"],
                [summary.baseline_images, summary.informed_images],
                color=["#bbbbbb", "#6acc65"])
    axes[0].set_title(f"images ({100 * summary.image_savings:.1f}% saved)")
    axes[1].bar(["baseline", "informed"],
                [summary.baseline_render_s, summary.informed_render_s],
                color=["#bbbbbb", "#6acc65"])
    axes[1].set_title(f"render time (s) ({100 * summary.render_savings:.1f}% saved)")
    fig.tight_layout()
    fig_path = out_dir / "savings.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    json_path = out_dir / "savings.json"
    with open(json_path, "wb") as fh:
        fh.write(formats.canonical_json_bytes(summary.to_dict()))
    return summary, [fig_path, json_path]
