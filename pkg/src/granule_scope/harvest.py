"""Metadata harvesting from a cheap surrogate rollout.

A rollout is scanned for the scalar range used to color-code particles, the
collapse phases that drive per-view time windows, and runout metrics. The
output is an InSituConfig handed to the full-resolution instrumented run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frames import RolloutResult
from .render import Camera, Colormap, preset_colormap


class ConfigValidationError(ValueError):
    """Carries (field, message) pairs for every violated invariant."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{f}: {m}" for f, m in errors))


@dataclass
class InSituConfig:
    """The metadata handoff artifact configuring an instrumented run."""

    run_label: str
    cameras: list[Camera]
    colormap: Colormap
    view_windows: dict[str, tuple[int, int]]  # view name -> [start, end] in sim steps
    cadence: int
    particle_radius: float
    total_steps: int
    flagged: bool = False  # set when harvesting had to fall back to full windows

    def validate(self) -> list[tuple[str, str]]:
        errors = []
        if not self.run_label:
            errors.append(("run_label", "must be a non-empty string"))
        if not self.cameras:
            errors.append(("cameras", "at least one camera required"))
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            errors.append(("cameras", "camera names must be unique"))
        if self.cadence < 1:
            errors.append(("cadence", "must be >= 1"))
        if self.total_steps < 0:
            errors.append(("total_steps", "must be >= 0"))
        if self.particle_radius <= 0:
            errors.append(("particle_radius", "must be positive"))
        for view, window in self.view_windows.items():
            key = f"view_windows.{view}"
            if view not in names:
                errors.append((key, "no camera with this name"))
            if len(window) != 2:
                errors.append((key, "window must be [start, end]"))
                continue
            start, end = window
            if start > end:
                errors.append((key, f"end {end} precedes start {start}"))
            if start < 0 or end > self.total_steps:
                errors.append((key, f"window [{start}, {end}] outside [0, {self.total_steps}]"))
        return errors

    def check(self) -> "InSituConfig":
        errors = self.validate()
        if errors:
            raise ConfigValidationError(errors)
        return self

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "run_label": self.run_label,
            "total_steps": int(self.total_steps),
            "cadence": int(self.cadence),
            "particle_radius": float(self.particle_radius),
            "flagged": bool(self.flagged),
            "cameras": [c.to_dict() for c in self.cameras],
            "colormap": self.colormap.to_dict(),
            "view_windows": {
                k: [int(v[0]), int(v[1])] for k, v in self.view_windows.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InSituConfig":
        cfg = cls(
            run_label=d["run_label"],
            cameras=[Camera.from_dict(c) for c in d["cameras"]],
            colormap=Colormap.from_dict(d["colormap"]),
            view_windows={k: (int(v[0]), int(v[1])) for k, v in d["view_windows"].items()},
            cadence=int(d["cadence"]),
            particle_radius=float(d["particle_radius"]),
            total_steps=int(d["total_steps"]),
            flagged=bool(d.get("flagged", False)),
        )
        return cfg


def eligible_steps(config: InSituConfig, view: str) -> list[int]:
    """Steps at which the named view renders: inside its window, on cadence."""
    start, end = config.view_windows[view]
    first = ((start + config.cadence - 1) // config.cadence) * config.cadence
    return list(range(first, min(end, config.total_steps) + 1, config.cadence))


def planned_view_counts(config: InSituConfig) -> dict[str, int]:
    """Image-count law: per view, |{s : s in window, s = 0 mod cadence}|."""
    return {view: len(eligible_steps(config, view)) for view in config.view_windows}


# ---------------------------------------------------------------------------
# Harvest operations


def scalar_range(roll: RolloutResult, fieldname: str) -> tuple[float, float]:
    """Global (min, max) of a scalar field over all frames and particles."""
    if not roll.frames:
        raise ValueError("empty rollout")
    lo = np.inf
    hi = -np.inf
    for frame in roll.frames:
        if fieldname not in frame.scalars:
            raise KeyError(f"field {fieldname!r} missing from frame")
        values = frame.scalars[fieldname]
        if values.size:
            lo = min(lo, float(values.min()))
            hi = max(hi, float(values.max()))
    return lo, hi


@dataclass
class RunoutMetrics:
    """Per-frame runout extent, height, and mobilized fraction."""

    runout: np.ndarray  # L(t): max horizontal coordinate minus initial column edge
    height: np.ndarray  # H(t): max vertical coordinate
    mobilized_fraction: np.ndarray  # share of particles with displacement > epsilon


def runout_metrics(roll: RolloutResult, epsilon: float = 1e-3) -> RunoutMetrics:
    if not roll.frames:
        raise ValueError("empty rollout")
    edge = float(roll.frames[0].positions[:, 0].max())
    runout = np.array([f.positions[:, 0].max() - edge for f in roll.frames])
    height = np.array([f.positions[:, 1].max() for f in roll.frames])
    mobilized = np.array([
        float(np.mean(f.scalars["displacement"] > epsilon)) if "displacement" in f.scalars
        else float(np.mean(np.linalg.norm(f.positions - roll.frames[0].positions, axis=1) > epsilon))
        for f in roll.frames
    ])
    return RunoutMetrics(runout, height, mobilized)


@dataclass
class PhaseDetection:
    """Initiation/spreading split, in surrogate frames and ground-truth steps."""

    initiation_end_frame: int
    initiation_end_step: int
    spreading_window: tuple[int, int]
    flagged: bool  # threshold never reached; full window returned


def detect_phases(roll: RolloutResult, epsilon: float, threshold: float,
                  dt_ratio: int = 25, total_steps: int | None = None) -> PhaseDetection:
    """First surrogate frame where the mobilized fraction reaches the threshold.

    Surrogate frame indices convert to ground-truth steps through the dt ratio
    (ground-truth steps per surrogate frame).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    metrics = runout_metrics(roll, epsilon=epsilon)
    if total_steps is None:
        total_steps = (roll.num_frames - 1) * dt_ratio
    hit = np.nonzero(metrics.mobilized_fraction >= threshold)[0]
    if hit.size == 0:
        final = roll.num_frames - 1
        return PhaseDetection(final, total_steps, (0, total_steps), flagged=True)
    frame_idx = int(hit[0])
    step = min(frame_idx * dt_ratio, total_steps)
    return PhaseDetection(frame_idx, step, (step, total_steps), flagged=False)


def build_config(cameras: list[Camera], phases: PhaseDetection,
                 value_range: tuple[float, float], cadence: int, total_steps: int,
                 particle_radius: float, run_label: str = "informed",
                 colormap_name: str = "viridis") -> InSituConfig:
    """Surrogate-informed schedule: side view early, remaining views late.

    A flagged phase detection (or a single camera) falls back to full windows.
    """
    if not cameras:
        raise ConfigValidationError([("cameras", "at least one camera required")])
    lo, hi = value_range
    if hi <= lo:
        hi = lo + 1e-9  # constant field; keep the colormap range valid
    split = phases.initiation_end_step
    windows = {}
    fallback = phases.flagged or len(cameras) < 2
    for cam in cameras:
        if fallback:
            windows[cam.name] = (0, total_steps)
        elif cam.name == "side":
            windows[cam.name] = (0, split)
        else:
            windows[cam.name] = (split, total_steps)
    config = InSituConfig(
        run_label=run_label,
        cameras=cameras,
        colormap=preset_colormap(colormap_name, lo, hi),
        view_windows=windows,
        cadence=cadence,
        particle_radius=particle_radius,
        total_steps=total_steps,
        flagged=fallback,
    )
    return config.check()
