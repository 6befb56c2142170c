"""Run specification: one JSON document binding the whole workflow together.

A spec file overrides any subset of the desk-scale defaults; sections mirror
the pipeline stages (sim, data, gns, train, harvest, insitu). Every command is
deterministic given the spec seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .formats import FormatError, content_hash
from .mpm import SimConfig


@dataclass
class RunSpec:
    seed: int = 1
    out_dir: str = "runs/desk"
    sim: SimConfig = field(default_factory=SimConfig)
    num_trajectories: int = 8
    # surrogate hyperparameters
    gns_context: int = 5
    gns_latent: int = 64
    gns_blocks: int = 5
    gns_radius: float | None = None  # default: 1.5 x particle spacing
    # training schedule
    train_steps: int = 20_000
    train_batch: int = 2
    noise_std: float | None = None  # default: 1e-4 x domain scale
    lr: float = 1e-3
    lr_min: float = 1e-5
    val_every: int = 500
    checkpoint_every: int = 2000
    rollout_steps: int | None = None  # default: total_steps // snapshot_every
    # harvest parameters
    harvest_threshold: float = 0.2
    harvest_epsilon: float | None = None  # default: 2 x particle spacing
    cadence: int = 20
    # in situ run
    insitu_ranks: int = 3
    image_width: int = 320
    image_height: int = 240
    render_radius: float | None = None  # default: 0.7 x particle spacing

    def resolved_gns_radius(self) -> float:
        return self.gns_radius if self.gns_radius is not None else 1.5 * self.sim.particle_spacing

    def resolved_noise_std(self, stats=None) -> float:
        """Training-noise scale: explicit, else a fraction of the dataset's
        per-step velocity spread (noise larger than the signal swamps the
        normalized targets and destabilizes rollouts)."""
        if self.noise_std is not None:
            return self.noise_std
        if stats is not None:
            return 0.15 * float(np.mean(stats.vel_std))
        extent = max(hi - lo for lo, hi in self.sim.domain)
        return 1e-4 * extent

    def resolved_epsilon(self) -> float:
        return (self.harvest_epsilon if self.harvest_epsilon is not None
                else 2.0 * self.sim.particle_spacing)

    def resolved_render_radius(self) -> float:
        return (self.render_radius if self.render_radius is not None
                else 0.7 * self.sim.particle_spacing)

    def resolved_rollout_steps(self) -> int:
        if self.rollout_steps is not None:
            return self.rollout_steps
        return self.sim.total_steps // self.sim.snapshot_every

    def dt_ratio(self) -> int:
        return self.sim.snapshot_every

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "sim": self.sim.to_dict(),
            "data": {"num_trajectories": self.num_trajectories},
            "gns": {
                "context": self.gns_context,
                "latent": self.gns_latent,
                "blocks": self.gns_blocks,
                "radius": self.gns_radius,
            },
            "train": {
                "steps": self.train_steps,
                "batch": self.train_batch,
                "noise_std": self.noise_std,
                "lr": self.lr,
                "lr_min": self.lr_min,
                "val_every": self.val_every,
                "checkpoint_every": self.checkpoint_every,
                "rollout_steps": self.rollout_steps,
            },
            "harvest": {
                "threshold": self.harvest_threshold,
                "epsilon": self.harvest_epsilon,
                "cadence": self.cadence,
            },
            "insitu": {
                "ranks": self.insitu_ranks,
                "image_width": self.image_width,
                "image_height": self.image_height,
                "radius": self.render_radius,
            },
        }

    def spec_hash(self) -> str:
        return content_hash(self.to_dict())

    def sim_hash(self) -> str:
        return content_hash(self.sim.to_dict())


_SECTION_FIELDS = {
    "data": {"num_trajectories": "num_trajectories"},
    "gns": {
        "context": "gns_context", "latent": "gns_latent",
        "blocks": "gns_blocks", "radius": "gns_radius",
    },
    "train": {
        "steps": "train_steps", "batch": "train_batch", "noise_std": "noise_std",
        "lr": "lr", "lr_min": "lr_min", "val_every": "val_every",
        "checkpoint_every": "checkpoint_every", "rollout_steps": "rollout_steps",
    },
    "harvest": {
        "threshold": "harvest_threshold", "epsilon": "harvest_epsilon",
        "cadence": "cadence",
    },
    "insitu": {
        "ranks": "insitu_ranks", "image_width": "image_width",
        "image_height": "image_height", "radius": "render_radius",
    },
}


def spec_from_dict(doc: dict) -> RunSpec:
    spec = RunSpec()
    known_top = {"seed", "out_dir", "sim"} | set(_SECTION_FIELDS)
    unknown = set(doc) - known_top
    if unknown:
        raise ValueError(f"unknown spec fields: {sorted(unknown)}")
    if "seed" in doc:
        spec.seed = int(doc["seed"])
    if "out_dir" in doc:
        spec.out_dir = str(doc["out_dir"])
    if "sim" in doc:
        sim_doc = dict(doc["sim"])
        base = SimConfig().to_dict()
        unknown_sim = set(sim_doc) - set(base)
        if unknown_sim:
            raise ValueError(f"unknown sim fields: {sorted(unknown_sim)}")
        base.update(sim_doc)
        for key in ("gravity", "column_offset"):
            if isinstance(base.get(key), list):
                base[key] = tuple(base[key])
        if isinstance(base.get("domain"), list):
            base["domain"] = tuple(tuple(pair) for pair in base["domain"])
        spec.sim = SimConfig(**base)
    for section, mapping in _SECTION_FIELDS.items():
        if section not in doc:
            continue
        unknown_keys = set(doc[section]) - set(mapping)
        if unknown_keys:
            raise ValueError(f"unknown {section} fields: {sorted(unknown_keys)}")
        for key, attr in mapping.items():
            if key in doc[section]:
                setattr(spec, attr, doc[section][key])
    return spec


def load_spec(path) -> RunSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: malformed JSON: {exc}") from exc
    return spec_from_dict(doc)
