"""Particle frames and rollouts: the unit of trajectory storage and wire transfer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParticleFrame:
    """Snapshot of all particles at one timestep.

    positions/velocities are (n, dim) float64; scalar fields are name -> (n,)
    float64 arrays. ``ids`` identifies particles across ranks and frames.
    """

    positions: np.ndarray
    velocities: np.ndarray
    scalars: dict[str, np.ndarray] = field(default_factory=dict)
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have the same shape")
        if self.ids is None:
            self.ids = np.arange(self.num_particles, dtype=np.int64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64)
        for name, values in self.scalars.items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != (self.num_particles,):
                raise ValueError(f"scalar field {name!r} has shape {arr.shape}")
            self.scalars[name] = arr

    @property
    def num_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def select(self, indices: np.ndarray) -> "ParticleFrame":
        """Sub-frame containing only the given particle indices."""
        return ParticleFrame(
            positions=self.positions[indices],
            velocities=self.velocities[indices],
            scalars={k: v[indices] for k, v in self.scalars.items()},
            ids=self.ids[indices],
        )

    def positions3(self) -> np.ndarray:
        """Positions lifted to 3-D (z = 0 for planar data)."""
        if self.dim == 3:
            return self.positions
        out = np.zeros((self.num_particles, 3))
        out[:, : self.dim] = self.positions
        return out


def merge_frames(frames: list[ParticleFrame]) -> ParticleFrame:
    """Concatenate per-rank frames into one coherent frame.

    Raises ValueError if the same particle id appears in more than one rank.
    """
    if not frames:
        raise ValueError("no frames to merge")
    ids = np.concatenate([f.ids for f in frames])
    unique = np.unique(ids)
    if unique.size != ids.size:
        raise ValueError("duplicate particle ids across ranks")
    scalar_names = set(frames[0].scalars)
    for f in frames[1:]:
        if set(f.scalars) != scalar_names:
            raise ValueError("rank frames do not share a scalar-field schema")
    return ParticleFrame(
        positions=np.concatenate([f.positions for f in frames]),
        velocities=np.concatenate([f.velocities for f in frames]),
        scalars={k: np.concatenate([f.scalars[k] for f in frames]) for k in scalar_names},
        ids=ids,
    )


@dataclass
class RolloutResult:
    """Ordered trajectory of frames with its timestep and provenance tag."""

    frames: list[ParticleFrame]
    dt: float
    provenance: str  # "surrogate" | "ground-truth"
    bounds: np.ndarray  # (dim, 2) domain bounds

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=np.float64)
        if self.frames:
            n = self.frames[0].num_particles
            for i, f in enumerate(self.frames):
                if f.num_particles != n:
                    raise ValueError(f"frame {i} particle count changed")
                if not np.all(np.isfinite(f.positions)):
                    raise ValueError(f"frame {i} has non-finite positions")

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def num_particles(self) -> int:
        return self.frames[0].num_particles if self.frames else 0

    @property
    def dim(self) -> int:
        return int(self.bounds.shape[0])
