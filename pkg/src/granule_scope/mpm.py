"""Explicit Material Point Method solver for granular column collapse.

Particle state lives on material points; a background grid with linear hat
shape functions solves momentum. 2-D (plane strain) is the primary
configuration; the same code runs small 3-D problems. Granular behavior is
linear elasticity capped by a Drucker-Prager yield surface with deviatoric
(non-associative) return mapping and an apex cap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, asdict

import numpy as np

from .frames import ParticleFrame, RolloutResult


class SimulationUnstable(RuntimeError):
    """Raised when the particle speed limit is exceeded; carries the step index."""

    def __init__(self, step: int, max_speed: float):
        super().__init__(f"simulation unstable at step {step}: max speed {max_speed:.3g} m/s")
        self.step = step


@dataclass
class SimConfig:
    """Column-collapse run description; validated on construction."""

    dim: int = 2
    dt: float = 1e-4
    total_steps: int = 5000
    gravity: tuple = (0.0, -9.81)
    material: str = "granular"  # "granular" | "elastic"
    youngs_modulus: float = 1e6
    poisson_ratio: float = 0.3
    density: float = 1800.0
    friction_angle_deg: float = 30.0
    cohesion: float = 0.0
    column_width: float = 0.2
    column_height: float = 0.4
    column_depth: float = 0.1  # 3-D only
    particle_spacing: float = 0.01
    domain: tuple = ((0.0, 1.0), (0.0, 0.6))
    cell_size: float = 0.02
    flip_ratio: float = 0.95
    floor_friction: float = 0.35
    floor_mode: str = "friction"  # "friction" | "noslip"
    boundary: str = "standard"  # "standard" | "free"
    column_offset: tuple | None = None  # lattice origin relative to domain lo
    snapshot_every: int = 25
    speed_limit: float = 50.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        bounds = self.bounds
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if bounds.shape != (self.dim, 2):
            raise ValueError("domain bounds must have one (lo, hi) pair per axis")
        if len(self.gravity) != self.dim:
            raise ValueError("gravity must match dim")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.particle_spacing <= 0 or self.cell_size <= 0:
            raise ValueError("spacing and cell size must be positive")
        if self.column_width <= 0 or self.column_height <= 0:
            raise ValueError("column geometry must have positive extent")
        if self.dim == 3 and self.column_depth <= 0:
            raise ValueError("column depth must be positive in 3-D")
        extent = bounds[:, 1] - bounds[:, 0]
        if np.any(extent <= 0):
            raise ValueError("domain bounds must be increasing")
        cells = extent / self.cell_size
        if np.any(np.abs(cells - np.round(cells)) > 1e-9):
            raise ValueError("domain extent must be an integer number of cells")
        column = [self.column_width, self.column_height] + (
            [self.column_depth] if self.dim == 3 else []
        )
        if np.any(np.asarray(column) > extent + 1e-12):
            raise ValueError("column geometry outside domain")
        # CFL bound against the p-wave speed of the elastic stiffness
        if self.dt > self.max_stable_dt():
            raise ValueError(
                f"dt={self.dt} exceeds the CFL bound {self.max_stable_dt():.3g} "
                f"(cell {self.cell_size}, E {self.youngs_modulus:g})"
            )
        if not 0.0 <= self.flip_ratio <= 1.0:
            raise ValueError("flip_ratio must lie in [0, 1]")

    def max_stable_dt(self) -> float:
        """Documented CFL bound: dt <= 0.5 h / c_p."""
        e, nu, rho = self.youngs_modulus, self.poisson_ratio, self.density
        c_p = np.sqrt(e * (1 - nu) / ((1 + nu) * (1 - 2 * nu) * rho))
        return 0.5 * self.cell_size / c_p

    @property
    def bounds(self) -> np.ndarray:
        return np.asarray(self.domain, dtype=np.float64)

    def lame(self):
        e, nu = self.youngs_modulus, self.poisson_ratio
        lam = e * nu / ((1 + nu) * (1 - 2 * nu))
        mu = e / (2 * (1 + nu))
        return lam, mu

    def drucker_prager(self):
        """Plane-strain matched coefficients: f = sqrt(J2) + q*p - k <= 0."""
        tan_phi = np.tan(np.radians(self.friction_angle_deg))
        denom = np.sqrt(9.0 + 12.0 * tan_phi**2)
        return 3.0 * tan_phi / denom, 3.0 * self.cohesion / denom

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MpmState:
    """SoA particle storage; stress is kept as full 3x3 tensors (plane strain in 2-D)."""

    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray
    volumes: np.ndarray
    stresses: np.ndarray  # (n, 3, 3)
    initial_positions: np.ndarray
    clamp_events: int = 0

    @property
    def num_particles(self) -> int:
        return self.positions.shape[0]

    def displacement(self) -> np.ndarray:
        return np.linalg.norm(self.positions - self.initial_positions, axis=1)

    def frame(self) -> ParticleFrame:
        return ParticleFrame(
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            scalars={"displacement": self.displacement()},
        )


class MpmGrid:
    """Background grid accumulators; cleared at the start of every step."""

    def __init__(self, bounds: np.ndarray, cell_size: float):
        self.bounds = np.asarray(bounds, dtype=np.float64)
        self.h = float(cell_size)
        extent = self.bounds[:, 1] - self.bounds[:, 0]
        self.shape = tuple(int(round(e / self.h)) + 1 for e in extent)
        self.dim = len(self.shape)
        n = int(np.prod(self.shape))
        self.mass = np.zeros(n)
        self.momentum = np.zeros((n, self.dim))
        self.force = np.zeros((n, self.dim))
        self.velocity = np.zeros((n, self.dim))
        self.velocity_old = np.zeros((n, self.dim))

    def clear(self):
        self.mass.fill(0.0)
        self.momentum.fill(0.0)
        self.force.fill(0.0)
        self.velocity.fill(0.0)
        self.velocity_old.fill(0.0)


def _corner_offsets(dim: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=dim)), dtype=np.int64)


def init_column(config: SimConfig) -> MpmState:
    """Regular particle lattice filling the column, resting at the left wall."""
    s = config.particle_spacing
    bounds = config.bounds
    sizes = [config.column_width, config.column_height]
    if config.dim == 3:
        sizes.append(config.column_depth)
    counts = [int(round(size / s)) for size in sizes]
    if any(c < 1 for c in counts):
        raise ValueError("column thinner than one particle spacing")
    offset = np.zeros(config.dim) if config.column_offset is None else np.asarray(
        config.column_offset, dtype=np.float64
    )
    axes = [
        bounds[d, 0] + offset[d] + (np.arange(counts[d]) + 0.5) * s
        for d in range(config.dim)
    ]
    grids = np.meshgrid(*axes, indexing="ij")
    positions = np.stack([g.ravel() for g in grids], axis=1)
    if np.any(positions > bounds[:, 1]) or np.any(positions < bounds[:, 0]):
        raise ValueError("column geometry outside domain")
    n = positions.shape[0]
    volume = s**config.dim
    return MpmState(
        positions=positions,
        velocities=np.zeros_like(positions),
        masses=np.full(n, config.density * volume),
        volumes=np.full(n, volume),
        stresses=np.zeros((n, 3, 3)),
        initial_positions=positions.copy(),
    )


def _weights(state: MpmState, grid: MpmGrid):
    """Base node, per-axis weights (1-fx, fx) and their gradients for every particle."""
    rel = (state.positions - grid.bounds[:, 0]) / grid.h
    base = np.floor(rel).astype(np.int64)
    # particles exactly on the upper face index the last cell
    base = np.minimum(base, np.array(grid.shape) - 2)
    base = np.maximum(base, 0)
    frac = rel - base
    return base, frac


def p2g(state: MpmState, grid: MpmGrid, config: SimConfig) -> None:
    """Scatter mass, momentum, stress forces and gravity to grid nodes."""
    if np.any(state.positions < grid.bounds[:, 0]) or np.any(
        state.positions > grid.bounds[:, 1]
    ):
        raise ValueError("particle outside grid")
    base, frac = _weights(state, grid)
    gravity = np.asarray(config.gravity)
    sigma = state.stresses[:, : grid.dim, : grid.dim]
    for offset in _corner_offsets(grid.dim):
        axis_w = np.where(offset == 1, frac, 1.0 - frac)  # (n, dim)
        axis_dw = np.where(offset == 1, 1.0, -1.0) / grid.h
        w = axis_w.prod(axis=1)
        grad = np.empty_like(axis_w)
        for d in range(grid.dim):
            others = [e for e in range(grid.dim) if e != d]
            grad[:, d] = axis_dw[d] * axis_w[:, others].prod(axis=1)
        idx = np.ravel_multi_index(tuple((base + offset).T), grid.shape)
        mw = state.masses * w
        np.add.at(grid.mass, idx, mw)
        np.add.at(grid.momentum, idx, mw[:, None] * state.velocities)
        f_int = -state.volumes[:, None] * np.einsum("nij,nj->ni", sigma, grad)
        np.add.at(grid.force, idx, f_int + mw[:, None] * gravity)


def grid_update(grid: MpmGrid, dt: float, config: SimConfig) -> None:
    """Nodal velocity update plus wall boundary conditions.

    Walls are free-slip; the floor additionally applies Coulomb friction: the
    tangential speed is reduced by friction * |removed normal velocity|,
    clamped at zero.
    """
    active = grid.mass > 0.0
    grid.velocity_old[active] = grid.momentum[active] / grid.mass[active, None]
    grid.velocity[active] = (
        grid.velocity_old[active]
        + dt * grid.force[active] / grid.mass[active, None]
    )
    if config.boundary == "standard":
        _apply_wall_conditions(grid, config)


def _apply_wall_conditions(grid: MpmGrid, config: SimConfig) -> None:
    vel = grid.velocity.reshape(grid.shape + (grid.dim,))
    for axis in range(grid.dim):
        for side, inward in ((0, 1.0), (-1, -1.0)):
            face = [slice(None)] * grid.dim
            face[axis] = side
            face_vel = vel[tuple(face)]
            is_floor = axis == 1 and side == 0
            if is_floor and config.floor_mode == "noslip":
                v_n = face_vel[..., axis] * inward
                face_vel[np.asarray(v_n < 0.0)] = 0.0
                vel[tuple(face)] = face_vel
                continue
            v_n = face_vel[..., axis] * inward
            outgoing = v_n < 0.0
            removed = np.where(outgoing, -v_n, 0.0)
            face_vel[..., axis] = np.where(outgoing, 0.0, face_vel[..., axis])
            if is_floor and config.floor_friction > 0.0:
                tangential = face_vel.copy()
                tangential[..., axis] = 0.0
                t_speed = np.linalg.norm(tangential, axis=-1)
                drop = config.floor_friction * removed
                scale = np.where(
                    t_speed > 0.0,
                    np.maximum(t_speed - drop, 0.0) / np.where(t_speed > 0, t_speed, 1.0),
                    0.0,
                )
                for d in range(grid.dim):
                    if d != axis:
                        face_vel[..., d] *= scale
            vel[tuple(face)] = face_vel


def g2p_and_advect(state: MpmState, grid: MpmGrid, dt: float, config: SimConfig) -> None:
    """Gather nodal velocities back to particles, advect, and update stress.

    Velocities blend FLIP and PIC at the configured ratio; positions move with
    the interpolated grid velocity.
    """
    base, frac = _weights(state, grid)
    n = state.num_particles
    v_pic = np.zeros((n, grid.dim))
    v_delta = np.zeros((n, grid.dim))
    grad_v = np.zeros((n, grid.dim, grid.dim))
    for offset in _corner_offsets(grid.dim):
        axis_w = np.where(offset == 1, frac, 1.0 - frac)
        axis_dw = np.where(offset == 1, 1.0, -1.0) / grid.h
        w = axis_w.prod(axis=1)
        grad = np.empty_like(axis_w)
        for d in range(grid.dim):
            others = [e for e in range(grid.dim) if e != d]
            grad[:, d] = axis_dw[d] * axis_w[:, others].prod(axis=1)
        idx = np.ravel_multi_index(tuple((base + offset).T), grid.shape)
        v_node = grid.velocity[idx]
        v_pic += w[:, None] * v_node
        v_delta += w[:, None] * (v_node - grid.velocity_old[idx])
        grad_v += v_node[:, :, None] * grad[:, None, :]

    flip = config.flip_ratio
    state.velocities = flip * (state.velocities + v_delta) + (1.0 - flip) * v_pic
    state.positions = state.positions + dt * v_pic

    lo = grid.bounds[:, 0]
    hi = grid.bounds[:, 1]
    margin = 1e-9 * (hi - lo)
    outside = (state.positions < lo) | (state.positions > hi)
    if outside.any():
        state.clamp_events += int(outside.any(axis=1).sum())
    state.positions = np.clip(state.positions, lo + margin, hi - margin)

    constitutive_update(state, grad_v, dt, config)
    state.volumes = state.volumes * (1.0 + dt * np.trace(grad_v, axis1=1, axis2=2))


def constitutive_update(state: MpmState, grad_v: np.ndarray, dt: float,
                        config: SimConfig) -> None:
    """Linear Hooke increment, then Drucker-Prager return mapping if granular."""
    dim = grad_v.shape[1]
    strain = 0.5 * (grad_v + np.transpose(grad_v, (0, 2, 1))) * dt
    strain3 = np.zeros((state.num_particles, 3, 3))
    strain3[:, :dim, :dim] = strain
    lam, mu = config.lame()
    trace = np.trace(strain3, axis1=1, axis2=2)
    state.stresses = state.stresses + (
        lam * trace[:, None, None] * np.eye(3) + 2.0 * mu * strain3
    )
    if config.material == "granular":
        state.stresses = drucker_prager_return(state.stresses, *config.drucker_prager())
    if not np.all(np.isfinite(state.stresses)):
        raise SimulationUnstable(-1, float("nan"))


def drucker_prager_return(stresses: np.ndarray, q_phi: float, k_c: float) -> np.ndarray:
    """Project trial stresses onto f = sqrt(J2) + q*p - k <= 0.

    Deviatoric (non-associative) return; states beyond the apex collapse to
    the hydrostatic apex point.
    """
    p = np.trace(stresses, axis1=1, axis2=2) / 3.0
    dev = stresses - p[:, None, None] * np.eye(3)
    j2 = 0.5 * np.einsum("nij,nij->n", dev, dev)
    sqrt_j2 = np.sqrt(j2)
    f = sqrt_j2 + q_phi * p - k_c
    yielding = f > 0.0
    if not yielding.any():
        return stresses
    target = k_c - q_phi * p  # admissible sqrt(J2) at this pressure
    beyond_apex = yielding & (target < 0.0)
    scale_dev = yielding & ~beyond_apex
    out = stresses.copy()
    safe = np.where(sqrt_j2 > 0.0, sqrt_j2, 1.0)
    ratio = np.where(scale_dev, target / safe, 1.0)
    out = p[:, None, None] * np.eye(3) + dev * ratio[:, None, None]
    apex_p = k_c / q_phi if q_phi > 0 else 0.0
    out[beyond_apex] = apex_p * np.eye(3)
    return out


def simulate(config: SimConfig):
    """Generator of (step, ParticleFrame) every snapshot_every steps, step 0 included."""
    state = init_column(config)
    grid = MpmGrid(config.bounds, config.cell_size)
    yield 0, state.frame()
    for step in range(1, config.total_steps + 1):
        grid.clear()
        p2g(state, grid, config)
        grid_update(grid, config.dt, config)
        g2p_and_advect(state, grid, config.dt, config)
        max_speed = float(np.max(np.linalg.norm(state.velocities, axis=1), initial=0.0))
        if max_speed > config.speed_limit:
            raise SimulationUnstable(step, max_speed)
        if step % config.snapshot_every == 0:
            yield step, state.frame()


def run(config: SimConfig) -> RolloutResult:
    """Full ground-truth run collected into a rollout at the snapshot cadence."""
    frames = [frame for _, frame in simulate(config)]
    return RolloutResult(
        frames=frames,
        dt=config.dt * config.snapshot_every,
        provenance="ground-truth",
        bounds=config.bounds,
    )
