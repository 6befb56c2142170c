"""Learned particle simulator: radius graphs, message passing, rollout, training.

The network operates in unit-timestep coordinates: "velocities" are per-step
displacements x_t - x_{t-1} and "accelerations" are second differences
x_{t+1} - 2 x_t + x_{t-1}, i.e. the inverse of semi-implicit Euler. The frame
timestep dt only enters when frames are written or read.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .frames import ParticleFrame, RolloutResult
from .neural import (
    GradientTape,
    Mlp,
    TapedMlp,
    OptimizerState,
    get_params,
    mlp_forward_batch,
    mlp_init,
    optimizer_init,
    optimizer_step,
    set_params,
)


class DivergenceError(RuntimeError):
    """Raised when a rollout or training step leaves the trusted numeric range."""


# ---------------------------------------------------------------------------
# Graph data


@dataclass
class GraphSample:
    """Directed graph over particles with per-node/per-edge/global features."""

    num_nodes: int
    senders: np.ndarray
    receivers: np.ndarray
    node_features: np.ndarray
    edge_features: np.ndarray
    global_features: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.senders.shape != self.receivers.shape:
            raise ValueError("senders/receivers length mismatch")
        if self.senders.size:
            if self.senders.max(initial=-1) >= self.num_nodes:
                raise ValueError("sender index out of range")
            if self.receivers.max(initial=-1) >= self.num_nodes:
                raise ValueError("receiver index out of range")

    @property
    def num_edges(self) -> int:
        return int(self.senders.size)


def build_graph(positions: np.ndarray, radius: float, bounds: np.ndarray):
    """Directed radius-graph connectivity: edge (i, j) iff i != j and |x_i - x_j| <= radius.

    Returns (senders, receivers), symmetric. Edges are ordered by receiver
    position then sender position (not by index), so per-node aggregation adds
    messages in a label-invariant order and relabeling particles permutes
    every downstream value bitwise.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if not np.all(np.isfinite(positions)):
        raise ValueError("non-finite positions")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if positions.shape[0] < 2:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy()
    pairs = cKDTree(positions).query_pairs(r=radius, output_type="ndarray")
    senders = np.concatenate([pairs[:, 0], pairs[:, 1]]).astype(np.int64)
    receivers = np.concatenate([pairs[:, 1], pairs[:, 0]]).astype(np.int64)
    dim = positions.shape[1]
    keys = [positions[senders, c] for c in reversed(range(dim))]
    keys += [positions[receivers, c] for c in reversed(range(dim))]
    order = np.lexsort(tuple(keys))
    return senders[order], receivers[order]


# ---------------------------------------------------------------------------
# Model


@dataclass
class Normalization:
    """Dataset statistics for unit-step velocities and accelerations, per axis."""

    vel_mean: np.ndarray
    vel_std: np.ndarray
    acc_mean: np.ndarray
    acc_std: np.ndarray

    def __post_init__(self):
        for name in ("vel_std", "acc_std"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(arr <= 0):
                raise ValueError(f"{name} entries must be positive")


@dataclass
class GnsModel:
    """Encoder -> M message-passing blocks -> decoder, with normalization stats."""

    node_encoder: Mlp
    edge_encoder: Mlp
    edge_blocks: list[Mlp]
    node_blocks: list[Mlp]
    decoder: Mlp
    stats: Normalization
    radius: float
    context: int  # velocity history length C
    latent: int
    dim: int

    @property
    def num_blocks(self) -> int:
        return len(self.edge_blocks)

    def mlps(self) -> list[Mlp]:
        """All constituent networks in canonical parameter-packing order."""
        nets = [self.node_encoder, self.edge_encoder]
        for e, v in zip(self.edge_blocks, self.node_blocks):
            nets.extend([e, v])
        nets.append(self.decoder)
        return nets

    @property
    def num_params(self) -> int:
        return sum(m.num_params for m in self.mlps())


def node_feature_size(dim: int, context: int) -> int:
    # C normalized velocities plus clipped distances to both walls per axis
    return context * dim + 2 * dim


def edge_feature_size(dim: int) -> int:
    # relative displacement / radius and its magnitude
    return dim + 1


def model_init(dim: int, radius: float, context: int = 5, latent: int = 64,
               num_blocks: int = 5, seed: int = 0,
               stats: Normalization | None = None) -> GnsModel:
    """Fresh model with deterministic per-MLP seeds derived from ``seed``."""
    if num_blocks < 1:
        raise ValueError("need at least one message-passing block")
    if stats is None:
        stats = Normalization(
            vel_mean=np.zeros(dim), vel_std=np.ones(dim),
            acc_mean=np.zeros(dim), acc_std=np.ones(dim),
        )
    seeds = iter(range(seed * 1000, seed * 1000 + 2 * num_blocks + 3))
    node_enc = mlp_init([node_feature_size(dim, context), latent, latent, latent], next(seeds))
    edge_enc = mlp_init([edge_feature_size(dim), latent, latent, latent], next(seeds))
    edge_blocks = [mlp_init([3 * latent, latent, latent, latent], next(seeds))
                   for _ in range(num_blocks)]
    node_blocks = [mlp_init([2 * latent, latent, latent, latent], next(seeds))
                   for _ in range(num_blocks)]
    decoder = mlp_init([latent, latent, latent, dim], next(seeds))
    return GnsModel(node_enc, edge_enc, edge_blocks, node_blocks, decoder,
                    stats, radius, context, latent, dim)


def model_params(model: GnsModel) -> np.ndarray:
    return np.concatenate([get_params(m) for m in model.mlps()])


def set_model_params(model: GnsModel, vec: np.ndarray) -> None:
    offset = 0
    for m in model.mlps():
        n = m.num_params
        set_params(m, vec[offset : offset + n])
        offset += n
    if offset != vec.size:
        raise ValueError("parameter vector length mismatch")


# ---------------------------------------------------------------------------
# Feature encoding


def encode_features(window: np.ndarray, bounds: np.ndarray, model: GnsModel,
                    connectivity=None) -> GraphSample:
    """Build the input graph for one prediction from a (C+1, n, dim) window.

    Node features: C unit-step velocities (normalized by the stored stats)
    followed by per-wall distances clipped to the connectivity radius. Edge
    features: relative displacement scaled by the radius and its magnitude.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 3 or window.shape[0] != model.context + 1:
        raise ValueError(
            f"window must have {model.context + 1} frames, got shape {window.shape}"
        )
    bounds = np.asarray(bounds, dtype=np.float64)
    positions = window[-1]
    n, dim = positions.shape
    radius = model.radius

    velocities = np.diff(window, axis=0)  # (C, n, dim) unit-step displacements
    vel_norm = (velocities - model.stats.vel_mean) / model.stats.vel_std
    vel_flat = np.moveaxis(vel_norm, 0, 1).reshape(n, model.context * dim)

    lo_dist = np.clip((positions - bounds[:, 0]) / radius, -1.0, 1.0)
    hi_dist = np.clip((bounds[:, 1] - positions) / radius, -1.0, 1.0)
    node_features = np.concatenate([vel_flat, lo_dist, hi_dist], axis=1)

    if connectivity is None:
        senders, receivers = build_graph(positions, radius, bounds)
    else:
        senders, receivers = connectivity
    rel = (positions[senders] - positions[receivers]) / radius
    dist = np.linalg.norm(rel, axis=1, keepdims=True)
    edge_features = np.concatenate([rel, dist], axis=1)

    return GraphSample(n, senders, receivers, node_features, edge_features)


# ---------------------------------------------------------------------------
# Message passing (inference path, plain numpy)


def aggregate_messages(messages: np.ndarray, receivers: np.ndarray, num_nodes: int) -> np.ndarray:
    """Superposition: out[i] = sum of messages over edges with receiver i."""
    out = np.zeros((num_nodes, messages.shape[1]))
    np.add.at(out, receivers, messages)
    return out


def message_passing_step(node_latent, edge_latent, senders, receivers,
                         edge_mlp: Mlp, node_mlp: Mlp):
    """One processor block.

    messages  e'_k   = edge_mlp(e_k, v_recv, v_send)
    aggregate ebar_i = sum over incoming e'_k
    update    v'_i   = node_mlp(ebar_i, v_i)
    with residual connections added to both latents afterwards.
    """
    if senders.size and max(senders.max(), receivers.max()) >= node_latent.shape[0]:
        raise ValueError("dangling edge index")
    edge_in = np.concatenate(
        [edge_latent, node_latent[receivers], node_latent[senders]], axis=1
    )
    messages = mlp_forward_batch(edge_mlp, edge_in)
    aggregated = aggregate_messages(messages, receivers, node_latent.shape[0])
    node_in = np.concatenate([aggregated, node_latent], axis=1)
    updated = mlp_forward_batch(node_mlp, node_in)
    return node_latent + updated, edge_latent + messages


def _forward_normalized(model: GnsModel, graph: GraphSample) -> np.ndarray:
    """Encoder -> processor -> decoder; returns normalized accelerations (n, dim)."""
    node_latent = mlp_forward_batch(model.node_encoder, graph.node_features)
    edge_latent = mlp_forward_batch(model.edge_encoder, graph.edge_features)
    for edge_mlp, node_mlp in zip(model.edge_blocks, model.node_blocks):
        node_latent, edge_latent = message_passing_step(
            node_latent, edge_latent, graph.senders, graph.receivers, edge_mlp, node_mlp
        )
    return mlp_forward_batch(model.decoder, node_latent)


def predict_accelerations(model: GnsModel, window: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Per-particle unit-step accelerations, de-normalized by the stored stats."""
    graph = encode_features(window, bounds, model)
    normalized = _forward_normalized(model, graph)
    acc = normalized * model.stats.acc_std + model.stats.acc_mean
    if not np.all(np.isfinite(acc)):
        raise DivergenceError("non-finite predicted acceleration")
    return acc


# ---------------------------------------------------------------------------
# Integration and rollout


def euler_update(position, velocity, acceleration, dt):
    """Semi-implicit Euler: velocity first, then position from the new velocity."""
    position = np.asarray(position, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    acceleration = np.asarray(acceleration, dtype=np.float64)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not (np.all(np.isfinite(position)) and np.all(np.isfinite(velocity))
            and np.all(np.isfinite(acceleration))):
        raise ValueError("non-finite integrator input")
    new_velocity = velocity + dt * acceleration
    new_position = position + dt * new_velocity
    return new_position, new_velocity


def rollout(model: GnsModel, initial_window: np.ndarray, num_steps: int,
            dt: float, bounds: np.ndarray) -> RolloutResult:
    """Autoregressive prediction: predict, integrate, rebuild the graph.

    Positions are clamped to the domain after each step; a predicted position
    more than 10% of the domain extent outside it aborts with a diagnostic.
    """
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    window = np.array(initial_window, dtype=np.float64)
    bounds = np.asarray(bounds, dtype=np.float64)
    extent = bounds[:, 1] - bounds[:, 0]
    guard_lo = bounds[:, 0] - 0.1 * extent
    guard_hi = bounds[:, 1] + 0.1 * extent

    origin = window[-1].copy()
    frames = [_make_frame(window, origin, dt)]
    for step in range(num_steps):
        acc = predict_accelerations(model, window, bounds)
        velocity = window[-1] - window[-2]
        new_pos, _ = euler_update(window[-1], velocity, acc, 1.0)
        if np.any(new_pos < guard_lo) or np.any(new_pos > guard_hi):
            raise DivergenceError(
                f"rollout diverged at step {step + 1}: position left the domain by >10%"
            )
        new_pos = np.clip(new_pos, bounds[:, 0], bounds[:, 1])
        window = np.concatenate([window[1:], new_pos[None]], axis=0)
        frames.append(_make_frame(window, origin, dt))
    return RolloutResult(frames=frames, dt=dt, provenance="surrogate", bounds=bounds)


def _make_frame(window, origin, dt) -> ParticleFrame:
    positions = window[-1]
    velocities = (window[-1] - window[-2]) / dt  # physical units
    displacement = np.linalg.norm(positions - origin, axis=1)
    return ParticleFrame(positions.copy(), velocities, {"displacement": displacement})


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainSample:
    """C+2 consecutive frame positions: C+1 input window plus the target frame."""

    positions: np.ndarray  # (C+2, n, dim)
    bounds: np.ndarray


def trajectory_samples(result: RolloutResult, context: int) -> list[TrainSample]:
    """All overlapping training windows from one ground-truth trajectory."""
    pos = np.stack([f.positions for f in result.frames])
    span = context + 2
    return [
        TrainSample(pos[i : i + span], result.bounds)
        for i in range(pos.shape[0] - span + 1)
    ]


def compute_normalization(rollouts: list[RolloutResult], noise_std: float = 0.0,
                          std_floor: float = 1e-12) -> Normalization:
    """Unit-step velocity/acceleration statistics over a trajectory set.

    The training-noise scale folds into the stds in quadrature so targets stay
    O(1) even on constant-acceleration data, where the raw std degenerates.
    """
    vels, accs = [], []
    for r in rollouts:
        pos = np.stack([f.positions for f in r.frames])
        vel = np.diff(pos, axis=0)
        vels.append(vel.reshape(-1, pos.shape[2]))
        accs.append(np.diff(vel, axis=0).reshape(-1, pos.shape[2]))
    vel = np.concatenate(vels)
    acc = np.concatenate(accs)
    return Normalization(
        vel_mean=vel.mean(axis=0),
        vel_std=np.maximum(np.sqrt(vel.std(axis=0) ** 2 + noise_std**2), std_floor),
        acc_mean=acc.mean(axis=0),
        acc_std=np.maximum(np.sqrt(acc.std(axis=0) ** 2 + noise_std**2), std_floor),
    )


def _taped_forward(model: GnsModel, graph: GraphSample, tape: GradientTape):
    """Tape-recorded forward pass; returns (normalized prediction node, taped nets)."""
    nets = {
        "node_enc": TapedMlp(tape, model.node_encoder),
        "edge_enc": TapedMlp(tape, model.edge_encoder),
        "edge_blocks": [TapedMlp(tape, m) for m in model.edge_blocks],
        "node_blocks": [TapedMlp(tape, m) for m in model.node_blocks],
        "decoder": TapedMlp(tape, model.decoder),
    }
    v = nets["node_enc"](tape.constant(graph.node_features))
    e = nets["edge_enc"](tape.constant(graph.edge_features))
    for edge_net, node_net in zip(nets["edge_blocks"], nets["node_blocks"]):
        edge_in = tape.concat([e, tape.gather(v, graph.receivers), tape.gather(v, graph.senders)])
        messages = edge_net(edge_in)
        aggregated = tape.segment_sum(messages, graph.receivers, graph.num_nodes)
        node_in = tape.concat([aggregated, v])
        updated = node_net(node_in)
        v = tape.add(v, updated)
        e = tape.add(e, messages)
    pred = nets["decoder"](v)
    return pred, nets


def _collect_grad(model: GnsModel, nets: dict) -> np.ndarray:
    ordered = [nets["node_enc"], nets["edge_enc"]]
    for e, v in zip(nets["edge_blocks"], nets["node_blocks"]):
        ordered.extend([e, v])
    ordered.append(nets["decoder"])
    return np.concatenate([n.grad_vector() for n in ordered])


def sample_loss_gradient(model: GnsModel, sample: TrainSample, noise_std: float,
                         rng: np.random.Generator):
    """Loss and parameter gradient for one window.

    Random-walk noise of final scale ``noise_std`` perturbs the input history;
    the target acceleration is the inverse semi-implicit Euler second
    difference against the clean next position, normalized by dataset stats.
    """
    context = model.context
    window = sample.positions[:-1].copy()
    target_pos = sample.positions[-1]
    if noise_std > 0:
        steps = rng.normal(0.0, noise_std / np.sqrt(context), size=window[1:].shape)
        window[1:] += np.cumsum(steps, axis=0)
    target_acc = target_pos - 2.0 * window[-1] + window[-2]
    target_norm = (target_acc - model.stats.acc_mean) / model.stats.acc_std

    graph = encode_features(window, sample.bounds, model)
    tape = GradientTape()
    pred, nets = _taped_forward(model, graph, tape)
    residual = tape.sub(pred, tape.constant(target_norm))
    loss = tape.mean_square(residual)
    tape.backprop(loss)
    return float(loss.value), _collect_grad(model, nets)


def train_step(model: GnsModel, opt_state: OptimizerState, batch: list[TrainSample],
               noise_std: float, rng: np.random.Generator) -> float:
    """One optimizer step on a batch of windows; returns the batch loss."""
    if not batch:
        raise ValueError("empty batch")
    total_loss = 0.0
    total_grad = np.zeros(model.num_params)
    for sample in batch:
        loss, grad = sample_loss_gradient(model, sample, noise_std, rng)
        total_loss += loss
        total_grad += grad
    total_loss /= len(batch)
    total_grad /= len(batch)
    if not np.isfinite(total_loss):
        raise DivergenceError("non-finite training loss")
    params, _ = optimizer_step(opt_state, model_params(model), total_grad)
    set_model_params(model, params)
    return total_loss


def one_step_mse(model: GnsModel, samples: list[TrainSample]) -> float:
    """Mean one-step position MSE over samples (physical window units)."""
    if not samples:
        raise ValueError("no validation samples")
    total = 0.0
    for sample in samples:
        window = sample.positions[:-1]
        acc = predict_accelerations(model, window, sample.bounds)
        velocity = window[-1] - window[-2]
        pred_pos, _ = euler_update(window[-1], velocity, acc, 1.0)
        total += float(np.mean((pred_pos - sample.positions[-1]) ** 2))
    return total / len(samples)


def validation_loss(model: GnsModel, samples: list[TrainSample]) -> float:
    """The training objective on clean windows: MSE on normalized accelerations."""
    if not samples:
        raise ValueError("no validation samples")
    total = 0.0
    for sample in samples:
        window = sample.positions[:-1]
        target = sample.positions[-1] - 2.0 * window[-1] + window[-2]
        target_norm = (target - model.stats.acc_mean) / model.stats.acc_std
        graph = encode_features(window, sample.bounds, model)
        pred = _forward_normalized(model, graph)
        total += float(np.mean((pred - target_norm) ** 2))
    return total / len(samples)


@dataclass
class TrainingLog:
    steps: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_steps: list[int] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    wall_s: float = 0.0


def train_model(model: GnsModel, train_samples: list[TrainSample],
                val_samples: list[TrainSample], steps: int, batch_size: int,
                noise_std: float, seed: int, opt_state: OptimizerState | None = None,
                val_every: int = 500, start_step: int = 0,
                callback=None) -> TrainingLog:
    """Seeded training loop with periodic validation; mutates ``model`` in place."""
    rng = np.random.default_rng(seed)
    if opt_state is None:
        opt_state = optimizer_init(model.num_params, decay_steps=max(steps, 1))
    opt_state.step = max(opt_state.step, start_step)
    log = TrainingLog()
    t0 = time.perf_counter()
    for k in range(steps):
        idx = rng.integers(0, len(train_samples), size=batch_size)
        batch = [train_samples[int(i)] for i in idx]
        loss = train_step(model, opt_state, batch, noise_std, rng)
        step_no = start_step + k + 1
        log.steps.append(step_no)
        log.train_loss.append(loss)
        if val_samples and (step_no % val_every == 0 or k == steps - 1):
            log.val_steps.append(step_no)
            log.val_loss.append(one_step_mse(model, val_samples))
            if callback is not None:
                callback(step_no, loss, log.val_loss[-1])
    log.wall_s = time.perf_counter() - t0
    return log
