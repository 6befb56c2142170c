"""Dense neural substrate: MLPs, reverse-mode gradients, adaptive-moment optimizer.

Everything runs in double precision so finite-difference gradient checks are
meaningful. The gradient machinery is a recording tape over whole-array
operations (linear layers, relu, concat, gather, segment-sum); recording order
is execution order, so the reverse sweep needs no explicit topological sort.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


# ---------------------------------------------------------------------------
# MLP container


@dataclass
class Mlp:
    """Fully connected network. weights[i] has shape (layer_sizes[i+1], layer_sizes[i])."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    # one activation per affine layer; hidden layers relu, output identity
    activations: list[str]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def mlp_init(layer_sizes: list[int], seed: int, output_activation: str = "identity") -> Mlp:
    """Deterministic init: weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs at least an input and an output size")
    if any(s <= 0 for s in sizes):
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    activations = ["relu"] * (len(sizes) - 2) + [output_activation]
    return Mlp(sizes, weights, biases, activations)


def mlp_forward(model: Mlp, x: np.ndarray) -> np.ndarray:
    """Plain forward pass; x is a vector of length layer_sizes[0]."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.layer_sizes[0],):
        raise ValueError(
            f"input length {x.shape} does not match layer_sizes[0]={model.layer_sizes[0]}"
        )
    for w, b, act in zip(model.weights, model.biases, model.activations):
        x = w @ x + b
        if act == "relu":
            x = np.maximum(x, 0.0)
    return x


def mlp_forward_batch(model: Mlp, x: np.ndarray) -> np.ndarray:
    """Forward pass over rows of x, shape (n, layer_sizes[0])."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"batch shape {x.shape} does not match input size")
    for w, b, act in zip(model.weights, model.biases, model.activations):
        x = x @ w.T + b
        if act == "relu":
            x = np.maximum(x, 0.0)
    return x


def get_params(model: Mlp) -> np.ndarray:
    """Flatten parameters: per layer, row-major weights then bias."""
    chunks = []
    for w, b in zip(model.weights, model.biases):
        chunks.append(w.ravel())
        chunks.append(b)
    return np.concatenate(chunks) if chunks else np.zeros(0)


def set_params(model: Mlp, vec: np.ndarray) -> None:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (model.num_params,):
        raise ValueError("parameter vector length mismatch")
    offset = 0
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        model.weights[i] = vec[offset : offset + w.size].reshape(w.shape).copy()
        offset += w.size
        model.biases[i] = vec[offset : offset + b.size].copy()
        offset += b.size


# ---------------------------------------------------------------------------
# Gradient tape


class Node:
    """One recorded array value; leaves are constants or parameters."""

    __slots__ = ("value", "grad", "parents", "backward", "recompute")

    def __init__(self, value, parents=(), backward=None, recompute=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward = backward
        self.recompute = recompute


class GradientTape:
    """Records whole-array operations for one forward pass.

    ``gradient(loss, params)`` runs the reverse sweep; ``replay()`` re-executes
    the recorded forward bit-for-bit (the recording is the computation).
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def constant(self, value: np.ndarray) -> Node:
        return self._record(Node(np.asarray(value, dtype=np.float64)))

    def param(self, value: np.ndarray) -> Node:
        # Same as constant, but callers keep the handle to read .grad.
        return self._record(Node(np.asarray(value, dtype=np.float64)))

    def linear(self, x: Node, w: Node, b: Node) -> Node:
        """y = x @ w.T + b with w of shape (out, in), x of shape (n, in)."""

        def backward(node):
            g = node.grad
            _accum(x, g @ w.value)
            _accum(w, g.T @ x.value)
            _accum(b, g.sum(axis=0))

        node = Node(
            x.value @ w.value.T + b.value,
            parents=(x, w, b),
            backward=backward,
            recompute=lambda: x.value @ w.value.T + b.value,
        )
        return self._record(node)

    def relu(self, x: Node) -> Node:
        def backward(node):
            _accum(x, node.grad * (x.value > 0.0))

        node = Node(
            np.maximum(x.value, 0.0),
            parents=(x,),
            backward=backward,
            recompute=lambda: np.maximum(x.value, 0.0),
        )
        return self._record(node)

    def add(self, a: Node, b: Node) -> Node:
        def backward(node):
            _accum(a, node.grad)
            _accum(b, node.grad)

        node = Node(
            a.value + b.value,
            parents=(a, b),
            backward=backward,
            recompute=lambda: a.value + b.value,
        )
        return self._record(node)

    def concat(self, parts: list[Node]) -> Node:
        """Concatenate along the feature axis (axis=1)."""
        widths = [p.value.shape[1] for p in parts]
        offsets = np.cumsum([0] + widths)

        def backward(node):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _accum(p, node.grad[:, lo:hi])

        node = Node(
            np.concatenate([p.value for p in parts], axis=1),
            parents=tuple(parts),
            backward=backward,
            recompute=lambda: np.concatenate([p.value for p in parts], axis=1),
        )
        return self._record(node)

    def gather(self, x: Node, index: np.ndarray) -> Node:
        """Row gather: out[k] = x[index[k]]."""
        index = np.asarray(index, dtype=np.int64)

        def backward(node):
            g = np.zeros_like(x.value)
            np.add.at(g, index, node.grad)
            _accum(x, g)

        node = Node(
            x.value[index],
            parents=(x,),
            backward=backward,
            recompute=lambda: x.value[index],
        )
        return self._record(node)

    def segment_sum(self, x: Node, index: np.ndarray, num_rows: int) -> Node:
        """out[i] = sum of x[k] over k with index[k] == i (empty segments are zero)."""
        index = np.asarray(index, dtype=np.int64)

        def forward():
            out = np.zeros((num_rows, x.value.shape[1]))
            np.add.at(out, index, x.value)
            return out

        def backward(node):
            _accum(x, node.grad[index])

        return self._record(Node(forward(), parents=(x,), backward=backward, recompute=forward))

    def mean_square(self, x: Node) -> Node:
        """Scalar mean of squared entries (the MSE once x is a residual)."""

        def backward(node):
            _accum(x, (2.0 / x.value.size) * x.value * node.grad)

        node = Node(
            np.mean(x.value**2),
            parents=(x,),
            backward=backward,
            recompute=lambda: np.mean(x.value**2),
        )
        return self._record(node)

    def sub(self, a: Node, b: Node) -> Node:
        def backward(node):
            _accum(a, node.grad)
            _accum(b, -node.grad)

        node = Node(
            a.value - b.value,
            parents=(a, b),
            backward=backward,
            recompute=lambda: a.value - b.value,
        )
        return self._record(node)

    def backprop(self, loss: Node) -> None:
        """Reverse sweep filling .grad on every node reachable from loss."""
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node.backward is not None:
                node.backward(node)

    def replay(self) -> None:
        """Re-execute the recorded forward pass in recording order."""
        for node in self.nodes:
            if node.recompute is not None:
                node.value = node.recompute()


def _accum(node: Node, grad: np.ndarray) -> None:
    if node.grad is None:
        node.grad = grad.copy() if isinstance(grad, np.ndarray) else np.asarray(grad)
    else:
        node.grad += grad


class TapedMlp:
    """An Mlp bound to a tape; keeps parameter nodes so gradients can be read back."""

    def __init__(self, tape: GradientTape, model: Mlp):
        self.tape = tape
        self.model = model
        self.weight_nodes = [tape.param(w) for w in model.weights]
        self.bias_nodes = [tape.param(b) for b in model.biases]

    def __call__(self, x: Node) -> Node:
        for w, b, act in zip(self.weight_nodes, self.bias_nodes, self.model.activations):
            x = self.tape.linear(x, w, b)
            if act == "relu":
                x = self.tape.relu(x)
        return x

    def grad_vector(self) -> np.ndarray:
        """Gradient in the same packing order as get_params."""
        chunks = []
        for w, b in zip(self.weight_nodes, self.bias_nodes):
            gw = w.grad if w.grad is not None else np.zeros_like(w.value)
            gb = b.grad if b.grad is not None else np.zeros_like(b.value)
            chunks.append(gw.ravel())
            chunks.append(gb)
        return np.concatenate(chunks)


def loss_gradient(model: Mlp, batch_inputs: np.ndarray, batch_targets: np.ndarray):
    """Gradient of the batch MSE w.r.t. every parameter.

    Returns (loss, grad) where loss = mean over all batch entries of the
    squared residual and grad has length model.num_params.
    """
    batch_inputs = np.atleast_2d(np.asarray(batch_inputs, dtype=np.float64))
    batch_targets = np.atleast_2d(np.asarray(batch_targets, dtype=np.float64))
    if batch_inputs.shape[0] == 0:
        raise ValueError("empty batch")
    if batch_inputs.shape[0] != batch_targets.shape[0]:
        raise ValueError("inputs and targets disagree on batch size")
    tape = GradientTape()
    net = TapedMlp(tape, model)
    pred = net(tape.constant(batch_inputs))
    residual = tape.sub(pred, tape.constant(batch_targets))
    loss = tape.mean_square(residual)
    tape.backprop(loss)
    return float(loss.value), net.grad_vector()


# ---------------------------------------------------------------------------
# Adaptive-moment optimizer with exponential learning-rate decay


@dataclass
class OptimizerState:
    """Adam moments plus an exponential lr schedule lr0 -> lr_min over decay_steps."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    lr_min: float = 1e-5
    decay_steps: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_init(num_params: int, lr: float = 1e-3, lr_min: float = 1e-5,
                   decay_steps: int = 5000) -> OptimizerState:
    return OptimizerState(
        m=np.zeros(num_params), v=np.zeros(num_params),
        lr=lr, lr_min=lr_min, decay_steps=decay_steps,
    )


def effective_lr(state: OptimizerState) -> float:
    """lr at the current step: lr_min + (lr - lr_min) * 0.1^(step/decay_steps)."""
    return state.lr_min + (state.lr - state.lr_min) * 0.1 ** (state.step / state.decay_steps)


def optimizer_step(state: OptimizerState, params: np.ndarray, gradient: np.ndarray):
    """One bias-corrected adaptive-moment update; returns (new_params, state)."""
    params = np.asarray(params, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if params.shape != gradient.shape or params.shape != state.m.shape:
        raise ValueError("parameter/gradient/moment shapes disagree")
    bad = ~np.isfinite(gradient)
    if bad.any():
        raise ValueError(f"non-finite gradient: {int(bad.sum())} of {gradient.size} entries")
    lr = effective_lr(state)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * gradient
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * gradient**2
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, state
