import numpy as np
import pytest

from granule_scope.neural import (
    GradientTape,
    TapedMlp,
    effective_lr,
    get_params,
    loss_gradient,
    mlp_forward,
    mlp_forward_batch,
    mlp_init,
    optimizer_init,
    optimizer_step,
    set_params,
)


def mse_loss(model, inputs, targets):
    pred = mlp_forward_batch(model, inputs)
    return float(np.mean((pred - targets) ** 2))


def finite_difference_gradient(model, inputs, targets, h=1e-6):
    """Central-difference oracle, independent of the tape."""
    base = get_params(model)
    grad = np.zeros_like(base)
    for i in range(base.size):
        p = base.copy()
        p[i] = base[i] + h
        set_params(model, p)
        lp = mse_loss(model, inputs, targets)
        p[i] = base[i] - h
        set_params(model, p)
        lm = mse_loss(model, inputs, targets)
        grad[i] = (lp - lm) / (2.0 * h)
    set_params(model, base)
    return grad


def relu_kink_margin(model, inputs):
    """Smallest |preactivation| over the batch; finite differences are only
    valid when no relu input sits within the step size of its kink."""
    margin = np.inf
    x = np.asarray(inputs, dtype=np.float64)
    for w, b, act in zip(model.weights, model.biases, model.activations):
        x = x @ w.T + b
        if act == "relu":
            margin = min(margin, float(np.min(np.abs(x))))
            x = np.maximum(x, 0.0)
    return margin


# ---------------------------------------------------------------------------
# mlp_init


def test_init_deterministic():
    a = mlp_init([2, 2], seed=7)
    b = mlp_init([2, 2], seed=7)
    for wa, wb in zip(a.weights, b.weights):
        assert wa.tobytes() == wb.tobytes()
    for ba, bb in zip(a.biases, b.biases):
        assert ba.tobytes() == bb.tobytes()


def test_init_rejects_degenerate():
    with pytest.raises(ValueError):
        mlp_init([3], seed=0)
    with pytest.raises(ValueError):
        mlp_init([], seed=0)
    with pytest.raises(ValueError):
        mlp_init([4, 0, 2], seed=0)


def test_param_count_formula():
    # sum over layers of (n_i * n_{i+1} + n_{i+1}) = 4*8+8 + 8*3+3 = 67
    model = mlp_init([4, 8, 3], seed=1)
    sizes = model.layer_sizes
    expect = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    assert expect == 67
    assert model.num_params == expect
    assert get_params(model).size == expect


def test_params_roundtrip():
    model = mlp_init([3, 5, 2], seed=3)
    vec = get_params(model)
    other = mlp_init([3, 5, 2], seed=99)
    set_params(other, vec)
    assert np.array_equal(get_params(other), vec)


# ---------------------------------------------------------------------------
# mlp_forward


def test_forward_zero_net():
    model = mlp_init([3, 4, 2], seed=0)
    set_params(model, np.zeros(model.num_params))
    out = mlp_forward(model, np.array([1.0, -2.0, 3.0]))
    assert np.array_equal(out, np.zeros(2))


def test_forward_relu_clamp():
    model = mlp_init([1, 1, 1], seed=0)
    # identity weights, zero bias, relu on the hidden layer
    model.weights[0][:] = 1.0
    model.weights[1][:] = 1.0
    model.biases[0][:] = 0.0
    model.biases[1][:] = 0.0
    assert mlp_forward(model, np.array([-3.0]))[0] == 0.0
    assert mlp_forward(model, np.array([2.0]))[0] == 2.0


def test_forward_matches_handrolled_oracle():
    model = mlp_init([4, 6, 3], seed=11)
    rng = np.random.default_rng(5)
    x = rng.normal(size=4)
    # independent re-evaluation with explicit loops
    h = np.zeros(6)
    for i in range(6):
        acc = model.biases[0][i]
        for j in range(4):
            acc += model.weights[0][i, j] * x[j]
        h[i] = acc if acc > 0 else 0.0
    y = np.zeros(3)
    for i in range(3):
        acc = model.biases[1][i]
        for j in range(6):
            acc += model.weights[1][i, j] * h[j]
        y[i] = acc
    assert np.max(np.abs(mlp_forward(model, x) - y)) < 1e-12


def test_forward_dimension_mismatch():
    model = mlp_init([3, 2], seed=0)
    with pytest.raises(ValueError):
        mlp_forward(model, np.zeros(4))


# ---------------------------------------------------------------------------
# loss_gradient


def test_gradient_zero_residual():
    model = mlp_init([2, 2], seed=4)
    set_params(model, np.zeros(model.num_params))
    inputs = np.array([[1.0, 2.0], [0.5, -1.0]])
    targets = np.zeros((2, 2))
    loss, grad = loss_gradient(model, inputs, targets)
    assert loss == 0.0
    assert np.array_equal(grad, np.zeros(model.num_params))


def test_gradient_hand_linear_case():
    # y = w*x + b with w=0, b=0, batch {(1, 2)}: L = (2-0)^2, dL/dw = -4, dL/db = -4
    model = mlp_init([1, 1], seed=0)
    set_params(model, np.zeros(2))
    loss, grad = loss_gradient(model, np.array([[1.0]]), np.array([[2.0]]))
    assert loss == pytest.approx(4.0)
    assert grad[0] == pytest.approx(-4.0)
    assert grad[1] == pytest.approx(-4.0)


def test_gradient_matches_finite_differences():
    model = mlp_init([3, 5, 2], seed=21)
    rng = np.random.default_rng(2)
    inputs = rng.normal(size=(4, 3))
    targets = rng.normal(size=(4, 2))
    _, analytic = loss_gradient(model, inputs, targets)
    numeric = finite_difference_gradient(model, inputs, targets)
    denom = np.maximum(np.abs(numeric), 1e-3)
    assert np.max(np.abs(analytic - numeric) / denom) < 1e-5


def test_gradient_empty_batch_rejected():
    model = mlp_init([2, 2], seed=0)
    with pytest.raises(ValueError):
        loss_gradient(model, np.zeros((0, 2)), np.zeros((0, 2)))


def test_gradient_randomized_trials():
    # 20 random small nets against the central-difference oracle
    rng = np.random.default_rng(77)
    trials = 0
    while trials < 20:
        depth = rng.integers(2, 4)
        sizes = [int(rng.integers(1, 7)) for _ in range(depth + 1)]
        model = mlp_init(sizes, seed=int(rng.integers(0, 10_000)))
        n = int(rng.integers(1, 5))
        inputs = rng.normal(size=(n, sizes[0]))
        targets = rng.normal(size=(n, sizes[-1]))
        if relu_kink_margin(model, inputs) < 1e-4:
            continue  # finite differences cross a relu kink; redraw
        assert model.num_params <= 500
        _, analytic = loss_gradient(model, inputs, targets)
        numeric = finite_difference_gradient(model, inputs, targets)
        denom = np.maximum(np.abs(numeric), 1e-3)
        rel = np.max(np.abs(analytic - numeric) / denom)
        assert rel < 1e-5, f"trial {trials}: relative error {rel}"
        trials += 1


def test_tape_replay_reproduces_loss():
    model = mlp_init([3, 4, 1], seed=9)
    rng = np.random.default_rng(0)
    inputs = rng.normal(size=(5, 3))
    targets = rng.normal(size=(5, 1))
    tape = GradientTape()
    net = TapedMlp(tape, model)
    pred = net(tape.constant(inputs))
    residual = tape.sub(pred, tape.constant(targets))
    loss = tape.mean_square(residual)
    before = loss.value.tobytes()
    tape.replay()
    assert loss.value.tobytes() == before


# ---------------------------------------------------------------------------
# optimizer_step


def test_first_step_is_lr_times_sign():
    state = optimizer_init(3, lr=1e-3)
    params = np.array([1.0, 2.0, 3.0])
    grad = np.ones(3)
    new_params, state = optimizer_step(state, params, grad)
    assert state.step == 1
    assert np.max(np.abs((new_params - params) + 1e-3)) < 1e-9


def test_zero_gradient_leaves_params():
    # from a fresh state, a zero gradient moves nothing
    state = optimizer_init(2)
    params = np.array([1.0, -1.0])
    new_params, state = optimizer_step(state, params, np.zeros(2))
    assert np.array_equal(new_params, params)
    assert np.array_equal(state.m, np.zeros(2))


def test_zero_gradient_decays_moments():
    state = optimizer_init(2)
    state.m[:] = 0.5
    state.v[:] = 0.25
    _, state = optimizer_step(state, np.zeros(2), np.zeros(2))
    assert np.allclose(state.m, 0.5 * state.beta1)
    assert np.allclose(state.v, 0.25 * state.beta2)


def test_two_scripted_steps_match_hand_recursion():
    lr0, lr_min, decay = 1e-3, 1e-5, 5000
    b1, b2, eps = 0.9, 0.999, 1e-8
    state = optimizer_init(2, lr=lr0, lr_min=lr_min, decay_steps=decay)
    params = np.zeros(2)
    grads = [np.array([1.0, -1.0]), np.array([1.0, -1.0])]

    # hand recursion with the documented formulas
    m = np.zeros(2)
    v = np.zeros(2)
    expect = np.zeros(2)
    for t, g in enumerate(grads, start=1):
        lr_t = lr_min + (lr0 - lr_min) * 0.1 ** ((t - 1) / decay)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        expect = expect - lr_t * m_hat / (np.sqrt(v_hat) + eps)

    for g in grads:
        params, state = optimizer_step(state, params, g)
    assert np.max(np.abs(params - expect)) < 1e-12


def test_nonfinite_gradient_rejected():
    state = optimizer_init(2)
    with pytest.raises(ValueError, match="non-finite"):
        optimizer_step(state, np.zeros(2), np.array([np.nan, 1.0]))


def test_lr_decays_toward_floor():
    state = optimizer_init(1, lr=1e-3, lr_min=1e-5, decay_steps=100)
    assert effective_lr(state) == pytest.approx(1e-3)
    state.step = 100_000
    assert effective_lr(state) == pytest.approx(1e-5, rel=1e-6)


def test_step_does_not_increase_convex_loss():
    # convex 1-layer case with a small learning rate
    model = mlp_init([2, 1], seed=13)
    rng = np.random.default_rng(1)
    inputs = rng.normal(size=(8, 2))
    targets = rng.normal(size=(8, 1))
    loss0, grad = loss_gradient(model, inputs, targets)
    state = optimizer_init(model.num_params, lr=1e-4)
    new_params, _ = optimizer_step(state, get_params(model), grad)
    set_params(model, new_params)
    loss1, _ = loss_gradient(model, inputs, targets)
    assert loss1 <= loss0


def test_deterministic_training_trajectory():
    def run():
        model = mlp_init([2, 4, 1], seed=3)
        state = optimizer_init(model.num_params)
        rng = np.random.default_rng(8)
        inputs = rng.normal(size=(6, 2))
        targets = rng.normal(size=(6, 1))
        losses = []
        params = get_params(model)
        for _ in range(10):
            set_params(model, params)
            loss, grad = loss_gradient(model, inputs, targets)
            params, state = optimizer_step(state, params, grad)
            losses.append(loss)
        return np.array(losses), params

    la, pa = run()
    lb, pb = run()
    assert la.tobytes() == lb.tobytes()
    assert pa.tobytes() == pb.tobytes()
