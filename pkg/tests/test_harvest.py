import numpy as np
import pytest

from granule_scope.frames import ParticleFrame, RolloutResult
from granule_scope.harvest import (
    ConfigValidationError,
    InSituConfig,
    PhaseDetection,
    build_config,
    detect_phases,
    eligible_steps,
    planned_view_counts,
    runout_metrics,
    scalar_range,
)
from granule_scope.render import preset_cameras, preset_colormap


BOUNDS = np.array([[0.0, 1.0], [0.0, 0.6]])


def rollout_from_positions(position_frames, dt=0.0025):
    origin = position_frames[0]
    frames = []
    for pos in position_frames:
        disp = np.linalg.norm(pos - origin, axis=1)
        frames.append(ParticleFrame(pos, np.zeros_like(pos), {"displacement": disp}))
    return RolloutResult(frames, dt=dt, provenance="surrogate", bounds=BOUNDS)


def static_rollout(n=5, num_frames=4):
    rng = np.random.default_rng(0)
    pos = rng.uniform(0.1, 0.5, size=(n, 2))
    return rollout_from_positions([pos.copy() for _ in range(num_frames)])


# ---------------------------------------------------------------------------
# scalar_range


def test_scalar_range_stationary_zero():
    roll = static_rollout()
    assert scalar_range(roll, "displacement") == (0.0, 0.0)


def test_scalar_range_matches_brute_force():
    rng = np.random.default_rng(1)
    frames = [rng.uniform(0.1, 0.9, size=(8, 2)) for _ in range(6)]
    roll = rollout_from_positions(frames)
    lo, hi = scalar_range(roll, "displacement")
    all_values = np.concatenate([f.scalars["displacement"] for f in roll.frames])
    assert lo == all_values.min()
    assert hi == all_values.max()
    assert lo <= hi


def test_scalar_range_empty_rollout_rejected():
    roll = RolloutResult([], dt=1.0, provenance="surrogate", bounds=BOUNDS)
    with pytest.raises(ValueError):
        scalar_range(roll, "displacement")


# ---------------------------------------------------------------------------
# runout_metrics


def test_runout_starts_at_zero():
    roll = static_rollout()
    metrics = runout_metrics(roll)
    assert metrics.runout[0] == 0.0


def test_runout_static_constant():
    roll = static_rollout(num_frames=6)
    metrics = runout_metrics(roll)
    assert np.array_equal(metrics.runout, np.zeros(6))
    assert np.all(metrics.height == metrics.height[0])
    assert np.array_equal(metrics.mobilized_fraction, np.zeros(6))


def test_runout_matches_brute_force_scan():
    rng = np.random.default_rng(2)
    frames = [rng.uniform(0.0, 1.0, size=(10, 2)) for _ in range(5)]
    roll = rollout_from_positions(frames)
    metrics = runout_metrics(roll, epsilon=0.05)
    edge = frames[0][:, 0].max()
    for i, pos in enumerate(frames):
        assert metrics.runout[i] == pos[:, 0].max() - edge
        assert metrics.height[i] == pos[:, 1].max()
        disp = np.linalg.norm(pos - frames[0], axis=1)
        assert metrics.mobilized_fraction[i] == np.mean(disp > 0.05)


# ---------------------------------------------------------------------------
# detect_phases


def mobilized_rollout(mobile_from_frame, num_frames=20, fraction=0.3, n=10):
    """Exactly `fraction` of particles displaced in frames >= mobile_from_frame."""
    base = np.linspace([0.1, 0.1], [0.4, 0.4], n)
    frames = []
    moved = base.copy()
    moved[: int(round(fraction * n))] += 0.05
    for k in range(num_frames):
        frames.append(base.copy() if k < mobile_from_frame else moved.copy())
    return rollout_from_positions(frames)


def test_detect_phases_instant_mobilization():
    # rollout resumed mid-collapse: frames carry displacement from the sim start
    n = 6
    pos = np.linspace([0.1, 0.1], [0.4, 0.4], n)
    frames = [ParticleFrame(pos.copy(), np.zeros((n, 2)),
                            {"displacement": np.full(n, 0.2)}) for _ in range(5)]
    roll = RolloutResult(frames, dt=0.0025, provenance="surrogate", bounds=BOUNDS)
    phases = detect_phases(roll, epsilon=0.01, threshold=0.5)
    assert phases.initiation_end_frame == 0
    assert phases.initiation_end_step == 0
    assert not phases.flagged


def test_detect_phases_never_reached_flagged():
    roll = static_rollout(num_frames=8)
    phases = detect_phases(roll, epsilon=0.01, threshold=0.2)
    assert phases.flagged
    assert phases.initiation_end_frame == 7
    assert phases.spreading_window == (0, phases.initiation_end_step)


def test_detect_phases_constructed_fixture():
    # frames >= 12 have 30% mobilized; threshold 0.25 -> frame 12 -> step 300
    roll = mobilized_rollout(12, fraction=0.3)
    phases = detect_phases(roll, epsilon=0.01, threshold=0.25, dt_ratio=25)
    assert phases.initiation_end_frame == 12
    assert phases.initiation_end_step == 300


def test_detect_phases_monotone_in_threshold():
    roll = mobilized_rollout(5, fraction=0.6, num_frames=30)
    previous = -1
    for threshold in (0.1, 0.3, 0.5, 0.7, 0.9):
        phases = detect_phases(roll, epsilon=0.01, threshold=threshold)
        assert phases.initiation_end_step >= previous
        previous = phases.initiation_end_step


def test_detect_phases_parameter_validation():
    roll = static_rollout()
    with pytest.raises(ValueError):
        detect_phases(roll, epsilon=0.0, threshold=0.5)
    with pytest.raises(ValueError):
        detect_phases(roll, epsilon=0.1, threshold=1.5)


# ---------------------------------------------------------------------------
# build_config


def cameras():
    return preset_cameras(BOUNDS)


def test_build_config_paper_schedule():
    phases = PhaseDetection(60, 1500, (1500, 5000), flagged=False)
    config = build_config(cameras(), phases, (0.0, 0.38), cadence=20,
                          total_steps=5000, particle_radius=0.005)
    assert config.view_windows["side"] == (0, 1500)
    assert config.view_windows["top"] == (1500, 5000)
    assert config.view_windows["aerial"] == (1500, 5000)
    assert config.colormap.lo == 0.0 and config.colormap.hi == 0.38
    assert planned_view_counts(config)["side"] == 76  # 0, 20, ..., 1500


def test_build_config_single_camera_full_window():
    phases = PhaseDetection(10, 250, (250, 1000), flagged=False)
    config = build_config(cameras()[:1], phases, (0.0, 0.1), cadence=20,
                          total_steps=1000, particle_radius=0.005)
    assert config.view_windows["side"] == (0, 1000)
    assert config.flagged


def test_build_config_flagged_phases_full_windows():
    phases = PhaseDetection(39, 975, (0, 975), flagged=True)
    config = build_config(cameras(), phases, (0.0, 0.0), cadence=10,
                          total_steps=975, particle_radius=0.005)
    for view in config.view_windows:
        assert config.view_windows[view] == (0, 975)


def test_invalid_window_rejected():
    config = InSituConfig(
        run_label="x",
        cameras=cameras(),
        colormap=preset_colormap("viridis", 0, 1),
        view_windows={"side": (100, 50)},
        cadence=20,
        particle_radius=0.005,
        total_steps=1000,
    )
    with pytest.raises(ConfigValidationError) as err:
        config.check()
    assert any("side" in field for field, _ in err.value.errors)


def test_window_outside_total_steps_rejected():
    config = InSituConfig(
        run_label="x",
        cameras=cameras(),
        colormap=preset_colormap("viridis", 0, 1),
        view_windows={"side": (0, 2000)},
        cadence=20,
        particle_radius=0.005,
        total_steps=1000,
    )
    errors = config.validate()
    assert errors


def test_unknown_view_name_rejected():
    config = InSituConfig(
        run_label="x",
        cameras=cameras(),
        colormap=preset_colormap("viridis", 0, 1),
        view_windows={"drone": (0, 100)},
        cadence=20,
        particle_radius=0.005,
        total_steps=1000,
    )
    assert any(f.startswith("view_windows.drone") for f, _ in config.validate())


def test_build_config_randomized_always_valid():
    rng = np.random.default_rng(7)
    for _ in range(50):
        total = int(rng.integers(1, 10_000))
        split = int(rng.integers(0, total + 1))
        phases = PhaseDetection(0, split, (split, total), flagged=bool(rng.random() < 0.2))
        k = int(rng.integers(1, 4))
        config = build_config(
            cameras()[:k], phases, (0.0, float(rng.uniform(0, 1))),
            cadence=int(rng.integers(1, 50)), total_steps=total,
            particle_radius=float(rng.uniform(0.001, 0.05)),
        )
        assert config.validate() == []


def test_eligible_steps_alignment():
    config = build_config(
        cameras(), PhaseDetection(3, 75, (75, 200), False), (0, 1),
        cadence=20, total_steps=200, particle_radius=0.01,
    )
    # side window [0, 75]: steps 0, 20, 40, 60; top window [75, 200]: 80 ... 200
    assert eligible_steps(config, "side") == [0, 20, 40, 60]
    assert eligible_steps(config, "top") == [80, 100, 120, 140, 160, 180, 200]
