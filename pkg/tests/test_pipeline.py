import numpy as np
import pytest

from granule_scope.formats import read_report, read_timings
from granule_scope.frames import ParticleFrame
from granule_scope.harvest import InSituConfig, PhaseDetection, build_config, planned_view_counts
from granule_scope.pipeline import (
    compare_runs,
    repartition,
    report_from_records,
    run_pipeline,
    viz_step,
    TimingRecord,
)
from granule_scope.render import Camera, preset_cameras, preset_colormap


BOUNDS = np.array([[0.0, 1.0], [0.0, 0.6]])


def frame_at(positions, displacement=None, ids=None):
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    disp = displacement if displacement is not None else np.zeros(n)
    return ParticleFrame(positions, np.zeros_like(positions),
                         {"displacement": np.asarray(disp, dtype=np.float64)}, ids=ids)


def small_cameras(width=48, height=36):
    return preset_cameras(BOUNDS, width=width, height=height)


def make_config(view_windows, total_steps, cadence=5, cameras=None):
    cams = cameras if cameras is not None else small_cameras()
    return InSituConfig(
        run_label="test-run",
        cameras=cams,
        colormap=preset_colormap("viridis", 0.0, 0.38),
        view_windows=view_windows,
        cadence=cadence,
        particle_radius=0.01,
        total_steps=total_steps,
    ).check()


def synthetic_source(total_steps, n=40, every=1, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.uniform([0.05, 0.05], [0.3, 0.5], size=(n, 2))
    drift = np.array([0.4 / max(total_steps, 1), 0.0])
    for step in range(0, total_steps + 1, every):
        pos = base + step * drift
        yield step, frame_at(pos, displacement=np.linalg.norm(pos - base, axis=1))


# ---------------------------------------------------------------------------
# repartition


def test_repartition_median_split_hand_case():
    frame = frame_at([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]])
    merged, parts = repartition([frame], num_partitions=2)
    assert len(parts) == 2
    sets = [set(p.indices.tolist()) for p in parts]
    assert {0, 1} in sets and {2, 3} in sets


def test_repartition_single_rank_identity():
    frame = frame_at(np.random.default_rng(0).uniform(size=(10, 2)))
    merged, parts = repartition([frame])
    assert len(parts) == 1
    assert np.array_equal(np.sort(parts[0].indices), np.arange(10))


def test_repartition_duplicate_ids_rejected():
    a = frame_at([[0.1, 0.1]], ids=np.array([5]))
    b = frame_at([[0.2, 0.2]], ids=np.array([5]))
    with pytest.raises(ValueError, match="duplicate"):
        repartition([a, b])


def test_repartition_disjoint_cover_randomized():
    rng = np.random.default_rng(12)
    positions = rng.uniform(0, 1, size=(1000, 2))
    frames = [
        frame_at(positions[i::4], ids=np.arange(i, 1000, 4)) for i in range(4)
    ]
    merged, parts = repartition(frames, num_partitions=8)
    assert len(parts) == 8
    # every particle in exactly one partition
    all_indices = np.concatenate([p.indices for p in parts])
    assert all_indices.size == 1000
    assert np.array_equal(np.sort(all_indices), np.arange(1000))
    # each particle inside its partition box
    for p in parts:
        pos = merged.positions[p.indices]
        assert np.all(pos >= p.box[:, 0] - 1e-12)
        assert np.all(pos <= p.box[:, 1] + 1e-12)
    # boxes pairwise disjoint up to shared faces
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            a, b = parts[i].box, parts[j].box
            separated = any(
                a[d, 1] <= b[d, 0] + 1e-12 or b[d, 1] <= a[d, 0] + 1e-12
                for d in range(2)
            )
            assert separated, f"boxes {i} and {j} overlap"


def test_repartition_brute_force_membership_audit():
    rng = np.random.default_rng(3)
    positions = rng.uniform(0, 1, size=(200, 2))
    frames = [frame_at(positions, ids=np.arange(200))]
    merged, parts = repartition(frames, num_partitions=5)
    # brute-force: each particle must be claimed exactly once
    claimed = np.zeros(200, dtype=int)
    for p in parts:
        claimed[p.indices] += 1
    assert np.all(claimed == 1)


# ---------------------------------------------------------------------------
# viz_step


def test_viz_step_cadence_miss():
    config = make_config({"side": (0, 100), "top": (0, 100), "aerial": (0, 100)},
                         total_steps=100, cadence=20)
    frame = frame_at(np.random.default_rng(0).uniform(0.1, 0.5, size=(20, 2)))
    paths, record = viz_step(frame, config, step=37)
    assert paths == []
    assert record.render_s == 0.0 and record.setup_s == 0.0


def test_viz_step_three_views_accounting(tmp_path):
    config = make_config({"side": (0, 100), "top": (0, 100), "aerial": (0, 100)},
                         total_steps=100, cadence=20)
    frame = frame_at(np.random.default_rng(0).uniform(0.1, 0.5, size=(20, 2)))
    paths, record = viz_step(frame, config, step=40, out_dir=tmp_path)
    assert len(paths) == 3
    assert set(record.per_view_s) == {"side", "top", "aerial"}
    assert record.render_s == pytest.approx(sum(record.per_view_s.values()), abs=1e-9)
    assert (tmp_path / "side" / "frame_000040.ppm").exists()


def test_viz_step_window_filtering():
    config = make_config({"side": (0, 50), "top": (60, 100)}, total_steps=100,
                         cadence=10, cameras=small_cameras()[:2])
    frame = frame_at(np.random.default_rng(1).uniform(0.1, 0.5, size=(10, 2)))
    paths, record = viz_step(frame, config, step=40)
    assert list(record.per_view_s) == ["side"]
    paths, record = viz_step(frame, config, step=70)
    assert list(record.per_view_s) == ["top"]


# ---------------------------------------------------------------------------
# run_pipeline


def test_run_pipeline_image_count_law(tmp_path):
    config = make_config(
        {"side": (0, 20), "top": (20, 40), "aerial": (0, 40)},
        total_steps=40, cadence=5,
    )
    report, records = run_pipeline(
        synthetic_source(40), config, num_ranks=2, out_dir=tmp_path,
        sim_config_hash="simhash",
    )
    planned = planned_view_counts(config)
    for view, count in planned.items():
        produced = len(list((tmp_path / view).glob("*.ppm"))) if (tmp_path / view).exists() else 0
        assert produced == count, f"{view}: {produced} != {count}"
    assert report.num_images == sum(planned.values())
    assert report.images_per_view == planned
    assert not report.partial


def test_run_pipeline_empty_windows(tmp_path):
    config = make_config({"side": (33, 34)}, total_steps=40, cadence=10,
                         cameras=small_cameras()[:1])
    report, records = run_pipeline(
        synthetic_source(40), config, num_ranks=2, out_dir=tmp_path,
        sim_config_hash="x",
    )
    assert records == []
    assert report.num_viz_steps == 0
    assert report.total_mean_s == 0.0
    assert (tmp_path / "report.json").exists()
    assert read_report(tmp_path / "report.json").num_images == 0


def test_run_pipeline_report_matches_raw_records(tmp_path):
    config = make_config({"side": (0, 40)}, total_steps=40, cadence=10,
                         cameras=small_cameras()[:1])
    report, records = run_pipeline(
        synthetic_source(40), config, num_ranks=3, out_dir=tmp_path,
        sim_config_hash="x",
    )
    rows = read_timings(tmp_path / "timings.csv")
    assert len(rows) == report.num_viz_steps == 5
    for stage, attr in (("receive_s", "receive"), ("setup_s", "setup"), ("render_s", "render")):
        mean = np.mean([r[stage] for r in rows])
        assert abs(mean - getattr(report, attr).mean_s) < 1e-12
    assert all(r["receive_s"] >= 0 and r["setup_s"] >= 0 and r["render_s"] >= 0 for r in rows)
    pct_sum = report.receive.pct + report.setup.pct + report.render.pct
    assert pct_sum == pytest.approx(100.0, abs=0.1)


def test_run_pipeline_producer_failure_flags_partial(tmp_path):
    def failing_source():
        yield 0, frame_at(np.random.default_rng(0).uniform(0.2, 0.4, size=(8, 2)))
        yield 10, frame_at(np.random.default_rng(1).uniform(0.2, 0.4, size=(8, 2)))
        raise RuntimeError("simulation blew up")

    config = make_config({"side": (0, 100)}, total_steps=100, cadence=10,
                         cameras=small_cameras()[:1])
    report, records = run_pipeline(
        failing_source(), config, num_ranks=2, out_dir=tmp_path, sim_config_hash="x",
    )
    assert report.partial
    assert (tmp_path / "producer_error.txt").exists()
    assert len(records) == 2  # the two delivered steps were processed


def test_run_pipeline_repeat_runs_consistent(tmp_path):
    config = make_config({"side": (0, 30)}, total_steps=30, cadence=10,
                         cameras=small_cameras()[:1])
    r1, rec1 = run_pipeline(synthetic_source(30), config, 2, tmp_path / "a", "x")
    r2, rec2 = run_pipeline(synthetic_source(30), config, 2, tmp_path / "b", "x")
    assert r1.num_viz_steps == r2.num_viz_steps
    assert r1.num_images == r2.num_images
    # identical image bytes for identical frames
    for img in (tmp_path / "a" / "side").glob("*.ppm"):
        twin = tmp_path / "b" / "side" / img.name
        assert img.read_bytes() == twin.read_bytes()


# ---------------------------------------------------------------------------
# compare_runs


def report_with(num_images, render_total, sim_hash="sim"):
    return report_from_records(
        [TimingRecord(step=0, receive_s=0.01, setup_s=0.001,
                      render_s=render_total, per_view_s={}, particles=10)],
        run="r", config_hash="c", sim_config_hash=sim_hash,
        images_per_view={"side": num_images}, total_wall_s=1.0,
    )


def test_compare_runs_counting_oracle():
    # full baseline: 3 views x 251 eligible steps at cadence 20 over 5000 steps
    full = make_config(
        {v: (0, 5000) for v in ("side", "top", "aerial")}, total_steps=5000, cadence=20,
    )
    planned = planned_view_counts(full)
    assert sum(planned.values()) == 753
    informed = make_config(
        {"side": (0, 1500), "top": (1500, 5000), "aerial": (1500, 5000)},
        total_steps=5000, cadence=20,
    )
    informed_planned = planned_view_counts(informed)
    assert informed_planned["side"] == 76
    baseline_report = report_with(sum(planned.values()), 10.0)
    informed_report = report_with(sum(informed_planned.values()), 4.0)
    summary = compare_runs(baseline_report, informed_report)
    assert summary.informed_images < summary.baseline_images
    assert summary.image_savings == pytest.approx(1 - (76 + 176 + 176) / 753)


def test_compare_runs_identical_zero_savings():
    a = report_with(100, 5.0)
    b = report_with(100, 5.0)
    summary = compare_runs(a, b)
    assert summary.image_savings == 0.0
    assert summary.render_savings == 0.0


def test_compare_runs_nothing_rendered():
    summary = compare_runs(report_with(100, 5.0), report_with(0, 0.0))
    assert summary.image_savings == 1.0
    assert summary.render_savings == 1.0


def test_compare_runs_mismatched_sim_rejected():
    with pytest.raises(ValueError, match="different simulation"):
        compare_runs(report_with(10, 1.0, "sim-a"), report_with(10, 1.0, "sim-b"))
