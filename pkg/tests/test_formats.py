import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from granule_scope.formats import (
    ChecksumError,
    FormatError,
    TruncatedError,
    VersionError,
    canonical_json_bytes,
    config_bytes,
    content_hash,
    decode_frame,
    encode_frame,
    export_vtp,
    parse_config_dict,
    read_checkpoint,
    read_config,
    read_report,
    read_timings,
    read_trajectory,
    read_trajectory_header,
    validate_config_dict,
    write_checkpoint,
    write_config,
    write_report,
    write_timings,
    write_trajectory,
)
from granule_scope.frames import ParticleFrame, RolloutResult
from granule_scope.gns import model_init, model_params
from granule_scope.harvest import ConfigValidationError, InSituConfig, PhaseDetection, build_config
from granule_scope.pipeline import RunReport, StageStats, TimingRecord, report_from_records
from granule_scope.render import preset_cameras


BOUNDS = np.array([[0.0, 1.0], [0.0, 0.6]])


def sample_rollout(num_frames=10, n=7, dt=0.0025, seed=0):
    rng = np.random.default_rng(seed)
    frames = []
    base = rng.uniform(0.1, 0.9, size=(n, 2))
    for k in range(num_frames):
        pos = base + 0.001 * k
        frames.append(ParticleFrame(
            pos, rng.normal(size=(n, 2)),
            {"displacement": np.linalg.norm(pos - base, axis=1)},
        ))
    return RolloutResult(frames, dt=dt, provenance="surrogate", bounds=BOUNDS)


def sample_config():
    phases = PhaseDetection(60, 1500, (1500, 5000), flagged=False)
    return build_config(preset_cameras(BOUNDS), phases, (0.0, 0.38), cadence=20,
                        total_steps=5000, particle_radius=0.005)


# ---------------------------------------------------------------------------
# trajectory container


def test_trajectory_round_trip_bitwise(tmp_path):
    roll = sample_rollout()
    path = tmp_path / "roll.gstrj"
    write_trajectory(path, roll)
    back = read_trajectory(path)
    assert back.dt == roll.dt
    assert back.provenance == roll.provenance
    assert np.array_equal(back.bounds, roll.bounds)
    for a, b in zip(roll.frames, back.frames):
        assert a.positions.tobytes() == b.positions.tobytes()
        assert a.velocities.tobytes() == b.velocities.tobytes()
        assert a.scalars["displacement"].tobytes() == b.scalars["displacement"].tobytes()


def test_trajectory_header_dt_paper_cadence(tmp_path):
    roll = sample_rollout(dt=0.0025)
    path = tmp_path / "roll.gstrj"
    write_trajectory(path, roll)
    header = read_trajectory_header(path)
    assert header["dt"] == 0.0025
    assert header["num_frames"] == 10


def test_trajectory_truncation_detected(tmp_path):
    roll = sample_rollout()
    path = tmp_path / "roll.gstrj"
    write_trajectory(path, roll)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(TruncatedError):
        read_trajectory(path)


def test_trajectory_checksum_detected(tmp_path):
    roll = sample_rollout()
    path = tmp_path / "roll.gstrj"
    write_trajectory(path, roll)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        read_trajectory(path)


def test_trajectory_version_mismatch(tmp_path):
    import zlib, struct

    roll = sample_rollout()
    path = tmp_path / "roll.gstrj"
    write_trajectory(path, roll)
    data = path.read_bytes()
    magic, body = data[:8], bytearray(data[8:-4])
    idx = bytes(body).find(b'"version": 1')
    assert idx >= 0
    body[idx : idx + len(b'"version": 1')] = b'"version": 9'
    path.write_bytes(magic + bytes(body) + struct.pack("<I", zlib.crc32(bytes(body))))
    with pytest.raises(VersionError):
        read_trajectory(path)


def test_trajectory_wrong_magic(tmp_path):
    path = tmp_path / "nonsense.gstrj"
    path.write_bytes(b"NOTAFILE" + b"\x00" * 64)
    with pytest.raises(FormatError):
        read_trajectory(path)


def test_trajectory_fuzz_corpus(tmp_path):
    roll = sample_rollout(num_frames=3, n=4)
    path = tmp_path / "roll.gstrj"
    write_trajectory(path, roll)
    pristine = path.read_bytes()
    rng = np.random.default_rng(0)
    for trial in range(40):
        data = bytearray(pristine)
        mode = trial % 3
        if mode == 0:
            data = data[: int(rng.integers(1, len(data)))]
        elif mode == 1:
            data[int(rng.integers(0, len(data)))] ^= int(rng.integers(1, 256))
        else:
            pos = int(rng.integers(0, len(data)))
            data = data[:pos] + bytes(rng.integers(0, 256, size=8, dtype=np.uint8)) + data[pos:]
        path.write_bytes(bytes(data))
        try:
            read_trajectory(path)
        except FormatError:
            pass  # typed rejection is the contract


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tmp_path):
    model = model_init(2, radius=0.03, context=3, latent=8, num_blocks=2, seed=5)
    model.stats.acc_mean[:] = [0.1, -0.2]
    path = tmp_path / "model.gsckpt"
    write_checkpoint(path, model, meta={"step": 123, "seed": 7})
    back, meta = read_checkpoint(path)
    assert meta == {"step": 123, "seed": 7}
    assert model_params(back).tobytes() == model_params(model).tobytes()
    assert back.radius == model.radius and back.context == model.context
    assert np.array_equal(back.stats.acc_mean, model.stats.acc_mean)


def test_checkpoint_checksum(tmp_path):
    model = model_init(2, radius=0.03, context=2, latent=4, num_blocks=1, seed=0)
    path = tmp_path / "model.gsckpt"
    write_checkpoint(path, model)
    data = bytearray(path.read_bytes())
    data[-20] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        read_checkpoint(path)


# ---------------------------------------------------------------------------
# wire frames


def test_frame_wire_round_trip():
    rng = np.random.default_rng(3)
    frame = ParticleFrame(
        rng.normal(size=(9, 2)), rng.normal(size=(9, 2)),
        {"displacement": rng.uniform(size=9)}, ids=np.arange(100, 109),
    )
    back = decode_frame(encode_frame(frame))
    assert np.array_equal(back.ids, frame.ids)
    assert back.positions.tobytes() == frame.positions.tobytes()
    assert back.velocities.tobytes() == frame.velocities.tobytes()
    assert back.scalars["displacement"].tobytes() == frame.scalars["displacement"].tobytes()


def test_frame_wire_truncation():
    frame = ParticleFrame(np.zeros((4, 2)), np.zeros((4, 2)), {"displacement": np.zeros(4)})
    data = encode_frame(frame)
    with pytest.raises(TruncatedError):
        decode_frame(data[:-8])


# ---------------------------------------------------------------------------
# config documents


def test_config_round_trip(tmp_path):
    config = sample_config()
    path = tmp_path / "config.json"
    write_config(path, config)
    back = read_config(path)
    assert config_bytes(back) == config_bytes(config)
    assert back.view_windows == config.view_windows


def test_config_unknown_field_rejected():
    doc = json.loads(config_bytes(sample_config()))
    doc["surprise"] = 1
    errors = validate_config_dict(doc)
    assert ("surprise", "unknown field") in errors


def test_config_missing_field_rejected():
    doc = json.loads(config_bytes(sample_config()))
    del doc["cadence"]
    assert any(f == "cadence" for f, _ in validate_config_dict(doc))


def test_config_bad_window_field_path():
    doc = json.loads(config_bytes(sample_config()))
    doc["view_windows"]["side"] = [0, "lots"]
    with pytest.raises(ConfigValidationError) as err:
        parse_config_dict(doc)
    assert any(f == "view_windows.side" for f, _ in err.value.errors)


def test_config_semantic_errors_surface():
    doc = json.loads(config_bytes(sample_config()))
    doc["view_windows"]["side"] = [400, 100]
    with pytest.raises(ConfigValidationError) as err:
        parse_config_dict(doc)
    assert any("side" in f for f, _ in err.value.errors)


def test_config_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(FormatError):
        read_config(path)


def test_canonical_json_stable():
    a = canonical_json_bytes({"b": 1, "a": [1.5, 0.0025]})
    b = canonical_json_bytes({"a": [1.5, 0.0025], "b": 1})
    assert a == b
    assert content_hash({"x": 1}) == content_hash({"x": 1})


# ---------------------------------------------------------------------------
# timings and reports


def make_records(values):
    return [
        TimingRecord(step=i * 20, receive_s=r, setup_s=s, render_s=d,
                     per_view_s={"side": d}, particles=100)
        for i, (r, s, d) in enumerate(values)
    ]


def test_timings_round_trip(tmp_path):
    records = make_records([(0.052, 0.012, 0.163), (0.052, 0.013, 0.159)])
    path = tmp_path / "timings.csv"
    write_timings(path, records)
    rows = read_timings(path)
    assert len(rows) == 2
    assert rows[0]["receive_s"] == 0.052
    assert rows[1]["render_s"] == 0.159
    assert rows[0]["step"] == 0 and rows[1]["step"] == 20


def test_report_percentages_match_stage_table(tmp_path):
    # stage means 0.052 / 0.012 / 0.16 -> 23.2% / 5.3% / 71.5% within 0.1
    records = make_records([(0.052, 0.012, 0.16)] * 5)
    report = report_from_records(records, "run", "h", "sh", {"side": 5}, 1.0)
    assert report.receive.pct == pytest.approx(23.2, abs=0.1)
    assert report.setup.pct == pytest.approx(5.3, abs=0.1)
    assert report.render.pct == pytest.approx(71.5, abs=0.1)
    assert report.total_mean_s == pytest.approx(0.224)
    assert report.receive.pct + report.setup.pct + report.render.pct == pytest.approx(100.0, abs=0.1)


def test_report_round_trip_full_precision(tmp_path):
    records = make_records([(0.0521234567891234, 0.012, 0.163)] * 3)
    report = report_from_records(records, "run-a", "hash-a", "sim-a", {"side": 3}, 2.5)
    path = tmp_path / "report.json"
    write_report(path, report)
    back = read_report(path)
    assert back.receive.mean_s == report.receive.mean_s
    assert back.to_dict() == report.to_dict()


def test_empty_report_valid(tmp_path):
    report = report_from_records([], "empty", "h", "sh", {}, 0.0)
    assert report.num_viz_steps == 0
    assert report.total_mean_s == 0.0
    path = tmp_path / "report.json"
    write_report(path, report)
    assert read_report(path).num_images == 0


# ---------------------------------------------------------------------------
# VTP export


def test_vtp_single_particle(tmp_path):
    frame = ParticleFrame(np.zeros((1, 3)), np.zeros((1, 3)), {"displacement": np.zeros(1)})
    path = tmp_path / "frame.vtp"
    export_vtp(frame, path)
    text = path.read_text()
    assert 'NumberOfPoints="1"' in text
    root = ET.parse(path).getroot()
    scalar = root.find(".//PointData/DataArray")
    assert float(scalar.text.split()[0]) == 0.0


def test_vtp_point_count_matches(tmp_path):
    rng = np.random.default_rng(4)
    n = 23
    frame = ParticleFrame(rng.normal(size=(n, 2)), np.zeros((n, 2)),
                          {"displacement": rng.uniform(size=n)})
    path = tmp_path / "frame.vtp"
    export_vtp(frame, path)
    root = ET.parse(path).getroot()
    piece = root.find(".//Piece")
    assert piece.get("NumberOfPoints") == str(n)
    assert piece.get("NumberOfVerts") == str(n)


def test_vtp_reparse_coordinates(tmp_path):
    rng = np.random.default_rng(5)
    n = 11
    positions = rng.uniform(-3, 3, size=(n, 3))
    frame = ParticleFrame(positions, np.zeros((n, 3)), {"displacement": rng.uniform(size=n)})
    path = tmp_path / "frame.vtp"
    export_vtp(frame, path)
    root = ET.parse(path).getroot()  # independent XML parser
    coords = np.array([float(v) for v in root.find(".//Points/DataArray").text.split()])
    coords = coords.reshape(n, 3)
    # 6 significant digits
    assert np.max(np.abs(coords - positions) / np.maximum(np.abs(positions), 1e-12)) < 1e-6


# ---------------------------------------------------------------------------
# shared fixture corpus (also consumed by the browser client's test suite)


FIXTURE_DIR = __import__("pathlib").Path(__file__).parent / "fixtures" / "configs"


def test_valid_fixtures_parse_and_round_trip():
    for path in sorted(FIXTURE_DIR.glob("valid_*.json")):
        doc = json.loads(path.read_text())
        config = parse_config_dict(doc)
        # canonical serialization reproduces the fixture bytes exactly
        assert config_bytes(config) == path.read_bytes(), path.name


def test_invalid_fixtures_rejected():
    for path in sorted(FIXTURE_DIR.glob("invalid_*.json")):
        doc = json.loads(path.read_text())
        with pytest.raises(ConfigValidationError):
            parse_config_dict(doc)
