"""Persistent formats: trajectory store, model checkpoints, config documents,
timing CSVs, run reports, frame wire encoding, and a minimal ASCII VTP export.

Binary containers are little-endian with 64-bit floats, carry an explicit
version, and end in a CRC32 footer so truncation and corruption are distinct,
typed failures. All round trips are lossless.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
import zlib
from typing import TYPE_CHECKING

import numpy as np

from .frames import ParticleFrame, RolloutResult
from .gns import GnsModel, Normalization, model_params, set_model_params
from .harvest import ConfigValidationError, InSituConfig
from .neural import Mlp, mlp_init

if TYPE_CHECKING:
    from .pipeline import RunReport, TimingRecord


class FormatError(Exception):
    """Base class for malformed persistent data."""


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


_TRAJ_MAGIC = b"GSCOPETR"
_CKPT_MAGIC = b"GSCOPECK"
_VERSION = 1


def canonical_json_bytes(obj) -> bytes:
    """Stable serialization shared with the browser client: sorted keys,
    two-space indent, trailing newline."""
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json_bytes(obj)).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Trajectory container


def write_trajectory(path, roll: RolloutResult) -> None:
    if not roll.frames:
        raise ValueError("refusing to write an empty rollout")
    field_names = sorted(roll.frames[0].scalars)
    header = {
        "version": _VERSION,
        "num_frames": roll.num_frames,
        "num_particles": roll.num_particles,
        "dim": roll.frames[0].dim,
        "dt": roll.dt,
        "provenance": roll.provenance,
        "bounds": [[float(a), float(b)] for a, b in roll.bounds],
        "fields": field_names,
    }
    payload = io.BytesIO()
    header_bytes = canonical_json_bytes(header)
    payload.write(struct.pack("<I", len(header_bytes)))
    payload.write(header_bytes)
    for frame in roll.frames:
        payload.write(np.ascontiguousarray(frame.positions, dtype="<f8").tobytes())
        payload.write(np.ascontiguousarray(frame.velocities, dtype="<f8").tobytes())
        for name in field_names:
            payload.write(np.ascontiguousarray(frame.scalars[name], dtype="<f8").tobytes())
    body = payload.getvalue()
    with open(path, "wb") as fh:
        fh.write(_TRAJ_MAGIC)
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def _read_trajectory_head(path) -> tuple[dict, int]:
    """Header dict plus the byte offset where frame payload begins."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_TRAJ_MAGIC))
        if magic != _TRAJ_MAGIC:
            raise FormatError(f"{path}: not a trajectory file")
        raw = fh.read(4)
        if len(raw) < 4:
            raise TruncatedError(f"{path}: truncated before header")
        (hlen,) = struct.unpack("<I", raw)
        hbytes = fh.read(hlen)
        if len(hbytes) < hlen:
            raise TruncatedError(f"{path}: truncated header")
        try:
            header = json.loads(hbytes)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != _VERSION:
        raise VersionError(f"{path}: unsupported version {header.get('version')}")
    return header, len(_TRAJ_MAGIC) + 4 + hlen


def read_trajectory_header(path) -> dict:
    return _read_trajectory_head(path)[0]


def read_trajectory_frame(path, index: int) -> ParticleFrame:
    """Random access to one frame by seeking; skips the whole-file checksum."""
    header, payload_offset = _read_trajectory_head(path)
    if not 0 <= index < header["num_frames"]:
        raise IndexError(f"frame {index} out of range 0..{header['num_frames'] - 1}")
    n = header["num_particles"]
    dim = header["dim"]
    fields = header["fields"]
    frame_bytes = 8 * (2 * n * dim + n * len(fields))
    with open(path, "rb") as fh:
        fh.seek(payload_offset + index * frame_bytes)
        blob = fh.read(frame_bytes)
    if len(blob) < frame_bytes:
        raise TruncatedError(f"{path}: truncated at frame {index}")
    positions = np.frombuffer(blob, "<f8", n * dim, 0).reshape(n, dim).copy()
    velocities = np.frombuffer(blob, "<f8", n * dim, 8 * n * dim).reshape(n, dim).copy()
    scalars = {}
    offset = 16 * n * dim
    for name in fields:
        scalars[name] = np.frombuffer(blob, "<f8", n, offset).copy()
        offset += 8 * n
    return ParticleFrame(positions, velocities, scalars)


def read_trajectory(path) -> RolloutResult:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(_TRAJ_MAGIC)] != _TRAJ_MAGIC:
        raise FormatError(f"{path}: not a trajectory file")
    body = data[len(_TRAJ_MAGIC) : -4]
    if len(data) < len(_TRAJ_MAGIC) + 8:
        raise TruncatedError(f"{path}: file too short")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    (hlen,) = struct.unpack("<I", body[:4])
    if len(body) < 4 + hlen:
        raise TruncatedError(f"{path}: truncated header")
    try:
        header = json.loads(body[4 : 4 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != _VERSION:
        raise VersionError(f"{path}: unsupported version {header.get('version')}")
    n = header["num_particles"]
    dim = header["dim"]
    fields = header["fields"]
    frame_bytes = 8 * (2 * n * dim + n * len(fields))
    expected = 4 + hlen + header["num_frames"] * frame_bytes
    if len(body) < expected:
        raise TruncatedError(
            f"{path}: expected {expected} payload bytes, found {len(body)}"
        )
    if zlib.crc32(body) != stored_crc:
        raise ChecksumError(f"{path}: checksum mismatch")
    frames = []
    offset = 4 + hlen
    for _ in range(header["num_frames"]):
        positions = np.frombuffer(body, "<f8", n * dim, offset).reshape(n, dim).copy()
        offset += 8 * n * dim
        velocities = np.frombuffer(body, "<f8", n * dim, offset).reshape(n, dim).copy()
        offset += 8 * n * dim
        scalars = {}
        for name in fields:
            scalars[name] = np.frombuffer(body, "<f8", n, offset).copy()
            offset += 8 * n
        frames.append(ParticleFrame(positions, velocities, scalars))
    return RolloutResult(
        frames=frames,
        dt=header["dt"],
        provenance=header["provenance"],
        bounds=np.asarray(header["bounds"]),
    )


# ---------------------------------------------------------------------------
# Model checkpoints


def write_checkpoint(path, model: GnsModel, meta: dict | None = None) -> None:
    header = {
        "version": _VERSION,
        "dim": model.dim,
        "radius": model.radius,
        "context": model.context,
        "latent": model.latent,
        "num_blocks": model.num_blocks,
        "layer_sizes": {
            "node_encoder": model.node_encoder.layer_sizes,
            "edge_encoder": model.edge_encoder.layer_sizes,
            "edge_blocks": [m.layer_sizes for m in model.edge_blocks],
            "node_blocks": [m.layer_sizes for m in model.node_blocks],
            "decoder": model.decoder.layer_sizes,
        },
        "stats": {
            "vel_mean": list(model.stats.vel_mean),
            "vel_std": list(model.stats.vel_std),
            "acc_mean": list(model.stats.acc_mean),
            "acc_std": list(model.stats.acc_std),
        },
        "meta": meta or {},
    }
    header_bytes = canonical_json_bytes(header)
    params = np.ascontiguousarray(model_params(model), dtype="<f8").tobytes()
    body = struct.pack("<I", len(header_bytes)) + header_bytes + params
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def read_checkpoint(path) -> tuple[GnsModel, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    if len(data) < len(_CKPT_MAGIC) + 8:
        raise TruncatedError(f"{path}: file too short")
    body = data[len(_CKPT_MAGIC) : -4]
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != stored_crc:
        raise ChecksumError(f"{path}: checksum mismatch")
    (hlen,) = struct.unpack("<I", body[:4])
    if len(body) < 4 + hlen:
        raise TruncatedError(f"{path}: truncated header")
    try:
        header = json.loads(body[4 : 4 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != _VERSION:
        raise VersionError(f"{path}: unsupported version {header.get('version')}")
    sizes = header["layer_sizes"]
    stats = Normalization(
        vel_mean=np.asarray(header["stats"]["vel_mean"]),
        vel_std=np.asarray(header["stats"]["vel_std"]),
        acc_mean=np.asarray(header["stats"]["acc_mean"]),
        acc_std=np.asarray(header["stats"]["acc_std"]),
    )
    model = GnsModel(
        node_encoder=mlp_init(sizes["node_encoder"], 0),
        edge_encoder=mlp_init(sizes["edge_encoder"], 0),
        edge_blocks=[mlp_init(s, 0) for s in sizes["edge_blocks"]],
        node_blocks=[mlp_init(s, 0) for s in sizes["node_blocks"]],
        decoder=mlp_init(sizes["decoder"], 0),
        stats=stats,
        radius=header["radius"],
        context=header["context"],
        latent=header["latent"],
        dim=header["dim"],
    )
    expected = model.num_params
    blob = body[4 + hlen :]
    if len(blob) < 8 * expected:
        raise TruncatedError(f"{path}: parameter blob too short")
    set_model_params(model, np.frombuffer(blob, "<f8", expected))
    return model, header["meta"]


# ---------------------------------------------------------------------------
# Frame wire encoding (length-prefixed per rank on the in situ channel)


def encode_frame(frame: ParticleFrame) -> bytes:
    names = sorted(frame.scalars)
    buf = io.BytesIO()
    buf.write(struct.pack("<III", frame.num_particles, frame.dim, len(names)))
    for name in names:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    buf.write(np.ascontiguousarray(frame.ids, dtype="<i8").tobytes())
    buf.write(np.ascontiguousarray(frame.positions, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(frame.velocities, dtype="<f8").tobytes())
    for name in names:
        buf.write(np.ascontiguousarray(frame.scalars[name], dtype="<f8").tobytes())
    return buf.getvalue()


def decode_frame(data: bytes) -> ParticleFrame:
    if len(data) < 12:
        raise TruncatedError("frame message too short")
    n, dim, nfields = struct.unpack("<III", data[:12])
    offset = 12
    names = []
    for _ in range(nfields):
        (ln,) = struct.unpack("<I", data[offset : offset + 4])
        offset += 4
        names.append(data[offset : offset + ln].decode("utf-8"))
        offset += ln
    expected = offset + 8 * (n + 2 * n * dim + nfields * n)
    if len(data) < expected:
        raise TruncatedError("truncated frame message")
    ids = np.frombuffer(data, "<i8", n, offset).copy()
    offset += 8 * n
    positions = np.frombuffer(data, "<f8", n * dim, offset).reshape(n, dim).copy()
    offset += 8 * n * dim
    velocities = np.frombuffer(data, "<f8", n * dim, offset).reshape(n, dim).copy()
    offset += 8 * n * dim
    scalars = {}
    for name in names:
        scalars[name] = np.frombuffer(data, "<f8", n, offset).copy()
        offset += 8 * n
    return ParticleFrame(positions, velocities, scalars, ids=ids)


# ---------------------------------------------------------------------------
# Config documents


_CONFIG_KEYS = {
    "schema_version", "run_label", "total_steps", "cadence", "particle_radius",
    "flagged", "cameras", "colormap", "view_windows",
}
_CAMERA_KEYS = {"name", "eye", "look_at", "up", "fov_deg", "width", "height"}
_COLORMAP_KEYS = {"name", "stops", "lo", "hi"}


def validate_config_dict(doc) -> list[tuple[str, str]]:
    """Structural schema checks; unknown fields are rejected."""
    errors = []
    if not isinstance(doc, dict):
        return [("", "config document must be a JSON object")]
    unknown = set(doc) - _CONFIG_KEYS
    for key in sorted(unknown):
        errors.append((key, "unknown field"))
    missing = _CONFIG_KEYS - set(doc)
    for key in sorted(missing):
        errors.append((key, "missing required field"))
    if errors:
        return errors
    if doc["schema_version"] != 1:
        errors.append(("schema_version", f"unsupported version {doc['schema_version']}"))
    if not isinstance(doc["run_label"], str):
        errors.append(("run_label", "must be a string"))
    for key in ("total_steps", "cadence"):
        if not isinstance(doc[key], int) or isinstance(doc[key], bool):
            errors.append((key, "must be an integer"))
    if not isinstance(doc["particle_radius"], (int, float)) or isinstance(doc["particle_radius"], bool):
        errors.append(("particle_radius", "must be a number"))
    if not isinstance(doc["flagged"], bool):
        errors.append(("flagged", "must be a boolean"))
    if not isinstance(doc["cameras"], list):
        errors.append(("cameras", "must be a list"))
    else:
        for i, cam in enumerate(doc["cameras"]):
            if not isinstance(cam, dict):
                errors.append((f"cameras[{i}]", "must be an object"))
                continue
            for key in sorted(set(cam) ^ _CAMERA_KEYS):
                errors.append((f"cameras[{i}].{key}",
                               "unknown field" if key in cam else "missing required field"))
            for vec in ("eye", "look_at", "up"):
                value = cam.get(vec)
                if value is not None and (
                    not isinstance(value, list) or len(value) != 3
                    or not all(isinstance(v, (int, float)) for v in value)
                ):
                    errors.append((f"cameras[{i}].{vec}", "must be a list of 3 numbers"))
    cmap = doc["colormap"]
    if not isinstance(cmap, dict):
        errors.append(("colormap", "must be an object"))
    else:
        for key in sorted(set(cmap) ^ _COLORMAP_KEYS):
            errors.append((f"colormap.{key}",
                           "unknown field" if key in cmap else "missing required field"))
    if not isinstance(doc["view_windows"], dict):
        errors.append(("view_windows", "must be an object"))
    else:
        for view, window in doc["view_windows"].items():
            if (not isinstance(window, list) or len(window) != 2
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in window)):
                errors.append((f"view_windows.{view}", "must be [start, end] integers"))
    return errors


def parse_config_dict(doc: dict) -> InSituConfig:
    """Structural then semantic validation; raises ConfigValidationError."""
    errors = validate_config_dict(doc)
    if errors:
        raise ConfigValidationError(errors)
    try:
        config = InSituConfig.from_dict(doc)
    except ValueError as exc:
        raise ConfigValidationError([("", str(exc))]) from exc
    return config.check()


def config_bytes(config: InSituConfig) -> bytes:
    return canonical_json_bytes(config.to_dict())


def write_config(path, config: InSituConfig) -> None:
    with open(path, "wb") as fh:
        fh.write(config_bytes(config))


def read_config(path) -> InSituConfig:
    with open(path, "rb") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: malformed JSON: {exc}") from exc
    return parse_config_dict(doc)


# ---------------------------------------------------------------------------
# Timing CSV and run reports


TIMINGS_HEADER = ["step", "receive_s", "setup_s", "render_s", "particles"]


def write_timings(path, records: list["TimingRecord"]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMINGS_HEADER)
        for rec in records:
            writer.writerow([
                rec.step,
                repr(rec.receive_s),
                repr(rec.setup_s),
                repr(rec.render_s),
                rec.particles,
            ])


def read_timings(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TIMINGS_HEADER:
            raise FormatError(f"{path}: unexpected CSV header {header}")
        rows = []
        for row in reader:
            rows.append({
                "step": int(row[0]),
                "receive_s": float(row[1]),
                "setup_s": float(row[2]),
                "render_s": float(row[3]),
                "particles": int(row[4]),
            })
    return rows


def write_report(path, report: "RunReport") -> None:
    with open(path, "wb") as fh:
        fh.write(canonical_json_bytes(report.to_dict()))


def read_report(path) -> "RunReport":
    from .pipeline import RunReport

    with open(path, "rb") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: malformed JSON: {exc}") from exc
    return RunReport.from_dict(doc)


# ---------------------------------------------------------------------------
# VTP export (ASCII XML PolyData)


def export_vtp(frame: ParticleFrame, path, fieldname: str = "displacement") -> None:
    """One Verts cell per point, with the named scalar as PointData."""
    values = frame.scalars.get(fieldname)
    if values is None:
        raise KeyError(f"frame has no scalar field {fieldname!r}")
    n = frame.num_particles
    points = frame.positions3()
    fmt = "%.9e"

    def ascii_floats(arr):
        return " ".join(fmt % v for v in np.asarray(arr).ravel())

    lines = [
        '<?xml version="1.0"?>',
        '<VTKFile type="PolyData" version="0.1" byte_order="LittleEndian">',
        "  <PolyData>",
        f'    <Piece NumberOfPoints="{n}" NumberOfVerts="{n}">',
        "      <Points>",
        '        <DataArray type="Float64" NumberOfComponents="3" format="ascii">',
        "          " + ascii_floats(points),
        "        </DataArray>",
        "      </Points>",
        f'      <PointData Scalars="{fieldname}">',
        f'        <DataArray type="Float64" Name="{fieldname}" format="ascii">',
        "          " + ascii_floats(values),
        "        </DataArray>",
        "      </PointData>",
        "      <Verts>",
        '        <DataArray type="Int64" Name="connectivity" format="ascii">',
        "          " + " ".join(str(i) for i in range(n)),
        "        </DataArray>",
        '        <DataArray type="Int64" Name="offsets" format="ascii">',
        "          " + " ".join(str(i + 1) for i in range(n)),
        "        </DataArray>",
        "      </Verts>",
        "    </Piece>",
        "  </PolyData>",
        "</VTKFile>",
        "",
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines))
