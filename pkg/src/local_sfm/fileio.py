"""On-disk formats: rasters, window manifests, pose JSON, traces, field checkpoints and PLY.

Binary rasters are little-endian with the dimensions in a fixed header;
loaders reject short files and trailing bytes.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import DimensionMismatch, InvalidSpec, MalformedHeader, MissingFile
from .frames import FrameSet, default_root
from .geometry import CameraIntrinsics, ScaledPose

DEPTH_MAGIC = b"LSFMDEP1"
CORR_MAGIC = b"LSFMCOR1"
FIELD_MAGIC = b"LSFMFLD1"
_RASTER_HEADER = struct.Struct("<8sII")
_FIELD_HEADER = struct.Struct("<8sIIIddI")
_ACTIVATIONS = {"softplus": 1}


def _read(path: Path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"file not found: {path}")
    return path.read_bytes()


def _write_raster(path, magic: bytes, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype="<f4")
    H, W = array.shape[:2]
    Path(path).write_bytes(_RASTER_HEADER.pack(magic, H, W) + array.tobytes())


def _read_raster(path, magic: bytes, channels: int) -> np.ndarray:
    data = _read(path)
    if len(data) < _RASTER_HEADER.size:
        raise MalformedHeader(f"{path}: file shorter than its header")
    tag, H, W = _RASTER_HEADER.unpack_from(data)
    if tag != magic:
        raise MalformedHeader(f"{path}: bad magic {tag!r}")
    expected = _RASTER_HEADER.size + 4 * H * W * channels
    if len(data) != expected:
        raise MalformedHeader(f"{path}: expected {expected} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", offset=_RASTER_HEADER.size).astype(np.float32)
    return arr.reshape((H, W, channels) if channels > 1 else (H, W))


def save_depth(path, depth: np.ndarray) -> None:
    _write_raster(path, DEPTH_MAGIC, depth)


def load_depth(path) -> np.ndarray:
    return _read_raster(path, DEPTH_MAGIC, 1)


def save_correspondence(path, corr: np.ndarray) -> None:
    if corr.ndim != 3 or corr.shape[2] != 3:
        raise DimensionMismatch("correspondence maps are (H, W, 3) rasters")
    _write_raster(path, CORR_MAGIC, corr)


def load_correspondence(path) -> np.ndarray:
    return _read_raster(path, CORR_MAGIC, 3)


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path) -> dict:
    try:
        return json.loads(_read(path).decode())
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# window manifest


def save_window(frames: FrameSet, out_dir, gt_depths: list[np.ndarray] | None = None) -> Path:
    """Write a frame window in ingest format; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, fid in enumerate(frames.frame_ids):
        _write_json(out / f"{fid}_intrinsics.json", frames.intrinsics[k].to_dict())
        save_depth(out / f"{fid}_depth.bin", frames.depths[k])
        entry = {"id": fid, "intrinsics": f"{fid}_intrinsics.json", "depth": f"{fid}_depth.bin"}
        if gt_depths is not None:
            save_depth(out / f"{fid}_gt_depth.bin", gt_depths[k])
            entry["gt_depth"] = f"{fid}_gt_depth.bin"
        entries.append(entry)
    pairs = []
    for i, j in sorted(frames.correspondences):
        name = f"corr_{i}_{j}.bin"
        save_correspondence(out / name, frames.correspondences[(i, j)])
        pairs.append({"i": i, "j": j, "path": name})
    manifest = {"frames": entries, "correspondences": pairs, "root": frames.root, "mode": frames.mode}
    path = out / "manifest.json"
    _write_json(path, manifest)
    return path


def load_window(path, require_all_pairs: bool = True) -> FrameSet:
    """Load a manifest and every raster it references, validating dimensions."""
    path = Path(path)
    manifest = _read_json(path)
    base = path.parent
    try:
        entries = manifest["frames"]
        pairs = manifest.get("correspondences", [])
    except (KeyError, TypeError) as exc:
        raise InvalidSpec(f"{path}: manifest needs a frames list") from exc
    n = len(entries)
    if n < 2:
        raise InvalidSpec(f"{path}: need at least two frames")
    intrinsics, depths, ids = [], [], []
    for entry in entries:
        try:
            K = CameraIntrinsics.from_dict(_read_json(base / entry["intrinsics"]))
            depth = load_depth(base / entry["depth"])
        except KeyError as exc:
            raise InvalidSpec(f"{path}: frame entry lacks {exc}") from exc
        if depth.shape != (K.height, K.width):
            raise DimensionMismatch(
                f"frame {entry['id']}: depth is {depth.shape[1]}x{depth.shape[0]}, intrinsics say {K.width}x{K.height}"
            )
        intrinsics.append(K)
        depths.append(depth)
        ids.append(str(entry["id"]))
    try:
        listed = {(int(p["i"]), int(p["j"])): p["path"] for p in pairs}
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"{path}: malformed correspondence entry") from exc
    corr = {}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if (i, j) not in listed:
                if require_all_pairs:
                    raise MissingFile(f"manifest has no correspondence map for pair ({i}, {j})")
                continue
            file = base / listed[(i, j)]
            if not file.exists():
                raise MissingFile(f"correspondence map for pair ({i}, {j}) not found: {file}")
            c = load_correspondence(file)
            if c.shape[:2] != depths[i].shape:
                raise DimensionMismatch(f"pair ({i}, {j}): correspondence raster does not match frame {i}")
            corr[(i, j)] = c
    mode = manifest.get("mode", "rgb")
    if mode not in ("rgb", "rgbd"):
        raise InvalidSpec(f"{path}: unknown mode {mode!r}")
    root = int(manifest.get("root", default_root(n)))
    return FrameSet(intrinsics, depths, corr, root, ids, mode)


def load_gt_depths(path) -> list[np.ndarray] | None:
    """Ground-truth depth rasters named by the manifest, or ``None`` if any is absent."""
    path = Path(path)
    entries = _read_json(path)["frames"]
    if not all("gt_depth" in e for e in entries):
        return None
    return [load_depth(path.parent / e["gt_depth"]) for e in entries]


# ---------------------------------------------------------------------------
# poses and traces


def save_poses(path, frames: FrameSet, poses: dict, adjustments, score: int | None = None, mode: str = "rgb"):
    """Support-frame metric poses as JSON; the root is the identity and is only named."""
    out = []
    for f in frames.supports:
        p = poses[f]
        entry = {
            "frame_id": frames.frame_ids[f],
            "index": f,
            "R": p.R.ravel().tolist(),
            "t": p.t.tolist(),
            "depth_adjustment": float(adjustments[f]),
        }
        if score is not None:
            entry["certified_score"] = int(score)
        out.append(entry)
    payload = {"root": frames.root, "root_id": frames.frame_ids[frames.root], "mode": mode, "poses": out}
    _write_json(path, payload)


def load_poses(path, n_frames: int) -> tuple[list[ScaledPose], np.ndarray, dict]:
    """Metric poses for every frame (root = identity), adjustments and the raw payload."""
    payload = _read_json(path)
    poses = [ScaledPose.identity() for _ in range(n_frames)]
    adjustments = np.ones(n_frames)
    seen = set()
    try:
        root = int(payload["root"])
        for entry in payload["poses"]:
            f = int(entry["index"])
            if not 0 <= f < n_frames or f == root:
                raise InvalidSpec(f"{path}: pose entry for invalid frame {f}")
            poses[f] = ScaledPose(np.array(entry["R"], dtype=np.float64).reshape(3, 3), np.array(entry["t"]))
            adjustments[f] = float(entry["depth_adjustment"])
            seen.add(f)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"{path}: malformed pose file ({exc})") from exc
    missing = set(range(n_frames)) - seen - {root}
    if missing:
        raise InvalidSpec(f"{path}: no pose for frames {sorted(missing)}")
    return poses, adjustments, payload


def save_trace(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# field checkpoint and point cloud


def save_field(path, field) -> None:
    H_v, W_v, D_v = field.shape
    header = _FIELD_HEADER.pack(
        FIELD_MAGIC, H_v, W_v, D_v, float(field.depth_bins[0]), float(field.depth_bins[-1]), _ACTIVATIONS["softplus"]
    )
    grid = np.ascontiguousarray(field.params.detach().cpu().numpy(), dtype="<f4")
    Path(path).write_bytes(header + grid.tobytes())


def load_field(path, intrinsics: CameraIntrinsics):
    from .radiance import FrustumField

    data = _read(path)
    if len(data) < _FIELD_HEADER.size:
        raise MalformedHeader(f"{path}: file shorter than its header")
    tag, H_v, W_v, D_v, d0, d1, act = _FIELD_HEADER.unpack_from(data)
    if tag != FIELD_MAGIC:
        raise MalformedHeader(f"{path}: bad magic {tag!r}")
    if act != _ACTIVATIONS["softplus"]:
        raise MalformedHeader(f"{path}: unknown activation id {act}")
    expected = _FIELD_HEADER.size + 4 * H_v * W_v * D_v
    if len(data) != expected:
        raise MalformedHeader(f"{path}: expected {expected} bytes, found {len(data)}")
    grid = np.frombuffer(data, dtype="<f4", offset=_FIELD_HEADER.size).reshape(H_v, W_v, D_v)
    params = torch.from_numpy(grid.astype(np.float32))
    return FrustumField(params, np.linspace(d0, d1, D_v), intrinsics)


def save_ply(path, cloud) -> None:
    """ASCII PLY with the consistent-view count as per-vertex quality."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud.points)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar quality",
        "end_header",
    ]
    lines += [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {min(int(c), 255)}" for p, c in zip(cloud.points, cloud.counts)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_ply(path) -> tuple[np.ndarray, np.ndarray]:
    text = _read(path).decode().splitlines()
    try:
        end = text.index("end_header")
        count = int(next(line.split()[2] for line in text[:end] if line.startswith("element vertex")))
    except (ValueError, StopIteration, IndexError) as exc:
        raise MalformedHeader(f"{path}: not an ASCII PLY point cloud") from exc
    body = text[end + 1 : end + 1 + count]
    if len(body) != count:
        raise MalformedHeader(f"{path}: expected {count} vertices, found {len(body)}")
    if not body:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    rows = np.array([line.split() for line in body], dtype=np.float64)
    return rows[:, :3], rows[:, 3].astype(np.int64)
