"""OBJ meshes, sequence manifests and binary point-cloud frames."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import MeshFormatError
from .geometry import TriangleMesh

POINT_FIELDS = ["x", "y", "z", "nx", "ny", "nz"]


def parse_obj(text: str, name: str = "<string>") -> TriangleMesh:
    """Parse ``v`` and ``f`` records; faces with more than three corners are rejected."""
    vertices, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise MeshFormatError(f"{name}:{lineno}: vertex needs 3 coordinates")
            vertices.append([float(c) for c in rest[:3]])
        elif tag == "f":
            if len(rest) != 3:
                raise MeshFormatError(
                    f"{name}:{lineno}: only triangle faces are supported, got {len(rest)} corners"
                )
            idx = []
            for corner in rest:
                i = int(corner.split("/")[0])
                # OBJ is 1-based; negative indices count back from the latest vertex
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            faces.append(idx)
    try:
        return TriangleMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                            np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise MeshFormatError(f"{name}: {exc}") from exc


def load_obj(path: str | Path) -> TriangleMesh:
    path = Path(path)
    return parse_obj(path.read_text(), str(path))


def save_obj(mesh: TriangleMesh, path: str | Path) -> Path:
    path = Path(path)
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_manifest(path: str | Path) -> dict:
    """Read ``{rest, frames: [{deformed, watertight}]}``; relative paths resolve against the manifest."""
    path = Path(path)
    data = json.loads(path.read_text())
    if "rest" not in data or "frames" not in data:
        raise ValueError("manifest needs 'rest' and 'frames' keys")
    base = path.parent

    def resolve(p):
        return None if p is None else str((base / p).resolve())

    frames = []
    for k, fr in enumerate(data["frames"]):
        if "deformed" not in fr:
            raise ValueError(f"manifest frame {k} has no 'deformed' mesh")
        frames.append({"deformed": resolve(fr["deformed"]), "watertight": resolve(fr.get("watertight"))})
    return {"rest": resolve(data["rest"]), "frames": frames}


def write_point_frames(out_dir: str | Path, positions: np.ndarray, normals: np.ndarray | None = None,
                       extra_header: dict | None = None) -> list[Path]:
    """Write ``frame_XXXX.bin`` files (little-endian float32) and a ``header.json`` sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    positions = np.asarray(positions)
    fields = POINT_FIELDS if normals is not None else POINT_FIELDS[:3]
    written = []
    for t in range(positions.shape[0]):
        rec = positions[t] if normals is None else np.concatenate([positions[t], normals[t]], axis=1)
        p = out_dir / f"frame_{t:04d}.bin"
        p.write_bytes(np.ascontiguousarray(rec, dtype="<f4").tobytes())
        written.append(p)
    header = {"n": int(positions.shape[1]), "frames": int(positions.shape[0]),
              "fields": fields, "dtype": "<f4"}
    if extra_header:
        header.update(extra_header)
    (out_dir / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return written


def read_point_frame(path: str | Path, num_fields: int | None = None) -> np.ndarray:
    """Read one binary frame; the field count comes from a sibling ``header.json`` if present."""
    path = Path(path)
    if num_fields is None:
        header = path.parent / "header.json"
        num_fields = len(json.loads(header.read_text())["fields"]) if header.exists() else 3
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    return data.reshape(-1, num_fields).astype(np.float64)


def load_points(path: str | Path) -> np.ndarray:
    """Load xyz points from ``.bin`` (binary frame), ``.npy`` or whitespace text (``.xyz``)."""
    path = Path(path)
    if path.suffix == ".bin":
        pts = read_point_frame(path)
    elif path.suffix == ".npy":
        pts = np.load(path)
    else:
        pts = np.loadtxt(path, ndmin=2)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise ValueError(f"{path}: expected at least 3 columns")
    return pts[:, :3]
