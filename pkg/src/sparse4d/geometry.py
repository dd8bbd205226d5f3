"""Temporally consistent surface sampling on deforming triangle meshes.

A point is sampled once on the rest pose as ``(face, barycentric)`` and that
pair is reused on every deformed frame, which keeps point ``i`` on the same
material location through the animation. Propagated points are then snapped
to a per-frame watertight mesh, the first frame is subsampled with farthest
point sampling, and the whole sequence is normalized with one bounding box.
"""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import TopologyMismatchError

UNIFORM = 0
SHARP = 1


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if f.size:
            dup = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if dup.any():
                raise ValueError(f"degenerate face with repeated vertex index: {f[dup][0].tolist()}")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_cross(self) -> np.ndarray:
        tri = self.triangles
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    @property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    @property
    def face_normals(self) -> np.ndarray:
        c = self.face_cross()
        n = np.linalg.norm(c, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, c / n, 0.0)

    @property
    def face_centroids(self) -> np.ndarray:
        return self.triangles.mean(axis=1)

    def transformed(self, matrix: np.ndarray, offset=None) -> "TriangleMesh":
        """Apply ``x -> matrix @ x + offset`` to every vertex."""
        v = self.vertices @ np.asarray(matrix, dtype=np.float64).T
        if offset is not None:
            v = v + np.asarray(offset, dtype=np.float64)
        return TriangleMesh(v, self.faces)


def edge_face_map(mesh: TriangleMesh) -> dict[tuple[int, int], list[int]]:
    """Undirected edge ``(a, b)`` with ``a < b`` mapped to its incident faces."""
    edges = defaultdict(list)
    for fi, (a, b, c) in enumerate(mesh.faces.tolist()):
        for e0, e1 in ((a, b), (b, c), (c, a)):
            edges[(e0, e1) if e0 < e1 else (e1, e0)].append(fi)
    return dict(edges)


def boundary_edges(mesh: TriangleMesh) -> list[tuple[int, int]]:
    return [e for e, fs in edge_face_map(mesh).items() if len(fs) == 1]


def euler_characteristic(mesh: TriangleMesh) -> int:
    used = np.unique(mesh.faces)
    return len(used) - len(edge_face_map(mesh)) + len(mesh.faces)


def is_watertight(mesh: TriangleMesh) -> bool:
    """Closed and edge-manifold: every edge has exactly two incident faces."""
    edges = edge_face_map(mesh)
    return bool(edges) and all(len(fs) == 2 for fs in edges.values())


def check_watertight(mesh: TriangleMesh, name: str = "mesh") -> bool:
    ok = is_watertight(mesh)
    if not ok:
        warnings.warn(
            f"{name} is not watertight: {len(boundary_edges(mesh))} boundary edges, "
            f"Euler characteristic {euler_characteristic(mesh)}",
            stacklevel=2,
        )
    return ok


@dataclass(frozen=True)
class SurfaceSample:
    face_index: int
    barycentric: tuple[float, float, float]
    position: tuple[float, float, float]
    normal: tuple[float, float, float]
    tag: str


@dataclass(frozen=True, eq=False)
class SurfaceSamples:
    """Struct-of-arrays collection of surface samples.

    ``source_faces`` is the face table of the mesh the samples live on; it is
    what propagation compares against to detect topology changes.
    """

    face_index: np.ndarray  # (n,)
    barycentric: np.ndarray  # (n, 3)
    positions: np.ndarray  # (n, 3)
    normals: np.ndarray  # (n, 3)
    tags: np.ndarray  # (n,) UNIFORM or SHARP
    source_faces: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 3), np.int64))

    def __len__(self):
        return len(self.face_index)

    def __getitem__(self, i: int) -> SurfaceSample:
        return SurfaceSample(
            int(self.face_index[i]),
            tuple(self.barycentric[i].tolist()),
            tuple(self.positions[i].tolist()),
            tuple(self.normals[i].tolist()),
            "sharp" if self.tags[i] == SHARP else "uniform",
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def empty(cls, source_faces: np.ndarray) -> "SurfaceSamples":
        return cls(np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros((0, 3)),
                   np.zeros((0, 3)), np.zeros(0, np.int8), source_faces)


def concatenate(parts: Sequence[SurfaceSamples]) -> SurfaceSamples:
    if not parts:
        raise ValueError("nothing to concatenate")
    ref = parts[0].source_faces
    for p in parts[1:]:
        if not np.array_equal(p.source_faces, ref):
            raise ValueError("samples come from meshes with different faces")
    return SurfaceSamples(
        np.concatenate([p.face_index for p in parts]),
        np.concatenate([p.barycentric for p in parts]),
        np.concatenate([p.positions for p in parts]),
        np.concatenate([p.normals for p in parts]),
        np.concatenate([p.tags for p in parts]),
        ref,
    )


def _interpolate(mesh: TriangleMesh, face_index: np.ndarray, bary: np.ndarray) -> np.ndarray:
    return np.einsum("nk,nkd->nd", bary, mesh.triangles[face_index])


def _make_samples(mesh, face_index, bary, tag) -> SurfaceSamples:
    return SurfaceSamples(
        face_index=np.asarray(face_index, dtype=np.int64),
        barycentric=bary,
        positions=_interpolate(mesh, face_index, bary),
        normals=mesh.face_normals[face_index],
        tags=np.full(len(face_index), tag, dtype=np.int8),
        source_faces=mesh.faces,
    )


def sample_uniform(mesh: TriangleMesh, n: int, seed=None) -> SurfaceSamples:
    """Area-weighted uniform samples over the surface."""
    if len(mesh.faces) == 0:
        raise ValueError("mesh has no faces")
    if n < 0:
        raise ValueError("n must be non-negative")
    areas = mesh.face_areas
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    face_index = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random(n), rng.random(n)
    sq = np.sqrt(r1)
    bary = np.stack([1.0 - sq, sq * (1.0 - r2), sq * r2], axis=1)
    return _make_samples(mesh, face_index, bary, UNIFORM)


def detect_sharp_edges(mesh: TriangleMesh, dihedral_threshold_degrees: float = 30.0) -> np.ndarray:
    """Edges whose adjacent face normals differ by more than the threshold, plus boundary edges.

    Returns an ``(k, 2)`` array of vertex index pairs with ``a < b``.
    """
    if not 0.0 < dihedral_threshold_degrees < 180.0:
        raise ValueError("threshold must be in (0, 180) degrees")
    cos_thr = np.cos(np.radians(dihedral_threshold_degrees))
    normals = mesh.face_normals
    sharp = []
    for edge, fs in edge_face_map(mesh).items():
        if len(fs) == 1:
            sharp.append(edge)
            continue
        nf = normals[fs]
        cosines = nf @ nf.T
        if (cosines < cos_thr).any():
            sharp.append(edge)
    return np.array(sorted(sharp), dtype=np.int64).reshape(-1, 2)


def sample_sharp(mesh: TriangleMesh, edges: np.ndarray, n: int, seed=None) -> SurfaceSamples:
    """Samples uniform by length along the given edges.

    Each point is expressed on the lowest-index face containing its edge, so
    the coordinate of the opposite vertex is exactly 0.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        raise ValueError("edge set is empty")
    if n == 0:
        return SurfaceSamples.empty(mesh.faces)
    efm = edge_face_map(mesh)
    owner = np.empty(len(edges), dtype=np.int64)
    for k, (a, b) in enumerate(edges.tolist()):
        fs = efm.get((min(a, b), max(a, b)))
        if not fs:
            raise ValueError(f"edge {(a, b)} is not an edge of the mesh")
        owner[k] = min(fs)
    lengths = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
    if not lengths.sum() > 0:
        raise ValueError("edges have zero total length")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(edges), size=n, p=lengths / lengths.sum())
    t = rng.random(n)
    face_index = owner[pick]
    corners = mesh.faces[face_index]  # (n, 3)
    bary = np.zeros((n, 3))
    a_slot = np.argmax(corners == edges[pick, 0][:, None], axis=1)
    b_slot = np.argmax(corners == edges[pick, 1][:, None], axis=1)
    rows = np.arange(n)
    bary[rows, a_slot] = 1.0 - t
    bary[rows, b_slot] = t
    return _make_samples(mesh, face_index, bary, SHARP)


def propagate(samples: SurfaceSamples, deformed: TriangleMesh) -> SurfaceSamples:
    """Re-evaluate each ``(face, barycentric)`` pair on a deformed mesh of identical topology."""
    src = samples.source_faces
    if src.shape != deformed.faces.shape:
        raise TopologyMismatchError(
            f"face count differs: rest {len(src)}, deformed {len(deformed.faces)}"
        )
    if not np.array_equal(src, deformed.faces):
        bad = int(np.flatnonzero((src != deformed.faces).any(axis=1))[0])
        raise TopologyMismatchError(f"face {bad} index triple differs from the rest pose")
    return replace(
        samples,
        positions=_interpolate(deformed, samples.face_index, samples.barycentric),
        normals=deformed.face_normals[samples.face_index],
    )


def project_to_surface(points: np.ndarray, watertight: TriangleMesh) -> SurfaceSamples:
    """Snap points to the centroid of the nearest face (by centroid distance)."""
    if len(watertight.faces) == 0:
        raise ValueError("mesh has no faces")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tree = cKDTree(watertight.face_centroids)
    _, idx = tree.query(points, k=1)
    idx = np.asarray(idx, dtype=np.int64)
    bary = np.full((len(idx), 3), 1.0 / 3.0)
    return SurfaceSamples(
        face_index=idx,
        barycentric=bary,
        positions=watertight.face_centroids[idx],
        normals=watertight.face_normals[idx],
        tags=np.zeros(len(idx), np.int8),
        source_faces=watertight.faces,
    )


def farthest_point_sampling(points: np.ndarray, k: int, seed=None, start: int | None = None) -> np.ndarray:
    """Greedy max-min subset of ``k`` indices; ties resolve to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k > n:
        raise ValueError(f"cannot select {k} points from {n}")
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if start is None:
        start = int(np.random.default_rng(seed).integers(n))
    selected = np.empty(k, dtype=np.int64)
    selected[0] = start
    min_d = np.linalg.norm(points - points[start], axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(min_d))
        selected[i] = nxt
        min_d = np.minimum(min_d, np.linalg.norm(points - points[nxt], axis=1))
    return selected


def coverage_radius(points: np.ndarray, indices: np.ndarray) -> float:
    """Largest distance from any point to its nearest selected point."""
    points = np.asarray(points, dtype=np.float64)
    d, _ = cKDTree(points[indices]).query(points, k=1)
    return float(d.max())


@dataclass(frozen=True, eq=False)
class TrackedPointSequence:
    """Per-frame positions/normals of the same tracked points.

    ``face_index`` and ``barycentric`` are the rest-pose provenance shared by
    every frame; ``fps_indices`` are query identities chosen on frame 0.
    """

    positions: np.ndarray  # (T, n, 3)
    normals: np.ndarray  # (T, n, 3)
    face_index: np.ndarray
    barycentric: np.ndarray
    tags: np.ndarray
    fps_indices: np.ndarray | None = None

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    @property
    def num_points(self) -> int:
        return self.positions.shape[1]

    def queries(self) -> np.ndarray:
        """Tracked FPS query points per frame, ``(T, k, 3)``."""
        if self.fps_indices is None:
            raise ValueError("sequence has no FPS query indices")
        return self.positions[:, self.fps_indices]


def build_tracked_sequence(
    rest_samples: SurfaceSamples,
    deformed: Sequence[TriangleMesh],
    watertight: Sequence[TriangleMesh] | None = None,
    fps_k: int | None = None,
    seed=None,
) -> TrackedPointSequence:
    """Propagate rest samples through the animation, optionally project and subsample."""
    if watertight is not None and len(watertight) != len(deformed):
        raise ValueError("need one watertight mesh per deformed frame")
    positions, normals = [], []
    for t, mesh in enumerate(deformed):
        frame = propagate(rest_samples, mesh)
        if watertight is not None:
            frame = project_to_surface(frame.positions, watertight[t])
        positions.append(frame.positions)
        normals.append(frame.normals)
    positions = np.stack(positions)
    fps = None
    if fps_k is not None:
        fps = farthest_point_sampling(positions[0], fps_k, seed=seed)
    return TrackedPointSequence(
        positions=positions,
        normals=np.stack(normals),
        face_index=rest_samples.face_index,
        barycentric=rest_samples.barycentric,
        tags=rest_samples.tags,
        fps_indices=fps,
    )


def normalize_sequence(sequence):
    """Fit all frames into ``[-1, 1]^3`` with one box and a uniform scale.

    Accepts a :class:`TrackedPointSequence` or an array of shape ``(T, n, 3)``
    (or a list of per-frame ``(n_t, 3)`` arrays). Returns
    ``(normalized, center, scale)`` with ``normalized = (x - center) * scale``.
    """
    if isinstance(sequence, TrackedPointSequence):
        out, center, scale = normalize_sequence(sequence.positions)
        return replace(sequence, positions=out), center, scale

    frames = [np.asarray(f, dtype=np.float64).reshape(-1, 3) for f in sequence]
    if not frames or sum(len(f) for f in frames) == 0:
        raise ValueError("sequence is empty")
    allpts = np.concatenate(frames)
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    extent = (hi - lo).max()
    if not extent > 0:
        raise ValueError("bounding box has zero extent")
    center = (lo + hi) / 2.0
    scale = 2.0 / extent
    out = [np.clip((f - center) * scale, -1.0, 1.0) for f in frames]
    if isinstance(sequence, np.ndarray):
        out = np.stack(out)
    return out, center, float(scale)


@dataclass(frozen=True, eq=False)
class LatentMomentSequence:
    mean: np.ndarray  # (T, tokens, channels)
    logvar: np.ndarray

    def __post_init__(self):
        mean = _stack_frames(self.mean, "mean")
        logvar = _stack_frames(self.logvar, "logvar")
        if mean.shape != logvar.shape:
            raise ValueError(f"mean {mean.shape} and logvar {logvar.shape} differ in shape")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "logvar", logvar)

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar)

    @property
    def frame_shape(self) -> tuple[int, ...]:
        return self.mean.shape[1:]


def _stack_frames(frames, name):
    if isinstance(frames, np.ndarray):
        return frames.astype(np.float64)
    shapes = {np.shape(f) for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"{name} frames have mismatched shapes: {sorted(shapes)}")
    return np.stack([np.asarray(f, dtype=np.float64) for f in frames])


def shared_noise_reparameterize(moments: LatentMomentSequence, seed=None, noise=None) -> np.ndarray:
    """``z_t = mu_t + sigma_t * eps`` with one ``eps`` for every frame."""
    if noise is None:
        noise = np.random.default_rng(seed).standard_normal(moments.frame_shape)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != moments.frame_shape:
        raise ValueError(f"noise shape {noise.shape} != frame shape {moments.frame_shape}")
    return moments.mean + moments.std * noise[None]


def independent_noise_reparameterize(moments: LatentMomentSequence, seed=None) -> np.ndarray:
    """Per-frame noise draws; the baseline that shared noise replaces."""
    noise = np.random.default_rng(seed).standard_normal(moments.mean.shape)
    return moments.mean + moments.std * noise
