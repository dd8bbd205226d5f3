"""Point-cloud and volumetric shape metrics: Chamfer distance, F-score, voxel IoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import NonWatertightMeshError
from .geometry import TriangleMesh, boundary_edges

DEFAULT_TAU = 0.05


def _cloud(points, name):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError(f"point cloud {name} is empty")
    if not np.isfinite(pts).all():
        raise ValueError(f"point cloud {name} has non-finite coordinates")
    return pts


def nearest_distances(src, dst) -> np.ndarray:
    """Distance from every point of ``src`` to its nearest neighbour in ``dst``."""
    d, _ = cKDTree(dst).query(src, k=1)
    return d


def chamfer_distance(a, b, squared: bool = False) -> float:
    """Symmetric mean nearest-neighbour distance ``(mean_a + mean_b) / 2``.

    With ``squared=True`` squared L2 distances are averaged instead.
    """
    a, b = _cloud(a, "a"), _cloud(b, "b")
    dab = nearest_distances(a, b)
    dba = nearest_distances(b, a)
    if squared:
        dab, dba = dab**2, dba**2
    return float(0.5 * (dab.mean() + dba.mean()))


def precision_recall(a, b, tau: float = DEFAULT_TAU) -> tuple[float, float]:
    if not tau > 0:
        raise ValueError("tau must be positive")
    a, b = _cloud(a, "a"), _cloud(b, "b")
    precision = float(np.mean(nearest_distances(a, b) <= tau))
    recall = float(np.mean(nearest_distances(b, a) <= tau))
    return precision, recall


def f_score(a, b, tau: float = DEFAULT_TAU) -> float:
    """Harmonic mean of precision (a near b) and recall (b near a) at distance ``tau``."""
    p, r = precision_recall(a, b, tau)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Occupancy of the ``R^3`` cells tiling ``[-1, 1]^3``; axis order (x, y, z)."""

    resolution: int
    occupancy: np.ndarray  # (R, R, R) bool

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())


def voxel_centers(resolution: int) -> np.ndarray:
    return -1.0 + (np.arange(resolution) + 0.5) * (2.0 / resolution)


def _ray_hits(tri_yz, tri_x, y, z, eps):
    """x-coordinates where the +x line through (y, z) crosses triangles.

    Returns ``(hits, degenerate)``; degenerate means the line passes within
    ``eps`` (barycentric) of an edge or vertex of some triangle.
    """
    a, b, c = tri_yz[:, 0], tri_yz[:, 1], tri_yz[:, 2]
    v0, v1 = b - a, c - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    ok = np.abs(det) > 1e-15  # triangles parallel to the ray never count
    det = np.where(ok, det, 1.0)
    py, pz = y - a[:, 0], z - a[:, 1]
    l1 = (py * v1[:, 1] - pz * v1[:, 0]) / det
    l2 = (v0[:, 0] * pz - v0[:, 1] * py) / det
    l0 = 1.0 - l1 - l2
    lam = np.stack([l0, l1, l2], axis=1)
    inside = ok & (lam >= -eps).all(axis=1)
    degenerate = bool((inside & (np.abs(lam) <= eps).any(axis=1)).any())
    hit = ok & (lam > 0).all(axis=1)
    xs = (lam[hit] * tri_x[hit]).sum(axis=1)
    return xs, degenerate


def voxelize(mesh: TriangleMesh, resolution: int, seed: int = 0, max_retries: int = 8) -> VoxelGrid:
    """Occupancy at voxel centres by parity of +x ray crossings.

    Lines that graze an edge or vertex are re-cast with a small jitter in
    (y, z); the jitter stream is seeded so results are deterministic.
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    centers = voxel_centers(resolution)
    tri = mesh.triangles
    tri_yz, tri_x = tri[:, :, 1:], tri[:, :, 0]
    lo, hi = tri_yz.min(axis=1), tri_yz.max(axis=1)
    occ = np.zeros((resolution,) * 3, dtype=bool)
    rng = np.random.default_rng(seed)
    eps = 1e-9
    jitter_scale = 1e-4 * (2.0 / resolution)
    for iy, y in enumerate(centers):
        row = (lo[:, 0] <= y + 1e-6) & (hi[:, 0] >= y - 1e-6)
        if not row.any():
            continue
        for iz, z in enumerate(centers):
            cand = row & (lo[:, 1] <= z + 1e-6) & (hi[:, 1] >= z - 1e-6)
            if not cand.any():
                continue
            ry, rz = y, z
            for _ in range(max_retries + 1):
                xs, degenerate = _ray_hits(tri_yz[cand], tri_x[cand], ry, rz, eps)
                if not degenerate:
                    break
                ry = y + rng.uniform(-jitter_scale, jitter_scale)
                rz = z + rng.uniform(-jitter_scale, jitter_scale)
                cand = (lo[:, 0] <= ry + 1e-6) & (hi[:, 0] >= ry - 1e-6) & \
                       (lo[:, 1] <= rz + 1e-6) & (hi[:, 1] >= rz - 1e-6)
            if xs.size == 0:
                continue
            xs = np.sort(xs)
            # crossings strictly ahead of each centre along +x
            ahead = xs.size - np.searchsorted(xs, centers, side="right")
            occ[:, iy, iz] = ahead % 2 == 1
    return VoxelGrid(resolution, occ)


def voxel_iou(a: TriangleMesh, b: TriangleMesh, resolution: int = 64) -> float:
    """Intersection over union of the two meshes' voxel occupancies in ``[-1, 1]^3``."""
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    for name, mesh in (("a", a), ("b", b)):
        if len(mesh.faces) == 0 or boundary_edges(mesh):
            raise NonWatertightMeshError(f"mesh {name} is not watertight")
    va = voxelize(a, resolution).occupancy
    vb = voxelize(b, resolution).occupancy
    union = np.logical_or(va, vb).sum()
    if union == 0:
        raise ValueError("both occupancies are empty; IoU undefined")
    return float(np.logical_and(va, vb).sum() / union)
