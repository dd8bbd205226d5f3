"""
Chamfer distance, F-score and voxel IoU
=======================================

The three geometric metrics on simple shapes whose answers are easy to check.
"""

import numpy as np

from sparse4d import TriangleMesh, chamfer_distance, f_score, voxel_iou


def box(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    f = [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
         [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    return TriangleMesh(v, f)


# Nearest distances are 1 and 1 from a, and 1 from b, so the symmetric mean is 1
print("chamfer:", chamfer_distance([[0, 0, 0], [2, 0, 0]], [[1, 0, 0]]))

# Half of a is matched within tau, all of b is: F = 2 * 0.5 * 1 / 1.5
print("f-score:", f_score([[0, 0, 0], [1, 0, 0]], [[0, 0, 0]], tau=0.1))

# A unit cube against a copy shifted by half its width overlaps 0.5 out of 1.5
cube = box([-0.5] * 3, [0.5] * 3)
shifted = box([0, -0.5, -0.5], [1, 0.5, 0.5])
for R in (8, 16, 32, 64):
    print(f"IoU at R={R:2d}: {voxel_iou(cube, shifted, R):.4f}")
