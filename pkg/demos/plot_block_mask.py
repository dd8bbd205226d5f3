"""
Building a time-decaying block mask
===================================

A block mask decides which (query block, key block) pairs of a spatiotemporal
token grid are scored. Here we build the default mask for a 16-frame clip,
look at its density, and compare the ablation variants.
"""

import os
import tempfile

import numpy as np

from sparse4d import GridSpec, MaskVariant, build_block_mask, frame_pair_density, render_mask

# 16 frames of 4096 tokens, cut into blocks of 128 tokens: 32 blocks per frame
grid = GridSpec(frames=16, tokens_per_frame=4096, block_size=128)
mask = build_block_mask(grid, MaskVariant.ours())
print(f"{grid.total_blocks} x {grid.total_blocks} block mask, {mask.ones_count} admissible pairs")
print(f"density {100 * mask.density():.3f}%")

# Each frame pair gets its own density: 1 for the anchor column and for nearby
# frames, then 1/s as the stride s grows with temporal distance.
pairs = np.array([[frame_pair_density(mask, i, j) for j in range(16)] for i in range(16)])
print("query frame 15 vs every key frame:")
print(np.round(pairs[15], 4))

# Ablation variants on the same grid
for variant in MaskVariant.all_variants():
    print(f"  {variant.name:>13s}: {100 * build_block_mask(grid, variant).density():6.2f}%")

# The rendered mask is a 512 x 512 greyscale image; white means admissible.
out = os.environ.get("SPARSE4D_OUT_DIR", tempfile.gettempdir())
path = render_mask(mask, os.path.join(out, "block_mask_T16.pgm"))
print(f"wrote {path}")
