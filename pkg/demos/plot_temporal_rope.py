"""
Temporal rotary embeddings
==========================

Queries and keys in the temporal module are rotated by an angle that depends
only on the frame index. The table stores cos/sin with each value duplicated
across the two slots of a rotation pair.
"""

import numpy as np

from sparse4d import apply_temporal_rope, build_rope_table, rotate_half

table = build_rope_table(head_dim=8, base=10000.0, max_frames=16)
print("frequencies:", table.frequencies)
print("cos row for frame 3:", np.round(table.cos[3], 5))

# rotate_half swaps each pair and negates the first slot
print("rotate_half(0..7):", rotate_half(np.arange(8.0)))

# Dot products only see the frame offset
rng = np.random.default_rng(0)
q, k = rng.standard_normal((2, 8))
for i, j in [(5, 2), (9, 6), (3, 0)]:
    score = apply_temporal_rope(q, i, table) @ apply_temporal_rope(k, j, table)
    print(f"frames ({i}, {j}) -> score {score:+.6f}")

# Rotation never changes a vector's length
v = rng.standard_normal((4, 8))
print("norm ratio:", np.linalg.norm(apply_temporal_rope(v, [1, 4, 7, 15], table), axis=1)
      / np.linalg.norm(v, axis=1))
