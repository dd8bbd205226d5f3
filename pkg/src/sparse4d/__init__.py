"""Block-sparse spatiotemporal attention and consistent surface sampling for 4D meshes."""

__version__ = "0.1.0"

from .mask import (  # noqa: E402
    BlockMask,
    GridSpec,
    MaskVariant,
    StrideSchedule,
    build_block_mask,
    density,
    expand_to_token_mask,
    frame_pair_density,
    render_mask,
    stride_of,
)
from .rope import RopeTable, apply_temporal_rope, build_rope_table, rotate_half  # noqa: E402
from .attention import (  # noqa: E402
    AttentionParams,
    FlopCounter,
    block_sparse_mha,
    dense_masked_mha,
    init_attention_params,
    init_mini_block_params,
    mini_4d_block_forward,
    relative_error,
)
from .flops import REFERENCE_ARCH, ArchConfig, calibrate_at, cost_report, predict_scaling, scaling_svg  # noqa: E402
from .geometry import (  # noqa: E402
    LatentMomentSequence,
    SurfaceSamples,
    TrackedPointSequence,
    TriangleMesh,
    build_tracked_sequence,
    concatenate,
    detect_sharp_edges,
    farthest_point_sampling,
    normalize_sequence,
    project_to_surface,
    propagate,
    sample_sharp,
    sample_uniform,
    shared_noise_reparameterize,
)
from .metrics import chamfer_distance, f_score, voxel_iou  # noqa: E402
