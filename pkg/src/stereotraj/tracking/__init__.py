from .assignment import assign, matching_weight, max_weight_matching
from .flow import FlowField, load_flow, read_flo, write_flo
from .masks import (
    MIN_MASK_AREA,
    InstanceMask,
    masks_from_label_image,
    masks_to_label_image,
    overlap,
    read_pgm,
    warp_mask,
    write_pgm,
)
from .tracker import (
    AffinityMatrix,
    Prediction,
    Track,
    TrackerState,
    associate_stereo,
    build_affinity,
    init_state,
    predict,
    step_temporal,
    track_sequence,
)

__all__ = [
    "AffinityMatrix",
    "FlowField",
    "InstanceMask",
    "MIN_MASK_AREA",
    "Prediction",
    "Track",
    "TrackerState",
    "assign",
    "associate_stereo",
    "build_affinity",
    "init_state",
    "load_flow",
    "masks_from_label_image",
    "masks_to_label_image",
    "matching_weight",
    "max_weight_matching",
    "overlap",
    "predict",
    "read_flo",
    "read_pgm",
    "step_temporal",
    "track_sequence",
    "warp_mask",
    "write_flo",
    "write_pgm",
]
