"""Video abnormality detection via binary appearance codes and optical flow.

Pipeline: per-frame feature maps are binary-quantized into prototype codes
(hashing with a learned rotation, sigmoid + 0.5 threshold), spatio-temporal
blocks of codes are scored by histogram irregularity, dense optical flow is
aggregated over the same blocks, the two streams are fused pointwise, and the
result is evaluated with frame-level and pixel-level ROC protocols.
"""

from .config import PipelineConfig, parse_config
from .errors import PipelineError, ValidationError, IoError
from .evaluation import (
    RocCurve,
    auc,
    eer,
    export_results,
    frame_level_roc,
    pixel_level_roc,
)
from .flow import (
    FlowField,
    FlowParams,
    aggregate_flow_blocks,
    compute_flow,
    compute_flow_sequence,
    flow_magnitude,
    read_external_flow,
)
from .fusion import FusionWeights, fuse_maps
from .grids import FeatureMapSequence, GridSpec
from .media_io import (
    FrameSequence,
    GroundTruth,
    SyntheticSpec,
    TensorFile,
    extract_toy_features,
    generate_synthetic,
    load_frame_sequence,
    load_ground_truth,
    read_pgm,
    read_tensor,
    write_pgm,
    write_tensor,
)
from .quantizer import (
    BinaryMapSequence,
    Codebook,
    HashModel,
    assign_code,
    encode_bits,
    encode_sequence,
    itq_train,
    kmeans_codebook,
    load_hash_model,
    save_hash_model,
)
from .tcp import (
    BlockHistogram,
    ScoreMapSequence,
    VideoBlock,
    block_histogram,
    extract_blocks,
    frame_signal,
    normalize_scores,
    tcp_map_sequence,
    tcp_raw,
    upsample_map,
)

__version__ = "0.1.0"
