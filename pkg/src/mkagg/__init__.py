"""mkagg: embed local descriptor sets and pool them into single image vectors.

Pipeline: embed descriptors per centroid (bow or residual), build the
pairwise similarity kernel (block-diagonal when the embedding permits),
compute per-descriptor weights (democratic Sinkhorn scaling or generalized
max pooling), aggregate, normalize, and evaluate retrieval quality.
"""

from .democratic import DemocraticConfig, aggregate_democratic, aggregate_sum, sinkhorn_weights
from .embed import EmbeddingConfig, assign_hard, embed_set, train_codebook
from .gmp import GmpConfig, aggregate_gmp, gmp_primal, gmp_weights, maxpool_oracle
from .kernel import clip_negatives, gram, threshold_sparsify
from .matio import (
    MAGIC_CODEBOOK,
    MAGIC_DESCRIPTORS,
    MAGIC_ROTATION,
    MAGIC_VECTOR,
    read_matrix_file,
    write_matrix_file,
)
from .normalize import (
    NormalizeConfig,
    apply_chain,
    l2_normalize,
    power_law,
    rn_fit,
    similarity,
)
from .retrieval import (
    GroundTruth,
    SyntheticSpec,
    average_precision,
    export_weights,
    generate_synthetic,
    mean_average_precision,
    rank,
    read_ground_truth,
    read_manifest,
    write_ground_truth,
)
from .types import (
    AggregateVector,
    BadMagicError,
    BadVersionError,
    Codebook,
    ConvergenceError,
    DataFormatError,
    DescriptorSet,
    DimensionOverflowError,
    EmbeddedSet,
    KernelBlock,
    KernelMatrix,
    NumericalError,
    ScalingError,
    TruncatedFileError,
    WeightVector,
    ZeroVectorError,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateVector",
    "BadMagicError",
    "BadVersionError",
    "Codebook",
    "ConvergenceError",
    "DataFormatError",
    "DemocraticConfig",
    "DescriptorSet",
    "DimensionOverflowError",
    "EmbeddedSet",
    "EmbeddingConfig",
    "GmpConfig",
    "GroundTruth",
    "KernelBlock",
    "KernelMatrix",
    "MAGIC_CODEBOOK",
    "MAGIC_DESCRIPTORS",
    "MAGIC_ROTATION",
    "MAGIC_VECTOR",
    "NormalizeConfig",
    "NumericalError",
    "ScalingError",
    "SyntheticSpec",
    "TruncatedFileError",
    "WeightVector",
    "ZeroVectorError",
    "aggregate_democratic",
    "aggregate_gmp",
    "aggregate_sum",
    "apply_chain",
    "assign_hard",
    "average_precision",
    "clip_negatives",
    "embed_set",
    "export_weights",
    "generate_synthetic",
    "gmp_primal",
    "gmp_weights",
    "gram",
    "l2_normalize",
    "maxpool_oracle",
    "mean_average_precision",
    "power_law",
    "rank",
    "read_ground_truth",
    "read_manifest",
    "read_matrix_file",
    "rn_fit",
    "similarity",
    "sinkhorn_weights",
    "threshold_sparsify",
    "train_codebook",
    "write_ground_truth",
    "write_matrix_file",
]
