"""OCR-conditioned adaptive prompt tuning over precomputed embeddings."""

from .dataio import (
    CategorySet,
    EmbeddingStore,
    ScreenAnnotation,
    parse_annotations,
    parse_categories,
    read_embeddings,
    resolve_description_embedding,
    write_embeddings,
)
from .errors import (
    AptError,
    FormatError,
    MissingKeyError,
    NonFiniteLossError,
    NumericsError,
    ParseError,
)
from .evaluator import (
    DetectionRecord,
    GroundTruthRecord,
    average_precision,
    map_report,
    match_detections,
)
from .geometry import Box, ElementAnnotation, LinkAssignment, OcrItem, area, iom, iou, link_ocr
from .head import (
    AptHead,
    AptNetwork,
    CategoryPrompts,
    FusionMode,
    HeadConfig,
    ProposalBatch,
    TuningMode,
    cross_entropy,
    fuse_vectors,
    param_count,
    predict,
    tune_pair,
)
from .synth import SynthConfig, generate
from .trainer import TrainConfig, TrainReport, assemble_proposals, evaluate_accuracy, train

__version__ = "0.1.0"
