"""Document-level multimodal sarcasm detection and localization baseline."""

from .agreement import (
    ConfidenceReport,
    SimilarityScore,
    annotation_similarity,
    confidence_scores,
    flag_challenging,
    text_iou,
    visual_iou,
)
from .config import ModelConfig, RunConfig
from .data import gen_fixtures, load_dataset, save_dataset, split_dataset
from .metrics import (
    MetricReport,
    SamplePrediction,
    TokenPredictionSet,
    average_precision,
    bit_error,
    detection_metrics,
    evaluate_corpus,
    exact_match_at,
    f1_at_iou,
)
from .model import PredictionBundle, SarcasmModel
from .records import (
    AnnotationSet,
    BoundingBox,
    DatasetRecord,
    SplitConfig,
    TokenSpan,
    ValidationError,
)
from .training import evaluate_records, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
