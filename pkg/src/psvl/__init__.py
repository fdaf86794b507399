"""Zero-shot natural-language video localization via generated pseudo-supervision.

The pipeline discovers temporal event proposals from unlabeled videos, pairs
them with pseudo-queries (detected nouns + corpus-inferred verbs), and trains a
cross-modal attention model on the result. No query/segment annotations are
ever used for training.
"""

from .data import (
    DetectionRecord,
    EvalSample,
    FrameFeatureSequence,
    SupervisionSample,
    TemporalSegment,
    resample_features,
    temporal_iou,
)
from .model import LocalizationModel, ModelConfig, loss_total
from .proposals import AtomicEvent, CompositeEvent, ProposalConfig
from .queries import QueryConfig, SimplifiedQuery
from .training import MetricReport, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AtomicEvent",
    "CompositeEvent",
    "DetectionRecord",
    "EvalSample",
    "FrameFeatureSequence",
    "LocalizationModel",
    "MetricReport",
    "ModelConfig",
    "ProposalConfig",
    "QueryConfig",
    "SimplifiedQuery",
    "SupervisionSample",
    "TemporalSegment",
    "TrainConfig",
    "loss_total",
    "resample_features",
    "temporal_iou",
]
