"""claimlens: actor-attributed claim extraction, viewpoint induction, and
claim-viewpoint classification for news corpora."""

from .model import (
    ActorProfile,
    AgreementReport,
    AnnotationRecord,
    AveragingMode,
    Claim,
    ContextConfig,
    DatasetInstance,
    LearningMode,
    MetricsReport,
    NewsArticle,
    Prediction,
    Provenance,
    Split,
    Viewpoint,
    ViewpointSet,
)

__version__ = "0.1.0"

__all__ = [
    "ActorProfile",
    "AgreementReport",
    "AnnotationRecord",
    "AveragingMode",
    "Claim",
    "ContextConfig",
    "DatasetInstance",
    "LearningMode",
    "MetricsReport",
    "NewsArticle",
    "Prediction",
    "Provenance",
    "Split",
    "Viewpoint",
    "ViewpointSet",
    "__version__",
]
