"""Multi-task face anti-spoofing toolkit: AENet variants, objectives, scoring,
evaluation metrics and benchmark protocols."""

from aenet_fas.datamodel import (
    AnnotatedSample,
    Dataset,
    Environment,
    Illumination,
    Label,
    SensorRegistry,
    SpoofType,
    generate_synthetic,
    load_annotations,
    save_annotations,
    select_spoof_instruments,
)
from aenet_fas.errors import (
    AenetError,
    ConfigurationError,
    GenerationError,
    ParseError,
    ProtocolError,
    ScoringError,
    SplitError,
    UndefinedMetricError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedSample",
    "Dataset",
    "Environment",
    "Illumination",
    "Label",
    "SensorRegistry",
    "SpoofType",
    "generate_synthetic",
    "load_annotations",
    "save_annotations",
    "select_spoof_instruments",
    "AenetError",
    "ConfigurationError",
    "GenerationError",
    "ParseError",
    "ProtocolError",
    "ScoringError",
    "SplitError",
    "UndefinedMetricError",
    "ValidationError",
]
