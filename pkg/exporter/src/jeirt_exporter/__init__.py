"""Frozen-encoder feature export in the jeirt feature format."""

from .exporter import (
    ConfigError,
    DataError,
    EncoderLoadError,
    ExporterError,
    HashEncoder,
    QuestionText,
    export_features,
    load_encoder,
    load_questions,
    write_features,
)

__version__ = "0.1.0"
