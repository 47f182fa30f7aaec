"""Bridge PyTorch models into the channel-search engine's file formats."""

__version__ = "0.1.0"

from .containers import (
    conv_from_engine,
    conv_to_engine,
    linear_from_engine,
    linear_to_engine,
    read_container,
    write_container,
    write_graph,
)
from .export import ExportedModel, UnsupportedModel, export_model, load_engine_weights
from .serve import make_toy_dataset, serve_trainer

__all__ = [
    "ExportedModel",
    "UnsupportedModel",
    "conv_from_engine",
    "conv_to_engine",
    "export_model",
    "linear_from_engine",
    "linear_to_engine",
    "load_engine_weights",
    "make_toy_dataset",
    "read_container",
    "serve_trainer",
    "write_container",
    "write_graph",
]
