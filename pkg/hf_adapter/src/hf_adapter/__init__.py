"""Stdio adapter exposing transformer checkpoints to the engine's wire protocol."""

from .server import AdapterConfig, CheckpointServer, handle_request, serve

__all__ = ["AdapterConfig", "CheckpointServer", "handle_request", "serve"]
