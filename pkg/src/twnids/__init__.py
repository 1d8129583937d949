"""Flow-based intrusion detection with per-host time windows and trainable activations."""

from .errors import CheckpointError, ConfigError, OrderingError, ProtocolError, RowError, SchemaError, TWNidsError

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "OrderingError",
    "ProtocolError",
    "RowError",
    "SchemaError",
    "TWNidsError",
]
