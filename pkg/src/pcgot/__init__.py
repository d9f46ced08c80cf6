"""PCG-style oblivious-transfer extension with m-ary GGM trees and LPN encoding."""

from .base import ReceiverCotBatch, ReceiverCotPool, SenderCotBatch, SenderCotPool, dealer_generate
from .engine import EngineConfig, extend_receive, extend_send, run_duplex, run_loopback, verify_batches
from .errors import (
    ConfigError,
    CorrelationReused,
    FormatError,
    HandshakeError,
    PcgotError,
    PoolExhausted,
    ProtocolError,
    TransportError,
)
from .lpn import LpnParams, SparseMatrix, gen_matrix
from .presets import PRESETS, get_preset
from .prg import PrgKind

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CorrelationReused", "EngineConfig", "FormatError", "HandshakeError",
    "PcgotError", "LpnParams", "PRESETS", "PoolExhausted", "PrgKind", "ProtocolError",
    "ReceiverCotBatch", "ReceiverCotPool", "SenderCotBatch", "SenderCotPool", "SparseMatrix",
    "TransportError", "dealer_generate", "extend_receive", "extend_send", "gen_matrix",
    "get_preset", "run_duplex", "run_loopback", "verify_batches",
]
