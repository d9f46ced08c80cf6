"""Exception hierarchy shared across the package."""

from __future__ import annotations


class PcgotError(Exception):
    """Base class for all package errors."""


class ConfigError(PcgotError, ValueError):
    """Invalid parameter combination (fanout/PRG pairing, sizes, ...)."""


class PoolExhausted(PcgotError):
    """A correlation pool or batch has no unconsumed entries left.

    The caller must replenish (bootstrap) before consuming more.
    """


class ProtocolError(PcgotError):
    """Malformed or unexpected protocol message."""


class HandshakeError(ProtocolError):
    """Peers disagree on parameters or the public matrix."""


class TransportError(PcgotError):
    """Channel failure: connect/bind errors, closed peer, bad framing."""


class PeerClosed(TransportError):
    """The remote side closed the channel."""


class FrameError(TransportError):
    """A frame header is malformed (bad type, oversize length)."""


class SessionError(TransportError):
    """Session id misuse on a multiplexed endpoint."""


class FormatError(PcgotError, ValueError):
    """Bad magic, version or length in a serialized file."""


class CorrelationReused(PcgotError):
    """An already consumed correlation index was requested again."""
