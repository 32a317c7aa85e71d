"""Exception hierarchy shared by all plrr subsystems."""


class PlrrError(Exception):
    """Base class for all plrr errors."""


class InputError(PlrrError):
    """Caller passed malformed data (bad shapes, out-of-range ids, bad config)."""


class ConfigError(PlrrError):
    """Run configuration unusable (parse failure, unknown key or preset)."""


class CapacityError(PlrrError):
    """A per-session limit was exceeded (KV cache past max_seq)."""


class FramingError(PlrrError):
    """Byte stream cannot be parsed into a frame (truncation, bad lengths)."""


class ProtocolError(PlrrError):
    """Well-formed frame violates the protocol (bad magic/version/type/order)."""


class HandshakeError(PlrrError):
    """Session establishment failed (digest mismatch, replayed nonce)."""


class TransportError(PlrrError):
    """The underlying byte stream failed mid-session."""


class InternalError(PlrrError):
    """Invariant broken inside plrr itself (missing stash entry, bad state)."""
