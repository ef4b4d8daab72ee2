"""Exception taxonomy shared across the package."""


class StructuralError(ValueError):
    """Malformed input: shape mismatch, empty vector, bad parameter range."""


class AllocationError(ValueError):
    """A grant exceeds what the sender can supply (coordinator bug)."""


class ProtocolError(ValueError):
    """A message failed to decode or carries out-of-range indices."""


class EncodingError(ValueError):
    """A value does not fit its wire field."""
