"""Exception types raised across the package."""


class AutofabricError(Exception):
    pass


class UnknownFunction(AutofabricError):
    """Contract call names a function/variant pair that is not registered."""


class MissingKey(AutofabricError, KeyError):
    """A contract tried to read a key that is not in the world state."""


class SequenceGap(AutofabricError):
    """A block was validated out of order."""


class InvalidConfig(AutofabricError, ValueError):
    pass


class FairnessUndefined(AutofabricError, ValueError):
    """Jain's index of two zero shares."""


class SchemaMismatch(AutofabricError):
    pass
