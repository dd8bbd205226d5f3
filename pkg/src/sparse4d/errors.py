"""Exception types shared across modules."""


class BudgetExceededError(ValueError):
    """A dense reference structure would exceed the configured size cap."""


class TopologyMismatchError(ValueError):
    """A deformed mesh does not share face topology with the rest pose."""


class NonWatertightMeshError(ValueError):
    """A mesh that must be closed has boundary edges."""


class MeshFormatError(ValueError):
    """An OBJ file could not be parsed into a triangle mesh."""
