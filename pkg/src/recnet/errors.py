"""Exception types shared across modules."""


class DimensionError(ValueError):
    """Vectors, indexes or models disagree on dimensionality."""
