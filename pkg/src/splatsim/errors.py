"""Exception types shared across the toolkit."""


class SplatSimError(Exception):
    """Base class for all toolkit errors."""


class InvalidPrimitiveError(SplatSimError):
    """A Gaussian carries non-finite or otherwise unusable fields."""


class DegeneratePrimitiveError(SplatSimError):
    """A Gaussian's covariance is numerically singular."""


class PlyFormatError(SplatSimError):
    """A splat PLY file violates the expected layout."""


class MeshFormatError(SplatSimError):
    """A surface mesh file cannot be parsed."""


class EmptySurfaceError(SplatSimError):
    """No Gaussians were available to build a surface from."""


class InvalidScaleError(SplatSimError):
    """A scale triple contains a non-positive component."""


class EmptySetError(SplatSimError):
    """An operation that averages over Gaussians received an empty set."""


class InvalidPoseError(SplatSimError):
    """A geo-referenced pose violates its invariants."""


class DegenerateStateError(SplatSimError):
    """A particle's elastic deformation gradient is not invertible."""


class StencilError(SplatSimError):
    """A particle sits too close to the grid edge for a full B-spline stencil."""


class SimulationDivergedError(SplatSimError):
    """NaN detected in particle state; carries step index and particle id."""

    def __init__(self, step, particle):
        self.step = step
        self.particle = particle
        super().__init__(f"NaN in particle state at step {step}, particle {particle}")


class CheckpointError(SplatSimError):
    """A checkpoint file is inconsistent with the scene it is rendered against."""


class ConfigError(SplatSimError):
    """A pipeline configuration block is invalid."""
