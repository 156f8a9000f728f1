"""Exception types raised across the toolkit.

Everything derives from :class:`HoikitError` so callers (notably the CLI)
can distinguish domain errors caused by bad inputs from genuine bugs.
"""


class HoikitError(Exception):
    """Base class for all toolkit errors."""


# --- geometry ---------------------------------------------------------------

class DegenerateRot6d(HoikitError):
    """6D rotation columns are near-zero or near-collinear."""


class NonPositiveDuration(HoikitError):
    """Polynomial segment duration must be > 0."""


class SequenceTooShort(HoikitError):
    """Not enough samples for the requested finite-difference stencil."""


# --- data -------------------------------------------------------------------

class WrongDimensions(HoikitError):
    """Trajectory/feature dimensions do not match the expected layout."""


class EmptyDataset(HoikitError):
    """Operation requires at least one trajectory."""


class DatasetTooSmall(HoikitError):
    """Dataset too small to split."""


class UnknownTask(HoikitError):
    """Task name has no embedding and the deterministic stub is disabled."""


# --- calibration ------------------------------------------------------------

class DegenerateConfiguration(HoikitError):
    """Point set is rank-deficient; rigid alignment is not unique."""


class TooFewInliers(HoikitError):
    """Fewer than three samples survived outlier rejection."""


class NoInliers(HoikitError):
    """RMSE requested over an empty inlier set."""


# --- augmentation -----------------------------------------------------------

class NoContact(HoikitError):
    """Wrist never came within the contact threshold of the object."""


class TooShort(HoikitError):
    """Trajectory too short to resample."""


class LengthMismatch(HoikitError):
    """Paired trajectories must have equal length."""


# --- autodiff / models ------------------------------------------------------

class ShapeMismatch(HoikitError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteGradient(HoikitError):
    """A gradient contained NaN or infinity."""


class BatchTooSmall(HoikitError):
    """Loss requires a batch of at least two items."""


# --- kinematics -------------------------------------------------------------

class DimensionMismatch(HoikitError):
    """Joint vector length does not match the chain."""


class NotConverged(HoikitError):
    """IK failed to reach tolerance; carries the final error norms."""

    def __init__(self, message: str, pos_err: float = float("nan"),
                 rot_err: float = float("nan")):
        super().__init__(message)
        self.pos_err = pos_err
        self.rot_err = rot_err


class TooFewKeyframes(HoikitError):
    """Command upsampling needs at least two keyframes."""
