# qnd_readout/core/constants.py

from enum import IntEnum, StrEnum # python 3.11


class QubitState(IntEnum):
    """
    Classical state of a spin qubit.

    All vectors and matrices are indexed in the basis order (1, 0), so state 1
    lives at index 0 and state 0 at index 1. Use `basis_index` rather than the
    raw value when indexing.
    """
    ZERO = 0  # spin-down
    ONE = 1  # spin-up

    @property
    def basis_index(self) -> int:
        return 1 - int(self)

    def flipped(self) -> "QubitState":
        return QubitState(1 - int(self))


class ObservationKind(StrEnum):
    """Kind of per-cycle outcome carried by a record or expected by a model."""
    BINARY = "binary"
    PEAK = "peak"


class ModelKind(StrEnum):
    BINARY = "binary"
    EMPIRICAL = "empirical"


class DecodeMode(StrEnum):
    HARD = "hard"
    SOFT = "soft"
    MAJORITY = "majority"


class Channel(StrEnum):
    """How per-cycle outcomes are produced in an experiment."""
    TRACES = "traces"  # full charge-sensor traces
    BINARY = "binary"  # bits drawn directly from the hidden state
    EMPIRICAL = "empirical"  # peak signals drawn from calibrated histograms


class Stream(IntEnum):
    """Tags separating the independent RNG streams of one master seed."""
    EVALUATION = 0
    CALIBRATION = 1
    PREPARATION = 2
    ADDED_NOISE = 3
    OUTCOMES = 4


# which model kind decodes which observation kind
MODEL_FOR_OBSERVATION = {
    ObservationKind.BINARY: ModelKind.BINARY,
    ObservationKind.PEAK: ModelKind.EMPIRICAL,
}

DEFAULT_LLR_CLAMP = 50.0
DEFAULT_PRIORS = (0.5, 0.5)
