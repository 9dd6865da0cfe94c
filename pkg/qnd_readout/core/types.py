# qnd_readout/core/types.py

from dataclasses import dataclass, field
from typing import Any, Self, Sequence, TypeAlias

import numpy as np
import numpy.typing as npt

from .constants import (
    DEFAULT_LLR_CLAMP,
    MODEL_FOR_OBSERVATION,
    ModelKind,
    ObservationKind,
    QubitState,
)
from .exceptions import DataError, KindMismatchError

FloatArray: TypeAlias = npt.NDArray[np.float64]
IntArray: TypeAlias = npt.NDArray[np.int64]

UNIFORM_EDGE_RTOL = 1e-6


def _frozen_array(values: Any, dtype: Any = np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic matrix with w[x][y] = P(x_{k+1}=x | x_k=y), basis (1, 0)"""
    w: FloatArray

    def __post_init__(self) -> None:
        w = _frozen_array(self.w)
        if w.shape != (2, 2):
            raise DataError(f"Transition matrix must be 2x2, got shape {w.shape}")
        if np.any(w < 0) or np.any(w > 1):
            raise DataError("Transition probabilities must lie in [0, 1]")
        if np.any(np.abs(w.sum(axis=0) - 1.0) > 1e-12):
            raise DataError("Transition matrix columns must sum to 1")
        object.__setattr__(self, "w", w)

    @classmethod
    def identity(cls) -> Self:
        return cls(np.eye(2))

    def probability(self, to_state: QubitState, from_state: QubitState) -> float:
        """P(x_{k+1} = to_state | x_k = from_state)"""
        return float(self.w[QubitState(to_state).basis_index, QubitState(from_state).basis_index])

    def __matmul__(self, other: "TransitionMatrix") -> "TransitionMatrix":
        return TransitionMatrix(self.w @ other.w)


@dataclass(frozen=True)
class BeliefState:
    """Normalized filter state rho_k with accumulated ln L_k"""
    rho: FloatArray
    log_likelihood: float = 0.0
    cycle_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "rho", _frozen_array(self.rho))

    @classmethod
    def delta(cls, state: QubitState) -> Self:
        """Belief concentrated on one state, the filter start for hypothesis x0 = state"""
        rho = np.zeros(2)
        rho[QubitState(state).basis_index] = 1.0
        return cls(rho=rho)


@dataclass(frozen=True)
class EmpiricalDistribution:
    """
    Histogram of peak signals on uniform bins with additive smoothing.

    Values outside the binned range are assigned to the nearest edge bin.
    """
    bin_edges: FloatArray
    counts: IntArray
    pseudo_count: float = 0.5

    def __post_init__(self) -> None:
        edges = _frozen_array(self.bin_edges)
        counts = _frozen_array(self.counts, dtype=np.int64)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise DataError("bin_edges must be strictly increasing with at least two entries")
        steps = np.diff(edges)
        if not np.allclose(steps, steps.mean(), rtol=UNIFORM_EDGE_RTOL, atol=0.0):
            raise DataError("bin_edges must be uniformly spaced")
        if counts.shape != (len(edges) - 1,):
            raise DataError("counts must have one entry per bin")
        if np.any(counts < 0):
            raise DataError("counts must be nonnegative")
        if self.pseudo_count < 0:
            raise DataError("pseudo_count must be nonnegative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def lo(self) -> float:
        return float(self.bin_edges[0])

    @property
    def width(self) -> float:
        return float((self.bin_edges[-1] - self.bin_edges[0]) / self.n_bins)

    def bin_index(self, values: npt.ArrayLike) -> IntArray:
        """Bin of each value, clamped into [0, n_bins - 1]"""
        x = np.asarray(values, dtype=np.float64)
        idx = np.floor((x - self.lo) / self.width)
        return np.clip(idx, 0, self.n_bins - 1).astype(np.int64)

    def probabilities(self) -> FloatArray:
        """Smoothed bin probabilities (counts + a) / (total + n_bins * a)"""
        denom = self.total + self.n_bins * self.pseudo_count
        if denom == 0:
            return np.full(self.n_bins, 1.0 / self.n_bins)
        return (self.counts + self.pseudo_count) / denom

    def frequencies(self) -> FloatArray:
        """Unsmoothed empirical bin frequencies"""
        if self.total == 0:
            return np.zeros(self.n_bins)
        return self.counts / self.total

    def probability(self, values: npt.ArrayLike) -> FloatArray:
        return self.probabilities()[self.bin_index(values)]

    def shares_edges(self, other: "EmpiricalDistribution") -> bool:
        return self.bin_edges.shape == other.bin_edges.shape and bool(
            np.array_equal(self.bin_edges, other.bin_edges)
        )

    @classmethod
    def from_samples(cls, values: npt.ArrayLike, bin_edges: npt.ArrayLike, pseudo_count: float = 0.5) -> Self:
        edges = np.asarray(bin_edges, dtype=np.float64)
        shell = cls(bin_edges=edges, counts=np.zeros(len(edges) - 1, dtype=np.int64), pseudo_count=pseudo_count)
        counts = np.bincount(shell.bin_index(values), minlength=shell.n_bins)
        return cls(bin_edges=edges, counts=counts, pseudo_count=pseudo_count)

    def to_dict(self) -> dict[str, Any]:
        return {
            "bin_edges": self.bin_edges.tolist(),
            "counts": self.counts.tolist(),
            "pseudo_count": self.pseudo_count,
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Self:
        return cls(
            bin_edges=np.asarray(data["bin_edges"], dtype=np.float64),
            counts=np.asarray(data["counts"], dtype=np.int64),
            pseudo_count=float(data.get("pseudo_count", 0.5)),
        )


def llr_from_distributions(
    dist1: EmpiricalDistribution, dist0: EmpiricalDistribution, llr_clamp: float = DEFAULT_LLR_CLAMP
) -> FloatArray:
    """Per-bin ln(p1/p0) on smoothed probabilities, clamped to +/- llr_clamp"""
    if not dist1.shares_edges(dist0):
        raise DataError("Distributions must share bin edges")
    p1, p0 = dist1.probabilities(), dist0.probabilities()
    with np.errstate(divide="ignore", invalid="ignore"):
        llr = np.log(p1) - np.log(p0)
    llr = np.where((p1 == 0) & (p0 == 0), 0.0, llr)
    return np.clip(llr, -llr_clamp, llr_clamp)


@dataclass(frozen=True)
class CalibrationResult:
    t_r_opt: float
    eps1: float
    eps0: float
    eps_avg: float
    stderr1: float
    stderr0: float
    dist1: EmpiricalDistribution
    dist0: EmpiricalDistribution
    llr_table: FloatArray
    llr_clamp: float = DEFAULT_LLR_CLAMP
    threshold_equivalent: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "llr_table", _frozen_array(self.llr_table))

    def llr(self, peaks: npt.ArrayLike) -> FloatArray:
        """Single-repetition log-likelihood ratio of peak signals"""
        return self.llr_table[self.dist1.bin_index(peaks)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "t_r_opt": self.t_r_opt,
            "eps1": self.eps1,
            "eps0": self.eps0,
            "eps_avg": self.eps_avg,
            "stderr1": self.stderr1,
            "stderr0": self.stderr0,
            "bin_edges": self.dist1.bin_edges.tolist(),
            "counts1": self.dist1.counts.tolist(),
            "counts0": self.dist0.counts.tolist(),
            "pseudo_count": self.dist1.pseudo_count,
            "llr_table": self.llr_table.tolist(),
            "llr_clamp": self.llr_clamp,
            "threshold_equivalent": self.threshold_equivalent,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Self:
        try:
            pseudo_count = float(data.get("pseudo_count", 0.5))
            edges = np.asarray(data["bin_edges"], dtype=np.float64)
            return cls(
                t_r_opt=float(data["t_r_opt"]),
                eps1=float(data["eps1"]),
                eps0=float(data["eps0"]),
                eps_avg=float(data["eps_avg"]),
                stderr1=float(data["stderr1"]),
                stderr0=float(data["stderr0"]),
                dist1=EmpiricalDistribution(edges, np.asarray(data["counts1"]), pseudo_count),
                dist0=EmpiricalDistribution(edges, np.asarray(data["counts0"]), pseudo_count),
                llr_table=np.asarray(data["llr_table"], dtype=np.float64),
                llr_clamp=float(data.get("llr_clamp", DEFAULT_LLR_CLAMP)),
                threshold_equivalent=data.get("threshold_equivalent"),
            )
        except (KeyError, TypeError) as e:
            raise DataError(f"Malformed calibration data: {e}") from e


@dataclass(frozen=True)
class ObservationModel:
    """
    Per-state outcome distributions P(O|x).

    A binary model uses the conditional single-repetition error rates; an
    empirical model uses peak-signal histograms with |lambda| clamped to
    llr_clamp so every likelihood vector stays positive.
    """
    kind: ModelKind
    eps1: float = 0.0
    eps0: float = 0.0
    dist1: EmpiricalDistribution | None = None
    dist0: EmpiricalDistribution | None = None
    llr_clamp: float = DEFAULT_LLR_CLAMP

    def __post_init__(self) -> None:
        if self.kind == ModelKind.BINARY:
            for eps in (self.eps1, self.eps0):
                if not 0.0 <= eps < 0.5:
                    raise DataError(f"Binary error rates must lie in [0, 0.5), got {eps}")
        else:
            if self.dist1 is None or self.dist0 is None:
                raise DataError("Empirical model needs both distributions")
            if not self.dist1.shares_edges(self.dist0):
                raise DataError("Empirical distributions must share bin edges")
        if not self.llr_clamp > 0:
            raise DataError("llr_clamp must be positive")

    @classmethod
    def binary(cls, eps1: float, eps0: float, llr_clamp: float = DEFAULT_LLR_CLAMP) -> Self:
        return cls(kind=ModelKind.BINARY, eps1=eps1, eps0=eps0, llr_clamp=llr_clamp)

    @classmethod
    def empirical(
        cls, dist1: EmpiricalDistribution, dist0: EmpiricalDistribution, llr_clamp: float = DEFAULT_LLR_CLAMP
    ) -> Self:
        return cls(kind=ModelKind.EMPIRICAL, dist1=dist1, dist0=dist0, llr_clamp=llr_clamp)

    @classmethod
    def from_calibration(cls, calibration: CalibrationResult, kind: ModelKind) -> Self:
        if kind == ModelKind.BINARY:
            return cls.binary(calibration.eps1, calibration.eps0, calibration.llr_clamp)
        return cls.empirical(calibration.dist1, calibration.dist0, calibration.llr_clamp)

    @property
    def observation_kind(self) -> ObservationKind:
        return ObservationKind.BINARY if self.kind == ModelKind.BINARY else ObservationKind.PEAK

    def check_kind(self, kind: ObservationKind | str) -> None:
        if MODEL_FOR_OBSERVATION[ObservationKind(kind)] != self.kind:
            raise KindMismatchError(f"A {self.kind} model cannot decode {kind} observations")

    def likelihoods(self, observations: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
        """Elementwise (P(o|1), P(o|0)) for an array of outcomes"""
        o = np.asarray(observations)
        if self.kind == ModelKind.BINARY:
            if o.size and not np.all((o == 0) | (o == 1)):
                raise KindMismatchError("Binary model needs outcomes in {0, 1}")
            ones = o == 1
            p1 = np.where(ones, 1.0 - self.eps1, self.eps1)
            p0 = np.where(ones, self.eps0, 1.0 - self.eps0)
            return p1.astype(np.float64), p0.astype(np.float64)

        assert self.dist1 is not None and self.dist0 is not None
        if o.size and not np.issubdtype(o.dtype, np.number):
            raise KindMismatchError("Empirical model needs real-valued peak signals")
        p1 = self.dist1.probability(o)
        p0 = self.dist0.probability(o)
        both_zero = (p1 == 0) & (p0 == 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = np.where(both_zero, 0.0, np.log(p1) - np.log(p0))
        clamped = np.clip(raw, -self.llr_clamp, self.llr_clamp)
        # keep the larger entry, rescale the smaller one to the clamped ratio
        ref = np.where(both_zero, 1.0, np.maximum(p1, p0))
        out1 = np.where(clamped >= 0, ref, ref * np.exp(clamped))
        out0 = np.where(clamped >= 0, ref * np.exp(-clamped), ref)
        adjust = both_zero | (raw != clamped)
        return np.where(adjust, out1, p1), np.where(adjust, out0, p0)


@dataclass(frozen=True)
class ReadoutRecord:
    """Per-cycle outcomes of one repetitive readout, homogeneous in kind"""
    observations: tuple[float, ...]
    kind: ObservationKind
    cycle_duration: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ObservationKind(self.kind))
        if self.kind == ObservationKind.BINARY:
            values = tuple(int(o) for o in self.observations)
            if any(o not in (0, 1) for o in values):
                raise DataError("Binary records hold only 0 and 1")
        else:
            values = tuple(float(o) for o in self.observations)
        object.__setattr__(self, "observations", values)
        if not self.cycle_duration >= 0:
            raise DataError("cycle_duration must be nonnegative")

    def __len__(self) -> int:
        return len(self.observations)

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycle_duration_s": self.cycle_duration,
            "kind": self.kind.value,
            "observations": list(self.observations),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Self:
        try:
            return cls(
                observations=tuple(data["observations"]),
                kind=ObservationKind(data["kind"]),
                cycle_duration=float(data["cycle_duration_s"]),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise DataError(f"Malformed readout record: {e}") from e


@dataclass(frozen=True)
class DecodeResult:
    lambda_log: float
    decision: QubitState
    belief_trajectory: tuple[tuple[BeliefState, BeliefState], ...] = ()
    per_cycle_lambda: tuple[float, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda_log": self.lambda_log,
            "decision": int(self.decision),
            "per_cycle_lambda": list(self.per_cycle_lambda),
        }


@dataclass(frozen=True)
class Trace:
    """Uniformly sampled charge-sensor current for one ancilla readout"""
    samples: FloatArray
    dt_sample: float

    def __post_init__(self) -> None:
        samples = _frozen_array(self.samples)
        if samples.ndim != 1 or not np.all(np.isfinite(samples)):
            raise DataError("Trace samples must be a finite 1-d sequence")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.dt_sample


@dataclass(frozen=True)
class TraceSet:
    """Equal-length traces stacked as (n_traces, n_samples)"""
    samples: FloatArray
    dt_sample: float

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise DataError("A trace set must be two-dimensional")
        object.__setattr__(self, "samples", samples)

    @classmethod
    def from_traces(cls, traces: "Sequence[Trace] | TraceSet") -> "TraceSet":
        if isinstance(traces, TraceSet):
            return traces
        if len(traces) == 0:
            raise DataError("Empty trace set")
        dts = {t.dt_sample for t in traces}
        lengths = {len(t) for t in traces}
        if len(dts) != 1 or len(lengths) != 1:
            raise DataError("Traces in a set must share length and sampling interval")
        return cls(samples=np.stack([t.samples for t in traces]), dt_sample=dts.pop())

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt_sample

    def prefix_max(self) -> FloatArray:
        """Running maximum along each trace; column j is the peak over samples 0..j"""
        return np.maximum.accumulate(self.samples, axis=1)


@dataclass(frozen=True)
class RunRecord:
    """Ground truth and traces of one simulated repetitive readout"""
    x0: QubitState
    hidden_states: tuple[QubitState, ...]
    ancilla_bits: tuple[QubitState, ...]
    traces: tuple[Trace, ...]

    def __len__(self) -> int:
        return len(self.hidden_states)


@dataclass
class TraceBatch:
    """
    Labeled traces of many runs, samples shaped (n_runs, n_cycles, n_samples).

    Ground truth (x0, hidden, ancilla) is optional; batches read back from a
    file carry only the prepared labels.
    """
    prepared_state: IntArray
    trial: IntArray
    samples: FloatArray
    dt_sample: float
    x0: IntArray | None = None
    hidden: IntArray | None = None
    ancilla: IntArray | None = None

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.prepared_state = np.asarray(self.prepared_state, dtype=np.int64)
        self.trial = np.asarray(self.trial, dtype=np.int64)
        if self.samples.ndim != 3:
            raise DataError("Trace batch samples must be (n_runs, n_cycles, n_samples)")
        if self.prepared_state.shape != (self.samples.shape[0],) or self.trial.shape != self.prepared_state.shape:
            raise DataError("Every run needs a prepared state and a trial index")
        if not np.isin(self.prepared_state, (0, 1)).all():
            raise DataError("Prepared states must be 0 or 1")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def n_cycles(self) -> int:
        return self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[2]

    def cycle_traces(self, state: int, cycle: int = 0) -> TraceSet:
        """Traces of one cycle for every run prepared in `state`"""
        mask = self.prepared_state == state
        if not mask.any():
            raise DataError(f"Trace batch has no runs prepared in state {state}")
        return TraceSet(samples=self.samples[mask, cycle, :], dt_sample=self.dt_sample)


@dataclass
class ModeCurve:
    """Conditional logical error rates of one decode mode, indexed by N - 1"""
    eps1: FloatArray
    eps0: FloatArray
    stderr1: FloatArray
    stderr0: FloatArray

    @property
    def eps_avg(self) -> FloatArray:
        return (self.eps1 + self.eps0) / 2

    @property
    def stderr_avg(self) -> FloatArray:
        return np.sqrt(self.stderr1**2 + self.stderr0**2) / 2

    @property
    def fidelity(self) -> FloatArray:
        return 1.0 - self.eps_avg

    @property
    def visibility(self) -> FloatArray:
        return 1.0 - 2.0 * self.eps_avg

    def to_dict(self) -> dict[str, list[float]]:
        return {
            "eps1": self.eps1.tolist(),
            "eps0": self.eps0.tolist(),
            "stderr1": self.stderr1.tolist(),
            "stderr0": self.stderr0.tolist(),
            "eps_avg": self.eps_avg.tolist(),
            "stderr_avg": self.stderr_avg.tolist(),
            "fidelity": self.fidelity.tolist(),
            "visibility": self.visibility.tolist(),
        }


@dataclass
class ErrorCurve:
    n_cycles: list[int]
    curves: dict[str, ModeCurve]
    calibration: CalibrationResult | None = None
    n_trials_per_state: int = 0

    def rows(self) -> list[dict[str, Any]]:
        """Tidy rows (mode, prepared_state, N, eps, stderr)"""
        out = []
        for mode, curve in self.curves.items():
            for state, eps, err in (
                ("1", curve.eps1, curve.stderr1),
                ("0", curve.eps0, curve.stderr0),
                ("avg", curve.eps_avg, curve.stderr_avg),
            ):
                for n, e, s in zip(self.n_cycles, eps, err):
                    out.append({"mode": mode, "prepared_state": state, "N": n, "eps": float(e), "stderr": float(s)})
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_cycles": list(self.n_cycles),
            "n_trials_per_state": self.n_trials_per_state,
            "curves": {mode: curve.to_dict() for mode, curve in self.curves.items()},
            "calibration": self.calibration.to_dict() if self.calibration else None,
        }


@dataclass
class CycleProbabilities:
    """Spin-up frequencies per cycle (single repetition) and per prefix (cumulative)"""
    n_cycles: list[int]
    single: dict[int, FloatArray]
    cumulative: dict[int, FloatArray]
    n_trials_per_state: int

    @property
    def cumulative_visibility(self) -> FloatArray:
        return self.cumulative[1] - self.cumulative[0]

    @property
    def single_visibility(self) -> FloatArray:
        return self.single[1] - self.single[0]

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for state in (1, 0):
            for n, p_single, p_cum in zip(self.n_cycles, self.single[state], self.cumulative[state]):
                out.append({
                    "prepared_state": state,
                    "N": n,
                    "p1_single": float(p_single),
                    "p1_cumulative": float(p_cum),
                })
        return out


@dataclass
class FitResult:
    parameters: dict[str, float]
    stderr: dict[str, float | None]
    residual_norm: float
    success: bool = True
    degenerate: bool = False
    message: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "parameters": dict(self.parameters),
            "stderr": dict(self.stderr),
            "residual_norm": self.residual_norm,
            "success": self.success,
            "degenerate": self.degenerate,
            "message": self.message,
            **({"extra": self.extra} if self.extra else {}),
        }

