# qnd_readout/calibration/histograms.py
"""
Single-repetition readout calibration from labeled traces.

For every readout time t_R the peak signal I_p = max over t < t_R of I(t) is
histogrammed per prepared state on shared uniform bins. The log-likelihood
ratio table lambda(I_p) decides each repetition (lambda > 0 reads 1), and
the conditional error rates are the marginals of the unsmoothed histograms
on the wrong side of that rule. The calibrated t_R minimizes their average.
"""

from dataclasses import dataclass
import math
from typing import Sequence

import numpy as np
import numpy.typing as npt
from loguru import logger

from ..core.constants import DEFAULT_LLR_CLAMP
from ..core.exceptions import ConfigurationError, DataError, NumericalError
from ..core.types import (
    CalibrationResult,
    EmpiricalDistribution,
    FloatArray,
    Trace,
    TraceSet,
    llr_from_distributions,
)

DEFAULT_N_BINS = 60
DEFAULT_PSEUDO_COUNT = 0.5

# slack on t_R / dt_sample when counting samples with t < t_R
_GRID_TOL = 1e-9


def _prefix_length(t_r: float, dt_sample: float, n_samples: int) -> int:
    if not t_r >= dt_sample * (1 - _GRID_TOL):
        raise DataError(f"t_r={t_r} is shorter than one sample period ({dt_sample})")
    if t_r > n_samples * dt_sample * (1 + _GRID_TOL):
        raise DataError(f"t_r={t_r} exceeds the trace duration ({n_samples * dt_sample})")
    return min(math.ceil(t_r / dt_sample - _GRID_TOL), n_samples)


def peak_signal(trace: Trace, t_r: float) -> float:
    """Maximum sample over times t < t_r"""
    k = _prefix_length(t_r, trace.dt_sample, len(trace))
    return float(trace.samples[:k].max())


def peak_signals(traces: Sequence[Trace] | TraceSet, t_r: float) -> FloatArray:
    trace_set = TraceSet.from_traces(traces)
    k = _prefix_length(t_r, trace_set.dt_sample, trace_set.n_samples)
    return trace_set.samples[:, :k].max(axis=1)


def shared_edges(values: npt.ArrayLike, n_bins: int = DEFAULT_N_BINS) -> FloatArray:
    """Uniform edges spanning [min, max] of the pooled values"""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise DataError("Cannot bin an empty sample")
    if n_bins < 1:
        raise ConfigurationError("n_bins must be at least 1")
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, n_bins + 1)


def distributions_from_peaks(
    peaks1: npt.ArrayLike,
    peaks0: npt.ArrayLike,
    n_bins: int = DEFAULT_N_BINS,
    pseudo_count: float = DEFAULT_PSEUDO_COUNT,
) -> tuple[EmpiricalDistribution, EmpiricalDistribution]:
    peaks1 = np.asarray(peaks1, dtype=np.float64)
    peaks0 = np.asarray(peaks0, dtype=np.float64)
    if peaks1.size == 0 or peaks0.size == 0:
        raise DataError("Both labels need at least one trace")
    edges = shared_edges(np.concatenate([peaks1, peaks0]), n_bins)
    return (
        EmpiricalDistribution.from_samples(peaks1, edges, pseudo_count),
        EmpiricalDistribution.from_samples(peaks0, edges, pseudo_count),
    )


def build_distributions(
    traces1: Sequence[Trace] | TraceSet,
    traces0: Sequence[Trace] | TraceSet,
    t_r: float,
    n_bins: int = DEFAULT_N_BINS,
    pseudo_count: float = DEFAULT_PSEUDO_COUNT,
) -> tuple[EmpiricalDistribution, EmpiricalDistribution]:
    """Peak-signal histograms P(I_p|1), P(I_p|0) on shared edges"""
    if len(traces1) == 0 or len(traces0) == 0:
        raise DataError("Both labels need at least one trace")
    return distributions_from_peaks(
        peak_signals(traces1, t_r), peak_signals(traces0, t_r), n_bins, pseudo_count
    )


def single_rep_errors(
    dist1: EmpiricalDistribution,
    dist0: EmpiricalDistribution,
    llr_clamp: float = DEFAULT_LLR_CLAMP,
) -> tuple[float, float, float]:
    """
    (eps1, eps0, eps_avg) from histogram marginals.

    Bins with lambda <= 0 read 0 and count toward eps1; bins with lambda > 0
    read 1 and count toward eps0.
    """
    llr = llr_from_distributions(dist1, dist0, llr_clamp)
    eps1 = float(dist1.frequencies()[llr <= 0].sum())
    eps0 = float(dist0.frequencies()[llr > 0].sum())
    return eps1, eps0, (eps1 + eps0) / 2


def binomial_stderr(eps: float, n: int) -> float:
    """Standard deviation of a binomial error-rate estimate, sqrt(eps (1 - eps) / n)"""
    if n < 1:
        raise DataError(f"Need at least one sample for a binomial error bar, got n={n}")
    if not 0.0 <= eps <= 1.0:
        raise DataError(f"Error rate must lie in [0, 1], got {eps}")
    return math.sqrt(eps * (1.0 - eps) / n)


def threshold_equivalent(llr_table: npt.ArrayLike, bin_edges: npt.ArrayLike) -> float | None:
    """
    Peak-signal threshold that reproduces sign(lambda), if one exists.

    Exists when the bins reading 1 form a single upper block.
    """
    positive = np.asarray(llr_table) > 0
    if positive.all() or not positive.any():
        return None
    first = int(np.argmax(positive))
    if not positive[first:].all():
        return None
    return float(np.asarray(bin_edges)[first])


@dataclass(frozen=True)
class SweepPoint:
    t_r: float
    eps1: float
    eps0: float
    eps_avg: float


def default_grid(trace_set: TraceSet) -> FloatArray:
    """Every sample instant: t_R = (j + 1) dt for j = 0 .. n_samples - 1"""
    return (np.arange(trace_set.n_samples) + 1) * trace_set.dt_sample


def calibration_sweep(
    traces1: Sequence[Trace] | TraceSet,
    traces0: Sequence[Trace] | TraceSet,
    t_r_grid: npt.ArrayLike | None = None,
    n_bins: int = DEFAULT_N_BINS,
    pseudo_count: float = DEFAULT_PSEUDO_COUNT,
    llr_clamp: float = DEFAULT_LLR_CLAMP,
) -> list[SweepPoint]:
    """Average single-repetition error as a function of readout time"""
    set1, set0 = TraceSet.from_traces(traces1), TraceSet.from_traces(traces0)
    if set1.dt_sample != set0.dt_sample or set1.n_samples != set0.n_samples:
        raise DataError("Both labels must share trace length and sampling interval")

    grid = default_grid(set1) if t_r_grid is None else np.sort(np.asarray(t_r_grid, dtype=np.float64))
    if grid.size == 0:
        raise ConfigurationError("Readout-time grid is empty")

    prefix1, prefix0 = set1.prefix_max(), set0.prefix_max()
    points = []
    for t_r in grid:
        k = _prefix_length(float(t_r), set1.dt_sample, set1.n_samples)
        dist1, dist0 = distributions_from_peaks(prefix1[:, k - 1], prefix0[:, k - 1], n_bins, pseudo_count)
        eps1, eps0, eps_avg = single_rep_errors(dist1, dist0, llr_clamp)
        logger.debug(f"t_r={t_r:.3e}s eps1={eps1:.4f} eps0={eps0:.4f} eps={eps_avg:.4f}")
        points.append(SweepPoint(t_r=float(t_r), eps1=eps1, eps0=eps0, eps_avg=eps_avg))
    return points


def calibrate_at(
    traces1: Sequence[Trace] | TraceSet,
    traces0: Sequence[Trace] | TraceSet,
    t_r: float,
    n_bins: int = DEFAULT_N_BINS,
    pseudo_count: float = DEFAULT_PSEUDO_COUNT,
    llr_clamp: float = DEFAULT_LLR_CLAMP,
) -> CalibrationResult:
    """Full calibration result at a fixed readout time"""
    set1, set0 = TraceSet.from_traces(traces1), TraceSet.from_traces(traces0)
    peaks1, peaks0 = peak_signals(set1, t_r), peak_signals(set0, t_r)
    dist1, dist0 = distributions_from_peaks(peaks1, peaks0, n_bins, pseudo_count)
    eps1, eps0, eps_avg = single_rep_errors(dist1, dist0, llr_clamp)
    llr_table = llr_from_distributions(dist1, dist0, llr_clamp)

    # marginals must agree with classifying each trace by sign(lambda)
    direct1 = float(np.mean(llr_table[dist1.bin_index(peaks1)] <= 0))
    direct0 = float(np.mean(llr_table[dist0.bin_index(peaks0)] > 0))
    if abs(direct1 - eps1) > 1e-12 or abs(direct0 - eps0) > 1e-12:
        raise NumericalError(
            f"Histogram marginals ({eps1}, {eps0}) disagree with per-trace rates ({direct1}, {direct0})"
        )

    threshold = threshold_equivalent(llr_table, dist1.bin_edges)
    if threshold is None:
        logger.warning(f"lambda table at t_r={t_r:.3e}s has no single-threshold equivalent")

    return CalibrationResult(
        t_r_opt=float(t_r),
        eps1=eps1,
        eps0=eps0,
        eps_avg=eps_avg,
        stderr1=binomial_stderr(eps1, len(set1)),
        stderr0=binomial_stderr(eps0, len(set0)),
        dist1=dist1,
        dist0=dist0,
        llr_table=llr_table,
        llr_clamp=llr_clamp,
        threshold_equivalent=threshold,
    )


def optimize_readout_time(
    traces1: Sequence[Trace] | TraceSet,
    traces0: Sequence[Trace] | TraceSet,
    t_r_grid: npt.ArrayLike | None = None,
    n_bins: int = DEFAULT_N_BINS,
    pseudo_count: float = DEFAULT_PSEUDO_COUNT,
    llr_clamp: float = DEFAULT_LLR_CLAMP,
) -> CalibrationResult:
    """
    Calibrate at the readout time minimizing the average single-repetition
    error; ties go to the smallest t_R.
    """
    sweep = calibration_sweep(traces1, traces0, t_r_grid, n_bins, pseudo_count, llr_clamp)
    best = min(sweep, key=lambda p: (p.eps_avg, p.t_r))
    result = calibrate_at(traces1, traces0, best.t_r, n_bins, pseudo_count, llr_clamp)
    logger.info(
        f"Calibrated t_r={result.t_r_opt * 1e6:.1f}us: eps1={result.eps1:.4f}±{result.stderr1:.4f}, "
        f"eps0={result.eps0:.4f}±{result.stderr0:.4f}, eps={result.eps_avg:.4f}"
    )
    return result


def threshold_bits(peaks: npt.ArrayLike, calibration: CalibrationResult) -> npt.NDArray[np.int64]:
    """Hard outcomes: 1 where lambda(I_p) > 0, else 0"""
    return (calibration.llr(peaks) > 0).astype(np.int64)
