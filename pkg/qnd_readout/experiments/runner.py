# qnd_readout/experiments/runner.py
"""
Monte Carlo studies of repetitive readout.

An experiment calibrates the single-repetition readout on an independently
seeded trace set, simulates n_trials_per_state runs of max_cycles cycles per
prepared state and decodes every prefix N = 1 .. max_cycles. Error rates are
judged against the *prepared* label, so preparation flips count as errors.
"""

from dataclasses import dataclass, field, replace
import math
from typing import Any, Callable, Sequence, TypeVar

import numpy as np
import numpy.typing as npt
from joblib import Parallel, delayed
from loguru import logger

from ..calibration.histograms import (
    SweepPoint,
    calibration_sweep,
    optimize_readout_time,
    peak_signals,
    threshold_bits,
)
from ..core.config import ExperimentConfig, effective_config
from ..core.constants import Channel, DecodeMode, ModelKind, QubitState, Stream
from ..core.exceptions import ConfigurationError, DataError, NumericalError
from ..core.types import (
    CalibrationResult,
    CycleProbabilities,
    ErrorCurve,
    FitResult,
    FloatArray,
    IntArray,
    ModeCurve,
    ObservationModel,
    RunRecord,
    Trace,
    TraceBatch,
    TraceSet,
)
from ..decoder.hmm import cumulative_majority, decode_batch
from ..sim.readout import (
    add_gaussian_noise,
    rng_stream,
    sample_binary_outcomes,
    sample_peak_signals,
    simulate_hidden_states,
    simulate_run,
)
from .fits import fit_preparation_error, fit_t1

T = TypeVar('T')

# bisection stops once the calibrated average error is this close to target
NOISE_TOLERANCE = 1e-3
NOISE_MAX_ITER = 40
# per-state slack accepted around low_snr_target_eps
NOISE_STATE_SLACK = 0.015


def _parallel_map(fn: Callable[[int], T], items: Sequence[int], threads: int) -> list[T]:
    """Ordered map; results never depend on the worker count"""
    if threads <= 1:
        return [fn(i) for i in items]
    return Parallel(n_jobs=threads, prefer="threads")(delayed(fn)(i) for i in items)


def _prepare(label: int, stream: Stream, index: int, cfg: ExperimentConfig) -> QubitState:
    """Apply the preparation flip of a trial to its prepared label"""
    eta = cfg.prep_error_eta1 if label == 1 else cfg.prep_error_eta0
    u = rng_stream(cfg.sim.master_seed, Stream.PREPARATION, stream, index).random()
    state = QubitState(label)
    return state.flipped() if u < eta else state


def _unit_noise(cfg: ExperimentConfig, stream: Stream, index: int, cycle: int) -> FloatArray:
    rng = rng_stream(cfg.sim.master_seed, Stream.ADDED_NOISE, stream, index, cycle)
    zero = Trace(samples=np.zeros(cfg.sim.n_samples), dt_sample=cfg.sim.dt_sample)
    return add_gaussian_noise(zero, 1.0, rng).samples


# ---------------------------------------------------------------- calibration


@dataclass(frozen=True)
class CalibrationTraces:
    """
    First-cycle traces of the calibration set, per prepared state.

    `noise1`/`noise0` hold unit-variance added noise with the same seeds for
    every sigma, so `with_noise(s)` gives common random numbers across s.
    """
    base1: TraceSet
    base0: TraceSet
    noise1: FloatArray
    noise0: FloatArray

    def with_noise(self, sigma: float) -> tuple[TraceSet, TraceSet]:
        if not sigma >= 0:
            raise ConfigurationError(f"Added noise must be nonnegative, got {sigma}")
        if sigma == 0:
            return self.base1, self.base0
        dt = self.base1.dt_sample
        return (
            TraceSet(samples=self.base1.samples + sigma * self.noise1, dt_sample=dt),
            TraceSet(samples=self.base0.samples + sigma * self.noise0, dt_sample=dt),
        )


def calibration_traces(cfg: ExperimentConfig) -> CalibrationTraces:
    """Simulate the independent calibration set (preparation flips included)"""
    n_cal = cfg.n_calibration
    logger.info(f"Simulating {n_cal} calibration traces per state")
    out: dict[int, tuple[FloatArray, FloatArray]] = {}
    for label in (1, 0):

        def one(i: int, label: int = label) -> tuple[FloatArray, FloatArray]:
            index = label * n_cal + i
            x0 = _prepare(label, Stream.CALIBRATION, index, cfg)
            run = simulate_run(x0, 1, cfg.sim, index, stream=Stream.CALIBRATION)
            return run.traces[0].samples, _unit_noise(cfg, Stream.CALIBRATION, index, 0)

        rows = _parallel_map(one, range(n_cal), cfg.threads)
        out[label] = (np.stack([r[0] for r in rows]), np.stack([r[1] for r in rows]))

    dt = cfg.sim.dt_sample
    return CalibrationTraces(
        base1=TraceSet(samples=out[1][0], dt_sample=dt),
        base0=TraceSet(samples=out[0][0], dt_sample=dt),
        noise1=out[1][1],
        noise0=out[0][1],
    )


def calibration_study(
    cfg: ExperimentConfig,
    added_noise_sigma: float | None = None,
    traces: CalibrationTraces | None = None,
) -> tuple[CalibrationResult, list[SweepPoint]]:
    """Readout-time sweep and the calibration at its optimum"""
    sigma = cfg.added_noise_sigma if added_noise_sigma is None else added_noise_sigma
    traces = traces or calibration_traces(cfg)
    set1, set0 = traces.with_noise(sigma)
    c = cfg.calibration
    sweep = calibration_sweep(set1, set0, c.t_r_grid, c.n_bins, c.pseudo_count, c.llr_clamp)
    calibration = optimize_readout_time(set1, set0, c.t_r_grid, c.n_bins, c.pseudo_count, c.llr_clamp)
    return calibration, sweep


# ----------------------------------------------------------------- evaluation


@dataclass
class ExperimentData:
    """Per-cycle outcomes of every evaluation trial, label 1 trials first"""
    labels: IntArray
    x0: IntArray
    hidden: IntArray
    bits: IntArray
    peaks: FloatArray | None
    calibration: CalibrationResult | None
    cfg: ExperimentConfig
    added_noise_sigma: float = 0.0

    @property
    def n_cycles(self) -> int:
        return self.hidden.shape[1]


def _evaluation_run(label: int, trial: int, cfg: ExperimentConfig, sigma: float) -> tuple[RunRecord, FloatArray]:
    """One evaluation run and its (n_cycles, n_samples) traces with added noise"""
    index = trial + label * cfg.n_trials_per_state
    x0 = _prepare(label, Stream.EVALUATION, index, cfg)
    run = simulate_run(x0, cfg.max_cycles, cfg.sim, index, stream=Stream.EVALUATION)
    if sigma == 0:
        return run, np.stack([trace.samples for trace in run.traces])
    return run, np.stack([
        add_gaussian_noise(
            trace,
            sigma,
            rng_stream(cfg.sim.master_seed, Stream.ADDED_NOISE, Stream.EVALUATION, index, cycle),
        ).samples
        for cycle, trace in enumerate(run.traces)
    ])


def _trace_trial(
    label: int, trial: int, cfg: ExperimentConfig, t_r: float, sigma: float
) -> tuple[int, IntArray, FloatArray]:
    run, samples = _evaluation_run(label, trial, cfg, sigma)
    peaks = peak_signals(TraceSet(samples=samples, dt_sample=cfg.sim.dt_sample), t_r)
    return int(run.x0), np.array(run.hidden_states, dtype=np.int64), peaks


def simulate_trace_batch(cfg: ExperimentConfig, added_noise_sigma: float | None = None) -> TraceBatch:
    """
    Full traces of the evaluation trials with ground truth, label 1 first.

    The runs are the ones `simulate_experiment` reduces to peak signals.
    """
    sigma = cfg.added_noise_sigma if added_noise_sigma is None else added_noise_sigma
    n = cfg.n_trials_per_state
    labels = np.repeat(np.array([1, 0], dtype=np.int64), n)
    logger.info(f"Simulating trace batch: {n} trials per state x {cfg.max_cycles} cycles")
    rows = _parallel_map(lambda i: _evaluation_run(int(labels[i]), i % n, cfg, sigma), range(2 * n), cfg.threads)
    return TraceBatch(
        prepared_state=labels,
        trial=np.arange(2 * n) % n,
        samples=np.stack([samples for _, samples in rows]),
        dt_sample=cfg.sim.dt_sample,
        x0=np.array([int(run.x0) for run, _ in rows], dtype=np.int64),
        hidden=np.array([run.hidden_states for run, _ in rows], dtype=np.int64),
        ancilla=np.array([run.ancilla_bits for run, _ in rows], dtype=np.int64),
    )


def simulate_experiment(
    cfg: ExperimentConfig,
    added_noise_sigma: float | None = None,
    calibration: CalibrationResult | None = None,
) -> ExperimentData:
    """
    Simulate the evaluation trials of one experiment.

    The traces channel calibrates first (unless a calibration is passed) and
    reduces every cycle to its peak signal at the calibrated t_R. The binary
    channel draws bits straight from the hidden states; the empirical channel
    draws peak signals from the calibrated histograms.
    """
    sigma = cfg.added_noise_sigma if added_noise_sigma is None else added_noise_sigma
    channel = Channel(cfg.channel)
    n, n_cycles = cfg.n_trials_per_state, cfg.max_cycles
    labels = np.repeat(np.array([1, 0], dtype=np.int64), n)

    if channel != Channel.BINARY and calibration is None:
        calibration, _ = calibration_study(cfg, sigma)

    logger.info(f"Simulating {n} trials per state x {n_cycles} cycles ({channel} channel, sigma_added={sigma})")

    if channel == Channel.TRACES:
        assert calibration is not None
        t_r = calibration.t_r_opt
        rows = _parallel_map(
            lambda i: _trace_trial(int(labels[i]), i % n, cfg, t_r, sigma),
            range(2 * n),
            cfg.threads,
        )
        x0 = np.array([r[0] for r in rows], dtype=np.int64)
        hidden = np.stack([r[1] for r in rows])
        peaks: FloatArray | None = np.stack([r[2] for r in rows])
        bits = threshold_bits(peaks, calibration)
    else:
        x0 = np.array(
            [_prepare(int(labels[i]), Stream.EVALUATION, i % n + int(labels[i]) * n, cfg) for i in range(2 * n)],
            dtype=np.int64,
        )
        hidden = simulate_hidden_states(x0, n_cycles, cfg.sim, rng_stream(cfg.sim.master_seed, Stream.OUTCOMES, 0))
        outcome_rng = rng_stream(cfg.sim.master_seed, Stream.OUTCOMES, 1)
        if channel == Channel.BINARY:
            peaks = None
            bits = sample_binary_outcomes(hidden, cfg.channel_eps1, cfg.channel_eps0, outcome_rng)
        else:
            assert calibration is not None
            peaks = sample_peak_signals(calibration.dist1, calibration.dist0, hidden, outcome_rng)
            bits = threshold_bits(peaks, calibration)

    return ExperimentData(
        labels=labels,
        x0=x0,
        hidden=hidden,
        bits=bits,
        peaks=peaks,
        calibration=calibration,
        cfg=cfg,
        added_noise_sigma=sigma,
    )


def hard_model(data: ExperimentData) -> ObservationModel:
    """Binary channel model the hard decoder assumes"""
    c = data.cfg.calibration
    if data.calibration is None:
        return ObservationModel.binary(data.cfg.channel_eps1, data.cfg.channel_eps0, c.llr_clamp)
    return ObservationModel.from_calibration(data.calibration, ModelKind.BINARY)


def decisions(data: ExperimentData, mode: DecodeMode | str) -> npt.NDArray[np.bool_]:
    """Decision 1 after every prefix, shape (n_trials, N); ties decide 0"""
    mode = DecodeMode(mode)
    if mode == DecodeMode.MAJORITY:
        return cumulative_majority(data.bits)

    cfg = data.cfg
    if mode == DecodeMode.SOFT and data.calibration is not None and data.peaks is not None:
        model = ObservationModel.from_calibration(data.calibration, ModelKind.EMPIRICAL)
        observations = data.peaks
    else:
        if mode == DecodeMode.SOFT:
            logger.info("No analog outcomes on the binary channel; soft decoding reduces to hard")
        model = hard_model(data)
        observations = data.bits
    lam = decode_batch(observations, model, cfg.sim.dt_rep, cfg.effective_decoder_t1, cfg.priors)
    return lam > 0


def _mode_curve(decided_one: npt.NDArray[np.bool_], labels: IntArray) -> ModeCurve:
    ones, zeros = labels == 1, labels == 0
    eps1 = np.mean(~decided_one[ones], axis=0)
    eps0 = np.mean(decided_one[zeros], axis=0)
    return ModeCurve(
        eps1=eps1,
        eps0=eps0,
        stderr1=np.sqrt(eps1 * (1 - eps1) / ones.sum()),
        stderr0=np.sqrt(eps0 * (1 - eps0) / zeros.sum()),
    )


def error_curve(data: ExperimentData, modes: Sequence[str] | None = None) -> ErrorCurve:
    """Conditional logical error rates for every prefix length and mode"""
    modes = list(modes or data.cfg.decode_modes)
    if DecodeMode.MAJORITY in modes and math.isfinite(data.cfg.effective_decoder_t1):
        logger.debug("Majority vote ignores relaxation")
    curves = {str(DecodeMode(m)): _mode_curve(decisions(data, m), data.labels) for m in modes}
    for mode, curve in curves.items():
        logger.info(f"{mode}: eps_avg(1)={curve.eps_avg[0]:.4f} eps_avg({data.n_cycles})={curve.eps_avg[-1]:.4f}")
    return ErrorCurve(
        n_cycles=list(range(1, data.n_cycles + 1)),
        curves=curves,
        calibration=data.calibration,
        n_trials_per_state=data.cfg.n_trials_per_state,
    )


def run_error_curve(cfg: ExperimentConfig) -> ErrorCurve:
    """Simulate, calibrate and decode one experiment end to end"""
    return error_curve(simulate_experiment(cfg), cfg.decode_modes)


def per_cycle_probabilities(
    bits: npt.ArrayLike, decided_one: npt.ArrayLike, labels: npt.ArrayLike
) -> CycleProbabilities:
    """
    Spin-up frequencies per prepared state.

    `single` is the fraction of single-repetition outcomes reading 1 in cycle
    k; `cumulative` the fraction of records decided 1 after N cycles.
    """
    b = np.asarray(bits, dtype=np.int64)
    d = np.asarray(decided_one, dtype=bool)
    lab = np.asarray(labels, dtype=np.int64)
    if b.shape != d.shape or b.shape[0] != lab.shape[0]:
        raise DataError("bits, decisions and labels must describe the same trials")
    single, cumulative = {}, {}
    for state in (1, 0):
        mask = lab == state
        if not mask.any():
            raise DataError(f"No trials prepared in state {state}")
        single[state] = b[mask].mean(axis=0)
        cumulative[state] = d[mask].mean(axis=0)
    return CycleProbabilities(
        n_cycles=list(range(1, b.shape[1] + 1)),
        single=single,
        cumulative=cumulative,
        n_trials_per_state=int((lab == 1).sum()),
    )


def repetitions_to_match(curve: ErrorCurve, mode: str, target: float) -> int | None:
    """Smallest N whose average logical error is at most target, or None"""
    eps = curve.curves[str(DecodeMode(mode))].eps_avg
    hits = np.flatnonzero(eps <= target)
    return int(curve.n_cycles[hits[0]]) if hits.size else None


def tune_added_noise(
    cfg: ExperimentConfig,
    target_eps_avg: float | None = None,
    traces: CalibrationTraces | None = None,
) -> float:
    """
    Added white-noise sigma at which the calibrated single-repetition average
    error reaches the target, found by bisection.

    The calibration set and its unit noise are fixed, so the objective is a
    deterministic function of sigma. Without an explicit target_eps_avg the
    target is the mean of cfg.low_snr_target_eps, and each state must then
    also land within NOISE_STATE_SLACK of its own target.

    Raises:
        NumericalError: the target cannot be bracketed, or the per-state
            errors at the tuned sigma miss their targets
    """
    target = float(np.mean(cfg.low_snr_target_eps)) if target_eps_avg is None else target_eps_avg
    if not 0.0 < target < 0.5:
        raise ConfigurationError(f"Target error must lie in (0, 0.5), got {target}")
    traces = traces or calibration_traces(cfg)
    c = cfg.calibration

    def excess(sigma: float) -> tuple[float, CalibrationResult]:
        set1, set0 = traces.with_noise(sigma)
        result = optimize_readout_time(set1, set0, c.t_r_grid, c.n_bins, c.pseudo_count, c.llr_clamp)
        return result.eps_avg - target, result

    lo, hi = 0.0, abs(cfg.sim.i_high - cfg.sim.i_low)
    f_lo, _ = excess(lo)
    if f_lo >= 0:
        raise NumericalError(f"Error without added noise ({f_lo + target:.4f}) already exceeds target {target}")
    for _ in range(10):
        f_hi, _ = excess(hi)
        if f_hi >= 0:
            break
        lo, hi = hi, 2 * hi
    else:
        raise NumericalError(f"Could not bracket target error {target} with sigma up to {hi}")

    best_sigma, best = hi, excess(hi)[1]
    for step in range(NOISE_MAX_ITER):
        mid = (lo + hi) / 2
        f_mid, result = excess(mid)
        logger.debug(f"bisection step {step}: sigma={mid:.5f} eps={result.eps_avg:.4f}")
        best_sigma, best = mid, result
        if abs(f_mid) <= NOISE_TOLERANCE:
            break
        if f_mid < 0:
            lo = mid
        else:
            hi = mid

    if target_eps_avg is None:
        target1, target0 = cfg.low_snr_target_eps
        if abs(best.eps1 - target1) > NOISE_STATE_SLACK or abs(best.eps0 - target0) > NOISE_STATE_SLACK:
            raise NumericalError(
                f"Tuned sigma={best_sigma:.4f} gives eps1={best.eps1:.4f}, eps0={best.eps0:.4f}; "
                f"targets are {target1}, {target0} within {NOISE_STATE_SLACK}"
            )
    logger.info(f"Added noise sigma={best_sigma:.4f} gives eps={best.eps_avg:.4f} (target {target:.4f})")
    return best_sigma


# ------------------------------------------------------------------ benchmark


@dataclass
class BenchmarkReport:
    config: dict[str, Any]
    curve: ErrorCurve
    cycle_probabilities: CycleProbabilities
    sweep: list[SweepPoint]
    reference: ErrorCurve
    t1_fit: FitResult
    prep_fits: dict[str, FitResult]
    low_snr: ErrorCurve | None = None
    low_snr_sigma: float | None = None
    low_snr_sweep: list[SweepPoint] = field(default_factory=list)
    soft_repetitions: int | None = None

    def fits_dict(self) -> dict[str, Any]:
        return {
            "t1": self.t1_fit.to_dict(),
            "preparation_error": {k: v.to_dict() for k, v in self.prep_fits.items()},
            "low_snr_sigma": self.low_snr_sigma,
            "soft_repetitions_to_match_hard": self.soft_repetitions,
        }


def run_benchmark(cfg: ExperimentConfig, include_low_snr: bool = True) -> BenchmarkReport:
    """
    Every study in one pass: per-cycle probabilities and the T1 fit, error
    curves with and without preparation errors and the eta fit, and, for
    trace-level simulation, the low-SNR comparison of soft and hard decoding.
    """
    channel = Channel(cfg.channel)
    traces = calibration_traces(cfg) if channel != Channel.BINARY else None
    calibration, sweep = (None, []) if traces is None else calibration_study(cfg, traces=traces)

    data = simulate_experiment(cfg, calibration=calibration)
    curve = error_curve(data, cfg.decode_modes)

    cycles = per_cycle_probabilities(data.bits, decisions(data, DecodeMode.HARD), data.labels)
    times = np.arange(cfg.max_cycles) * cfg.sim.dt_rep
    t1_fit = fit_t1(cycles.single[1], cycles.single[0], times)

    reference_cfg = replace(cfg, prep_error_eta1=0.0, prep_error_eta0=0.0)
    reference = error_curve(simulate_experiment(reference_cfg, calibration=calibration), [DecodeMode.HARD])
    measured = curve.curves.get(DecodeMode.HARD) or _mode_curve(decisions(data, DecodeMode.HARD), data.labels)
    simulated = reference.curves[DecodeMode.HARD]
    fit1 = fit_preparation_error(measured.eps1, simulated.eps1)
    fit0 = fit_preparation_error(measured.eps0, simulated.eps0)
    average = (fit1.parameters["eta"] + fit0.parameters["eta"]) / 2
    logger.info(f"Preparation error: eta1={fit1.parameters['eta']:.4f} eta0={fit0.parameters['eta']:.4f} avg={average:.4f}")
    prep_fits = {"1": fit1, "0": fit0}

    report = BenchmarkReport(
        config=effective_config(cfg),
        curve=curve,
        cycle_probabilities=cycles,
        sweep=sweep,
        reference=reference,
        t1_fit=t1_fit,
        prep_fits=prep_fits,
    )

    if include_low_snr and traces is not None and channel == Channel.TRACES:
        sigma = tune_added_noise(cfg, traces=traces)
        low_cal, low_sweep = calibration_study(cfg, sigma, traces=traces)
        low_data = simulate_experiment(cfg, added_noise_sigma=sigma, calibration=low_cal)
        low = error_curve(low_data, [DecodeMode.HARD, DecodeMode.SOFT])
        hard_final = float(low.curves[DecodeMode.HARD].eps_avg[-1])
        report.low_snr = low
        report.low_snr_sigma = sigma
        report.low_snr_sweep = low_sweep
        report.soft_repetitions = repetitions_to_match(low, DecodeMode.SOFT, hard_final)
        logger.info(
            f"Low SNR: soft decoding reaches the hard N={cfg.max_cycles} error {hard_final:.4f} "
            f"after {report.soft_repetitions} repetitions"
        )
    return report
