# qnd_readout/sim/readout.py
"""
Synthetic repetitive QND readout.

Each cycle the logical state relaxes over dt_rep (except before the first
cycle), is copied onto the ancilla through two independent bit-flip
channels, and the ancilla is read out by spin-selective tunneling observed
through a noisy charge sensor. The sensor reads i_high while the dot is
empty and i_low otherwise.
"""

from dataclasses import dataclass
import math

import numpy as np
import numpy.typing as npt

from ..core.config import SimConfig
from ..core.constants import QubitState, Stream
from ..core.exceptions import ConfigurationError, DataError
from ..core.types import EmpiricalDistribution, FloatArray, IntArray, RunRecord, Trace
from ..decoder.hmm import relaxation_transition


def rng_stream(master_seed: int, stream: Stream | int, *key: int) -> np.random.Generator:
    """Independent generator for (master_seed, stream, *key)"""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(stream), *map(int, key)]))


def _waiting_time(rng: np.random.Generator, rate: float) -> float:
    if rate == 0:
        return math.inf
    if math.isinf(rate):
        return 0.0
    return float(rng.exponential(1.0 / rate))


@dataclass(frozen=True)
class AncillaEvents:
    """Event times of one ancilla readout, measured from the start of the window"""
    t_step: float  # dot empties; inf if it never does
    t_return: float  # an electron tunnels back in
    t_relax: float  # spin-up ancilla relaxes; inf for spin-down
    tunneled: bool  # the step is a spin-up tunnel-out, not a dark escape

    @property
    def has_step(self) -> bool:
        return math.isfinite(self.t_step)


def sample_ancilla_events(state: QubitState, cfg: SimConfig, rng: np.random.Generator) -> AncillaEvents:
    """
    Draw the competing exponential events of one spin-selective readout.

    A spin-up electron tunnels out at rate gamma_out unless it relaxes first
    (rate 1/t1_ancilla). A spin-down electron, including a relaxed one, can
    only leave through the dark escape channel at rate gamma_dark. An empty
    dot refills at rate gamma_in.
    """
    relax_rate = 0.0 if math.isinf(cfg.t1_ancilla) else 1.0 / cfg.t1_ancilla
    tunneled = False
    t_relax = math.inf

    if state == QubitState.ONE:
        t_out = _waiting_time(rng, cfg.gamma_out)
        t_relax = _waiting_time(rng, relax_rate)
        tunneled = math.isfinite(t_out) and t_out <= t_relax
        if tunneled:
            t_step = t_out
        else:
            t_step = t_relax + _waiting_time(rng, cfg.gamma_dark)
    else:
        t_step = _waiting_time(rng, cfg.gamma_dark)

    t_return = t_step + _waiting_time(rng, cfg.gamma_in) if math.isfinite(t_step) else math.inf
    return AncillaEvents(t_step=t_step, t_return=t_return, t_relax=t_relax, tunneled=tunneled)


def moving_average(samples: npt.ArrayLike, m: int) -> FloatArray:
    """Causal m-sample moving average; the first m - 1 outputs average what is available"""
    x = np.asarray(samples, dtype=np.float64)
    if m <= 1:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - m, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def render_trace(events: AncillaEvents, cfg: SimConfig, rng: np.random.Generator) -> Trace:
    times = np.arange(cfg.n_samples) * cfg.dt_sample
    empty = (times >= events.t_step) & (times < events.t_return)
    signal = np.where(empty, cfg.i_high, cfg.i_low).astype(np.float64)
    if cfg.sigma_noise > 0:
        signal = signal + rng.normal(0.0, cfg.sigma_noise, size=len(signal))
    if cfg.moving_average > 1:
        signal = moving_average(signal, cfg.moving_average)
    return Trace(samples=signal, dt_sample=cfg.dt_sample)


def sample_ancilla_trace(state: QubitState, cfg: SimConfig, rng: np.random.Generator) -> Trace:
    """Two-level telegraph trace with white Gaussian sensor noise"""
    return render_trace(sample_ancilla_events(state, cfg, rng), cfg, rng)


def evolve_state(state: QubitState, cfg: SimConfig, rng: np.random.Generator) -> QubitState:
    """Relax the logical state over one dt_rep; always consumes one uniform draw"""
    decay = relaxation_transition(cfg.dt_rep, cfg.t1_logical).probability(QubitState.ZERO, QubitState.ONE)
    u = rng.random()
    if state == QubitState.ONE and u < decay:
        return QubitState.ZERO
    return state


def map_to_ancilla(state: QubitState, cfg: SimConfig, rng: np.random.Generator) -> QubitState:
    """Copy the logical state onto the ancilla through the CROT and reinitialization flips"""
    bit = QubitState(state)
    if rng.random() < cfg.p_crot_flip:
        bit = bit.flipped()
    if rng.random() < cfg.p_ancilla_init:
        bit = bit.flipped()
    return bit


def simulate_run(
    x0: QubitState,
    n_cycles: int,
    cfg: SimConfig,
    trial_index: int,
    stream: Stream = Stream.EVALUATION,
) -> RunRecord:
    """
    Simulate one repetitive readout of n_cycles cycles.

    Cycle k draws from the generator keyed by (master_seed, stream,
    trial_index, k), so a run is reproducible from its trial index alone.
    """
    if n_cycles < 1:
        raise ConfigurationError(f"n_cycles must be at least 1, got {n_cycles}")

    state = QubitState(x0)
    hidden, bits, traces = [], [], []
    for cycle in range(n_cycles):
        rng = rng_stream(cfg.master_seed, stream, trial_index, cycle)
        if cycle > 0:
            state = evolve_state(state, cfg, rng)
        bit = map_to_ancilla(state, cfg, rng)
        hidden.append(state)
        bits.append(bit)
        traces.append(sample_ancilla_trace(bit, cfg, rng))

    return RunRecord(
        x0=QubitState(x0),
        hidden_states=tuple(hidden),
        ancilla_bits=tuple(bits),
        traces=tuple(traces),
    )


def add_gaussian_noise(trace: Trace, sigma_extra: float, rng: np.random.Generator) -> Trace:
    """New trace with i.i.d. N(0, sigma_extra^2) added to every sample"""
    if not sigma_extra >= 0:
        raise ConfigurationError(f"sigma_extra must be nonnegative, got {sigma_extra}")
    if sigma_extra == 0:
        return Trace(samples=trace.samples.copy(), dt_sample=trace.dt_sample)
    noise = rng.normal(0.0, sigma_extra, size=len(trace))
    return Trace(samples=trace.samples + noise, dt_sample=trace.dt_sample)


def simulate_hidden_states(
    x0: npt.ArrayLike, n_cycles: int, cfg: SimConfig, rng: np.random.Generator
) -> IntArray:
    """
    Logical-state trajectories for a batch of initial states, shape (n, n_cycles).

    Column k is the state read in cycle k + 1; relaxation acts between cycles.
    """
    start = np.atleast_1d(np.asarray(x0, dtype=np.int64))
    decay = relaxation_transition(cfg.dt_rep, cfg.t1_logical).probability(QubitState.ZERO, QubitState.ONE)
    u = rng.random((len(start), max(n_cycles - 1, 0)))
    survived = np.cumprod(u >= decay, axis=1).astype(np.int64)
    survived = np.concatenate([np.ones((len(start), 1), dtype=np.int64), survived], axis=1)
    return start[:, None] * survived[:, :n_cycles]


def sample_binary_outcomes(
    hidden: npt.ArrayLike, eps1: float, eps0: float, rng: np.random.Generator
) -> IntArray:
    """Bits read from hidden states through a binary channel, P(0|1)=eps1, P(1|0)=eps0"""
    states = np.asarray(hidden, dtype=np.int64)
    u = rng.random(states.shape)
    return np.where(states == 1, u >= eps1, u < eps0).astype(np.int64)


def sample_peak_signals(
    dist1: EmpiricalDistribution,
    dist0: EmpiricalDistribution,
    hidden: npt.ArrayLike,
    rng: np.random.Generator,
) -> FloatArray:
    """
    Peak signals drawn from calibrated histograms along hidden trajectories.

    A bin is chosen with its empirical frequency and the value is uniform
    within the bin.
    """
    states = np.asarray(hidden, dtype=np.int64)
    out = np.empty(states.shape, dtype=np.float64)
    for state, dist in ((1, dist1), (0, dist0)):
        if dist.total == 0:
            raise DataError(f"Cannot sample from an empty histogram for state {state}")
        mask = states == state
        bins = rng.choice(dist.n_bins, size=int(mask.sum()), p=dist.frequencies())
        out[mask] = dist.bin_edges[bins] + rng.random(len(bins)) * dist.width
    return out
