# tests/unit/test_readout_sim.py

import math

import numpy as np
import pytest

from qnd_readout.core.config import SimConfig
from qnd_readout.core.constants import QubitState, Stream
from qnd_readout.core.exceptions import ConfigurationError, DataError
from qnd_readout.core.types import EmpiricalDistribution, Trace
from qnd_readout.sim.readout import (
    AncillaEvents,
    add_gaussian_noise,
    moving_average,
    render_trace,
    rng_stream,
    sample_ancilla_events,
    sample_ancilla_trace,
    sample_binary_outcomes,
    sample_peak_signals,
    simulate_hidden_states,
    simulate_run,
)


def within(observed: float, p: float, n: int, sigmas: float = 4.0) -> bool:
    """Binomial frequency within `sigmas` standard errors of p"""
    return abs(observed - p) <= sigmas * math.sqrt(p * (1 - p) / n)


class TestRandomStreams:
    def test_same_key_same_draws(self):
        a = rng_stream(1, Stream.EVALUATION, 4, 2).random(5)
        b = rng_stream(1, Stream.EVALUATION, 4, 2).random(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_are_distinct(self):
        a = rng_stream(1, Stream.EVALUATION, 4).random(5)
        b = rng_stream(1, Stream.CALIBRATION, 4).random(5)
        c = rng_stream(2, Stream.EVALUATION, 4).random(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestAncillaTrace:
    """Spin-selective tunneling traces"""

    def test_spin_down_without_dark_counts_stays_low(self, quiet_sim_config):
        trace = sample_ancilla_trace(QubitState.ZERO, quiet_sim_config, np.random.default_rng(0))
        np.testing.assert_array_equal(trace.samples, np.zeros(quiet_sim_config.n_samples))

    def test_instant_tunneling_stays_high(self, quiet_sim_config):
        trace = sample_ancilla_trace(QubitState.ONE, quiet_sim_config, np.random.default_rng(0))
        np.testing.assert_array_equal(trace.samples, np.ones(quiet_sim_config.n_samples))

    def test_step_window_follows_events(self):
        cfg = SimConfig(sigma_noise=0.0, dt_sample=1e-5, trace_length=1e-4)
        events = AncillaEvents(t_step=2.5e-5, t_return=5.5e-5, t_relax=math.inf, tunneled=True)
        trace = render_trace(events, cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(trace.samples, [0, 0, 0, 1, 1, 1, 0, 0, 0, 0])

    def test_tunnel_fraction(self, sim_config):
        """Spin-up tunnels before relaxing with probability gamma_out / (gamma_out + 1/T1)"""
        rng = np.random.default_rng(123)
        n = 100_000
        tunneled = sum(sample_ancilla_events(QubitState.ONE, sim_config, rng).tunneled for _ in range(n))
        expected = sim_config.gamma_out / (sim_config.gamma_out + 1 / sim_config.t1_ancilla)
        assert expected == pytest.approx(0.90909, abs=1e-5)
        assert within(tunneled / n, expected, n)

    def test_dark_escape_after_relaxation(self):
        cfg = SimConfig(gamma_out=0.0, gamma_dark=math.inf, t1_ancilla=1e-4)
        events = sample_ancilla_events(QubitState.ONE, cfg, np.random.default_rng(1))
        assert not events.tunneled
        assert events.has_step
        assert events.t_step == events.t_relax

    def test_bimodal_peaks(self):
        """About 9% of spin-up traces stay low when the electron relaxes first"""
        cfg = SimConfig(sigma_noise=0.05, gamma_in=100.0)
        rng = np.random.default_rng(99)
        n = 10_000
        low = sum(sample_ancilla_trace(QubitState.ONE, cfg, rng).samples.max() < 0.5 for _ in range(n))
        assert within(low / n, 1 / 11, n)


class TestMovingAverage:
    def test_window_of_one_is_identity(self):
        np.testing.assert_array_equal(moving_average([1.0, 2.0, 4.0], 1), [1.0, 2.0, 4.0])

    def test_causal_window(self):
        np.testing.assert_allclose(moving_average([0, 0, 3, 3, 3], 3), [0, 0, 1, 2, 3])

    def test_smooths_rendered_trace(self):
        cfg = SimConfig(sigma_noise=0.0, dt_sample=1e-5, trace_length=6e-5, moving_average=2)
        events = AncillaEvents(t_step=2e-5, t_return=math.inf, t_relax=math.inf, tunneled=True)
        trace = render_trace(events, cfg, np.random.default_rng(0))
        np.testing.assert_allclose(trace.samples, [0, 0, 0.5, 1, 1, 1])


class TestSimulateRun:
    """Repetitive readout of a logical qubit"""

    def test_error_free_zero(self, quiet_sim_config):
        run = simulate_run(QubitState.ZERO, 5, quiet_sim_config, trial_index=0)
        assert run.hidden_states == (QubitState.ZERO,) * 5
        assert run.ancilla_bits == (QubitState.ZERO,) * 5
        assert all(np.all(trace.samples == 0) for trace in run.traces)

    def test_reproducible_from_trial_index(self, sim_config):
        a = simulate_run(QubitState.ONE, 3, sim_config, trial_index=42)
        b = simulate_run(QubitState.ONE, 3, sim_config, trial_index=42)
        c = simulate_run(QubitState.ONE, 3, sim_config, trial_index=43)
        for ta, tb in zip(a.traces, b.traces):
            np.testing.assert_array_equal(ta.samples, tb.samples)
        assert not np.array_equal(a.traces[0].samples, c.traces[0].samples)

    def test_rejects_zero_cycles(self, sim_config):
        with pytest.raises(ConfigurationError):
            simulate_run(QubitState.ONE, 0, sim_config, trial_index=0)

    def test_survival_after_fifteen_cycles(self):
        cfg = SimConfig(trace_length=5e-5, t1_logical=0.05)
        n = 2000
        survived = sum(
            simulate_run(QubitState.ONE, 15, cfg, trial_index=i).hidden_states[-1] == QubitState.ONE
            for i in range(n)
        )
        assert within(survived / n, math.exp(-14 * cfg.dt_rep / cfg.t1_logical), n)

    def test_ancilla_flip_marginal(self):
        cfg = SimConfig(trace_length=5e-5, t1_logical=math.inf, p_crot_flip=0.16, p_ancilla_init=0.04)
        assert cfg.composite_flip == pytest.approx(0.1872)
        flips = np.array([
            simulate_run(QubitState.ZERO, 5, cfg, trial_index=i).ancilla_bits for i in range(2000)
        ])
        assert within(flips.mean(), cfg.composite_flip, flips.size)

    def test_calibration_stream_differs(self, sim_config):
        a = simulate_run(QubitState.ONE, 1, sim_config, trial_index=0)
        b = simulate_run(QubitState.ONE, 1, sim_config, trial_index=0, stream=Stream.CALIBRATION)
        assert not np.array_equal(a.traces[0].samples, b.traces[0].samples)


class TestHiddenStates:
    def test_survival_matches_relaxation(self, sim_config):
        n = 100_000
        hidden = simulate_hidden_states(np.ones(n), 15, sim_config, np.random.default_rng(4))
        assert hidden.shape == (n, 15)
        assert np.all(hidden[:, 0] == 1)
        survival = math.exp(-14 * sim_config.dt_rep / sim_config.t1_logical)
        assert within(hidden[:, -1].mean(), survival, n)

    def test_zero_never_excites(self, sim_config):
        hidden = simulate_hidden_states(np.zeros(100), 10, sim_config, np.random.default_rng(4))
        assert not hidden.any()

    def test_relaxation_is_absorbing(self):
        cfg = SimConfig(t1_logical=0.01)
        hidden = simulate_hidden_states(np.ones(1000), 20, cfg, np.random.default_rng(5))
        assert np.all(np.diff(hidden, axis=1) <= 0)


class TestAddedNoise:
    def test_zero_sigma_copies(self):
        trace = Trace(np.array([0.0, 1.0, 0.5]), 1e-5)
        noisy = add_gaussian_noise(trace, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(noisy.samples, trace.samples)
        assert noisy is not trace

    def test_noise_statistics(self):
        trace = Trace(np.zeros(1_000_000), 1e-5)
        noisy = add_gaussian_noise(trace, 0.4, np.random.default_rng(6))
        assert noisy.samples.var() == pytest.approx(0.16, rel=0.01)
        assert abs(noisy.samples.mean()) < 4 * 0.4 / 1000
        assert np.all(trace.samples == 0)

    def test_rejects_negative_sigma(self):
        with pytest.raises(ConfigurationError):
            add_gaussian_noise(Trace(np.zeros(3), 1e-5), -0.1, np.random.default_rng(0))


class TestOutcomeChannels:
    def test_binary_outcome_rates(self):
        rng = np.random.default_rng(7)
        hidden = np.repeat([[1], [0]], 50_000, axis=0)
        bits = sample_binary_outcomes(hidden, 0.3, 0.1, rng)
        assert within(1 - bits[:50_000].mean(), 0.3, 50_000)
        assert within(bits[50_000:].mean(), 0.1, 50_000)

    def test_peak_signals_land_in_populated_bins(self):
        edges = np.linspace(0.0, 1.0, 5)
        dist1 = EmpiricalDistribution(edges, np.array([0, 0, 1, 3]))
        dist0 = EmpiricalDistribution(edges, np.array([5, 0, 0, 0]))
        hidden = np.array([[1, 1, 0], [0, 1, 0]])
        peaks = sample_peak_signals(dist1, dist0, hidden, np.random.default_rng(8))
        assert peaks.shape == hidden.shape
        assert np.all(peaks[hidden == 1] >= 0.5)
        assert np.all(peaks[hidden == 0] < 0.25)

    def test_empty_histogram(self):
        edges = np.linspace(0.0, 1.0, 3)
        empty = EmpiricalDistribution(edges, np.array([0, 0]))
        full = EmpiricalDistribution(edges, np.array([1, 1]))
        with pytest.raises(DataError):
            sample_peak_signals(empty, full, np.array([[1]]), np.random.default_rng(0))
