# tests/unit/test_experiments.py

import math
from dataclasses import replace

import numpy as np
import pytest

from qnd_readout.core.config import load_config
from qnd_readout.core.constants import DecodeMode
from qnd_readout.core.exceptions import NumericalError
from qnd_readout.core.types import ErrorCurve, ModeCurve
from qnd_readout.experiments.fits import fit_preparation_error
from qnd_readout.experiments.runner import (
    calibration_study,
    calibration_traces,
    decisions,
    error_curve,
    per_cycle_probabilities,
    repetitions_to_match,
    run_benchmark,
    run_error_curve,
    simulate_experiment,
    simulate_trace_batch,
    tune_added_noise,
)


def majority_tail(n: int, eps: float) -> tuple[float, float]:
    """Exact (eps1, eps0) of an n-cycle majority vote on a symmetric channel, ties reading 0"""
    def p_ones(k: int, p_one: float) -> float:
        return math.comb(n, k) * p_one**k * (1 - p_one) ** (n - k)
    eps1 = sum(p_ones(k, 1 - eps) for k in range(n + 1) if 2 * k <= n)
    eps0 = sum(p_ones(k, eps) for k in range(n + 1) if 2 * k > n)
    return eps1, eps0


def close(observed: float, p: float, n: int, sigmas: float = 4.0) -> bool:
    return abs(observed - p) <= sigmas * math.sqrt(p * (1 - p) / n) + 1e-12


class TestPerfectReadout:
    """All error sources off"""

    def test_every_mode_is_error_free(self, perfect_config):
        curve = run_error_curve(perfect_config)
        assert set(curve.curves) == {"hard", "soft", "majority"}
        for mode in curve.curves.values():
            np.testing.assert_array_equal(mode.eps1, 0.0)
            np.testing.assert_array_equal(mode.eps0, 0.0)
        assert curve.calibration.eps_avg == 0.0
        assert curve.calibration.t_r_opt == pytest.approx(perfect_config.sim.dt_sample)

    def test_single_repetition_probabilities(self, perfect_config):
        data = simulate_experiment(perfect_config)
        probabilities = per_cycle_probabilities(data.bits, decisions(data, "hard"), data.labels)
        np.testing.assert_array_equal(probabilities.single[1], 1.0)
        np.testing.assert_array_equal(probabilities.single[0], 0.0)
        np.testing.assert_array_equal(probabilities.cumulative_visibility, 1.0)


class TestBinaryChannel:
    """Symmetric eps = 0.25 channel without relaxation"""

    def test_majority_matches_binomial_tail(self, binary_channel_config):
        curve = run_error_curve(binary_channel_config)
        majority = curve.curves["majority"]
        n = binary_channel_config.n_trials_per_state
        for i, cycles in enumerate(curve.n_cycles):
            eps1, eps0 = majority_tail(cycles, 0.25)
            assert close(majority.eps1[i], eps1, n)
            assert close(majority.eps0[i], eps0, n)

    def test_hard_decoding_equals_majority_for_odd_n(self, binary_channel_config):
        curve = run_error_curve(binary_channel_config)
        assert majority_tail(3, 0.25)[0] == pytest.approx(0.15625)
        for i, cycles in enumerate(curve.n_cycles):
            if cycles % 2:
                assert curve.curves["hard"].eps1[i] == curve.curves["majority"].eps1[i]
                assert curve.curves["hard"].eps0[i] == curve.curves["majority"].eps0[i]

    def test_soft_reduces_to_hard(self, binary_channel_config, config_factory, caplog):
        cfg = config_factory(binary_channel_config, n_trials_per_state=200, max_cycles=3)
        data = simulate_experiment(cfg)
        np.testing.assert_array_equal(decisions(data, "soft"), decisions(data, "hard"))
        assert "reduces to hard" in caplog.text

    def test_preparation_errors_compose(self, binary_channel_config, config_factory):
        cfg = config_factory(
            binary_channel_config,
            max_cycles=6,
            prep_error_eta1=0.1,
            prep_error_eta0=0.05,
            sim={"t1_logical": 0.05},
        )
        reference_cfg = config_factory(cfg, prep_error_eta1=0.0, prep_error_eta0=0.0)
        measured = error_curve(simulate_experiment(cfg), ["hard"]).curves["hard"]
        simulated = error_curve(simulate_experiment(reference_cfg), ["hard"]).curves["hard"]
        assert fit_preparation_error(measured.eps1, simulated.eps1).parameters["eta"] == pytest.approx(0.1, abs=0.025)
        assert fit_preparation_error(measured.eps0, simulated.eps0).parameters["eta"] == pytest.approx(0.05, abs=0.025)


class TestTraceExperiments:
    """Trace-level simulation, calibration and decoding"""

    def test_results_do_not_depend_on_threads(self, small_trace_config, config_factory):
        single = simulate_experiment(small_trace_config)
        pooled = simulate_experiment(config_factory(small_trace_config, threads=3))
        np.testing.assert_array_equal(single.peaks, pooled.peaks)
        np.testing.assert_array_equal(single.hidden, pooled.hidden)
        assert single.calibration.t_r_opt == pooled.calibration.t_r_opt

    def test_trace_batch_matches_experiment(self, small_trace_config):
        batch = simulate_trace_batch(small_trace_config)
        data = simulate_experiment(small_trace_config)
        assert batch.samples.shape == (300, 4, small_trace_config.sim.n_samples)
        np.testing.assert_array_equal(batch.hidden, data.hidden)
        np.testing.assert_array_equal(batch.prepared_state, data.labels)

    def test_preparation_flips_keep_labels(self, small_trace_config, config_factory):
        data = simulate_experiment(config_factory(small_trace_config, prep_error_eta1=0.5))
        flipped = data.x0[data.labels == 1] == 0
        assert 0 < flipped.sum() < flipped.size
        np.testing.assert_array_equal(data.x0[data.labels == 0], 0)

    def test_empirical_channel(self, small_trace_config, config_factory):
        cfg = config_factory(small_trace_config, channel="empirical")
        curve = run_error_curve(cfg)
        for mode in curve.curves.values():
            assert np.all((mode.eps1 >= 0) & (mode.eps1 <= 1))
        assert curve.calibration is not None

    def test_calibration_noise_is_common(self, small_trace_config):
        traces = calibration_traces(small_trace_config)
        base1, base0 = traces.with_noise(0.0)
        assert base1 is traces.base1
        noisy1, _ = traces.with_noise(0.5)
        np.testing.assert_allclose(noisy1.samples, traces.base1.samples + 0.5 * traces.noise1)

    def test_tuned_noise_hits_target(self, small_trace_config):
        traces = calibration_traces(small_trace_config)
        sigma = tune_added_noise(small_trace_config, target_eps_avg=0.3, traces=traces)
        calibration, _ = calibration_study(small_trace_config, sigma, traces=traces)
        assert sigma > 0
        assert calibration.eps_avg == pytest.approx(0.3, abs=0.02)

    def test_unreachable_state_targets_raise(self, small_trace_config, config_factory):
        cfg = config_factory(small_trace_config, low_snr_target_eps=[0.01, 0.49])
        with pytest.raises(NumericalError, match="targets are"):
            tune_added_noise(cfg, traces=calibration_traces(cfg))

    def test_explicit_average_target_skips_state_check(self, small_trace_config, config_factory):
        cfg = config_factory(small_trace_config, low_snr_target_eps=[0.01, 0.49])
        assert tune_added_noise(cfg, target_eps_avg=0.3, traces=calibration_traces(cfg)) > 0

    @pytest.mark.integration
    def test_soft_not_worse_than_hard(self, config_factory, small_trace_config):
        cfg = config_factory(small_trace_config, n_trials_per_state=2000, max_cycles=5, added_noise_sigma=0.4)
        curve = run_error_curve(cfg)
        soft, hard = curve.curves["soft"], curve.curves["hard"]
        assert np.all(soft.eps_avg <= hard.eps_avg + 2 * hard.stderr_avg)


class TestAnalysis:
    def test_per_cycle_probabilities(self):
        bits = np.array([[1, 0, 1], [1, 1, 1], [0, 0, 1], [1, 0, 0]])
        decided = np.array([[1, 0, 1], [1, 1, 1], [0, 0, 0], [1, 0, 0]], dtype=bool)
        labels = np.array([1, 1, 0, 0])
        probabilities = per_cycle_probabilities(bits, decided, labels)
        np.testing.assert_allclose(probabilities.single[1], [1.0, 0.5, 1.0])
        np.testing.assert_allclose(probabilities.single[0], [0.5, 0.0, 0.5])
        np.testing.assert_allclose(probabilities.cumulative[0], [0.5, 0.0, 0.0])
        assert probabilities.n_trials_per_state == 2

    def test_repetitions_to_match(self):
        zeros = np.zeros(4)
        curve = ErrorCurve(
            n_cycles=[1, 2, 3, 4],
            curves={"soft": ModeCurve(np.array([0.4, 0.3, 0.2, 0.1]), np.array([0.4, 0.3, 0.2, 0.1]), zeros, zeros)},
        )
        assert repetitions_to_match(curve, DecodeMode.SOFT, 0.25) == 3
        assert repetitions_to_match(curve, "soft", 0.05) is None


class TestBenchmark:
    def test_binary_channel_report(self, binary_channel_config, config_factory):
        cfg = config_factory(
            binary_channel_config,
            n_trials_per_state=2000,
            max_cycles=8,
            prep_error_eta1=0.05,
            sim={"t1_logical": 0.05},
        )
        report = run_benchmark(cfg)
        assert report.low_snr is None
        assert report.sweep == []
        assert set(report.prep_fits) == {"1", "0"}
        assert report.prep_fits["1"].parameters["eta"] == pytest.approx(0.05, abs=0.03)
        assert set(report.t1_fit.parameters) == {"A", "B", "T1"}
        assert len(report.cycle_probabilities.rows()) == 16
        assert report.fits_dict()["low_snr_sigma"] is None

    @pytest.mark.integration
    def test_trace_report_with_low_snr(self, small_trace_config, config_factory):
        traces = calibration_traces(small_trace_config)
        sigma = tune_added_noise(small_trace_config, target_eps_avg=0.3, traces=traces)
        reached, _ = calibration_study(small_trace_config, sigma, traces=traces)
        cfg = config_factory(small_trace_config, low_snr_target_eps=[reached.eps1, reached.eps0])
        report = run_benchmark(cfg)
        assert report.low_snr_sigma > 0
        assert set(report.low_snr.curves) == {"hard", "soft"}
        assert len(report.sweep) == small_trace_config.sim.n_samples
        assert len(report.low_snr_sweep) == small_trace_config.sim.n_samples


@pytest.fixture(scope="module")
def paper_report():
    cfg = load_config(suite="paper-defaults")
    return run_benchmark(replace(cfg, decode_modes=["hard", "soft"]), include_low_snr=False)


@pytest.fixture(scope="module")
def low_snr_report():
    cfg = load_config(suite="low-snr")
    return run_benchmark(replace(cfg, decode_modes=["hard"]))


@pytest.mark.integration
class TestPaperScale:
    """Device-scale studies at 10^4 trials per state"""

    def test_single_repetition_calibration(self, paper_report):
        calibration = paper_report.curve.calibration
        assert calibration.eps1 == pytest.approx(0.329, abs=0.02)
        assert calibration.eps0 == pytest.approx(0.162, abs=0.02)

    def test_fidelity_after_fifteen_cycles(self, paper_report):
        hard = paper_report.curve.curves["hard"]
        assert 0.93 <= hard.fidelity[-1] <= 0.96

    def test_cumulative_visibility(self, paper_report):
        cycles = paper_report.cycle_probabilities
        assert cycles.cumulative_visibility[0] == pytest.approx(0.51, abs=0.03)
        assert cycles.cumulative_visibility[-1] > cycles.cumulative_visibility[0] + 0.3

    def test_bimodal_soft_matches_hard(self, paper_report):
        soft, hard = paper_report.curve.curves["soft"], paper_report.curve.curves["hard"]
        assert np.all(np.abs(soft.eps_avg - hard.eps_avg) <= 3 * hard.stderr_avg)
        assert np.all(soft.eps_avg <= hard.eps_avg + 2 * hard.stderr_avg)

    def test_error_free_preparation_saturates(self):
        cfg = load_config(suite="paper-defaults")
        curve = run_error_curve(
            replace(cfg, prep_error_eta1=0.0, prep_error_eta0=0.0, max_cycles=30, decode_modes=["hard"])
        )
        fidelity = curve.curves["hard"].fidelity
        assert 0.965 <= fidelity[14] <= 0.99
        assert fidelity[29] > 0.99

    def test_low_snr_calibration_hits_both_targets(self, low_snr_report):
        calibration = low_snr_report.low_snr.calibration
        assert calibration.eps1 == pytest.approx(0.411, abs=0.015)
        assert calibration.eps0 == pytest.approx(0.423, abs=0.015)

    def test_soft_decoding_saves_repetitions(self, low_snr_report):
        assert 8 <= low_snr_report.soft_repetitions <= 12
        soft, hard = low_snr_report.low_snr.curves["soft"], low_snr_report.low_snr.curves["hard"]
        assert np.all(soft.eps_avg <= hard.eps_avg + 2 * hard.stderr_avg)
