# qnd_readout/cli/commands.py

import importlib.resources
import json
import shutil
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from loguru import logger

from ..calibration.histograms import calibration_sweep, optimize_readout_time, peak_signals, threshold_bits
from ..core.config import ExperimentConfig, LogConfig, effective_config, load_config
from ..core.constants import DecodeMode, ModelKind, ObservationKind, QubitState
from ..core.exceptions import ConfigurationError, DataError, KindMismatchError, NumericalError, QndReadoutError
from ..core.types import DecodeResult, ErrorCurve, ObservationModel, ReadoutRecord, TraceSet
from ..decoder.hmm import decode as hmm_decode
from ..experiments.fits import fit_preparation_error, fit_t1 as fit_t1_curves
from ..experiments.runner import BenchmarkReport, run_benchmark, simulate_trace_batch
from ..tools import io

_sink_id: int | None = None


def configure_logging(log: LogConfig, verbose: bool = False) -> None:
    """Route loguru to stderr with the configured level and format"""
    global _sink_id
    # our previous sink, or loguru's default stderr sink (id 0) on first use
    try:
        logger.remove(0 if _sink_id is None else _sink_id)
    except ValueError:
        pass
    _sink_id = logger.add(sys.stderr, level="DEBUG" if verbose else log.level, format=log.format)


def ensure_config_exists(config_path: Path, force: bool = False) -> None:
    """Write the packaged default config to config_path"""
    if config_path.exists() and not force:
        logger.info(f"Configuration already exists at {config_path}")
        return
    config_path.parent.mkdir(parents=True, exist_ok=True)
    with importlib.resources.files('qnd_readout').joinpath('default_config.yml').open('rb') as src:
        with open(config_path, 'wb') as dst:
            shutil.copyfileobj(src, dst)
    logger.info(f"Default configuration written to {config_path}")


def get_config(
    config: str | None = None,
    suite: str | None = None,
    seed: int | None = None,
    threads: int | None = None,
    verbose: bool = False,
    **overrides: Any,
) -> ExperimentConfig:
    """Load the layered configuration, apply flag overrides and set up logging"""
    flags: dict[str, Any] = {k: v for k, v in overrides.items() if v is not None}
    if seed is not None:
        flags.setdefault("sim", {})["master_seed"] = int(seed)
    if threads is not None:
        flags["threads"] = int(threads)
    cfg = load_config(Path(config) if config else None, suite, flags)
    configure_logging(cfg.log, verbose)
    return cfg


def _claim_output(path: Path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise ConfigurationError(f"{path} already exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _fail(command: str, exc: QndReadoutError) -> SystemExit:
    logger.error(f"{command} failed: {exc}")
    return SystemExit(exc.exit_code)


def simulate(
    out: str,
    config: str | None = None,
    suite: str | None = None,
    seed: int | None = None,
    threads: int | None = None,
    force: bool = False,
    verbose: bool = False,
) -> None:
    """Simulate a labeled trace batch with its ground truth and manifest"""
    try:
        cfg = get_config(config, suite, seed, threads, verbose)
        out_path = _claim_output(Path(out), force)
        truth_path, manifest_path = io.sidecar_paths(out_path)

        batch = simulate_trace_batch(cfg)
        io.write_trace_batch(out_path, batch)
        io.write_truth(truth_path, batch)
        io.write_json(manifest_path, io.manifest(effective_config(cfg), traces=out_path.name, truth=truth_path.name))

    except QndReadoutError as e:
        raise _fail("simulate", e)
    except Exception:
        logger.exception("Unexpected error occurred")
        raise


def calibrate(
    traces: str,
    out: str,
    config: str | None = None,
    suite: str | None = None,
    t_r_grid: Sequence[float] | None = None,
    n_bins: int | None = None,
    pseudo_count: float | None = None,
    sweep_out: str | None = None,
    force: bool = False,
    verbose: bool = False,
) -> None:
    """Calibrate the single-repetition readout on the first cycle of every run"""
    try:
        calibration_flags = {
            "t_r_grid": list(t_r_grid) if t_r_grid is not None else None,
            "n_bins": n_bins,
            "pseudo_count": pseudo_count,
        }
        calibration_flags = {k: v for k, v in calibration_flags.items() if v is not None}
        cfg = get_config(config, suite, verbose=verbose, calibration=calibration_flags or None)
        out_path = _claim_output(Path(out), force)

        batch = io.read_trace_batch(Path(traces), cfg.sim.dt_sample)
        set1, set0 = batch.cycle_traces(1), batch.cycle_traces(0)
        c = cfg.calibration
        result = optimize_readout_time(set1, set0, c.t_r_grid, c.n_bins, c.pseudo_count, c.llr_clamp)
        io.write_calibration(out_path, result, effective_config(cfg), batch.dt_sample)
        logger.info(f"Calibration written to {out_path}")

        if sweep_out:
            sweep_path = _claim_output(Path(sweep_out), force)
            sweep = calibration_sweep(set1, set0, c.t_r_grid, c.n_bins, c.pseudo_count, c.llr_clamp)
            io.write_rows_csv(sweep_path, io.sweep_rows(sweep))

    except QndReadoutError as e:
        raise _fail("calibrate", e)
    except Exception:
        logger.exception("Unexpected error occurred")
        raise


def records(
    traces: str,
    calibration: str,
    out: str,
    kind: str = ObservationKind.PEAK.value,
    config: str | None = None,
    suite: str | None = None,
    force: bool = False,
    verbose: bool = False,
) -> None:
    """Reduce every cycle of a trace batch to a peak signal or a thresholded bit"""
    try:
        cfg = get_config(config, suite, verbose=verbose)
        if kind not in {k.value for k in ObservationKind}:
            raise ConfigurationError(f"Unknown record kind '{kind}'")
        kind = ObservationKind(kind)
        out_path = _claim_output(Path(out), force)

        batch = io.read_trace_batch(Path(traces), cfg.sim.dt_sample)
        cal = io.read_calibration(Path(calibration))
        peaks = np.stack([
            peak_signals(TraceSet(samples=batch.samples[:, k, :], dt_sample=batch.dt_sample), cal.t_r_opt)
            for k in range(batch.n_cycles)
        ], axis=1)
        observations = peaks if kind == ObservationKind.PEAK else threshold_bits(peaks, cal)

        items = [ReadoutRecord(tuple(row), kind, cfg.sim.dt_rep) for row in observations.tolist()]
        io.write_records(out_path, items, effective_config(cfg), prepared_states=batch.prepared_state.tolist())

    except QndReadoutError as e:
        raise _fail("records", e)
    except Exception:
        logger.exception("Unexpected error occurred")
        raise


def _majority_result(record: ReadoutRecord) -> DecodeResult:
    """Vote margin (#1 - #0) after every prefix; a tie decides 0"""
    if record.kind != ObservationKind.BINARY:
        raise KindMismatchError("Majority voting needs binary records")
    margins = np.cumsum([1 if o == 1 else -1 for o in record.observations]).tolist()
    final = float(margins[-1]) if margins else 0.0
    return DecodeResult(
        lambda_log=final,
        decision=QubitState.ONE if final > 0 else QubitState.ZERO,
        per_cycle_lambda=tuple(float(m) for m in margins),
    )


def decode(
    records: str,
    out: str,
    mode: str = DecodeMode.HARD.value,
    calibration: str | None = None,
    t1: float | None = None,
    priors: Sequence[float] | None = None,
    config: str | None = None,
    suite: str | None = None,
    force: bool = False,
    verbose: bool = False,
) -> None:
    """Decode readout records into lambda_log, decisions and per-cycle trajectories"""
    try:
        cfg = get_config(
            config, suite, verbose=verbose,
            priors=list(priors) if priors is not None else None,
            decoder_t1=float(t1) if t1 is not None else None,
        )
        try:
            mode = DecodeMode(mode)
        except ValueError:
            raise ConfigurationError(f"Unknown decode mode '{mode}'")
        out_path = _claim_output(Path(out), force)
        items = io.read_records(Path(records))

        cal = io.read_calibration(Path(calibration)) if calibration else None
        if mode == DecodeMode.SOFT and cal is None:
            raise DataError("Soft decoding needs a calibration file")
        if mode == DecodeMode.MAJORITY and t1 is not None:
            logger.warning("Majority voting ignores --t1")

        decoder_t1 = cfg.effective_decoder_t1
        if mode == DecodeMode.MAJORITY:
            results = [_majority_result(r) for r in items]
        else:
            if mode == DecodeMode.SOFT:
                model = ObservationModel.from_calibration(cal, ModelKind.EMPIRICAL)
            elif cal is not None:
                model = ObservationModel.from_calibration(cal, ModelKind.BINARY)
            else:
                model = ObservationModel.binary(cfg.channel_eps1, cfg.channel_eps0, cfg.calibration.llr_clamp)
            results = [hmm_decode(r, model, decoder_t1, cfg.priors) for r in items]

        io.write_decisions(out_path, results, mode, effective_config(cfg))

    except QndReadoutError as e:
        raise _fail("decode", e)
    except Exception:
        logger.exception("Unexpected error occurred")
        raise


def _curve_payload(curve: ErrorCurve, config: dict[str, Any], **extra: Any) -> dict[str, Any]:
    return {"config": config, **extra, **curve.to_dict()}


def _average_rows(curve: ErrorCurve) -> list[dict[str, Any]]:
    return [row for row in curve.rows() if row["prepared_state"] == "avg"]


def write_benchmark(out_dir: Path, report: BenchmarkReport, plot_data: bool = False) -> list[str]:
    """Write every benchmark artifact into out_dir, returning the file names"""
    config = report.config
    written = []

    def emit_json(name: str, payload: Any) -> None:
        io.write_json(out_dir / name, payload)
        written.append(name)

    def emit_csv(name: str, rows: list[dict[str, Any]]) -> None:
        io.write_rows_csv(out_dir / name, rows)
        written.append(name)

    emit_json("error_curves.json", _curve_payload(report.curve, config))
    emit_csv("error_curves.csv", report.curve.rows())
    emit_json("reference_curves.json", _curve_payload(report.reference, config, prep_error_eta=[0.0, 0.0]))
    emit_csv("reference_curves.csv", report.reference.rows())
    if report.low_snr is not None:
        emit_json(
            "low_snr_curves.json",
            _curve_payload(report.low_snr, config, added_noise_sigma=report.low_snr_sigma),
        )
        emit_csv("low_snr_curves.csv", report.low_snr.rows())
    emit_csv("per_cycle.csv", report.cycle_probabilities.rows())

    sweep_rows = [{"added_noise_sigma": 0.0, **row} for row in io.sweep_rows(report.sweep)]
    sweep_rows += [{"added_noise_sigma": report.low_snr_sigma, **row} for row in io.sweep_rows(report.low_snr_sweep)]
    emit_csv("calibration_sweep.csv", sweep_rows)
    if report.curve.calibration is not None:
        emit_json("calibration.json", {"config": config, **report.curve.calibration.to_dict()})
    emit_json("fits.json", {"config": config, **report.fits_dict()})

    if plot_data:
        emit_csv("fig2b.csv", report.cycle_probabilities.rows())
        emit_csv("fig3c.csv", _average_rows(report.curve))
        if report.low_snr is not None:
            emit_csv("fig3d.csv", _average_rows(report.low_snr))
        emit_csv("figS1.csv", sweep_rows)
        emit_csv("figS2.csv", _composition_rows(report))

    io.write_json(out_dir / "manifest.json", io.manifest(config, files=sorted(written)))
    return written


def _composition_rows(report: BenchmarkReport) -> list[dict[str, Any]]:
    """Measured vs simulated error with the fitted composition relation"""
    measured = report.curve.curves.get(DecodeMode.HARD)
    simulated = report.reference.curves[DecodeMode.HARD]
    rows = []
    for state, key in (("1", "eps1"), ("0", "eps0")):
        eta = report.prep_fits[state].parameters["eta"]
        eps_sim = getattr(simulated, key)
        eps_exp = getattr(measured, key) if measured is not None else np.full_like(eps_sim, np.nan)
        for n, e_exp, e_sim in zip(report.curve.n_cycles, eps_exp, eps_sim):
            rows.append({
                "prepared_state": state,
                "N": n,
                "eps_experiment": float(e_exp),
                "eps_simulated": float(e_sim),
                "eps_composed": float((1 - 2 * eta) * e_sim + eta),
                "eta": eta,
            })
    return rows


def benchmark(
    out_dir: str,
    config: str | None = None,
    suite: str | None = None,
    seed: int | None = None,
    threads: int | None = None,
    force: bool = False,
    plot_data: bool = False,
    low_snr: bool = True,
    verbose: bool = False,
) -> None:
    """Run every study and write curves, sweeps, fits and a manifest to out_dir"""
    try:
        cfg = get_config(config, suite, seed, threads, verbose)
        out_path = Path(out_dir)
        if out_path.exists() and any(out_path.iterdir()) and not force:
            raise ConfigurationError(f"{out_path} is not empty; pass --force to overwrite")
        out_path.mkdir(parents=True, exist_ok=True)

        report = run_benchmark(cfg, include_low_snr=low_snr)
        written = write_benchmark(out_path, report, plot_data)
        logger.info(f"Benchmark wrote {len(written) + 1} files to {out_path}")

    except QndReadoutError as e:
        raise _fail("benchmark", e)
    except Exception:
        logger.exception("Unexpected error occurred")
        raise


def _read_probability_table(path: Path, dt_rep: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (times, p1, p0) from either a `time,p1,p0` CSV or a benchmark per_cycle.csv
    (prepared_state, N, p1_single); N maps to time (N - 1) dt_rep.
    """
    if not path.exists():
        raise DataError(f"File not found: {path}")
    table = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8"))
    names = set(table.dtype.names or ())
    if {"time", "p1", "p0"} <= names:
        return table["time"].astype(float), table["p1"].astype(float), table["p0"].astype(float)
    if {"prepared_state", "N", "p1_single"} <= names:
        series = {}
        for state in (1, 0):
            rows = table[table["prepared_state"].astype(int) == state]
            rows = rows[np.argsort(rows["N"])]
            series[state] = (rows["N"].astype(float), rows["p1_single"].astype(float))
        if not np.array_equal(series[1][0], series[0][0]):
            raise DataError(f"{path}: both prepared states must share the N grid")
        return (series[1][0] - 1) * dt_rep, series[1][1], series[0][1]
    raise DataError(f"{path} needs columns time,p1,p0 or prepared_state,N,p1_single")


def fit_t1(
    probabilities: str,
    out: str | None = None,
    config: str | None = None,
    suite: str | None = None,
    force: bool = False,
    verbose: bool = False,
) -> None:
    """Fit P1(t) = A exp(-t/T1) + B and P0(t) = B to single-repetition probabilities"""
    try:
        cfg = get_config(config, suite, verbose=verbose)
        times, p1, p0 = _read_probability_table(Path(probabilities), cfg.sim.dt_rep)
        result = fit_t1_curves(p1, p0, times)
        payload = {"config": effective_config(cfg), **result.to_dict()}
        if out:
            io.write_json(_claim_output(Path(out), force), payload)
        else:
            print(json.dumps(payload, indent=2))
        if not result.success:
            raise NumericalError(f"T1 fit did not converge: {result.message}")

    except QndReadoutError as e:
        raise _fail("fit-t1", e)
    except Exception:
        logger.exception("Unexpected error occurred")
        raise


def _curve_from_file(path: Path, mode: str) -> tuple[np.ndarray, np.ndarray]:
    payload = io.read_json(path)
    try:
        curve = payload["curves"][mode]
        return np.asarray(curve["eps1"], dtype=float), np.asarray(curve["eps0"], dtype=float)
    except (KeyError, TypeError) as e:
        raise DataError(f"{path} has no '{mode}' error curve") from e


def fit_prep_error(
    experiment: str,
    simulated: str,
    out: str | None = None,
    mode: str = DecodeMode.HARD.value,
    config: str | None = None,
    suite: str | None = None,
    force: bool = False,
    verbose: bool = False,
) -> None:
    """Fit the preparation error eta per prepared state from two error-curve files"""
    try:
        cfg = get_config(config, suite, verbose=verbose)
        exp1, exp0 = _curve_from_file(Path(experiment), mode)
        sim1, sim0 = _curve_from_file(Path(simulated), mode)
        fits = {"1": fit_preparation_error(exp1, sim1), "0": fit_preparation_error(exp0, sim0)}
        average = (fits["1"].parameters["eta"] + fits["0"].parameters["eta"]) / 2
        logger.info(f"eta1={fits['1'].parameters['eta']:.4f} eta0={fits['0'].parameters['eta']:.4f} avg={average:.4f}")
        payload = io.manifest(
            effective_config(cfg),
            mode=mode,
            average_eta=average,
            experiment=str(experiment),
            simulated=str(simulated),
            **{k: v.to_dict() for k, v in fits.items()},
        )
        if out:
            io.write_json(_claim_output(Path(out), force), payload)
        else:
            print(json.dumps(payload, indent=2))

    except QndReadoutError as e:
        raise _fail("fit-prep-error", e)
    except Exception:
        logger.exception("Unexpected error occurred")
        raise
