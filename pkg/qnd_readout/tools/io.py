# qnd_readout/tools/io.py
"""
Reading and writing the files exchanged between subcommands.

Every JSON artifact embeds the effective configuration it was produced with.
Trace batches are written either as CSV, one row per sample, or as a NumPy
structured .npy array with the same fields.
"""

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from loguru import logger

from ..calibration.histograms import SweepPoint
from ..core.exceptions import DataError
from ..core.types import (
    CalibrationResult,
    DecodeResult,
    ReadoutRecord,
    TraceBatch,
)
from ..core.version import __version__

TRACE_FIELDS = ("prepared_state", "trial", "cycle", "sample_index", "current")
TRUTH_FIELDS = ("prepared_state", "trial", "cycle", "x0", "hidden_state", "ancilla_bit")
TRACE_DTYPE = np.dtype([
    ("prepared_state", np.int8),
    ("trial", np.int64),
    ("cycle", np.int32),
    ("sample_index", np.int32),
    ("current", np.float64),
])


def write_json(path: Path, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
    logger.debug(f"Wrote {path}")


def read_json(path: Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"Invalid JSON in {path}: {e}") from e


def write_rows_csv(path: Path, rows: Sequence[dict[str, Any]], fieldnames: Iterable[str] | None = None) -> None:
    """Tidy CSV with one dict per row"""
    names = list(fieldnames) if fieldnames is not None else (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    logger.debug(f"Wrote {len(rows)} rows to {path}")


def manifest(config: dict[str, Any], **extra: Any) -> dict[str, Any]:
    """Run manifest: config echo, master seed and package version"""
    return {
        "version": __version__,
        "master_seed": config.get("sim", {}).get("master_seed"),
        "config": config,
        **extra,
    }


def sidecar_paths(path: Path) -> tuple[Path, Path]:
    """(<stem>.truth.csv, <stem>.manifest.json) next to a trace batch"""
    path = Path(path)
    return path.with_name(f"{path.stem}.truth.csv"), path.with_name(f"{path.stem}.manifest.json")


# ---------------------------------------------------------------- trace batch


def _flatten(batch: TraceBatch) -> np.ndarray:
    n_runs, n_cycles, n_samples = batch.samples.shape
    table = np.empty(n_runs * n_cycles * n_samples, dtype=TRACE_DTYPE)
    per_run = n_cycles * n_samples
    table["prepared_state"] = np.repeat(batch.prepared_state, per_run)
    table["trial"] = np.repeat(batch.trial, per_run)
    table["cycle"] = np.tile(np.repeat(np.arange(n_cycles), n_samples), n_runs)
    table["sample_index"] = np.tile(np.arange(n_samples), n_runs * n_cycles)
    table["current"] = batch.samples.reshape(-1)
    return table


def write_trace_batch(path: Path, batch: TraceBatch) -> None:
    """Write a trace batch as .csv or structured .npy, chosen by suffix"""
    path = Path(path)
    table = _flatten(batch)
    if path.suffix == ".npy":
        np.save(path, table, allow_pickle=False)
    elif path.suffix == ".csv":
        np.savetxt(
            path,
            np.column_stack([table[name] for name in TRACE_FIELDS]),
            delimiter=",",
            header=",".join(TRACE_FIELDS),
            comments="",
            fmt=["%d", "%d", "%d", "%d", "%.17g"],
        )
    else:
        raise DataError(f"Unsupported trace batch format '{path.suffix}', use .csv or .npy")
    logger.info(f"Wrote {len(batch)} runs x {batch.n_cycles} cycles to {path}")


def _load_table(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        table = np.load(path, allow_pickle=False)
        if table.dtype.names is None:
            raise DataError(f"{path} is not a structured trace array")
        return table
    if path.suffix == ".csv":
        table = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
        return np.atleast_1d(table)
    raise DataError(f"Unsupported trace batch format '{path.suffix}', use .csv or .npy")


def read_trace_batch(path: Path, dt_sample: float | None = None) -> TraceBatch:
    """
    Read a trace batch back into runs.

    dt_sample comes from the sidecar manifest when present, else from the
    argument.

    Raises:
        DataError: missing file or columns, ragged runs, or no dt_sample
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Trace batch not found: {path}")
    table = _load_table(path)
    missing = set(TRACE_FIELDS) - set(table.dtype.names or ())
    if missing:
        raise DataError(f"Trace batch {path} is missing columns {sorted(missing)}")
    if table.size == 0:
        raise DataError(f"Trace batch {path} is empty")

    _, manifest_path = sidecar_paths(path)
    if manifest_path.exists():
        dt_sample = read_json(manifest_path)["config"]["sim"]["dt_sample"]
    if dt_sample is None:
        raise DataError(f"No sampling interval for {path}: pass it or keep the manifest alongside")

    state = table["prepared_state"].astype(np.int64)
    trial = table["trial"].astype(np.int64)
    cycle = table["cycle"].astype(np.int64)
    sample = table["sample_index"].astype(np.int64)
    order = np.lexsort((sample, cycle, trial, -state))

    n_cycles = int(cycle.max()) + 1
    n_samples = int(sample.max()) + 1
    if table.size % (n_cycles * n_samples):
        raise DataError(f"Runs in {path} do not share cycle count and trace length")
    n_runs = table.size // (n_cycles * n_samples)

    state, trial = state[order], trial[order]
    expected_cycle = np.tile(np.repeat(np.arange(n_cycles), n_samples), n_runs)
    expected_sample = np.tile(np.arange(n_samples), n_runs * n_cycles)
    if not (np.array_equal(cycle[order], expected_cycle) and np.array_equal(sample[order], expected_sample)):
        raise DataError(f"Runs in {path} do not share cycle count and trace length")

    first = np.arange(n_runs) * n_cycles * n_samples
    return TraceBatch(
        prepared_state=state[first],
        trial=trial[first],
        samples=table["current"].astype(np.float64)[order].reshape(n_runs, n_cycles, n_samples),
        dt_sample=float(dt_sample),
    )


def write_truth(path: Path, batch: TraceBatch) -> None:
    if batch.x0 is None or batch.hidden is None or batch.ancilla is None:
        raise DataError("Trace batch carries no ground truth")
    n_runs, n_cycles = batch.hidden.shape
    np.savetxt(
        path,
        np.column_stack([
            np.repeat(batch.prepared_state, n_cycles),
            np.repeat(batch.trial, n_cycles),
            np.tile(np.arange(n_cycles), n_runs),
            np.repeat(batch.x0, n_cycles),
            batch.hidden.reshape(-1),
            batch.ancilla.reshape(-1),
        ]),
        delimiter=",",
        header=",".join(TRUTH_FIELDS),
        comments="",
        fmt="%d",
    )


# ------------------------------------------------------------ records & results


def write_records(
    path: Path,
    records: Sequence[ReadoutRecord],
    config: dict[str, Any],
    prepared_states: Sequence[int] | None = None,
) -> None:
    payload: dict[str, Any] = {"config": config, "records": [r.to_dict() for r in records]}
    if prepared_states is not None:
        payload["prepared_states"] = [int(s) for s in prepared_states]
    write_json(path, payload)
    logger.info(f"Wrote {len(records)} records to {path}")


def read_records(path: Path) -> list[ReadoutRecord]:
    """Records from `{"records": [...]}` or a bare list; an empty file holds none"""
    if Path(path).exists() and not Path(path).read_text().strip():
        return []
    payload = read_json(path)
    if isinstance(payload, dict):
        if "records" not in payload:
            raise DataError(f"{path} has no 'records' field")
        payload = payload["records"]
    if not isinstance(payload, list):
        raise DataError(f"{path} must hold a list of records")
    return [ReadoutRecord.from_dict(item) for item in payload]


def write_decisions(path: Path, results: Sequence[DecodeResult], mode: str, config: dict[str, Any]) -> None:
    write_json(path, {"config": config, "mode": str(mode), "results": [r.to_dict() for r in results]})
    logger.info(f"Wrote {len(results)} decisions to {path}")


def write_calibration(path: Path, calibration: CalibrationResult, config: dict[str, Any], dt_sample: float) -> None:
    write_json(path, {"config": config, "dt_sample": dt_sample, **calibration.to_dict()})


def read_calibration(path: Path) -> CalibrationResult:
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise DataError(f"{path} is not a calibration file")
    return CalibrationResult.from_dict(payload)


def sweep_rows(sweep: Sequence[SweepPoint]) -> list[dict[str, float]]:
    return [{"t_r": p.t_r, "eps1": p.eps1, "eps0": p.eps0, "eps_avg": p.eps_avg} for p in sweep]
