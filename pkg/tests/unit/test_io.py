# tests/unit/test_io.py

import json

import numpy as np
import pytest

from qnd_readout.calibration.histograms import SweepPoint, optimize_readout_time
from qnd_readout.core.constants import ObservationKind
from qnd_readout.core.exceptions import DataError
from qnd_readout.core.types import ReadoutRecord
from qnd_readout.tools import io

from tests.unit.fixtures.traces import DT_SAMPLE


class TestTraceBatchFiles:
    """CSV and .npy trace batches"""

    @pytest.mark.parametrize("suffix", [".csv", ".npy"])
    def test_written_batch_reads_back(self, tmp_path, trace_batch, suffix):
        path = tmp_path / f"traces{suffix}"
        io.write_trace_batch(path, trace_batch)
        restored = io.read_trace_batch(path, DT_SAMPLE)
        np.testing.assert_array_equal(restored.samples, trace_batch.samples)
        np.testing.assert_array_equal(restored.prepared_state, trace_batch.prepared_state)
        np.testing.assert_array_equal(restored.trial, trace_batch.trial)
        assert restored.dt_sample == DT_SAMPLE

    def test_rows_in_any_order(self, tmp_path, trace_batch):
        path = tmp_path / "traces.csv"
        io.write_trace_batch(path, trace_batch)
        header, *rows = path.read_text().splitlines()
        path.write_text("\n".join([header, *reversed(rows)]) + "\n")
        restored = io.read_trace_batch(path, DT_SAMPLE)
        np.testing.assert_array_equal(restored.samples, trace_batch.samples)

    def test_deterministic_bytes(self, tmp_path, trace_batch):
        io.write_trace_batch(tmp_path / "a.csv", trace_batch)
        io.write_trace_batch(tmp_path / "b.csv", trace_batch)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_sampling_interval_from_manifest(self, tmp_path, trace_batch):
        path = tmp_path / "traces.csv"
        io.write_trace_batch(path, trace_batch)
        _, manifest_path = io.sidecar_paths(path)
        io.write_json(manifest_path, io.manifest({"sim": {"dt_sample": 2e-5, "master_seed": 3}}))
        assert io.read_trace_batch(path).dt_sample == 2e-5

    def test_missing_sampling_interval(self, tmp_path, trace_batch):
        path = tmp_path / "traces.npy"
        io.write_trace_batch(path, trace_batch)
        with pytest.raises(DataError):
            io.read_trace_batch(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "traces.csv"
        path.write_text("prepared_state,trial,current\n1,0,0.5\n")
        with pytest.raises(DataError):
            io.read_trace_batch(path, DT_SAMPLE)

    def test_ragged_runs(self, tmp_path):
        path = tmp_path / "traces.csv"
        path.write_text(
            "prepared_state,trial,cycle,sample_index,current\n"
            "1,0,0,0,0.1\n1,0,0,1,0.2\n0,0,0,0,0.3\n"
        )
        with pytest.raises(DataError):
            io.read_trace_batch(path, DT_SAMPLE)

    def test_unknown_format(self, tmp_path, trace_batch):
        with pytest.raises(DataError):
            io.write_trace_batch(tmp_path / "traces.parquet", trace_batch)

    def test_truth_sidecar(self, tmp_path, trace_batch):
        path = tmp_path / "traces.truth.csv"
        io.write_truth(path, trace_batch)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(io.TRUTH_FIELDS)
        assert len(lines) == 1 + 6 * 2


class TestRecordFiles:
    def test_records_and_bare_list(self, tmp_path):
        records = [
            ReadoutRecord((1, 0, 1), ObservationKind.BINARY, 3.263e-3),
            ReadoutRecord((0.2, 0.9), ObservationKind.PEAK, 3.263e-3),
        ]
        path = tmp_path / "records.json"
        io.write_records(path, records, {"sim": {}}, prepared_states=[1, 0])
        assert io.read_records(path) == records
        assert json.loads(path.read_text())["prepared_states"] == [1, 0]

        bare = tmp_path / "bare.json"
        bare.write_text(json.dumps([r.to_dict() for r in records]))
        assert io.read_records(bare) == records

    def test_empty_file_holds_no_records(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        assert io.read_records(path) == []

    @pytest.mark.parametrize("content", ["{not json", '{"items": []}', '"text"'])
    def test_malformed_records(self, tmp_path, content):
        path = tmp_path / "records.json"
        path.write_text(content)
        with pytest.raises(DataError):
            io.read_records(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            io.read_json(tmp_path / "absent.json")


class TestCalibrationFiles:
    def test_calibration_file(self, tmp_path, step_traces):
        result = optimize_readout_time(*step_traces)
        path = tmp_path / "calibration.json"
        io.write_calibration(path, result, {"sim": {"master_seed": 1}}, DT_SAMPLE)
        payload = json.loads(path.read_text())
        assert {"t_r_opt", "eps1", "eps0", "bin_edges", "counts1", "counts0", "llr_table", "config"} <= set(payload)
        restored = io.read_calibration(path)
        np.testing.assert_array_equal(restored.llr_table, result.llr_table)
        assert restored.t_r_opt == result.t_r_opt

    def test_calibration_with_uneven_edges_is_rejected(self, tmp_path, step_traces):
        payload = optimize_readout_time(*step_traces).to_dict()
        payload["bin_edges"][1] = payload["bin_edges"][0] + 1e-6
        path = tmp_path / "calibration.json"
        io.write_json(path, payload)
        with pytest.raises(DataError, match="uniformly spaced"):
            io.read_calibration(path)

    def test_sweep_csv(self, tmp_path):
        path = tmp_path / "sweep.csv"
        io.write_rows_csv(path, io.sweep_rows([SweepPoint(1e-5, 0.5, 0.1, 0.3)]))
        assert path.read_text().splitlines() == ["t_r,eps1,eps0,eps_avg", "1e-05,0.5,0.1,0.3"]

    def test_manifest(self):
        payload = io.manifest({"sim": {"master_seed": 9}}, files=["a.csv"])
        assert payload["master_seed"] == 9
        assert payload["files"] == ["a.csv"]
        assert "version" in payload
