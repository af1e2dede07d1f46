import json

import numpy as np
import pytest

from roomkspace.estimator import EstimationConfig, EstimationReport, ModeEstimate
from roomkspace.io import (
    KSPACE_HEADER,
    FormatError,
    dumps_report,
    format_kspace,
    loads_report,
    read_bundle,
    read_bundle_metadata,
    read_kspace,
    read_report,
    write_bundle,
    write_kspace,
    write_report,
)
from roomkspace.modal import ModeIndex, RoomGeometry, WaveNumber, eigenfrequency, wave_vector_group
from roomkspace.synthesis import MeasurementSet

ROOM = RoomGeometry(3.0, 5.6, 3.53)


def measurement_set(seed=0, n=123, m=5):
    rng = np.random.default_rng(seed)
    return MeasurementSet(rng.uniform(0, 1, (m, 3)), np.array([2.6, 5.0, 3.2]), 1000.0,
                          rng.standard_normal((n, m)), None, {"seed": seed})


def sample_report():
    modes = []
    planted = [((1, 0, 0), "low-band"), ((1, 1, 0), "low-band"), ((1, 1, 1), "grid-propagated")]
    for n, provenance in planted:
        g = wave_vector_group(n, ROOM)
        coefficients = np.arange(g.size) * (0.1 + 0.3j) + 1 / 3
        modes.append(ModeEstimate(WaveNumber(eigenfrequency(n, ROOM), -6.907755278982137), g,
                                  coefficients, provenance, ModeIndex(*n)))
    history = {"low": [3.0, 1.0 / 3.0], "high": []}
    diagnostics = {"low_stop_reason": "budget", "nested": {"a": [1, 2.5e-17]}}
    return EstimationReport(ROOM, modes, history, diagnostics, EstimationConfig(f_c=150.0))


class TestBundle:
    def test_round_trip_is_bit_exact(self, tmp_path):
        ms = measurement_set()
        write_bundle(tmp_path / "b", ms)
        back = read_bundle(tmp_path / "b")
        assert back.samples.tobytes() == ms.samples.tobytes()
        np.testing.assert_array_equal(back.positions, ms.positions)
        np.testing.assert_array_equal(back.source_position, ms.source_position)
        assert back.fs == ms.fs and back.provenance == {"seed": 0}

    def test_layout(self, tmp_path):
        ms = measurement_set(n=10, m=3)
        write_bundle(tmp_path, ms, duration=0.01)
        raw = (tmp_path / "samples.f64").read_bytes()
        assert len(raw) == 8 * 10 * 3
        # column-major: the first ten values are microphone 0
        np.testing.assert_array_equal(np.frombuffer(raw[:80], "<f8"), ms.samples[:, 0])
        meta = read_bundle_metadata(tmp_path)
        assert (meta["n_samples"], meta["n_mics"], meta["duration"]) == (10, 3, 0.01)
        assert meta["units"]["positions"] == "m"

    def test_truncated_samples_rejected(self, tmp_path):
        write_bundle(tmp_path, measurement_set())
        path = tmp_path / "samples.f64"
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="bytes"):
            read_bundle(tmp_path)

    def test_wrong_format_tag(self, tmp_path):
        write_bundle(tmp_path, measurement_set())
        meta = json.loads((tmp_path / "metadata.json").read_text())
        meta["format"] = "something-else"
        (tmp_path / "metadata.json").write_text(json.dumps(meta))
        with pytest.raises(FormatError):
            read_bundle(tmp_path)

    def test_missing_directory_is_os_error(self, tmp_path):
        with pytest.raises(OSError):
            read_bundle(tmp_path / "absent")


class TestReport:
    def test_round_trip_equality(self, tmp_path):
        report = sample_report()
        write_report(tmp_path / "r.json", report)
        assert read_report(tmp_path / "r.json") == report

    def test_text_round_trip_is_stable(self):
        text = dumps_report(sample_report())
        assert dumps_report(loads_report(text)) == text

    def test_config_echo_contains_defaults(self):
        payload = json.loads(dumps_report(sample_report()))
        assert payload["config"]["f_p"] == 70.0 and payload["config"]["f_lo"] == 20.0
        assert payload["config"]["ridge"] == 1e-8

    def test_missing_room(self):
        report = EstimationReport(None, [], {}, {}, None)
        assert loads_report(dumps_report(report)) == report

    def test_malformed(self):
        with pytest.raises(FormatError):
            loads_report("{}")
        with pytest.raises(FormatError):
            loads_report('{"format": "roomkspace-report"}')
        with pytest.raises(FormatError):
            loads_report("not json")


class TestKSpaceExport:
    def test_row_count_is_sum_of_group_sizes(self, tmp_path):
        report = sample_report()
        write_kspace(tmp_path / "k.txt", report)
        rows = read_kspace(tmp_path / "k.txt")
        assert len(rows) == sum(m.group.size for m in report.modes) == 2 + 4 + 8
        assert {r[5] for r in rows} == {"low-band", "grid-propagated"}

    def test_values_round_trip(self, tmp_path):
        report = sample_report()
        write_kspace(tmp_path / "k.txt", report)
        rows = read_kspace(tmp_path / "k.txt")
        vectors = np.concatenate([m.group.vectors for m in report.modes])
        np.testing.assert_array_equal(np.array([r[1:4] for r in rows]), vectors)
        assert rows[0][4] == report.modes[0].wavenumber.omega

    def test_empty_report_is_header_only(self):
        text = format_kspace(EstimationReport(ROOM, [], {}, {}, None))
        assert text == KSPACE_HEADER + "\n"
