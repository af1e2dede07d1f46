import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roomkspace.estimator import ModeEstimate
from roomkspace.metrics import (
    SNR_DISPLAY_CAP_DB,
    ChannelMetrics,
    EvalResult,
    display_db,
    evaluate,
    kspace_deviation,
    pearson_pcc,
    pearson_pcc_per_microphone,
    room_error,
    snr_db,
    snr_db_per_microphone,
)
from roomkspace.modal import (
    ModeIndex,
    RoomGeometry,
    WaveNumber,
    eigenfrequency,
    enumerate_modes_below,
    wave_vector_group,
)

REFERENCE_ROOM = RoomGeometry(3.0, 5.6, 3.53)
rng = np.random.default_rng(0)
SIGNAL = rng.standard_normal((256, 4))

blocks = arrays(np.float64, (64, 3), elements=st.floats(-10, 10, allow_nan=False)).filter(
    lambda a: np.linalg.norm(a) > 1e-3)


def lattice_estimates(room, f_max, shift_hz=0.0):
    out = []
    for n, omega in enumerate_modes_below(f_max, room):
        g = wave_vector_group(n, room)
        out.append(ModeEstimate(WaveNumber(omega + 2 * math.pi * shift_hz, -6.9), g, np.ones(g.size)))
    return out


class TestSnr:
    def test_identical_is_infinite(self):
        assert snr_db(SIGNAL, SIGNAL) == math.inf
        assert display_db(snr_db(SIGNAL, SIGNAL)) == SNR_DISPLAY_CAP_DB

    def test_zero_estimate_is_zero_db(self):
        assert snr_db(SIGNAL, np.zeros_like(SIGNAL)) == pytest.approx(0.0, abs=1e-12)

    def test_calibrated_noise(self):
        noise = rng.standard_normal(SIGNAL.shape)
        noise *= np.linalg.norm(SIGNAL) / np.linalg.norm(noise) * 10 ** (-40 / 20)
        assert snr_db(SIGNAL, SIGNAL + noise) == pytest.approx(40.0, abs=0.1)

    def test_strictly_decreasing_in_error(self):
        noise = rng.standard_normal(SIGNAL.shape)
        values = [snr_db(SIGNAL, SIGNAL + a * noise) for a in (1e-3, 1e-2, 1e-1, 1.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_errors(self):
        with pytest.raises(ValueError):
            snr_db(np.zeros(4), np.ones(4))
        with pytest.raises(ValueError):
            snr_db(np.ones(4), np.ones(5))

    def test_per_microphone(self):
        est = SIGNAL.copy()
        est[:, 1] *= 0.9
        per = snr_db_per_microphone(SIGNAL, est)
        assert per[0] == math.inf and per[1] == pytest.approx(20.0)


class TestPcc:
    def test_identical(self):
        assert pearson_pcc(SIGNAL, SIGNAL) == pytest.approx(100.0, abs=1e-9)

    def test_orthogonal(self):
        t = np.arange(1000) / 1000
        a = np.exp(2j * np.pi * 50 * t)
        b = np.exp(2j * np.pi * 80 * t)
        assert pearson_pcc(a, b) == pytest.approx(0.0, abs=1e-9)

    def test_phase_offset_not_penalized(self):
        t = np.arange(1000) / 1000
        a = np.cos(2 * np.pi * 50 * t)
        b = np.sin(2 * np.pi * 50 * t)
        assert pearson_pcc(a, b) == pytest.approx(100.0, abs=1e-6)
        assert pearson_pcc(a, b, analytic=False) == pytest.approx(0.0, abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(blocks, blocks, st.floats(0.01, 100.0))
    def test_bounded_symmetric_scale_free(self, a, b, scale):
        value = pearson_pcc(a, b, analytic=False)
        assert 0.0 <= value <= 100.0
        assert pearson_pcc(b, a, analytic=False) == pytest.approx(value, abs=1e-9)
        assert pearson_pcc(a, scale * b, analytic=False) == pytest.approx(value, abs=1e-9)
        assert pearson_pcc(a, -b, analytic=False) == pytest.approx(value, abs=1e-9)

    def test_zero_norm(self):
        with pytest.raises(ValueError):
            pearson_pcc(np.zeros(8), np.ones(8))

    def test_per_microphone(self):
        per = pearson_pcc_per_microphone(SIGNAL, 3 * SIGNAL)
        np.testing.assert_allclose(per, 100.0, atol=1e-9)


class TestKSpace:
    def test_exact_lattice_has_zero_deviation(self):
        table = kspace_deviation(lattice_estimates(REFERENCE_ROOM, 70.0), REFERENCE_ROOM)
        assert table.matched_count == len(table.rows) == table.lattice_size
        for row in table.rows:
            assert row.frequency_offset_hz == pytest.approx(0.0, abs=1e-9)
            assert row.max_angle_deg == pytest.approx(0.0, abs=1e-5)
            assert row.max_length_dev == pytest.approx(0.0, abs=1e-12)
            assert row.topology_match

    def test_spurious_estimate_is_unmatched(self):
        estimates = lattice_estimates(REFERENCE_ROOM, 62.0)
        g = wave_vector_group((1, 1, 0), REFERENCE_ROOM)
        extra = ModeEstimate(WaveNumber(2 * math.pi * 35.0, -6.9), g, np.ones(g.size))
        table = kspace_deviation(estimates + [extra], REFERENCE_ROOM, f_max=62.0)
        assert table.unmatched == [len(estimates)]
        assert table.matched_count == table.lattice_size

    def test_matching_is_a_bijection(self):
        estimates = lattice_estimates(REFERENCE_ROOM, 100.0, shift_hz=0.2)
        table = kspace_deviation(estimates, REFERENCE_ROOM, f_max=80.0)
        indices = [r.index for r in table.rows if r.matched]
        assert len(indices) == len(set(indices)) == min(len(estimates), table.lattice_size)

    def test_explicit_lattice(self):
        lattice = [(ModeIndex(0, 1, 0), eigenfrequency((0, 1, 0), REFERENCE_ROOM))]
        table = kspace_deviation(lattice_estimates(REFERENCE_ROOM, 40.0), lattice)
        assert table.rows[0].matched and table.rows[0].max_angle_deg is None

    def test_empty(self):
        table = kspace_deviation([], REFERENCE_ROOM)
        assert table.rows == () and table.max_angle_deg() == 0.0


class TestEvaluate:
    def test_room_error(self):
        err = room_error(RoomGeometry(3.01, 5.6, 3.5), REFERENCE_ROOM)
        np.testing.assert_allclose(err, [0.01, 0.0, 0.03], atol=1e-12)

    def test_missing_holdout_flagged(self):
        result = evaluate(SIGNAL, SIGNAL * 0.99)
        assert result.holdout_pcc_percent is None
        assert any("held-out" in f for f in result.flags)

    def test_holdout_reported_separately(self):
        other = rng.standard_normal((256, 2))
        result = evaluate(SIGNAL, SIGNAL, holdout_reference=other, holdout_estimate=other * 0.5)
        assert result.flags == ()
        assert result.holdout_pcc_percent.pooled == pytest.approx(100.0, abs=1e-9)
        assert result.holdout_snr_db.pooled == pytest.approx(20 * math.log10(2))

    def test_to_dict_caps_infinite_snr(self):
        payload = evaluate(SIGNAL, SIGNAL).to_dict()
        assert payload["snr_db"]["pooled"] == SNR_DISPLAY_CAP_DB
        assert all(v == SNR_DISPLAY_CAP_DB for v in payload["snr_db"]["per_mic"])

    def test_pcc_range_enforced(self):
        with pytest.raises(ValueError):
            EvalResult(ChannelMetrics(np.array([1.0]), 1.0), ChannelMetrics(np.array([101.0]), 50.0))
