import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roomkspace.modal import (
    ModeIndex,
    RoomGeometry,
    SamplingSpec,
    WaveNumber,
    WaveVectorGroup,
    axial_fundamental,
    band_to_room_range,
    damping_prior,
    eigenfrequency,
    enumerate_modes_below,
    group_size,
    mode_count_estimate,
    mode_shape,
    spatial_step_bound,
    wave_vector_group,
)

REFERENCE_ROOM = RoomGeometry(3.0, 5.6, 3.53)

sides = st.floats(1.0, 10.0)
rooms = st.builds(RoomGeometry, sides, sides, sides)
indices = st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4)).filter(any)


def brute_force_modes(fc, room, c=343.0):
    """Slow independent enumeration over a generous box."""
    out = []
    limit = [int(2 * fc * length / c) + 2 for length in room.lengths]
    for n in itertools.product(*(range(b + 1) for b in limit)):
        if not any(n):
            continue
        f = 0.5 * c * math.sqrt(sum((k / length) ** 2 for k, length in zip(n, room.lengths)))
        if f <= fc + 1e-12:
            out.append((n, f))
    return sorted(out, key=lambda e: (e[1], e[0]))


class TestTypes:
    @pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
    def test_room_rejects_nonpositive_or_nonfinite(self, bad):
        with pytest.raises(ValueError):
            RoomGeometry(bad, 1.0, 1.0)

    def test_mode_index_rejects_zero_and_negative(self):
        with pytest.raises(ValueError):
            ModeIndex(0, 0, 0)
        with pytest.raises(ValueError):
            ModeIndex(-1, 0, 0)

    def test_wavenumber_signs(self):
        with pytest.raises(ValueError):
            WaveNumber(-1.0, -1.0)
        with pytest.raises(ValueError):
            WaveNumber(1.0, 0.0)
        wn = WaveNumber(2 * math.pi * 50, -3.0)
        assert wn.frequency == pytest.approx(50.0)
        assert wn.complex_wavenumber(343.0) == pytest.approx(complex(wn.omega, 3.0) / 343.0)

    def test_group_validation(self):
        with pytest.raises(ValueError):
            WaveVectorGroup([[1, 0, 0]], "axial-x")
        with pytest.raises(ValueError):
            WaveVectorGroup([[1, 0, 0], [1, 0, 0]], "axial-x")
        with pytest.raises(ValueError):
            WaveVectorGroup([[1, 0.5, 0], [-1, -0.5, 0]], "axial-x")

    def test_sampling_spec(self):
        spec = SamplingSpec(1000.0, (0.5, 0.5, 0.5))
        assert spec.dt * spec.fs == 1.0
        assert spec.is_alias_free(200.0)
        assert not SamplingSpec(1000.0, (0.9, 0.1, 0.1)).is_alias_free(200.0)


class TestEigenfrequency:
    def test_band_edge_room(self):
        omega = eigenfrequency((1, 0, 0), RoomGeometry(2.45, 4.0, 3.0), 343.0)
        assert omega / (2 * math.pi) == pytest.approx(70.0, rel=1e-14)

    def test_zero_index_rejected(self):
        with pytest.raises(ValueError):
            eigenfrequency((0, 0, 0), REFERENCE_ROOM)

    def test_reference_room_x_fundamental(self):
        omega = eigenfrequency((1, 0, 0), REFERENCE_ROOM, 343.0)
        assert omega / (2 * math.pi) == pytest.approx(57.1667, abs=1e-4)
        assert omega == pytest.approx(359.19, abs=5e-3)


class TestEnumeration:
    def test_empty_below_lowest(self):
        assert enumerate_modes_below(30.0, REFERENCE_ROOM) == []

    def test_reference_room_low_band(self):
        modes = enumerate_modes_below(70.0, REFERENCE_ROOM, 343.0)
        freqs = {n.as_tuple(): w / (2 * math.pi) for n, w in modes}
        assert freqs[(0, 1, 0)] == pytest.approx(30.625)
        assert freqs[(0, 0, 1)] == pytest.approx(48.5836, abs=1e-4)
        assert freqs[(1, 0, 0)] == pytest.approx(57.1667, abs=1e-4)
        assert freqs[(0, 2, 0)] == pytest.approx(61.25)
        assert all(f <= 70.0 for f in freqs.values())
        assert sorted(freqs) == sorted(n for n, _ in brute_force_modes(70.0, REFERENCE_ROOM))

    def test_matches_brute_force_at_200(self):
        fast = [(n.as_tuple(), w / (2 * math.pi)) for n, w in enumerate_modes_below(200.0, REFERENCE_ROOM)]
        slow = brute_force_modes(200.0, REFERENCE_ROOM)
        assert [n for n, _ in fast] == [n for n, _ in slow]
        np.testing.assert_allclose([f for _, f in fast], [f for _, f in slow], rtol=1e-13)

    def test_degenerate_room_keeps_both_entries(self):
        cube = RoomGeometry(4.0, 4.0, 4.0)
        modes = enumerate_modes_below(45.0, cube)
        assert [n.as_tuple() for n, _ in modes] == [(0, 0, 1), (0, 1, 0), (1, 0, 0)]
        assert modes[0][1] == modes[1][1] == modes[2][1]

    def test_f_min_excludes_lower_edge(self):
        all_modes = enumerate_modes_below(200.0, REFERENCE_ROOM)
        upper = enumerate_modes_below(200.0, REFERENCE_ROOM, f_min=70.0)
        assert upper == [e for e in all_modes if e[1] > 2 * math.pi * 70.0]

    @settings(max_examples=30, deadline=None)
    @given(rooms, st.floats(20.0, 120.0))
    def test_exhaustive_and_sorted(self, room, fc):
        modes = enumerate_modes_below(fc, room)
        omegas = [w for _, w in modes]
        assert omegas == sorted(omegas)
        assert len({n for n, _ in modes}) == len(modes)
        assert all(w <= 2 * math.pi * fc + 1e-9 for w in omegas)
        found = {n.as_tuple() for n, _ in modes}
        bounds = [math.ceil(2 * fc * length / 343.0) for length in room.lengths]
        for n in itertools.product(*(range(b + 1) for b in bounds)):
            if any(n) and n not in found:
                assert eigenfrequency(n, room) > 2 * math.pi * fc


class TestModeCount:
    def test_zero_frequency_limit(self):
        assert mode_count_estimate(1e-9, REFERENCE_ROOM) == pytest.approx(0.0, abs=1e-20)

    def test_reference_room_200(self):
        assert REFERENCE_ROOM.volume == pytest.approx(59.304, abs=1e-3)
        assert mode_count_estimate(200.0, REFERENCE_ROOM, 343.0) == pytest.approx(49.2, abs=0.05)

    @given(rooms, st.floats(1.0, 500.0))
    def test_cubic_law(self, room, fc):
        assert mode_count_estimate(2 * fc, room) == pytest.approx(8 * mode_count_estimate(fc, room), rel=1e-12)

    def test_converges_to_enumeration(self):
        errors = []
        for fc in (100.0, 200.0, 400.0):
            count = len(enumerate_modes_below(fc, REFERENCE_ROOM))
            errors.append(abs(mode_count_estimate(fc, REFERENCE_ROOM) - count) / count)
        assert errors == sorted(errors, reverse=True)

    @pytest.mark.parametrize("fc, tol", [(200.0, 0.03), (400.0, 0.02)])
    def test_enumeration_matches_corrected_law(self, fc, tol):
        # volume, surface and edge terms; the volume term alone is far off at low fc
        lx, ly, lz = REFERENCE_ROOM.lengths
        surface, edges, x = 2 * (lx * ly + lx * lz + ly * lz), 4 * (lx + ly + lz), fc / 343.0
        law = mode_count_estimate(fc, REFERENCE_ROOM, 343.0) + math.pi / 4 * surface * x**2 + edges / 8 * x
        count = len(enumerate_modes_below(fc, REFERENCE_ROOM, 343.0))
        assert law == pytest.approx(count, rel=tol)


class TestWaveVectorGroups:
    def test_axial_example(self):
        g = wave_vector_group((1, 0, 0), REFERENCE_ROOM)
        assert g.topology == "axial-x"
        assert g.size == 2
        np.testing.assert_allclose(sorted(g.vectors[:, 0]), [-math.pi / 3, math.pi / 3])
        assert np.all(g.vectors[:, 1:] == 0)

    def test_tangential_example(self):
        g = wave_vector_group((1, 1, 0), REFERENCE_ROOM)
        assert (g.topology, g.size) == ("tangential-xy", 4)

    def test_unit_cube_oblique(self):
        g = wave_vector_group((1, 1, 1), RoomGeometry(1.0, 1.0, 1.0))
        assert g.size == 8
        np.testing.assert_allclose(np.linalg.norm(g.vectors, axis=1), math.pi * math.sqrt(3))

    @given(indices, rooms)
    def test_group_invariants(self, n, room):
        g = wave_vector_group(n, room)
        assert g.size == 2 ** sum(k != 0 for k in n) == group_size(g.topology)
        np.testing.assert_allclose(np.linalg.norm(g.vectors, axis=1), eigenfrequency(n, room) / 343.0,
                                   rtol=1e-12)
        rows = {tuple(v) for v in g.vectors}
        assert len(rows) == g.size
        for v in g.vectors:
            for axis in range(3):
                flipped = v.copy()
                flipped[axis] = -flipped[axis]
                assert tuple(flipped) in rows

    def test_equality_and_hash(self):
        a = wave_vector_group((1, 2, 0), REFERENCE_ROOM)
        b = wave_vector_group((1, 2, 0), REFERENCE_ROOM)
        assert a == b and hash(a) == hash(b)
        assert a != wave_vector_group((2, 1, 0), REFERENCE_ROOM)


class TestBounds:
    def test_spatial_step_bound(self):
        assert spatial_step_bound(200.0, 343.0) == 0.8575
        assert spatial_step_bound(70.0, 343.0) == pytest.approx(2.45, rel=1e-15)

    @given(st.floats(1.0, 1e4))
    def test_halving_doubles(self, fc):
        assert spatial_step_bound(fc / 2) == pytest.approx(2 * spatial_step_bound(fc), rel=1e-15)

    def test_band_to_room_range(self):
        assert band_to_room_range(20.0, 70.0, 343.0) == (2.45, 8.575)
        lo, hi = band_to_room_range(20.0, 70.0, 340.0)
        assert (lo, hi) == (pytest.approx(2.4286, abs=5e-5), pytest.approx(8.5))
        with pytest.raises(ValueError):
            band_to_room_range(70.0, 20.0)

    @given(st.floats(1.0, 1000.0))
    def test_octave_ratio(self, f):
        lo, hi = band_to_room_range(f, 2 * f)
        assert hi == pytest.approx(2 * lo, rel=1e-15)

    @given(st.floats(0.5, 50.0))
    def test_axial_round_trip(self, length):
        f = axial_fundamental(length)
        assert band_to_room_range(f, 2 * f)[1] == pytest.approx(length, rel=1e-14)
        assert band_to_room_range(f / 2, f)[0] == pytest.approx(length, rel=1e-14)


def test_damping_prior():
    assert damping_prior(1.0) == pytest.approx(-6.9078, abs=1e-4)
    assert damping_prior(2.0) == pytest.approx(damping_prior(1.0) / 2)


def test_mode_shape_node():
    x = np.array([[1.5, 0.3, 0.7]])
    assert abs(mode_shape((1, 0, 0), REFERENCE_ROOM, x)[0]) < 1e-15
    assert mode_shape((0, 1, 0), REFERENCE_ROOM, [[0.0, 0.0, 0.0]])[0] == 1.0
