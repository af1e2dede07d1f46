"""Reconstruction and k-space quality measures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bandsplit import analytic_signal
from .modal import SPEED_OF_SOUND, ModeIndex, RoomGeometry, enumerate_modes_below, wave_vector_group

SNR_DISPLAY_CAP_DB = 300.0


def _pair(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(reference)
    e = np.asarray(estimate)
    if s.shape != e.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {e.shape}")
    return s, e


def snr_db(reference, estimate) -> float:
    """20 log10(|s| / |s - s_hat|) over the whole (vectorized) block.

    Returns ``math.inf`` for an exact match; see :func:`display_db`.
    """
    s, e = _pair(reference, estimate)
    signal = float(np.linalg.norm(s))
    if signal == 0:
        raise ValueError("reference has zero energy")
    error = float(np.linalg.norm(s - e))
    if error == 0:
        return math.inf
    return 20 * math.log10(signal / error)


def snr_db_per_microphone(reference, estimate) -> np.ndarray:
    s, e = _pair(reference, estimate)
    s, e = s.reshape(s.shape[0], -1), e.reshape(e.shape[0], -1)
    return np.array([snr_db(s[:, m], e[:, m]) for m in range(s.shape[1])])


def display_db(value: float) -> float:
    """Clamp an SNR for display; an exact match shows as the cap."""
    return min(float(value), SNR_DISPLAY_CAP_DB)


def _analytic(x) -> np.ndarray:
    x = np.asarray(x)
    return x if np.iscomplexobj(x) else analytic_signal(x)


def pearson_pcc(reference, estimate, analytic: bool = True) -> float:
    """100 |<s, s_hat>| / (|s| |s_hat|) in percent, pooled over the vectorized block.

    Real inputs are compared through their analytic signals (columns along
    axis 0) unless ``analytic`` is false, so that a constant phase offset is
    not penalized.
    """
    s, e = _pair(reference, estimate)
    if analytic:
        s, e = _analytic(s), _analytic(e)
    ns, ne = np.linalg.norm(s), np.linalg.norm(e)
    if ns == 0 or ne == 0:
        raise ValueError("correlation undefined for a zero-norm input")
    value = 100 * abs(np.vdot(s.ravel(), e.ravel())) / (ns * ne)
    return float(min(value, 100.0))


def pearson_pcc_per_microphone(reference, estimate, analytic: bool = True) -> np.ndarray:
    s, e = _pair(reference, estimate)
    s, e = s.reshape(s.shape[0], -1), e.reshape(e.shape[0], -1)
    return np.array([pearson_pcc(s[:, m], e[:, m], analytic) for m in range(s.shape[1])])


def room_error(estimate: RoomGeometry, truth: RoomGeometry) -> np.ndarray:
    """Absolute per-axis side-length error in meters."""
    return np.abs(estimate.lengths - truth.lengths)


# -- k-space -----------------------------------------------------------------------------------

@dataclass(frozen=True)
class KSpaceRow:
    """One estimated mode, matched (or not) to a lattice mode.

    Angles are in degrees, lengths in rad/m.  For each estimated wave vector
    the closest predicted vector of the matched lattice group is used.
    """

    estimate: int
    index: ModeIndex | None
    predicted_omega: float | None
    estimated_omega: float
    predicted_base: tuple[float, float, float] | None
    estimated_base: tuple[float, float, float]
    max_angle_deg: float | None
    max_length_dev: float | None
    topology_match: bool | None

    @property
    def matched(self) -> bool:
        return self.index is not None

    @property
    def frequency_offset_hz(self) -> float | None:
        if self.predicted_omega is None:
            return None
        return (self.estimated_omega - self.predicted_omega) / (2 * math.pi)


@dataclass(frozen=True)
class KSpaceTable:
    rows: tuple[KSpaceRow, ...]
    lattice_size: int

    @property
    def matched_count(self) -> int:
        return sum(r.matched for r in self.rows)

    @property
    def unmatched(self) -> list[int]:
        return [r.estimate for r in self.rows if not r.matched]

    def max_angle_deg(self) -> float:
        return max((r.max_angle_deg for r in self.rows if r.matched), default=0.0)


def _vector_deviation(estimated: np.ndarray, predicted: np.ndarray) -> tuple[float, float]:
    eu = estimated / np.linalg.norm(estimated, axis=1, keepdims=True)
    pu = predicted / np.linalg.norm(predicted, axis=1, keepdims=True)
    cos = np.clip(eu @ pu.T, -1.0, 1.0)
    nearest = np.argmax(cos, axis=1)
    angles = np.degrees(np.arccos(cos[np.arange(len(eu)), nearest]))
    lengths = np.abs(np.linalg.norm(estimated, axis=1) - np.linalg.norm(predicted[nearest], axis=1))
    return float(angles.max()), float(lengths.max())


def kspace_deviation(estimates, truth, c: float = SPEED_OF_SOUND,
                     f_max: float | None = None) -> KSpaceTable:
    """Greedy nearest-frequency matching of estimated modes to a lattice.

    ``truth`` is a :class:`RoomGeometry` (its lattice up to ``f_max`` Hz,
    default 1 Hz above the highest estimate) or a list of
    ``(ModeIndex, omega)``.  Pairs are taken in order of increasing
    frequency distance without reuse, so the result is a bijection on
    ``min(len(estimates), len(lattice))`` pairs; leftover estimates are
    reported unmatched.
    """
    estimates = list(estimates)
    if isinstance(truth, RoomGeometry):
        room = truth
        if f_max is None:
            f_max = max((m.wavenumber.frequency for m in estimates), default=0.0) + 1.0
        lattice = enumerate_modes_below(f_max, room, c) if f_max > 0 else []
        groups = [wave_vector_group(n, room) for n, _ in lattice]
    else:
        lattice = list(truth)
        groups = [None] * len(lattice)
    est_omega = np.array([m.wavenumber.omega for m in estimates])
    lat_omega = np.array([w for _, w in lattice])
    assignment: dict[int, int] = {}
    if len(estimates) and len(lattice):
        dist = np.abs(est_omega[:, None] - lat_omega[None, :])
        order = np.argsort(dist, axis=None, kind="stable")
        used = set()
        for flat in order:
            i, j = divmod(int(flat), len(lattice))
            if i in assignment or j in used:
                continue
            assignment[i] = j
            used.add(j)
            if len(assignment) == min(len(estimates), len(lattice)):
                break
    rows = []
    for i, m in enumerate(estimates):
        base = tuple(float(v) for v in m.group.base)
        if i not in assignment:
            rows.append(KSpaceRow(i, None, None, m.wavenumber.omega, None, base, None, None, None))
            continue
        n, omega = lattice[assignment[i]]
        group = groups[assignment[i]]
        if group is None:
            angle = length = None
            predicted_base, topology_match = None, None
        else:
            angle, length = _vector_deviation(m.group.vectors, group.vectors)
            predicted_base = tuple(float(v) for v in group.base)
            topology_match = group.topology == m.group.topology
        rows.append(KSpaceRow(i, n, float(omega), m.wavenumber.omega, predicted_base, base, angle,
                              length, topology_match))
    return KSpaceTable(tuple(rows), len(lattice))


# -- evaluation bundle -------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelMetrics:
    per_mic: np.ndarray
    pooled: float

    def to_dict(self) -> dict:
        return {"per_mic": [float(v) for v in self.per_mic], "pooled": float(self.pooled)}


@dataclass(frozen=True)
class EvalResult:
    """Evaluation of a reconstruction at training (and optionally held-out) positions.

    ``flags`` lists conditions worth surfacing, e.g. a missing held-out set.
    """

    snr_db: ChannelMetrics
    pcc_percent: ChannelMetrics
    room_error: np.ndarray | None = None
    kspace_table: KSpaceTable | None = None
    holdout_snr_db: ChannelMetrics | None = None
    holdout_pcc_percent: ChannelMetrics | None = None
    flags: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        values = np.append(self.pcc_percent.per_mic, self.pcc_percent.pooled)
        if np.any(values < 0) or np.any(values > 100):
            raise ValueError("PCC must lie in [0, 100]")

    def to_dict(self) -> dict:
        def db(cm):
            if cm is None:
                return None
            return {"per_mic": [display_db(v) for v in cm.per_mic], "pooled": display_db(cm.pooled)}

        table = None
        if self.kspace_table is not None:
            table = {
                "lattice_size": self.kspace_table.lattice_size,
                "matched": self.kspace_table.matched_count,
                "rows": [{
                    "estimate": r.estimate,
                    "index": None if r.index is None else list(r.index.as_tuple()),
                    "predicted_omega": r.predicted_omega,
                    "estimated_omega": r.estimated_omega,
                    "frequency_offset_hz": r.frequency_offset_hz,
                    "predicted_base": None if r.predicted_base is None else list(r.predicted_base),
                    "estimated_base": list(r.estimated_base),
                    "max_angle_deg": r.max_angle_deg,
                    "max_length_dev": r.max_length_dev,
                    "topology_match": r.topology_match,
                } for r in self.kspace_table.rows],
            }
        return {
            "snr_db": db(self.snr_db),
            "pcc_percent": self.pcc_percent.to_dict(),
            "room_error_m": None if self.room_error is None else [float(v) for v in self.room_error],
            "kspace": table,
            "holdout_snr_db": db(self.holdout_snr_db),
            "holdout_pcc_percent": None if self.holdout_pcc_percent is None
            else self.holdout_pcc_percent.to_dict(),
            "flags": list(self.flags),
        }


def channel_snr(reference, estimate) -> ChannelMetrics:
    return ChannelMetrics(snr_db_per_microphone(reference, estimate), snr_db(reference, estimate))


def channel_pcc(reference, estimate) -> ChannelMetrics:
    return ChannelMetrics(pearson_pcc_per_microphone(reference, estimate),
                          pearson_pcc(reference, estimate))


def evaluate(reference, estimate, room_estimate: RoomGeometry | None = None,
             room_truth: RoomGeometry | None = None, modes=None, c: float = SPEED_OF_SOUND,
             holdout_reference=None, holdout_estimate=None, f_max: float | None = None) -> EvalResult:
    """Bundle SNR, PCC, room error and the k-space table into an :class:`EvalResult`."""
    flags = []
    room_err = table = None
    if room_estimate is not None and room_truth is not None:
        room_err = room_error(room_estimate, room_truth)
    if modes is not None and room_truth is not None:
        table = kspace_deviation(modes, room_truth, c, f_max)
    hs = hp = None
    if holdout_reference is None or holdout_estimate is None:
        flags.append("no held-out positions: training-position metrics only")
    else:
        hs = channel_snr(holdout_reference, holdout_estimate)
        hp = channel_pcc(holdout_reference, holdout_estimate)
    return EvalResult(channel_snr(reference, estimate), channel_pcc(reference, estimate), room_err,
                      table, hs, hp, tuple(flags))
