"""Synthetic room impulse responses from plane-wave modal parameters.

A modal model is a list of damped modes, each carrying a wave-vector group
and one complex coefficient per wave vector.  The pressure at position X is

    p(t, X) = Re sum_q sum_r a_qr exp((xi_q + j omega_q) t) exp(j k_qr . X)

which, for equal coefficients inside a group, is the rigid-wall cosine
product mode shape times a damped cosine in time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .modal import (
    SPEED_OF_SOUND,
    ModeIndex,
    RoomGeometry,
    WaveNumber,
    WaveVectorGroup,
    damping_prior,
    enumerate_modes_below,
    mode_shape,
    spatial_step_bound,
    wave_vector_group,
)

AMPLITUDE_RULES = ("unit", "random", "source-coupled")


class SpatialAliasingWarning(UserWarning):
    """Microphone spacing too coarse for the bandwidth being claimed."""


@dataclass(frozen=True)
class ModalComponent:
    wavenumber: WaveNumber
    group: WaveVectorGroup
    coefficients: np.ndarray
    index: ModeIndex | None = None

    def __post_init__(self):
        coefficients = np.array(self.coefficients, dtype=complex).reshape(-1)
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)
        if len(coefficients) != self.group.size:
            raise ValueError(
                f"{len(coefficients)} coefficients for a group of {self.group.size} wave vectors"
            )


@dataclass(frozen=True)
class ModalModel:
    modes: tuple[ModalComponent, ...]
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.c > 0:
            raise ValueError("speed of sound must be positive")

    def __len__(self):
        return len(self.modes)

    @property
    def max_frequency(self) -> float:
        return max((m.wavenumber.frequency for m in self.modes), default=0.0)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Multi-microphone pressure block ``samples`` of shape (T, M).

    ``analytic`` optionally carries the exact complex mode sum when the set
    comes from the simulator; estimators never rely on it.
    """

    positions: np.ndarray
    source_position: np.ndarray | None
    fs: float
    samples: np.ndarray
    analytic: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        samples = np.asarray(self.samples)
        if samples.ndim == 1:
            samples = samples[:, None] if len(positions) == 1 else samples.reshape(-1, len(positions))
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "samples", samples)
        if self.source_position is not None:
            object.__setattr__(self, "source_position", np.asarray(self.source_position, dtype=float))
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        if samples.ndim != 2 or samples.shape[1] != len(positions):
            raise ValueError(
                f"samples shape {samples.shape} does not match {len(positions)} microphone positions"
            )
        if samples.shape[0] == 0:
            raise ValueError("a measurement set needs at least one time sample")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_mics(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.fs

    def with_samples(self, samples, analytic=None) -> "MeasurementSet":
        return replace(self, samples=samples, analytic=analytic)

    def select(self, columns) -> "MeasurementSet":
        """Subset (or reorder) microphones."""
        columns = np.asarray(columns, dtype=int)
        analytic = None if self.analytic is None else self.analytic[:, columns]
        return replace(self, positions=self.positions[columns], samples=self.samples[:, columns],
                       analytic=analytic)


def _n_samples(fs: float, duration: float) -> int:
    if not duration > 0:
        raise ValueError("duration must be positive")
    return max(1, int(round(duration * fs)))


def analytic_field(model: ModalModel, positions, fs: float, n_samples: int) -> np.ndarray:
    """Complex mode sum at each position, shape (n_samples, M)."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    t = np.arange(n_samples) / fs
    out = np.zeros((n_samples, len(positions)), dtype=complex)
    for mode in model.modes:
        spatial = np.exp(1j * positions @ mode.group.vectors.T) @ mode.coefficients
        out += np.exp(mode.wavenumber.pole * t)[:, None] * spatial[None, :]
    return out


def synthesize_rir(model: ModalModel, position, fs: float, duration: float) -> np.ndarray:
    """Real pressure time series at one position, sampled at ``i / fs``."""
    n = _n_samples(fs, duration)
    return analytic_field(model, np.reshape(position, (1, 3)), fs, n)[:, 0].real


def make_rigid_wall_model(room: RoomGeometry, fc: float, c: float = SPEED_OF_SOUND,
                          rt60: float = 1.0, amplitude_rule: str = "source-coupled",
                          source_position=None, rng_seed: int = 0,
                          amplitude_range: tuple[float, float] = (0.5, 1.5),
                          phase_spread: float = math.pi / 8,
                          damping_jitter: float = 0.0) -> ModalModel:
    """Rigid-wall modal model with every lattice mode up to ``fc``.

    Damping is the prior ``-3 ln 10 / rt60`` for every mode, optionally
    scaled by a uniform factor in ``[1 - damping_jitter, 1 + damping_jitter]``.

    amplitude_rule
        ``"unit"``: amplitude 1; ``"random"``: magnitude uniform in
        ``amplitude_range`` and uniform phase; ``"source-coupled"``: mode shape
        at the source times a random phase in ``[-phase_spread, phase_spread]``.

    Each group carries its amplitude divided by the group size, so the
    spatial factor is exactly the cosine product mode shape.
    """
    if amplitude_rule not in AMPLITUDE_RULES:
        raise ValueError(f"amplitude_rule must be one of {AMPLITUDE_RULES}")
    if amplitude_rule == "source-coupled" and source_position is None:
        source_position = 0.05 * room.lengths
    if not rt60 > 0:
        raise ValueError("rt60 must be positive")
    rng = np.random.default_rng(rng_seed)
    xi0 = damping_prior(rt60)
    modes = []
    for index, omega in enumerate_modes_below(fc, room, c):
        xi = xi0
        if damping_jitter:
            xi *= 1 + rng.uniform(-damping_jitter, damping_jitter)
        if amplitude_rule == "unit":
            amplitude = 1.0 + 0j
        elif amplitude_rule == "random":
            amplitude = rng.uniform(*amplitude_range) * np.exp(1j * rng.uniform(0, 2 * math.pi))
        else:
            shape = float(mode_shape(index, room, source_position))
            # cos at an exact node evaluates to ~1e-17, not zero
            if abs(shape) < 1e-12:
                shape = 0.0
            amplitude = shape * np.exp(1j * rng.uniform(-phase_spread, phase_spread))
        group = wave_vector_group(index, room)
        modes.append(ModalComponent(WaveNumber(omega, xi), group,
                                    np.full(group.size, amplitude / group.size), index))
    return ModalModel(tuple(modes), c)


def sample_microphones(count: int, cube_center, cube_side: float, rng_seed: int = 0,
                       room: RoomGeometry | None = None) -> np.ndarray:
    """Uniform random positions inside an axis-aligned cube, shape (count, 3)."""
    center = np.asarray(cube_center, dtype=float)
    half = cube_side / 2
    if room is not None and not (room.contains(center - half) and room.contains(center + half)):
        raise ValueError(f"cube of side {cube_side} m at {center.tolist()} does not fit in the room")
    rng = np.random.default_rng(rng_seed)
    return center + rng.uniform(-half, half, size=(int(count), 3))


def nearest_neighbor_spacing(positions) -> np.ndarray:
    """Distance from each position to its closest neighbor."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) < 2:
        return np.full(len(positions), np.inf)
    d = np.linalg.norm(positions[:, None] - positions[None, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1)


def build_measurement_set(model: ModalModel, positions, source_position, fs: float,
                          duration: float, noise_snr_db: float | None = None,
                          rng_seed: int = 0, fc: float | None = None) -> MeasurementSet:
    """Stack per-microphone syntheses into a measurement set.

    With ``noise_snr_db`` white Gaussian noise is added, scaled so that the
    block signal-to-noise energy ratio equals the request exactly.  A
    :class:`SpatialAliasingWarning` is emitted when the microphone spacing
    exceeds the alias-free step for ``fc`` (default: highest model mode).
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = _n_samples(fs, duration)
    # column by column, so that each column is bit-identical to synthesize_rir
    analytic = np.zeros((n, len(positions)), dtype=complex)
    for m, position in enumerate(positions):
        analytic[:, m] = analytic_field(model, position[None, :], fs, n)[:, 0]
    samples = analytic.real.copy()
    if noise_snr_db is not None and samples.size:
        rng = np.random.default_rng(rng_seed)
        noise = rng.standard_normal(samples.shape)
        signal_energy = np.sum(samples ** 2)
        noise *= math.sqrt(signal_energy / 10 ** (noise_snr_db / 10) / np.sum(noise ** 2))
        samples = samples + noise
    fc = model.max_frequency if fc is None else fc
    if fc > 0 and len(positions) > 1:
        spacing = nearest_neighbor_spacing(positions).max()
        bound = spatial_step_bound(fc, model.c)
        if spacing > bound:
            warnings.warn(
                f"microphone spacing {spacing:.3f} m exceeds the alias-free step {bound:.3f} m at {fc:.1f} Hz",
                SpatialAliasingWarning, stacklevel=2,
            )
    provenance = {"generator": "rigid-wall modal synthesis", "noise_snr_db": noise_snr_db,
                  "modes": len(model)}
    return MeasurementSet(positions, source_position, fs, samples, analytic, provenance)
