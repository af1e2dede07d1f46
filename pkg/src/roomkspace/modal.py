"""Closed-form modal physics of rigid-walled rectangular rooms.

Eigenfrequency lattice, mode enumeration and counting, wave-vector groups
and the sampling bounds that tie temporal bandwidth to spatial step size.
All functions are pure.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_SOUND = 343.0

AXIAL = ("axial-x", "axial-y", "axial-z")
TANGENTIAL = ("tangential-xy", "tangential-xz", "tangential-yz")
OBLIQUE = ("oblique",)
TOPOLOGIES = AXIAL + TANGENTIAL + OBLIQUE

_GROUP_SIZE = {**{t: 2 for t in AXIAL}, **{t: 4 for t in TANGENTIAL}, "oblique": 8}
_AXIS_NAMES = "xyz"

# Absolute slack used when comparing closed-form angular frequencies.
OMEGA_ATOL = 1e-9


@dataclass(frozen=True)
class RoomGeometry:
    """Side lengths of a rectangular room in meters."""

    lx: float
    ly: float
    lz: float

    def __post_init__(self):
        for name in ("lx", "ly", "lz"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"room side {name} must be positive and finite, got {value!r}")

    @property
    def lengths(self) -> np.ndarray:
        return np.array([self.lx, self.ly, self.lz], dtype=float)

    @property
    def volume(self) -> float:
        return self.lx * self.ly * self.lz

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= margin) and np.all(p <= self.lengths - margin))


@dataclass(frozen=True, order=True)
class ModeIndex:
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"mode index {name} must be a non-negative integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.nx == self.ny == self.nz == 0:
            raise ValueError("the (0, 0, 0) index is not a room mode")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def topology(self) -> str:
        return topology_from_mask(np.array(self.as_tuple()) != 0)

    def __str__(self):
        return f"({self.nx},{self.ny},{self.nz})"


@dataclass(frozen=True)
class WaveNumber:
    """Resonant angular frequency (rad/s) and damping factor (1/s, negative).

    The complex wave number is ``(omega - 1j * xi) / c``, so that the
    temporal factor ``exp(1j * k * c * t)`` equals ``exp(xi * t) * exp(1j * omega * t)``.
    """

    omega: float
    xi: float

    def __post_init__(self):
        if not (np.isfinite(self.omega) and self.omega > 0):
            raise ValueError(f"omega must be positive, got {self.omega!r}")
        if not (np.isfinite(self.xi) and self.xi < 0):
            raise ValueError(f"damping xi must be negative, got {self.xi!r}")
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "xi", float(self.xi))

    @property
    def frequency(self) -> float:
        return self.omega / (2 * math.pi)

    @property
    def pole(self) -> complex:
        """Exponent ``s`` of the temporal factor ``exp(s t)``."""
        return complex(self.xi, self.omega)

    def complex_wavenumber(self, c: float = SPEED_OF_SOUND) -> complex:
        return complex(self.omega, -self.xi) / c


def topology_from_mask(nonzero) -> str:
    """Name the topology given which of the three components are nonzero."""
    nonzero = np.asarray(nonzero, dtype=bool)
    count = int(nonzero.sum())
    if count == 3:
        return "oblique"
    if count == 2:
        return "tangential-" + "".join(a for a, nz in zip(_AXIS_NAMES, nonzero) if nz)
    if count == 1:
        return "axial-" + _AXIS_NAMES[int(np.flatnonzero(nonzero)[0])]
    raise ValueError("a wave vector group needs at least one nonzero component")


def topology_axes(topology: str) -> tuple[int, ...]:
    """Indices of the nonzero components for a topology name."""
    if topology == "oblique":
        return (0, 1, 2)
    if topology not in TOPOLOGIES:
        raise ValueError(f"unknown topology {topology!r}")
    return tuple(_AXIS_NAMES.index(a) for a in topology.split("-")[1])


def group_size(topology: str) -> int:
    return _GROUP_SIZE[topology]


def sign_expand(base, axes) -> np.ndarray:
    """All sign combinations of ``base`` over the given component indices.

    Components outside ``axes`` are forced to zero. The first row keeps the
    absolute values of ``base``.
    """
    base = np.abs(np.asarray(base, dtype=float))
    out = []
    for signs in itertools.product((1.0, -1.0), repeat=len(axes)):
        v = np.zeros(3)
        for axis, s in zip(axes, signs):
            v[axis] = s * base[axis]
        out.append(v)
    return np.array(out)


@dataclass(frozen=True, eq=False)
class WaveVectorGroup:
    """Sign-symmetric set of plane-wave vectors (rad/m) belonging to one mode."""

    vectors: np.ndarray
    topology: str
    _atol: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=float).reshape(-1, 3)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if len(vectors) != group_size(self.topology):
            raise ValueError(
                f"{self.topology} group needs {group_size(self.topology)} vectors, got {len(vectors)}"
            )
        axes = topology_axes(self.topology)
        off = [a for a in range(3) if a not in axes]
        scale = max(1.0, float(np.abs(vectors).max()))
        if off and np.abs(vectors[:, off]).max() > self._atol * scale:
            raise ValueError(f"{self.topology} group has nonzero components off its axes")
        if np.abs(np.abs(vectors[:, list(axes)]).min(axis=0)).min() <= 0:
            raise ValueError(f"{self.topology} group has a zero component on one of its axes")
        expected = sign_expand(np.abs(vectors[0]), axes)
        if not _same_rows(vectors, expected, self._atol * scale):
            raise ValueError("wave vectors are not closed under sign flips of their components")

    @classmethod
    def from_base(cls, base, topology: str | None = None) -> "WaveVectorGroup":
        base = np.abs(np.asarray(base, dtype=float))
        if topology is None:
            topology = topology_from_mask(base != 0)
        return cls(sign_expand(base, topology_axes(topology)), topology)

    @property
    def size(self) -> int:
        return len(self.vectors)

    @property
    def base(self) -> np.ndarray:
        """Absolute components (the positive-octant representative)."""
        return np.abs(self.vectors[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vectors[0]))

    @property
    def direction(self) -> np.ndarray:
        return self.base / self.norm

    def scaled_to(self, radius: float) -> "WaveVectorGroup":
        return WaveVectorGroup(self.vectors * (radius / self.norm), self.topology)

    def __eq__(self, other):
        if not isinstance(other, WaveVectorGroup):
            return NotImplemented
        return self.topology == other.topology and np.array_equal(self.vectors, other.vectors)

    def __hash__(self):
        return hash((self.topology, self.vectors.tobytes()))


def _same_rows(a: np.ndarray, b: np.ndarray, atol: float) -> bool:
    if a.shape != b.shape:
        return False
    d = np.abs(a[:, None, :] - b[None, :, :]).max(axis=2)
    return bool(np.all(d.min(axis=1) <= atol) and np.all(d.min(axis=0) <= atol))


@dataclass(frozen=True)
class SamplingSpec:
    """Temporal rate and per-axis spatial steps of a measurement grid."""

    fs: float
    spatial_steps: tuple[float, float, float] = (np.inf, np.inf, np.inf)

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError("fs must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.fs

    @property
    def nyquist(self) -> float:
        return self.fs / 2

    def is_alias_free(self, fc: float, c: float = SPEED_OF_SOUND) -> bool:
        """True when both the temporal and the hypercone spatial bound hold at ``fc``."""
        bound = spatial_step_bound(fc, c)
        return self.fs > 2 * fc and all(step < bound for step in self.spatial_steps)


def _as_index(n) -> ModeIndex:
    return n if isinstance(n, ModeIndex) else ModeIndex(*n)


def eigenfrequency(n, room: RoomGeometry, c: float = SPEED_OF_SOUND) -> float:
    """Angular eigenfrequency (rad/s) of mode ``n`` for rigid walls."""
    n = _as_index(n)
    if not c > 0:
        raise ValueError("speed of sound must be positive")
    return math.pi * c * math.sqrt(
        (n.nx / room.lx) ** 2 + (n.ny / room.ly) ** 2 + (n.nz / room.lz) ** 2
    )


def enumerate_modes_below(fc: float, room: RoomGeometry, c: float = SPEED_OF_SOUND,
                          f_min: float = 0.0) -> list[tuple[ModeIndex, float]]:
    """All lattice modes with ``2 pi f_min < omega <= 2 pi fc``, ascending in frequency.

    Ties in frequency (degenerate rooms) are kept as separate entries and
    ordered by index.
    """
    if not fc > 0:
        raise ValueError("fc must be positive")
    bounds = [math.ceil(2 * fc * length / c) for length in room.lengths]
    grids = np.meshgrid(*[np.arange(b + 1) for b in bounds], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)[1:]
    omega = math.pi * c * np.sqrt(((idx / room.lengths) ** 2).sum(axis=1))
    keep = omega <= 2 * math.pi * fc + OMEGA_ATOL
    if f_min > 0:
        keep &= omega > 2 * math.pi * f_min + OMEGA_ATOL
    idx, omega = idx[keep], omega[keep]
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0], omega))
    return [(ModeIndex(*map(int, idx[i])), float(omega[i])) for i in order]


def mode_count_estimate(fc: float, room: RoomGeometry, c: float = SPEED_OF_SOUND) -> float:
    """Asymptotic number of modes up to ``fc``: (4 pi / 3) V (fc / c)^3."""
    return 4 * math.pi / 3 * room.volume * (fc / c) ** 3


def wave_vector_group(n, room: RoomGeometry) -> WaveVectorGroup:
    """Lattice wave vectors ``(pi nx / Lx, pi ny / Ly, pi nz / Lz)`` with all sign flips."""
    n = _as_index(n)
    base = math.pi * np.array(n.as_tuple()) / room.lengths
    return WaveVectorGroup.from_base(base, n.topology)


def spatial_step_bound(fc: float, c: float = SPEED_OF_SOUND) -> float:
    """Largest alias-free spatial step, pi c / omega_c = c / (2 fc)."""
    if not fc > 0:
        raise ValueError("fc must be positive")
    return c / (2 * fc)


def band_to_room_range(f_lo: float, f_hi: float, c: float = SPEED_OF_SOUND) -> tuple[float, float]:
    """Side lengths whose axial fundamental c / (2 L) lies in ``[f_lo, f_hi]``."""
    if not 0 < f_lo < f_hi:
        raise ValueError("need 0 < f_lo < f_hi")
    return c / (2 * f_hi), c / (2 * f_lo)


def axial_fundamental(length: float, c: float = SPEED_OF_SOUND) -> float:
    """Frequency in Hz of the first axial mode along a side of the given length."""
    return c / (2 * length)


def damping_prior(rt60: float) -> float:
    """Damping factor xi0 = -3 ln(10) / RT60 (1/s) matching a 60 dB energy decay."""
    if not rt60 > 0:
        raise ValueError("rt60 must be positive")
    return -3 * math.log(10) / rt60


def mode_shape(n, room: RoomGeometry, positions) -> np.ndarray:
    """Rigid-wall cosine mode shape evaluated at ``positions`` (..., 3)."""
    n = np.array(_as_index(n).as_tuple(), dtype=float)
    x = np.asarray(positions, dtype=float)
    return np.prod(np.cos(math.pi * n * x / room.lengths), axis=-1)
