"""Atom banks for the matching-pursuit stages.

``TemporalDictionary`` holds unit-norm damped complex exponentials over an
(omega, xi) grid.  Atoms are kept in factored form (an omega phase table
and a xi envelope table), since every atom is their product up to a norm
that depends on xi only; ``atoms`` materializes the full matrix on request.

``SphereDictionary`` holds quasi-uniform unit directions (Fibonacci lattice)
that are searched for sign-symmetric wave-vector groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .modal import AXIAL, OBLIQUE, TANGENTIAL, WaveNumber, WaveVectorGroup, damping_prior, sign_expand


@dataclass(frozen=True, eq=False)
class TemporalDictionary:
    omega: np.ndarray
    xi: np.ndarray
    fs: float
    n_samples: int
    xi0: float

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.fs

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.omega), len(self.xi)

    @property
    def omega_step(self) -> float:
        return float(self.omega[1] - self.omega[0]) if len(self.omega) > 1 else 0.0

    @property
    def log_xi_step(self) -> float:
        """Spacing of the xi grid in natural-log units of |xi|."""
        if len(self.xi) < 2:
            return 0.0
        return float(abs(math.log(self.xi[1] / self.xi[0])))

    @cached_property
    def envelopes(self) -> np.ndarray:
        """Unit-norm damping envelopes, shape (T, n_xi)."""
        env = np.exp(np.outer(self.t, self.xi))
        return env / np.linalg.norm(env, axis=0)

    @cached_property
    def _phases(self) -> np.ndarray:
        return np.exp(-1j * np.outer(self.omega, self.t))

    def atom(self, i: int, j: int) -> np.ndarray:
        """Atom at omega index ``i`` and xi index ``j``."""
        return self.envelopes[:, j] * np.exp(1j * self.omega[i] * self.t)

    @property
    def atoms(self) -> np.ndarray:
        """All atoms as columns, shape (T, n_omega * n_xi); column ``i * n_xi + j``."""
        cols = self.envelopes[:, None, :] * np.conj(self._phases).T[:, :, None]
        return cols.reshape(self.n_samples, -1)

    def correlate(self, block: np.ndarray) -> np.ndarray:
        """Simultaneous score: sum over columns of |<atom, column>|^2, shape (n_omega, n_xi)."""
        block = np.asarray(block)
        if block.ndim == 1:
            block = block[:, None]
        out = np.empty(self.shape)
        for j in range(len(self.xi)):
            c = self._phases @ (self.envelopes[:, j : j + 1] * block)
            out[:, j] = np.einsum("ij,ij->i", c.real, c.real) + np.einsum("ij,ij->i", c.imag, c.imag)
        return out

    def wavenumber(self, i: int, j: int) -> WaveNumber:
        return WaveNumber(self.omega[i], self.xi[j])


def xi_grid(rt60: float, count: int) -> np.ndarray:
    """Log-spaced damping values over [10 xi0, 0.1 xi0], most damped first."""
    xi0 = damping_prior(rt60)
    if count == 1:
        return np.array([xi0])
    return -np.geomspace(10 * abs(xi0), 0.1 * abs(xi0), count)


def build_temporal_dictionary(fs: float, t_len: int, rt60: float, omega_count: int = 512,
                              xi_count: int = 32, band=(20.0, 70.0)) -> TemporalDictionary:
    """Damped-exponential dictionary on a linear omega grid over ``band`` (Hz)."""
    if omega_count < 1 or xi_count < 1:
        raise ValueError("grid sizes must be at least 1")
    f_lo, f_hi = float(band[0]), float(band[1])
    f_lo, f_hi = max(f_lo, 0.0), min(f_hi, fs / 2)
    if not f_hi > f_lo:
        raise ValueError(f"empty analysis band {band!r} for fs={fs}")
    omega = 2 * math.pi * np.linspace(f_lo, f_hi, omega_count)
    if omega_count == 1:
        omega = np.array([math.pi * (f_lo + f_hi)])
    return TemporalDictionary(omega, xi_grid(rt60, xi_count), float(fs), int(t_len),
                              damping_prior(rt60))


def fibonacci_directions(count: int) -> np.ndarray:
    """Golden-angle spiral of ``count`` unit vectors."""
    i = np.arange(count) + 0.5
    z = 1 - 2 * i / count
    r = np.sqrt(1 - z ** 2)
    phi = math.pi * (1 + math.sqrt(5)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def geodesic_nearest_gaps(directions: np.ndarray) -> np.ndarray:
    """Angle from each unit vector to its nearest neighbor."""
    g = np.clip(directions @ directions.T, -1.0, 1.0)
    np.fill_diagonal(g, -np.inf)
    return np.arccos(np.clip(g.max(axis=1), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class SphereDictionary:
    """Sign-symmetric quasi-uniform directions on a sphere of ``radius`` (rad/m).

    ``directions`` holds the unit vectors; ``group_index[g]`` lists the eight
    rows that are the sign images of the ``g``-th positive-octant base
    direction.  ``resolution`` is the largest nearest-neighbor angle (rad).
    """

    directions: np.ndarray
    group_index: np.ndarray
    radius: float
    resolution: float
    mean_gap: float = field(default=0.0)

    @property
    def vectors(self) -> np.ndarray:
        return self.directions * self.radius

    @property
    def base_directions(self) -> np.ndarray:
        return self.directions[self.group_index[:, 0]]

    def with_radius(self, radius: float) -> "SphereDictionary":
        return SphereDictionary(self.directions, self.group_index, float(radius), self.resolution,
                                self.mean_gap)


def sample_sphere(radius: float, point_count: int = 2000) -> SphereDictionary:
    """Fibonacci sphere folded into the positive octant and mirrored to all eight.

    The mirrored set keeps roughly ``point_count`` directions and is exactly
    closed under componentwise sign flips.
    """
    if point_count < 8:
        raise ValueError("need at least 8 sphere points")
    raw = fibonacci_directions(point_count)
    base = raw[np.all(raw > 0, axis=1)]
    directions = np.concatenate([sign_expand(b, (0, 1, 2)) for b in base])
    group_index = np.arange(len(directions)).reshape(-1, 8)
    gaps = geodesic_nearest_gaps(directions)
    return SphereDictionary(directions, group_index, float(radius), float(gaps.max()),
                            float(gaps.mean()))


def _circle_bases(step: float) -> list[tuple[str, np.ndarray]]:
    # quarter circles strictly inside each coordinate plane
    count = max(1, int(math.ceil((math.pi / 2) / step)) - 1)
    angles = np.linspace(0, math.pi / 2, count + 2)[1:-1]
    out = []
    for topology, (a, b) in zip(TANGENTIAL, ((0, 1), (0, 2), (1, 2))):
        for angle in angles:
            v = np.zeros(3)
            v[a], v[b] = math.cos(angle), math.sin(angle)
            out.append((topology, v))
    return out


def build_group_candidates(sphere: SphereDictionary, topology_set=("axial", "tangential", "oblique"),
                           ) -> list[WaveVectorGroup]:
    """Candidate wave-vector groups on the sphere, scaled to its radius.

    ``topology_set`` may contain the families ``"axial"``, ``"tangential"``
    and ``"oblique"``.  Tangential candidates sit on the three coordinate
    great circles with the sphere resolution as angular step.
    """
    families = set(topology_set)
    unknown = families - {"axial", "tangential", "oblique"}
    if unknown:
        raise ValueError(f"unknown topology families {sorted(unknown)}")
    r = sphere.radius
    out: list[WaveVectorGroup] = []
    if "axial" in families:
        for axis, topology in enumerate(AXIAL):
            base = np.zeros(3)
            base[axis] = r
            out.append(WaveVectorGroup.from_base(base, topology))
    if "tangential" in families:
        for topology, base in _circle_bases(sphere.resolution):
            out.append(WaveVectorGroup.from_base(base * r, topology))
    if "oblique" in families:
        for base in sphere.base_directions:
            out.append(WaveVectorGroup(sign_expand(base * r, (0, 1, 2)), OBLIQUE[0]))
    return out


def temporal_factor(wavenumber: WaveNumber, fs: float, t_len: int) -> np.ndarray:
    t = np.arange(t_len) / fs
    return np.exp(wavenumber.pole * t)


def spatial_phases(vectors, positions) -> np.ndarray:
    """Plane-wave phases exp(j k . X), shape (M, V)."""
    return np.exp(1j * np.asarray(positions, dtype=float).reshape(-1, 3) @ np.reshape(vectors, (-1, 3)).T)


def spatio_temporal_atom(wavenumber: WaveNumber, k, positions, fs: float, t_len: int) -> np.ndarray:
    """Non-normalized atom exp((xi + j omega) t) exp(j k . X_m), shape (T, M)."""
    g = temporal_factor(wavenumber, fs, t_len)
    s = spatial_phases(k, positions)[:, 0]
    return np.outer(g, s)
