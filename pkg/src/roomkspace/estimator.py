"""Joint estimation of room size and low-frequency modal parameters.

Pipeline:

1. split the measurements at ``f_p`` into a low and a high band;
2. low band: greedy loop alternating a simultaneous (omega, xi) grid search,
   a structured search for the sign-symmetric wave-vector group on the
   sphere of radius omega / c, and an orthogonal projection of the residual
   onto every group selected so far;
3. read the room sides off the lowest axial mode on each axis;
4. high band: walk the lattice of the recovered room between ``f_p`` and
   ``f_c``, estimating only the damping of each mode and projecting it out;
5. refit all expansion coefficients jointly on the full-band data.

All atoms are separable (temporal factor times per-microphone plane-wave
phases), so every least-squares problem is assembled from small temporal
and spatial Gram matrices instead of the (T*M)-long vectorized atoms.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .bandsplit import analytic_signal, apply_gain, band_split, branch_gain
from .dictionaries import (
    SphereDictionary,
    TemporalDictionary,
    build_group_candidates,
    build_temporal_dictionary,
    sample_sphere,
    spatial_phases,
    temporal_factor,
    xi_grid,
)
from .modal import (
    AXIAL,
    SPEED_OF_SOUND,
    ModeIndex,
    RoomGeometry,
    WaveNumber,
    WaveVectorGroup,
    band_to_room_range,
    damping_prior,
    enumerate_modes_below,
    mode_count_estimate,
    wave_vector_group,
)
from .synthesis import MeasurementSet

log = logging.getLogger(__name__)

PROVENANCES = ("low-band", "grid-propagated", "ground-truth")


class EstimationError(RuntimeError):
    """Base class for estimator failures."""


class ResidualFloorReached(EstimationError):
    """The residual carries no more usable energy."""


class RankDeficiencyError(EstimationError):
    def __init__(self, message, pairs=()):
        super().__init__(message)
        self.pairs = list(pairs)


class MissingAxialModeError(EstimationError):
    """No axial mode was found for at least one axis.

    ``report`` holds the partial result when raised from the full pipeline.
    """

    def __init__(self, axes, report=None):
        self.axes = tuple(axes)
        self.report = report
        super().__init__(
            "no axial mode found along axis " + ", ".join(self.axes)
            + "; the source may not excite every axial mode"
        )


@dataclass(frozen=True)
class EstimationConfig:
    c: float = SPEED_OF_SOUND
    rt60_prior: float = 1.0
    f_p: float = 70.0
    f_lo: float = 20.0
    f_c: float = 200.0
    n_modes_low: int | None = None
    n_modes_total: int | None = None
    omega_count: int = 512
    xi_count: int = 32
    sphere_points: int = 2000
    transition_width: float = 10.0
    stop_threshold: float = 1e-3
    axial_tolerance_deg: float = 15.0
    ridge: float = 1e-8
    topologies: tuple[str, ...] = ("axial", "tangential", "oblique")
    group_rule: str = "f-test"
    f_threshold: float = 50.0
    fit_floor: float = 1e-3
    refine_cycles: int = 8
    simplify_groups: bool = True
    axial_energy_ratio: float = 0.05
    axial_damping_ratio: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "topologies", tuple(self.topologies))
        if not 0 < self.f_lo < self.f_p < self.f_c:
            raise ValueError(f"need 0 < f_lo < f_p < f_c, got {self.f_lo}, {self.f_p}, {self.f_c}")
        if not (self.c > 0 and self.rt60_prior > 0):
            raise ValueError("c and rt60_prior must be positive")
        if self.omega_count < 3 or self.xi_count < 1 or self.sphere_points < 8:
            raise ValueError("grid densities too small")

    def check_sampling(self, fs: float):
        if self.f_c > fs / 2:
            raise ValueError(f"f_c={self.f_c} Hz exceeds Nyquist {fs / 2} Hz")

    @property
    def analysis_band(self) -> tuple[float, float]:
        """Frequency range (Hz) of the low-band temporal dictionary, crossovers included."""
        half = self.transition_width / 2
        return max(self.f_lo - half, 0.5 * self.f_lo), self.f_p + half

    @property
    def low_budget(self) -> int:
        if self.n_modes_low is not None:
            return int(self.n_modes_low)
        largest = band_to_room_range(self.f_lo, self.f_p, self.c)[1]
        room = RoomGeometry(largest, largest, largest)
        return int(math.ceil(mode_count_estimate(self.f_p, room, self.c)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["topologies"] = list(self.topologies)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ModeEstimate:
    wavenumber: WaveNumber
    group: WaveVectorGroup
    coefficients: np.ndarray
    provenance: str = "low-band"
    mode_index: ModeIndex | None = None

    def __post_init__(self):
        coefficients = np.array(self.coefficients, dtype=complex).reshape(-1)
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)
        if len(coefficients) != self.group.size:
            raise ValueError("coefficient count must equal the wave-vector group size")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __eq__(self, other):
        if not isinstance(other, ModeEstimate):
            return NotImplemented
        return (self.wavenumber == other.wavenumber and self.group == other.group
                and np.array_equal(self.coefficients, other.coefficients)
                and self.provenance == other.provenance and self.mode_index == other.mode_index)


@dataclass(frozen=True, eq=False)
class EstimationReport:
    room: RoomGeometry | None
    modes: tuple[ModeEstimate, ...]
    residual_history: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    config: EstimationConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))

    def by_provenance(self, provenance: str) -> list[ModeEstimate]:
        return [m for m in self.modes if m.provenance == provenance]

    def __eq__(self, other):
        if not isinstance(other, EstimationReport):
            return NotImplemented
        return (self.room == other.room and self.modes == other.modes
                and self.residual_history == other.residual_history
                and self.diagnostics == other.diagnostics and self.config == other.config)


# -- separable least squares -------------------------------------------------------------------

class AtomUnion:
    """Union of selected atom groups fitted to real data.

    Group ``q`` contributes ``Re(g_q(t) * (S_q @ c_q)[m])`` at microphone
    ``m``, with ``g_q`` the (possibly band-filtered) complex temporal factor,
    ``S_q`` the (M, V_q) plane-wave phases and ``c_q`` complex coefficients.
    Real and imaginary parts of the coefficients are solved for jointly,
    with a ridge of ``ridge`` times the normal-matrix diagonal followed by
    one iterated-Tikhonov correction, which keeps the conditioning of the
    ridge but leaves only a second-order bias on exactly spanned data.
    """

    def __init__(self, ridge: float = 1e-8):
        self.ridge = ridge
        self.temporal: list[np.ndarray] = []
        self.spatial: list[np.ndarray] = []

    def __len__(self):
        return len(self.temporal)

    @property
    def sizes(self) -> list[int]:
        return [s.shape[1] for s in self.spatial]

    def add(self, g: np.ndarray, s: np.ndarray):
        self.temporal.append(np.asarray(g, dtype=complex))
        self.spatial.append(np.asarray(s, dtype=complex))

    def pop(self):
        self.temporal.pop()
        self.spatial.pop()

    def replace(self, q: int, g: np.ndarray, s: np.ndarray):
        self.temporal[q] = np.asarray(g, dtype=complex)
        self.spatial[q] = np.asarray(s, dtype=complex)

    def contribution(self, q: int, c: np.ndarray) -> np.ndarray:
        """Real contribution of group ``q`` under the stacked coefficients ``c``."""
        cq = self.split(c)[q]
        return np.outer(self.temporal[q], self.spatial[q] @ cq).real

    def _grams(self) -> tuple[np.ndarray, np.ndarray]:
        gt = np.stack(self.temporal, axis=1)
        sp = np.concatenate(self.spatial, axis=1)
        owner = np.repeat(np.arange(len(self.spatial)), self.sizes)
        hermitian = (gt.conj().T @ gt)[np.ix_(owner, owner)] * (sp.conj().T @ sp)
        symmetric = (gt.T @ gt)[np.ix_(owner, owner)] * (sp.T @ sp)
        return hermitian, symmetric

    def gram(self) -> np.ndarray:
        """Hermitian Gram matrix of the complex atoms."""
        return self._grams()[0]

    def normal_matrix(self) -> np.ndarray:
        """Normal matrix of the real-linear problem in ``[Re c, Im c]``."""
        gh, gs = self._grams()
        rr = 0.5 * np.real(gh + gs)
        ii = 0.5 * np.real(gh - gs)
        ri = 0.5 * np.imag(gh + gs)
        return np.block([[rr, -ri], [-ri.T, ii]])

    def rhs(self, block: np.ndarray) -> np.ndarray:
        """Complex correlations ``<atom, block>`` of every atom."""
        gt = np.stack(self.temporal, axis=1)
        u = gt.conj().T @ block
        return np.concatenate([s.conj().T @ u[q] for q, s in enumerate(self.spatial)])

    def solve(self, block: np.ndarray) -> np.ndarray:
        """Ridge least-squares complex coefficients of the real ``block`` on the union."""
        block = np.asarray(block, dtype=float)
        a = self.normal_matrix()
        diag = np.diag(a).copy()
        if np.any(diag <= 0) or not np.all(np.isfinite(a)):
            raise RankDeficiencyError("zero-norm atom in the selected union")
        b = self.rhs(block)
        rhs = np.concatenate([b.real, b.imag])
        reg = a.copy()
        reg[np.diag_indices_from(reg)] += self.ridge * diag
        try:
            factor = cho_factor(reg)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(f"regularized normal matrix is singular: {exc}") from exc
        p = cho_solve(factor, rhs)
        # one iterated-Tikhonov step removes the first-order ridge bias
        p = p + cho_solve(factor, rhs - a @ p)
        if not np.all(np.isfinite(p)):
            raise RankDeficiencyError("non-finite coefficients; duplicate atoms selected")
        n = len(b)
        return p[:n] + 1j * p[n:]

    def split(self, c: np.ndarray) -> list[np.ndarray]:
        return np.split(np.asarray(c), np.cumsum(self.sizes)[:-1])

    def synthesize_complex(self, c: np.ndarray) -> np.ndarray:
        gt = np.stack(self.temporal, axis=1)
        w = np.stack([s @ cq for s, cq in zip(self.spatial, self.split(c))])
        return gt @ w

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        return self.synthesize_complex(c).real

    def duplicate_pairs(self, tol: float = 1e-10) -> list[tuple[int, int]]:
        g = self.gram()
        d = np.sqrt(np.real(np.diag(g)))
        rho = np.abs(g) / np.outer(d, d)
        i, j = np.nonzero(np.triu(rho > 1 - tol, k=1))
        return list(zip(i.tolist(), j.tolist()))


def _real_block(measurements) -> np.ndarray:
    if isinstance(measurements, MeasurementSet):
        return np.asarray(measurements.samples, dtype=float)
    block = np.asarray(measurements)
    return block.real if np.iscomplexobj(block) else block.astype(float)


def _as_block(measurements) -> np.ndarray:
    if isinstance(measurements, MeasurementSet):
        return analytic_signal(measurements.samples)
    block = np.asarray(measurements)
    return block if np.iscomplexobj(block) else analytic_signal(block)


def update_residual(measurements, union: AtomUnion) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal projection residual of the real ``measurements`` on the selected union.

    Returns ``(residual, coefficients)``; the residual is real.
    """
    if len(union) == 0:
        raise ValueError("at least one selected group is required")
    block = _real_block(measurements)
    c = union.solve(block)
    return block - union.synthesize(c), c


# -- low band ----------------------------------------------------------------------------------

def estimate_wavenumber(residual, dictionary: TemporalDictionary, refine: bool = True,
                        floor: float = 1e-300) -> WaveNumber:
    """Grid point of the damped exponential most correlated with all columns at once.

    Real input is converted to its analytic signal first.  The omega
    coordinate is refined by a parabola through the score at the peak and
    its two neighbors.
    """
    block = _as_block(residual)
    if np.vdot(block, block).real <= floor:
        raise ResidualFloorReached("residual energy below the numerical floor")
    scores = dictionary.correlate(block)
    i, j = np.unravel_index(int(np.argmax(scores)), scores.shape)
    omega = dictionary.omega[i]
    if refine and 0 < i < len(dictionary.omega) - 1:
        left, mid, right = scores[i - 1, j], scores[i, j], scores[i + 1, j]
        denom = left - 2 * mid + right
        if denom < 0:
            offset = float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))
            omega = omega + offset * dictionary.omega_step
    return WaveNumber(omega, dictionary.xi[j])


class CandidateBank:
    """Unit-radius group candidates stacked per group size for batched scoring."""

    def __init__(self, sphere: SphereDictionary, topologies=("axial", "tangential", "oblique")):
        self.sphere = sphere.with_radius(1.0)
        groups = build_group_candidates(self.sphere, topologies)
        self.families: list[tuple[list[str], np.ndarray]] = []
        for size in (2, 4, 8):
            members = [g for g in groups if g.size == size]
            if members:
                self.families.append(([g.topology for g in members],
                                      np.stack([g.vectors for g in members])))

    def __len__(self):
        return sum(len(t) for t, _ in self.families)


@dataclass(frozen=True, eq=False)
class GroupFit:
    score: float
    captured: float
    topology: str
    vectors: np.ndarray
    coefficients: np.ndarray

    @property
    def size(self) -> int:
        return len(self.vectors)


def _fit_spatial(s: np.ndarray, y: np.ndarray, ridge: float):
    """Batched ridge LS of ``y`` (M,) on ``s`` (..., M, V); returns coefficients and captured norm^2."""
    gram = np.einsum("...mv,...mw->...vw", s.conj(), s)
    rhs = np.einsum("...mv,m->...v", s.conj(), y)
    diag = np.real(np.einsum("...vv->...v", gram))
    gram = gram + ridge * diag[..., :, None] * np.eye(gram.shape[-1])
    c = np.linalg.solve(gram, rhs[..., None])[..., 0]
    captured = np.real(np.einsum("...v,...v->...", rhs.conj(), c))
    return c, captured


def _temporal(wavenumber: WaveNumber, fs: float, t_len: int, gain=None) -> np.ndarray:
    g = temporal_factor(wavenumber, fs, t_len)
    return g if gain is None else apply_gain(g, gain)


def score_groups(residual, wavenumber: WaveNumber, positions, fs: float, bank: CandidateBank,
                 c: float = SPEED_OF_SOUND, ridge: float = 1e-8, gain=None,
                 ) -> tuple[list[GroupFit], float]:
    """Fit every candidate group on the sphere of radius omega / c to the residual.

    The analytic residual is first projected on the temporal factor, which
    leaves one complex value per microphone; each group is then a small
    least-squares problem over the microphones.  Returns the fits (smallest
    groups first) and the energy of the temporal projection, which bounds
    every captured energy.  ``score`` is captured energy per atom.
    """
    block = _as_block(residual)
    g = _temporal(wavenumber, fs, block.shape[0], gain)
    g_energy = float(np.vdot(g, g).real)
    y = (g.conj() @ block) / g_energy
    radius = wavenumber.omega / c
    positions = np.asarray(positions, dtype=float)
    fits = []
    for topologies, unit in bank.families:
        vectors = unit * radius
        s = np.exp(1j * np.einsum("md,gvd->gmv", positions, vectors))
        coef, captured = _fit_spatial(s, y, ridge)
        captured = g_energy * captured
        size = unit.shape[1]
        fits.extend(GroupFit(float(e) / size, float(e), t, v, cf)
                    for e, t, v, cf in zip(captured, topologies, vectors, coef))
    return fits, g_energy * float(np.vdot(y, y).real)


def select_group(fits: list[GroupFit], total: float, n_mics: int, rule: str = "f-test",
                 f_threshold: float = 50.0, fit_floor: float = 1e-3) -> GroupFit:
    """Pick a group from scored candidates.

    ``"per-atom"``: largest captured energy per atom, ties to fewer atoms.
    ``"f-test"``: best fit of each size, then grow from the smallest size
    while a nested-model F statistic on the leftover energy exceeds
    ``f_threshold`` (complex observations per microphone, complex
    coefficients per atom).  Leftover energies are floored at ``fit_floor``
    times ``total`` so that fits at the level of model mismatch count as exact.
    """
    if rule == "per-atom":
        return max(enumerate(fits), key=lambda kf: (kf[1].score, -kf[0]))[1]
    if rule != "f-test":
        raise ValueError(f"unknown group selection rule {rule!r}")
    best: dict[int, GroupFit] = {}
    for fit in fits:
        if fit.size not in best or fit.captured > best[fit.size].captured:
            best[fit.size] = fit
    floor = fit_floor * max(total, 1e-300)
    sizes = sorted(best)
    current = best[sizes[0]]
    for size in sizes[1:]:
        if n_mics <= size:
            break
        candidate = best[size]
        rss_small = max(total - current.captured, floor)
        rss_big = max(total - candidate.captured, floor)
        stat = ((rss_small - rss_big) / (size - current.size)) / (rss_big / (n_mics - size))
        if stat > f_threshold:
            current = candidate
    return current


def estimate_wavevectors(residual, wavenumber: WaveNumber, positions, fs: float,
                         sphere: SphereDictionary | CandidateBank | int = 2000,
                         c: float = SPEED_OF_SOUND, ridge: float = 1e-8, gain=None,
                         rule: str = "f-test", f_threshold: float = 50.0,
                         fit_floor: float = 1e-3) -> tuple[WaveVectorGroup, np.ndarray]:
    """Sign-symmetric group on the sphere of radius omega / c best aligned with the residual.

    Returns the group and its fitted coefficients (zeros for a zero residual).
    """
    bank = sphere if isinstance(sphere, CandidateBank) else CandidateBank(
        sphere if isinstance(sphere, SphereDictionary) else sample_sphere(1.0, int(sphere)))
    fits, total = score_groups(residual, wavenumber, positions, fs, bank, c, ridge, gain)
    n_mics = np.asarray(positions).reshape(-1, 3).shape[0]
    fit = select_group(fits, total, n_mics, rule, f_threshold, fit_floor)
    coef = fit.coefficients if fit.captured > 0 else np.zeros(fit.size, dtype=complex)
    return WaveVectorGroup(fit.vectors, fit.topology), coef


def axis_angle(group: WaveVectorGroup, axis: int) -> float:
    """Angle in degrees between the group's base direction and a coordinate axis."""
    return math.degrees(math.acos(min(1.0, float(group.direction[axis]))))


def mode_energies(modes, positions, fs: float, t_len: int) -> np.ndarray:
    """Energy of each mode's real contribution at ``positions`` over ``t_len`` samples."""
    return np.array([_energy(reconstruct([m], positions, fs, t_len)) for m in modes])


def _aligned(low_modes, axis: int, config: EstimationConfig, energies=None) -> list[int]:
    xi_limit = config.axial_damping_ratio * abs(damping_prior(config.rt60_prior))
    idx = [k for k, m in enumerate(low_modes)
           if axis_angle(m.group, axis) <= config.axial_tolerance_deg and abs(m.wavenumber.xi) <= xi_limit]
    if energies is None or not idx:
        return idx
    strongest = max(energies[k] for k in idx)
    return [k for k in idx if energies[k] >= config.axial_energy_ratio * strongest]


def recover_room_size(low_modes, config: EstimationConfig | None = None,
                      energies=None) -> RoomGeometry:
    """Side lengths pi c / omega from the lowest axial-aligned mode on each axis.

    Modes damped more than ``config.axial_damping_ratio`` times the prior
    are not candidates: short atoms fit onset transients, not resonances.
    With ``energies`` (one per mode), aligned modes weaker than
    ``config.axial_energy_ratio`` times the strongest aligned mode on the
    same axis are ignored.
    """
    config = config or EstimationConfig()
    lengths, missing = [], []
    for axis, name in enumerate("xyz"):
        aligned = _aligned(low_modes, axis, config, energies)
        if not aligned:
            missing.append(name)
            continue
        fundamental = min((low_modes[k] for k in aligned), key=lambda m: m.wavenumber.omega)
        lengths.append(math.pi * config.c / fundamental.wavenumber.omega)
    if missing:
        raise MissingAxialModeError(missing)
    return RoomGeometry(*lengths)


def _axial_record(low_modes, config: EstimationConfig, energies=None) -> dict:
    record = {}
    for axis, name in enumerate("xyz"):
        aligned = _aligned(low_modes, axis, config, energies)
        if aligned:
            k = min(aligned, key=lambda i: low_modes[i].wavenumber.omega)
            m = low_modes[k]
            record[name] = {"mode": k, "frequency_hz": m.wavenumber.frequency,
                            "angle_deg": axis_angle(m.group, axis), "topology": m.group.topology}
        else:
            record[name] = None
    return record


# -- high band ---------------------------------------------------------------------------------

def grid_propagate(room: RoomGeometry, f_p: float, f_c: float, c: float = SPEED_OF_SOUND,
                   ) -> list[tuple[ModeIndex, float, WaveVectorGroup]]:
    """Lattice modes of ``room`` with frequency in ``(f_p, f_c]``, ascending."""
    if f_c <= f_p:
        return []
    return [(n, omega, wave_vector_group(n, room))
            for n, omega in enumerate_modes_below(f_c, room, c, f_min=f_p)]


def estimate_damping_high(residual, omega: float, group: WaveVectorGroup, xi_values, positions,
                          fs: float, xi0: float | None = None, ridge: float = 1e-8,
                          gain=None) -> WaveNumber:
    """Damping on a 1D grid maximizing the group fit at fixed omega and wave vectors.

    Equal scores (e.g. an all-zero residual) resolve to the grid value
    closest to ``xi0`` in log scale; ``xi0`` defaults to the grid's
    geometric center.
    """
    block = _as_block(residual)
    xi_values = np.asarray(xi_values, dtype=float)
    if xi0 is None:
        xi0 = -math.sqrt(xi_values.min() * xi_values.max())
    t = np.arange(block.shape[0]) / fs
    g = np.exp(np.outer(t, xi_values + 1j * omega))
    if gain is not None:
        g = apply_gain(g, gain)
    energy = np.einsum("tk,tk->k", g.conj(), g).real
    y = (g.conj().T @ block) / energy[:, None]
    s = spatial_phases(group.vectors, positions)
    gram = s.conj().T @ s
    gram = gram + ridge * np.diag(np.real(np.diag(gram)))
    rhs = y @ s.conj()
    c = np.linalg.solve(gram, rhs.T).T
    scores = energy * np.real(np.einsum("kv,kv->k", rhs.conj(), c))
    top = scores.max()
    if top <= 0:
        ties = np.arange(len(xi_values))
    else:
        ties = np.flatnonzero(scores >= top * (1 - 1e-12))
    best = ties[np.argmin(np.abs(np.log(xi_values[ties] / xi0)))]
    return WaveNumber(omega, xi_values[best])


# -- joint refit -------------------------------------------------------------------------------

def mode_union(modes, positions, fs: float, t_len: int, ridge: float = 1e-8,
               gain=None) -> AtomUnion:
    union = AtomUnion(ridge)
    for m in modes:
        union.add(_temporal(m.wavenumber, fs, t_len, gain),
                  spatial_phases(m.group.vectors, positions))
    return union


def least_squares_coefficients(measurements, modes, positions=None, fs: float | None = None,
                               ridge: float = 1e-8, duplicate_tol: float = 1e-10,
                               ) -> list[ModeEstimate]:
    """Joint ridge least squares of every mode's atoms against the full-band block.

    ``measurements`` is a :class:`MeasurementSet` or a real (T, M) block
    together with ``positions`` and ``fs``.  Raises
    :class:`RankDeficiencyError` naming the mode pairs whose atoms coincide.
    """
    if isinstance(measurements, MeasurementSet):
        positions = measurements.positions if positions is None else positions
        fs = measurements.fs if fs is None else fs
    modes = list(modes)
    if not modes:
        return []
    block = _real_block(measurements)
    union = mode_union(modes, positions, fs, block.shape[0], ridge)
    pairs = union.duplicate_pairs(duplicate_tol)
    if pairs:
        owner = np.repeat(np.arange(len(modes)), union.sizes)
        named = sorted({(int(owner[i]), int(owner[j])) for i, j in pairs})
        raise RankDeficiencyError(f"collinear atoms between modes {named}", named)
    c = union.solve(block)
    return [replace(m, coefficients=cq) for m, cq in zip(modes, union.split(c))]


def reconstruct(modes, positions, fs: float, t_len: int, analytic: bool = False) -> np.ndarray:
    """Modal sum at ``positions``, shape (T, M); real pressure unless ``analytic``."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    out = np.zeros((t_len, len(positions)), dtype=complex)
    for m in modes:
        spatial = spatial_phases(m.group.vectors, positions) @ m.coefficients
        out += np.outer(temporal_factor(m.wavenumber, fs, t_len), spatial)
    return out if analytic else out.real


def refine_continuous(block, union: AtomUnion, q: int, mode: ModeEstimate, positions, fs: float,
                      c: float, gain=None, omega_span: float = 1.0, xi_bounds=None,
                      ) -> tuple[ModeEstimate, float]:
    """Polish one mode's (omega, xi) off the grid by minimizing the joint residual.

    The wave-vector directions are kept and rescaled to the sphere of
    radius omega / c.  ``omega_span`` bounds the search (rad/s either side)
    and ``xi_bounds`` the damping.  The union is left holding the polished
    atoms.  Returns the mode and the residual energy.
    """
    t_len = block.shape[0]
    unit = mode.group.vectors / mode.group.norm
    omega0, xi0 = mode.wavenumber.omega, mode.wavenumber.xi
    lo_xi, hi_xi = xi_bounds if xi_bounds is not None else (10 * xi0, 0.1 * xi0)

    def atoms(p):
        wn = WaveNumber(p[0], -math.exp(p[1]))
        return wn, _temporal(wn, fs, t_len, gain), spatial_phases(unit * (wn.omega / c), positions)

    def cost(p):
        _, g, s = atoms(p)
        union.replace(q, g, s)
        r, _ = update_residual(block, union)
        return _energy(r)

    start = np.array([omega0, math.log(-xi0)])
    e_start = cost(start)
    bounds = [(omega0 - omega_span, omega0 + omega_span),
              (math.log(-hi_xi), math.log(-lo_xi))]
    result = minimize(cost, start, method="Nelder-Mead", bounds=bounds,
                      options={"xatol": 1e-4, "fatol": 1e-10 * e_start, "maxfev": 200})
    best = result.x if result.fun < e_start else start
    wn, g, s = atoms(best)
    union.replace(q, g, s)
    group = WaveVectorGroup(unit * (wn.omega / c), mode.group.topology)
    return replace(mode, wavenumber=wn, group=group), min(result.fun, e_start)


def refine_cyclic(block, union: AtomUnion, modes: list[ModeEstimate], dictionary: TemporalDictionary,
                  bank: CandidateBank, positions, config: EstimationConfig, gain=None,
                  max_cycles: int = 3) -> tuple[list[ModeEstimate], np.ndarray, int]:
    """Re-estimate each selected mode against the residual of all the others.

    Each mode is re-picked on the grids, polished with
    :func:`refine_continuous`, and kept only when the joint residual drops.
    Cycles stop early once a full pass changes nothing.  Returns the modes,
    the residual and the number of replacements made.
    """
    fs, t_len = dictionary.fs, dictionary.n_samples
    span = 2 * dictionary.omega_step
    xi_bounds = (dictionary.xi.min(), dictionary.xi.max())
    residual, c = update_residual(block, union)
    energy = _energy(residual)
    changed_total = 0
    for _ in range(max_cycles):
        changed = 0
        for q in range(len(modes)):
            partial = residual + union.contribution(q, c)
            try:
                wavenumber = estimate_wavenumber(partial, dictionary, floor=0.0)
            except ResidualFloorReached:
                continue
            group, _ = estimate_wavevectors(partial, wavenumber, positions, fs, bank, config.c,
                                            config.ridge, gain, config.group_rule,
                                            config.f_threshold, config.fit_floor)
            old = modes[q]
            g_old, s_old = union.temporal[q], union.spatial[q]
            union.replace(q, _temporal(wavenumber, fs, t_len, gain), spatial_phases(group.vectors, positions))
            trial = ModeEstimate(wavenumber, group, np.zeros(group.size), old.provenance)
            trial, new_energy = refine_continuous(block, union, q, trial, positions, fs, config.c,
                                                  gain, span, xi_bounds)
            if new_energy < energy * (1 - 1e-6):
                modes[q] = trial
                residual, c = update_residual(block, union)
                energy = _energy(residual)
                changed += 1
            else:
                union.replace(q, g_old, s_old)
        changed_total += changed
        if not changed:
            break
    modes = [replace(m, coefficients=cq) for m, cq in zip(modes, union.split(c))]
    return modes, residual, changed_total


def _nested_f(rss_small: float, rss_big: float, extra: int, dof: int) -> float:
    return ((rss_small - rss_big) / extra) / (rss_big / max(dof, 1))


def _drop_and_polish(block, union: AtomUnion, modes, keep: int, drop: int, positions, fs, config,
                     gain, omega_span, xi_bounds):
    trial_union = AtomUnion(union.ridge)
    order = [q for q in range(len(modes)) if q != drop]
    for q in order:
        trial_union.add(union.temporal[q], union.spatial[q])
    trial, energy = refine_continuous(block, trial_union, order.index(keep), modes[keep], positions,
                                      fs, config.c, gain, omega_span, xi_bounds)
    return [trial if q == keep else modes[q] for q in order], trial_union, energy


def merge_split_modes(block, union: AtomUnion, modes: list[ModeEstimate], positions, fs: float,
                      config: EstimationConfig, gain=None, omega_span: float = 1.0, xi_bounds=None,
                      ) -> tuple[list[ModeEstimate], np.ndarray, int]:
    """Merge pairs of same-topology modes closer than the prior modal bandwidth.

    A single resonance is sometimes shared between two neighbouring atoms.
    Each member of such a pair is dropped in turn and the other polished;
    the better of the two is kept unless the nested F statistic of the
    joint residuals exceeds ``config.f_threshold``.  Returns the modes, the
    residual and the number of merges.
    """
    n_mics = block.shape[1]
    floor = config.fit_floor * _energy(block)
    width = 2 * abs(damping_prior(config.rt60_prior))
    residual, c = update_residual(block, union)
    energy = _energy(residual)
    merges = 0
    while True:
        pairs = sorted(
            (abs(a.wavenumber.omega - b.wavenumber.omega), i, j)
            for i, a in enumerate(modes) for j, b in enumerate(modes[:i])
            if a.group.topology == b.group.topology
            and abs(a.wavenumber.omega - b.wavenumber.omega) < width)
        merged = False
        for _, i, j in pairs:
            # the shared resonance may sit anywhere between the two atoms
            span = omega_span + abs(modes[i].wavenumber.omega - modes[j].wavenumber.omega)
            trials = [_drop_and_polish(block, union, modes, keep, drop, positions, fs, config, gain,
                                       span, xi_bounds) for keep, drop in ((i, j), (j, i))]
            new_modes, new_union, e_small = min(trials, key=lambda t: t[2])
            extra = modes[i].group.size
            stat = _nested_f(max(e_small, floor), max(energy, floor), extra,
                             n_mics - 2 * extra)
            log.debug("merge %.3f Hz and %.3f Hz: F = %.3g", modes[i].wavenumber.frequency,
                      modes[j].wavenumber.frequency, stat)
            if stat > config.f_threshold:
                continue
            modes = new_modes
            union.temporal, union.spatial = new_union.temporal, new_union.spatial
            residual, c = update_residual(block, union)
            energy = _energy(residual)
            merges += 1
            merged = True
            break
        if not merged:
            break
    modes = [replace(m, coefficients=cq) for m, cq in zip(modes, union.split(c))]
    return modes, residual, merges


def _reduced_group(group: WaveVectorGroup) -> WaveVectorGroup | None:
    """Group with the smallest nonzero base component dropped, same norm."""
    base = group.base.copy()
    nonzero = np.flatnonzero(base)
    if len(nonzero) < 2:
        return None
    base[nonzero[np.argmin(base[nonzero])]] = 0.0
    return WaveVectorGroup.from_base(base * (group.norm / np.linalg.norm(base)))


def simplify_groups(block, union: AtomUnion, modes: list[ModeEstimate], positions, fs: float,
                    config: EstimationConfig, gain=None, omega_span: float = 1.0, xi_bounds=None,
                    ) -> tuple[list[ModeEstimate], np.ndarray, int]:
    """Replace groups by their smaller-family neighbours when the extra atoms are not significant.

    For each non-axial mode the smallest wave-vector component is dropped,
    the mode is polished, and the reduction is kept unless the nested F
    statistic of the joint residuals (per microphone, floored like
    :func:`select_group`) exceeds ``config.f_threshold``.  Returns the
    modes, the residual and the number of reductions.
    """
    n_mics = block.shape[1]
    floor = config.fit_floor * _energy(block)
    residual, c = update_residual(block, union)
    energy = _energy(residual)
    reductions = 0
    for q in range(len(modes)):
        while (group := _reduced_group(modes[q].group)) is not None:
            big = modes[q].group.size
            if n_mics <= big:
                break
            g_old, s_old = union.temporal[q], union.spatial[q]
            union.replace(q, g_old, spatial_phases(group.vectors, positions))
            trial = replace(modes[q], group=group, coefficients=np.zeros(group.size))
            trial, e_small = refine_continuous(block, union, q, trial, positions, fs, config.c,
                                               gain, omega_span, xi_bounds)
            stat = _nested_f(max(e_small, floor), max(energy, floor), big - group.size, n_mics - big)
            log.debug("reduce %s at %.3f Hz to %s: F = %.3g", modes[q].group.topology,
                      modes[q].wavenumber.frequency, group.topology, stat)
            if stat > config.f_threshold:
                union.replace(q, g_old, s_old)
                break
            modes[q] = trial
            residual, c = update_residual(block, union)
            energy = _energy(residual)
            reductions += 1
    modes = [replace(m, coefficients=cq) for m, cq in zip(modes, union.split(c))]
    return modes, residual, reductions


# -- pipeline ----------------------------------------------------------------------------------

def _check_geometry(positions):
    positions = np.asarray(positions, dtype=float)
    if len(positions) < 4 or np.linalg.matrix_rank(positions - positions.mean(axis=0), tol=1e-9) < 3:
        raise ValueError("need at least 4 non-coplanar microphones to identify 3D wave vectors")


def _match_to_lattice(modes, room: RoomGeometry, f_max: float, c: float) -> list[dict]:
    lattice = enumerate_modes_below(f_max, room, c)
    out = []
    for m in modes:
        if not lattice:
            out.append({"index": None, "distance_hz": None, "angle_deg": None})
            continue
        n, omega = min(lattice, key=lambda e: abs(e[1] - m.wavenumber.omega))
        predicted = wave_vector_group(n, room)
        angle = math.degrees(math.acos(min(1.0, float(predicted.direction @ m.group.direction))))
        out.append({"index": n, "distance_hz": abs(omega - m.wavenumber.omega) / (2 * math.pi),
                    "angle_deg": angle})
    return out


def _assert_non_increasing(history: list[float], stage: str):
    if len(history) > 1 and history[-1] > history[-2] * (1 + 1e-9) + 1e-300:
        raise EstimationError(f"{stage} residual increased: {history[-2]!r} -> {history[-1]!r}")


def _energy(block) -> float:
    return float(np.vdot(block, block).real)


def estimate_room_and_modes(measurements: MeasurementSet, config: EstimationConfig | None = None,
                            ) -> EstimationReport:
    """Full pipeline from a measurement set to room geometry and modal parameters.

    Raises :class:`MissingAxialModeError` (with ``.report`` set to the
    partial low-band result) when an axis has no axial mode.
    """
    config = config or EstimationConfig()
    config.check_sampling(measurements.fs)
    _check_geometry(measurements.positions)
    fs, positions, t_len = measurements.fs, measurements.positions, measurements.n_samples
    n_mics = measurements.n_mics

    low, high = band_split(measurements, config.f_p, config.transition_width, config.f_lo)
    gain_low = branch_gain(t_len, fs, "low", config.f_p, config.transition_width, config.f_lo)
    gain_high = 1 - gain_low

    dictionary = build_temporal_dictionary(fs, t_len, config.rt60_prior, config.omega_count,
                                           config.xi_count, config.analysis_band)
    bank = CandidateBank(sample_sphere(1.0, config.sphere_points), config.topologies)

    # low band
    y_low = np.asarray(low.samples, dtype=float)
    e0 = _energy(y_low)
    history = {"low": [math.sqrt(e0)], "high": []}
    low_modes: list[ModeEstimate] = []
    union = AtomUnion(config.ridge)
    grid_picks: list[tuple[WaveNumber, WaveVectorGroup]] = []
    residual = y_low
    stop_reason = "budget"
    for _ in range(config.low_budget):
        if e0 == 0:
            stop_reason = "zero input"
            break
        try:
            wavenumber = estimate_wavenumber(residual, dictionary, floor=1e-24 * e0)
        except ResidualFloorReached:
            stop_reason = "residual floor"
            break
        group, _ = estimate_wavevectors(residual, wavenumber, positions, fs, bank, config.c,
                                        config.ridge, gain_low, config.group_rule,
                                        config.f_threshold, config.fit_floor)
        if any(g == (wavenumber, group) for g in grid_picks):
            stop_reason = "duplicate selection"
            break
        grid_picks.append((wavenumber, group))
        union.add(_temporal(wavenumber, fs, t_len, gain_low), spatial_phases(group.vectors, positions))
        picked = ModeEstimate(wavenumber, group, np.zeros(group.size))
        picked, _ = refine_continuous(y_low, union, len(union) - 1, picked, positions, fs, config.c,
                                      gain_low, 2 * dictionary.omega_step,
                                      (dictionary.xi.min(), dictionary.xi.max()))
        new_residual, c = update_residual(y_low, union)
        energy = _energy(new_residual)
        if (history["low"][-1] ** 2 - energy) / e0 < config.stop_threshold:
            union.pop()
            stop_reason = "residual decrease below threshold"
            break
        residual = new_residual
        candidates = low_modes + [picked]
        low_modes = [replace(m, coefficients=cq) for m, cq in zip(candidates, union.split(c))]
        history["low"].append(math.sqrt(energy))
        _assert_non_increasing(history["low"], "low-band")

    refinements = 0
    if low_modes and config.refine_cycles:
        low_modes, residual, refinements = refine_cyclic(y_low, union, low_modes, dictionary, bank,
                                                         positions, config, gain_low,
                                                         config.refine_cycles)
        history["low"].append(math.sqrt(_energy(residual)))
        _assert_non_increasing(history["low"], "low-band")

    merges = reductions = 0
    if low_modes and config.simplify_groups:
        polish = (2 * dictionary.omega_step, (dictionary.xi.min(), dictionary.xi.max()))
        while True:
            low_modes, residual, reduced = simplify_groups(y_low, union, low_modes, positions, fs,
                                                           config, gain_low, *polish)
            low_modes, residual, merged = merge_split_modes(y_low, union, low_modes, positions, fs,
                                                            config, gain_low, *polish)
            reductions, merges = reductions + reduced, merges + merged
            if not (reduced or merged):
                break

    energies = mode_energies(low_modes, positions, fs, t_len)
    diagnostics = {"low_stop_reason": stop_reason, "low_refinements": refinements,
                   "low_merges": merges, "low_group_reductions": reductions,
                   "low_final_residual": math.sqrt(_energy(residual)), "low_budget": config.low_budget,
                   "omega_step_hz": dictionary.omega_step / (2 * math.pi),
                   "log_xi_step": dictionary.log_xi_step,
                   "sphere_resolution_deg": math.degrees(bank.sphere.resolution),
                   "ridge": config.ridge,
                   "axial_modes": _axial_record(low_modes, config, energies),
                   "low_mode_energies": energies.tolist()}

    try:
        room = recover_room_size(low_modes, config, energies)
    except MissingAxialModeError as exc:
        partial = EstimationReport(None, low_modes, history, diagnostics, config)
        raise MissingAxialModeError(exc.axes, partial) from None

    matches = _match_to_lattice(low_modes, room, config.analysis_band[1] + config.transition_width,
                                config.c)
    low_modes = [replace(m, mode_index=match["index"]) for m, match in zip(low_modes, matches)]
    diagnostics["low_grid_match"] = [
        {"index": None if d["index"] is None else list(d["index"].as_tuple()),
         "distance_hz": d["distance_hz"], "angle_deg": d["angle_deg"]} for d in matches]
    lattice_low = len(enumerate_modes_below(config.f_p, room, config.c))
    if len(low_modes) > lattice_low:
        log.warning("%d low-band modes exceed the %d lattice modes below f_p", len(low_modes),
                    lattice_low)

    # high band
    claimed = {m.mode_index for m in low_modes if m.mode_index is not None}
    propagated = [p for p in grid_propagate(room, config.f_p, config.f_c, config.c)
                  if p[0] not in claimed]
    if config.n_modes_total is not None:
        propagated = propagated[: max(0, config.n_modes_total - len(low_modes))]
    xis = xi_grid(config.rt60_prior, config.xi_count)
    xi0 = damping_prior(config.rt60_prior)
    y_high = np.asarray(high.samples, dtype=float)
    high_modes: list[ModeEstimate] = []
    union_h = AtomUnion(config.ridge)
    residual = y_high
    history["high"].append(math.sqrt(_energy(y_high)))
    for index, omega, group in propagated:
        wavenumber = estimate_damping_high(residual, omega, group, xis, positions, fs, xi0,
                                           config.ridge, gain_high)
        union_h.add(_temporal(wavenumber, fs, t_len, gain_high),
                    spatial_phases(group.vectors, positions))
        residual, _ = update_residual(y_high, union_h)
        high_modes.append(ModeEstimate(wavenumber, group, np.zeros(group.size), "grid-propagated",
                                       index))
        history["high"].append(math.sqrt(_energy(residual)))
        _assert_non_increasing(history["high"], "high-band")
    diagnostics["skipped_propagated"] = [list(n.as_tuple()) for n in sorted(claimed)]

    modes = least_squares_coefficients(measurements.samples, low_modes + high_modes, positions,
                                       fs, config.ridge)
    return EstimationReport(room, modes, history, diagnostics, config)
