"""On-disk formats: measurement bundles, report documents and k-space exports.

A measurement bundle is a directory holding ``metadata.json`` and
``samples.f64``, the T x M sample block as little-endian float64 in
column-major order (one microphone after the other), exactly ``8 T M``
bytes long.

Report documents are JSON.  Complex numbers are ``[re, im]`` pairs and
floats are written with round-trip precision, so ``read(write(r)) == r``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .estimator import EstimationConfig, EstimationReport, ModeEstimate
from .modal import ModeIndex, RoomGeometry, WaveNumber, WaveVectorGroup
from .synthesis import MeasurementSet

BUNDLE_FORMAT = "roomkspace-measurements"
REPORT_FORMAT = "roomkspace-report"
METADATA_FILE = "metadata.json"
SAMPLES_FILE = "samples.f64"


class FormatError(OSError):
    """A file exists but does not follow the expected layout."""


def _version() -> str:
    from . import __version__

    return __version__


# -- measurement bundles -----------------------------------------------------------------------

def write_bundle(directory, measurements: MeasurementSet, duration: float | None = None) -> Path:
    """Write ``measurements`` to ``directory`` (created if needed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    samples = np.asarray(measurements.samples, dtype="<f8")
    n, m = samples.shape
    metadata = {
        "format": BUNDLE_FORMAT,
        "version": 1,
        "fs": float(measurements.fs),
        "n_samples": int(n),
        "n_mics": int(m),
        "duration": float(n / measurements.fs if duration is None else duration),
        "positions": measurements.positions.tolist(),
        "source_position": None if measurements.source_position is None
        else np.asarray(measurements.source_position, dtype=float).tolist(),
        "units": {"fs": "Hz", "duration": "s", "positions": "m", "samples": "Pa"},
        "dtype": "<f8",
        "order": "column-major",
        "samples_file": SAMPLES_FILE,
        "provenance": measurements.provenance,
    }
    (directory / SAMPLES_FILE).write_bytes(samples.tobytes(order="F"))
    (directory / METADATA_FILE).write_text(json.dumps(metadata, indent=2) + "\n")
    return directory


def read_bundle(directory) -> MeasurementSet:
    """Read a bundle written by :func:`write_bundle`; raises :class:`FormatError` on a bad layout."""
    directory = Path(directory)
    try:
        metadata = json.loads((directory / METADATA_FILE).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{directory / METADATA_FILE}: invalid JSON ({exc})") from exc
    if metadata.get("format") != BUNDLE_FORMAT:
        raise FormatError(f"{directory}: not a measurement bundle")
    n, m = int(metadata["n_samples"]), int(metadata["n_mics"])
    raw = (directory / metadata.get("samples_file", SAMPLES_FILE)).read_bytes()
    if len(raw) != 8 * n * m:
        raise FormatError(f"sample block is {len(raw)} bytes, expected 8*{n}*{m} = {8 * n * m}")
    samples = np.frombuffer(raw, dtype="<f8").reshape((n, m), order="F").astype(float)
    positions = np.asarray(metadata["positions"], dtype=float).reshape(-1, 3)
    if len(positions) != m:
        raise FormatError(f"{len(positions)} positions for {m} sample columns")
    source = metadata.get("source_position")
    return MeasurementSet(positions, None if source is None else np.asarray(source, dtype=float),
                          float(metadata["fs"]), samples, None, dict(metadata.get("provenance") or {}))


def read_bundle_metadata(directory) -> dict:
    return json.loads((Path(directory) / METADATA_FILE).read_text())


# -- report documents --------------------------------------------------------------------------

def _complex_pairs(values) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in np.asarray(values, dtype=complex)]


def _mode_to_dict(mode: ModeEstimate) -> dict:
    wn = mode.wavenumber
    return {
        "provenance": mode.provenance,
        "omega": float(wn.omega),
        "frequency_hz": float(wn.frequency),
        "xi": float(wn.xi),
        "topology": mode.group.topology,
        "wave_vectors": mode.group.vectors.tolist(),
        "coefficients": _complex_pairs(mode.coefficients),
        "mode_index": None if mode.mode_index is None else list(mode.mode_index.as_tuple()),
    }


def _mode_from_dict(d: dict) -> ModeEstimate:
    group = WaveVectorGroup(np.asarray(d["wave_vectors"], dtype=float), d["topology"])
    coefficients = np.array([complex(re, im) for re, im in d["coefficients"]], dtype=complex)
    index = None if d.get("mode_index") is None else ModeIndex(*d["mode_index"])
    return ModeEstimate(WaveNumber(float(d["omega"]), float(d["xi"])), group, coefficients,
                        d["provenance"], index)


def report_to_dict(report: EstimationReport) -> dict:
    room = None if report.room is None else {"lx": report.room.lx, "ly": report.room.ly,
                                               "lz": report.room.lz}
    return {
        "format": REPORT_FORMAT,
        "library_version": _version(),
        "room": room,
        "modes": [_mode_to_dict(m) for m in report.modes],
        "residual_history": report.residual_history,
        "diagnostics": report.diagnostics,
        "config": None if report.config is None else report.config.to_dict(),
    }


def report_from_dict(d: dict) -> EstimationReport:
    if d.get("format") != REPORT_FORMAT:
        raise FormatError("not a report document")
    room = None if d.get("room") is None else RoomGeometry(d["room"]["lx"], d["room"]["ly"],
                                                           d["room"]["lz"])
    config = None if d.get("config") is None else EstimationConfig.from_dict(d["config"])
    return EstimationReport(room, [_mode_from_dict(m) for m in d["modes"]],
                            d.get("residual_history", {}), d.get("diagnostics", {}), config)


def dumps_report(report: EstimationReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"


def loads_report(text: str) -> EstimationReport:
    try:
        return report_from_dict(json.loads(text))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed report document: {exc}") from exc


def write_report(path, report: EstimationReport) -> Path:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(report))
    return path


def read_report(path) -> EstimationReport:
    return loads_report(Path(path).read_text())


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, allow_nan=True) + "\n")
    return path


# -- k-space export ----------------------------------------------------------------------------

KSPACE_HEADER = "# mode kx ky kz omega provenance"


def kspace_rows(report: EstimationReport) -> list[tuple[int, float, float, float, float, str]]:
    """One row per wave vector: (mode id, kx, ky, kz, omega, provenance)."""
    rows = []
    for q, mode in enumerate(report.modes):
        for k in mode.group.vectors:
            rows.append((q, float(k[0]), float(k[1]), float(k[2]), float(mode.wavenumber.omega),
                         mode.provenance))
    return rows


def format_kspace(report: EstimationReport) -> str:
    lines = [KSPACE_HEADER]
    lines += [f"{q} {kx!r} {ky!r} {kz!r} {w!r} {p}" for q, kx, ky, kz, w, p in kspace_rows(report)]
    return "\n".join(lines) + "\n"


def write_kspace(path, report: EstimationReport) -> Path:
    path = Path(path)
    path.write_text(format_kspace(report))
    return path


def read_kspace(path) -> list[tuple[int, float, float, float, float, str]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        q, kx, ky, kz, w, p = line.split()
        rows.append((int(q), float(kx), float(ky), float(kz), float(w), p))
    return rows

