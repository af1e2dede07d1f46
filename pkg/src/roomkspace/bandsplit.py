"""Zero-phase complementary band split and analytic-signal conversion."""

from __future__ import annotations

import numpy as np
from scipy.signal import hilbert

from .synthesis import MeasurementSet


def raised_cosine_lowpass(freqs, f_cut: float, width: float) -> np.ndarray:
    """Gain 1 below ``f_cut - width/2``, 0 above ``f_cut + width/2``, raised cosine between."""
    freqs = np.asarray(freqs, dtype=float)
    if width <= 0:
        return (freqs <= f_cut).astype(float)
    x = np.clip((freqs - (f_cut - width / 2)) / width, 0.0, 1.0)
    return 0.5 * (1 + np.cos(np.pi * x))


def crossover_gain(freqs, f_p: float, width: float, f_lo: float | None = None) -> np.ndarray:
    """Low-branch gain: low-pass at ``f_p``, optionally times a high-pass at ``f_lo``."""
    gain = raised_cosine_lowpass(freqs, f_p, width)
    if f_lo is not None:
        gain = gain * (1 - raised_cosine_lowpass(freqs, f_lo, width))
    return gain


def band_split(measurements: MeasurementSet, f_p: float = 70.0, transition_width: float = 10.0,
               f_lo: float | None = None) -> tuple[MeasurementSet, MeasurementSet]:
    """Split into low and high measurement sets with ``low + high == input``.

    The low branch is a real, zero-phase gain applied to the DFT of each
    column (circular, no padding).  With ``f_lo`` the low branch is also
    high-passed at ``f_lo``; the content below ``f_lo`` then ends up in the
    high branch so that the split stays complementary.
    """
    nyquist = measurements.fs / 2
    if not f_p + transition_width / 2 < nyquist:
        raise ValueError(f"f_p + transition_width/2 must stay below Nyquist ({nyquist} Hz)")
    if transition_width < 0:
        raise ValueError("transition_width must be non-negative")
    if f_lo is not None and not 0 < f_lo < f_p:
        raise ValueError("need 0 < f_lo < f_p")
    x = np.asarray(measurements.samples, dtype=float)
    n = x.shape[0]
    freqs = np.fft.rfftfreq(n, 1 / measurements.fs)
    gain = crossover_gain(freqs, f_p, transition_width, f_lo)
    low = np.fft.irfft(np.fft.rfft(x, axis=0) * gain[:, None], n=n, axis=0)
    high = x - low
    return measurements.with_samples(low), measurements.with_samples(high)


def analytic_signal(samples) -> np.ndarray:
    """One-sided-spectrum complex signal whose real part is ``samples`` (per column)."""
    return hilbert(np.asarray(samples, dtype=float), axis=0)


def branch_gain(n_samples: int, fs: float, branch: str, f_p: float = 70.0,
                transition_width: float = 10.0, f_lo: float | None = None) -> np.ndarray:
    """Two-sided DFT gain of one branch of :func:`band_split`, for complex inputs.

    ``branch`` is ``"low"``, ``"high"`` or ``"full"``.
    """
    freqs = np.abs(np.fft.fftfreq(n_samples, 1 / fs))
    if branch == "full":
        return np.ones(n_samples)
    low = crossover_gain(freqs, f_p, transition_width, f_lo)
    if branch == "low":
        return low
    if branch == "high":
        return 1 - low
    raise ValueError(f"unknown branch {branch!r}")


def apply_gain(signal, gain) -> np.ndarray:
    """Filter a (complex) signal along axis 0 with a two-sided DFT gain."""
    signal = np.asarray(signal)
    if np.all(gain == 1):
        return signal.astype(complex)
    shape = (-1,) + (1,) * (signal.ndim - 1)
    return np.fft.ifft(np.fft.fft(signal, axis=0) * np.reshape(gain, shape), axis=0)
