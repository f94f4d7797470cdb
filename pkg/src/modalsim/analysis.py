"""Signal analysis: STFT, LPC spectral envelopes, Bark-scale sampling, and the
modal transfer-function magnitude.

The Bark map is the Traunmueller variant z = 26.81 f / (1960 + f) - 0.53,
chosen because it has a closed-form inverse (needed to lay out frequency
grids that are uniform in Bark).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import get_window

from .integrators import FtmCoeffs


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude frames [time][frequency] with their bin frequencies."""

    magnitude: np.ndarray
    frequencies: np.ndarray
    hop: int
    window: str
    window_length: int
    rate: float

    @property
    def n_frames(self) -> int:
        return self.magnitude.shape[0]

    def to_csv(self, path) -> None:
        header = f"rate={self.rate},window={self.window}{self.window_length},hop={self.hop}"
        np.savetxt(path, self.magnitude, delimiter=",", header=header, fmt="%.17g")


def frame_signal(x: np.ndarray, window_length: int, hop: int):
    """Centered frames with reflect padding; returns (frames, pad_index_map).

    The index map sends each padded sample back to its source sample, which is
    what the adjoint of the padding needs.
    """
    n = len(x)
    pad = window_length // 2
    idx_map = np.pad(np.arange(n), pad, mode="reflect")
    xp = x[idx_map]
    n_frames = (len(xp) - window_length) // hop + 1
    starts = np.arange(n_frames) * hop
    frames = xp[starts[:, None] + np.arange(window_length)[None, :]]
    return frames, idx_map, starts


def stft(signal: np.ndarray, rate: float, window_length: int = 1024, hop: int = 256,
         window: str = "hann") -> Spectrogram:
    """Magnitude STFT with a periodic window, centered frames, reflect padding."""
    x = np.asarray(signal, dtype=float)
    if window_length < hop:
        raise ValueError("window length must be >= hop")
    if len(x) < window_length:
        raise ValueError(
            f"signal too short: {len(x)} samples < window length {window_length}"
        )
    win = get_window(window, window_length, fftbins=True)
    frames, _, _ = frame_signal(x, window_length, hop)
    Z = np.fft.rfft(frames * win[None, :], axis=1)
    freqs = np.fft.rfftfreq(window_length, d=1.0 / rate)
    return Spectrogram(
        magnitude=np.abs(Z), frequencies=freqs, hop=hop, window=window,
        window_length=window_length, rate=rate,
    )


# --- LPC ---------------------------------------------------------------------

@dataclass(frozen=True)
class LpcModel:
    """All-pole envelope model: A(z) = 1 + sum_k a_k z^-k, magnitude gain/|A|."""

    order: int
    coeffs: np.ndarray  # a_1 .. a_p
    gain: float
    reflections: np.ndarray = None

    def __post_init__(self):
        if self.order < 0 or len(self.coeffs) != self.order:
            raise ValueError("coefficient count must equal the model order")
        if self.reflections is None:
            object.__setattr__(self, "reflections", np.zeros(self.order))


def lpc(signal: np.ndarray, order: int) -> LpcModel:
    """Autocorrelation-method LPC via the Levinson-Durbin recursion.

    Returns prediction-error filter coefficients (sign convention: an AR(1)
    process x_n = 0.9 x_{n-1} + e_n estimates a_1 = -0.9) and the residual
    gain sqrt(E_p).
    """
    x = np.asarray(signal, dtype=float)
    if order < 1:
        raise ValueError("order must be >= 1")
    if order >= len(x):
        raise ValueError("order must be smaller than the signal length")
    # biased autocorrelation keeps the normal equations positive semi-definite
    r = np.empty(order + 1)
    for k in range(order + 1):
        r[k] = x[: len(x) - k] @ x[k:] / len(x)
    if r[0] <= 0.0:
        raise ValueError("singular autocorrelation: signal has no energy")

    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0]
    refl = np.zeros(order)
    for i in range(1, order + 1):
        acc = r[i] + a[1:i] @ r[1:i][::-1]
        k = -acc / err
        refl[i - 1] = k
        prev = a[1:i].copy()
        a[1:i] = prev + k * prev[::-1]
        a[i] = k
        err *= 1.0 - k * k
        if err <= 0.0:
            raise ValueError("Levinson recursion lost positive definiteness")
    return LpcModel(order=order, coeffs=a[1:].copy(), gain=float(np.sqrt(err)),
                    reflections=refl)


def lpc_envelope_at(model: LpcModel, freqs: Sequence[float], rate: float) -> np.ndarray:
    """Envelope magnitude gain / |A(e^{i omega T})| at the given frequencies (Hz)."""
    f = np.asarray(freqs, dtype=float)
    if np.any(f < 0) or np.any(f > rate / 2):
        raise ValueError("frequencies must lie within [0, Nyquist]")
    w = 2.0 * np.pi * f / rate
    k = np.arange(1, model.order + 1)
    A = 1.0 + np.exp(-1j * np.outer(w, k)) @ model.coeffs
    return model.gain / np.abs(A)


# --- Bark-scale grid -----------------------------------------------------------

def hz_to_bark(f):
    return 26.81 * np.asarray(f, dtype=float) / (1960.0 + np.asarray(f, dtype=float)) - 0.53


def bark_to_hz(z):
    z = np.asarray(z, dtype=float)
    return 1960.0 * (z + 0.53) / (26.28 - z)


def bark_grid(n_points: int, f_max: float, rate: float, f_min: float = 20.0) -> np.ndarray:
    """n frequencies uniformly spaced in Bark from f_min (20 Hz) to f_max, in Hz."""
    if n_points < 2:
        raise ValueError("need at least two grid points")
    if f_max > rate / 2:
        raise ValueError("f_max must not exceed the Nyquist frequency")
    if f_max <= f_min:
        raise ValueError("f_max must exceed the 20 Hz lower edge")
    z = np.linspace(hz_to_bark(f_min), hz_to_bark(f_max), n_points)
    f = bark_to_hz(z)
    f[0], f[-1] = f_min, f_max  # pin the endpoints exactly
    return f


# --- transfer-function magnitude ------------------------------------------------

def tf_magnitude(coeffs: FtmCoeffs, weights: np.ndarray, freqs: Sequence[float],
                 rate: float) -> np.ndarray:
    """|sum_mu w_mu (b1 z + b2) / (z^2 + a1 z + a2)| at z = e^{i 2 pi f / rate}.

    The modal responses are summed as complex quantities before taking the
    magnitude, matching the parallel-resonator structure.
    """
    f = np.asarray(freqs, dtype=float)
    if np.any(f <= 0) or np.any(f >= rate / 2):
        raise ValueError("frequencies must lie strictly inside (0, Nyquist)")
    z = np.exp(2j * np.pi * f / rate)[:, None]
    w = np.asarray(weights, dtype=float)[None, :]
    num = coeffs.b1[None, :] * z + coeffs.b2[None, :]
    den = z * z + coeffs.a1[None, :] * z + coeffs.a2[None, :]
    return np.abs(np.sum(w * num / den, axis=1))
