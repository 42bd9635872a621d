"""
Log-mel spectrogram for 16 kHz audio: 25 ms periodic Hann windows every
10 ms, FFT magnitude, 128 HTK mel bands, natural log with a floor.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.signal import get_window

from .errors import ContractError

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
WINDOW = 400
HOP = 160
N_FFT = 400
N_MELS = 128
LOG_FLOOR = 1e-10


def hz_to_mel(freq):
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges(n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """n_mels + 2 band edges in Hz, equally spaced on the mel scale from 0 to Nyquist"""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))


def triangle_weights(freqs: np.ndarray, n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """(n_mels, len(freqs)) triangular responses of every band at ``freqs`` (Hz)"""
    edges = mel_edges(n_mels, sample_rate)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    freqs = np.asarray(freqs, dtype=np.float64)[None, :]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    return triangle_weights(np.fft.rfftfreq(n_fft, d=1.0 / sample_rate), n_mels, sample_rate)


def mel_band_containing(freq: float, n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> int:
    """Band whose triangle responds most strongly to ``freq``"""
    return int(np.argmax(triangle_weights(np.array([freq]), n_mels, sample_rate)[:, 0]))


def num_frames(length: int, window: int = WINDOW, hop: int = HOP) -> int:
    return 1 + (length - window) // hop


def log_mel_spectrogram(waveform: np.ndarray, sample_rate: int = SAMPLE_RATE, n_mels: int = N_MELS,
                        window: int = WINDOW, hop: int = HOP, n_fft: int = N_FFT) -> np.ndarray:
    """
    (n_mels, T) log-mel magnitudes with T = 1 + floor((len - window) / hop).

    Raises:
        ContractError: If the waveform is empty or shorter than one window
    """
    waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if waveform.size == 0:
        raise ContractError("Cannot compute a spectrogram of an empty waveform")
    if waveform.size < window:
        raise ContractError(f"Waveform of {waveform.size} samples is shorter than one {window}-sample window")
    if n_fft < window:
        raise ContractError(f"n_fft {n_fft} is smaller than the window {window}")

    frames = np.lib.stride_tricks.sliding_window_view(waveform, window)[::hop]
    spectrum = np.abs(np.fft.rfft(frames * get_window("hann", window), n=n_fft, axis=-1))
    mel = spectrum @ mel_filterbank(n_mels, n_fft, sample_rate).T
    return np.log(np.maximum(mel, LOG_FLOOR)).T.astype(np.float32)
