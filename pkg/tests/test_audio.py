"""
Log-mel front end
"""
import numpy as np
import pytest

from mmadfer.audio import LOG_FLOOR, N_MELS, SAMPLE_RATE, log_mel_spectrogram, mel_band_containing, num_frames
from mmadfer.errors import ContractError


def test_silence_hits_the_floor():
    spec = log_mel_spectrogram(np.zeros(SAMPLE_RATE))
    assert spec.shape == (N_MELS, num_frames(SAMPLE_RATE))
    assert np.allclose(spec, np.log(LOG_FLOOR))


@pytest.mark.parametrize("length, frames", [(400, 1), (559, 1), (560, 2), (16000, 98)])
def test_frame_count(length, frames):
    assert num_frames(length) == frames
    assert log_mel_spectrogram(np.ones(length)).shape[1] == frames


def test_tone_peaks_in_its_band():
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    spec = log_mel_spectrogram(0.5 * np.sin(2 * np.pi * 1000.0 * t))
    peaks = np.argmax(spec, axis=0)
    assert np.all(peaks == mel_band_containing(1000.0)), f"peaks at {sorted(set(peaks.tolist()))}"


def test_louder_tone_raises_log_energy():
    t = np.arange(4000) / SAMPLE_RATE
    quiet = log_mel_spectrogram(0.1 * np.sin(2 * np.pi * 1000.0 * t))
    loud = log_mel_spectrogram(0.4 * np.sin(2 * np.pi * 1000.0 * t))
    band = mel_band_containing(1000.0)
    assert np.allclose(loud[band] - quiet[band], np.log(4.0), atol=1e-4)


@pytest.mark.parametrize("waveform", [np.zeros(0), np.zeros(399)])
def test_short_input_is_rejected(waveform):
    with pytest.raises(ContractError):
        log_mel_spectrogram(waveform)
