"""Waveform loading and the 128-bin log-mel front end.

Pipeline: 16 kHz mono WAV -> peak normalization -> STFT (n_fft 2048, hop 256,
periodic Hamming window, reflect center padding) -> power spectrum -> 128
triangular HTK-mel filters spanning 0-8000 Hz with unit peak -> natural log
floored at 1e-10.

The floor value is what the augmentations use as "removed energy", and the dB
arithmetic in FilterAugment assumes the power (magnitude-squared) spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

from .checkpoint import load_container, save_container
from .errors import ContractError

SAMPLE_RATE = 16000
N_FFT = 2048
HOP = 256
N_MELS = 128
FMAX = 8000.0
LOG_FLOOR = 1e-10

#: seconds per mel frame and per pooled (model output) frame
FRAME_SECONDS = HOP / SAMPLE_RATE
POOLED_FRAME_SECONDS = FRAME_SECONDS * 4


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE


@dataclass
class MelClip:
    bins: np.ndarray                      # [128, T_frames]
    frame_hop_seconds: float = FRAME_SECONDS

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]


def load_wav(path) -> Waveform:
    """Decode a mono 16 kHz PCM-16 or float-32 RIFF/WAVE file to [-1, 1] floats."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise ContractError(f"{path}: malformed WAV file ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise ContractError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz "
                            "(no silent resampling)")
    if data.ndim != 1:
        raise ContractError(f"{path}: {data.shape[1]} channels, expected mono")
    if data.dtype == np.int16:
        samples = np.clip(data.astype(np.float32) / 32767.0, -1.0, 1.0)
    elif data.dtype == np.float32:
        samples = data.copy()
    else:
        raise ContractError(f"{path}: unsupported sample format {data.dtype}, "
                            "expected PCM-16 or float-32")
    if not np.all(np.isfinite(samples)):
        raise ContractError(f"{path}: non-finite samples")
    return Waveform(samples, rate)


def save_wav(path, w: Waveform) -> None:
    """Write PCM-16; encoding at scale 32767 keeps the load round trip < 1/32768."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(path, w.sample_rate, pcm)


def normalize_waveform(w: Waveform) -> Waveform:
    """Scale so max |sample| is exactly 1; all-zero input is returned unchanged."""
    peak = np.abs(w.samples).max() if w.samples.size else 0.0
    if peak == 0.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    return Waveform((w.samples / peak).astype(np.float32), w.sample_rate)


def hamming_window(n: int = N_FFT) -> np.ndarray:
    """Periodic Hamming window (the STFT convention)."""
    return (0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)).astype(np.float32)


def stft_power(samples: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Power spectrogram [n_fft//2+1, T] with reflect center padding."""
    x = np.asarray(samples, np.float32)
    if x.size == 0:
        raise ContractError("cannot compute a spectrogram of an empty waveform")
    pad = n_fft // 2
    if x.size <= pad:
        raise ContractError(f"waveform too short for reflect padding: {x.size} samples, "
                            f"need more than {pad}")
    padded = np.pad(x, pad, mode="reflect")
    frames = sliding_window_view(padded, n_fft)[::hop]
    spec = np.fft.rfft(frames * hamming_window(n_fft), axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T.astype(np.float32)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   fmax: float = FMAX) -> np.ndarray:
    """[n_mels, n_fft//2+1] triangular filters, HTK mel scale, unit peak."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(fmax), n_mels + 2))
    fft_hz = np.arange(n_fft // 2 + 1) * (SAMPLE_RATE / n_fft)
    lo, ctr, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (fft_hz - lo) / (ctr - lo)
    falling = (hi - fft_hz) / (hi - ctr)
    return np.maximum(0.0, np.minimum(rising, falling)).astype(np.float32)


def mel_bin_center_hz(m: int, n_mels: int = N_MELS, fmax: float = FMAX) -> float:
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(fmax), n_mels + 2))
    return float(edges_hz[m + 1])


_FILTERBANK_CACHE: dict = {}


def _filterbank() -> np.ndarray:
    fb = _FILTERBANK_CACHE.get("fb")
    if fb is None:
        fb = mel_filterbank()
        _FILTERBANK_CACHE["fb"] = fb
    return fb


def mel_power(w: Waveform) -> np.ndarray:
    """Pre-log mel power [128, T]; exposed for the scaling/shift sanity tests."""
    if w.sample_rate != SAMPLE_RATE:
        raise ContractError(f"expected {SAMPLE_RATE} Hz waveform, got {w.sample_rate}")
    return _filterbank() @ stft_power(w.samples)


def logmel(w: Waveform) -> MelClip:
    """Natural-log mel spectrogram; every cell is at least log(1e-10)."""
    return MelClip(np.log(np.maximum(mel_power(w), LOG_FLOOR)).astype(np.float32))


def save_mel(path, clip: MelClip) -> None:
    save_container(path, "melclip", f"frame_hop_seconds={clip.frame_hop_seconds!r}",
                   {"bins": clip.bins})


def load_mel(path) -> MelClip:
    role, _, tensors = load_container(path)
    if role != "melclip" or "bins" not in tensors:
        raise ContractError(f"{path}: not a cached mel clip")
    return MelClip(tensors["bins"])
