"""Speech waveform → fixed-size log-mel spectrogram."""
from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError

SAMPLE_RATE = 16000
WINDOW = 400
HOP = 160
FFT_SIZE = 512
N_MELS = 80
N_FRAMES = 256
LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size < 1:
            raise ContractError("waveform has no samples")
        if int(self.sample_rate) <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Linear-interpolation resampling; identity when rates already match."""
    if target_rate <= 0:
        raise ContractError(f"target rate must be positive, got {target_rate}")
    if w.sample_rate == target_rate:
        return w
    n_out = max(1, int(round(w.samples.size * target_rate / w.sample_rate)))
    positions = np.arange(n_out) * (w.sample_rate / target_rate)
    out = np.interp(positions, np.arange(w.samples.size), w.samples)
    return Waveform(out, target_rate)


def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(length, window=WINDOW, hop=HOP):
    return 1 + (length - window) // hop


def stft(w: Waveform, window=WINDOW, hop=HOP, fft_size=FFT_SIZE):
    """Complex STFT, shape (fft_size//2 + 1, frames); no centering or padding."""
    if window > fft_size:
        raise ContractError(f"window {window} exceeds fft size {fft_size}")
    if hop <= 0:
        raise ContractError(f"hop must be positive, got {hop}")
    x = w.samples
    if x.size < window:
        raise ContractError(f"signal of {x.size} samples is shorter than one window ({window})")
    frames = n_frames(x.size, window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(frames)[:, None]
    segments = x[idx] * hann(window)
    return np.fft.rfft(segments, n=fft_size, axis=1).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels=N_MELS, fmin=0.0, fmax=SAMPLE_RATE / 2):
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels=N_MELS, sr=SAMPLE_RATE, fmin=0.0, fmax=8000.0, fft_size=FFT_SIZE):
    """Triangular HTK-mel filters over rfft bins, shape (n_mels, fft_size//2 + 1).

    Filters peak at 1 at their center frequency and fall linearly to 0 at the
    neighbouring centers.
    """
    if n_mels < 2:
        raise ContractError(f"need at least 2 mel bands, got {n_mels}")
    if fmax > sr / 2:
        raise ContractError(f"fmax {fmax} exceeds Nyquist {sr / 2}")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sr / fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


_FILTERBANK = mel_filterbank()


def mel_spectrogram(w: Waveform) -> np.ndarray:
    """Log-mel power spectrogram, shape (80, frames) before padding."""
    w = resample(w, SAMPLE_RATE)
    power = np.abs(stft(w)) ** 2
    mel = _FILTERBANK @ power
    return np.log(np.maximum(mel, LOG_FLOOR))


def pad_or_truncate(m, target=N_FRAMES):
    """Right-pad with log(floor) or keep the first ``target`` frames."""
    m = np.asarray(m)
    t = m.shape[1]
    if t == target:
        return m
    if t > target:
        return m[:, :target].copy()
    out = np.full((m.shape[0], target), np.log(LOG_FLOOR), dtype=m.dtype)
    out[:, :t] = m
    return out


def standardize(m):
    """Zero mean, unit variance over the whole matrix; divide skipped if flat."""
    m = np.asarray(m, dtype=np.float64)
    centered = m - m.mean()
    var = centered.var()
    return centered / np.sqrt(var) if var >= 1e-12 else centered


def voice_grid(w: Waveform) -> np.ndarray:
    """Encoder input: standardized 80×256 log-mel, zero-padded to 96×256."""
    m = standardize(pad_or_truncate(mel_spectrogram(w)))
    out = np.zeros((96, N_FRAMES))
    out[:N_MELS] = m
    return out


# -- WAV I/O -----------------------------------------------------------


def read_wav(path) -> Waveform:
    """Read 16-bit PCM WAV; multi-channel audio is averaged to mono."""
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate = f.getnchannels(), f.getsampwidth(), f.getframerate()
            raw = f.readframes(f.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from None
    if width != 2:
        raise FormatError(f"{path}: only 16-bit PCM is supported, got {8 * width}-bit")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return Waveform(data, rate)


def write_wav(path, w: Waveform):
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
