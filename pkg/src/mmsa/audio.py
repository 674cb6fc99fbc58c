"""Speech front end: RIFF/WAV parsing, peak normalization, MFCC features.

The accepted audio format is PCM, mono, 16-bit, 16 kHz, little-endian;
anything else is rejected with an error naming the offending field.
Feature extraction follows the classic recipe: 25 ms frames every 10 ms,
Hamming window, 512-point FFT power spectrum, 26 triangular mel filters
over 0-8000 Hz, log with a 1e-10 floor, orthonormal DCT-II keeping the
first 13 coefficients. No pre-emphasis, no deltas.
"""

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DataError

SAMPLE_RATE = 16000


@dataclass
class PcmAudio:
    samples: np.ndarray  # mono, in [-1, 1]
    rate: int = SAMPLE_RATE


@dataclass
class MfccConfig:
    frame_len: int = 400   # 25 ms at 16 kHz
    hop: int = 160         # 10 ms
    fft_size: int = 512
    n_filters: int = 26
    n_coeffs: int = 13
    log_floor: float = 1e-10

    def __post_init__(self):
        n = self.fft_size
        if n < self.frame_len or n & (n - 1) != 0:
            raise ValueError(
                f"fft size must be a power of two >= frame length, got {n} vs {self.frame_len}"
            )
        if self.n_filters < self.n_coeffs:
            raise ValueError("need at least as many filters as kept coefficients")


def parse_wav(data: bytes) -> PcmAudio:
    """Decode a RIFF/WAVE byte stream, skipping chunks we do not use."""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DataError("bad magic: not a RIFF/WAVE stream")
    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        pos += 8
        if pos + size > len(data):
            raise DataError(
                f"truncated chunk {chunk_id!r}: declares {size} bytes, "
                f"{len(data) - pos} remain"
            )
        body = data[pos : pos + size]
        pos += size + (size & 1)  # chunk bodies are word-aligned
        if chunk_id == b"fmt ":
            if size < 16:
                raise DataError(f"truncated chunk b'fmt ': {size} bytes")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data" and raw is None:
            raw = body
    if fmt is None:
        raise DataError("missing fmt chunk")
    if raw is None:
        raise DataError("missing data chunk")
    codec, channels, rate, _, _, bits = fmt
    if codec != 1:
        raise DataError(f"unsupported format: codec={codec} (PCM required)")
    if channels != 1:
        raise DataError(f"unsupported format: channels={channels} (mono required)")
    if bits != 16:
        raise DataError(f"unsupported format: bit depth={bits} (16-bit required)")
    if rate != SAMPLE_RATE:
        raise DataError(f"unsupported format: sample rate={rate} ({SAMPLE_RATE} required)")
    if len(raw) % 2 != 0:
        raise DataError("truncated chunk b'data': odd byte count for 16-bit samples")
    samples = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    return PcmAudio(samples, rate)


def load_wav(path) -> PcmAudio:
    try:
        with open(path, "rb") as fh:
            return parse_wav(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def normalize_peak(audio: PcmAudio, target_dbfs: float = -3.0) -> PcmAudio:
    """Scale so the peak magnitude hits the target level (about 0.708 at -3 dBFS)."""
    peak = float(np.max(np.abs(audio.samples))) if audio.samples.size else 0.0
    if peak == 0.0:
        raise DataError("silent input: cannot normalize all-zero audio")
    gain = 10.0 ** (target_dbfs / 20.0) / peak
    return PcmAudio(audio.samples * gain, audio.rate)


def frame_and_window(audio: PcmAudio, cfg: MfccConfig) -> np.ndarray:
    """Split into overlapping frames and apply a Hamming window, [F, frame_len]."""
    n = audio.samples.size
    if n < cfg.frame_len:
        raise DataError(f"too short: {n} samples, need at least {cfg.frame_len}")
    count = 1 + (n - cfg.frame_len) // cfg.hop
    frames = np.empty((count, cfg.frame_len))
    for i in range(count):
        start = i * cfg.hop
        frames[i] = audio.samples[start : start + cfg.frame_len]
    k = np.arange(cfg.frame_len)
    window = 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (cfg.frame_len - 1))
    return frames * window


@lru_cache(maxsize=8)
def _fft_plan(n: int):
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for i in range(n):
        r = 0
        x = i
        for _ in range(bits):
            r = (r << 1) | (x & 1)
            x >>= 1
        rev[i] = r
    twiddles = []
    m = 2
    while m <= n:
        twiddles.append(np.exp(-2j * np.pi * np.arange(m // 2) / m))
        m *= 2
    return rev, twiddles


def radix2_fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 FFT along the last axis; length must be a power of two."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    if n < 1 or n & (n - 1) != 0:
        raise ValueError(f"fft length must be a power of two, got {n}")
    rev, twiddles = _fft_plan(n)
    out = x[..., rev].copy()
    m = 2
    for w in twiddles:
        half = m // 2
        for start in range(0, n, m):
            upper = out[..., start : start + half].copy()  # first write aliases it
            lower = out[..., start + half : start + m] * w
            out[..., start : start + half] = upper + lower
            out[..., start + half : start + m] = upper - lower
        m *= 2
    return out


def fft_magnitude(frame: np.ndarray, fft_size: int = 512) -> np.ndarray:
    """Power spectrum |X[k]|^2 / N for k = 0..N/2 of a zero-padded frame."""
    frame = np.asarray(frame, dtype=float)
    n = frame.shape[-1]
    if n > fft_size:
        raise ValueError(f"frame of {n} samples does not fit fft size {fft_size}")
    padded = np.zeros(frame.shape[:-1] + (fft_size,))
    padded[..., :n] = frame
    spectrum = radix2_fft(padded)[..., : fft_size // 2 + 1]
    return (spectrum.real**2 + spectrum.imag**2) / fft_size


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig, rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular filters of peak 1 on the FFT-bin grid, [n_filters, fft/2 + 1].

    Edges are n_filters + 2 points equally spaced on the mel scale between
    0 Hz and the Nyquist frequency, snapped to FFT bins.
    """
    n_bins = cfg.fft_size // 2 + 1
    mels = np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2.0), cfg.n_filters + 2)
    edges = np.floor((cfg.fft_size + 1) * mel_to_hz(mels) / rate).astype(int)
    filters = np.zeros((cfg.n_filters, n_bins))
    for j in range(cfg.n_filters):
        lo, center, hi = edges[j], edges[j + 1], edges[j + 2]
        for i in range(lo, center):
            filters[j, i] = (i - lo) / (center - lo)
        for i in range(center, hi):
            filters[j, i] = (hi - i) / (hi - center)
    return filters


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II rows: the full square matrix is orthogonal."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    mat = np.sqrt(2.0 / n_in) * np.cos(np.pi * k * (2 * n + 1) / (2.0 * n_in))
    mat[0] = np.sqrt(1.0 / n_in)
    return mat


def mfcc(audio: PcmAudio, cfg: MfccConfig | None = None) -> np.ndarray:
    """MFCC features, [frames, n_coeffs]."""
    cfg = cfg or MfccConfig()
    frames = frame_and_window(audio, cfg)
    power = fft_magnitude(frames, cfg.fft_size)
    energies = power @ mel_filterbank(cfg, audio.rate).T
    log_e = np.log(np.maximum(energies, cfg.log_floor))
    return log_e @ dct_matrix(cfg.n_coeffs, cfg.n_filters).T
