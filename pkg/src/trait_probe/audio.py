"""WAV ingestion and the 26-dimensional MFCC baseline features.

All ingested audio is normalized to mono float at 16 kHz. The MFCC pipeline
is pre-emphasis -> 25 ms / 10 ms Hamming frames -> |FFT|^2 (512-point) ->
40-filter HTK-mel triangular bank over 0-8000 Hz -> floored log ->
orthonormal DCT-II keeping coefficients 0..25.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import CorruptFile, TooShort, UnsupportedFormat
from .feature_store import MODEL_NONE, SOURCE_MFCC, FeatureMatrix

TARGET_RATE = 16000

_WAVE_PCM = 1
_WAVE_FLOAT = 3
_WAVE_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate_hz: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class MfccConfig:
    n_coeffs: int = 26
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_mel_filters: int = 40
    pre_emphasis: float = 0.97
    log_floor: float = 1e-10
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0

    def frame_len(self, rate: int) -> int:
        return int(round(self.frame_len_ms * rate / 1000.0))

    def hop(self, rate: int) -> int:
        return int(round(self.hop_ms * rate / 1000.0))

    def validate(self, rate: int) -> None:
        if self.n_coeffs > self.n_mel_filters:
            raise ValueError("n_coeffs must be <= n_mel_filters")
        if self.n_fft < self.frame_len(rate):
            raise ValueError("n_fft must cover one frame")


# --- WAV reading -----------------------------------------------------------


def _parse_fmt(chunk: bytes, path: Path):
    if len(chunk) < 16:
        raise CorruptFile(f"{path}: fmt chunk too small")
    fmt_tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", chunk, 0)
    if fmt_tag == _WAVE_EXTENSIBLE:
        if len(chunk) < 26:
            raise CorruptFile(f"{path}: extensible fmt chunk too small")
        (fmt_tag,) = struct.unpack_from("<H", chunk, 24)
    return fmt_tag, channels, rate, bits


def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE file as mono 16 kHz float samples in [-1, 1].

    Accepts PCM 16-bit and IEEE float 32-bit at any rate/channel count;
    channels are averaged and the result resampled to 16 kHz.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise CorruptFile(f"{path}: not a RIFF/WAVE file")

    fmt_info = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise CorruptFile(f"{path}: chunk {cid!r} truncated")
        if cid == b"fmt ":
            fmt_info = _parse_fmt(body, path)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt_info is None or data is None:
        raise CorruptFile(f"{path}: missing fmt or data chunk")
    fmt_tag, channels, rate, bits = fmt_info
    if channels < 1 or rate <= 0:
        raise CorruptFile(f"{path}: nonsensical fmt fields")

    if fmt_tag == _WAVE_PCM and bits == 16:
        raw = np.frombuffer(data[: len(data) - len(data) % 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif fmt_tag == _WAVE_FLOAT and bits == 32:
        raw = np.frombuffer(data[: len(data) - len(data) % 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedFormat(
            f"{path}: only PCM 16-bit and IEEE float 32-bit are supported "
            f"(format tag {fmt_tag}, {bits} bits)"
        )

    if channels > 1:
        usable = len(samples) - len(samples) % channels
        samples = samples[:usable].reshape(-1, channels).mean(axis=1)
    if rate != TARGET_RATE:
        samples = resample(samples, rate, TARGET_RATE)
    samples = np.clip(samples, -1.0, 1.0)
    return Waveform(samples=samples, sample_rate_hz=TARGET_RATE)


# --- resampling ------------------------------------------------------------

_TAPS_PER_PHASE = 64
_KAISER_BETA = 8.6


def _sinc_kernel(t: np.ndarray, cutoff: float, half_width: float) -> np.ndarray:
    """Kaiser-windowed sinc, kernel argument in source-sample units."""
    u = t / half_width
    window = np.where(
        np.abs(u) <= 1.0,
        np.i0(_KAISER_BETA * np.sqrt(np.maximum(0.0, 1.0 - u * u)))
        / np.i0(_KAISER_BETA),
        0.0,
    )
    return 2.0 * cutoff * np.sinc(2.0 * cutoff * t) * window


def resample(x: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    """Rational polyphase resampling with a windowed-sinc lowpass.

    The prototype filter has 64 taps per output phase (Kaiser beta=8.6) and
    cuts off at the lower of the two Nyquist frequencies. Output length is
    ceil(n * dst / src).
    """
    if src_rate == dst_rate:
        return np.asarray(x, dtype=np.float64).copy()
    frac = Fraction(dst_rate, src_rate)
    up, down = frac.numerator, frac.denominator
    x = np.asarray(x, dtype=np.float64)
    n_in = len(x)
    n_out = -((-n_in * up) // down)
    if n_in == 0:
        return np.zeros(0)

    half = _TAPS_PER_PHASE // 2  # input samples on each side of the window
    cutoff = 0.5 * min(1.0, up / down)  # in units of the source rate
    left = half - 1

    pad = np.concatenate([np.zeros(left), x, np.zeros(half + down + 1)])
    windows = np.lib.stride_tricks.sliding_window_view(pad, _TAPS_PER_PHASE)

    out = np.empty(n_out)
    offsets = np.arange(_TAPS_PER_PHASE)
    for phase in range(up):
        idx0 = np.arange(phase, n_out, up)  # output indices of this phase
        if len(idx0) == 0:
            continue
        pos = phase * down / up
        base = int(np.floor(pos))
        fracpos = pos - base
        taps = _sinc_kernel(fracpos + left - offsets, cutoff, half)
        rows = base + down * np.arange(len(idx0))
        out[idx0] = windows[rows] @ taps
    return out


# --- MFCC ------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig, rate: int) -> np.ndarray:
    """Triangular HTK-mel filters evaluated at FFT bin centers.

    Returns an (n_mel_filters, n_fft//2 + 1) matrix of nonnegative weights.
    """
    n_bins = cfg.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * rate / cfg.n_fft
    mel_points = np.linspace(
        hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mel_filters + 2
    )
    hz_points = mel_to_hz(mel_points)
    bank = np.zeros((cfg.n_mel_filters, n_bins))
    for j in range(cfg.n_mel_filters):
        lo, center, hi = hz_points[j], hz_points[j + 1], hz_points[j + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        bank[j] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def dct_ii_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II basis, rows are output coefficients."""
    n = np.arange(n_in)
    k = np.arange(n_out)[:, None]
    mat = np.sqrt(2.0 / n_in) * np.cos(np.pi * k * (2 * n + 1) / (2 * n_in))
    mat[0] /= np.sqrt(2.0)
    return mat


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    return (n_samples - frame_len) // hop + 1


def mfcc(waveform: Waveform, cfg: MfccConfig | None = None) -> FeatureMatrix:
    """Compute frames x n_coeffs MFCC features for a 16 kHz waveform."""
    cfg = cfg or MfccConfig()
    rate = waveform.sample_rate_hz
    cfg.validate(rate)
    flen = cfg.frame_len(rate)
    hop = cfg.hop(rate)
    x = np.asarray(waveform.samples, dtype=np.float64)
    if len(x) < flen:
        raise TooShort(
            f"waveform has {len(x)} samples, one frame needs {flen}"
        )

    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - cfg.pre_emphasis * x[:-1]

    n_frames = frame_count(len(x), flen, hop)
    frames = np.lib.stride_tricks.sliding_window_view(emphasized, flen)[::hop]
    frames = frames[:n_frames] * np.hamming(flen)

    spectrum = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2

    bank = mel_filterbank(cfg, rate)
    energies = power @ bank.T
    log_energies = np.log(np.maximum(energies, cfg.log_floor))
    coeffs = log_energies @ dct_ii_matrix(cfg.n_coeffs, cfg.n_mel_filters).T
    return FeatureMatrix(
        utterance_id="",
        source=SOURCE_MFCC,
        model_id=MODEL_NONE,
        layer=-1,
        data=coeffs.astype(np.float32),
    )
