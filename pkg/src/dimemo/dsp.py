"""Acoustic feature extraction and the 250 ms segment stream.

The MFCC front-end is fixed: pre-emphasis 0.97 over the whole signal,
30 ms frames every 10 ms, Hamming window, 256-point FFT power spectrum,
26 triangular mel filters spanning 0-4000 Hz, log with a 1e-10 floor,
orthonormal DCT-II built directly as a matrix, cepstra c1-c12 kept (c0
dropped), plus two-sided regression deltas with edge replication: 24
dims per frame. Frames are then pooled into 250 ms segments as
[mean; population std], doubling the dimension, and segment streams are
standardized per dimension with statistics fitted on training data.

Streams serialize to a small binary format (magic ``FSTM1``) with a CSV
mirror accepted on input.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import GRID_STEP, grid_length
from .errors import DimensionMismatchError, StreamFormatError, ValidationError

__all__ = [
    "FRAME_LEN", "FRAME_HOP", "N_FFT", "N_MELS", "N_CEPS", "PREEMPHASIS",
    "LOG_FLOOR", "DELTA_WINDOW", "MFCC_DIM",
    "FrameFeatures", "FeatureStream", "NormStats",
    "mel_filterbank", "mfcc", "delta", "aggregate_to_segments",
    "fit_norm", "apply_norm", "save_stream", "read_stream_file",
]

FRAME_LEN = 0.030
FRAME_HOP = 0.010
N_FFT = 256
N_MELS = 26
N_CEPS = 12  # c1..c12; c0 excluded
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10
DELTA_WINDOW = 2
MFCC_DIM = 2 * N_CEPS  # statics + deltas


@dataclass
class FrameFeatures:
    """Per-frame features at the analysis hop (rows = frames)."""

    frames: np.ndarray
    hop: float = FRAME_HOP

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValidationError(f"frames must be 2-d, got shape {self.frames.shape}")


@dataclass
class FeatureStream:
    """Per-segment features on the 250 ms grid (rows = segments)."""

    segments: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.float64)
        if self.segments.ndim != 2:
            raise ValidationError(f"segments must be 2-d, got shape {self.segments.shape}")

    @property
    def dim(self) -> int:
        return self.segments.shape[1]

    def __len__(self) -> int:
        return self.segments.shape[0]


@dataclass
class NormStats:
    """Per-dimension standardization statistics (population moments)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValidationError("mean and std must be 1-d and the same shape")

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        return cls(np.zeros(dim), np.ones(dim))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    sample_rate: int = 8000,
    n_fft: int = N_FFT,
    n_mels: int = N_MELS,
    f_min: float = 0.0,
    f_max: float = 4000.0,
) -> np.ndarray:
    """Triangular mel filters over FFT bins, shape (n_mels, n_fft//2 + 1)."""
    if f_max > sample_rate / 2:
        raise ValidationError(f"f_max {f_max} exceeds Nyquist {sample_rate / 2}")
    mel_points = np.linspace(_hz_to_mel(f_min), _hz_to_mel(f_max), n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    bins = np.floor((n_fft + 1) * hz_points / sample_rate).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        lo, center, hi = bins[m - 1], bins[m], bins[m + 1]
        for k in range(lo, center):
            fb[m - 1, k] = (k - lo) / max(center - lo, 1)
        for k in range(center, hi):
            fb[m - 1, k] = (hi - k) / max(hi - center, 1)
    return fb


def _dct_matrix(n_in: int, rows: int) -> np.ndarray:
    # orthonormal DCT-II; row k applied to log energies n = 0..n_in-1
    n = np.arange(n_in)
    mat = np.zeros((rows, n_in))
    for k in range(rows):
        mat[k] = math.sqrt(2.0 / n_in) * np.cos(math.pi * k * (2 * n + 1) / (2 * n_in))
    mat[0] = math.sqrt(1.0 / n_in)
    return mat


def delta(coeffs: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """Two-sided regression deltas with edge frames replicated."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2:
        raise ValidationError(f"coeffs must be 2-d, got shape {coeffs.shape}")
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    padded = np.concatenate(
        [np.repeat(coeffs[:1], window, axis=0), coeffs, np.repeat(coeffs[-1:], window, axis=0)]
    )
    denom = 2.0 * sum(k * k for k in range(1, window + 1))
    out = np.zeros_like(coeffs)
    for k in range(1, window + 1):
        out += k * (padded[window + k: window + k + len(coeffs)]
                    - padded[window - k: window - k + len(coeffs)])
    return out / denom


def mfcc(audio, sample_rate: int = 8000, capture: dict | None = None) -> FrameFeatures:
    """MFCC statics c1-c12 plus deltas for mono audio in [-1, 1].

    ``capture``, when given a dict, receives the pre-DCT filterbank
    energies under key ``"filterbank_energy"`` for inspection.
    """
    x = np.asarray(audio, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"audio must be 1-d, got shape {x.shape}")
    frame_len = int(round(FRAME_LEN * sample_rate))
    hop = int(round(FRAME_HOP * sample_rate))
    if x.size < frame_len:
        raise ValidationError(
            f"audio too short: {x.size} samples, need at least {frame_len}"
        )
    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - PREEMPHASIS * x[:-1]
    n_frames = (x.size - frame_len) // hop + 1
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emphasized[idx] * np.hamming(frame_len)
    power = np.abs(np.fft.rfft(frames, n=N_FFT)) ** 2
    fb = mel_filterbank(sample_rate)
    energies = power @ fb.T
    if capture is not None:
        capture["filterbank_energy"] = energies.copy()
    log_e = np.log(np.maximum(energies, LOG_FLOOR))
    dct = _dct_matrix(N_MELS, N_CEPS + 1)[1:]  # drop c0
    statics = log_e @ dct.T
    return FrameFeatures(np.concatenate([statics, delta(statics)], axis=1))


def aggregate_to_segments(
    features: FrameFeatures, duration: float, label: str = ""
) -> FeatureStream:
    """Pool frames into 250 ms segments as [mean; population std].

    A frame belongs to the segment its start time falls in. Trailing
    segments with no frames copy the previous segment's vector, so the
    stream always has ceil(duration / 0.25) rows.
    """
    frames = features.frames
    if frames.shape[0] == 0:
        raise ValidationError("no frames to aggregate")
    per_seg = GRID_STEP / features.hop
    if abs(per_seg - round(per_seg)) > 1e-9:
        raise ValidationError(
            f"frame hop {features.hop} does not divide the {GRID_STEP} s grid"
        )
    per_seg = int(round(per_seg))
    n_seg = grid_length(duration)
    dim = frames.shape[1]
    out = np.zeros((n_seg, 2 * dim))
    for s in range(n_seg):
        chunk = frames[s * per_seg: (s + 1) * per_seg]
        if chunk.shape[0] == 0:
            if s == 0:
                raise ValidationError("first segment has no frames")
            out[s] = out[s - 1]
        else:
            out[s, :dim] = chunk.mean(axis=0)
            out[s, dim:] = chunk.std(axis=0)
    return FeatureStream(out, label=label)


def fit_norm(streams) -> NormStats:
    """Per-dimension mean/std pooled over every segment of ``streams``."""
    streams = list(streams)
    if not streams:
        raise ValidationError("need at least one stream to fit normalization")
    dim = streams[0].dim
    for s in streams:
        if s.dim != dim:
            raise DimensionMismatchError(f"stream dims differ: {s.dim} vs {dim}")
    pooled = np.concatenate([s.segments for s in streams], axis=0)
    if pooled.shape[0] < 1:
        raise ValidationError("need at least one segment to fit normalization")
    return NormStats(pooled.mean(axis=0), pooled.std(axis=0))


def normalize_array(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """(x - mean) / std; dimensions with std < 1e-8 are centered only."""
    if x.shape[1] != stats.mean.size:
        raise DimensionMismatchError(
            f"stream dim {x.shape[1]} does not match stats dim {stats.mean.size}"
        )
    denom = np.where(stats.std < 1e-8, 1.0, stats.std)
    return (x - stats.mean) / denom


def apply_norm(stream: FeatureStream, stats: NormStats) -> FeatureStream:
    return FeatureStream(normalize_array(stream.segments, stats), label=stream.label)


# ---------------------------------------------------------------------------
# stream files

_MAGIC = b"FSTM1"


def save_stream(stream: FeatureStream, path) -> None:
    """Write the binary stream format (single precision payload)."""
    label = stream.label.encode("utf-8")
    count, dim = stream.segments.shape
    header = _MAGIC + struct.pack("<IId", dim, count, GRID_STEP)
    header += struct.pack("<I", len(label)) + label
    payload = stream.segments.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header + payload)


def _read_binary_stream(blob: bytes, path: str) -> FeatureStream:
    offset = len(_MAGIC)
    try:
        dim, count, hop = struct.unpack_from("<IId", blob, offset)
        offset += struct.calcsize("<IId")
        (label_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        label = blob[offset: offset + label_len].decode("utf-8")
        offset += label_len
    except (struct.error, UnicodeDecodeError) as exc:
        raise StreamFormatError(f"{path}: corrupt header ({exc})") from None
    if abs(hop - GRID_STEP) > 1e-9:
        raise StreamFormatError(f"{path}: hop {hop} is not the {GRID_STEP} s grid")
    expected = count * dim * 4
    payload = blob[offset:]
    if len(payload) != expected:
        raise StreamFormatError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float64)
    return FeatureStream(data, label=label)


def _read_csv_stream(path: Path) -> FeatureStream:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise StreamFormatError(f"{path}: empty stream file")
    header = lines[0].split(",")
    if header[0] != "time" or len(header) < 2:
        raise StreamFormatError(f"{path}: header must be 'time,f0,...'")
    dim = len(header) - 1
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        fields = raw.split(",")
        if len(fields) != dim + 1:
            raise StreamFormatError(
                f"{path}:{lineno}: expected {dim + 1} fields, got {len(fields)}"
            )
        try:
            rows.append([float(v) for v in fields[1:]])
        except ValueError:
            raise StreamFormatError(f"{path}:{lineno}: bad float value") from None
    if not rows:
        raise StreamFormatError(f"{path}: stream file has no rows")
    return FeatureStream(np.asarray(rows), label=Path(path).stem)


def read_stream_file(path) -> FeatureStream:
    """Read a stream file: the binary format, or its CSV mirror."""
    path = Path(path)
    if not path.exists():
        raise StreamFormatError(f"{path}: no such stream file")
    with open(path, "rb") as fh:
        head = fh.read(len(_MAGIC))
        rest = fh.read()
    if head == _MAGIC:
        return _read_binary_stream(head + rest, str(path))
    return _read_csv_stream(path)
