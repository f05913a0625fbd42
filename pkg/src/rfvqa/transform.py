"""Signal-to-image math: hysteresis zero crossings, period-count segment
extraction, STFT, and dB magnitude normalization.

All functions are pure and reentrant; callers own any parallelism.
"""

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DB_EPSILON",
    "FLOOR_DB",
    "SegmentationConfig",
    "StftConfig",
    "IqSegment",
    "SpectrogramMatrix",
    "InsufficientCrossings",
    "zero_crossings",
    "noise_adaptive_eps",
    "extract_segment",
    "stft_complex",
    "stft",
    "normalize_db",
    "dump_spectrogram",
    "load_spectrogram",
]

# dB conversion uses 20*log10(|S| + DB_EPSILON) so silent cells floor at
# a deterministic finite value instead of -inf.
DB_EPSILON = 1e-12
FLOOR_DB = 20.0 * np.log10(DB_EPSILON)  # -240 dB

_DUMP_MAGIC = b"RFSPECM1"


class InsufficientCrossings(ValueError):
    """Real trace has too few rising crossings for the requested interval count."""


@dataclass(frozen=True)
class SegmentationConfig:
    """Hysteresis threshold and the interval-count range [p_min, p_max]."""

    hysteresis_eps: float = 0.0
    p_min: int = 20
    p_max: int = 25

    def __post_init__(self) -> None:
        if self.hysteresis_eps < 0:
            raise ValueError("hysteresis_eps must be >= 0")
        if not 1 <= self.p_min <= self.p_max:
            raise ValueError("need 1 <= p_min <= p_max")


@dataclass(frozen=True)
class StftConfig:
    """STFT geometry. Non-centered frames and an FFT shift are mandatory."""

    fft_size: int = 512
    hop: int = 256
    window: str = "blackman"
    centered: bool = False
    fft_shift: bool = True

    def __post_init__(self) -> None:
        if self.fft_size < 1:
            raise ValueError("fft_size must be positive")
        if not 1 <= self.hop <= self.fft_size:
            raise ValueError("need 1 <= hop <= fft_size")
        if self.window != "blackman":
            raise ValueError(f"unsupported window: {self.window!r}")
        if self.centered:
            raise ValueError("centered frames are not supported (frames start at t*hop)")
        if not self.fft_shift:
            raise ValueError("fft_shift is mandatory (row 0 = -0.5 normalized frequency)")


@dataclass
class IqSegment:
    """Contiguous slice of a parent signal spanning ``period_count`` crossing intervals.

    The slice begins one sample before its first rising crossing, so
    re-running ``zero_crossings`` on ``samples.real`` finds all
    ``period_count + 1`` boundary crossings, the endpoints included.
    """

    samples: np.ndarray
    start_index: int
    period_count: int


@dataclass
class SpectrogramMatrix:
    """K x T grid of STFT magnitudes in dB, rows already FFT-shifted."""

    values_db: np.ndarray
    freq_axis_shifted: bool = True
    floor_db: float = FLOOR_DB

    @property
    def shape(self):
        return self.values_db.shape


def zero_crossings(series, eps: float = 0.0) -> np.ndarray:
    """Indices n >= 1 with series[n-1] <= eps and series[n] > eps, ascending."""
    r = np.asarray(series, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise ValueError("series must be 1-D with at least 2 samples")
    return np.nonzero((r[:-1] <= eps) & (r[1:] > eps))[0] + 1


def noise_adaptive_eps(series) -> float:
    """Default hysteresis for noisy data: 10% of the RMS of the real trace."""
    r = np.asarray(series, dtype=float)
    return 0.1 * float(np.sqrt(np.mean(r ** 2)))


def extract_segment(signal, cfg: SegmentationConfig = SegmentationConfig(),
                    seed: int = 0) -> IqSegment:
    """Extract the segment spanning P ~ U{p_min..p_max} crossing intervals.

    P and the start crossing are drawn from ``seed``; the start is uniform
    over all crossings with P more crossings after them, so datasets do not
    always depict signal onsets. Raw IQ values are untouched.

    Accepts an IqSignal or a bare complex array.
    """
    samples = getattr(signal, "samples", signal)
    samples = np.asarray(samples)
    crossings = zero_crossings(samples.real, cfg.hysteresis_eps)
    rng = np.random.default_rng(seed)
    p = int(rng.integers(cfg.p_min, cfg.p_max + 1))
    if len(crossings) < p + 1:
        raise InsufficientCrossings(
            f"need {p + 1} rising crossings, found {len(crossings)}; "
            "lengthen the synthesis or relax the hysteresis")
    j = int(rng.integers(0, len(crossings) - p))
    start = int(crossings[j]) - 1  # lead-in sample keeps the first crossing detectable
    stop = int(crossings[j + p]) + 1
    return IqSegment(samples=samples[start:stop], start_index=start, period_count=p)


def stft_complex(samples, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex STFT per the fixed convention; returned for oracle testing.

    Frames start at n = t*hop with no padding or centering, each frame is
    multiplied by the length-K Blackman window, transformed by a K-point
    DFT with kernel exp(-2j*pi*k*n/K) (no 1/K scaling), and the rows are
    FFT-shifted so row 0 is -0.5 normalized frequency.
    """
    x = np.asarray(samples)
    k, hop = cfg.fft_size, cfg.hop
    if len(x) < k:
        raise ValueError(f"signal length {len(x)} shorter than one frame ({k})")
    t = 1 + (len(x) - k) // hop
    window = np.blackman(k)
    strides = (x.strides[0] * hop, x.strides[0])
    frames = np.lib.stride_tricks.as_strided(x, shape=(t, k), strides=strides)
    spec = np.fft.fft(frames * window, axis=1)
    return np.fft.fftshift(spec, axes=1).T  # (K, T)


def stft(samples, cfg: StftConfig = StftConfig()) -> SpectrogramMatrix:
    """Magnitude spectrogram in dB: 20*log10(|S| + 1e-12), FFT-shifted rows."""
    spec = stft_complex(samples, cfg)
    values_db = 20.0 * np.log10(np.abs(spec) + DB_EPSILON)
    return SpectrogramMatrix(values_db=values_db)


def normalize_db(spec: SpectrogramMatrix, lo_pct: float = 2.0,
                 hi_pct: float = 98.0) -> np.ndarray:
    """Robust per-image normalization: clip to percentiles, map to [0, 1].

    A degenerate image (lo percentile == hi percentile) maps to all zeros.
    """
    if not 0.0 <= lo_pct < hi_pct <= 100.0:
        raise ValueError("need 0 <= lo_pct < hi_pct <= 100")
    values = spec.values_db if isinstance(spec, SpectrogramMatrix) else np.asarray(spec)
    p_lo, p_hi = np.percentile(values, [lo_pct, hi_pct])
    if p_hi <= p_lo:
        return np.zeros_like(values, dtype=float)
    return (np.clip(values, p_lo, p_hi) - p_lo) / (p_hi - p_lo)


def dump_spectrogram(spec: SpectrogramMatrix, path) -> None:
    """Debug dump: 16-byte header (magic, K, T) + row-major float32 LE grid."""
    values = np.ascontiguousarray(spec.values_db, dtype="<f4")
    k, t = values.shape
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC + struct.pack("<II", k, t))
        fh.write(values.tobytes())


def load_spectrogram(path) -> SpectrogramMatrix:
    """Read a grid written by :func:`dump_spectrogram`."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:8] != _DUMP_MAGIC:
            raise ValueError(f"not a spectrogram dump: {path}")
        k, t = struct.unpack("<II", header[8:])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != k * t:
        raise ValueError(f"truncated spectrogram dump: {path}")
    return SpectrogramMatrix(values_db=data.reshape(k, t).astype(float))
