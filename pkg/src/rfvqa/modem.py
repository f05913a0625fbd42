"""Deterministic baseband IQ synthesis for the 57-class modulation taxonomy.

Every synthesizer is a pure function of (class, params): the same seed
produces bit-identical samples. Noiseless outputs are normalized to unit
mean power so that AWGN injection at a target SNR is exact.

Phase law for the CPM families (MSK/GMSK): with symbol alphabet
``alpha in {+-1, +-3, ..., +-(M-1)}`` and modulation index
``h = 0.5 / (M - 1)`` (``h = 0.5`` for M=2), the per-sample frequency is
``f[n] = h * alpha_k / (2 * sps)`` cycles/sample, held for the ``sps``
samples of symbol ``k`` (rectangular frequency pulse; Gaussian-filtered
for GMSK), and the phase is ``phi[n] = 2*pi*cumsum(f)``. The maximum
deviation is therefore +-h*(M-1)/(2*sps) = +-1/(4*sps) for every order.
"""

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sp_signal

__all__ = [
    "FAMILIES",
    "ModulationClass",
    "SynthesisParams",
    "IqSignal",
    "UnknownClassError",
    "SynthesisError",
    "ZeroPowerError",
    "list_classes",
    "get_class",
    "class_names",
    "synthesize",
    "add_awgn",
]

# Family listing order (family-major class ordering follows this).
FAMILIES = (
    "OFDM", "QAM", "PSK", "ASK", "FSK", "GFSK", "MSK", "GMSK",
    "AM", "ChirpLFM", "FM", "OOK", "Tone",
)

OFDM_SUBCARRIER_COUNTS = (64, 72, 128, 180, 256, 300, 512, 600, 900, 1024, 1200, 2048)

# Shared waveform conventions. Frequencies are in cycles/sample (fs = 1).
RRC_SPAN_SYMBOLS = 10          # root-raised-cosine filter span
GAUSSIAN_BT = 0.35             # GFSK/GMSK Gaussian filter bandwidth-time product
GAUSSIAN_SPAN_SYMBOLS = 4
FSK_MOD_INDEX = 1.0            # orthogonal tone spacing = symbol rate
OFDM_IFFT_SIZE = 4096          # global IFFT size: one subcarrier spacing for all orders
OFDM_CP_RATIO = 0.25
MESSAGE_CUTOFF = 0.025         # analog message lowpass cutoff (5% of Nyquist)
AM_CARRIER_FREQ = 0.05         # residual carrier so the real trace crosses zero
AM_MOD_INDEX = 0.8
FM_PEAK_DEVIATION = 0.125      # deviation ratio 5 x message cutoff
TONE_FREQ = 0.0625
CHIRP_SWEEP_WIDTH = 0.25       # total sweep width: 50% of Nyquist
LFM_RADAR_PULSE = 4096         # samples per radar sweep
LFM_RADAR_GAP = 1024           # inter-pulse silence
LFM_DATA_SYMBOL = 512          # samples per up/down chirp bit
CHIRP_SS_SYMBOL = 512          # samples per cyclic-shift chirp symbol
CHIRP_SS_ORDER = 64            # cyclic shift alphabet size


class UnknownClassError(ValueError):
    """Raised when a canonical class name is not in the taxonomy."""


class SynthesisError(ValueError):
    """Raised when parameters cannot produce a valid waveform."""


class ZeroPowerError(ValueError):
    """Raised when an operation requires a signal with nonzero power."""


@dataclass(frozen=True)
class ModulationClass:
    """One modulation scheme: canonical name, family, and order parameter."""

    canonical_name: str
    family: str
    order: Optional[int] = None

    def __str__(self) -> str:
        return self.canonical_name


def _build_taxonomy() -> tuple:
    classes = []
    for m in OFDM_SUBCARRIER_COUNTS:
        classes.append(ModulationClass(f"ofdm-{m}", "OFDM", m))
    qam = [(16, False), (32, False), (32, True), (64, False),
           (128, True), (256, False), (512, True), (1024, False)]
    for order, cross in qam:
        name = f"{order}qam-cross" if cross else f"{order}qam"
        classes.append(ModulationClass(name, "QAM", order))
    for order, name in [(2, "bpsk"), (4, "qpsk"), (8, "8psk"),
                        (16, "16psk"), (32, "32psk"), (64, "64psk")]:
        classes.append(ModulationClass(name, "PSK", order))
    for order in (4, 8, 16, 32, 64):
        classes.append(ModulationClass(f"{order}ask", "ASK", order))
    for order in (2, 4, 8, 16):
        classes.append(ModulationClass(f"{order}fsk", "FSK", order))
    for order in (2, 4, 8, 16):
        classes.append(ModulationClass(f"{order}gfsk", "GFSK", order))
    for order in (2, 4, 8, 16):
        classes.append(ModulationClass(f"{order}msk", "MSK", order))
    for order in (2, 4, 8, 16):
        classes.append(ModulationClass(f"{order}gmsk", "GMSK", order))
    for name in ("am-dsb", "am-dsb-sc", "am-usb", "am-lsb"):
        classes.append(ModulationClass(name, "AM", None))
    for name in ("lfm-data", "lfm-radar", "chirp-ss"):
        classes.append(ModulationClass(name, "ChirpLFM", None))
    classes.append(ModulationClass("fm", "FM", None))
    classes.append(ModulationClass("ook", "OOK", None))
    classes.append(ModulationClass("tone", "Tone", None))
    return tuple(classes)


_CLASSES = _build_taxonomy()
_BY_NAME = {c.canonical_name: c for c in _CLASSES}
assert len(_CLASSES) == 57 and len(_BY_NAME) == 57


def list_classes() -> Sequence[ModulationClass]:
    """All 57 classes in fixed family-major, ascending-order order."""
    return _CLASSES


def class_names() -> list:
    """Canonical names of all 57 classes, in listing order."""
    return [c.canonical_name for c in _CLASSES]


def get_class(name) -> ModulationClass:
    """Resolve a canonical class name (or pass a ModulationClass through)."""
    if isinstance(name, ModulationClass):
        return name
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnknownClassError(f"unknown modulation class: {name!r}") from None


@dataclass(frozen=True)
class SynthesisParams:
    """Waveform synthesis knobs.

    ``num_samples`` defaults to K + (K-1)*H for the default STFT config
    (K=512, H=256), i.e. exactly 512 frames. Callers pairing synthesis
    with a different STFT config must size num_samples themselves.
    """

    num_samples: int = 512 + 511 * 256
    sample_rate: float = 1.0
    samples_per_symbol: int = 8
    carrier_offset: float = 0.0
    excess_bandwidth: float = 0.35
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise SynthesisError("num_samples must be positive")
        if self.samples_per_symbol < 2:
            raise SynthesisError("samples_per_symbol must be >= 2 (Nyquist)")
        if not -0.5 <= self.carrier_offset < 0.5:
            raise SynthesisError("carrier_offset must lie in [-0.5, 0.5)")
        if not 0.0 < self.excess_bandwidth <= 1.0:
            raise SynthesisError("excess_bandwidth must lie in (0, 1]")
        if self.sample_rate <= 0:
            raise SynthesisError("sample_rate must be positive")


@dataclass
class IqSignal:
    """Complex baseband sample sequence with metadata.

    I is the real part, Q the imaginary part. ``snr_db is None`` marks a
    noiseless signal (unit mean power by construction).
    """

    samples: np.ndarray
    sample_rate: float
    label: ModulationClass
    snr_db: Optional[float] = None

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


# ---------------------------------------------------------------------------
# Filters and constellations
# ---------------------------------------------------------------------------

def rrc_taps(sps: int, span: int, rolloff: float) -> np.ndarray:
    """Root-raised-cosine taps spanning ``span`` symbols at ``sps`` samples/symbol."""
    n = span * sps
    t = (np.arange(n + 1) - n / 2) / sps  # time in symbol durations
    beta = rolloff
    taps = np.zeros(t.shape)
    # generic points
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.sin(np.pi * t * (1 - beta)) + 4 * beta * t * np.cos(np.pi * t * (1 + beta))
        den = np.pi * t * (1 - (4 * beta * t) ** 2)
        generic = num / den
    taps = generic
    # removable singularities
    taps[t == 0.0] = 1.0 - beta + 4 * beta / np.pi
    singular = np.isclose(np.abs(t), 1.0 / (4 * beta))
    if np.any(singular):
        taps[singular] = (beta / np.sqrt(2)) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
            + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
        )
    return taps / np.sqrt(np.sum(taps ** 2))


def gaussian_taps(bt: float, sps: int, span: int) -> np.ndarray:
    """Gaussian frequency-pulse filter with unit DC gain."""
    n = span * sps
    t = (np.arange(n + 1) - n / 2) / sps
    sigma = np.sqrt(np.log(2)) / (2 * np.pi * bt)  # in symbol durations
    taps = np.exp(-0.5 * (t / sigma) ** 2)
    return taps / np.sum(taps)


def _unit_energy(points: np.ndarray) -> np.ndarray:
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def _square_qam(order: int) -> np.ndarray:
    side = int(round(np.sqrt(order)))
    if side * side == order:
        re, im = np.meshgrid(np.linspace(-1, 1, side), np.linspace(-1, 1, side))
    else:  # rectangular grid (32qam = 4 x 8)
        rows = int(round(np.sqrt(order / 2)))
        re, im = np.meshgrid(np.linspace(-1, 1, rows), np.linspace(-1, 1, 2 * rows))
    return _unit_energy((re + 1j * im).ravel())


def _cross_qam(order: int) -> np.ndarray:
    # corner-removed rectangles: 6x6-4, 12x12-16, 24x24-64
    grid_n, corner = {32: (6, 1), 128: (12, 2), 512: (24, 4)}[order]
    vals = np.linspace(-1, 1, grid_n)
    pts = []
    for ix, x in enumerate(vals):
        for iy, y in enumerate(vals):
            in_x = ix < corner or ix >= grid_n - corner
            in_y = iy < corner or iy >= grid_n - corner
            if in_x and in_y:
                continue
            pts.append(x + 1j * y)
    assert len(pts) == order
    return _unit_energy(np.array(pts))


def _constellation(cls: ModulationClass) -> np.ndarray:
    if cls.family == "PSK":
        m = cls.order
        if m == 2:
            return np.array([1.0 + 0j, -1.0 + 0j])
        if m == 4:
            return np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))
        return np.exp(2j * np.pi * np.arange(m) / m)
    if cls.family == "ASK":
        return _unit_energy(np.linspace(-1, 1, cls.order).astype(complex))
    if cls.family == "OOK":
        return _unit_energy(np.array([0.0 + 0j, 1.0 + 0j]))
    if cls.family == "QAM":
        if cls.canonical_name.endswith("-cross"):
            return _cross_qam(cls.order)
        return _square_qam(cls.order)
    raise SynthesisError(f"{cls.canonical_name} is not a linear-constellation class")


# ---------------------------------------------------------------------------
# Family synthesizers (each returns >= num_samples raw samples)
# ---------------------------------------------------------------------------

def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SynthesisError(msg)


def _pulse_shaped(symbols: np.ndarray, sps: int, rolloff: float, num_samples: int) -> np.ndarray:
    """Upsample symbols and apply the RRC shaper; symbol k peaks at sample k*sps."""
    up = np.zeros(len(symbols) * sps, dtype=complex)
    up[::sps] = symbols
    taps = rrc_taps(sps, RRC_SPAN_SYMBOLS, rolloff)
    shaped = sp_signal.fftconvolve(up, taps)
    delay = (len(taps) - 1) // 2
    return shaped[delay:delay + num_samples]


def _synth_linear(cls, params, rng) -> np.ndarray:
    sps = params.samples_per_symbol
    _require(params.num_samples >= sps, "num_samples shorter than one symbol")
    const = _constellation(cls)
    n_sym = -(-params.num_samples // sps) + RRC_SPAN_SYMBOLS + 2
    symbols = const[rng.integers(0, len(const), n_sym)]
    return _pulse_shaped(symbols, sps, params.excess_bandwidth, params.num_samples)


def _synth_fsk(cls, params, rng, gaussian: bool) -> np.ndarray:
    m = cls.order
    # widen symbols as the tone count grows so the comb stays inside Nyquist
    sps = max(params.samples_per_symbol, 4 * m)
    _require(params.num_samples >= sps, "num_samples shorter than one symbol")
    spacing = FSK_MOD_INDEX / sps
    levels = (np.arange(m) - (m - 1) / 2) * spacing
    n_sym = -(-params.num_samples // sps) + GAUSSIAN_SPAN_SYMBOLS + 2
    freq = np.repeat(levels[rng.integers(0, m, n_sym)], sps)
    if gaussian:
        freq = sp_signal.fftconvolve(freq, gaussian_taps(GAUSSIAN_BT, sps, GAUSSIAN_SPAN_SYMBOLS), mode="same")
    phase = 2 * np.pi * np.cumsum(freq)
    return np.exp(1j * phase)[:params.num_samples]


def _synth_cpm(cls, params, rng, gaussian: bool) -> np.ndarray:
    m = cls.order
    sps = params.samples_per_symbol
    _require(params.num_samples >= sps, "num_samples shorter than one symbol")
    h = 0.5 if m == 2 else 0.5 / (m - 1)
    n_sym = -(-params.num_samples // sps) + GAUSSIAN_SPAN_SYMBOLS + 2
    alphas = 2 * rng.integers(0, m, n_sym) - (m - 1)
    freq = np.repeat(alphas * h / (2 * sps), sps)
    if gaussian:
        freq = sp_signal.fftconvolve(freq, gaussian_taps(GAUSSIAN_BT, sps, GAUSSIAN_SPAN_SYMBOLS), mode="same")
    phase = 2 * np.pi * np.cumsum(freq)
    return np.exp(1j * phase)[:params.num_samples]


def _synth_ofdm(cls, params, rng) -> np.ndarray:
    m = cls.order
    nfft = OFDM_IFFT_SIZE
    cp = int(nfft * OFDM_CP_RATIO)
    sym_len = nfft + cp
    _require(params.num_samples >= sym_len, "num_samples shorter than one OFDM frame")
    n_sym = -(-params.num_samples // sym_len)
    # m subcarriers symmetric around (and excluding) DC
    idx = np.concatenate([np.arange(-(m // 2), 0), np.arange(1, m // 2 + 1)])
    qpsk = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, (n_sym, m))))
    out = np.empty(n_sym * sym_len, dtype=complex)
    for k in range(n_sym):
        spec = np.zeros(nfft, dtype=complex)
        spec[idx % nfft] = qpsk[k]
        body = np.fft.ifft(spec)
        out[k * sym_len:k * sym_len + cp] = body[-cp:]
        out[k * sym_len + cp:(k + 1) * sym_len] = body
    return out[:params.num_samples]


def _lowpass_message(rng, num_samples: int) -> np.ndarray:
    """Band-limited Gaussian message, peak-normalized to 1."""
    taps = sp_signal.firwin(513, MESSAGE_CUTOFF, fs=1.0)
    raw = rng.standard_normal(num_samples + len(taps))
    msg = sp_signal.fftconvolve(raw, taps, mode="same")[:num_samples]
    return msg / np.max(np.abs(msg))


def _synth_am(cls, params, rng) -> np.ndarray:
    n = params.num_samples
    msg = _lowpass_message(rng, n)
    carrier = np.exp(2j * np.pi * AM_CARRIER_FREQ * np.arange(n))
    if cls.canonical_name == "am-dsb":
        base = 1.0 + AM_MOD_INDEX * msg
    elif cls.canonical_name == "am-dsb-sc":
        base = msg
    elif cls.canonical_name == "am-usb":
        base = sp_signal.hilbert(msg)
    elif cls.canonical_name == "am-lsb":
        base = np.conj(sp_signal.hilbert(msg))
    else:
        raise SynthesisError(f"not an AM class: {cls.canonical_name}")
    return base * carrier


def _synth_fm(params, rng) -> np.ndarray:
    msg = _lowpass_message(rng, params.num_samples)
    phase = 2 * np.pi * FM_PEAK_DEVIATION * np.cumsum(msg)
    return np.exp(1j * phase)


def _synth_tone(params) -> np.ndarray:
    return np.exp(2j * np.pi * TONE_FREQ * np.arange(params.num_samples))


def _chirp_pulse(length: int, f_start: float, f_stop: float) -> np.ndarray:
    freq = np.linspace(f_start, f_stop, length, endpoint=False)
    return np.exp(2j * np.pi * np.cumsum(freq))


def _synth_lfm_radar(params) -> np.ndarray:
    _require(params.num_samples >= LFM_RADAR_PULSE, "num_samples shorter than one radar pulse")
    half = CHIRP_SWEEP_WIDTH / 2
    pulse = _chirp_pulse(LFM_RADAR_PULSE, -half, half)
    period = np.concatenate([pulse, np.zeros(LFM_RADAR_GAP, dtype=complex)])
    reps = -(-params.num_samples // len(period))
    return np.tile(period, reps)[:params.num_samples]


def _synth_lfm_data(params, rng) -> np.ndarray:
    _require(params.num_samples >= LFM_DATA_SYMBOL, "num_samples shorter than one chirp symbol")
    half = CHIRP_SWEEP_WIDTH / 2
    n_sym = -(-params.num_samples // LFM_DATA_SYMBOL)
    bits = rng.integers(0, 2, n_sym)
    ramp = np.linspace(-half, half, LFM_DATA_SYMBOL, endpoint=False)
    freq = np.concatenate([ramp if b == 0 else ramp[::-1] for b in bits])
    return np.exp(2j * np.pi * np.cumsum(freq))[:params.num_samples]


def _synth_chirp_ss(params, rng) -> np.ndarray:
    # cyclically shifted up-chirps (chirp spread spectrum)
    _require(params.num_samples >= CHIRP_SS_SYMBOL, "num_samples shorter than one chirp symbol")
    length, order = CHIRP_SS_SYMBOL, CHIRP_SS_ORDER
    half = CHIRP_SWEEP_WIDTH / 2
    n_sym = -(-params.num_samples // length)
    shifts = rng.integers(0, order, n_sym)
    base = np.linspace(-half, half, length, endpoint=False)
    chunks = []
    for s in shifts:
        k = int(round(s * length / order))
        chunks.append(np.roll(base, -k))
    freq = np.concatenate(chunks)
    return np.exp(2j * np.pi * np.cumsum(freq))[:params.num_samples]


def synthesize(mod_class, params: SynthesisParams = SynthesisParams()) -> IqSignal:
    """Synthesize a unit-power noiseless IqSignal of exactly ``num_samples``.

    Deterministic: identical (class, params) including seed yields
    bit-identical output.
    """
    cls = get_class(mod_class)
    rng = np.random.default_rng(params.seed)

    if cls.family in ("PSK", "ASK", "QAM", "OOK"):
        x = _synth_linear(cls, params, rng)
    elif cls.family == "FSK":
        x = _synth_fsk(cls, params, rng, gaussian=False)
    elif cls.family == "GFSK":
        x = _synth_fsk(cls, params, rng, gaussian=True)
    elif cls.family == "MSK":
        x = _synth_cpm(cls, params, rng, gaussian=False)
    elif cls.family == "GMSK":
        x = _synth_cpm(cls, params, rng, gaussian=True)
    elif cls.family == "OFDM":
        x = _synth_ofdm(cls, params, rng)
    elif cls.family == "AM":
        x = _synth_am(cls, params, rng)
    elif cls.family == "FM":
        x = _synth_fm(params, rng)
    elif cls.family == "Tone":
        x = _synth_tone(params)
    elif cls.family == "ChirpLFM":
        if cls.canonical_name == "lfm-radar":
            x = _synth_lfm_radar(params)
        elif cls.canonical_name == "lfm-data":
            x = _synth_lfm_data(params, rng)
        else:
            x = _synth_chirp_ss(params, rng)
    else:  # pragma: no cover - taxonomy is closed
        raise SynthesisError(f"no synthesizer for family {cls.family}")

    x = np.asarray(x, dtype=complex)
    if len(x) != params.num_samples:
        raise SynthesisError(
            f"synthesizer produced {len(x)} samples, expected {params.num_samples}")
    if params.carrier_offset != 0.0:
        x = x * np.exp(2j * np.pi * params.carrier_offset * np.arange(len(x)))
    power = np.mean(np.abs(x) ** 2)
    if power <= 0:
        raise SynthesisError("synthesized signal has zero power")
    x = x / np.sqrt(power)
    return IqSignal(samples=x, sample_rate=params.sample_rate, label=cls, snr_db=None)


def add_awgn(signal: IqSignal, snr_db: float, seed: int) -> IqSignal:
    """Add circularly symmetric complex Gaussian noise at the target SNR.

    Noise variance per complex sample is signal_power / 10^(snr_db/10).
    ``snr_db = inf`` is the noiseless path: the signal is returned
    bit-identical. Deterministic in ``seed``.
    """
    power = signal.power
    if power <= 0:
        raise ZeroPowerError("cannot add noise to a zero-power signal")
    if np.isinf(snr_db) and snr_db > 0:
        return replace(signal, samples=signal.samples.copy())
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite (or +inf for the noiseless path)")
    rng = np.random.default_rng(seed)
    n = len(signal.samples)
    noise_var = power / (10.0 ** (snr_db / 10.0))
    scale = np.sqrt(noise_var / 2.0)
    noise = scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return IqSignal(
        samples=signal.samples + noise,
        sample_rate=signal.sample_rate,
        label=signal.label,
        snr_db=snr_db,
    )
