"""Synthetic harmonic tones and a fixed-Q log-frequency frontend.

Bin frequencies are geometric, f_min * 2^(i / (12 * bps)), so a pitch
shift of s semitones moves spectral content by s * bps bins.  Training
pairs are built by cropping two windows from one wide frame; the crop
offset difference is the known bin shift the Siamese objective is
conditioned on.

Generation is pure given an explicit numpy Generator, so parallel data
production just needs independently seeded streams.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class HarmonicToneSpec:
    """Parameters of one synthetic harmonic tone."""

    f0: float
    num_harmonics: int = 4
    amplitude_decay: float = 0.6
    duration: float = 1.0
    sample_rate: float = 8000.0
    noise_snr_db: float | None = None

    def __post_init__(self):
        if self.f0 <= 0:
            raise DomainError(f"f0 must be positive; got {self.f0!r}")
        if self.num_harmonics < 1:
            raise DomainError("num_harmonics must be >= 1")
        if not (0.0 < self.amplitude_decay <= 1.0):
            raise DomainError("amplitude_decay must be in (0, 1]")
        if self.duration <= 0:
            raise DomainError("duration must be positive")
        if self.f0 * self.num_harmonics >= self.sample_rate / 2:
            raise DomainError(
                f"highest harmonic {self.f0 * self.num_harmonics:.1f} Hz "
                f"aliases at sample rate {self.sample_rate:.0f} Hz"
            )


def synth_tone(spec: HarmonicToneSpec, rng: np.random.Generator) -> np.ndarray:
    """Harmonic stack with random phases, peak-normalized to 0.9.

    Optional white noise at ``noise_snr_db`` relative to the tone power.
    """
    n = int(round(spec.duration * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    signal = np.zeros(n)
    for h in range(1, spec.num_harmonics + 1):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        signal += spec.amplitude_decay ** (h - 1) * np.sin(
            2.0 * np.pi * h * spec.f0 * t + phase
        )
    peak = np.max(np.abs(signal))
    if peak > 0:
        signal *= 0.9 / peak
    if spec.noise_snr_db is not None:
        signal_power = float(np.mean(signal ** 2))
        noise_power = signal_power / 10.0 ** (spec.noise_snr_db / 10.0)
        signal = signal + rng.normal(0.0, np.sqrt(noise_power), size=n)
    return signal


@dataclass(frozen=True)
class FrontendConfig:
    """Desk-scale log-frequency analysis settings.

    ``f_min`` anchors bin 0 of the model's input grid; the wide grid used
    for pair construction extends ``k_max`` bins below and above it.
    """

    sample_rate: float = 8000.0
    f_min: float = 32.7
    n_bins: int = 216
    bps: int = 3
    k_max: int = 24
    q: float = 24.0
    hop: int = 1024
    gamma_comp: float = 10.0

    def __post_init__(self):
        if self.n_bins < 1 or self.bps < 1 or self.k_max < 0:
            raise DomainError("n_bins, bps must be >= 1 and k_max >= 0")
        if self.q <= 0 or self.hop < 1:
            raise DomainError("q must be positive and hop >= 1")
        top = self.f_min * 2.0 ** (self.n_bins / (12.0 * self.bps))
        if top >= self.sample_rate / 2:
            raise DomainError(
                f"top bin {top:.1f} Hz reaches Nyquist at rate {self.sample_rate:.0f}"
            )

    @property
    def n_bins_wide(self) -> int:
        return self.n_bins + 2 * self.k_max

    @property
    def f_min_wide(self) -> float:
        return self.f_min * 2.0 ** (-self.k_max / (12.0 * self.bps))

    def bin_frequency(self, i) -> np.ndarray:
        """Frequency of bin i on the model grid (bin 0 at f_min)."""
        return self.f_min * 2.0 ** (np.asarray(i, dtype=float) / (12.0 * self.bps))


@dataclass(frozen=True)
class LogSpectrogram:
    """Magnitude frames on a geometric frequency grid."""

    frames: np.ndarray  # (time, n_bins)
    bin_frequencies: np.ndarray
    bps: int
    hop: int

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.bin_frequencies.size:
            raise ShapeError("frames must be (time, n_bins) matching bin_frequencies")


@functools.lru_cache(maxsize=8)
def _kernel_bank(sample_rate: float, f_min: float, n_bins: int, bps: int,
                 q: float, max_len: int):
    """Hann-windowed complex exponentials, one per bin, length Q * sr / f.

    Windows longer than the available signal are truncated; only the very
    lowest pad bins are affected at the default settings.
    """
    kernels = []
    for i in range(n_bins):
        f = f_min * 2.0 ** (i / (12.0 * bps))
        n = int(round(q * sample_rate / f))
        n = max(4, min(n, max_len))
        window = np.hanning(n)
        t = (np.arange(n) - (n - 1) / 2.0) / sample_rate
        kernel = window * np.exp(-2j * np.pi * f * t)
        # Unit response to a unit-amplitude complex exponential at f.
        kernels.append(kernel * (2.0 / window.sum()))
    return tuple(kernels)


def log_freq_transform(samples, sample_rate: float, f_min: float, n_bins: int,
                       bps: int = 3, q: float = 24.0,
                       hop: int = 1024) -> LogSpectrogram:
    """Constant-Q-style magnitude spectrogram on a geometric bin grid.

    Frame centers sit at multiples of ``hop``; windows extending past the
    signal are zero-extended.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1:
        raise ShapeError("samples must be 1D")
    top = f_min * 2.0 ** (n_bins / (12.0 * bps))
    if top >= sample_rate / 2:
        raise DomainError(f"top bin {top:.1f} Hz violates Nyquist")
    kernels = _kernel_bank(float(sample_rate), float(f_min), int(n_bins),
                           int(bps), float(q), samples.size)
    centers = np.arange(0, samples.size, hop)
    frames = np.zeros((centers.size, n_bins))
    for fi, center in enumerate(centers):
        for bi, kernel in enumerate(kernels):
            n = kernel.size
            start = int(center) - n // 2
            lo = max(start, 0)
            hi = min(start + n, samples.size)
            if hi <= lo:
                continue
            segment = samples[lo:hi]
            frames[fi, bi] = np.abs(segment @ kernel[lo - start:hi - start])
    freqs = f_min * 2.0 ** (np.arange(n_bins) / (12.0 * bps))
    return LogSpectrogram(frames, freqs, int(bps), int(hop))


def center_wide_frame(samples, config: FrontendConfig) -> np.ndarray:
    """Single wide-grid magnitude frame centered in the signal."""
    samples = np.asarray(samples, dtype=float)
    kernels = _kernel_bank(config.sample_rate, config.f_min_wide,
                           config.n_bins_wide, config.bps, config.q,
                           samples.size)
    center = samples.size // 2
    frame = np.zeros(config.n_bins_wide)
    for bi, kernel in enumerate(kernels):
        n = kernel.size
        start = center - n // 2
        lo = max(start, 0)
        hi = min(start + n, samples.size)
        if hi > lo:
            frame[bi] = np.abs(samples[lo:hi] @ kernel[lo - start:hi - start])
    return frame


@dataclass(frozen=True)
class ShiftedPair:
    """Two crops of one wide frame related by a known bin translation."""

    x: np.ndarray
    x_k: np.ndarray
    k: int
    f0: float = float("nan")
    augmentation: dict = field(default_factory=dict)


def sample_shifted_pair(wide_frame, k_max: int, rng: np.random.Generator,
                        f0: float = float("nan")) -> ShiftedPair:
    """Crop the center window and a window shifted by a random k.

    The second crop starts ``k`` bins lower, so its content appears ``k``
    bins higher: x_k is x translated right by k, matching the sign
    convention of the equivariance losses.
    """
    wide = np.asarray(wide_frame, dtype=float)
    if wide.ndim != 1 or wide.size <= 2 * k_max:
        raise ShapeError(
            f"wide frame must be 1D with more than {2 * k_max} bins; got {wide.shape}"
        )
    n = wide.size - 2 * k_max
    k = int(rng.integers(-k_max, k_max + 1))
    x = wide[k_max:k_max + n].copy()
    x_k = wide[k_max - k:k_max - k + n].copy()
    return ShiftedPair(x=x, x_k=x_k, k=k, f0=f0)


def augment(frame, rng: np.random.Generator, gain_range_db=(-6.0, 6.0),
            noise_std: float = 0.0) -> np.ndarray:
    """Pitch-preserving corruption: random gain plus half-normal noise."""
    frame = np.asarray(frame, dtype=float)
    lo, hi = gain_range_db
    gain = 10.0 ** (rng.uniform(lo, hi) / 20.0)
    out = frame * gain
    if noise_std > 0:
        out = out + np.abs(rng.normal(0.0, noise_std, size=frame.shape))
    return np.clip(out, 0.0, None)


def compress_frame(frame, gamma: float = 10.0) -> np.ndarray:
    """log(1 + gamma * |X|) followed by per-frame max-normalization."""
    out = np.log1p(gamma * np.clip(np.asarray(frame, dtype=float), 0.0, None))
    peak = out.max()
    return out / peak if peak > 0 else out


# -- audio / annotation file formats ----------------------------------------


def write_wav(path, sample_rate: float, samples) -> None:
    """Mono 32-bit float WAV."""
    wavfile.write(path, int(sample_rate), np.asarray(samples, dtype=np.float32))


def read_wav(path):
    """Mono PCM WAV (16-bit int or 32-bit float) -> (sample_rate, float array)."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise DomainError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(float) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(float)
    else:
        raise DomainError(f"{path}: unsupported sample format {data.dtype}")
    return float(rate), samples


def write_annotations(path, times, f0s) -> None:
    """CSV with header time_sec,f0_hz; f0 = 0 marks unvoiced frames."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_sec", "f0_hz"])
        for t, f in zip(times, f0s):
            writer.writerow([f"{t:.6f}", f"{f:.6f}"])


def read_annotations(path):
    """Inverse of :func:`write_annotations`; returns (times, f0s) arrays."""
    times, f0s = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["time_sec", "f0_hz"]:
            raise DomainError(f"{path}: missing time_sec,f0_hz header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                times.append(float(row[0]))
                f0s.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise DomainError(f"{path}:{lineno}: malformed row {row!r}") from exc
    return np.asarray(times), np.asarray(f0s)
