"""Pitch decoding, calibration and RPA/RCA metrics.

Self-supervised posteriors locate pitch only up to a constant bin
translation, so decoding goes through a calibration offset estimated
from reference tones with known f0.  Metrics follow the common MIR
convention: a frame is correct when its pitch error is within a cent
threshold (50 by default, stated in every report); chroma accuracy folds
the error modulo one octave.  Unvoiced reference frames (f0 = 0) are
excluded.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ShapeError
from .frontend import (
    FrontendConfig,
    HarmonicToneSpec,
    compress_frame,
    log_freq_transform,
    read_annotations,
    read_wav,
    synth_tone,
)
from .model import EncoderParams, encode, load_params

DEFAULT_THRESHOLD_CENTS = 50.0
DEFAULT_REFERENCE_F0 = 220.0


@dataclass(frozen=True)
class Calibration:
    """Affine map from posterior bins to Hz."""

    offset_bins: float
    bins_per_semitone: int
    f_ref_hz: float

    def __post_init__(self):
        if not np.isfinite(self.offset_bins):
            raise DomainError("calibration offset must be finite")
        if self.bins_per_semitone < 1 or self.f_ref_hz <= 0:
            raise DomainError("invalid calibration grid")

    def bin_to_hz(self, bin_index: float) -> float:
        return self.f_ref_hz * 2.0 ** (
            (bin_index + self.offset_bins) / (12.0 * self.bins_per_semitone))

    def hz_to_bin(self, f0: float) -> float:
        return 12.0 * self.bins_per_semitone * np.log2(f0 / self.f_ref_hz)


def refine_peak(posterior) -> float:
    """Argmax refined by a mass-weighted average over +-2 neighbors."""
    posterior = np.asarray(posterior, dtype=float)
    j = int(np.argmax(posterior))
    lo = max(0, j - 2)
    hi = min(posterior.size, j + 3)
    window = posterior[lo:hi]
    total = window.sum()
    if total <= 0:
        return float(j)
    return float(np.arange(lo, hi) @ window / total)


def decode_pitch(posterior, calibration: Calibration) -> float:
    """f0 estimate in Hz for one posterior."""
    return calibration.bin_to_hz(refine_peak(posterior))


def calibrate(encode_fn, references, bins_per_semitone: int,
              f_ref_hz: float) -> Calibration:
    """Median offset between true and decoded raw bins over references.

    ``references`` is a list of (frame, f0_hz); ``encode_fn`` maps a
    frame to a posterior.
    """
    if not references:
        raise DomainError("at least one reference tone is required")
    offsets = []
    for frame, f0 in references:
        if f0 <= 0:
            raise DomainError("reference f0 must be positive")
        raw = refine_peak(encode_fn(frame))
        true_bin = 12.0 * bins_per_semitone * np.log2(f0 / f_ref_hz)
        offsets.append(true_bin - raw)
    return Calibration(float(np.median(offsets)), bins_per_semitone, f_ref_hz)


def _cent_errors(estimates, references):
    estimates = np.asarray(estimates, dtype=float)
    references = np.asarray(references, dtype=float)
    if estimates.shape != references.shape:
        raise ShapeError(
            f"estimates {estimates.shape} vs references {references.shape}")
    voiced = references > 0
    errors = 1200.0 * np.log2(estimates[voiced] / references[voiced])
    return errors, voiced


def rpa(estimates, references,
        threshold_cents: float = DEFAULT_THRESHOLD_CENTS) -> float:
    """Fraction of voiced frames with |pitch error| <= threshold cents."""
    errors, voiced = _cent_errors(estimates, references)
    if errors.size == 0:
        return 0.0
    return float(np.mean(np.abs(errors) <= threshold_cents))


def rca(estimates, references,
        threshold_cents: float = DEFAULT_THRESHOLD_CENTS) -> float:
    """Like rpa but with the error folded modulo 1200 into [-600, 600]."""
    errors, voiced = _cent_errors(estimates, references)
    if errors.size == 0:
        return 0.0
    folded = np.mod(errors + 600.0, 1200.0) - 600.0
    return float(np.mean(np.abs(folded) <= threshold_cents))


@dataclass(frozen=True)
class EvalReport:
    rpa: float
    rca: float
    errors_cents: np.ndarray
    n_voiced: int
    n_unvoiced: int
    threshold_cents: float = DEFAULT_THRESHOLD_CENTS

    def to_text(self) -> str:
        return (
            f"frames: {self.n_voiced} voiced, {self.n_unvoiced} unvoiced "
            f"(unvoiced excluded)\n"
            f"RPA @ {self.threshold_cents:g} cents: {100 * self.rpa:6.2f} %\n"
            f"RCA @ {self.threshold_cents:g} cents: {100 * self.rca:6.2f} %\n"
            "(threshold and voicing handling follow common MIR convention)"
        )


def evaluate_frames(estimates, references,
                    threshold_cents: float = DEFAULT_THRESHOLD_CENTS) -> EvalReport:
    errors, voiced = _cent_errors(estimates, references)
    return EvalReport(
        rpa=rpa(estimates, references, threshold_cents),
        rca=rca(estimates, references, threshold_cents),
        errors_cents=errors,
        n_voiced=int(voiced.sum()),
        n_unvoiced=int((~voiced).sum()),
        threshold_cents=threshold_cents,
    )


# -- checkpoint-level evaluation ----------------------------------------------


def load_checkpoint(path) -> tuple[EncoderParams, FrontendConfig]:
    """Read encoder parameters and the frontend settings they were trained with."""
    params, extras = load_params(path)
    key = "__frontend.params"
    if key not in extras:
        raise FormatError(f"{path}: checkpoint lacks frontend settings")
    v = extras[key]
    front = FrontendConfig(
        sample_rate=float(v[0]), f_min=float(v[1]), n_bins=int(v[2]),
        bps=int(v[3]), k_max=int(v[4]), q=float(v[5]), hop=int(v[6]),
        gamma_comp=float(v[7]),
    )
    return params, front


def reference_calibration(params: EncoderParams, front: FrontendConfig,
                          f0: float = DEFAULT_REFERENCE_F0) -> Calibration:
    """Single-tone calibration from a clean synthetic reference."""
    spec = HarmonicToneSpec(f0=f0, sample_rate=front.sample_rate)
    samples = synth_tone(spec, np.random.default_rng(0))
    spec_frames = log_freq_transform(
        samples, front.sample_rate, front.f_min, front.n_bins,
        bps=front.bps, q=front.q, hop=front.hop)
    center = spec_frames.frames[spec_frames.frames.shape[0] // 2]
    frame = compress_frame(center, front.gamma_comp)
    return calibrate(lambda fr: encode(params, fr), [(frame, f0)],
                     front.bps, front.f_min)


def eval_directory(params: EncoderParams, front: FrontendConfig, data_dir,
                   calibration: Calibration | None = None,
                   threshold_cents: float = DEFAULT_THRESHOLD_CENTS) -> EvalReport:
    """Evaluate on a directory of WAV files with time_sec,f0_hz annotations."""
    data_dir = Path(data_dir)
    wavs = sorted(data_dir.glob("*.wav"))
    if not wavs:
        raise DomainError(f"{data_dir}: no WAV files found")
    if calibration is None:
        calibration = reference_calibration(params, front)
    estimates, references = [], []
    for wav_path in wavs:
        csv_path = wav_path.with_suffix(".csv")
        if not csv_path.exists():
            raise DomainError(f"{csv_path}: missing annotation file")
        rate, samples = read_wav(wav_path)
        times, f0s = read_annotations(csv_path)
        spec_frames = log_freq_transform(
            samples, rate, front.f_min, front.n_bins,
            bps=front.bps, q=front.q, hop=front.hop)
        for fi in range(spec_frames.frames.shape[0]):
            t = fi * front.hop / rate
            ref = float(f0s[np.argmin(np.abs(times - t))]) if times.size else 0.0
            frame = compress_frame(spec_frames.frames[fi], front.gamma_comp)
            estimates.append(decode_pitch(encode(params, frame), calibration))
            references.append(ref)
    return evaluate_frames(estimates, references, threshold_cents)


# -- cross-evaluation table ----------------------------------------------------


@dataclass(frozen=True)
class CrossEvalTable:
    rows: list  # (train_set, eval_set, rpa, rca)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("train_set,eval_set,rpa,rca\n")
        for train_set, eval_set, rpa_v, rca_v in self.rows:
            buf.write(f"{train_set},{eval_set},{rpa_v:.6f},{rca_v:.6f}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        eval_sets = sorted({r[1] for r in self.rows})
        train_sets = sorted({r[0] for r in self.rows})
        cells = {(r[0], r[1]): (r[2], r[3]) for r in self.rows}
        width = max(12, *(len(s) + 2 for s in eval_sets + train_sets))
        lines = ["RPA / RCA (%), rows = training set, columns = evaluation set"]
        header = "".ljust(width) + "".join(s.rjust(width) for s in eval_sets)
        lines.append(header)
        for train_set in train_sets:
            row = train_set.ljust(width)
            for eval_set in eval_sets:
                rpa_v, rca_v = cells.get((train_set, eval_set), (np.nan, np.nan))
                row += f"{100 * rpa_v:5.1f}/{100 * rca_v:5.1f}".rjust(width)
            lines.append(row)
        return "\n".join(lines)


def cross_eval(checkpoints: dict, eval_sets: dict,
               threshold_cents: float = DEFAULT_THRESHOLD_CENTS) -> CrossEvalTable:
    """RPA/RCA for every (checkpoint, eval set) cell.

    ``checkpoints`` maps training-set names to checkpoint paths,
    ``eval_sets`` maps evaluation-set names to data directories.
    """
    rows = []
    for train_name, ckpt_path in checkpoints.items():
        if not Path(ckpt_path).exists():
            raise DomainError(
                f"cell ({train_name}, *): missing checkpoint {ckpt_path}")
        params, front = load_checkpoint(ckpt_path)
        calibration = reference_calibration(params, front)
        for eval_name, data_dir in eval_sets.items():
            report = eval_directory(params, front, data_dir,
                                    calibration, threshold_cents)
            rows.append((train_name, eval_name, report.rpa, report.rca))
    return CrossEvalTable(rows)
