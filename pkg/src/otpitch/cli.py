"""Command-line interface.

Subcommands: dist (1D OT between weight files), gen (synthetic dataset),
train, eval, cross-eval and bench-stability.  Exit codes: 0 success,
1 numeric failure during training, 2 usage/config/I-O error.  All file
formats are plain CSV/JSON so results can be inspected or plotted with
external tools.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, losses, ot_core, trainer
from .errors import NonFiniteLossError, OtPitchError
from .frontend import FrontendConfig, HarmonicToneSpec, synth_tone, \
    write_annotations, write_wav
from .model import load_params


def _read_distribution_csv(path: str) -> ot_core.DiscreteDistribution:
    """CSV rows of position,weight (optional header); sorted by position."""
    rows = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for lineno, row in enumerate(reader, start=1):
                if not row or not "".join(row).strip():
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    if lineno == 1:
                        continue  # header line
                    raise OtPitchError(
                        f"{path}:{lineno}: malformed CSV row {row!r}") from None
    except OSError as exc:
        raise OtPitchError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise OtPitchError(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    positions = np.array([r[0] for r in rows])
    weights = ot_core.normalize(np.array([r[1] for r in rows]))
    return ot_core.DiscreteDistribution(positions, weights)


def _fmt(values) -> str:
    return " ".join(f"{v:.12g}" for v in np.atleast_1d(values))


def cmd_dist(args) -> int:
    mu = _read_distribution_csv(args.mu)
    nu = _read_distribution_csv(args.nu)
    cost = ot_core.wasserstein_p(mu, nu, args.p)
    print(f"cost {cost:.12g}")
    print(f"distance {cost ** (1.0 / args.p):.12g}")
    if args.grad:
        grad_mu, grad_nu = ot_core.wasserstein_grad(mu, nu, args.p)
        print(f"grad_mu {_fmt(grad_mu)}")
        print(f"grad_nu {_fmt(grad_nu)}")
    return 0


_GEN_FIELDS = {
    "seed": 0,
    "num_tones": 100,
    "f0_min_hz": 65.0,
    "f0_max_hz": 1000.0,
    "num_harmonics": 4,
    "amplitude_decay": 0.6,
    "duration": 1.0,
    "sample_rate": 8000.0,
    "noise_snr_db": 40.0,
}


def cmd_gen(args) -> int:
    with open(args.config) as fh:
        data = json.load(fh)
    unknown = set(data) - set(_GEN_FIELDS)
    if unknown:
        raise OtPitchError(f"unknown gen config fields: {sorted(unknown)}")
    cfg = {**_GEN_FIELDS, **data}
    # Fail the worst-case aliasing check before touching the disk.  The
    # per-tone harmonic count is capped below Nyquist, so the worst case
    # is the highest f0 with its capped count.
    worst = min(cfg["num_harmonics"],
                max(1, int((cfg["sample_rate"] / 2 - 1.0) / cfg["f0_max_hz"])))
    HarmonicToneSpec(
        f0=cfg["f0_max_hz"], num_harmonics=worst,
        amplitude_decay=cfg["amplitude_decay"], duration=cfg["duration"],
        sample_rate=cfg["sample_rate"], noise_snr_db=cfg["noise_snr_db"])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    hop = FrontendConfig().hop
    tones = []
    for i in range(cfg["num_tones"]):
        f0 = float(np.exp(rng.uniform(np.log(cfg["f0_min_hz"]),
                                      np.log(cfg["f0_max_hz"]))))
        harmonics = min(cfg["num_harmonics"],
                        max(1, int((cfg["sample_rate"] / 2 - 1.0) / f0)))
        spec = HarmonicToneSpec(
            f0=f0, num_harmonics=harmonics,
            amplitude_decay=cfg["amplitude_decay"], duration=cfg["duration"],
            sample_rate=cfg["sample_rate"], noise_snr_db=cfg["noise_snr_db"])
        samples = synth_tone(spec, rng)
        wav_name = f"tone_{i:04d}.wav"
        csv_name = f"tone_{i:04d}.csv"
        write_wav(out_dir / wav_name, cfg["sample_rate"], samples)
        times = np.arange(0, samples.size, hop) / cfg["sample_rate"]
        write_annotations(out_dir / csv_name, times, np.full(times.size, f0))
        tones.append({"wav": wav_name, "csv": csv_name, "f0_hz": f0})
    manifest = {"config": cfg, "tones": tones}
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(tones)} tones to {out_dir}")
    return 0


def cmd_train(args) -> int:
    config = trainer.TrainConfig.from_json_file(args.config)
    start_state = None
    if args.resume:
        start_state = trainer.load_train_state(args.resume)
    result = trainer.train(config, start_state=start_state)
    print(f"checkpoint {result.checkpoint_path}")
    print(f"metrics {result.metrics_path}")
    final = {k: v for k, v in result.final_metrics.items() if v is not None}
    print(f"final {json.dumps(final)}")
    return 0


def _load_calibration(path) -> evaluation.Calibration:
    with open(path) as fh:
        data = json.load(fh)
    try:
        return evaluation.Calibration(
            offset_bins=float(data["offset_bins"]),
            bins_per_semitone=int(data["bins_per_semitone"]),
            f_ref_hz=float(data["f_ref_hz"]))
    except KeyError as exc:
        raise OtPitchError(f"{path}: missing calibration field {exc}") from exc


def cmd_eval(args) -> int:
    params, front = evaluation.load_checkpoint(args.checkpoint)
    calibration = _load_calibration(args.calib) if args.calib else None
    report = evaluation.eval_directory(
        params, front, args.data, calibration,
        threshold_cents=args.threshold_cents)
    print(report.to_text())
    if args.dump_errors:
        with open(args.dump_errors, "w") as fh:
            fh.write("error_cents\n")
            for e in report.errors_cents:
                fh.write(f"{e:.6f}\n")
        print(f"cent errors written to {args.dump_errors}")
    return 0


def cmd_cross_eval(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    try:
        checkpoints = manifest["checkpoints"]
        eval_sets = manifest["eval_sets"]
    except KeyError as exc:
        raise OtPitchError(f"{args.manifest}: missing field {exc}") from exc
    threshold = float(manifest.get("threshold_cents", 50.0))
    table = evaluation.cross_eval(checkpoints, eval_sets, threshold)
    print(table.to_csv(), end="")
    print()
    print(table.to_text())
    if args.out_csv:
        Path(args.out_csv).write_text(table.to_csv())
    return 0


def cmd_bench_stability(args) -> int:
    alphas = [float(a) for a in args.alphas.split(",") if a]
    nbins = [int(n) for n in args.nbins.split(",") if n]
    if not alphas or not nbins:
        raise OtPitchError("--alphas and --nbins must be non-empty lists")
    k, k_max = 3, 8
    rows = []
    for alpha in alphas:
        for n in nbins:
            y = np.zeros(n)
            y[-1] = 1.0  # adversarial: all mass on the top bin
            with np.errstate(over="ignore"):
                max_power = float(np.float64(alpha) ** np.float64(n))
            eq = losses.equiv_loss(y, y, k, alpha)
            ot = losses.ot_loss(y, y, k, k_max)
            rows.append({
                "alpha": alpha,
                "n_bins": n,
                "max_power": max_power,
                "equiv_value": eq.value,
                "equiv_overflow": eq.overflow,
                "ot_value": ot.value,
                "ot_finite": bool(np.isfinite(ot.value)),
            })
    print("alpha,n_bins,max_power,equiv_value,equiv_overflow,ot_value,ot_finite")
    for r in rows:
        print(f"{r['alpha']:g},{r['n_bins']},{r['max_power']:.6g},"
              f"{r['equiv_value']:.6g},{r['equiv_overflow']},"
              f"{r['ot_value']:.6g},{r['ot_finite']}")
    print()
    header = (f"{'alpha':>8} {'n_bins':>8} {'max_power':>12} "
              f"{'equiv_overflow':>15} {'ot_finite':>10}")
    print(header)
    for r in rows:
        print(f"{r['alpha']:>8g} {r['n_bins']:>8} {r['max_power']:>12.4g} "
              f"{str(r['equiv_overflow']):>15} {str(r['ot_finite']):>10}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otpitch",
        description="1D optimal transport tools and a self-supervised "
                    "pitch-estimation pipeline on synthetic tones.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", help="Wasserstein cost/distance between two "
                                    "position,weight CSV files")
    p.add_argument("--mu", required=True, help="CSV file for the first distribution")
    p.add_argument("--nu", required=True, help="CSV file for the second distribution")
    p.add_argument("--p", type=float, default=2.0, help="Wasserstein order (>= 1)")
    p.add_argument("--grad", action="store_true",
                   help="also print cost gradients w.r.t. both weight vectors")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("gen", help="generate a synthetic tone dataset")
    p.add_argument("--config", required=True, help="JSON generation config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the encoder")
    p.add_argument("--config", required=True, help="JSON train config")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory of WAV + CSV annotations")
    p.add_argument("--calib", help="JSON calibration file (default: synthetic "
                                   "single-tone calibration)")
    p.add_argument("--threshold-cents", type=float, default=50.0)
    p.add_argument("--dump-errors", help="write per-frame cent errors as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cross-eval", help="RPA/RCA table over checkpoints x datasets")
    p.add_argument("--manifest", required=True,
                   help="JSON with 'checkpoints' and 'eval_sets' maps")
    p.add_argument("--out-csv", help="also write the CSV table to this path")
    p.set_defaults(func=cmd_cross_eval)

    p = sub.add_parser("bench-stability",
                       help="loss finiteness sweep over alpha and bin counts")
    p.add_argument("--alphas", required=True, help="comma-separated alpha values")
    p.add_argument("--nbins", required=True, help="comma-separated bin counts")
    p.set_defaults(func=cmd_bench_stability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OtPitchError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
