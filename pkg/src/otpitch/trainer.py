"""Siamese self-supervised training loop on synthetic harmonic tones.

Each step draws a batch of shifted crop pairs plus two augmented views of
the unshifted crop, forwards all four branches through the shared
encoder, applies the selected objective (OT equivariance or the
power-series/cross-entropy baseline) and takes one Adam step.  Loss
weights are rebalanced from per-component gradient norms every step.

Batches are derived from (seed, step), so a run resumed from a
checkpoint replays the exact batch stream of an uninterrupted run.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, NonFiniteLossError
from .frontend import (
    FrontendConfig,
    HarmonicToneSpec,
    augment,
    center_wide_frame,
    compress_frame,
    sample_shifted_pair,
    synth_tone,
)
from .grad_engine import Tape
from .losses import LossState, equiv_loss, inv_loss, ot_loss, sce_loss, update_lambdas
from .model import EncoderConfig, EncoderParams, forward_on_tape, init_params, \
    load_params, save_params

OBJECTIVES = ("pesto-ot", "pesto-baseline")

# Augmentation strengths for the invariance branches.
AUG_GAIN_RANGE_DB = (-6.0, 6.0)
AUG_NOISE_STD = 0.02

# Consecutive aborted steps tolerated before giving up.
MAX_CONSECUTIVE_ABORTS = 25

_DATASET_STREAM = 7
_BATCH_STREAM_BASE = 1_000_000


@dataclass(frozen=True)
class DatasetSpec:
    f0_min_hz: float = 65.0
    f0_max_hz: float = 1000.0
    num_tones: int = 2000
    num_harmonics: int = 4
    amplitude_decay: float = 0.6
    noise_snr_db: float | None = 40.0


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "pesto-ot"
    steps: int = 5000
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    k_max: int = 24
    alpha: float = 1.02
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    log_interval: int = 500
    checkpoint_path: str = "otpitch.ckpt"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.steps < 1 or self.batch_size < 1 or self.log_interval < 1:
            raise ConfigError("steps, batch_size and log_interval must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if self.k_max < 0:
            raise ConfigError("k_max must be nonnegative")
        if self.objective == "pesto-baseline" and self.alpha <= 1.0:
            raise ConfigError("alpha must be > 1 for the baseline objective")
        ds = self.dataset
        if not (0 < ds.f0_min_hz < ds.f0_max_hz):
            raise ConfigError("need 0 < f0_min_hz < f0_max_hz")
        if ds.num_tones < 1 or ds.num_harmonics < 1:
            raise ConfigError("num_tones and num_harmonics must be >= 1")
        front = self.frontend()
        top = front.bin_frequency(front.n_bins)
        if ds.f0_min_hz < front.f_min or ds.f0_max_hz > top:
            raise ConfigError(
                f"f0 range [{ds.f0_min_hz}, {ds.f0_max_hz}] Hz outside the "
                f"transform range [{front.f_min:.1f}, {top:.1f}] Hz"
            )

    def frontend(self) -> FrontendConfig:
        return FrontendConfig(k_max=self.k_max)

    def metrics_path(self) -> str:
        return str(self.checkpoint_path) + ".metrics.jsonl"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        if not isinstance(data, dict):
            raise ConfigError("train config must be a JSON object")
        data = dict(data)
        ds_data = data.pop("dataset", {})
        known = set(cls.__dataclass_fields__) - {"dataset"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        ds_known = set(DatasetSpec.__dataclass_fields__)
        ds_unknown = set(ds_data) - ds_known
        if ds_unknown:
            raise ConfigError(f"unknown dataset fields: {sorted(ds_unknown)}")
        try:
            return cls(dataset=DatasetSpec(**ds_data), **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)


@dataclass(frozen=True)
class TrainExample:
    """One batch element: shifted crop pair plus two augmented views."""

    x: np.ndarray
    x_k: np.ndarray
    x_aug_a: np.ndarray
    x_aug_b: np.ndarray
    k: int

    def mirrored(self) -> "TrainExample":
        """Relabel the pair (x, x_k, k) -> (x_k, x, -k).

        The invariance views stay attached to the underlying source
        frame, which is what makes training order-invariant.
        """
        return TrainExample(x=self.x_k, x_k=self.x, x_aug_a=self.x_aug_a,
                            x_aug_b=self.x_aug_b, k=-self.k)


@dataclass(frozen=True)
class TrainState:
    params: EncoderParams
    opt_m: dict
    opt_v: dict
    step: int
    loss_state: LossState


@dataclass(frozen=True)
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    steps_run: int
    final_metrics: dict


def build_dataset(config: TrainConfig):
    """Synthesize tones and their wide-grid center frames.

    Returns (wide_frames (num_tones, n_bins_wide), f0s).  Deterministic
    given the config, so a resumed run regenerates the same data.
    """
    front = config.frontend()
    ds = config.dataset
    rng = np.random.default_rng([config.seed, _DATASET_STREAM])
    f0s = np.exp(rng.uniform(np.log(ds.f0_min_hz), np.log(ds.f0_max_hz),
                             size=ds.num_tones))
    frames = np.zeros((ds.num_tones, front.n_bins_wide))
    for i, f0 in enumerate(f0s):
        harmonics = min(ds.num_harmonics,
                        max(1, int((front.sample_rate / 2 - 1.0) / f0)))
        spec = HarmonicToneSpec(
            f0=float(f0),
            num_harmonics=harmonics,
            amplitude_decay=ds.amplitude_decay,
            sample_rate=front.sample_rate,
            noise_snr_db=ds.noise_snr_db,
        )
        frames[i] = center_wide_frame(synth_tone(spec, rng), front)
    return frames, f0s


def make_batch(wide_frames, f0s, config: TrainConfig, step: int):
    """Batch for a given step index; pure function of (config, step)."""
    front = config.frontend()
    rng = np.random.default_rng([config.seed, _BATCH_STREAM_BASE + step])
    indices = rng.integers(0, wide_frames.shape[0], size=config.batch_size)
    batch = []
    for i in indices:
        pair = sample_shifted_pair(wide_frames[i], front.k_max, rng, f0=f0s[i])
        aug_a = augment(pair.x, rng, AUG_GAIN_RANGE_DB, AUG_NOISE_STD)
        aug_b = augment(pair.x, rng, AUG_GAIN_RANGE_DB, AUG_NOISE_STD)
        gamma = front.gamma_comp
        batch.append(TrainExample(
            x=compress_frame(pair.x, gamma),
            x_k=compress_frame(pair.x_k, gamma),
            x_aug_a=compress_frame(aug_a, gamma),
            x_aug_b=compress_frame(aug_b, gamma),
            k=pair.k,
        ))
    return batch


def init_train_state(config: TrainConfig,
                     encoder_config: EncoderConfig | None = None) -> TrainState:
    if encoder_config is None:
        encoder_config = EncoderConfig(seed=config.seed)
    front = config.frontend()
    if encoder_config.n_bins_in != front.n_bins:
        raise ConfigError(
            f"encoder expects {encoder_config.n_bins_in} bins but the "
            f"frontend produces {front.n_bins}"
        )
    params = init_params(encoder_config)
    zeros = {name: np.zeros_like(v) for name, v in params.tensors.items()}
    return TrainState(
        params=params,
        opt_m=zeros,
        opt_v={name: np.zeros_like(v) for name, v in params.tensors.items()},
        step=0,
        loss_state=LossState(),
    )


def _component_losses(config: TrainConfig, y, y_k, y_a, y_b, k):
    """Ordered (name, PairLoss-like, branch-pair) triples for one example."""
    if config.objective == "pesto-ot":
        return [
            ("ot", ot_loss(y, y_k, k, config.k_max), ("y", "y_k")),
            ("inv", inv_loss(y_a, y_b), ("y_aug_a", "y_aug_b")),
        ]
    return [
        ("equiv", equiv_loss(y, y_k, k, config.alpha), ("y", "y_k")),
        ("sce", sce_loss(y, y_k, k, config.k_max), ("y", "y_k")),
        ("inv", inv_loss(y_a, y_b), ("y_aug_a", "y_aug_b")),
    ]


def _metrics_skeleton(step: int) -> dict:
    return {
        "step": step,
        "loss_total": None,
        "loss_ot": None,
        "loss_inv": None,
        "loss_equiv": None,
        "loss_sce": None,
        "lambda_ot": None,
        "lambda_inv": None,
        "lambda_equiv": None,
        "lambda_sce": None,
        "grad_norm_ot": None,
        "grad_norm_inv": None,
        "grad_norm_equiv": None,
        "grad_norm_sce": None,
        "overflow_flag": False,
        "aborted": False,
        "aborted_component": None,
    }


def train_step(state: TrainState, batch, config: TrainConfig):
    """One optimization step.  A non-finite loss aborts the step: the
    parameters and optimizer are left untouched, only the step counter
    advances, and the metrics record names the offending component.
    """
    b = len(batch)
    n_in = state.params.config.n_bins_in
    frames = np.stack(
        [ex.x for ex in batch] + [ex.x_k for ex in batch]
        + [ex.x_aug_a for ex in batch] + [ex.x_aug_b for ex in batch]
    ).reshape(4 * b, 1, n_in)

    tape = Tape()
    leaves = {name: tape.leaf(v) for name, v in state.params.tensors.items()}
    posterior = forward_on_tape(tape, leaves, tape.constant(frames),
                                state.params.config)
    post_values = posterior.values

    metrics = _metrics_skeleton(state.step)
    comp_values: dict[str, float] = {}
    adjoints: dict[str, np.ndarray] = {}
    blocks = {"y": 0, "y_k": b, "y_aug_a": 2 * b, "y_aug_b": 3 * b}
    bad_component = None

    for i, ex in enumerate(batch):
        rows = {name: post_values[offset + i] for name, offset in blocks.items()}
        for name, loss, branches in _component_losses(
                config, rows["y"], rows["y_k"], rows["y_aug_a"],
                rows["y_aug_b"], ex.k):
            if getattr(loss, "overflow", False):
                metrics["overflow_flag"] = True
            if not math.isfinite(loss.value):
                bad_component = bad_component or name
                continue
            comp_values[name] = comp_values.get(name, 0.0) + loss.value / b
            adj = adjoints.setdefault(name, np.zeros_like(post_values))
            adj[blocks[branches[0]] + i] += loss.grad_y / b
            adj[blocks[branches[1]] + i] += loss.grad_yk / b

    for name, value in comp_values.items():
        metrics[f"loss_{name}"] = value
    for name in ("ot", "inv", "equiv", "sce"):
        if f"loss_{name}" in metrics and metrics[f"loss_{name}"] is not None:
            metrics[f"lambda_{name}"] = state.loss_state.weight(name)

    if bad_component is not None:
        metrics["aborted"] = True
        metrics["aborted_component"] = bad_component
        return replace(state, step=state.step + 1), metrics

    total = sum(state.loss_state.weight(name) * value
                for name, value in comp_values.items())
    metrics["loss_total"] = float(total)

    # One backward pass per component: the balancing rule needs each
    # component's own parameter-gradient norm.
    comp_grads = {}
    norms = {}
    for name, adj in adjoints.items():
        node_grads = tape.backward_from({posterior.node: adj})
        grads = {pname: node_grads.get(leaf.node, np.zeros_like(leaf.values))
                 for pname, leaf in leaves.items()}
        comp_grads[name] = grads
        norms[name] = float(np.sqrt(sum(float(np.sum(g * g))
                                        for g in grads.values())))
        metrics[f"grad_norm_{name}"] = norms[name]

    if any(not math.isfinite(v) for v in norms.values()):
        metrics["aborted"] = True
        metrics["aborted_component"] = next(
            name for name, v in norms.items() if not math.isfinite(v))
        return replace(state, step=state.step + 1), metrics

    total_grads = {
        pname: sum(state.loss_state.weight(name) * comp_grads[name][pname]
                   for name in comp_grads)
        for pname in state.params.tensors
    }

    # Adam with bias correction.
    t = state.step + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    new_tensors, new_m, new_v = {}, {}, {}
    for pname, value in state.params.tensors.items():
        g = total_grads[pname]
        m = b1 * state.opt_m[pname] + (1 - b1) * g
        v = b2 * state.opt_v[pname] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_tensors[pname] = value - config.learning_rate * m_hat / (
            np.sqrt(v_hat) + config.adam_eps)
        new_m[pname] = m
        new_v[pname] = v

    if any(not np.all(np.isfinite(v)) for v in new_tensors.values()):
        metrics["aborted"] = True
        metrics["aborted_component"] = "update"
        return replace(state, step=state.step + 1), metrics

    new_loss_state = update_lambdas(state.loss_state, norms)
    new_state = TrainState(
        params=EncoderParams(state.params.config, new_tensors),
        opt_m=new_m,
        opt_v=new_v,
        step=state.step + 1,
        loss_state=new_loss_state,
    )
    return new_state, metrics


# -- checkpoint plumbing -------------------------------------------------------

_LAMBDA_NAMES = ("ot", "inv", "equiv", "sce")


def save_train_state(state: TrainState, path,
                     front: FrontendConfig | None = None) -> None:
    if front is None:
        front = FrontendConfig()
    extras = {"__train.step": np.array([float(state.step)])}
    extras["__frontend.params"] = np.array([
        front.sample_rate, front.f_min, float(front.n_bins), float(front.bps),
        float(front.k_max), front.q, float(front.hop), front.gamma_comp,
    ])
    ls = state.loss_state
    extras["__train.lambdas"] = np.array([ls.weight(n) for n in _LAMBDA_NAMES])
    extras["__train.ema_decay"] = np.array([ls.ema_decay])
    for name, value in ls.ema.items():
        extras[f"__train.ema.{name}"] = np.array([value])
    for pname in state.params.tensors:
        extras[f"__opt.m.{pname}"] = state.opt_m[pname]
        extras[f"__opt.v.{pname}"] = state.opt_v[pname]
    save_params(state.params, path, extras=extras)


def load_train_state(path) -> TrainState:
    params, extras = load_params(path)
    lambdas = extras["__train.lambdas"]
    ema = {}
    for key, value in extras.items():
        if key.startswith("__train.ema."):
            ema[key[len("__train.ema."):]] = float(value[0])
    loss_state = LossState(
        lambda_ot=float(lambdas[0]),
        lambda_inv=float(lambdas[1]),
        lambda_equiv=float(lambdas[2]),
        lambda_sce=float(lambdas[3]),
        ema=ema,
        ema_decay=float(extras["__train.ema_decay"][0]),
    )
    opt_m = {p: extras[f"__opt.m.{p}"] for p in params.tensors}
    opt_v = {p: extras[f"__opt.v.{p}"] for p in params.tensors}
    return TrainState(params=params, opt_m=opt_m, opt_v=opt_v,
                      step=int(extras["__train.step"][0]),
                      loss_state=loss_state)


def train(config: TrainConfig, start_state: TrainState | None = None,
          encoder_config: EncoderConfig | None = None) -> TrainResult:
    """Run the loop to ``config.steps``, checkpointing every log interval.

    Pass ``start_state`` (from :func:`load_train_state`) to resume; the
    metrics log is then appended to.
    """
    wide_frames, f0s = build_dataset(config)
    state = start_state if start_state is not None else init_train_state(
        config, encoder_config)
    ckpt_path = Path(config.checkpoint_path)
    if ckpt_path.parent != Path(""):
        ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    metrics_path = config.metrics_path()
    mode = "a" if state.step > 0 else "w"
    consecutive_aborts = 0
    last_metrics: dict = {}
    with open(metrics_path, mode) as log:
        while state.step < config.steps:
            batch = make_batch(wide_frames, f0s, config, state.step)
            state, metrics = train_step(state, batch, config)
            log.write(json.dumps(metrics) + "\n")
            last_metrics = metrics
            if metrics["aborted"]:
                consecutive_aborts += 1
                if consecutive_aborts > MAX_CONSECUTIVE_ABORTS:
                    raise NonFiniteLossError(
                        f"{consecutive_aborts} consecutive non-finite steps",
                        component=metrics["aborted_component"],
                    )
            else:
                consecutive_aborts = 0
            if state.step % config.log_interval == 0 or state.step == config.steps:
                save_train_state(state, ckpt_path, config.frontend())
    save_train_state(state, ckpt_path, config.frontend())
    return TrainResult(str(ckpt_path), metrics_path, state.step, last_metrics)
