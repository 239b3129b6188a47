"""Translation-equivariant 1D conv encoder producing pitch posteriors.

Stride-1 convolutions with symmetric padding preserve length, so the
network commutes with bin translations up to border effects; a test-only
wrap-padding mode makes the commutation exact.  The final channel is
center-cropped and pushed through a softmax.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .grad_engine import Tape, Tensor

CHECKPOINT_MAGIC = b"OTEQ"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    n_bins_in: int = 216
    n_bins_out: int = 168
    kernel_sizes: tuple = (15, 9, 5, 3)
    channels: tuple = (8, 8, 4, 1)
    leaky_slope: float = 0.3
    padding_mode: str = "zeros"
    seed: int = 0

    def __post_init__(self):
        if len(self.kernel_sizes) != len(self.channels) or not self.kernel_sizes:
            raise ConfigError("kernel_sizes and channels must be equal-length, non-empty")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError("kernel sizes must be odd and positive")
        if any(c < 1 for c in self.channels):
            raise ConfigError("channel counts must be positive")
        if self.channels[-1] != 1:
            raise ConfigError("final layer must collapse to a single channel")
        if not (0 < self.n_bins_out <= self.n_bins_in):
            raise ConfigError("need 0 < n_bins_out <= n_bins_in")
        if self.padding_mode not in ("zeros", "wrap"):
            raise ConfigError(f"unknown padding_mode {self.padding_mode!r}")

    @property
    def crop_start(self) -> int:
        return (self.n_bins_in - self.n_bins_out) // 2

    @property
    def receptive_field(self) -> int:
        return 1 + sum(k - 1 for k in self.kernel_sizes)


@dataclass(frozen=True)
class EncoderParams:
    config: EncoderConfig
    tensors: dict  # name -> np.ndarray


def param_count(config: EncoderConfig) -> int:
    count = 0
    c_in = 1
    for k, c_out in zip(config.kernel_sizes, config.channels):
        count += k * c_in * c_out + c_out
        c_in = c_out
    return count


def init_params(config: EncoderConfig,
                rng: np.random.Generator | None = None) -> EncoderParams:
    """Kaiming-style scaled uniform weights, zero biases; seed-deterministic."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    gain = np.sqrt(2.0 / (1.0 + config.leaky_slope ** 2))
    tensors = {}
    c_in = 1
    for layer, (k, c_out) in enumerate(zip(config.kernel_sizes, config.channels)):
        bound = gain * np.sqrt(3.0 / (c_in * k))
        tensors[f"conv{layer}.weight"] = rng.uniform(-bound, bound, size=(c_out, c_in, k))
        tensors[f"conv{layer}.bias"] = np.zeros(c_out)
        c_in = c_out
    return EncoderParams(config, tensors)


def forward_on_tape(tape: Tape, param_tensors: dict, frames: Tensor,
                    config: EncoderConfig) -> Tensor:
    """Encoder forward pass; ``frames`` has shape (..., 1, n_bins_in).

    ``param_tensors`` maps parameter names to tape Tensors (leaves for
    training, constants for inference).  Returns the posterior tensor of
    shape (..., n_bins_out).
    """
    if frames.shape[-1] != config.n_bins_in or frames.shape[-2] != 1:
        raise ShapeError(
            f"frames must be (..., 1, {config.n_bins_in}); got {frames.shape}"
        )
    h = frames
    n_layers = len(config.kernel_sizes)
    for layer, k in enumerate(config.kernel_sizes):
        h = tape.conv1d(
            h,
            param_tensors[f"conv{layer}.weight"],
            param_tensors[f"conv{layer}.bias"],
            stride=1,
            padding=(k - 1) // 2,
            pad_mode=config.padding_mode,
        )
        if layer < n_layers - 1:
            h = tape.leaky_relu(h, config.leaky_slope)
    logits = tape.reshape(h, h.shape[:-2] + (config.n_bins_in,))
    logits = tape.crop(logits, config.crop_start, config.n_bins_out)
    return tape.softmax(logits)


def encode(params: EncoderParams, frame) -> np.ndarray:
    """Posterior over output bins for one frame of length n_bins_in."""
    frame = np.asarray(frame, dtype=float)
    if frame.shape != (params.config.n_bins_in,):
        raise ShapeError(
            f"frame must have shape ({params.config.n_bins_in},); got {frame.shape}"
        )
    tape = Tape()
    tensors = {name: tape.constant(v) for name, v in params.tensors.items()}
    x = tape.constant(frame.reshape(1, frame.size))
    return forward_on_tape(tape, tensors, x, params.config).values


# -- checkpoint format --------------------------------------------------------
#
# magic "OTEQ" | u32 version | u32 entry count, then per entry:
# u16 name length | name utf-8 | u8 ndim | u32 * ndim dims | f64 LE values.
# Encoder hyperparameters travel as reserved "__config.*" entries so a
# checkpoint is self-describing; callers may append extra named arrays
# (optimizer state, loss state) which come back in the extras dict.

_PAD_MODE_CODE = {"zeros": 0.0, "wrap": 1.0}
_PAD_MODE_NAME = {0.0: "zeros", 1.0: "wrap"}


def _config_entries(config: EncoderConfig) -> dict:
    return {
        "__config.n_bins_in": np.array([float(config.n_bins_in)]),
        "__config.n_bins_out": np.array([float(config.n_bins_out)]),
        "__config.kernel_sizes": np.asarray(config.kernel_sizes, dtype=float),
        "__config.channels": np.asarray(config.channels, dtype=float),
        "__config.leaky_slope": np.array([config.leaky_slope]),
        "__config.padding_mode": np.array([_PAD_MODE_CODE[config.padding_mode]]),
        "__config.seed": np.array([float(config.seed)]),
    }


def _config_from_entries(entries: dict) -> EncoderConfig:
    try:
        return EncoderConfig(
            n_bins_in=int(entries["__config.n_bins_in"][0]),
            n_bins_out=int(entries["__config.n_bins_out"][0]),
            kernel_sizes=tuple(int(v) for v in entries["__config.kernel_sizes"]),
            channels=tuple(int(v) for v in entries["__config.channels"]),
            leaky_slope=float(entries["__config.leaky_slope"][0]),
            padding_mode=_PAD_MODE_NAME[float(entries["__config.padding_mode"][0])],
            seed=int(entries["__config.seed"][0]),
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint missing config entry {exc}") from exc


def save_params(params: EncoderParams, path, extras: dict | None = None) -> None:
    """Write parameters (plus optional extra named arrays) to ``path``."""
    entries = dict(_config_entries(params.config))
    entries.update(params.tensors)
    if extras:
        entries.update(extras)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(entries)))
        for name, values in entries.items():
            arr = np.ascontiguousarray(values, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def _read_exact(fh, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise FormatError("checkpoint truncated", offset=fh.tell())
    return data


def load_params(path) -> tuple[EncoderParams, dict]:
    """Read a checkpoint; returns (params, extras)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad magic {magic!r}", offset=0)
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(
                f"unsupported checkpoint version {version}; "
                f"this build reads version {CHECKPOINT_VERSION}",
                offset=4,
            )
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        entries: dict = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim)
            )
            n_values = int(np.prod(shape)) if shape else 1
            data = _read_exact(fh, 8 * n_values)
            entries[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise FormatError("trailing bytes after last entry", offset=fh.tell() - 1)
    config = _config_from_entries(entries)
    tensors = {}
    extras = {}
    for name, values in entries.items():
        if name.startswith("__config."):
            continue
        if name.startswith("conv"):
            tensors[name] = values
        else:
            extras[name] = values
    params = EncoderParams(config, tensors)
    expected = {f"conv{i}.{kind}" for i in range(len(config.kernel_sizes))
                for kind in ("weight", "bias")}
    if set(tensors) != expected:
        raise FormatError("checkpoint parameter table does not match its config")
    return params, extras
