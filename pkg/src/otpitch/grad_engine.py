"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tape` records operations as they execute; :func:`backward`
replays them in reverse to accumulate gradients.  Double precision
throughout.  One tape per training thread; tapes are never shared.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError


class Tensor:
    """Array value plus an optional handle into the recording tape.

    ``node is None`` marks a constant: no gradient is tracked for it.
    """

    __slots__ = ("values", "node")

    def __init__(self, values, node: int | None = None):
        self.values = np.asarray(values, dtype=float)
        self.node = node

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, node={self.node})"


class Tape:
    """Ordered record of operations with their backward rules."""

    def __init__(self):
        self._records = []  # (out_node, input_nodes, backward_fn)
        self._num_nodes = 0

    def _new_node(self) -> int:
        node = self._num_nodes
        self._num_nodes += 1
        return node

    def leaf(self, values) -> Tensor:
        """Register a differentiable input (parameters, probe points)."""
        return Tensor(values, self._new_node())

    @staticmethod
    def constant(values) -> Tensor:
        return Tensor(values, None)

    def _emit(self, values, inputs, backward) -> Tensor:
        values = np.asarray(values, dtype=float)
        assert np.all(np.isfinite(values)), "non-finite forward value on tape"
        out = Tensor(values, self._new_node())
        self._records.append((out.node, tuple(t.node for t in inputs), backward))
        return out

    # -- elementwise and reduction ops ------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"add: {a.shape} vs {b.shape}")
        return self._emit(a.values + b.values, (a, b), lambda g: (g, g))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"mul: {a.shape} vs {b.shape}")
        av, bv = a.values, b.values
        return self._emit(av * bv, (a, b), lambda g: (g * bv, g * av))

    def log(self, x: Tensor) -> Tensor:
        xv = x.values
        return self._emit(np.log(xv), (x,), lambda g: (g / xv,))

    def abs(self, x: Tensor) -> Tensor:
        xv = x.values
        return self._emit(np.abs(xv), (x,), lambda g: (g * np.sign(xv),))

    def pow(self, x: Tensor, exponent: float) -> Tensor:
        e = float(exponent)
        xv = x.values
        return self._emit(xv ** e, (x,), lambda g: (g * e * xv ** (e - 1.0),))

    def sum(self, x: Tensor) -> Tensor:
        shape = x.shape
        return self._emit(x.values.sum(), (x,),
                          lambda g: (np.broadcast_to(g, shape).copy(),))

    def reshape(self, x: Tensor, shape) -> Tensor:
        old = x.shape
        return self._emit(x.values.reshape(shape), (x,),
                          lambda g: (g.reshape(old),))

    def crop(self, x: Tensor, start: int, length: int) -> Tensor:
        """Slice ``length`` entries from the last axis starting at ``start``."""
        if start < 0 or start + length > x.shape[-1]:
            raise ShapeError(f"crop [{start}, {start + length}) out of {x.shape[-1]}")

        def backward(g):
            gx = np.zeros(x.shape)
            gx[..., start:start + length] = g
            return (gx,)

        return self._emit(x.values[..., start:start + length], (x,), backward)

    # -- neural-net ops ----------------------------------------------------

    def affine(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        """x @ w + b with x (..., n_in), w (n_in, n_out), b (n_out,)."""
        n_in, n_out = w.shape
        if x.shape[-1] != n_in or b.shape != (n_out,):
            raise ShapeError(f"affine: x {x.shape}, w {w.shape}, b {b.shape}")
        xv, wv = x.values, w.values

        def backward(g):
            gf = g.reshape(-1, n_out)
            xf = xv.reshape(-1, n_in)
            return (g @ wv.T, xf.T @ gf, gf.sum(axis=0))

        return self._emit(xv @ wv + b.values, (x, w, b), backward)

    def conv1d(self, x: Tensor, kernel: Tensor, bias: Tensor | None = None,
               stride: int = 1, padding: int = 0,
               pad_mode: str = "zeros") -> Tensor:
        """1D convolution: x (..., C_in, L), kernel (C_out, C_in, K).

        ``pad_mode`` is "zeros" or "wrap"; wrap makes the op exactly
        circularly equivariant, which the equivariance tests rely on.
        """
        if kernel.values.ndim != 3:
            raise ShapeError(f"kernel must be (C_out, C_in, K); got {kernel.shape}")
        c_out, c_in, ksize = kernel.shape
        if x.values.ndim < 2 or x.shape[-2] != c_in:
            raise ShapeError(f"conv1d: x {x.shape} incompatible with kernel {kernel.shape}")
        if bias is not None and bias.shape != (c_out,):
            raise ShapeError(f"conv1d: bias {bias.shape} must be ({c_out},)")
        if pad_mode not in ("zeros", "wrap"):
            raise ShapeError(f"unknown pad_mode {pad_mode!r}")
        length = x.shape[-1]
        if padding > 0 and pad_mode == "wrap" and padding > length:
            raise ShapeError("wrap padding longer than the signal")
        l_out = (length + 2 * padding - ksize) // stride + 1
        if l_out < 1:
            raise ShapeError("conv1d output would be empty")

        pad_spec = [(0, 0)] * (x.values.ndim - 1) + [(padding, padding)]
        xp = np.pad(x.values, pad_spec,
                    mode="constant" if pad_mode == "zeros" else "wrap")
        windows = sliding_window_view(xp, ksize, axis=-1)[..., ::stride, :]
        windows = windows[..., :l_out, :]
        out = np.einsum("oik,...ilk->...ol", kernel.values, windows,
                        optimize=True)
        if bias is not None:
            out = out + bias.values[:, None]
        kv = kernel.values

        def backward(g):
            gf = g.reshape((-1,) + g.shape[-2:])
            wf = windows.reshape((-1,) + windows.shape[-3:])
            gk = np.einsum("bol,bilk->oik", gf, wf, optimize=True)
            gwin = np.einsum("...ol,oik->...ilk", g, kv, optimize=True)
            gxp = np.zeros(xp.shape)
            for t in range(ksize):
                gxp[..., t:t + stride * (l_out - 1) + 1:stride] += gwin[..., :, t]
            if padding == 0:
                gx = gxp
            elif pad_mode == "zeros":
                gx = gxp[..., padding:padding + length]
            else:
                gx = gxp[..., padding:padding + length].copy()
                gx[..., :padding] += gxp[..., padding + length:]
                gx[..., length - padding:] += gxp[..., :padding]
            if bias is None:
                return (gx, gk)
            axes = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
            return (gx, gk, g.sum(axis=axes))

        inputs = (x, kernel) if bias is None else (x, kernel, bias)
        return self._emit(out, inputs, backward)

    def leaky_relu(self, x: Tensor, slope: float = 0.01) -> Tensor:
        s = float(slope)
        mask = x.values >= 0
        factor = np.where(mask, 1.0, s)
        return self._emit(x.values * factor, (x,), lambda g: (g * factor,))

    def softmax(self, x: Tensor) -> Tensor:
        """Softmax along the last axis."""
        z = x.values - x.values.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)

        def backward(g):
            return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

        return self._emit(y, (x,), backward)

    # -- escape hatch for externally differentiated scalars ----------------

    def custom_scalar(self, value: float, inputs, input_grads) -> Tensor:
        """Record a scalar whose gradients were computed outside the tape.

        ``input_grads[i]`` must be d(value)/d(inputs[i].values).
        """
        grads = [np.asarray(g, dtype=float) for g in input_grads]
        if len(grads) != len(inputs):
            raise ShapeError("custom_scalar: one gradient per input required")
        for t, g in zip(inputs, grads):
            if t.shape != g.shape:
                raise ShapeError(f"custom_scalar: grad {g.shape} vs input {t.shape}")
        return self._emit(float(value), tuple(inputs),
                          lambda g: tuple(float(g) * gi for gi in grads))

    # -- reverse pass -------------------------------------------------------

    def backward_from(self, seeds: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
        """Accumulate gradients from explicit adjoint seeds on any nodes."""
        grads: dict[int, np.ndarray] = {
            node: np.array(seed, dtype=float) for node, seed in seeds.items()
        }
        for out_node, input_nodes, backward_fn in reversed(self._records):
            g = grads.get(out_node)
            if g is None:
                continue
            for node, gi in zip(input_nodes, backward_fn(g)):
                if node is None or gi is None:
                    continue
                if node in grads:
                    grads[node] = grads[node] + gi
                else:
                    grads[node] = np.array(gi, dtype=float)
        return grads


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar loss node w.r.t. every node on the tape."""
    if loss.node is None:
        raise ContractError("loss tensor is a constant; nothing to differentiate")
    if np.size(loss.values) != 1:
        raise ContractError(f"loss must be scalar; got shape {loss.shape}")
    return tape.backward_from({loss.node: np.ones_like(loss.values)})


def finite_diff_check(f, x, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(x)`` must return ``(scalar_value, gradient_array)`` and be
    deterministic; only the value part is used for the differences.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    x = np.asarray(x, dtype=float)
    _, analytic = f(x)
    analytic = np.asarray(analytic, dtype=float)
    if analytic.shape != x.shape:
        raise ShapeError(f"gradient {analytic.shape} does not match x {x.shape}")
    worst = 0.0
    flat = x.ravel()
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] += eps
        up, _ = f(probe.reshape(x.shape))
        probe[i] -= 2 * eps
        down, _ = f(probe.reshape(x.shape))
        numeric = (up - down) / (2 * eps)
        a = analytic.ravel()[i]
        err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
        worst = max(worst, err)
    return worst
