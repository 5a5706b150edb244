"""Differentiable layer primitives built on :mod:`igcrn.tensor`.

Layout conventions: feature maps are ``[batch, channel, freq, time]``;
convolution kernels are ``[out, in, k_freq, k_time]`` for ``conv2d`` and
``[in, out, k_freq, k_time]`` for ``conv_transpose2d`` (so one weight array
serves as the adjoint pair); recurrent sequences are ``[batch, time, feat]``.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import ShapeError, Tensor, make

Pair = tuple[int, int]


class ConfigError(ValueError):
    """Invalid layer or model configuration."""


def _pair(v) -> Pair:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def _tap(arr: np.ndarray, i: int, j: int, n_f: int, n_t: int, s_f: int, s_t: int) -> np.ndarray:
    return arr[:, :, i: i + s_f * (n_f - 1) + 1: s_f, j: j + s_t * (n_t - 1) + 1: s_t]


def _im2col(xp: np.ndarray, k_f: int, k_t: int, n_f: int, n_t: int, s_f: int, s_t: int) -> np.ndarray:
    """``[B, C, F, T]`` -> ``[kF*kT*C, B*nF*nT]`` with rows ordered (tap_f, tap_t, channel)."""
    b, c = xp.shape[:2]
    cols = np.empty((k_f, k_t, c, b, n_f, n_t), dtype=xp.dtype)
    for i in range(k_f):
        for j in range(k_t):
            cols[i, j] = _tap(xp, i, j, n_f, n_t, s_f, s_t).transpose(1, 0, 2, 3)
    return cols.reshape(k_f * k_t * c, b * n_f * n_t)


def _col2im(cols: np.ndarray, out: np.ndarray, k_f: int, k_t: int, n_f: int, n_t: int,
            s_f: int, s_t: int) -> None:
    """Scatter-add the adjoint of :func:`_im2col` into ``out``."""
    b, c = out.shape[:2]
    c6 = cols.reshape(k_f, k_t, c, b, n_f, n_t)
    for i in range(k_f):
        for j in range(k_t):
            view = _tap(out, i, j, n_f, n_t, s_f, s_t)
            view += c6[i, j].transpose(1, 0, 2, 3)


def _to_cb(x: np.ndarray) -> np.ndarray:
    b, c, f, t = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(c, b * f * t)


def _from_cb(m: np.ndarray, b: int, f: int, t: int) -> np.ndarray:
    return np.ascontiguousarray(m.reshape(-1, b, f, t).transpose(1, 0, 2, 3))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    s_f, s_t = _pair(stride)
    p_f, p_t = _pair(padding)
    if s_f <= 0 or s_t <= 0:
        raise ConfigError(f"stride must be positive, got {(s_f, s_t)}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and weight")
    b, c, f, t = x.shape
    o, c_w, k_f, k_t = weight.shape
    if c != c_w:
        raise ShapeError(f"input has {c} channels, kernel expects {c_w}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} != ({o},)")
    n_f = (f + 2 * p_f - k_f) // s_f + 1
    n_t = (t + 2 * p_t - k_t) // s_t + 1
    if n_f <= 0 or n_t <= 0:
        raise ShapeError("kernel larger than padded input")
    geom = (k_f, k_t, n_f, n_t, s_f, s_t)

    def padded():
        return np.pad(x.data, ((0, 0), (0, 0), (p_f, p_f), (p_t, p_t))) if (p_f or p_t) else x.data

    w2 = np.ascontiguousarray(weight.data.transpose(0, 2, 3, 1)).reshape(o, k_f * k_t * c)
    out = _from_cb(w2 @ _im2col(padded(), *geom), b, n_f, n_t)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def back(g):
        g_cb = _to_cb(g)
        dw = None
        if weight.requires_grad:
            dw2 = g_cb @ _im2col(padded(), *geom).T
            dw = np.ascontiguousarray(dw2.reshape(o, k_f, k_t, c).transpose(0, 3, 1, 2))
        dx = None
        if x.requires_grad:
            dxp = np.zeros((b, c, f + 2 * p_f, t + 2 * p_t), dtype=g.dtype)
            _col2im(w2.T @ g_cb, dxp, *geom)
            dx = np.ascontiguousarray(dxp[:, :, p_f: p_f + f, p_t: p_t + t]) if (p_f or p_t) else dxp
        db = _channel_sum(g) if bias is not None else None
        return (dx, dw, db) if bias is not None else (dx, dw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make(out, parents, back)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride=(1, 1),
                     padding=(0, 0), output_padding=(0, 0)) -> Tensor:
    """Transpose convolution; exact adjoint of :func:`conv2d` with the same kernel array."""
    s_f, s_t = _pair(stride)
    p_f, p_t = _pair(padding)
    op_f, op_t = _pair(output_padding)
    if s_f <= 0 or s_t <= 0:
        raise ConfigError(f"stride must be positive, got {(s_f, s_t)}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv_transpose2d expects 4-d input and weight")
    b, c, n_f, n_t = x.shape
    c_w, o, k_f, k_t = weight.shape
    if c != c_w:
        raise ShapeError(f"input has {c} channels, kernel expects {c_w}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} != ({o},)")
    f = (n_f - 1) * s_f - 2 * p_f + k_f + op_f
    t = (n_t - 1) * s_t - 2 * p_t + k_t + op_t
    if f <= 0 or t <= 0:
        raise ShapeError("transpose convolution output would be empty")
    full_f = max((n_f - 1) * s_f + k_f, p_f + f)
    full_t = max((n_t - 1) * s_t + k_t, p_t + t)
    geom = (k_f, k_t, n_f, n_t, s_f, s_t)

    # rows ordered (tap_f, tap_t, out_channel) to match _im2col of the output grid
    w2 = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0)).reshape(k_f * k_t * o, c)
    x_cb = _to_cb(x.data)
    zp = np.zeros((b, o, full_f, full_t), dtype=x.dtype)
    _col2im(w2 @ x_cb, zp, *geom)
    out = np.ascontiguousarray(zp[:, :, p_f: p_f + f, p_t: p_t + t])
    del zp, x_cb
    if bias is not None:
        out += bias.data[None, :, None, None]

    def back(g):
        gp = np.zeros((b, o, full_f, full_t), dtype=g.dtype)
        gp[:, :, p_f: p_f + f, p_t: p_t + t] = g
        gcols = _im2col(gp, *geom)
        del gp
        dx = _from_cb(w2.T @ gcols, b, n_f, n_t) if x.requires_grad else None
        dw = None
        if weight.requires_grad:
            dw2 = gcols @ _to_cb(x.data).T
            dw = np.ascontiguousarray(dw2.reshape(k_f, k_t, o, c).transpose(3, 2, 0, 1))
        db = _channel_sum(g) if bias is not None else None
        return (dx, dw, db) if bias is not None else (dx, dw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make(out, parents, back)


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer (not trainable)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    initialized: bool = False

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5,
               dtype=np.float32) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum, eps)

    def mark_initialized(self) -> None:
        self.initialized = True


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool) -> Tensor:
    """Per-channel normalization over batch, freq and time.

    In training mode the batch statistics are used and the running
    statistics are updated (unbiased variance, EMA with ``state.momentum``).
    Eval mode refuses to run on never-updated statistics unless
    :meth:`BatchNormState.mark_initialized` was called.
    """
    if x.ndim != 4:
        raise ShapeError("batch_norm expects [B, C, F, T]")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,) or state.running_mean.shape != (c,):
        raise ShapeError(f"batch_norm parameter extents do not match {c} channels")
    xd = x.data
    gm = gamma.data[None, :, None, None]
    if training:
        n = xd.size // c
        mean = xd.mean(axis=(0, 2, 3), dtype=np.float64)
        centered = xd - mean.astype(xd.dtype)[None, :, None, None]
        var = np.mean(np.square(centered), axis=(0, 2, 3), dtype=np.float64)
        inv_std = (1.0 / np.sqrt(var + state.eps)).astype(xd.dtype)
        xhat = centered * inv_std[None, :, None, None]
        m = state.momentum
        unbiased = var * n / max(n - 1, 1)
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(state.running_var.dtype)
        state.initialized = True
        y = xhat * gm + beta.data[None, :, None, None]

        def back(g):
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dxhat = g * gm
            s1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            dx = (dxhat - s1 - xhat * s2) * inv_std[None, :, None, None]
            return dx, dgamma, dbeta

        return make(y, (x, gamma, beta), back)

    if not state.initialized:
        raise ConfigError("batch_norm in eval mode before running statistics were set")
    inv_std = (1.0 / np.sqrt(state.running_var.astype(np.float64) + state.eps)).astype(xd.dtype)
    xhat = (xd - state.running_mean.astype(xd.dtype)[None, :, None, None]) * inv_std[None, :, None, None]
    y = xhat * gm + beta.data[None, :, None, None]

    def back_eval(g):
        return (g * gm * inv_std[None, :, None, None], (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)))

    return make(y, (x, gamma, beta), back_eval)


def glu_gate(z: Tensor) -> Tensor:
    """Split ``z`` into halves (main, gate) along channels and return main * sigmoid(gate)."""
    c2 = z.shape[1]
    if c2 % 2:
        raise ShapeError("glu_gate needs an even channel count")
    c = c2 // 2
    a = z.data[:, :c]
    s = 0.5 * (1.0 + np.tanh(0.5 * z.data[:, c:]))
    y = a * s

    def back(g):
        dz = np.empty_like(z.data)
        dz[:, :c] = g * s
        dz[:, c:] = g * a * s * (1 - s)
        return (dz,)

    return make(y, (z,), back)


def _channel_sum(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Per-channel sum over (batch, freq, time) of ``a`` or of ``a * b``."""
    if b is None:
        return np.einsum("bcft->c", a)
    return np.einsum("bcft,bcft->c", a, b)


def _col(v: np.ndarray, dtype) -> np.ndarray:
    return np.asarray(v, dtype=dtype)[None, :, None, None]


def gated_norm_elu(z: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                   training: bool) -> Tensor:
    """Fused ``elu(batch_norm(glu_gate(z)))``.

    Same values and gradients as chaining the three ops, but only ``z`` and
    the output are kept for the reverse pass; the gate and normalized values
    are recomputed there, and the ELU slope is read off the output.
    """
    c2 = z.shape[1]
    if z.ndim != 4 or c2 % 2:
        raise ShapeError("gated_norm_elu needs [B, 2C, F, T]")
    c = c2 // 2
    if gamma.shape != (c,) or beta.shape != (c,) or state.running_mean.shape != (c,):
        raise ShapeError(f"normalization parameters do not match {c} channels")
    zd = z.data
    dt = zd.dtype
    one, half = dt.type(1), dt.type(0.5)

    def gate():
        s = np.multiply(zd[:, c:], half)
        np.tanh(s, out=s)
        s += one
        s *= half
        return s, zd[:, :c] * s

    s, u = gate()
    del s
    n = u.size // c
    if training:
        mean = _channel_sum(u).astype(np.float64) / n
        u -= _col(mean, dt)
        var = _channel_sum(u, u).astype(np.float64) / n
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var
                             + m * var * n / max(n - 1, 1)).astype(state.running_var.dtype)
        state.initialized = True
    else:
        if not state.initialized:
            raise ConfigError("batch_norm in eval mode before running statistics were set")
        mean = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)
        u -= _col(mean, dt)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    scale = _col(inv_std * gamma.data, dt)
    u *= scale
    u += _col(beta.data, dt)
    # elu(v) = max(v, 0) + expm1(min(v, 0))
    neg = np.minimum(u, dt.type(0))
    np.expm1(neg, out=neg)
    np.maximum(u, dt.type(0), out=u)
    u += neg
    y = u
    del neg

    def back(g):
        s, u = gate()
        u -= _col(mean, dt)
        u *= _col(inv_std, dt)  # u is now the normalized activation
        gv = np.minimum(y, dt.type(0))
        gv += one
        gv *= g
        dbeta = _channel_sum(gv)
        dgamma = _channel_sum(gv, u)
        if training:
            u *= _col(dgamma / n, dt)
            du = gv - u
            du -= _col(dbeta / n, dt)
        else:
            du = gv
        du *= scale
        dz = np.empty_like(zd)
        np.multiply(du, s, out=dz[:, :c])
        du *= zd[:, :c]
        du *= s
        s -= one
        np.multiply(du, s, out=dz[:, c:])
        np.negative(dz[:, c:], out=dz[:, c:])
        return dz, dgamma.astype(dt), dbeta.astype(dt)

    return make(y, (z, gamma, beta), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Affine map over the last axis; ``weight`` is ``[out, in]``."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear expects last extent {d_in}, got {x.shape[-1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    y = x2 @ weight.data.T
    if bias is not None:
        if bias.shape != (d_out,):
            raise ShapeError(f"bias shape {bias.shape} != ({d_out},)")
        y = y + bias.data
    y = y.reshape(*lead, d_out)

    def back(g):
        g2 = g.reshape(-1, d_out)
        dx = (g2 @ weight.data).reshape(*lead, d_in)
        dw = g2.T @ x2
        if bias is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make(y, parents, back)


def freq_linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-channel affine map across the frequency axis of each frame.

    ``x`` is ``[B, C, F, T]``, ``weight`` ``[C, F_out, F]``, ``bias`` ``[C, F_out]``.
    """
    b, c, f, t = x.shape
    c_w, f_out, f_in = weight.shape
    if c != c_w or f != f_in or bias.shape != (c, f_out):
        raise ShapeError(f"freq_linear weight {weight.shape} does not fit input {x.shape}")
    w = weight.data
    y = np.matmul(w[None], x.data) + bias.data[None, :, :, None]

    def back(g):
        dx = np.matmul(w.transpose(0, 2, 1)[None], g)
        dw = np.matmul(g, x.data.transpose(0, 1, 3, 2)).sum(axis=0)
        db = g.sum(axis=(0, 3))
        return dx, dw, db

    return make(y, (x, weight, bias), back)


def reshape_freq_to_batch(x: Tensor) -> Tensor:
    """``[B, C, F, T]`` -> ``[B*F, T, C]``: one independent sequence per frequency slot."""
    b, c, f, t = x.shape
    y = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(b * f, t, c)

    def back(g):
        return (np.ascontiguousarray(g.reshape(b, f, t, c).transpose(0, 3, 1, 2)),)

    return make(y, (x,), back)


def reshape_batch_to_freq(x: Tensor, batch: int, freq: int) -> Tensor:
    """Inverse of :func:`reshape_freq_to_batch`."""
    n, t, c = x.shape
    if batch * freq != n:
        raise ShapeError(f"cannot split leading extent {n} into batch={batch} x freq={freq}")
    y = np.ascontiguousarray(x.data.reshape(batch, freq, t, c).transpose(0, 3, 1, 2))

    def back(g):
        return (np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n, t, c),)

    return make(y, (x,), back)


def lstm_layer(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over ``[N, T, D]`` with zero initial state.

    Gate order in the stacked weights is (input, forget, cell, output).
    With ``reverse`` the sequence is consumed last-to-first and outputs stay
    aligned with their input time index.
    """
    n, t_len, d = x.shape
    h4, d_w = w_ih.shape
    hid = h4 // 4
    if t_len == 0:
        raise ShapeError("LSTM needs at least one time step")
    if d_w != d or w_hh.shape != (h4, hid) or bias.shape != (h4,):
        raise ShapeError(f"LSTM weights {w_ih.shape}/{w_hh.shape}/{bias.shape} do not fit input {x.shape}")
    dt = x.dtype
    wi, wh = w_ih.data, w_hh.data
    wh_t = np.ascontiguousarray(wh.T)
    # time-major internally so every step touches contiguous memory
    xt = np.ascontiguousarray(x.data.transpose(1, 0, 2))
    acts = (xt.reshape(t_len * n, d) @ wi.T + bias.data).reshape(t_len, n, h4)
    cells = np.empty((t_len, n, hid), dtype=dt)
    hs = np.empty((t_len, n, hid), dtype=dt)
    order = list(range(t_len - 1, -1, -1)) if reverse else list(range(t_len))
    h = np.zeros((n, hid), dtype=dt)
    c = np.zeros((n, hid), dtype=dt)
    one, half = dt.type(1), dt.type(0.5)
    for t in order:
        z = acts[t]
        z += h @ wh_t
        # gate activations overwrite the pre-activations in place
        sg = z[:, :2 * hid]
        sg *= half
        np.tanh(sg, out=sg)
        sg += one
        sg *= half
        so = z[:, 3 * hid:]
        so *= half
        np.tanh(so, out=so)
        so += one
        so *= half
        np.tanh(z[:, 2 * hid:3 * hid], out=z[:, 2 * hid:3 * hid])
        c = z[:, hid:2 * hid] * c
        c += z[:, :hid] * z[:, 2 * hid:3 * hid]
        cells[t] = c
        h = np.tanh(c)
        h *= z[:, 3 * hid:]
        hs[t] = h
    out = np.ascontiguousarray(hs.transpose(1, 0, 2))

    def back(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2))
        dz_all = np.empty((t_len, n, h4), dtype=dt)
        dh_next = np.zeros((n, hid), dtype=dt)
        dc_next = np.zeros((n, hid), dtype=dt)
        zeros = np.zeros((n, hid), dtype=dt)
        for k in range(t_len - 1, -1, -1):
            t = order[k]
            c_prev = cells[order[k - 1]] if k > 0 else zeros
            a = acts[t]
            gi = a[:, :hid]
            gf = a[:, hid:2 * hid]
            gg = a[:, 2 * hid:3 * hid]
            go = a[:, 3 * hid:]
            tc = np.tanh(cells[t])
            dh = gt[t] + dh_next
            dc = dh * go * (one - tc * tc) + dc_next
            dz = dz_all[t]
            np.multiply(dc * gg, gi * (one - gi), out=dz[:, :hid])
            np.multiply(dc * c_prev, gf * (one - gf), out=dz[:, hid:2 * hid])
            np.multiply(dc * gi, one - gg * gg, out=dz[:, 2 * hid:3 * hid])
            np.multiply(dh * tc, go * (one - go), out=dz[:, 3 * hid:])
            dc_next = dc * gf
            dh_next = dz @ wh
        dz2 = dz_all.reshape(t_len * n, h4)
        dx = np.ascontiguousarray((dz2 @ wi).reshape(t_len, n, d).transpose(1, 0, 2))
        dwi = dz2.T @ xt.reshape(t_len * n, d)
        # the hidden state feeding step t is the previous output in processing order
        h_prev = np.zeros_like(hs)
        if reverse:
            h_prev[:-1] = hs[1:]
        else:
            h_prev[1:] = hs[:-1]
        dwh = dz2.T @ h_prev.reshape(t_len * n, hid)
        return dx, dwi, dwh, dz2.sum(axis=0)

    return make(out, (x, w_ih, w_hh, bias), back)


# ----------------------------------------------------------------- parameters


class ParameterStore:
    """Ordered registry of named trainable tensors and batch-norm buffers.

    Registration order is deterministic and is the order used for
    serialization and for optimizer state.
    """

    def __init__(self) -> None:
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._bn: "OrderedDict[str, BatchNormState]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_bn(self, name: str, state: BatchNormState) -> BatchNormState:
        if name in self._bn:
            raise KeyError(f"duplicate batch-norm name {name!r}")
        self._bn[name] = state
        return state

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def bn_items(self):
        return self._bn.items()

    def bn(self, name: str) -> BatchNormState:
        return self._bn[name]

    def count(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def astype(self, dtype) -> None:
        """Cast every parameter and buffer in place (used by double-precision checks)."""
        for t in self._params.values():
            t.data = t.data.astype(dtype)
        for s in self._bn.values():
            s.running_mean = s.running_mean.astype(dtype)
            s.running_var = s.running_var.astype(dtype)


@dataclass
class Initializer:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization from a seeded generator."""

    rng: np.random.Generator
    dtype: type = np.float32

    def uniform(self, shape, fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)
