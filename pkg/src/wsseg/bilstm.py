"""Bidirectional LSTM context fusion over the patch grid.

Weights use the row-vector convention ``x @ W``: an LSTM input matrix is
stored as ``[D, 4d]`` with gate blocks ordered (input, forget, candidate,
output), and the fusion projection as ``[2d, D]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .class_token import ConditionedFeatures
from .tensor import ContractError, ShapeError, Tensor


@dataclass
class LSTMCellParams:
    w_ih: Tensor  # [D, 4d]
    w_hh: Tensor  # [d, 4d]
    bias: Tensor  # [4d]

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, std=0.02, forget_bias=1.0, prefix="lstm"):
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = forget_bias
        return cls(rng.param((input_dim, 4 * hidden_dim), std, name=prefix + ".w_ih"),
                   rng.param((hidden_dim, 4 * hidden_dim), std, name=prefix + ".w_hh"),
                   Tensor(b, requires_grad=True, name=prefix + ".bias"))

    @property
    def hidden_dim(self):
        return self.w_hh.shape[0]

    @property
    def input_dim(self):
        return self.w_ih.shape[0]

    def parameters(self):
        return [self.w_ih, self.w_hh, self.bias]


@dataclass
class BiLSTMParams:
    fwd: LSTMCellParams
    bwd: LSTMCellParams

    @classmethod
    def init(cls, input_dim, hidden_dim, rng, prefix="bilstm"):
        return cls(LSTMCellParams.init(input_dim, hidden_dim, rng, prefix=prefix + ".fwd"),
                   LSTMCellParams.init(input_dim, hidden_dim, rng, prefix=prefix + ".bwd"))

    def parameters(self):
        return self.fwd.parameters() + self.bwd.parameters()


@dataclass
class FusionParams:
    w_c: Tensor  # [2d, D]
    b_c: Tensor  # [D]

    @classmethod
    def init(cls, hidden_dim, output_dim, rng, std=0.02, prefix="fusion"):
        return cls(rng.param((2 * hidden_dim, output_dim), std, name=prefix + ".w_c"),
                   Tensor(np.zeros(output_dim), requires_grad=True, name=prefix + ".b_c"))

    def parameters(self):
        return [self.w_c, self.b_c]


@dataclass
class FusedFeatures:
    features: Tensor  # same layout as ConditionedFeatures
    grid: tuple


def lstm_cell(x, h_prev, c_prev, params):
    """One LSTM step from tape primitives; returns ``(h, c)``."""
    d = params.hidden_dim
    x, h_prev, c_prev = T.as_tensor(x), T.as_tensor(h_prev), T.as_tensor(c_prev)
    if x.shape[-1] != params.input_dim or h_prev.shape[-1] != d or c_prev.shape[-1] != d:
        raise ShapeError(f"lstm_cell: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} "
                         f"vs input {params.input_dim}, hidden {d}")
    squeeze = x.ndim == 1
    if squeeze:
        x, h_prev, c_prev = (T.reshape(t, (1, t.shape[0])) for t in (x, h_prev, c_prev))
    gates = T.matmul(x, params.w_ih) + T.matmul(h_prev, params.w_hh) + params.bias
    i = T.sigmoid(T.slice_axis(gates, 0, d))
    f = T.sigmoid(T.slice_axis(gates, d, 2 * d))
    g = T.tanh(T.slice_axis(gates, 2 * d, 3 * d))
    o = T.sigmoid(T.slice_axis(gates, 3 * d, 4 * d))
    c = f * c_prev + i * g
    h = o * T.tanh(c)
    if squeeze:
        h, c = T.reshape(h, (d,)), T.reshape(c, (d,))
    return h, c


def _sig(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_sequence(x, params, reverse=False):
    """Run one LSTM over ``x [..., s, D]`` as a single tape op.

    Forward is the same recurrence as :func:`lstm_cell`; backward is
    hand-written backpropagation through time.  Returns ``[..., s, d]``.
    """
    x = T.as_tensor(x)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ContractError(f"lstm_sequence: need a non-empty sequence, got shape {x.shape}")
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"lstm_sequence: input dim {x.shape[-1]} vs {params.input_dim}")
    d = params.hidden_dim
    s = x.shape[-2]
    lead = x.shape[:-2]
    w_ih, w_hh, bias = params.w_ih.data, params.w_hh.data, params.bias.data
    xw = x.data @ w_ih + bias
    order = range(s - 1, -1, -1) if reverse else range(s)

    hs = np.zeros(lead + (s, d))
    cs = np.zeros(lead + (s, d))
    acts = np.zeros(lead + (s, 4 * d))
    h = np.zeros(lead + (d,))
    c = np.zeros(lead + (d,))
    for t in order:
        z = xw[..., t, :] + h @ w_hh
        a = np.empty_like(z)
        a[..., :2 * d] = _sig(z[..., :2 * d])
        a[..., 2 * d:3 * d] = np.tanh(z[..., 2 * d:3 * d])
        a[..., 3 * d:] = _sig(z[..., 3 * d:])
        c = a[..., d:2 * d] * c + a[..., :d] * a[..., 2 * d:3 * d]
        h = a[..., 3 * d:] * np.tanh(c)
        acts[..., t, :] = a
        cs[..., t, :] = c
        hs[..., t, :] = h

    def backward(g_h):
        dz_all = np.zeros_like(acts)
        dh_next = np.zeros(lead + (d,))
        dc_next = np.zeros(lead + (d,))
        steps = list(order)
        for n in range(s - 1, -1, -1):
            t = steps[n]
            prev = steps[n - 1] if n > 0 else None
            a = acts[..., t, :]
            i, f, g, o = a[..., :d], a[..., d:2 * d], a[..., 2 * d:3 * d], a[..., 3 * d:]
            tc = np.tanh(cs[..., t, :])
            c_prev = cs[..., prev, :] if prev is not None else 0.0
            dh = g_h[..., t, :] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dz_all[..., t, :]
            dz[..., :d] = dc * g * i * (1.0 - i)
            dz[..., d:2 * d] = dc * c_prev * f * (1.0 - f)
            dz[..., 2 * d:3 * d] = dc * i * (1.0 - g * g)
            dz[..., 3 * d:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ w_hh.T
        # h_prev of step n is the output at the previous step in processing order
        h_prev = np.zeros_like(hs)
        if reverse:
            h_prev[..., :-1, :] = hs[..., 1:, :]
        else:
            h_prev[..., 1:, :] = hs[..., :-1, :]
        flat_dz = dz_all.reshape(-1, 4 * d)
        g_x = dz_all @ w_ih.T
        g_wih = x.data.reshape(-1, x.shape[-1]).T @ flat_dz
        g_whh = h_prev.reshape(-1, d).T @ flat_dz
        g_b = flat_dz.sum(axis=0)
        return g_x, g_wih, g_whh, g_b

    return T.custom_op(hs, (x, params.w_ih, params.w_hh, params.bias), backward)


def run_direction(seq, params, direction="forward"):
    """Hidden state at every position for one direction, ``[..., s, d]``.

    The backward direction consumes positions s-1 .. 0, so row i holds the
    state after seeing positions i .. s-1.
    """
    if direction not in ("forward", "backward"):
        raise ContractError(f"unknown direction {direction!r}")
    return lstm_sequence(seq, params, reverse=direction == "backward")


def run_direction_stepwise(seq, params, direction="forward"):
    """Same as :func:`run_direction` but unrolled through :func:`lstm_cell`."""
    seq = T.as_tensor(seq)
    s = seq.shape[-2]
    if s < 1:
        raise ContractError("run_direction: empty sequence")
    d = params.hidden_dim
    h = Tensor(np.zeros(seq.shape[:-2] + (d,)))
    c = Tensor(np.zeros(seq.shape[:-2] + (d,)))
    outs = [None] * s
    order = range(s) if direction == "forward" else range(s - 1, -1, -1)
    for t in order:
        x_t = T.reshape(T.slice_axis(seq, t, t + 1, axis=-2), seq.shape[:-2] + (seq.shape[-1],))
        h, c = lstm_cell(x_t, h, c, params)
        outs[t] = h
    return T.stack(outs, axis=-2)


def fuse_project(h_fwd, h_bwd, fusion):
    if h_fwd.shape != h_bwd.shape:
        raise ShapeError(f"fuse_project: {h_fwd.shape} vs {h_bwd.shape}")
    if fusion.w_c.shape[0] != 2 * h_fwd.shape[-1]:
        raise ShapeError(f"fuse_project: W_c {fusion.w_c.shape} vs hidden {h_fwd.shape[-1]}")
    return T.matmul(T.concat([h_fwd, h_bwd], axis=-1), fusion.w_c) + fusion.b_c


def bidirectional(seq, params, fusion):
    return fuse_project(run_direction(seq, params.fwd, "forward"),
                        run_direction(seq, params.bwd, "backward"), fusion)


def column_major_order(rows, cols):
    """Raster positions listed column by column."""
    return np.arange(rows * cols).reshape(rows, cols).T.reshape(-1)


def contextual_fusion(f_in, grid, params_h, params_v, fusion):
    """Sum of a horizontal pass (row-major) and a vertical pass (column-major).

    Works on any leading batch/class axes; the same parameters serve every
    class stream.
    """
    x = f_in.features if isinstance(f_in, ConditionedFeatures) else T.as_tensor(f_in)
    rows, cols = grid
    if x.shape[-2] != rows * cols:
        raise ShapeError(f"contextual_fusion: {x.shape[-2]} positions vs grid {rows}x{cols}")
    horiz = bidirectional(x, params_h, fusion)
    perm = column_major_order(rows, cols)
    inv = np.argsort(perm)
    vert = T.take(bidirectional(T.take(x, perm, axis=-2), params_v, fusion), inv, axis=-2)
    return FusedFeatures(horiz + vert, (rows, cols))
