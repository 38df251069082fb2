"""LSTM and GRU layers with fused back-propagation through time.

Each direction of a recurrent layer is one node in the autodiff graph; its
backward pass is hand-written BPTT rather than a chain of per-step nodes.

Weights use the ``x @ W`` convention. LSTM gates are packed ``[i, f, g, o]``
with a single bias; GRU gates are packed ``[r, z, n]`` with separate input
and hidden biases (the reset gate multiplies the hidden-side candidate).
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, concat, sigmoid

CELL_KINDS = ("lstm", "gru")


def param_shapes(cell_kind: str, input_size: int, hidden_size: int) -> dict[str, tuple[int, ...]]:
    if cell_kind == "lstm":
        return {
            "W_ih": (input_size, 4 * hidden_size),
            "W_hh": (hidden_size, 4 * hidden_size),
            "b": (4 * hidden_size,),
        }
    if cell_kind == "gru":
        return {
            "W_ih": (input_size, 3 * hidden_size),
            "W_hh": (hidden_size, 3 * hidden_size),
            "b_ih": (3 * hidden_size,),
            "b_hh": (3 * hidden_size,),
        }
    raise ValueError(f"unknown cell kind {cell_kind!r}; expected one of {CELL_KINDS}")


def init_params(cell_kind: str, input_size: int, hidden_size: int, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) matrices, zero biases, LSTM forget bias 1."""
    out = {}
    for name, shape in param_shapes(cell_kind, input_size, hidden_size).items():
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            out[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            out[name] = np.zeros(shape, dtype=dtype)
    if cell_kind == "lstm":
        out["b"][hidden_size:2 * hidden_size] = 1.0
    return out


def _reverse_index(lengths: np.ndarray, steps: int) -> np.ndarray:
    t = np.arange(steps)[None, :]
    lens = lengths[:, None]
    return np.where(t < lens, lens - 1 - t, t)


def _gather_time(x: np.ndarray, index: np.ndarray) -> np.ndarray:
    return np.take_along_axis(x, index[:, :, None], axis=1)


def _lstm_forward(xw, W_hh):
    B, T, G = xw.shape
    H = G // 4
    h = np.zeros((B, H), dtype=xw.dtype)
    c = np.zeros((B, H), dtype=xw.dtype)
    hs = np.empty((B, T, H), dtype=xw.dtype)
    cache = []
    for t in range(T):
        a = xw[:, t] + h @ W_hh
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = sigmoid(a[:, 3 * H:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h_prev = h
        h = o * tc
        hs[:, t] = h
        cache.append((i, f, g, o, c_prev, tc, h_prev))
    return hs, cache


def _lstm_backward(dhs, cache, W_hh):
    B, T, H = dhs.shape
    dxw = np.empty((B, T, 4 * H), dtype=dhs.dtype)
    dW_hh = np.zeros_like(W_hh)
    dh = np.zeros((B, H), dtype=dhs.dtype)
    dc = np.zeros((B, H), dtype=dhs.dtype)
    for t in reversed(range(T)):
        i, f, g, o, c_prev, tc, h_prev = cache[t]
        dh = dh + dhs[:, t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        da = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
        )
        dxw[:, t] = da
        dW_hh += h_prev.T @ da
        dh = da @ W_hh.T
        dc = dc * f
    return dxw, dW_hh


def _gru_forward(xw, W_hh, b_hh):
    B, T, G = xw.shape
    H = G // 3
    h = np.zeros((B, H), dtype=xw.dtype)
    hs = np.empty((B, T, H), dtype=xw.dtype)
    cache = []
    for t in range(T):
        gh = h @ W_hh + b_hh
        gi = xw[:, t]
        r = sigmoid(gi[:, :H] + gh[:, :H])
        z = sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
        n = np.tanh(gi[:, 2 * H:] + r * gh[:, 2 * H:])
        h_prev = h
        h = (1.0 - z) * n + z * h_prev
        hs[:, t] = h
        cache.append((r, z, n, gh[:, 2 * H:], h_prev))
    return hs, cache


def _gru_backward(dhs, cache, W_hh):
    B, T, H = dhs.shape
    dxw = np.empty((B, T, 3 * H), dtype=dhs.dtype)
    dW_hh = np.zeros_like(W_hh)
    db_hh = np.zeros(3 * H, dtype=dhs.dtype)
    dh = np.zeros((B, H), dtype=dhs.dtype)
    for t in reversed(range(T)):
        r, z, n, ghn, h_prev = cache[t]
        dh = dh + dhs[:, t]
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dan = dn * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgi = np.concatenate([dar, daz, dan], axis=1)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        dxw[:, t] = dgi
        dW_hh += h_prev.T @ dgh
        db_hh += dgh.sum(axis=0)
        dh = dh * z + dgh @ W_hh.T
    return dxw, dW_hh, db_hh


def rnn_direction(x: Tensor, params: Mapping[str, Tensor], cell_kind: str,
                  lengths: np.ndarray | None = None, reverse: bool = False) -> Tensor:
    """Run one direction over a B x T x Din batch; frames past each length come out as zeros."""
    if x.ndim != 3:
        raise ValueError(f"expected B x T x Din input, got shape {x.shape}")
    B, T, Din = x.shape
    if T < 1:
        raise ValueError("sequence length must be at least 1")
    W_ih, W_hh = params["W_ih"], params["W_hh"]
    if W_ih.shape[0] != Din:
        raise ValueError(f"input width {Din} does not match W_ih with {W_ih.shape[0]} rows")
    lengths = np.full(B, T, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(x.dtype)[:, :, None]

    xs = x.data
    index = None
    if reverse:
        index = _reverse_index(lengths, T)
        xs = _gather_time(xs, index)

    if cell_kind == "lstm":
        bias = params["b"]
        xw = xs @ W_ih.data + bias.data
        hs, cache = _lstm_forward(xw, W_hh.data)
        parents = (x, W_ih, W_hh, bias)
    elif cell_kind == "gru":
        bias = params["b_ih"]
        xw = xs @ W_ih.data + bias.data
        hs, cache = _gru_forward(xw, W_hh.data, params["b_hh"].data)
        parents = (x, W_ih, W_hh, bias, params["b_hh"])
    else:
        raise ValueError(f"unknown cell kind {cell_kind!r}")

    if reverse:
        hs = _gather_time(hs, index)
    out = hs * mask

    def backward(g):
        g = g * mask
        if reverse:
            g = _gather_time(g, index)
        if cell_kind == "lstm":
            dxw, dW_hh = _lstm_backward(g, cache, W_hh.data)
            extra = ()
        else:
            dxw, dW_hh, db_hh = _gru_backward(g, cache, W_hh.data)
            extra = (db_hh,)
        flat = dxw.reshape(-1, dxw.shape[-1])
        dW_ih = xs.reshape(-1, Din).T @ flat
        db = flat.sum(axis=0)
        dx = dxw @ W_ih.data.T
        if reverse:
            dx = _gather_time(dx, index)
        return (dx, dW_ih, dW_hh, db) + extra

    return Tensor.from_op(out, parents, backward)


def rnn_layer_forward(seq: Tensor, params, cell_kind: str, bidirectional: bool,
                      lengths: np.ndarray | None = None) -> Tensor:
    """One recurrent layer.

    ``seq`` is T x Din or B x T x Din. For a bidirectional layer ``params`` is a
    ``(forward, backward)`` pair of weight mappings and the output is the forward
    half followed by the backward half along the last axis.
    """
    seq = as_tensor(seq)
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq.reshape(1, *seq.shape)
    if bidirectional:
        fwd_params, bwd_params = params
        out = concat(
            [rnn_direction(seq, fwd_params, cell_kind, lengths),
             rnn_direction(seq, bwd_params, cell_kind, lengths, reverse=True)],
            axis=-1,
        )
    else:
        if not isinstance(params, Mapping) and isinstance(params, Sequence):
            (params,) = params
        out = rnn_direction(seq, params, cell_kind, lengths)
    if squeeze:
        out = out.reshape(*out.shape[1:])
    return out
