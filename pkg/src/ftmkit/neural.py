"""Minimal deterministic neural math in numpy.

Provides exactly what the package's two models need: an LSTM layer
(single-step and padded-batch forms), layer normalization, masked
multi-head self-attention with a residual connection, stable logistic
and softmax functions, and a gradient container. All gradients are
hand-derived reverse-mode; training math runs in float64.

Conventions fixed here and relied on everywhere else:

* LSTM gate order in the stacked weight matrices is (input, forget,
  cell, output); forget-gate biases are initialized to 1.0 and every
  other parameter is drawn from uniform(-k, k) with k = 1/sqrt(hidden).
* Batched sequence tensors are time-major: (T, B, dim).
* Every matrix-product reduction on the forward score path runs as a
  plain (non-transposed) GEMM on contiguous operands with at least
  :data:`STABLE_GEMM_ROWS` rows. OpenBLAS routes 1- and 2-row products
  (and some small transposed ones) through kernels whose summation
  order differs in the low bits, which would break the guarantee that
  streaming and batched scoring are bit-identical. Single-row callers
  replicate their row (:func:`replicated_rows`), batched callers pad
  narrow batches, and transposed weights are materialized contiguously
  first; a dedicated test pins the row-stability property.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import IsolatedNodeError, NumericError, ShapeError

LN_EPS = 1e-5

STABLE_GEMM_ROWS = 3


def replicated_rows(vec: np.ndarray) -> np.ndarray:
    """Lift a vector to a STABLE_GEMM_ROWS-row matrix for one GEMM.

    Row 0 of ``replicated_rows(v) @ M`` is bit-identical to the rows of
    any larger GEMM against M, which is not true of ``v @ M`` itself.
    """
    return np.tile(vec, (STABLE_GEMM_ROWS, 1))


def sigmoid(x):
    """Numerically stable logistic function."""
    return expit(np.asarray(x, dtype=np.float64))


def softmax(x, axis=-1):
    """Max-subtracted softmax along an axis."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm(x, gamma, beta):
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    Returns (y, cache) where cache feeds :func:`layer_norm_backward`.
    """
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.var(x, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    y = gamma * xhat + beta
    return y, (xhat, inv_std, gamma)


def layer_norm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    dxhat = dy * gamma
    dx = inv_std * (
        dxhat
        - np.mean(dxhat, axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    dgamma = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    dbeta = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    return dx, dgamma, dbeta


class GradientTape:
    """Per-parameter gradient buffers mirroring a parameter dict's shapes."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.grads: dict[str, np.ndarray] = {
            name: np.zeros_like(np.asarray(value, dtype=np.float64))
            for name, value in params.items()
        }

    def add(self, name: str, value: np.ndarray) -> None:
        buf = self.grads[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != buf.shape:
            raise ShapeError(
                f"shape error: gradient for {name!r} is {value.shape}, expected {buf.shape}"
            )
        buf += value

    def global_norm(self) -> float:
        total = 0.0
        for g in self.grads.values():
            total += float(np.sum(g * g))
        return float(np.sqrt(total))

    def scale(self, factor: float) -> None:
        for g in self.grads.values():
            g *= factor

    def assert_finite(self) -> None:
        for name, g in self.grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"numeric error: non-finite gradient for {name!r}")


@dataclass
class LstmLayerParams:
    """One LSTM layer. W stacks the four gates' input weights as (4H, D),
    U the recurrent weights as (4H, H), b the biases as (4H,), gate order
    (input, forget, cell, output)."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        four_h, _ = self.W.shape
        if four_h % 4 != 0 or self.U.shape != (four_h, four_h // 4) or self.b.shape != (four_h,):
            raise ShapeError(
                f"shape error: inconsistent LSTM shapes W{self.W.shape} "
                f"U{self.U.shape} b{self.b.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W.shape[0] // 4

    def num_parameters(self) -> int:
        return self.W.size + self.U.size + self.b.size


def init_lstm_layer(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> LstmLayerParams:
    """uniform(-k, k) with k = 1/sqrt(hidden_dim), then forget biases set to 1."""
    k = 1.0 / np.sqrt(hidden_dim)
    W = rng.uniform(-k, k, size=(4 * hidden_dim, input_dim))
    U = rng.uniform(-k, k, size=(4 * hidden_dim, hidden_dim))
    b = rng.uniform(-k, k, size=4 * hidden_dim)
    b[hidden_dim : 2 * hidden_dim] = 1.0
    return LstmLayerParams(W, U, b)


def lstm_step(params: LstmLayerParams, state: tuple[np.ndarray, np.ndarray], x: np.ndarray):
    """One recurrence step. Returns ((h_new, c_new), h_new).

    The pre-activation is assembled in exactly the batched path's order,
    (x W^T + b) + h U^T, through replicated-row GEMMs, so folding this
    step over a sequence reproduces :func:`lstm_forward_layer` bit for
    bit.
    """
    h_prev, c_prev = state
    x = np.asarray(x, dtype=np.float64)
    hidden = params.hidden_dim
    if x.shape != (params.input_dim,) or h_prev.shape != (hidden,) or c_prev.shape != (hidden,):
        raise ShapeError(
            f"shape error: lstm_step got x{x.shape}, h{h_prev.shape}, c{c_prev.shape} "
            f"for layer ({params.input_dim} -> {hidden})"
        )
    z_in = (replicated_rows(x) @ np.ascontiguousarray(params.W.T))[0]
    z_rec = (replicated_rows(h_prev) @ np.ascontiguousarray(params.U.T))[0]
    z = (z_in + params.b) + z_rec
    i = sigmoid(z[:hidden])
    f = sigmoid(z[hidden : 2 * hidden])
    g = np.tanh(z[2 * hidden : 3 * hidden])
    o = sigmoid(z[3 * hidden :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return (h, c), h


@dataclass
class LstmLayerCache:
    """Forward activations kept for backprop through one layer.

    All sequence tensors are time-major; ``gates`` holds the
    post-nonlinearity (i, f, g, o) values stacked on the last axis.
    """

    x: np.ndarray  # (T, B, D) layer input
    gates: np.ndarray  # (T, B, 4H)
    c: np.ndarray  # (T, B, H) cell states
    tanh_c: np.ndarray  # (T, B, H)
    h: np.ndarray  # (T, B, H) hidden states


def _pad_narrow_batch(x: np.ndarray) -> np.ndarray:
    """Append zero columns so the recurrent GEMM has >= 3 rows."""
    steps, batch, dim = x.shape
    if batch >= STABLE_GEMM_ROWS:
        return x
    pad = np.zeros((steps, STABLE_GEMM_ROWS - batch, dim))
    return np.concatenate([x, pad], axis=1)


def _input_projection(params: LstmLayerParams, x: np.ndarray) -> np.ndarray:
    """(x W^T) + b for a whole padded batch, as one GEMM."""
    steps, batch, dim = x.shape
    proj = x.reshape(steps * batch, dim) @ np.ascontiguousarray(params.W.T)
    proj = proj.reshape(steps, batch, 4 * params.hidden_dim)
    proj += params.b
    return proj


def lstm_forward_layer(params: LstmLayerParams, x: np.ndarray):
    """Run one layer over a padded time-major batch from a zero initial state.

    One large GEMM projects all inputs up front; the time loop then only
    carries the recurrent term, writing each step's activations straight
    into the cache arrays. Returns (h, cache).
    """
    x = np.asarray(x, dtype=np.float64)
    steps, batch, dim = x.shape
    if dim != params.input_dim:
        raise ShapeError(f"shape error: layer expects input {params.input_dim}, got {dim}")
    hidden = params.hidden_dim

    xp = _pad_narrow_batch(x)
    wide = xp.shape[1]
    proj = _input_projection(params, xp)

    gates = np.empty((steps, wide, 4 * hidden))
    c_seq = np.empty((steps, wide, hidden))
    tanh_c_seq = np.empty((steps, wide, hidden))
    h_seq = np.empty((steps, wide, hidden))
    h_prev = np.zeros((wide, hidden))
    c_prev = np.zeros((wide, hidden))
    rec = np.empty((wide, 4 * hidden))
    tmp = np.empty((wide, hidden))
    u_t = np.ascontiguousarray(params.U.T)
    for t in range(steps):
        z = gates[t]
        np.matmul(h_prev, u_t, out=rec)
        np.add(proj[t], rec, out=z)
        expit(z[:, : 2 * hidden], out=z[:, : 2 * hidden])
        np.tanh(z[:, 2 * hidden : 3 * hidden], out=z[:, 2 * hidden : 3 * hidden])
        expit(z[:, 3 * hidden :], out=z[:, 3 * hidden :])
        c = c_seq[t]
        np.multiply(z[:, hidden : 2 * hidden], c_prev, out=c)
        np.multiply(z[:, :hidden], z[:, 2 * hidden : 3 * hidden], out=tmp)
        c += tmp
        np.tanh(c, out=tanh_c_seq[t])
        np.multiply(z[:, 3 * hidden :], tanh_c_seq[t], out=h_seq[t])
        h_prev = h_seq[t]
        c_prev = c
    if wide != batch:
        gates = gates[:, :batch]
        c_seq = c_seq[:, :batch]
        tanh_c_seq = tanh_c_seq[:, :batch]
        h_seq = h_seq[:, :batch]
    return h_seq, LstmLayerCache(x, gates, c_seq, tanh_c_seq, h_seq)


def lstm_scan_layer(params: LstmLayerParams, x: np.ndarray) -> np.ndarray:
    """Hidden states only, for scoring: same arithmetic as
    :func:`lstm_forward_layer` without keeping gate or cell activations.
    """
    x = np.asarray(x, dtype=np.float64)
    steps, batch, dim = x.shape
    if dim != params.input_dim:
        raise ShapeError(f"shape error: layer expects input {params.input_dim}, got {dim}")
    hidden = params.hidden_dim

    xp = _pad_narrow_batch(x)
    wide = xp.shape[1]
    proj = _input_projection(params, xp)

    h_seq = np.empty((steps, wide, hidden))
    h_prev = np.zeros((wide, hidden))
    c = np.zeros((wide, hidden))
    z = np.empty((wide, 4 * hidden))
    tmp = np.empty((wide, hidden))
    u_t = np.ascontiguousarray(params.U.T)
    for t in range(steps):
        np.matmul(h_prev, u_t, out=z)
        np.add(proj[t], z, out=z)
        expit(z[:, : 2 * hidden], out=z[:, : 2 * hidden])
        np.tanh(z[:, 2 * hidden : 3 * hidden], out=z[:, 2 * hidden : 3 * hidden])
        expit(z[:, 3 * hidden :], out=z[:, 3 * hidden :])
        np.multiply(z[:, hidden : 2 * hidden], c, out=c)
        np.multiply(z[:, :hidden], z[:, 2 * hidden : 3 * hidden], out=tmp)
        c += tmp
        np.tanh(c, out=tmp)
        np.multiply(z[:, 3 * hidden :], tmp, out=h_seq[t])
        h_prev = h_seq[t]
    return h_seq[:, :batch] if wide != batch else h_seq


def lstm_backward_layer(params: LstmLayerParams, cache: LstmLayerCache, dh_out: np.ndarray):
    """Backprop through time for one layer.

    ``dh_out`` carries the loss gradient arriving at each step's hidden
    output from outside the layer (upper layers and heads). Returns
    (dx, dW, dU, db).
    """
    steps, batch, hidden = cache.h.shape
    gates, c_seq, tanh_c_seq = cache.gates, cache.c, cache.tanh_c

    dz_seq = np.empty((steps, batch, 4 * hidden))
    dh_rec = np.zeros((batch, hidden))
    dh = np.empty((batch, hidden))
    dc = np.empty((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    t1 = np.empty((batch, hidden))
    t2 = np.empty((batch, hidden))
    u = params.U
    for t in range(steps - 1, -1, -1):
        i = gates[t, :, :hidden]
        f = gates[t, :, hidden : 2 * hidden]
        g = gates[t, :, 2 * hidden : 3 * hidden]
        o = gates[t, :, 3 * hidden :]
        tanh_c = tanh_c_seq[t]

        np.add(dh_out[t], dh_rec, out=dh)
        np.multiply(dh, o, out=t1)
        np.multiply(tanh_c, tanh_c, out=t2)
        np.subtract(1.0, t2, out=t2)
        t1 *= t2
        np.add(dc_next, t1, out=dc)

        dz = dz_seq[t]
        dzi = dz[:, :hidden]
        np.multiply(dc, g, out=dzi)
        dzi *= i
        np.subtract(1.0, i, out=t1)
        dzi *= t1
        dzf = dz[:, hidden : 2 * hidden]
        if t > 0:
            np.multiply(dc, c_seq[t - 1], out=dzf)
        else:
            dzf.fill(0.0)
        dzf *= f
        np.subtract(1.0, f, out=t1)
        dzf *= t1
        dzg = dz[:, 2 * hidden : 3 * hidden]
        np.multiply(dc, i, out=dzg)
        np.multiply(g, g, out=t1)
        np.subtract(1.0, t1, out=t1)
        dzg *= t1
        dzo = dz[:, 3 * hidden :]
        np.multiply(dh, tanh_c, out=dzo)
        dzo *= o
        np.subtract(1.0, o, out=t1)
        dzo *= t1

        np.multiply(dc, f, out=dc_next)
        np.matmul(dz, u, out=dh_rec)

    dz_flat = dz_seq.reshape(steps * batch, 4 * hidden)
    dW = dz_flat.T @ np.ascontiguousarray(cache.x).reshape(steps * batch, -1)
    # step 0 sees a zero h_prev, so its rows drop out of dU entirely
    if steps > 1:
        dU = dz_seq[1:].reshape((steps - 1) * batch, -1).T @ cache.h[:-1].reshape(
            (steps - 1) * batch, hidden
        )
    else:
        dU = np.zeros_like(params.U)
    db = dz_flat.sum(axis=0)
    dx = (dz_flat @ params.W).reshape(cache.x.shape)
    return dx, dW, dU, db


@dataclass
class AttentionLayerParams:
    """Pre-LN masked multi-head self-attention with a residual connection.

    Per-head projections are stacked as (heads, head_dim, model_dim);
    the output projection Wo is (model_dim, model_dim).
    """

    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    Wq: np.ndarray
    bq: np.ndarray
    Wk: np.ndarray
    bk: np.ndarray
    Wv: np.ndarray
    bv: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray

    def __post_init__(self):
        for name in ("ln_gamma", "ln_beta", "Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        heads, head_dim, model_dim = self.Wq.shape
        if model_dim != heads * head_dim:
            raise ShapeError("shape error: model_dim must equal heads * head_dim")
        expected = {
            "ln_gamma": (model_dim,),
            "ln_beta": (model_dim,),
            "Wq": (heads, head_dim, model_dim),
            "bq": (heads, head_dim),
            "Wk": (heads, head_dim, model_dim),
            "bk": (heads, head_dim),
            "Wv": (heads, head_dim, model_dim),
            "bv": (heads, head_dim),
            "Wo": (model_dim, model_dim),
            "bo": (model_dim,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(
                    f"shape error: attention tensor {name} is "
                    f"{getattr(self, name).shape}, expected {shape}"
                )

    @property
    def heads(self) -> int:
        return self.Wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.Wq.shape[1]

    @property
    def model_dim(self) -> int:
        return self.Wq.shape[2]

    def param_dict(self) -> dict[str, np.ndarray]:
        return {
            "ln_gamma": self.ln_gamma,
            "ln_beta": self.ln_beta,
            "Wq": self.Wq,
            "bq": self.bq,
            "Wk": self.Wk,
            "bk": self.bk,
            "Wv": self.Wv,
            "bv": self.bv,
            "Wo": self.Wo,
            "bo": self.bo,
        }

    def num_parameters(self) -> int:
        return sum(v.size for v in self.param_dict().values())


def init_attention_layer(
    model_dim: int, heads: int, rng: np.random.Generator
) -> AttentionLayerParams:
    if model_dim % heads != 0:
        raise ShapeError("shape error: model_dim not divisible by heads")
    head_dim = model_dim // heads
    k = 1.0 / np.sqrt(model_dim)

    def u(*shape):
        return rng.uniform(-k, k, size=shape)

    return AttentionLayerParams(
        ln_gamma=np.ones(model_dim),
        ln_beta=np.zeros(model_dim),
        Wq=u(heads, head_dim, model_dim),
        bq=u(heads, head_dim),
        Wk=u(heads, head_dim, model_dim),
        bk=u(heads, head_dim),
        Wv=u(heads, head_dim, model_dim),
        bv=u(heads, head_dim),
        Wo=u(model_dim, model_dim),
        bo=u(model_dim),
    )


def _check_attention_inputs(params: AttentionLayerParams, states: np.ndarray, mask: np.ndarray):
    n = states.shape[0]
    if states.ndim != 2 or states.shape[1] != params.model_dim:
        raise ShapeError(
            f"shape error: states must be N x {params.model_dim}, got {states.shape}"
        )
    if mask.shape != (n, n):
        raise ShapeError(f"shape error: mask must be {n} x {n}, got {mask.shape}")
    rows_ok = mask.any(axis=1)
    if not rows_ok.all():
        bad = int(np.flatnonzero(~rows_ok)[0])
        raise IsolatedNodeError(f"isolated node error: mask row {bad} is all false")


def attention_forward(params: AttentionLayerParams, states: np.ndarray, mask: np.ndarray):
    """y = states + OutProj(MultiHeadAttention(LN(states), mask)). Returns (y, cache)."""
    states = np.asarray(states, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    _check_attention_inputs(params, states, mask)
    n = states.shape[0]
    heads, head_dim = params.heads, params.head_dim
    scale = 1.0 / np.sqrt(head_dim)

    normed, ln_cache = layer_norm(states, params.ln_gamma, params.ln_beta)
    q = np.einsum("nd,hkd->hnk", normed, params.Wq) + params.bq[:, None, :]
    k = np.einsum("nd,hkd->hnk", normed, params.Wk) + params.bk[:, None, :]
    v = np.einsum("nd,hkd->hnk", normed, params.Wv) + params.bv[:, None, :]
    scores = scale * (q @ k.transpose(0, 2, 1))
    scores = np.where(mask[None, :, :], scores, -np.inf)
    attn = softmax(scores, axis=-1)
    context = attn @ v  # (heads, N, head_dim)
    concat = context.transpose(1, 0, 2).reshape(n, heads * head_dim)
    projected = concat @ params.Wo.T + params.bo
    out = states + projected
    cache = (normed, ln_cache, q, k, v, attn, concat)
    return out, cache


def attention_backward(params: AttentionLayerParams, cache, d_out: np.ndarray):
    """Reverse of :func:`attention_forward`. Returns (d_states, grads dict)."""
    normed, ln_cache, q, k, v, attn, concat = cache
    n = normed.shape[0]
    heads, head_dim = params.heads, params.head_dim
    scale = 1.0 / np.sqrt(head_dim)

    d_states = d_out.copy()  # residual branch
    d_concat = d_out @ params.Wo
    grads = {
        "Wo": d_out.T @ concat,
        "bo": d_out.sum(axis=0),
    }
    d_context = d_concat.reshape(n, heads, head_dim).transpose(1, 0, 2)
    d_attn = d_context @ v.transpose(0, 2, 1)
    d_v = attn.transpose(0, 2, 1) @ d_context
    # softmax rows: masked entries have attn = 0, so they get zero gradient
    d_scores = attn * (d_attn - np.sum(d_attn * attn, axis=-1, keepdims=True))
    d_q = scale * (d_scores @ k)
    d_k = scale * (d_scores.transpose(0, 2, 1) @ q)

    grads["Wq"] = np.einsum("hnk,nd->hkd", d_q, normed)
    grads["bq"] = d_q.sum(axis=1)
    grads["Wk"] = np.einsum("hnk,nd->hkd", d_k, normed)
    grads["bk"] = d_k.sum(axis=1)
    grads["Wv"] = np.einsum("hnk,nd->hkd", d_v, normed)
    grads["bv"] = d_v.sum(axis=1)
    d_normed = (
        np.einsum("hnk,hkd->nd", d_q, params.Wq)
        + np.einsum("hnk,hkd->nd", d_k, params.Wk)
        + np.einsum("hnk,hkd->nd", d_v, params.Wv)
    )
    dx, d_gamma, d_beta = layer_norm_backward(d_normed, ln_cache)
    d_states += dx
    grads["ln_gamma"] = d_gamma
    grads["ln_beta"] = d_beta
    return d_states, grads


def masked_self_attention(
    params: AttentionLayerParams, states: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """Forward-only convenience wrapper around :func:`attention_forward`."""
    out, _ = attention_forward(params, states, mask)
    return out
