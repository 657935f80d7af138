"""The deployable streaming classifier.

Four unidirectional LSTM layers (40 -> 128, then 128 -> 128 three
times), a linear 128 -> 64 embedding head, and a sigmoid classifier on
the embedding. Exposes four forward paths:

* :func:`student_step`: one frame at a time, for live streams;
* :func:`student_forward`: literally folds student_step over a whole
  sequence;
* :func:`forward_batch` / :func:`backward_batch`: padded-minibatch
  training path built on the layer-level GEMM kernels;
* :func:`score_batch`: cache-free batched scoring for evaluation.

All four produce bit-identical scores for the same frames: every
reduction runs through the stable-GEMM discipline set in
:mod:`ftmkit.neural` (replicated rows streaming, padded narrow batches,
einsum for the classifier dot), and the remaining ops are elementwise.

Per-frame scores are clipped to [1e-12, 1 - 1e-12]: float64 sigmoid
saturates to exactly 1.0 near logit 37, which would break the strict
(0,1) score bound that the threshold-boundary laws rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import EmptyInputError, FormatError, InvalidFrameError, ShapeError
from .features import FEATURE_DIM, PREFIX_FRAMES, FeatureSequence
from .neural import (
    STABLE_GEMM_ROWS,
    LstmLayerCache,
    LstmLayerParams,
    init_lstm_layer,
    lstm_backward_layer,
    lstm_forward_layer,
    lstm_scan_layer,
    lstm_step,
    replicated_rows,
)
from .tensorio import load_weights, save_weights

STUDENT_HIDDEN = 128
STUDENT_LAYERS = 4
EMBED_DIM = 64

SCORE_CLIP = 1e-12


def clip_scores(scores: np.ndarray) -> np.ndarray:
    """Force sigmoid outputs into the open interval (0, 1)."""
    return np.clip(scores, SCORE_CLIP, 1.0 - SCORE_CLIP)


@dataclass
class StudentModel:
    """LSTM stack plus embedding and classifier heads."""

    layers: list[LstmLayerParams]
    emb_W: np.ndarray  # (EMBED_DIM, hidden)
    emb_b: np.ndarray  # (EMBED_DIM,)
    cls_w: np.ndarray  # (EMBED_DIM,)
    cls_b: float

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("shape error: student needs at least one LSTM layer")
        hidden = self.layers[-1].hidden_dim
        self.emb_W = np.asarray(self.emb_W, dtype=np.float64)
        self.emb_b = np.asarray(self.emb_b, dtype=np.float64)
        self.cls_w = np.asarray(self.cls_w, dtype=np.float64)
        self.cls_b = float(self.cls_b)
        embed = self.emb_W.shape[0]
        if self.emb_W.shape != (embed, hidden) or self.emb_b.shape != (embed,):
            raise ShapeError(f"shape error: embedding head {self.emb_W.shape}/{self.emb_b.shape}")
        if self.cls_w.shape != (embed,):
            raise ShapeError(f"shape error: classifier head {self.cls_w.shape}")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.input_dim != lower.hidden_dim:
                raise ShapeError("shape error: mismatched stacked LSTM layers")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def embed_dim(self) -> int:
        return self.emb_W.shape[0]

    def param_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for idx, layer in enumerate(self.layers):
            out[f"lstm{idx}.W"] = layer.W
            out[f"lstm{idx}.U"] = layer.U
            out[f"lstm{idx}.b"] = layer.b
        out["emb.W"] = self.emb_W
        out["emb.b"] = self.emb_b
        out["cls.w"] = self.cls_w
        out["cls.b"] = np.array([self.cls_b])
        return out

    def with_params(self, params: dict[str, np.ndarray]) -> "StudentModel":
        """Rebuild a model of the same architecture from a param dict."""
        layers = [
            LstmLayerParams(params[f"lstm{i}.W"], params[f"lstm{i}.U"], params[f"lstm{i}.b"])
            for i in range(len(self.layers))
        ]
        return StudentModel(
            layers,
            params["emb.W"],
            params["emb.b"],
            params["cls.w"],
            float(np.asarray(params["cls.b"]).reshape(-1)[0]),
        )


def init_student(
    rng: np.random.Generator,
    input_dim: int = FEATURE_DIM,
    hidden_dim: int = STUDENT_HIDDEN,
    num_layers: int = STUDENT_LAYERS,
    embed_dim: int = EMBED_DIM,
) -> StudentModel:
    layers = [init_lstm_layer(input_dim, hidden_dim, rng)]
    for _ in range(num_layers - 1):
        layers.append(init_lstm_layer(hidden_dim, hidden_dim, rng))
    k_emb = 1.0 / np.sqrt(hidden_dim)
    k_cls = 1.0 / np.sqrt(embed_dim)
    return StudentModel(
        layers=layers,
        emb_W=rng.uniform(-k_emb, k_emb, size=(embed_dim, hidden_dim)),
        emb_b=rng.uniform(-k_emb, k_emb, size=embed_dim),
        cls_w=rng.uniform(-k_cls, k_cls, size=embed_dim),
        cls_b=float(rng.uniform(-k_cls, k_cls)),
    )


def count_parameters(model: StudentModel) -> int:
    return int(sum(v.size for v in model.param_dict().values()))


@dataclass
class StreamState:
    """Per-stream recurrent state: one (h, c) pair per layer."""

    h: np.ndarray  # (num_layers, hidden)
    c: np.ndarray  # (num_layers, hidden)
    frames_seen: int = 0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.c))):
            raise InvalidFrameError("invalid frame: non-finite stream state")
        if self.frames_seen < 0:
            raise InvalidFrameError("invalid frame: negative frames_seen")


def init_stream_state(model: StudentModel) -> StreamState:
    hidden = model.layers[0].hidden_dim
    zeros = np.zeros((len(model.layers), hidden))
    return StreamState(zeros.copy(), zeros.copy(), 0)


@dataclass
class MitigationSignal:
    """Per-frame device-directedness scores, strictly inside (0, 1).

    ``onset_frame`` is the first monitored frame (the detection event),
    50 frames past the sequence start under the standard 0.5 s prefix.
    """

    scores: np.ndarray
    onset_frame: int = PREFIX_FRAMES

    def __post_init__(self):
        self.scores = clip_scores(np.asarray(self.scores, dtype=np.float64).reshape(-1))
        if self.scores.size == 0:
            raise EmptyInputError("empty input: signal has no frames")
        if not np.all(np.isfinite(self.scores)):
            raise FormatError("format error: non-finite scores")
        if not (np.all(self.scores > 0.0) and np.all(self.scores < 1.0)):
            raise FormatError("format error: scores must lie strictly in (0, 1)")
        if self.onset_frame < 0:
            raise FormatError("format error: negative onset_frame")

    @property
    def num_frames(self) -> int:
        return self.scores.shape[0]


def student_step(model: StudentModel, state: StreamState, frame: np.ndarray):
    """Advance one frame. Returns (new_state, embedding, score)."""
    frame = np.asarray(frame, dtype=np.float64).reshape(-1)
    if frame.shape != (model.input_dim,):
        raise ShapeError(f"shape error: frame has shape {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise InvalidFrameError("invalid frame: non-finite values")
    new_h = np.empty_like(state.h)
    new_c = np.empty_like(state.c)
    x = frame
    for idx, layer in enumerate(model.layers):
        (h, c), _ = lstm_step(layer, (state.h[idx], state.c[idx]), x)
        new_h[idx] = h
        new_c[idx] = c
        x = h
    embedding = (replicated_rows(x) @ np.ascontiguousarray(model.emb_W.T))[0] + model.emb_b
    logit = float(np.einsum("j,j->", embedding, model.cls_w) + model.cls_b)
    score = float(clip_scores(expit(logit)))
    return StreamState(new_h, new_c, state.frames_seen + 1), embedding, score


def student_forward(model: StudentModel, features: FeatureSequence | np.ndarray):
    """Whole-sequence forward pass, defined as folding :func:`student_step`.

    Returns (embeddings T x 64, MitigationSignal). The signal's onset is
    the feature onset plus the 50-frame prefix.
    """
    if isinstance(features, FeatureSequence):
        frames = features.frames
        onset = features.onset_frame + PREFIX_FRAMES
    else:
        frames = np.asarray(features)
        onset = PREFIX_FRAMES
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise EmptyInputError("empty input: no frames to score")
    steps = frames.shape[0]
    embeddings = np.empty((steps, model.embed_dim))
    scores = np.empty(steps)
    state = init_stream_state(model)
    for t in range(steps):
        state, emb, score = student_step(model, state, frames[t])
        embeddings[t] = emb
        scores[t] = score
    return embeddings, MitigationSignal(scores, onset_frame=onset)


@dataclass
class StudentForwardCache:
    """Activations of the batched training path."""

    layer_caches: list[LstmLayerCache]
    h_top: np.ndarray  # (T, B, hidden)
    embeddings: np.ndarray  # (T, B, embed)
    logits: np.ndarray  # (T, B)


def _head_outputs(model: StudentModel, h: np.ndarray):
    """Embeddings and logits from top-layer hidden states (T, B, hidden)."""
    steps, batch, hidden = h.shape
    h_flat = h.reshape(steps * batch, hidden)
    if h_flat.shape[0] < STABLE_GEMM_ROWS:
        h_flat = np.concatenate(
            [h_flat, np.zeros((STABLE_GEMM_ROWS - h_flat.shape[0], hidden))]
        )
    emb_flat = h_flat @ np.ascontiguousarray(model.emb_W.T)
    emb_flat += model.emb_b
    logits_flat = np.einsum("ij,j->i", emb_flat, model.cls_w) + model.cls_b
    embeddings = emb_flat[: steps * batch].reshape(steps, batch, model.embed_dim)
    logits = logits_flat[: steps * batch].reshape(steps, batch)
    return embeddings, logits


def forward_batch(model: StudentModel, x: np.ndarray) -> StudentForwardCache:
    """Padded time-major minibatch forward pass (GEMM path, float64)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"shape error: batch input must be (T, B, dim), got {x.shape}")
    caches: list[LstmLayerCache] = []
    h = x
    for layer in model.layers:
        h, cache = lstm_forward_layer(layer, h)
        caches.append(cache)
    embeddings, logits = _head_outputs(model, h)
    return StudentForwardCache(caches, h, embeddings, logits)


def score_batch(model: StudentModel, x: np.ndarray) -> np.ndarray:
    """Per-frame logits (T, B) without keeping training activations.

    Bit-identical to :func:`forward_batch`'s logits; built on the
    cache-free layer scan for evaluation-sized workloads.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"shape error: batch input must be (T, B, dim), got {x.shape}")
    h = x
    for layer in model.layers:
        h = lstm_scan_layer(layer, h)
    _, logits = _head_outputs(model, h)
    return logits


def backward_batch(
    model: StudentModel,
    cache: StudentForwardCache,
    d_logits: np.ndarray,
    d_embeddings: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its per-frame logit/embedding gradients.

    Returns a dict matching :meth:`StudentModel.param_dict`.
    """
    steps, batch = cache.logits.shape
    d_emb = d_logits[..., None] * model.cls_w
    if d_embeddings is not None:
        d_emb = d_emb + d_embeddings

    grads: dict[str, np.ndarray] = {}
    emb_flat = cache.embeddings.reshape(steps * batch, -1)
    demb_flat = d_emb.reshape(steps * batch, -1)
    grads["cls.w"] = emb_flat.T @ d_logits.reshape(-1)
    grads["cls.b"] = np.array([float(d_logits.sum())])
    h_flat = cache.h_top.reshape(steps * batch, -1)
    grads["emb.W"] = demb_flat.T @ h_flat
    grads["emb.b"] = demb_flat.sum(axis=0)

    dh = (demb_flat @ model.emb_W).reshape(cache.h_top.shape)
    for idx in range(len(model.layers) - 1, -1, -1):
        dh, dW, dU, db = lstm_backward_layer(model.layers[idx], cache.layer_caches[idx], dh)
        grads[f"lstm{idx}.W"] = dW
        grads[f"lstm{idx}.U"] = dU
        grads[f"lstm{idx}.b"] = db
    return {name: grads[name] for name in model.param_dict()}


def save_student(model: StudentModel, path: str | Path) -> None:
    save_weights(model.param_dict(), path)


def load_student(path: str | Path) -> StudentModel:
    tensors = load_weights(path)
    indices = sorted(
        {int(name[4:].split(".")[0]) for name in tensors if name.startswith("lstm")}
    )
    if indices != list(range(len(indices))) or not indices:
        raise FormatError(f"format error: malformed LSTM layer set in {path}")
    layers = [
        LstmLayerParams(tensors[f"lstm{i}.W"], tensors[f"lstm{i}.U"], tensors[f"lstm{i}.b"])
        for i in indices
    ]
    try:
        return StudentModel(
            layers,
            tensors["emb.W"],
            tensors["emb.b"],
            tensors["cls.w"],
            float(tensors["cls.b"][0]),
        )
    except KeyError as exc:
        raise FormatError(f"format error: missing tensor {exc} in {path}") from exc
