"""Lattice-embedding teacher.

Embeds a word lattice into a 64-dim vector: each node is featurized as
a learned 60-dim word embedding concatenated with its four scalars
(posterior, am score, lm score, duration), passed through two masked
self-attention layers whose mask allows self plus symmetric one-hop
lattice neighbors, then mean-pooled over nodes and layer-normalized.
A sigmoid classifier on the normalized embedding drives pretraining;
the same embeddings are then exported as knowledge-transfer targets
for the student. The output norm keeps the targets at unit scale, so
the student's transfer-loss weight has a stable meaning no matter how
large the classifier margins grew during pretraining.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from pathlib import Path

from .corpus import UtteranceRecord
from .errors import (
    DegenerateCorpusError,
    FormatError,
    MissingLatticeError,
    ShapeError,
    VocabError,
)
from .lattice import Lattice
from .tensorio import load_weights, save_weights
from .metrics import roc_from_scores
from .neural import (
    AttentionLayerParams,
    attention_backward,
    attention_forward,
    init_attention_layer,
    layer_norm,
    layer_norm_backward,
)
from .training import AdamOptimizer, TrainConfig, bce_terms, clip_gradients

WORD_EMBED_DIM = 60
SCALAR_FEATURES = 4
MODEL_DIM = WORD_EMBED_DIM + SCALAR_FEATURES  # 64, no input projection
TEACHER_LAYERS = 2
TEACHER_HEADS = 4


@dataclass
class TeacherModel:
    word_emb: np.ndarray  # (V, 60)
    layers: list[AttentionLayerParams]
    out_gamma: np.ndarray  # (64,) output-norm scale
    out_beta: np.ndarray  # (64,) output-norm shift
    cls_w: np.ndarray  # (64,)
    cls_b: float

    def __post_init__(self):
        self.word_emb = np.asarray(self.word_emb, dtype=np.float64)
        self.out_gamma = np.asarray(self.out_gamma, dtype=np.float64)
        self.out_beta = np.asarray(self.out_beta, dtype=np.float64)
        self.cls_w = np.asarray(self.cls_w, dtype=np.float64)
        self.cls_b = float(self.cls_b)
        if self.word_emb.ndim != 2 or self.word_emb.shape[1] != WORD_EMBED_DIM:
            raise ShapeError(f"shape error: word embedding table {self.word_emb.shape}")
        for layer in self.layers:
            if layer.model_dim != MODEL_DIM or layer.heads != TEACHER_HEADS:
                raise ShapeError(
                    f"shape error: teacher layers must be {MODEL_DIM}-dim, "
                    f"{TEACHER_HEADS}-headed"
                )
        if self.out_gamma.shape != (MODEL_DIM,) or self.out_beta.shape != (MODEL_DIM,):
            raise ShapeError(
                f"shape error: output norm {self.out_gamma.shape}/{self.out_beta.shape}"
            )
        if self.cls_w.shape != (MODEL_DIM,):
            raise ShapeError(f"shape error: classifier weights {self.cls_w.shape}")

    @property
    def vocab_size(self) -> int:
        return self.word_emb.shape[0]

    def param_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"word_emb": self.word_emb}
        for idx, layer in enumerate(self.layers):
            for name, tensor in layer.param_dict().items():
                out[f"attn{idx}.{name}"] = tensor
        out["out.gamma"] = self.out_gamma
        out["out.beta"] = self.out_beta
        out["cls.w"] = self.cls_w
        out["cls.b"] = np.array([self.cls_b])
        return out

    def with_params(self, params: dict[str, np.ndarray]) -> "TeacherModel":
        layers = []
        for idx in range(len(self.layers)):
            fields = {
                name: params[f"attn{idx}.{name}"]
                for name in self.layers[idx].param_dict()
            }
            layers.append(AttentionLayerParams(**fields))
        return TeacherModel(
            params["word_emb"],
            layers,
            params["out.gamma"],
            params["out.beta"],
            params["cls.w"],
            float(np.asarray(params["cls.b"]).reshape(-1)[0]),
        )

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.param_dict().values()))


def init_teacher(rng: np.random.Generator, vocab_size: int) -> TeacherModel:
    k = 1.0 / np.sqrt(WORD_EMBED_DIM)
    return TeacherModel(
        word_emb=rng.uniform(-k, k, size=(vocab_size, WORD_EMBED_DIM)),
        layers=[
            init_attention_layer(MODEL_DIM, TEACHER_HEADS, rng) for _ in range(TEACHER_LAYERS)
        ],
        out_gamma=np.ones(MODEL_DIM),
        out_beta=np.zeros(MODEL_DIM),
        cls_w=rng.uniform(-0.125, 0.125, size=MODEL_DIM),
        cls_b=float(rng.uniform(-0.125, 0.125)),
    )


def build_mask(lattice: Lattice) -> np.ndarray:
    """Self plus symmetric one-hop adjacency."""
    n = lattice.num_nodes
    mask = np.eye(n, dtype=bool)
    for u, v in lattice.edges:
        mask[u, v] = True
        mask[v, u] = True
    return mask


def node_features(model: TeacherModel, lattice: Lattice) -> np.ndarray:
    word_ids = np.array([node.word_id for node in lattice.nodes])
    if word_ids.max(initial=0) >= model.vocab_size:
        raise VocabError(
            f"vocab error: word_id {int(word_ids.max())} >= vocab size {model.vocab_size}"
        )
    scalars = np.array(
        [[n.posterior, n.am_score, n.lm_score, n.duration_s] for n in lattice.nodes]
    )
    return np.concatenate([model.word_emb[word_ids], scalars], axis=1)


@dataclass
class TeacherForwardCache:
    word_ids: np.ndarray
    layer_caches: list
    out_ln_cache: tuple
    pooled: np.ndarray  # (64,) normalized lattice embedding
    logit: float


def teacher_forward(model: TeacherModel, lattice: Lattice) -> TeacherForwardCache:
    states = node_features(model, lattice)
    mask = build_mask(lattice)
    layer_caches = []
    for layer in model.layers:
        states, cache = attention_forward(layer, states, mask)
        layer_caches.append(cache)
    pooled_raw = states.mean(axis=0)
    pooled, out_ln_cache = layer_norm(pooled_raw, model.out_gamma, model.out_beta)
    logit = float(model.cls_w @ pooled + model.cls_b)
    word_ids = np.array([node.word_id for node in lattice.nodes])
    return TeacherForwardCache(word_ids, layer_caches, out_ln_cache, pooled, logit)


def lattice_embed(model: TeacherModel, lattice: Lattice) -> np.ndarray:
    """The 64-dim normalized mean-pooled lattice embedding."""
    return teacher_forward(model, lattice).pooled


def teacher_score(model: TeacherModel, lattice: Lattice) -> float:
    return float(expit(teacher_forward(model, lattice).logit))


def teacher_backward(
    model: TeacherModel,
    cache: TeacherForwardCache,
    d_logit: float = 0.0,
    d_pooled: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its pooled-embedding/logit gradients."""
    grads: dict[str, np.ndarray] = {
        "cls.w": d_logit * cache.pooled,
        "cls.b": np.array([d_logit]),
    }
    d_pool = d_logit * model.cls_w
    if d_pooled is not None:
        d_pool = d_pool + d_pooled
    d_raw, d_gamma, d_beta = layer_norm_backward(d_pool, cache.out_ln_cache)
    grads["out.gamma"] = d_gamma
    grads["out.beta"] = d_beta
    n = cache.word_ids.shape[0]
    d_states = np.tile(d_raw / n, (n, 1))
    for idx in range(len(model.layers) - 1, -1, -1):
        d_states, layer_grads = attention_backward(
            model.layers[idx], cache.layer_caches[idx], d_states
        )
        for name, g in layer_grads.items():
            grads[f"attn{idx}.{name}"] = g
    d_word_emb = np.zeros_like(model.word_emb)
    np.add.at(d_word_emb, cache.word_ids, d_states[:, :WORD_EMBED_DIM])
    grads["word_emb"] = d_word_emb
    return {name: grads[name] for name in model.param_dict()}


@dataclass
class TeacherTrainResult:
    model: TeacherModel
    history: list[tuple[int, float, float]]  # (epoch, train_loss, cv_auc)
    best_cv_auc: float | None
    best_epoch: int | None


def _lattice_of(rec: UtteranceRecord) -> Lattice:
    if rec.lattice is None:
        raise MissingLatticeError(f"missing lattice: {rec.id}")
    return rec.lattice


def _check_classes(records: Sequence[UtteranceRecord], name: str) -> None:
    if not records:
        raise DegenerateCorpusError(f"degenerate corpus: {name} split is empty")
    labels = {r.class_label for r in records}
    if labels != {0, 1}:
        raise DegenerateCorpusError(f"degenerate corpus: {name} split has classes {labels}")


def teacher_cv_auc(model: TeacherModel, records: Sequence[UtteranceRecord]) -> float:
    scores = np.array([teacher_score(model, _lattice_of(r)) for r in records])
    labels = np.array([r.class_label for r in records])
    return roc_from_scores(scores[labels == 1], scores[labels == 0]).auc


def train_teacher(
    train_records: Sequence[UtteranceRecord],
    cv_records: Sequence[UtteranceRecord],
    config: TrainConfig,
    vocab_size: int,
) -> TeacherTrainResult:
    """Minimize utterance-level BCE of the lattice classifier.

    Lattices are processed one at a time (they are tiny and vary in
    node count); gradients accumulate over minibatches of config.batch_size.
    Returns the parameters at the best CV AUC.
    """
    _check_classes(train_records, "train")
    _check_classes(cv_records, "cv")
    for rec in (*train_records, *cv_records):
        lat = _lattice_of(rec)
        if max((n.word_id for n in lat.nodes), default=0) >= vocab_size:
            raise VocabError(f"vocab error: {rec.id} exceeds vocab size {vocab_size}")

    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    base_model = init_teacher(np.random.default_rng(init_seed), vocab_size)
    params = {k: v.copy() for k, v in base_model.param_dict().items()}
    history: list[tuple[int, float, float]] = []
    if config.max_epochs == 0:
        return TeacherTrainResult(base_model.with_params(params), history, None, None)

    optimizer = AdamOptimizer(params, learning_rate=config.learning_rate)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    order_pool = sorted(range(len(train_records)), key=lambda i: train_records[i].id)
    n_train = len(train_records)
    best_auc = -np.inf
    best_params: dict[str, np.ndarray] | None = None
    best_epoch: int | None = None
    epochs_since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(order_pool)
        epoch_loss = 0.0
        for lo in range(0, n_train, config.batch_size):
            chunk = order[lo : lo + config.batch_size]
            model = base_model.with_params(params)
            grads_sum: dict[str, np.ndarray] | None = None
            batch_loss = 0.0
            inv = 1.0 / len(chunk)
            for rec_idx in chunk:
                rec = train_records[rec_idx]
                cache = teacher_forward(model, _lattice_of(rec))
                score = expit(np.array([cache.logit]))
                loss_vec, d_logit_vec = bce_terms(score, np.array([float(rec.class_label)]))
                batch_loss += float(loss_vec[0]) * inv
                grads = teacher_backward(model, cache, d_logit=float(d_logit_vec[0]) * inv)
                if grads_sum is None:
                    grads_sum = grads
                else:
                    for name in grads_sum:
                        grads_sum[name] += grads[name]
            assert grads_sum is not None
            clip_gradients(grads_sum, config.clip_norm)
            optimizer.step(params, grads_sum)
            epoch_loss += batch_loss * len(chunk) / n_train
        auc = teacher_cv_auc(base_model.with_params(params), cv_records)
        history.append((epoch, epoch_loss, auc))
        if auc > best_auc:
            best_auc = auc
            best_params = {k: v.copy() for k, v in params.items()}
            best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.early_stop_patience:
                break

    assert best_params is not None
    return TeacherTrainResult(
        base_model.with_params(best_params), history, float(best_auc), best_epoch
    )


def save_teacher(model: TeacherModel, path: str | Path) -> None:
    save_weights(model.param_dict(), path)


def load_teacher(path: str | Path) -> TeacherModel:
    tensors = load_weights(path)
    indices = sorted(
        {int(name[4:].split(".")[0]) for name in tensors if name.startswith("attn")}
    )
    if indices != list(range(len(indices))) or not indices:
        raise FormatError(f"format error: malformed attention layer set in {path}")
    try:
        layers = [
            AttentionLayerParams(
                **{
                    field: tensors[f"attn{i}.{field}"]
                    for field in ("ln_gamma", "ln_beta", "Wq", "bq", "Wk", "bk",
                                  "Wv", "bv", "Wo", "bo")
                }
            )
            for i in indices
        ]
        return TeacherModel(
            tensors["word_emb"],
            layers,
            tensors["out.gamma"],
            tensors["out.beta"],
            tensors["cls.w"],
            float(tensors["cls.b"][0]),
        )
    except KeyError as exc:
        raise FormatError(f"format error: missing tensor {exc} in {path}") from exc


def export_embeddings(
    model: TeacherModel, records: Sequence[UtteranceRecord]
) -> dict[str, np.ndarray]:
    """One float32 64-dim embedding per utterance, keyed by id.

    float32 is the persisted precision, so in-process targets and
    file-round-tripped targets are bit-identical.
    """
    out: dict[str, np.ndarray] = {}
    for rec in records:
        if rec.id in out:
            raise FormatError(f"format error: duplicate utterance id {rec.id}")
        out[rec.id] = lattice_embed(model, _lattice_of(rec)).astype(np.float32)
    return out
