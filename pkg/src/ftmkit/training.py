"""Knowledge-transfer training for the streaming student.

The per-utterance objective combines two per-frame terms over the
labeled region (everything past the 50-frame prefix):

    loss = BCE(score_t, class_label) + alpha * MSE(embedding_t, teacher_embedding)

both averaged over labeled frames (MSE also over the 64 dims), so alpha
means the same thing regardless of utterance length. alpha = 0 is the
plain acoustic baseline; alpha > 0 regresses each frame's embedding
onto the utterance's fixed teacher embedding.

Minibatches bucket utterances by length (descending) and zero-pad;
per-frame weight masks keep padded and prefix frames out of both loss
terms. The optimizer is Adam with global gradient-norm clipping. Runs
are deterministic for a fixed seed in single-threaded BLAS mode.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from .corpus import UtteranceRecord
from .errors import (
    ConfigError,
    DegenerateCorpusError,
    EmptyInputError,
    InvalidTargetError,
    MissingTargetError,
    NumericError,
    UtteranceTooShortError,
)
from .features import PREFIX_FRAMES
from .metrics import roc_from_scores
from .student import (
    MitigationSignal,
    StudentModel,
    backward_batch,
    clip_scores,
    forward_batch,
    init_student,
    score_batch,
)

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class FrameLabeling:
    """Per-utterance labeling: one class for every frame past the prefix."""

    class_label: int
    mask_prefix_frames: int = PREFIX_FRAMES

    def __post_init__(self):
        if self.class_label not in (0, 1):
            raise ConfigError(f"config error: class_label must be 0 or 1, got {self.class_label}")
        if self.mask_prefix_frames < 0:
            raise ConfigError("config error: mask_prefix_frames must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    clip_norm: float = 5.0
    seed: int = 0
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ConfigError(f"config error: alpha must be >= 0, got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigError("config error: batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("config error: max_epochs must be >= 0")
        if self.learning_rate <= 0.0:
            raise ConfigError("config error: learning_rate must be positive")
        if self.clip_norm <= 0.0:
            raise ConfigError("config error: clip_norm must be positive")
        if self.early_stop_patience < 1:
            raise ConfigError("config error: early_stop_patience must be >= 1")


def bce_terms(scores: np.ndarray, labels: np.ndarray):
    """Elementwise clamped BCE and its gradient w.r.t. the logit.

    Scores outside the clamp range contribute the clamped loss value and
    zero gradient (the clamp is flat there).
    """
    s = np.clip(scores, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(labels * np.log(s) + (1.0 - labels) * np.log1p(-s))
    in_range = (scores >= BCE_CLAMP) & (scores <= 1.0 - BCE_CLAMP)
    d_logit = np.where(in_range, s - labels, 0.0)
    return loss, d_logit


def combined_loss(
    scores: MitigationSignal | np.ndarray,
    embeddings: np.ndarray,
    labeling: FrameLabeling,
    teacher_embedding: np.ndarray | None,
    alpha: float,
):
    """Per-utterance loss. Returns (loss, {"bce": ..., "mse": ...}).

    ``teacher_embedding`` may be omitted only when alpha is 0; the mse
    entry is then reported as 0.
    """
    if alpha < 0.0:
        raise ConfigError(f"config error: alpha must be >= 0, got {alpha}")
    values = scores.scores if isinstance(scores, MitigationSignal) else np.asarray(scores)
    values = values.reshape(-1).astype(np.float64)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    t = values.shape[0]
    prefix = labeling.mask_prefix_frames
    if t <= prefix:
        raise UtteranceTooShortError(
            f"utterance too short: T={t} leaves no labeled frames past prefix {prefix}"
        )
    if embeddings.shape[0] != t:
        raise ConfigError("config error: scores and embeddings disagree on T")

    labels = np.full(t - prefix, float(labeling.class_label))
    bce_losses, _ = bce_terms(values[prefix:], labels)
    bce = float(np.mean(bce_losses))

    if teacher_embedding is None:
        if alpha > 0.0:
            raise MissingTargetError("missing target: alpha > 0 requires a teacher embedding")
        mse = 0.0
    else:
        target = np.asarray(teacher_embedding, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(target)):
            raise InvalidTargetError("invalid target: non-finite teacher embedding")
        if target.shape[0] != embeddings.shape[1]:
            raise ConfigError(
                f"config error: teacher embedding dim {target.shape[0]} != "
                f"student embedding dim {embeddings.shape[1]}"
            )
        diff = embeddings[prefix:] - target
        mse = float(np.mean(diff * diff))
    return bce + alpha * mse, {"bce": bce, "mse": mse}


class AdamOptimizer:
    """Adaptive moment estimation over a named parameter dict, in place."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale the whole gradient dict to a global norm of at most clip_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise NumericError("numeric error: non-finite gradient norm")
    if norm > clip_norm:
        factor = clip_norm / norm
        for g in grads.values():
            g *= factor
    return norm


@dataclass
class TrainResult:
    model: StudentModel
    history: list[tuple[int, float, float]]  # (epoch, train_loss, cv_auc)
    best_cv_auc: float | None
    best_epoch: int | None


def _check_records(records: Sequence[UtteranceRecord], name: str) -> None:
    if not records:
        raise DegenerateCorpusError(f"degenerate corpus: {name} split is empty")
    labels = {r.class_label for r in records}
    if labels != {0, 1}:
        raise DegenerateCorpusError(f"degenerate corpus: {name} split has classes {labels}")
    for rec in records:
        if rec.features.num_frames <= PREFIX_FRAMES:
            raise UtteranceTooShortError(f"utterance too short: {rec.id}")


def _length_sorted_batches(
    records: Sequence[UtteranceRecord], batch_size: int
) -> list[list[UtteranceRecord]]:
    ordered = sorted(records, key=lambda r: (-r.features.num_frames, r.id))
    return [ordered[i : i + batch_size] for i in range(0, len(ordered), batch_size)]


def _pack(batch: Sequence[UtteranceRecord]):
    lengths = np.array([r.features.num_frames for r in batch])
    t_max = int(lengths.max())
    x = np.zeros((t_max, len(batch), batch[0].features.frames.shape[1]))
    for u, rec in enumerate(batch):
        x[: lengths[u], u, :] = rec.features.frames
    labels = np.array([float(r.class_label) for r in batch])
    return x, lengths, labels


def _frame_weights(t_max: int, lengths: np.ndarray) -> np.ndarray:
    """(T, B) weights: 1 / (B * labeled_length) on labeled frames, else 0."""
    frame_idx = np.arange(t_max)[:, None]
    labeled = (frame_idx >= PREFIX_FRAMES) & (frame_idx < lengths[None, :])
    per_utt = 1.0 / (len(lengths) * (lengths - PREFIX_FRAMES).astype(np.float64))
    return labeled * per_utt[None, :]


def _batch_loss_and_grads(
    model: StudentModel,
    batch: Sequence[UtteranceRecord],
    targets: np.ndarray | None,
    alpha: float,
):
    """Mean combined loss over the batch and its parameter gradients."""
    x, lengths, labels = _pack(batch)
    cache = forward_batch(model, x)
    weights = _frame_weights(x.shape[0], lengths)

    scores = expit(cache.logits)
    losses, d_logit_unit = bce_terms(scores, labels[None, :])
    loss = float(np.sum(weights * losses))
    d_logits = weights * d_logit_unit

    d_emb = None
    if alpha > 0.0:
        embed_dim = cache.embeddings.shape[2]
        w_mse = (alpha / embed_dim) * weights[:, :, None]
        diff = cache.embeddings - targets[None, :, :]
        loss += float(np.sum(w_mse * diff * diff))
        d_emb = 2.0 * w_mse * diff
    grads = backward_batch(model, cache, d_logits, d_emb)
    return loss, grads


def last_frame_scores(model: StudentModel, records: Sequence[UtteranceRecord],
                      batch_size: int = 32) -> np.ndarray:
    """Sigmoid score at each utterance's final frame, in input order."""
    scores = np.empty(len(records))
    order = sorted(range(len(records)),
                   key=lambda i: (-records[i].features.num_frames, records[i].id))
    for lo in range(0, len(order), batch_size):
        chunk = order[lo : lo + batch_size]
        x, lengths, _ = _pack([records[i] for i in chunk])
        logits = score_batch(model, x)
        for pos, rec_idx in enumerate(chunk):
            scores[rec_idx] = expit(logits[lengths[pos] - 1, pos])
    return scores


def score_records(model: StudentModel, records: Sequence[UtteranceRecord],
                  batch_size: int = 32) -> list[MitigationSignal]:
    """Full mitigation signals for every record, via the batched path."""
    signals: list[MitigationSignal | None] = [None] * len(records)
    order = sorted(range(len(records)),
                   key=lambda i: (-records[i].features.num_frames, records[i].id))
    for lo in range(0, len(order), batch_size):
        chunk = order[lo : lo + batch_size]
        x, lengths, _ = _pack([records[i] for i in chunk])
        probs = expit(score_batch(model, x))
        for pos, rec_idx in enumerate(chunk):
            onset = records[rec_idx].features.onset_frame + PREFIX_FRAMES
            signals[rec_idx] = MitigationSignal(
                clip_scores(probs[: lengths[pos], pos]), onset_frame=onset
            )
    return signals


def cv_auc_last_frame(model: StudentModel, records: Sequence[UtteranceRecord],
                      batch_size: int = 32) -> float:
    scores = last_frame_scores(model, records, batch_size)
    labels = np.array([r.class_label for r in records])
    return roc_from_scores(scores[labels == 1], scores[labels == 0]).auc


def train_student(
    train_records: Sequence[UtteranceRecord],
    cv_records: Sequence[UtteranceRecord],
    teacher_embeddings: dict[str, np.ndarray] | None,
    config: TrainConfig,
) -> TrainResult:
    """Minimize the combined objective; return the best-CV-AUC checkpoint.

    With alpha = 0 the teacher embeddings are ignored entirely (the
    acoustic baseline); otherwise every training utterance must have an
    embedding keyed by its id.
    """
    _check_records(train_records, "train")
    _check_records(cv_records, "cv")
    if config.alpha > 0.0:
        if teacher_embeddings is None:
            raise MissingTargetError("missing target: alpha > 0 requires teacher embeddings")
        for rec in train_records:
            if rec.id not in teacher_embeddings:
                raise MissingTargetError(f"missing target: no teacher embedding for {rec.id}")

    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    base_model = init_student(np.random.default_rng(init_seed))
    params = {k: v.copy() for k, v in base_model.param_dict().items()}
    history: list[tuple[int, float, float]] = []
    if config.max_epochs == 0:
        return TrainResult(base_model.with_params(params), history, None, None)

    batches = _length_sorted_batches(train_records, config.batch_size)
    batch_targets: list[np.ndarray | None] = []
    for batch in batches:
        if config.alpha > 0.0:
            batch_targets.append(
                np.stack([
                    np.asarray(teacher_embeddings[r.id], dtype=np.float64) for r in batch
                ])
            )
        else:
            batch_targets.append(None)

    optimizer = AdamOptimizer(params, learning_rate=config.learning_rate)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    n_train = len(train_records)
    best_auc = -np.inf
    best_params: dict[str, np.ndarray] | None = None
    best_epoch: int | None = None
    epochs_since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(batches))
        epoch_loss = 0.0
        for batch_idx in order:
            batch = batches[batch_idx]
            model = base_model.with_params(params)
            loss, grads = _batch_loss_and_grads(
                model, batch, batch_targets[batch_idx], config.alpha
            )
            clip_gradients(grads, config.clip_norm)
            optimizer.step(params, grads)
            epoch_loss += loss * len(batch) / n_train
        auc = cv_auc_last_frame(base_model.with_params(params), cv_records, config.batch_size)
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
    return TrainResult(base_model.with_params(best_params), history, float(best_auc), best_epoch)


def tune_alpha(
    train_records: Sequence[UtteranceRecord],
    cv_records: Sequence[UtteranceRecord],
    teacher_embeddings: dict[str, np.ndarray] | None,
    candidate_alphas: Sequence[float],
    config: TrainConfig = TrainConfig(),
) -> float:
    """Train once per candidate alpha; return the one with the best CV AUC.

    Ties break toward the smaller alpha.
    """
    if len(candidate_alphas) == 0:
        raise EmptyInputError("no candidates: candidate_alphas is empty")
    best_alpha: float | None = None
    best_auc = -np.inf
    for alpha in sorted(float(a) for a in candidate_alphas):
        result = train_student(
            train_records, cv_records, teacher_embeddings, replace(config, alpha=alpha)
        )
        auc = result.best_cv_auc if result.best_cv_auc is not None else -np.inf
        if auc > best_auc:
            best_auc = auc
            best_alpha = alpha
    assert best_alpha is not None
    return best_alpha
