"""Seeded synthetic corpus generator and manifest loader.

Produces a desk-scale dataset shaped like a voice-trigger log: every
utterance has 40-dim feature frames with a 0.5 s class-neutral prefix,
a class label (1 = device-directed true trigger, 0 = false trigger),
and a word lattice whose structure correlates with the class (false
triggers are longer, branchier, and carry diffuse posteriors).

Feature recipe per utterance: a per-utterance constant offset (nuisance
that caps single-frame separability), stationary AR(1) noise, white
noise, and a class-signed signal along one fixed unit direction that
ramps in linearly after the prefix, so per-frame class evidence
genuinely accumulates with listening time.

Every utterance draws from its own PRNG stream keyed by (seed,
split, index), so generation order and parallelism cannot change the
output, and the same seed always reproduces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, CorruptRecordError, MissingFileError
from .features import FEATURE_DIM, PREFIX_FRAMES, FeatureSequence, load_features, save_features
from .lattice import Lattice, LatticeNode, load_lattice, save_lattice

SPLITS = ("train", "cv", "eval")
_SPLIT_IDS = {"train": 0, "cv": 1, "eval": 2}
_DIRECTION_KEY = 3  # spawn key for the corpus-wide class-signal direction


@dataclass
class CorpusConfig:
    seed: int = 0
    train_true: int = 4000
    train_false: int = 900
    cv_true: int = 450
    cv_false: int = 100
    eval_true: int = 1300
    eval_false: int = 750

    delta: float = 1.0  # class-signal strength along the fixed direction
    ramp_frames: int = 250  # frames to reach full strength after the prefix
    offset_sigma: float = 0.3
    ar_coeff: float = 0.95
    ar_sigma: float = 1.0  # stationary std of the AR(1) component
    white_sigma: float = 0.5

    mean_duration_true_s: float = 3.5
    mean_duration_false_s: float = 5.44
    duration_sigma_log: float = 0.25
    min_duration_s: float = 1.0
    max_duration_s: float = 9.0

    vocab_size: int = 200
    true_stages: tuple[int, int] = (4, 8)
    true_stage_width: tuple[int, int] = (1, 2)
    true_posterior_alpha: float = 0.15
    false_stages: tuple[int, int] = (5, 10)
    false_stage_width: tuple[int, int] = (2, 4)
    false_posterior_alpha: float = 1.5

    def __post_init__(self):
        for name in ("train_true", "train_false", "eval_true", "eval_false",
                     "cv_true", "cv_false"):
            if getattr(self, name) < 1:
                raise ConfigError(f"config error: {name} must be >= 1")
        if self.delta < 0.0:
            raise ConfigError("config error: delta must be >= 0")
        if self.min_duration_s <= (PREFIX_FRAMES + 1) / 100:
            raise ConfigError(
                "config error: min_duration_s must exceed the 0.5 s prefix"
            )
        if not self.min_duration_s <= self.max_duration_s:
            raise ConfigError("config error: duration bounds out of order")
        if self.vocab_size < 2:
            raise ConfigError("config error: vocab_size must be >= 2")
        if self.ramp_frames < 1:
            raise ConfigError("config error: ramp_frames must be >= 1")

    def counts(self, split: str) -> tuple[int, int]:
        return {
            "train": (self.train_true, self.train_false),
            "cv": (self.cv_true, self.cv_false),
            "eval": (self.eval_true, self.eval_false),
        }[split]


@dataclass
class UtteranceRecord:
    id: str
    class_label: int
    duration_s: float
    features: FeatureSequence
    lattice: Lattice | None = None
    teacher_embedding: np.ndarray | None = None

    def __post_init__(self):
        if self.class_label not in (0, 1):
            raise CorruptRecordError(f"corrupt record: label {self.class_label} for {self.id}")
        t = self.features.num_frames
        if t <= PREFIX_FRAMES:
            raise CorruptRecordError(
                f"corrupt record: {self.id} has T={t}, needs more than {PREFIX_FRAMES} frames"
            )
        if abs(self.duration_s - t / 100.0) > 1e-9:
            raise CorruptRecordError(
                f"corrupt record: {self.id} duration {self.duration_s} != T/100"
            )


def _utterance_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_SPLIT_IDS[split], index))
    )


def class_direction(seed: int) -> np.ndarray:
    """The corpus-wide unit vector that carries the class signal."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_DIRECTION_KEY,)))
    v = rng.standard_normal(FEATURE_DIM)
    return v / np.linalg.norm(v)


def _sample_duration_frames(rng: np.random.Generator, cfg: CorpusConfig, label: int) -> int:
    mean = cfg.mean_duration_true_s if label == 1 else cfg.mean_duration_false_s
    mu = np.log(mean) - 0.5 * cfg.duration_sigma_log**2
    dur = float(np.exp(rng.normal(mu, cfg.duration_sigma_log)))
    dur = min(max(dur, cfg.min_duration_s), cfg.max_duration_s)
    return int(round(dur * 100))


def _synth_features(
    rng: np.random.Generator, cfg: CorpusConfig, label: int, t: int, direction: np.ndarray
) -> FeatureSequence:
    offset = rng.normal(0.0, cfg.offset_sigma, size=FEATURE_DIM)
    if cfg.ar_coeff > 0.0:
        # ar_sigma is the stationary std: innovations are scaled down by
        # sqrt(1 - rho^2) and the chain starts from its stationary law
        innov = cfg.ar_sigma * np.sqrt(1.0 - cfg.ar_coeff**2)
        innovations = rng.normal(0.0, innov, size=(t, FEATURE_DIM))
        innovations[0] = rng.normal(0.0, cfg.ar_sigma, size=FEATURE_DIM)
        smooth = lfilter([1.0], [1.0, -cfg.ar_coeff], innovations, axis=0)
    else:
        smooth = rng.normal(0.0, cfg.ar_sigma, size=(t, FEATURE_DIM))
    white = rng.normal(0.0, cfg.white_sigma, size=(t, FEATURE_DIM))

    ramp = np.zeros(t)
    post = np.arange(t) - PREFIX_FRAMES + 1
    ramp[PREFIX_FRAMES:] = np.minimum(post[PREFIX_FRAMES:] / cfg.ramp_frames, 1.0)
    sign = 1.0 if label == 1 else -1.0
    signal = sign * cfg.delta * ramp[:, None] * direction[None, :]

    frames = offset[None, :] + smooth + white + signal
    return FeatureSequence(frames.astype(np.float32))


def _synth_lattice(rng: np.random.Generator, cfg: CorpusConfig, label: int) -> Lattice:
    if label == 1:
        stage_lo, stage_hi = cfg.true_stages
        width_lo, width_hi = cfg.true_stage_width
        alpha = cfg.true_posterior_alpha
    else:
        stage_lo, stage_hi = cfg.false_stages
        width_lo, width_hi = cfg.false_stage_width
        alpha = cfg.false_posterior_alpha
    n_stages = int(rng.integers(stage_lo, stage_hi + 1))
    widths = [1] + [int(rng.integers(width_lo, width_hi + 1)) for _ in range(n_stages - 2)] + [1]

    nodes: list[LatticeNode] = []
    stages: list[list[int]] = []
    for width in widths:
        posteriors = rng.dirichlet(np.full(width, alpha)) if width > 1 else np.array([1.0])
        stage = []
        for slot in range(width):
            p = float(posteriors[slot])
            nodes.append(
                LatticeNode(
                    word_id=int(rng.integers(0, cfg.vocab_size)),
                    posterior=p,
                    am_score=float(np.log(p + 1e-4) + rng.normal(0.0, 0.3)),
                    lm_score=float(rng.normal(0.0, 1.0)),
                    duration_s=float(rng.uniform(0.05, 0.4)),
                )
            )
            stage.append(len(nodes) - 1)
        stages.append(stage)

    edges = [
        (u, v)
        for prev, cur in zip(stages, stages[1:])
        for u in prev
        for v in cur
    ]
    return Lattice(nodes, edges)


def generate_corpus(cfg: CorpusConfig, out_dir: str | Path) -> dict[str, dict[str, int]]:
    """Write features, lattices, and one manifest per split under out_dir.

    Returns {split: {"true": n, "false": m}}.
    """
    root = Path(out_dir)
    direction = class_direction(cfg.seed)
    summary: dict[str, dict[str, int]] = {}
    for split in SPLITS:
        n_true, n_false = cfg.counts(split)
        feat_dir = root / "features" / split
        lat_dir = root / "lattices" / split
        feat_dir.mkdir(parents=True, exist_ok=True)
        lat_dir.mkdir(parents=True, exist_ok=True)
        lines = []
        for index in range(n_true + n_false):
            label = 1 if index < n_true else 0
            rng = _utterance_rng(cfg.seed, split, index)
            t = _sample_duration_frames(rng, cfg, label)
            features = _synth_features(rng, cfg, label, t, direction)
            lat = _synth_lattice(rng, cfg, label)
            utt_id = f"{split}-{index:05d}"
            feat_rel = f"features/{split}/{utt_id}.ftmf"
            lat_rel = f"lattices/{split}/{utt_id}.lat"
            save_features(features, root / feat_rel)
            save_lattice(lat, root / lat_rel)
            lines.append(f"{utt_id},{label},{t},{feat_rel},{lat_rel}")
        (root / f"manifest_{split}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        summary[split] = {"true": n_true, "false": n_false}
    return summary


def load_manifest(manifest_path: str | Path, with_lattices: bool = True) -> list[UtteranceRecord]:
    """Load one split's records, validating every invariant on the way in."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFileError(f"missing file: {manifest_path}")
    root = manifest_path.parent
    records: list[UtteranceRecord] = []
    for lineno, raw in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 5:
            raise CorruptRecordError(
                f"corrupt record: expected 5 fields at {manifest_path}:{lineno}"
            )
        utt_id, label_str, t_str, feat_rel, lat_rel = fields
        try:
            label = int(label_str)
            t_declared = int(t_str)
        except ValueError as exc:
            raise CorruptRecordError(
                f"corrupt record: bad numbers at {manifest_path}:{lineno}"
            ) from exc
        feat_path = root / feat_rel
        if not feat_path.is_file():
            raise MissingFileError(f"missing file: {feat_path}")
        features = load_features(feat_path)
        if features.num_frames != t_declared:
            raise CorruptRecordError(
                f"corrupt record: {utt_id} declares T={t_declared}, file has "
                f"{features.num_frames}"
            )
        lattice = None
        if with_lattices:
            lat_path = root / lat_rel
            if not lat_path.is_file():
                raise MissingFileError(f"missing file: {lat_path}")
            lattice = load_lattice(lat_path)
        records.append(
            UtteranceRecord(
                id=utt_id,
                class_label=label,
                duration_s=t_declared / 100.0,
                features=features,
                lattice=lattice,
            )
        )
    return records


def load_corpus(root: str | Path, with_lattices: bool = True) -> dict[str, list[UtteranceRecord]]:
    root = Path(root)
    return {
        split: load_manifest(root / f"manifest_{split}.txt", with_lattices=with_lattices)
        for split in SPLITS
    }
