"""Command-line pipeline driver.

Subcommands cover the whole workflow: corpus generation, teacher
training, embedding export, student training, fixed- and variable-delay
evaluation, and single-utterance streaming inspection. Evaluation and
training commands write delimited CSV plus a rendered PNG figure next
to it.

Value precedence everywhere: command-line flag > FTM_SEED environment
variable (seed only) > config file > built-in default. Config files are
plain ``key = value`` lines with ``#`` comments.

Exit status is 0 only when every declared output was written and
re-validated; any module error maps to a nonzero exit with a one-line
diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import SPLITS, CorpusConfig, generate_corpus, load_corpus, load_manifest
from .decision import PolicyConfig, decide_variable
from .errors import ConfigError, FtmError, MissingFileError
from .features import load_features
from .metrics import (
    far_at_tpr,
    avg_mdt_sweep,
    fixed_delay_scores,
    roc_from_scores,
    write_roc_csv,
    write_tradeoff_csv,
)
from .plotting import plot_roc_curves, plot_signal, plot_tradeoff, plot_training_curve
from .student import load_student, save_student, student_forward
from .teacher import export_embeddings, load_teacher, save_teacher, train_teacher
from .tensorio import load_embeddings, save_embeddings
from .training import TrainConfig, score_records, train_student
from . import __version__

CORPUS_CONFIG_NAME = "corpus_config.txt"
DEFAULT_T_D_LIST = "1.0,1.5,2.0,2.5,utt-len"
UTT_LEN_TOKEN = "utt-len"


class CliError(FtmError):
    """Raised for command-level failures (bad paths, overwrite refusals)."""


# ---------------------------------------------------------------- config


def _parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"missing file: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config error: expected key = value at {path}:{lineno}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"config error: empty key or value at {path}:{lineno}")
        values[key] = value
    return values


def _coerce_like(default, text: str, key: str):
    """Parse ``text`` to the type of the dataclass default it overrides."""
    try:
        if isinstance(default, bool):
            raise ConfigError(f"config error: {key} is not settable")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [int(p) for p in text.split(",")]
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} values")
            return tuple(parts)
        return text
    except ValueError as exc:
        raise ConfigError(f"config error: bad value for {key}: {text!r}") from exc


def _apply_overrides(config, values: dict[str, str]):
    """Overlay config-file values onto a dataclass instance, typed."""
    known = {f.name: getattr(config, f.name) for f in fields(config)}
    updates = {}
    for key, text in values.items():
        if key not in known:
            raise ConfigError(f"config error: unknown key {key!r}")
        updates[key] = _coerce_like(known[key], text, key)
    return replace(config, **updates) if updates else config


def _resolve_seed(flag_seed: int | None, file_values: dict[str, str], default: int) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("FTM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"config error: FTM_SEED must be an integer, got {env!r}") from exc
    if "seed" in file_values:
        return _coerce_like(default, file_values["seed"], "seed")
    return default


def _load_file_values(args) -> dict[str, str]:
    return _parse_config_file(args.config) if args.config else {}


# ---------------------------------------------------------------- outputs


def _check_overwrite_file(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise CliError(f"refusing to overwrite {path} (pass --force)")


def _check_overwrite_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise CliError(f"refusing to overwrite non-empty {path} (pass --force)")


def _write_history_csv(history, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "cv_auc"])
        for epoch, loss, auc in history:
            writer.writerow([str(epoch), f"{loss:.6f}", f"{auc:.6f}"])


def _validate_csv(path: Path, header: list[str], rows: int) -> None:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != header:
            raise CliError(f"output validation failed: bad header in {path}")
        if sum(1 for _ in reader) != rows:
            raise CliError(f"output validation failed: bad row count in {path}")


def _validate_png(path: Path) -> None:
    with open(path, "rb") as fh:
        if fh.read(8) != b"\x89PNG\r\n\x1a\n":
            raise CliError(f"output validation failed: {path} is not a PNG")


def _parse_t_d_list(text: str) -> list[tuple[str, float | None]]:
    """(tag, delay) pairs; the literal token utt-len means final-frame mode."""
    out: list[tuple[str, float | None]] = []
    for token in (part.strip() for part in text.split(",")):
        if not token:
            raise ConfigError("config error: empty entry in t_d list")
        if token == UTT_LEN_TOKEN:
            out.append((token, None))
            continue
        try:
            value = float(token)
        except ValueError as exc:
            raise ConfigError(
                f"config error: t_d entries must be numbers or {UTT_LEN_TOKEN!r}, "
                f"got {token!r}"
            ) from exc
        if value < 0.0:
            raise ConfigError(f"config error: t_d must be >= 0, got {token}")
        out.append((token, value))
    if not out:
        raise ConfigError("config error: empty t_d list")
    return out


def _deterministic_context(enabled: bool):
    if not enabled:
        import contextlib

        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def _load_split(corpus_dir: Path, split: str, with_lattices: bool):
    if split not in SPLITS:
        raise ConfigError(f"config error: split must be one of {SPLITS}, got {split!r}")
    return load_manifest(corpus_dir / f"manifest_{split}.txt", with_lattices=with_lattices)


def _corpus_vocab_size(corpus_dir: Path) -> int:
    """Vocab size recorded by gen-corpus, falling back to the default."""
    path = corpus_dir / CORPUS_CONFIG_NAME
    if not path.is_file():
        return CorpusConfig().vocab_size
    values = _parse_config_file(path)
    return int(values.get("vocab_size", CorpusConfig().vocab_size))


# ---------------------------------------------------------------- commands


def cmd_gen_corpus(args) -> int:
    file_values = _load_file_values(args)
    config = _apply_overrides(CorpusConfig(), file_values)
    config = replace(config, seed=_resolve_seed(args.seed, file_values, config.seed))
    if args.delta is not None:
        config = replace(config, delta=args.delta)

    out_dir = Path(args.out)
    _check_overwrite_dir(out_dir, args.force)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = generate_corpus(config, out_dir)

    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(config)]
    (out_dir / CORPUS_CONFIG_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")

    loaded = load_corpus(out_dir)
    for split in SPLITS:
        n_true, n_false = config.counts(split)
        if len(loaded[split]) != n_true + n_false:
            raise CliError(f"output validation failed: {split} count mismatch")
        print(f"{split}: {summary[split]['true']} true, {summary[split]['false']} false")
    print(f"corpus written to {out_dir}")
    return 0


def cmd_train_teacher(args) -> int:
    file_values = _load_file_values(args)
    config = _apply_overrides(TrainConfig(), file_values)
    config = replace(config, seed=_resolve_seed(args.seed, file_values, config.seed))
    for name in ("epochs", "batch_size", "learning_rate"):
        value = getattr(args, name)
        if value is not None:
            config = replace(config, **{("max_epochs" if name == "epochs" else name): value})

    corpus_dir = Path(args.corpus)
    out_path = Path(args.out)
    history_path = out_path.with_name(out_path.stem + "_history.csv")
    figure_path = out_path.with_name(out_path.stem + "_training.png")
    for path in (out_path, history_path, figure_path):
        _check_overwrite_file(path, args.force)

    train = _load_split(corpus_dir, "train", with_lattices=True)
    cv = _load_split(corpus_dir, "cv", with_lattices=True)
    vocab_size = _corpus_vocab_size(corpus_dir)
    with _deterministic_context(args.deterministic):
        result = train_teacher(train, cv, config, vocab_size)

    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_teacher(result.model, out_path)
    _write_history_csv(result.history, history_path)
    plot_training_curve(result.history, figure_path)

    load_teacher(out_path)
    _validate_csv(history_path, ["epoch", "train_loss", "cv_auc"], len(result.history))
    _validate_png(figure_path)
    if result.best_cv_auc is not None:
        print(f"best CV AUC {result.best_cv_auc:.6f} at epoch {result.best_epoch}")
    print(f"teacher written to {out_path}")
    return 0


def cmd_embed(args) -> int:
    corpus_dir = Path(args.corpus)
    out_path = Path(args.out)
    _check_overwrite_file(out_path, args.force)
    model = load_teacher(args.model)

    table: dict[str, np.ndarray] = {}
    split_names = [s.strip() for s in args.splits.split(",") if s.strip()]
    if not split_names:
        raise ConfigError("config error: empty split list")
    for split in split_names:
        records = _load_split(corpus_dir, split, with_lattices=True)
        table.update(export_embeddings(model, records))

    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_embeddings(table, out_path)
    if set(load_embeddings(out_path)) != set(table):
        raise CliError(f"output validation failed: {out_path} id set mismatch")
    print(f"{len(table)} embeddings written to {out_path}")
    return 0


def cmd_train_student(args) -> int:
    file_values = _load_file_values(args)
    config = _apply_overrides(TrainConfig(), file_values)
    config = replace(config, seed=_resolve_seed(args.seed, file_values, config.seed))
    for name in ("alpha", "epochs", "batch_size", "learning_rate"):
        value = getattr(args, name)
        if value is not None:
            config = replace(config, **{("max_epochs" if name == "epochs" else name): value})

    corpus_dir = Path(args.corpus)
    out_path = Path(args.out)
    history_path = out_path.with_name(out_path.stem + "_history.csv")
    figure_path = out_path.with_name(out_path.stem + "_training.png")
    for path in (out_path, history_path, figure_path):
        _check_overwrite_file(path, args.force)

    embeddings = load_embeddings(args.embeddings) if args.embeddings else None
    train = _load_split(corpus_dir, "train", with_lattices=False)
    cv = _load_split(corpus_dir, "cv", with_lattices=False)
    with _deterministic_context(args.deterministic):
        result = train_student(train, cv, embeddings, config)

    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_student(result.model, out_path)
    _write_history_csv(result.history, history_path)
    plot_training_curve(result.history, figure_path)

    load_student(out_path)
    _validate_csv(history_path, ["epoch", "train_loss", "cv_auc"], len(result.history))
    _validate_png(figure_path)
    if result.best_cv_auc is not None:
        print(f"best CV AUC {result.best_cv_auc:.6f} at epoch {result.best_epoch}")
    print(f"student written to {out_path}")
    return 0


def cmd_eval_fixed(args) -> int:
    out_dir = Path(args.out_dir)
    _check_overwrite_dir(out_dir, args.force)
    out_dir.mkdir(parents=True, exist_ok=True)

    delays = _parse_t_d_list(args.t_d)
    model = load_student(args.model)
    records = _load_split(Path(args.corpus), args.split, with_lattices=False)
    with _deterministic_context(args.deterministic):
        signals = score_records(model, records)
    labels = np.array([r.class_label for r in records])
    pos_signals = [s for s, keep in zip(signals, labels == 1) if keep]
    neg_signals = [s for s, keep in zip(signals, labels == 0) if keep]

    curves = {}
    summary_rows = []
    for tag, t_d_s in delays:
        curve = roc_from_scores(
            fixed_delay_scores(pos_signals, t_d_s), fixed_delay_scores(neg_signals, t_d_s)
        )
        curves[tag] = curve
        write_roc_csv(curve, out_dir / f"roc_td_{tag}.csv")
        summary_rows.append((tag, curve.auc, far_at_tpr(curve, 0.99)))
        print(f"t_d={tag}: auc={curve.auc:.6f} far@tpr0.99={summary_rows[-1][2]:.6f}")

    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_d", "auc", "far_at_tpr_0.99"])
        for tag, auc, far in summary_rows:
            writer.writerow([tag, f"{auc:.6f}", f"{far:.6f}"])
    figure_path = out_dir / "roc_curves.png"
    plot_roc_curves(curves, figure_path)

    for tag, _ in delays:
        _validate_csv(
            out_dir / f"roc_td_{tag}.csv", ["tau", "far", "tpr"], len(curves[tag].taus)
        )
    _validate_csv(summary_path, ["t_d", "auc", "far_at_tpr_0.99"], len(delays))
    _validate_png(figure_path)
    print(f"report written to {out_dir}")
    return 0


def cmd_eval_stream(args) -> int:
    out_dir = Path(args.out_dir)
    _check_overwrite_dir(out_dir, args.force)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.tau_steps < 2:
        raise ConfigError("config error: tau-steps must be >= 2")

    model = load_student(args.model)
    records = _load_split(Path(args.corpus), args.split, with_lattices=False)
    with _deterministic_context(args.deterministic):
        signals = score_records(model, records)
    labels = np.array([r.class_label for r in records])
    pos_signals = [s for s, keep in zip(signals, labels == 1) if keep]
    neg_signals = [s for s, keep in zip(signals, labels == 0) if keep]

    taus = np.linspace(0.0, 1.0, args.tau_steps)
    tradeoff = avg_mdt_sweep(neg_signals, pos_signals, taus)
    csv_path = out_dir / "tradeoff.csv"
    write_tradeoff_csv(tradeoff, csv_path)
    figure_path = out_dir / "tradeoff.png"
    plot_tradeoff(tradeoff, figure_path)

    _validate_csv(csv_path, ["tau", "tpr", "avg_mdt_s"], len(taus))
    _validate_png(figure_path)
    print(f"report written to {out_dir}")
    return 0


def cmd_run_stream(args) -> int:
    model = load_student(args.model)
    features = load_features(args.features)
    _, signal = student_forward(model, features)
    outcome = decide_variable(signal, PolicyConfig(tau=args.tau))

    for i in range(signal.scores.shape[0]):
        print(f"{i},{i / 100.0:.6f},{signal.scores[i]:.6f}")
    mdt_field = "" if outcome.mdt_s is None else f"{outcome.mdt_s:.6f}"
    print(f"decision,{outcome.decision},{mdt_field}")

    if args.figure:
        figure_path = Path(args.figure)
        _check_overwrite_file(figure_path, args.force)
        figure_path.parent.mkdir(parents=True, exist_ok=True)
        plot_signal(signal, args.tau, outcome, figure_path)
        _validate_png(figure_path)
    return 0


# ---------------------------------------------------------------- parser


def _add_common(parser, seed=True, config=True, force=True, deterministic=False):
    if seed:
        parser.add_argument("--seed", type=int, default=None,
                            help="PRNG seed (overrides FTM_SEED and config file)")
    if config:
        parser.add_argument("--config", default=None,
                            help="key = value config file; flags win over it")
    if force:
        parser.add_argument("--force", action="store_true",
                            help="overwrite existing outputs")
    if deterministic:
        parser.add_argument("--deterministic", action="store_true",
                            help="pin BLAS to one thread for bit-reproducible runs")


def _add_train_flags(parser):
    parser.add_argument("--epochs", type=int, default=None, help="max training epochs")
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftmkit",
        description="Streaming false-trigger mitigation: corpus, training, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the seeded synthetic corpus",
                       description="Writes features/, lattices/, one manifest per split, "
                                   "and corpus_config.txt recording the generator settings.")
    p.add_argument("--out", required=True, help="corpus root directory")
    p.add_argument("--delta", type=float, default=None, help="class-signal strength")
    _add_common(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-teacher", help="train the lattice-embedding teacher",
                       description="Writes the weight file plus <out>_history.csv "
                                   "(epoch,train_loss,cv_auc) and <out>_training.png.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="teacher weight file (.ftmw)")
    _add_train_flags(p)
    _add_common(p, deterministic=True)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("embed", help="export teacher lattice embeddings",
                       description="Writes one 64-dim embedding per utterance id (.ftme).")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="teacher weight file")
    p.add_argument("--out", required=True, help="embedding file (.ftme)")
    p.add_argument("--splits", default="train", help="comma-separated split list")
    _add_common(p, seed=False, config=False)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train-student", help="train the streaming student classifier",
                       description="alpha > 0 needs --embeddings; alpha 0 is the "
                                   "acoustic baseline. Writes the weight file plus "
                                   "<out>_history.csv and <out>_training.png.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="student weight file (.ftmw)")
    p.add_argument("--embeddings", default=None, help="teacher embedding file (.ftme)")
    p.add_argument("--alpha", type=float, default=None,
                   help="knowledge-transfer weight (default 0.1)")
    _add_train_flags(p)
    _add_common(p, deterministic=True)
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("eval-fixed", help="fixed-delay ROC report",
                       description="Per t_d: roc_td_<tag>.csv (tau,far,tpr). Plus "
                                   "summary.csv (t_d,auc,far_at_tpr_0.99) and "
                                   "roc_curves.png.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="student weight file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="eval")
    p.add_argument("--t-d", dest="t_d", default=DEFAULT_T_D_LIST,
                   help=f"comma list of delays in seconds or {UTT_LEN_TOKEN!r} "
                        f"(default {DEFAULT_T_D_LIST})")
    _add_common(p, seed=False, config=False, deterministic=True)
    p.set_defaults(func=cmd_eval_fixed)

    p = sub.add_parser("eval-stream", help="variable-delay trade-off report",
                       description="Writes tradeoff.csv (tau,tpr,avg_mdt_s ascending "
                                   "tau) and tradeoff.png.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="student weight file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="eval")
    p.add_argument("--tau-steps", dest="tau_steps", type=int, default=101,
                   help="thresholds evenly spaced over [0, 1]")
    _add_common(p, seed=False, config=False, deterministic=True)
    p.set_defaults(func=cmd_eval_stream)

    p = sub.add_parser("run-stream", help="stream one utterance and decide",
                       description="Prints frame_index,time_s,score per frame, then "
                                   "decision,accept|reject,mdt_s (mdt_s empty on "
                                   "accept).")
    p.add_argument("--model", required=True, help="student weight file")
    p.add_argument("--features", required=True, help="feature file (.ftmf)")
    p.add_argument("--tau", type=float, required=True, help="rejection threshold")
    p.add_argument("--figure", default=None, help="optional signal PNG path")
    _add_common(p, seed=False, config=False)
    p.set_defaults(func=cmd_run_stream)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FtmError as exc:
        print(f"ftmkit: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
