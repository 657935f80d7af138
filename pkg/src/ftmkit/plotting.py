"""Figure rendering for the evaluation and training reports.

Every function writes one PNG next to the delimited output it
illustrates. The Agg backend is forced so rendering works headless, and
the PNG metadata is pinned so re-runs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .decision import REJECT, DecisionOutcome
from .metrics import MdtTradeoff, RocCurve
from .student import MitigationSignal

# constant Software tag instead of the version-bearing default
_PNG_METADATA = {"Software": "ftmkit"}

_RC = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 150,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
}


def _save(fig, out_path: str | Path) -> None:
    fig.savefig(Path(out_path), metadata=_PNG_METADATA, bbox_inches="tight")
    plt.close(fig)


def plot_roc_curves(curves: dict[str, RocCurve], out_path: str | Path) -> None:
    """Overlay one ROC per decision delay, FAR on x, TPR on y."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for tag, curve in curves.items():
            far, tpr = curve.points[:, 0], curve.points[:, 1]
            ax.plot(far, tpr, label=f"t_d={tag} (AUC {curve.auc:.4f})")
        ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=0.8)
        ax.set_xlabel("false accept rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.legend(loc="lower right")
        _save(fig, out_path)


def plot_tradeoff(trade: MdtTradeoff, out_path: str | Path) -> None:
    """TPR and average mitigation delay against the decision threshold."""
    rows = trade.rows
    with plt.rc_context(_RC):
        fig, (ax_tpr, ax_mdt) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.0))
        ax_tpr.plot(rows[:, 0], rows[:, 1], color="tab:blue")
        ax_tpr.set_ylabel("true positive rate")
        ax_mdt.plot(rows[:, 0], rows[:, 2], color="tab:red")
        ax_mdt.set_ylabel("avg mitigation delay (s)")
        ax_mdt.set_xlabel("threshold tau")
        ax_mdt.set_xlim(0, 1)
        _save(fig, out_path)


def plot_training_curve(
    history: Sequence[tuple[int, float, float]], out_path: str | Path
) -> None:
    """Training loss (left axis) and CV AUC (right axis) per epoch."""
    epochs = [h[0] for h in history]
    losses = [h[1] for h in history]
    aucs = [h[2] for h in history]
    with plt.rc_context(_RC):
        fig, ax_loss = plt.subplots()
        ax_loss.plot(epochs, losses, color="tab:red", marker="o", label="train loss")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss", color="tab:red")
        ax_auc = ax_loss.twinx()
        ax_auc.plot(epochs, aucs, color="tab:blue", marker="s", label="CV AUC")
        ax_auc.set_ylabel("CV AUC", color="tab:blue")
        ax_auc.grid(False)
        if epochs:
            ax_loss.set_xticks(epochs)
        _save(fig, out_path)


def plot_signal(
    signal: MitigationSignal,
    tau: float,
    outcome: DecisionOutcome,
    out_path: str | Path,
) -> None:
    """One utterance's mitigation signal with its variable-policy decision."""
    t = np.arange(signal.scores.shape[0]) / 100.0
    onset_s = signal.onset_frame / 100.0
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(t, signal.scores, color="tab:blue", linewidth=1.0, label="score")
        ax.axhline(tau, color="tab:red", linestyle="--", linewidth=0.8, label=f"tau={tau:g}")
        ax.axvline(onset_s, color="gray", linestyle=":", linewidth=0.8, label="detection event")
        decision_t = outcome.decision_frame / 100.0
        marker = "v" if outcome.decision == REJECT else "^"
        ax.plot([decision_t], [signal.scores[outcome.decision_frame]], marker=marker,
                color="tab:red" if outcome.decision == REJECT else "tab:green",
                markersize=8, linestyle="none", label=outcome.decision)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("device-directedness score")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="best")
        _save(fig, out_path)
