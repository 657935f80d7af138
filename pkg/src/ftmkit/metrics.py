"""Evaluation metrics: ROC/AUC over accept-reject sweeps and the
average-mitigation-delay versus TPR trade-off.

Conventions: a trigger is *accepted* at threshold tau when its score is
>= tau (ties accept, matching the decision policies). TPR is the
accepted fraction of true triggers, FAR the accepted (i.e. unrejected)
fraction of false triggers. AUC is the trapezoid integral of TPR over
FAR along the threshold sweep, which equals the pair-counting
probability P(pos > neg) + 0.5 P(tie).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .decision import ACCEPT, PolicyConfig, decide_variable, fixed_decision_frame
from .errors import ConfigError, DegenerateEvaluationError
from .student import MitigationSignal


@dataclass
class RocCurve:
    """Sweep results: one (far, tpr) point per threshold, far ascending."""

    taus: np.ndarray  # descending, aligned with points
    points: np.ndarray  # (n, 2) columns (far, tpr), far ascending
    auc: float


def roc_from_scores(pos_scores, neg_scores) -> RocCurve:
    """ROC over the threshold set {0} | {distinct scores} | {above all}."""
    pos = np.asarray(pos_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise DegenerateEvaluationError("degenerate evaluation: a class has no scores")
    all_scores = np.concatenate([pos, neg])
    top = max(1.0, float(all_scores.max())) + 1.0  # strictly above every score
    taus = np.unique(np.concatenate([[0.0], all_scores, [top]]))

    # descending taus give (far, tpr) ascending from origin to (1, 1)
    taus_desc = taus[::-1]
    tpr = np.array([np.mean(pos >= tau) for tau in taus_desc])
    far = np.array([np.mean(neg >= tau) for tau in taus_desc])
    points = np.column_stack([far, tpr])
    auc = float(np.trapezoid(tpr, far))
    return RocCurve(taus_desc, points, auc)


def fixed_delay_scores(
    signals: Sequence[MitigationSignal], t_d_s: float | None
) -> np.ndarray:
    """Each signal's score at the fixed policy's decision frame.

    ``t_d_s = None`` reads the final frame (utterance-length mode).
    """
    if len(signals) == 0:
        raise DegenerateEvaluationError("degenerate evaluation: empty signal set")
    return np.array(
        [sig.scores[fixed_decision_frame(sig, t_d_s)] for sig in signals]
    )


def far_at_tpr(curve: RocCurve, target_tpr: float) -> float:
    """FAR linearly interpolated along the curve at the target TPR."""
    if not 0.0 < target_tpr <= 1.0:
        raise ConfigError(f"config error: target TPR must be in (0, 1], got {target_tpr}")
    if curve.points.size == 0:
        raise DegenerateEvaluationError("degenerate evaluation: empty curve")
    far = curve.points[:, 0]
    tpr = curve.points[:, 1]
    at_or_above = np.flatnonzero(tpr >= target_tpr)
    if at_or_above.size == 0:
        # unreachable for curves built by roc_from_scores (tau=0 gives tpr=1)
        return float(far[-1])
    hi = int(at_or_above[0])
    if hi == 0:
        return float(far[hi])  # every point already meets the target
    lo = hi - 1
    w = (target_tpr - tpr[lo]) / (tpr[hi] - tpr[lo])
    return float(far[lo] + w * (far[hi] - far[lo]))


@dataclass
class MdtTradeoff:
    """Rows of (tau, tpr, avg_mdt_s), tau ascending."""

    rows: np.ndarray  # (n, 3)


def avg_mdt_sweep(
    false_trigger_signals: Sequence[MitigationSignal],
    true_trigger_signals: Sequence[MitigationSignal],
    taus: Sequence[float],
) -> MdtTradeoff:
    """Variable-policy sweep.

    Per threshold: average MDT over all false triggers, charging an
    unrejected one its full monitored length; TPR = accepted fraction of
    true triggers.
    """
    if len(false_trigger_signals) == 0 or len(true_trigger_signals) == 0:
        raise DegenerateEvaluationError("degenerate evaluation: empty signal set")
    if len(taus) == 0:
        raise DegenerateEvaluationError("degenerate evaluation: no thresholds")
    rows = []
    for tau in sorted(float(t) for t in taus):
        cfg = PolicyConfig(tau=tau)
        mdts = []
        for signal in false_trigger_signals:
            outcome = decide_variable(signal, cfg)
            if outcome.decision == ACCEPT:
                mdts.append((signal.num_frames - signal.onset_frame) / cfg.frame_rate)
            else:
                mdts.append(outcome.mdt_s)
        accepted = sum(
            decide_variable(signal, cfg).decision == ACCEPT for signal in true_trigger_signals
        )
        rows.append((tau, accepted / len(true_trigger_signals), float(np.mean(mdts))))
    return MdtTradeoff(np.array(rows))


def mdt_at_tpr(tradeoff: MdtTradeoff, target_tpr: float) -> float:
    """Average MDT linearly interpolated at a target TPR.

    Along ascending tau, TPR falls and avg MDT falls; interpolating in
    TPR reads off the delay needed to keep that acceptance rate.
    """
    if not 0.0 < target_tpr <= 1.0:
        raise ConfigError(f"config error: target TPR must be in (0, 1], got {target_tpr}")
    rows = tradeoff.rows[np.argsort(tradeoff.rows[:, 1], kind="stable")]
    tpr = rows[:, 1]
    mdt = rows[:, 2]
    at_or_above = np.flatnonzero(tpr >= target_tpr)
    if at_or_above.size == 0:
        return float(mdt[-1])  # best achievable operating point
    hi = int(at_or_above[0])
    if hi == 0 or tpr[hi] == tpr[hi - 1]:
        return float(mdt[hi])
    lo = hi - 1
    w = (target_tpr - tpr[lo]) / (tpr[hi] - tpr[lo])
    return float(mdt[lo] + w * (mdt[hi] - mdt[lo]))


def write_roc_csv(curve: RocCurve, path: str | Path) -> None:
    """tau,far,tpr rows, tau ascending, 6 decimal places."""
    order = np.argsort(curve.taus, kind="stable")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "far", "tpr"])
        for idx in order:
            writer.writerow(
                [
                    f"{curve.taus[idx]:.6f}",
                    f"{curve.points[idx, 0]:.6f}",
                    f"{curve.points[idx, 1]:.6f}",
                ]
            )


def write_tradeoff_csv(tradeoff: MdtTradeoff, path: str | Path) -> None:
    """tau,tpr,avg_mdt_s rows, tau ascending, 6 decimal places."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "tpr", "avg_mdt_s"])
        for tau, tpr, mdt in tradeoff.rows:
            writer.writerow([f"{tau:.6f}", f"{tpr:.6f}", f"{mdt:.6f}"])
