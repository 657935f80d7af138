"""Accept/reject policies over a mitigation signal.

Two policies: decide once at a fixed delay after the detection event,
or stream and reject at the first frame the score drops below the
threshold. Both measure mitigation delay time (MDT) from the detection
event at ``signal.onset_frame``, and both treat a score equal to the
threshold as staying above it (ties accept; rejection needs a strict
drop).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NoMonitoredFramesError
from .features import FRAME_RATE
from .student import MitigationSignal

ACCEPT = "accept"
REJECT = "reject"


@dataclass(frozen=True)
class PolicyConfig:
    """tau is the rejection threshold; t_d_s the fixed policy's delay.

    ``t_d_s = None`` selects utterance-length mode for the fixed policy:
    the decision is taken at the final frame.
    """

    tau: float
    t_d_s: float | None = None
    frame_rate: int = FRAME_RATE

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"config error: tau must be in [0, 1], got {self.tau}")
        if self.t_d_s is not None and self.t_d_s < 0.0:
            raise ConfigError(f"config error: t_d_s must be >= 0, got {self.t_d_s}")
        if self.frame_rate <= 0:
            raise ConfigError("config error: frame_rate must be positive")


@dataclass(frozen=True)
class DecisionOutcome:
    decision: str  # ACCEPT or REJECT
    mdt_s: float | None  # rejection delay from the detection event; None on accept
    decision_frame: int

    def __post_init__(self):
        if self.decision == REJECT and (self.mdt_s is None or self.mdt_s < 0.0):
            raise ConfigError("config error: rejection requires a non-negative mdt_s")


def _check_monitored(signal: MitigationSignal) -> None:
    if signal.num_frames <= signal.onset_frame:
        raise NoMonitoredFramesError(
            f"no monitored frames: T={signal.num_frames} <= onset {signal.onset_frame}"
        )


def fixed_decision_frame(
    signal: MitigationSignal, t_d_s: float | None, frame_rate: int = FRAME_RATE
) -> int:
    """The frame the fixed policy reads: onset + t_d, clipped to the last.

    ``t_d_s = None`` (utterance-length mode) selects the final frame.
    """
    _check_monitored(signal)
    last = signal.num_frames - 1
    if t_d_s is None:
        return last
    return min(signal.onset_frame + round(t_d_s * frame_rate), last)


def decide_fixed(signal: MitigationSignal, cfg: PolicyConfig) -> DecisionOutcome:
    """Decide once, at onset + t_d (clipped to the final frame).

    On rejection, mdt_s reports the configured delay itself.
    """
    frame = fixed_decision_frame(signal, cfg.t_d_s, cfg.frame_rate)
    if cfg.t_d_s is None:
        t_d = (signal.num_frames - 1 - signal.onset_frame) / cfg.frame_rate
    else:
        t_d = cfg.t_d_s
    if signal.scores[frame] < cfg.tau:
        return DecisionOutcome(REJECT, t_d, frame)
    return DecisionOutcome(ACCEPT, None, frame)


def decide_variable(signal: MitigationSignal, cfg: PolicyConfig) -> DecisionOutcome:
    """Reject at the first monitored frame whose score drops below tau."""
    _check_monitored(signal)
    monitored = signal.scores[signal.onset_frame :]
    below = np.flatnonzero(monitored < cfg.tau)
    if below.size:
        frame = signal.onset_frame + int(below[0])
        return DecisionOutcome(REJECT, (frame - signal.onset_frame) / cfg.frame_rate, frame)
    return DecisionOutcome(ACCEPT, None, signal.num_frames - 1)
