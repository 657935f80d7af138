import numpy as np
import pytest

from ftmkit.decision import (
    ACCEPT,
    REJECT,
    DecisionOutcome,
    PolicyConfig,
    decide_fixed,
    decide_variable,
)
from ftmkit.errors import ConfigError, NoMonitoredFramesError
from ftmkit.student import MitigationSignal


def make_signal(scores, onset=50):
    return MitigationSignal(np.asarray(scores, dtype=np.float64), onset_frame=onset)


def random_signal(rng, min_len=60, max_len=300, onset=50):
    n = int(rng.integers(min_len, max_len + 1))
    return make_signal(rng.uniform(0.01, 0.99, size=n), onset=onset)


def test_policy_config_validation():
    with pytest.raises(ConfigError):
        PolicyConfig(tau=-0.1)
    with pytest.raises(ConfigError):
        PolicyConfig(tau=1.5)
    with pytest.raises(ConfigError):
        PolicyConfig(tau=0.5, t_d_s=-1.0)
    with pytest.raises(ConfigError):
        DecisionOutcome(REJECT, None, 0)


def test_fixed_policy_example():
    scores = np.full(200, 0.9)
    scores[150] = 0.3  # frame onset + 100
    signal = make_signal(scores)
    outcome = decide_fixed(signal, PolicyConfig(tau=0.5, t_d_s=1.0))
    assert outcome.decision == REJECT
    assert outcome.mdt_s == pytest.approx(1.0)
    assert outcome.decision_frame == 150


def test_fixed_policy_clips_to_last_frame():
    # 0.8 s past onset but t_d = 2 s: decision at the final frame
    signal = make_signal(np.full(130, 0.2))
    outcome = decide_fixed(signal, PolicyConfig(tau=0.5, t_d_s=2.0))
    assert outcome.decision_frame == 129
    assert outcome.decision == REJECT
    assert outcome.mdt_s == pytest.approx(2.0)  # reported delay is the configured one


def test_fixed_policy_utt_length_mode():
    scores = np.full(180, 0.9)
    scores[-1] = 0.1
    signal = make_signal(scores)
    outcome = decide_fixed(signal, PolicyConfig(tau=0.5, t_d_s=None))
    assert outcome.decision_frame == 179
    assert outcome.decision == REJECT
    assert outcome.mdt_s == pytest.approx((179 - 50) / 100)


def test_fixed_policy_tau_zero_accepts():
    rng = np.random.default_rng(0)
    for _ in range(50):
        signal = random_signal(rng)
        assert decide_fixed(signal, PolicyConfig(tau=0.0, t_d_s=1.0)).decision == ACCEPT


def test_variable_policy_first_drop():
    scores = np.full(120, 0.9)
    scores[70] = 0.2
    scores[90] = 0.1
    signal = make_signal(scores)
    outcome = decide_variable(signal, PolicyConfig(tau=0.5))
    assert outcome.decision == REJECT
    assert outcome.decision_frame == 70
    assert outcome.mdt_s == pytest.approx(0.2)


def test_variable_policy_tie_accepts():
    signal = make_signal(np.full(80, 0.5))
    assert decide_variable(signal, PolicyConfig(tau=0.5)).decision == ACCEPT
    assert decide_fixed(signal, PolicyConfig(tau=0.5, t_d_s=0.1)).decision == ACCEPT


def test_variable_policy_boundary_laws():
    rng = np.random.default_rng(1)
    for _ in range(200):
        signal = random_signal(rng)
        accept_all = decide_variable(signal, PolicyConfig(tau=0.0))
        assert accept_all.decision == ACCEPT
        assert accept_all.mdt_s is None
        reject_all = decide_variable(signal, PolicyConfig(tau=1.0))
        assert reject_all.decision == REJECT
        assert reject_all.mdt_s == 0.0
        assert reject_all.decision_frame == signal.onset_frame


def test_variable_policy_monotone_in_tau():
    rng = np.random.default_rng(2)
    for _ in range(100):
        signal = random_signal(rng)
        tau1, tau2 = sorted(rng.uniform(0.0, 1.0, size=2))
        o1 = decide_variable(signal, PolicyConfig(tau=tau1))
        o2 = decide_variable(signal, PolicyConfig(tau=tau2))
        if o1.decision == REJECT:
            assert o2.decision == REJECT
            assert o2.mdt_s <= o1.mdt_s
        if o1.decision == ACCEPT and o2.decision == ACCEPT:
            continue


def test_fixed_policy_monotone_in_tau():
    rng = np.random.default_rng(3)
    for _ in range(100):
        signal = random_signal(rng)
        tau1, tau2 = sorted(rng.uniform(0.0, 1.0, size=2))
        cfg1 = PolicyConfig(tau=tau1, t_d_s=1.0)
        cfg2 = PolicyConfig(tau=tau2, t_d_s=1.0)
        if decide_fixed(signal, cfg1).decision == REJECT:
            assert decide_fixed(signal, cfg2).decision == REJECT


def test_variable_policy_truncation_invariance():
    rng = np.random.default_rng(4)
    for _ in range(50):
        signal = random_signal(rng)
        tau = float(rng.uniform(0.2, 0.9))
        outcome = decide_variable(signal, PolicyConfig(tau=tau))
        if outcome.decision == REJECT:
            cut = MitigationSignal(
                signal.scores[: outcome.decision_frame + 1], onset_frame=signal.onset_frame
            )
            again = decide_variable(cut, PolicyConfig(tau=tau))
            assert again.decision == REJECT
            assert again.decision_frame == outcome.decision_frame
            assert again.mdt_s == outcome.mdt_s


def test_no_monitored_frames():
    signal = make_signal(np.full(40, 0.5), onset=50)
    with pytest.raises(NoMonitoredFramesError):
        decide_variable(signal, PolicyConfig(tau=0.5))
    with pytest.raises(NoMonitoredFramesError):
        decide_fixed(signal, PolicyConfig(tau=0.5, t_d_s=1.0))
