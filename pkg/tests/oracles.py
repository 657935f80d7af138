"""Independent reference implementations used only by the test suite.

Each oracle is written directly from the defining formula of the
quantity it checks, with no code shared with the library, so agreement
between the two is meaningful.
"""

from __future__ import annotations

import numpy as np


def pair_counting_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    """AUC as P(score_pos > score_neg) + 0.5 * P(tie), by exhaustive pairs."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    wins = 0.0
    for p in pos:
        wins += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return float(wins / (len(pos) * len(neg)))


def roc_points_bruteforce(pos, neg, thresholds):
    """(far, tpr) per threshold under the accept rule score >= tau."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    pts = []
    for tau in thresholds:
        tpr = float(np.mean(pos >= tau))
        far = float(np.mean(neg >= tau))
        pts.append((far, tpr))
    return pts


def hz_to_mel_htk(hz: float) -> float:
    return 2595.0 * np.log10(1.0 + hz / 700.0)


def mel_to_hz_htk(mel: float) -> float:
    return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)


def mel_band_response(freq_hz: float, n_mels: int = 40, f_low: float = 0.0,
                      f_high: float = 8000.0) -> np.ndarray:
    """Response of each triangular HTK-mel filter to a pure tone at freq_hz.

    Evaluates the triangle shapes analytically in Hz, independent of any
    FFT-bin quantization, so it identifies which band a tone should
    dominate without reusing the library's filterbank construction.
    """
    edges_mel = np.linspace(hz_to_mel_htk(f_low), hz_to_mel_htk(f_high), n_mels + 2)
    edges_hz = np.array([mel_to_hz_htk(m) for m in edges_mel])
    resp = np.zeros(n_mels)
    for k in range(n_mels):
        lo, mid, hi = edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]
        if lo <= freq_hz <= mid:
            resp[k] = (freq_hz - lo) / (mid - lo)
        elif mid < freq_hz <= hi:
            resp[k] = (hi - freq_hz) / (hi - mid)
    return resp


def numeric_gradient(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g
