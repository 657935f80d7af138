"""Finite-difference gradient verification.

Compares a hand-derived gradient against central differences of the
loss. Used by the test suite to certify every backward pass; not needed
at inference or training time.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError

DEFAULT_STEP = 1e-5
DEFAULT_MAX_COORDS = 256


def flatten_params(params: dict[str, np.ndarray]) -> np.ndarray:
    """Concatenate a parameter dict into one float64 vector (dict order)."""
    return np.concatenate([np.asarray(v, dtype=np.float64).reshape(-1) for v in params.values()])


def unflatten_params(vector: np.ndarray, template: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Inverse of :func:`flatten_params` against a shape template."""
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name, ref in template.items():
        size = np.asarray(ref).size
        out[name] = np.asarray(vector[offset : offset + size], dtype=np.float64).reshape(
            np.asarray(ref).shape
        )
        offset += size
    if offset != vector.size:
        raise ValueError(f"vector has {vector.size} entries, template needs {offset}")
    return out


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    params: np.ndarray,
    analytic_grad: np.ndarray,
    step: float = DEFAULT_STEP,
    max_coords: int = DEFAULT_MAX_COORDS,
    seed: int = 0,
) -> float:
    """Max relative error between analytic_grad and central differences of f.

    ``f`` maps a flat float64 parameter vector to a scalar loss. For
    vectors longer than ``max_coords``, a seeded random subset of
    coordinates is probed instead of all of them. The relative error
    denominator is floored at max(1e-8, 1e-3 * max|analytic_grad|) so
    near-zero coordinates cannot blow up the ratio.
    """
    params = np.array(params, dtype=np.float64)
    analytic_grad = np.asarray(analytic_grad, dtype=np.float64)
    if analytic_grad.shape != params.shape:
        raise ValueError(
            f"analytic gradient shape {analytic_grad.shape} != params shape {params.shape}"
        )
    if not np.all(np.isfinite(analytic_grad)):
        raise NumericError("numeric error: non-finite analytic gradient")

    n = params.size
    if n <= max_coords:
        coords = np.arange(n)
    else:
        coords = np.random.default_rng(seed).choice(n, size=max_coords, replace=False)

    floor = max(1e-8, 1e-3 * float(np.max(np.abs(analytic_grad))))
    worst = 0.0
    for idx in coords:
        orig = params[idx]
        params[idx] = orig + step
        up = float(f(params))
        params[idx] = orig - step
        down = float(f(params))
        params[idx] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"numeric error: non-finite loss at coordinate {idx}")
        numeric = (up - down) / (2.0 * step)
        a = float(analytic_grad[idx])
        denom = max(abs(a), abs(numeric), floor)
        worst = max(worst, abs(a - numeric) / denom)
    return worst
