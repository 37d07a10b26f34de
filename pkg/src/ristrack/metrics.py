"""Angular error/dispersion metrics and training-cost FLOP formulas.

Phase differences are wrapped to (-pi, pi] before any norm unless
``wrap=False`` is passed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FlopsBreakdown",
    "angular_difference",
    "circular_mean",
    "rmse",
    "rms_angular_error",
    "mean_abs_deviation",
    "std_deviation",
    "lsm_training_flops",
    "ensemble_training_flops",
    "ridge_readout_flops",
    "metrics_csv_rows",
]


def angular_difference(a, b, wrap: bool = True) -> np.ndarray:
    """a - b mapped into (-pi, pi]."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if not wrap:
        return d
    w = np.pi - np.mod(np.pi - d, 2.0 * np.pi)
    return w


def circular_mean(phases, axis: int = 0, weights=None) -> np.ndarray:
    phases = np.asarray(phases, dtype=float)
    z = np.average(np.exp(1j * phases), axis=axis, weights=weights)
    return np.mod(np.angle(z), 2.0 * np.pi)


def _check_same_shape(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(predicted, truth, wrap: bool = True) -> float:
    """sqrt of the summed squared (wrapped) phase errors over all entries."""
    predicted, truth = _check_same_shape(predicted, truth)
    d = angular_difference(predicted, truth, wrap)
    return float(np.sqrt(np.sum(d * d)))


def rms_angular_error(predicted, truth, wrap: bool = True) -> float:
    """Per-entry root-mean-square phase error (size-independent)."""
    predicted, truth = _check_same_shape(predicted, truth)
    if predicted.size == 0:
        return 0.0
    d = angular_difference(predicted, truth, wrap)
    return float(np.sqrt(np.mean(d * d)))


def _deviation_norms(predictions, wrap: bool) -> np.ndarray:
    p = np.asarray(predictions, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.shape[0] == 0:
        raise ValueError("need at least one prediction (Q >= 1)")
    if p.shape[0] == 1:
        # a lone prediction is its own mean; skip the atan2 round trip
        return np.zeros(1)
    mu = circular_mean(p, axis=0) if wrap else p.mean(axis=0)
    dev = angular_difference(p, mu[None, :], wrap)
    return np.linalg.norm(dev, axis=1)


def mean_abs_deviation(predictions, wrap: bool = True) -> float:
    """tau1: mean over the Q predictions of ||prediction - mean||.

    ``predictions`` is Q x M (or length-Q for M = 1); the mean is circular.
    """
    return float(np.mean(_deviation_norms(predictions, wrap)))


def std_deviation(predictions, wrap: bool = True) -> float:
    """tau2: root of the mean over Q of ||prediction - mean||^2."""
    n = _deviation_norms(predictions, wrap)
    return float(np.sqrt(np.mean(n * n)))


@dataclass(frozen=True)
class FlopsBreakdown:
    additions: int
    multiplications: int
    parameters: tuple = ()

    def __post_init__(self):
        if self.additions < 0 or self.multiplications < 0:
            raise ValueError("FLOP counts are nonnegative")


def lsm_training_flops(T_max: int, T_0: int, N_in: int, N_res: int, N_out: int) -> FlopsBreakdown:
    """Closed-form readout training cost, evaluated term by term as published."""
    if T_max < T_0:
        raise ValueError("T_max must be >= T_0")
    if min(T_0, N_in, N_res, N_out) < 0:
        raise ValueError("arguments must be nonnegative")
    n = T_max - T_0
    c = N_res + N_in
    additions = (n + 1) ** 2 * (N_res + N_in + n) + c * (n + 1) * n + N_out * c * n
    multiplications = (n + 1) ** 2 * (N_res + 2 + n) * c * (n + 1) ** 2 + N_out * c * (n + 1) ** 2
    return FlopsBreakdown(int(additions), int(multiplications), (T_max, T_0, N_in, N_res, N_out))


def ensemble_training_flops(items) -> FlopsBreakdown:
    """Parallel training cost: elementwise max over the learners."""
    items = list(items)
    if not items:
        raise ValueError("need at least one learner")
    return FlopsBreakdown(max(i.additions for i in items),
                          max(i.multiplications for i in items),
                          ("max", len(items)))


def ridge_readout_flops(n_rows: int, n_features: int, n_out: int, dual: bool) -> FlopsBreakdown:
    """Operation count of the ridge solve actually performed by the readout fit.

    Counts Gram formation, right-hand side, an LU solve (2/3 k^3) and the
    back-substitution for ``n_out`` right-hand sides.
    """
    n, p, q = n_rows, n_features, n_out
    if dual:
        gram_m, gram_a = n * n * p, n * n * (p - 1)
        k = n
        rhs_m, rhs_a = 0, 0
        post_m, post_a = p * n * q, p * (n - 1) * q
    else:
        gram_m, gram_a = p * p * n, p * p * (n - 1)
        k = p
        rhs_m, rhs_a = p * q * n, p * q * (n - 1)
        post_m, post_a = 0, 0
    lu = (2 * k ** 3) // 3
    back = 2 * k * k * q
    mults = gram_m + rhs_m + post_m + lu // 2 + back // 2
    adds = gram_a + rhs_a + post_a + k + lu - lu // 2 + back - back // 2
    return FlopsBreakdown(int(adds), int(mults), (n, p, q, "dual" if dual else "primal"))


def metrics_csv_rows(items, context: str = "") -> list:
    """``metric,value,context`` lines, values with 17 significant digits."""
    return [f"{name},{float(value):.17g},{context}" for name, value in items]
