"""Bootstrap-aggregated reservoir ensemble with accuracy-weighted circular averaging."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .reservoir import (
    ReservoirArch,
    ReservoirModel,
    _drive,
    _final_states,
    decode_phases,
    encode_phases,
    init_lsm,
    readout,
    train_readout,
    update_state,
)
from .trajectory import PhaseTrajectory, as_phases

__all__ = [
    "BootstrapSpec",
    "EnsembleModel",
    "LearnerTrainingError",
    "bootstrap_indices",
    "learner_seed",
    "inverse_rmse_weights",
    "train_ensemble",
    "aggregate",
    "ensemble_predict_next",
    "ensemble_forecast",
    "ensemble_one_step_predictions",
]

WEIGHT_EPS = 1e-12


class LearnerTrainingError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"learner {index} failed to train: {cause}")
        self.index = index
        self.cause = cause


@dataclass(frozen=True)
class BootstrapSpec:
    block_len: int = 10
    coverage: float = 0.8
    master_seed: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def bootstrap_indices(T: int, m1: int, block_len: int, coverage: float, seed: int) -> list:
    """``m1`` block-bootstrap index sets over range(T).

    Each set stacks whole contiguous blocks whose starts are uniform with
    replacement, until at least ``coverage * T`` indices are drawn. Repeats
    are kept; every set is sorted.
    """
    if block_len < 2:
        raise ValueError("block_len must be >= 2")
    if not 0 < coverage <= 1:
        raise ValueError("coverage must lie in (0, 1]")
    if T < block_len:
        raise ValueError(f"T = {T} is shorter than block_len = {block_len}")
    if m1 < 1:
        raise ValueError("m1 must be >= 1")
    n_blocks = math.ceil(coverage * T / block_len)
    subsets = []
    for i in range(m1):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i, 11]))
        starts = rng.integers(0, T - block_len + 1, size=n_blocks)
        idx = (starts[:, None] + np.arange(block_len)[None, :]).reshape(-1)
        subsets.append(np.sort(idx))
    return subsets


def learner_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


def inverse_rmse_weights(rmses) -> np.ndarray:
    w = 1.0 / (WEIGHT_EPS + np.asarray(rmses, dtype=float))
    return w / w.sum()


@dataclass
class EnsembleModel:
    learners: list
    weights: np.ndarray
    bootstrap_spec: BootstrapSpec

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.learners) < 1:
            raise ValueError("ensemble needs at least one learner")
        if self.weights.shape != (len(self.learners),):
            raise ValueError("one weight per learner required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")

    @property
    def m1(self) -> int:
        return len(self.learners)


def train_ensemble(arch: ReservoirArch, trajectory, m1: int = 15,
                   bootstrap_spec: Optional[BootstrapSpec] = None, master_seed: Optional[int] = None,
                   train_fraction: float = 0.7, init_mode: str = "xavier",
                   n_jobs: int = 1) -> EnsembleModel:
    """Train ``m1`` learners on block-bootstrapped regression rows.

    Learner i uses seed ``learner_seed(master_seed, i)`` and the i-th index set
    from :func:`bootstrap_indices` over the training span. Results are
    assembled in learner order whatever the completion order.
    """
    spec = bootstrap_spec or BootstrapSpec()
    if master_seed is None:
        master_seed = spec.master_seed
    spec = BootstrapSpec(spec.block_len, spec.coverage, int(master_seed))
    phases = as_phases(trajectory)
    n_train = int(np.floor(train_fraction * phases.shape[0]))
    subsets = bootstrap_indices(n_train, m1, spec.block_len, spec.coverage, master_seed)

    def fit(i: int) -> ReservoirModel:
        try:
            model = init_lsm(arch, init_mode, learner_seed(master_seed, i))
            return train_readout(model, phases, train_fraction, subsets[i])
        except Exception as exc:
            raise LearnerTrainingError(i, exc) from exc

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            learners = list(pool.map(fit, range(m1)))
    else:
        learners = [fit(i) for i in range(m1)]
    weights = inverse_rmse_weights([l.diagnostics["validation_rmse"] for l in learners])
    return EnsembleModel(learners, weights, spec)


def _unit_pairs(encoded: np.ndarray) -> np.ndarray:
    M = encoded.shape[-1] // 2
    c, s = encoded[..., :M], encoded[..., M:]
    norm = np.hypot(c, s)
    safe = np.where(norm > 0, norm, 1.0)
    return np.concatenate([c / safe, s / safe], axis=-1)


def aggregate(per_learner_outputs, weights, return_flags: bool = False):
    """Weighted circular mean of encoded predictions.

    Each learner's (cos, sin) pairs are normalised, averaged with ``weights``
    and renormalised. A pair that cancels to zero falls back to the
    highest-weight learner's value; those elements are flagged.
    """
    out = np.asarray(per_learner_outputs, dtype=float)
    w = np.asarray(weights, dtype=float)
    if out.ndim != 2 or out.shape[0] != w.shape[0]:
        raise ValueError("need one encoded vector per weight")
    units = _unit_pairs(out)
    mean = w @ units
    M = mean.shape[0] // 2
    c, s = mean[:M], mean[M:]
    norm = np.hypot(c, s)
    flags = norm <= 1e-12
    best = units[int(np.argmax(w))]
    c = np.where(flags, best[:M], c / np.where(flags, 1.0, norm))
    s = np.where(flags, best[M:], s / np.where(flags, 1.0, norm))
    result = np.concatenate([c, s])
    return (result, flags) if return_flags else result


def ensemble_predict_next(model: EnsembleModel, history) -> np.ndarray:
    outputs = [readout(l, _final_states(l, history)) for l in model.learners]
    return decode_phases(aggregate(outputs, model.weights))


def ensemble_forecast(model: EnsembleModel, history, horizon: int,
                      shared_feedback: bool = True) -> PhaseTrajectory:
    """Closed-loop strong-learner forecast.

    With ``shared_feedback`` every learner is fed the aggregated prediction;
    otherwise each learner rolls out on its own outputs and only the reported
    trajectory is aggregated.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    states = [_final_states(l, history) for l in model.learners]
    M = model.learners[0].n_elements
    out = np.empty((horizon, M))
    for h in range(horizon):
        outputs = np.array([readout(l, st) for l, st in zip(model.learners, states)])
        agg = aggregate(outputs, model.weights)
        out[h] = decode_phases(agg)
        if shared_feedback:
            feeds = [agg] * len(states)
        else:
            feeds = list(_unit_pairs(outputs))
        states = [update_state(l, st, f) for l, st, f in zip(model.learners, states, feeds)]
    if isinstance(history, PhaseTrajectory):
        return PhaseTrajectory(out, history.slot_interval, history.origin)
    return PhaseTrajectory(out)


def ensemble_one_step_predictions(model: EnsembleModel, trajectory, start: int) -> np.ndarray:
    """Teacher-forced strong-learner predictions for samples start..T-1."""
    phases = as_phases(trajectory)
    if start < 1 or start > phases.shape[0]:
        raise ValueError("start must lie in [1, T]")
    encoded = encode_phases(phases[:-1])
    per_learner = []
    for l in model.learners:
        states, _ = _drive(l, encoded)
        feats = np.hstack([states[start - 1:], np.ones((states.shape[0] - start + 1, 1))])
        per_learner.append(feats @ l.W_out.T)
    per_learner = np.array(per_learner)  # (m1, n, 2M)
    rows = [aggregate(per_learner[:, j], model.weights) for j in range(per_learner.shape[1])]
    return decode_phases(np.array(rows)) if rows else np.empty((0, phases.shape[1]))
