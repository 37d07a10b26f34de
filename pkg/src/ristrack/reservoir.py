"""Multi-layer rate-based reservoir (liquid state machine) for phase forecasting.

Layers are cascaded in series: layer 1 is driven by the encoded phases and
layer l > 1 by the fresh state of layer l - 1. The readout sees the
concatenated layer states plus a constant bias feature and is fitted in
closed form (ridge regression); input and recurrent weights stay fixed.

Phases travel through the network as (cos, sin) pairs: a row of an encoded
sequence is ``(cos phi_1..cos phi_M, sin phi_1..sin phi_M)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .metrics import angular_difference, ridge_readout_flops
from .ris_link import wrap_phase
from .trajectory import PhaseTrajectory, as_phases

__all__ = [
    "ReservoirArch",
    "ReservoirModel",
    "InsufficientDataError",
    "RegularizationRequiredError",
    "UntrainedModelError",
    "encode_phases",
    "decode_phases",
    "xavier_input_weights",
    "init_lsm",
    "spectral_radius",
    "update_state",
    "run_states",
    "fit_ridge",
    "train_readout",
    "predict_next",
    "forecast",
    "readout",
    "one_step_predictions",
]

ACTIVATIONS = {
    "tanh": np.tanh,
    "softsign": lambda x: x / (1.0 + np.abs(x)),
}
INIT_MODES = ("xavier", "uniform_random")


class InsufficientDataError(ValueError):
    pass


class RegularizationRequiredError(np.linalg.LinAlgError):
    pass


class UntrainedModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReservoirArch:
    n_layers: int = 5
    neurons_per_layer: int = 100
    input_dim: int = 32
    output_dim: int = 32
    connectivity: float = 0.1
    spectral_radius: float = 0.9
    activation: str = "tanh"
    washout_T0: int = 10
    ridge_lambda: float = 1e-6
    # False keeps the raw uniform(-1, 1) recurrent weights
    rescale: bool = True

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list:
        out = []
        if self.n_layers < 1:
            out.append("n_layers must be >= 1")
        if self.neurons_per_layer < 1:
            out.append("neurons_per_layer must be >= 1")
        if self.input_dim < 1 or self.output_dim < 1:
            out.append("input_dim and output_dim must be >= 1")
        if not 0 < self.connectivity <= 1:
            out.append("connectivity must lie in (0, 1]")
        if not self.spectral_radius > 0:
            out.append("spectral_radius must be > 0")
        if self.activation not in ACTIVATIONS:
            out.append(f"activation must be one of {sorted(ACTIVATIONS)}")
        if self.washout_T0 < 0:
            out.append("washout_T0 must be >= 0")
        if self.ridge_lambda < 0:
            out.append("ridge_lambda must be >= 0")
        return out

    @classmethod
    def for_elements(cls, n_elements: int, **kwargs) -> "ReservoirArch":
        return cls(input_dim=2 * n_elements, output_dim=2 * n_elements, **kwargs)

    @property
    def n_features(self) -> int:
        """Readout width: all layer states plus the bias feature."""
        return self.n_layers * self.neurons_per_layer + 1


@dataclass
class ReservoirModel:
    arch: ReservoirArch
    W_in: list
    W_res: list
    init_mode: str
    seed: int
    W_out: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def trained(self) -> bool:
        return self.W_out is not None

    @property
    def n_elements(self) -> int:
        return self.arch.output_dim // 2


def encode_phases(phases) -> np.ndarray:
    phases = as_phases(phases)
    return np.hstack([np.cos(phases), np.sin(phases)])


def decode_phases(encoded) -> np.ndarray:
    """Inverse of encode_phases; each (cos, sin) pair is renormalised first."""
    encoded = np.asarray(encoded, dtype=float)
    M = encoded.shape[-1] // 2
    c, s = encoded[..., :M], encoded[..., M:]
    norm = np.hypot(c, s)
    safe = np.where(norm > 0, norm, 1.0)
    return wrap_phase(np.arctan2(s / safe, c / safe))


def xavier_input_weights(fan_in_M: int, rows: int, cols: int, seed) -> np.ndarray:
    """Zero-mean Gaussian weights with variance 1 / fan_in_M."""
    if fan_in_M < 1:
        raise ValueError("fan_in_M must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, np.sqrt(1.0 / fan_in_M), size=(rows, cols))


def spectral_radius(W: np.ndarray) -> float:
    if W.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(W))))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def init_lsm(arch: ReservoirArch, init_mode: str = "xavier", seed: int = 0) -> ReservoirModel:
    """Random sparse reservoirs plus input weights; the readout is left unset."""
    if init_mode not in INIT_MODES:
        raise ValueError(f"init_mode must be one of {INIT_MODES}")
    N = arch.neurons_per_layer
    layer_seeds = np.random.SeedSequence([int(seed)]).spawn(arch.n_layers)
    W_in, W_res = [], []
    for layer, ss in enumerate(layer_seeds):
        res_seed, in_seed = ss.spawn(2)
        rng = np.random.default_rng(res_seed)
        mask = rng.random((N, N)) < arch.connectivity
        W = np.where(mask, rng.uniform(-1.0, 1.0, (N, N)), 0.0)
        if arch.rescale:
            rho = spectral_radius(W)
            if rho > 0:
                W = W * (arch.spectral_radius / rho)
        fan_in = arch.input_dim if layer == 0 else N
        if init_mode == "xavier":
            Win = xavier_input_weights(fan_in, N, fan_in, in_seed)
        else:
            Win = np.random.default_rng(in_seed).uniform(-1.0, 1.0, (N, fan_in))
        W_res.append(_readonly(W))
        W_in.append(_readonly(Win))
    return ReservoirModel(arch, W_in, W_res, init_mode, int(seed))


def update_state(model: ReservoirModel, states, input_vector) -> list:
    """One step of the cascade: x_l <- f(W_res x_l + W_in u_l)."""
    f = ACTIVATIONS[model.arch.activation]
    u = np.asarray(input_vector, dtype=float)
    if u.shape != (model.W_in[0].shape[1],):
        raise ValueError(f"input has shape {u.shape}, expected ({model.W_in[0].shape[1]},)")
    if len(states) != len(model.W_res):
        raise ValueError("need one state vector per layer")
    new = []
    for Wr, Wi, x in zip(model.W_res, model.W_in, states):
        x = np.asarray(x, dtype=float)
        if x.shape != (Wr.shape[0],):
            raise ValueError(f"state has shape {x.shape}, expected ({Wr.shape[0]},)")
        u = f(Wr @ x + Wi @ u)
        new.append(u)
    return new


def _zero_states(model: ReservoirModel) -> list:
    return [np.zeros(W.shape[0]) for W in model.W_res]


def _drive(model: ReservoirModel, encoded: np.ndarray, states=None):
    """Fold update_state over rows; returns (T x total states, final per-layer states)."""
    states = _zero_states(model) if states is None else states
    out = np.empty((encoded.shape[0], sum(W.shape[0] for W in model.W_res)))
    for t, row in enumerate(encoded):
        states = update_state(model, states, row)
        out[t] = np.concatenate(states)
    return out, states


def run_states(model: ReservoirModel, sequence, initial_states=None) -> np.ndarray:
    """State matrix for an encoded sequence, starting from zero state.

    Row t holds the concatenated layer states after consuming sample t.
    """
    seq = np.asarray(sequence, dtype=float)
    if seq.shape[0] <= model.arch.washout_T0:
        raise InsufficientDataError(
            f"sequence length {seq.shape[0]} must exceed washout {model.arch.washout_T0}")
    return _drive(model, seq, initial_states)[0]


def _features(states: np.ndarray) -> np.ndarray:
    states = np.atleast_2d(states)
    return np.hstack([states, np.ones((states.shape[0], 1))])


def fit_ridge(X: np.ndarray, Y: np.ndarray, ridge_lambda: float):
    """W minimising ||X W^T - Y||^2 + lambda ||W||^2, i.e. W = Y^T X (X^T X + lambda I)^-1.

    Returns (W, used_dual). The dual form is used when there are fewer rows
    than features.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n, p = X.shape
    if ridge_lambda == 0:
        if np.linalg.matrix_rank(X) < p:
            raise RegularizationRequiredError(
                "normal equations are singular; a positive ridge_lambda is required")
        Wt, *_ = np.linalg.lstsq(X, Y, rcond=None)
        return Wt.T, False
    if n < p:
        alpha = np.linalg.solve(X @ X.T + ridge_lambda * np.eye(n), Y)
        return (X.T @ alpha).T, True
    Wt = np.linalg.solve(X.T @ X + ridge_lambda * np.eye(p), X.T @ Y)
    return Wt.T, False


def _split(T: int, train_fraction: float, washout: int) -> int:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if T < washout + 4:
        raise InsufficientDataError(f"trajectory length {T} < washout + 4 = {washout + 4}")
    n_train = int(np.floor(train_fraction * T))
    if n_train < washout + 2:
        raise InsufficientDataError(
            f"training span of {n_train} samples leaves no rows after washout {washout}")
    if n_train >= T:
        raise InsufficientDataError("no samples left for validation")
    return n_train


def _predict_rows(W_out: np.ndarray, states: np.ndarray) -> np.ndarray:
    return decode_phases(_features(states) @ W_out.T)


def train_readout(model: ReservoirModel, trajectory, train_fraction: float = 0.7,
                  target_indices=None) -> ReservoirModel:
    """Fit W_out on the first ``train_fraction`` of the trajectory.

    Target t (encoded sample t) is regressed on the state after consuming
    sample t - 1, for t > washout inside the training span. ``target_indices``
    restricts/reweights the regression rows (repeats allowed); indices outside
    the usable range are dropped. Validation RMSE is the per-entry RMS wrapped
    phase error of one-step predictions on the held-out tail.
    """
    phases = as_phases(trajectory)
    T = phases.shape[0]
    washout = model.arch.washout_T0
    n_train = _split(T, train_fraction, washout)
    encoded = encode_phases(phases)
    states, _ = _drive(model, encoded)

    all_targets = np.arange(washout + 1, n_train)
    if target_indices is None:
        targets = all_targets
    else:
        targets = np.asarray(target_indices, dtype=int)
        targets = targets[(targets > washout) & (targets < n_train)]
        if targets.size == 0:
            raise InsufficientDataError("no usable regression rows in the selected indices")

    X = _features(states[targets - 1])
    W_out, dual = fit_ridge(X, encoded[targets], model.arch.ridge_lambda)

    train_err = angular_difference(_predict_rows(W_out, states[all_targets - 1]), phases[all_targets])
    val_targets = np.arange(n_train, T)
    val_err = angular_difference(_predict_rows(W_out, states[val_targets - 1]), phases[val_targets])
    diagnostics = {
        "n_train": int(n_train),
        "n_rows": int(targets.size),
        "train_rmse": float(np.sqrt(np.mean(train_err ** 2))),
        "train_max_error": float(np.max(np.abs(train_err))),
        "validation_rmse": float(np.sqrt(np.mean(val_err ** 2))),
        "readout_flops": ridge_readout_flops(X.shape[0], X.shape[1], W_out.shape[0], dual).__dict__,
    }
    return replace(model, W_out=_readonly(W_out), diagnostics=diagnostics)


def _require_trained(model: ReservoirModel) -> None:
    if not model.trained:
        raise UntrainedModelError("model has no trained readout")


def _final_states(model: ReservoirModel, history) -> list:
    phases = as_phases(history)
    if phases.shape[0] <= model.arch.washout_T0:
        raise InsufficientDataError(
            f"history length {phases.shape[0]} must exceed washout {model.arch.washout_T0}")
    return _drive(model, encode_phases(phases))[1]


def readout(model: ReservoirModel, states) -> np.ndarray:
    """Encoded prediction (unnormalised) from per-layer states."""
    _require_trained(model)
    return model.W_out @ np.append(np.concatenate(states), 1.0)


def predict_next(model: ReservoirModel, history) -> np.ndarray:
    """Phase vector for the sample following ``history``."""
    _require_trained(model)
    return decode_phases(readout(model, _final_states(model, history)))


def forecast(model: ReservoirModel, history, horizon: int) -> PhaseTrajectory:
    """Closed-loop forecast: each prediction is encoded and fed back as input."""
    _require_trained(model)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    states = _final_states(model, history)
    out = np.empty((horizon, model.n_elements))
    for h in range(horizon):
        phi = decode_phases(readout(model, states))
        out[h] = phi
        states = update_state(model, states, encode_phases(phi[None, :])[0])
    if isinstance(history, PhaseTrajectory):
        return PhaseTrajectory(out, history.slot_interval, history.origin)
    return PhaseTrajectory(out)


def one_step_predictions(model: ReservoirModel, trajectory, start: int) -> np.ndarray:
    """Teacher-forced one-step predictions for samples start..T-1."""
    _require_trained(model)
    phases = as_phases(trajectory)
    if start < 1 or start > phases.shape[0]:
        raise ValueError("start must lie in [1, T]")
    states, _ = _drive(model, encode_phases(phases[:-1]))
    return _predict_rows(model.W_out, states[start - 1:])
