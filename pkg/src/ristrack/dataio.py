"""Trajectory sources (synthetic, oracle, CSV) and model containers.

Trajectory CSV::

    t,phi_0,...,phi_{M-1}
    0,0.123...,...

Model container (``LSM-MODEL-v1``)::

    b"LSM-MODEL-v1\\n"
    uint64 LE   length of the JSON header
    JSON header (sorted keys): arch, init_mode, seed, diagnostics, arrays
    array payload, little-endian, row-major, in header order:
        dense  -> float64 values
        coo    -> int64 rows, int64 cols, float64 values
    uint64 LE   checksum: blake2b-64 of everything before it

Ensemble container (``LSM-ENS-v1``)::

    b"LSM-ENS-v1\\n"
    uint64 LE   M1
    float64 LE  M1 weights
    uint64 LE   length of JSON bootstrap spec, then the JSON
    M1 times:   uint64 LE length, then an embedded LSM-MODEL-v1 file
    uint64 LE   checksum of everything before it
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ris_link import (
    PhaseConfig,
    oracle_multistart,
    oracle_optimize_theta,
    wrap_phase,
    zf_spectral_efficiency,
)
from .trajectory import PhaseTrajectory, as_phases

__all__ = [
    "PhaseTrajectory",
    "SyntheticSpec",
    "TrajectoryParseError",
    "TrajectoryDataError",
    "ContainerError",
    "VersionError",
    "ChecksumError",
    "synthetic_trajectory",
    "oracle_trajectory",
    "save_trajectory",
    "load_trajectory",
    "model_to_bytes",
    "model_from_bytes",
    "save_model",
    "load_model",
    "ensemble_to_bytes",
    "ensemble_from_bytes",
    "save_ensemble",
    "load_ensemble",
    "inspect_container",
]

MODEL_MAGIC = b"LSM-MODEL-v1\n"
ENSEMBLE_MAGIC = b"LSM-ENS-v1\n"


class TrajectoryParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TrajectoryDataError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ContainerError(ValueError):
    """Bad magic/version, truncation, checksum mismatch or malformed payload."""


class VersionError(ContainerError):
    """Header string is not the expected container version."""


class ChecksumError(ContainerError):
    pass


# -- synthetic source ---------------------------------------------------------

@dataclass
class SyntheticSpec:
    """phi_m(t) = wrap(a_m + b_m t + c_m sin(omega_m t + psi_m)).

    Leave the coefficient arrays as None to draw them from the seed passed to
    :func:`synthetic_trajectory` (needs ``n_elements``). With
    ``shared_dynamics`` the drawn drift and angular rate are common to all
    elements, as for a surface following a single moving user; offsets,
    amplitudes and phases stay per element.
    """

    T: int = 150
    n_elements: int = 16
    a: Optional[Sequence[float]] = None
    b: Optional[Sequence[float]] = None
    c: Optional[Sequence[float]] = None
    omega: Optional[Sequence[float]] = None
    psi: Optional[Sequence[float]] = None
    drift_range: tuple = (-0.02, 0.02)
    amplitude_range: tuple = (0.3, 1.0)
    omega_range: tuple = (2 * np.pi / 40, 2 * np.pi / 20)
    shared_dynamics: bool = True
    slot_interval: float = 1.0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")

    def coefficients(self, seed: int) -> dict:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
        M = self.n_elements
        n_rate = 1 if self.shared_dynamics else M
        drawn = {
            "a": rng.uniform(0.0, 2 * np.pi, M),
            "b": np.broadcast_to(rng.uniform(*self.drift_range, n_rate), (M,)).copy(),
            "c": rng.uniform(*self.amplitude_range, M),
            "omega": np.broadcast_to(rng.uniform(*self.omega_range, n_rate), (M,)).copy(),
            "psi": rng.uniform(0.0, 2 * np.pi, M),
        }
        out = {}
        for name, value in drawn.items():
            given = getattr(self, name)
            out[name] = value if given is None else np.asarray(given, dtype=float)
        sizes = {v.shape for v in out.values()}
        if len(sizes) != 1:
            raise ValueError("coefficient arrays must share one length")
        if np.any(out["omega"] <= 0):
            raise ValueError("omega must be > 0")
        return out


def synthetic_trajectory(spec: SyntheticSpec, seed: int = 0) -> PhaseTrajectory:
    k = spec.coefficients(seed)
    t = np.arange(spec.T, dtype=float)[:, None]
    phases = k["a"] + k["b"] * t + k["c"] * np.sin(k["omega"] * t + k["psi"])
    return PhaseTrajectory(wrap_phase(phases), spec.slot_interval, "synthetic")


# -- oracle source --------------------------------------------------------------

def oracle_trajectory(channel_slots, power_P: float, grid_B: int = 8, max_sweeps: int = 50,
                      warm_start: bool = True, noise_variance: float = 1.0,
                      slot_interval: float = 1.0, multistart: bool = False,
                      initial: Optional[PhaseConfig] = None) -> PhaseTrajectory:
    """Per-slot coordinate-ascent optimum; slot t starts from slot t-1's result
    when ``warm_start``, otherwise from zero phases. ``initial`` replaces the
    zero start of the first slot.

    ``multistart`` also runs the ascent from the ``grid_B`` constant
    configurations and keeps that result when it is strictly better, which
    escapes most local optima at roughly ``grid_B`` times the cost.
    """
    slots = list(channel_slots)
    if not slots:
        raise ValueError("need at least one channel slot")
    M = slots[0].G.shape[1]
    rows = []
    previous = initial if initial is not None else PhaseConfig.zeros(M)
    for ch in slots:
        start = previous if warm_start else PhaseConfig.zeros(M)
        cfg = oracle_optimize_theta(ch, power_P, grid_B, max_sweeps, start, noise_variance)
        if multistart:
            alt = oracle_multistart(ch, power_P, grid_B, max_sweeps, noise_variance)
            se = zf_spectral_efficiency(ch, cfg, power_P, noise_variance)
            if zf_spectral_efficiency(ch, alt, power_P, noise_variance) > se + 1e-12 * max(1.0, abs(se)):
                cfg = alt
        rows.append(cfg.phases)
        previous = cfg
    return PhaseTrajectory(np.array(rows), slot_interval, "oracle")


# -- trajectory CSV -------------------------------------------------------------

def save_trajectory(trajectory, path, comments: Sequence[str] = ()) -> None:
    phases = as_phases(trajectory)
    M = phases.shape[1]
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(["t"] + [f"phi_{m}" for m in range(M)]))
    for t, row in enumerate(phases):
        lines.append(",".join([str(t)] + [f"{v:.17g}" for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path, format: str = "csv", slot_interval: float = 1.0,
                    origin: str = "external") -> PhaseTrajectory:
    """Read a trajectory CSV; out-of-range phases are wrapped with a warning."""
    if format != "csv":
        raise ValueError(f"unsupported trajectory format {format!r}")
    with open(path, newline="") as fh:
        # '#' lines carry provenance (e.g. the resolved config) and are skipped
        rows = [(n, r) for n, r in enumerate(csv.reader(fh), start=1)
                if not (r and r[0].startswith("#"))]
    if not rows:
        raise TrajectoryParseError("empty file", 1)
    head_line, head = rows[0]
    header = [h.strip() for h in head]
    M = len(header) - 1
    if M < 1 or header != ["t"] + [f"phi_{m}" for m in range(M)]:
        raise TrajectoryParseError("header must be t,phi_0,...,phi_{M-1}", head_line)
    data = []
    for lineno, row in rows[1:]:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != M + 1:
            raise TrajectoryParseError(f"expected {M} phases, found {len(row) - 1}", lineno)
        try:
            values = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise TrajectoryParseError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise TrajectoryDataError("non-finite phase value", lineno)
        data.append(values)
    if not data:
        raise TrajectoryParseError("no data rows", rows[-1][0])
    phases = np.array(data)
    wrapped = wrap_phase(phases)
    if np.any(wrapped != phases):
        warnings.warn(f"{path}: phases outside [0, 2*pi) were wrapped", stacklevel=2)
    return PhaseTrajectory(wrapped, slot_interval, origin)


# -- binary containers --------------------------------------------------------------

def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def _seal(payload: bytes) -> bytes:
    return payload + _checksum(payload)


def _unseal(raw: bytes, magic: bytes) -> bytes:
    if not raw.startswith(magic):
        head = raw[:len(magic)].split(b"\n")[0]
        raise VersionError(f"expected header {magic.strip().decode()}, found {head!r}")
    if len(raw) < len(magic) + 8:
        raise ContainerError("truncated container")
    payload, tail = raw[:-8], raw[-8:]
    if _checksum(payload) != tail:
        raise ChecksumError("checksum mismatch (corrupted or truncated file)")
    return payload


class _Reader:
    def __init__(self, buf: bytes, offset: int):
        self.buf, self.offset = buf, offset

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.buf):
            raise ContainerError("truncated container")
        out = self.buf[self.offset:self.offset + n]
        self.offset += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype=dtype).copy()


def model_to_bytes(model) -> bytes:
    arrays, blobs = [], []
    for layer, (Wi, Wr) in enumerate(zip(model.W_in, model.W_res)):
        arrays.append({"name": f"W_in/{layer}", "kind": "dense", "shape": list(Wi.shape)})
        blobs.append(np.ascontiguousarray(Wi, dtype="<f8").tobytes())
        r, c = np.nonzero(Wr)
        arrays.append({"name": f"W_res/{layer}", "kind": "coo", "shape": list(Wr.shape), "nnz": int(r.size)})
        blobs.append(r.astype("<i8").tobytes() + c.astype("<i8").tobytes()
                     + Wr[r, c].astype("<f8").tobytes())
    if model.W_out is not None:
        arrays.append({"name": "W_out", "kind": "dense", "shape": list(model.W_out.shape)})
        blobs.append(np.ascontiguousarray(model.W_out, dtype="<f8").tobytes())
    header = {
        "format": "LSM-MODEL-v1",
        "arch": asdict(model.arch),
        "init_mode": model.init_mode,
        "seed": int(model.seed),
        "diagnostics": model.diagnostics,
        "arrays": arrays,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _seal(MODEL_MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs))


def _model_header(payload: bytes) -> tuple:
    reader = _Reader(payload, len(MODEL_MAGIC))
    n = reader.u64()
    try:
        header = json.loads(reader.take(n))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable model header: {exc}") from None
    return header, reader


def model_from_bytes(raw: bytes):
    payload = _unseal(raw, MODEL_MAGIC)
    header, reader = _model_header(payload)
    if not isinstance(header, dict) or header.get("format") != "LSM-MODEL-v1":
        raise VersionError("model header does not declare format LSM-MODEL-v1")
    try:
        return _build_model(header, reader, len(payload))
    except ContainerError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerError(f"malformed model payload: {exc!r}") from None


def _build_model(header: dict, reader: "_Reader", size: int):
    from .reservoir import ReservoirArch, ReservoirModel, _readonly

    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        if spec["kind"] == "dense":
            arrays[spec["name"]] = reader.array("<f8", int(np.prod(shape))).reshape(shape)
        else:
            nnz = spec["nnz"]
            r, c = reader.array("<i8", nnz), reader.array("<i8", nnz)
            vals = reader.array("<f8", nnz)
            dense = np.zeros(shape)
            dense[r, c] = vals
            arrays[spec["name"]] = dense
    if reader.offset != size:
        raise ContainerError("trailing bytes after model payload")
    arch = ReservoirArch(**header["arch"])
    n = arch.n_layers
    W_out = arrays.get("W_out")
    return ReservoirModel(
        arch=arch,
        W_in=[_readonly(arrays[f"W_in/{i}"]) for i in range(n)],
        W_res=[_readonly(arrays[f"W_res/{i}"]) for i in range(n)],
        init_mode=header["init_mode"],
        seed=header["seed"],
        W_out=None if W_out is None else _readonly(W_out),
        diagnostics=header["diagnostics"],
    )


def ensemble_to_bytes(ensemble) -> bytes:
    parts = [ENSEMBLE_MAGIC, struct.pack("<Q", len(ensemble.learners)),
             np.asarray(ensemble.weights, dtype="<f8").tobytes()]
    spec = json.dumps(ensemble.bootstrap_spec.as_dict(), sort_keys=True, separators=(",", ":")).encode()
    parts += [struct.pack("<Q", len(spec)), spec]
    for learner in ensemble.learners:
        blob = model_to_bytes(learner)
        parts += [struct.pack("<Q", len(blob)), blob]
    return _seal(b"".join(parts))


def ensemble_from_bytes(raw: bytes):
    from .ensemble import BootstrapSpec, EnsembleModel

    payload = _unseal(raw, ENSEMBLE_MAGIC)
    reader = _Reader(payload, len(ENSEMBLE_MAGIC))
    try:
        m1 = reader.u64()
        weights = reader.array("<f8", m1)
        spec = BootstrapSpec(**json.loads(reader.take(reader.u64())))
        learners = [model_from_bytes(reader.take(reader.u64())) for _ in range(m1)]
        if reader.offset != len(payload):
            raise ContainerError("trailing bytes after ensemble payload")
        return EnsembleModel(learners, weights, spec)
    except ContainerError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerError(f"malformed ensemble payload: {exc!r}") from None


def save_model(model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())


def save_ensemble(ensemble, path) -> None:
    Path(path).write_bytes(ensemble_to_bytes(ensemble))


def load_ensemble(path):
    return ensemble_from_bytes(Path(path).read_bytes())


def inspect_container(path) -> dict:
    """Summary of a model or ensemble file (validates the checksum)."""
    raw = Path(path).read_bytes()
    if raw.startswith(ENSEMBLE_MAGIC):
        ens = ensemble_from_bytes(raw)
        first = ens.learners[0]
        return {
            "format": "LSM-ENS-v1",
            "m1": len(ens.learners),
            "weights": [float(w) for w in ens.weights],
            "bootstrap_spec": ens.bootstrap_spec.as_dict(),
            "arch": asdict(first.arch),
            "validation_rmse": [l.diagnostics.get("validation_rmse") for l in ens.learners],
            "bytes": len(raw),
        }
    payload = _unseal(raw, MODEL_MAGIC)
    header, _ = _model_header(payload)
    return {
        "format": header["format"],
        "arch": header["arch"],
        "init_mode": header["init_mode"],
        "seed": header["seed"],
        "trained": any(a["name"] == "W_out" for a in header["arrays"]),
        "arrays": header["arrays"],
        "diagnostics": header["diagnostics"],
        "bytes": len(raw),
    }
