"""Declarative experiment configuration.

Configs are YAML files layered over a named profile (``desk`` or ``paper``).
Only keys that exist in the profile are accepted. Example::

    profile: desk
    seed: 2024
    system: {n_ris_elements: 25, n_users: 2}
    sweeps: {ris_sizes: [4, 9, 16, 25], seeds: [0, 1, 2]}
    baselines: [xavier_lsm, ensemble, random_reflection, without_ris, oracle]
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .channel import ArrayGeometry, ClusterConfig, MobilityModel
from .ensemble import BootstrapSpec
from .reservoir import ACTIVATIONS, ReservoirArch

__all__ = [
    "BASELINES",
    "PREDICTORS",
    "ConfigError",
    "ExperimentConfig",
    "profile_defaults",
    "load_config",
    "derive_seed",
]

BASELINES = ("xavier_lsm", "random_init_lsm", "ensemble", "random_reflection",
             "without_ris", "without_direct_link", "oracle")
PREDICTORS = ("xavier_lsm", "random_init_lsm", "ensemble")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


_LINK = {
    "n_clusters": 3,
    "n_rays_per_cluster": 1,
    "cluster_delay_range": [0.0, 20e-9],
    "ray_delay_offset_range": [-0.1e-9, 0.1e-9],
    "cp_length_T": 2.5e-9,
    "n_delay_taps_D": 8,
    "roll_off": 0.3,
}

_DESK = {
    "profile": "desk",
    "seed": 2024,
    "system": {
        "n_bs_antennas": 16,
        "n_ris_elements": 16,
        "n_users": 2,
        "n_subcarriers": 8,
        "carrier_hz": 100e9,
        "bandwidth_hz": 10e9,
        "power_P": 10.0,
        "noise_variance": 1.0,
        "ris_aperture_gain": True,
    },
    "channel": {
        "bs_ris": dict(_LINK),
        "direct": dict(_LINK),
        "reflect": dict(_LINK),
        "angular_rate": 0.002,
        "gain_correlation": 0.99,
    },
    "oracle": {"grid_B": 8, "max_sweeps": 50, "warm_start": True, "multistart": False},
    "learner": {
        "n_layers": 5,
        "neurons_per_layer": 100,
        "connectivity": 0.1,
        "spectral_radius": 0.9,
        "activation": "tanh",
        "washout_T0": 10,
        "ridge_lambda": 1e-6,
        "rescale": True,
    },
    "ensemble": {"m1": 15, "block_len": 10, "coverage": 0.8, "shared_feedback": True},
    "schedule": {"T": 100, "slot_interval": 1.0, "train_fraction": 0.7, "horizon": 50},
    "source": {
        "kind": "synthetic",
        "synthetic_seed": 2024,
        "drift_range": [-0.02, 0.02],
        "amplitude_range": [0.3, 1.0],
        "omega_range": [2 * np.pi / 40, 2 * np.pi / 20],
        "shared_dynamics": True,
    },
    "sweeps": {
        "users": [1, 2, 3, 4],
        "ris_sizes": [4, 9, 16, 25],
        "seeds": list(range(20)),
    },
    "baselines": list(BASELINES),
    "tracking": {"element": 0, "scheme": "ensemble"},
    "report": {"epochs": 8, "batch_sizes": [10, 20, 30, 40, 50, 59]},
    "jobs": 1,
    "output_dir": "results",
}


def _paper() -> dict:
    cfg = copy.deepcopy(_DESK)
    cfg["profile"] = "paper"
    cfg["system"].update(n_bs_antennas=256, n_ris_elements=64, n_users=4, n_subcarriers=128)
    for link in ("bs_ris", "direct", "reflect"):
        cfg["channel"][link].update(n_delay_taps_D=16, cp_length_T=1.25e-9)
    cfg["sweeps"].update(users=[2, 4, 6, 8, 10, 12], ris_sizes=[64, 81, 100, 121])
    return cfg


def profile_defaults(profile: str) -> dict:
    if profile == "desk":
        return copy.deepcopy(_DESK)
    if profile == "paper":
        return _paper()
    raise ConfigError([f"unknown profile {profile!r} (expected desk or paper)"])


def _merge(base: dict, override: dict, path: str, problems: list) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            problems.append(f"unknown key {where}")
            continue
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                problems.append(f"{where} must be a mapping")
                continue
            out[key] = _merge(base[key], value, where, problems)
        else:
            out[key] = value
    return out


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from integers/strings."""
    ints = [p if isinstance(p, int) else int.from_bytes(str(p).encode(), "little") % (2 ** 32)
            for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    data: dict

    # -- construction ----------------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: Optional[dict] = None, profile: Optional[str] = None) -> "ExperimentConfig":
        raw = dict(raw or {})
        problems: list = []
        name = profile or raw.get("profile", "desk")
        try:
            base = profile_defaults(name)
        except ConfigError as exc:
            raise ConfigError(exc.problems) from None
        raw["profile"] = name
        merged = _merge(base, raw, "", problems)
        cfg = cls(merged)
        problems += cfg.problems()
        if problems:
            raise ConfigError(problems)
        return cfg

    def replace(self, **overrides) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(_deep_update(copy.deepcopy(self.data), overrides))

    def __getitem__(self, key):
        return self.data[key]

    # -- validation ------------------------------------------------------------------------
    def problems(self) -> list:
        d = self.data
        out = []
        sysd = d["system"]
        for key in ("n_bs_antennas", "n_ris_elements", "n_users", "n_subcarriers"):
            if not isinstance(sysd[key], int) or sysd[key] < 1:
                out.append(f"system.{key} must be a positive integer")
        for key in ("carrier_hz", "power_P", "noise_variance"):
            if not _num(sysd[key]) or sysd[key] <= 0:
                out.append(f"system.{key} must be > 0")
        if not _num(sysd["bandwidth_hz"]) or sysd["bandwidth_hz"] < 0:
            out.append("system.bandwidth_hz must be >= 0")
        if isinstance(sysd["n_users"], int) and isinstance(sysd["n_bs_antennas"], int) \
                and sysd["n_users"] > sysd["n_bs_antennas"]:
            out.append("system.n_users exceeds n_bs_antennas (ZF infeasible)")
        for link in ("bs_ris", "direct", "reflect"):
            try:
                ClusterConfig(**d["channel"][link], n_subcarriers_S=max(1, int(sysd["n_subcarriers"])))
            except (TypeError, ValueError) as exc:
                out.append(f"channel.{link}: {exc}")
        if not 0 <= d["channel"]["gain_correlation"] <= 1:
            out.append("channel.gain_correlation must lie in [0, 1]")
        if d["oracle"]["grid_B"] < 2:
            out.append("oracle.grid_B must be >= 2")
        if d["oracle"]["max_sweeps"] < 1:
            out.append("oracle.max_sweeps must be >= 1")
        for key in ("warm_start", "multistart"):
            if not isinstance(d["oracle"][key], bool):
                out.append(f"oracle.{key} must be true or false")
        ld = d["learner"]
        try:
            ReservoirArch(**ld)
        except (TypeError, ValueError) as exc:
            out.append(f"learner: {exc}")
        if ld["activation"] not in ACTIVATIONS:
            out.append(f"learner.activation must be one of {sorted(ACTIVATIONS)}")
        ed = d["ensemble"]
        if ed["m1"] < 1:
            out.append("ensemble.m1 must be >= 1")
        if ed["block_len"] < 2:
            out.append("ensemble.block_len must be >= 2")
        if not 0 < ed["coverage"] <= 1:
            out.append("ensemble.coverage must lie in (0, 1]")
        sd = d["schedule"]
        if not 0 < sd["train_fraction"] < 1:
            out.append("schedule.train_fraction must lie strictly between 0 and 1")
        if sd["horizon"] < 1:
            out.append("schedule.horizon must be >= 1")
        if not sd["slot_interval"] > 0:
            out.append("schedule.slot_interval must be > 0")
        washout = ld.get("washout_T0", 0)
        if sd["T"] < washout + 4:
            out.append(f"schedule.T must be >= washout_T0 + 4 = {washout + 4}")
        elif 0 < sd["train_fraction"] < 1:
            n_train = int(np.floor(sd["train_fraction"] * sd["T"]))
            if n_train < washout + 2 or n_train >= sd["T"]:
                out.append("schedule.train_fraction leaves no training rows or no validation samples")
            elif n_train < ed["block_len"]:
                out.append("ensemble.block_len exceeds the training span")
        if d["source"]["kind"] not in ("synthetic", "oracle"):
            out.append("source.kind must be synthetic or oracle")
        sw = d["sweeps"]
        for key in ("users", "ris_sizes", "seeds"):
            if not isinstance(sw[key], list) or not sw[key]:
                out.append(f"sweeps.{key} must be a non-empty list")
        if isinstance(sw["users"], list):
            too_many = [k for k in sw["users"] if k > sysd["n_bs_antennas"]]
            if too_many:
                out.append(f"sweeps.users {too_many} exceed n_bs_antennas (ZF infeasible)")
            if any(k < 1 for k in sw["users"]):
                out.append("sweeps.users entries must be >= 1")
        if isinstance(sw["ris_sizes"], list) and any(m < 1 for m in sw["ris_sizes"]):
            out.append("sweeps.ris_sizes entries must be >= 1")
        unknown = [b for b in d["baselines"] if b not in BASELINES]
        if unknown:
            out.append(f"unknown baselines {unknown}; choose from {list(BASELINES)}")
        tr = d["tracking"]
        if not 0 <= tr["element"] < sysd["n_ris_elements"]:
            out.append(f"tracking.element must lie in [0, {sysd['n_ris_elements']})")
        if tr["scheme"] not in PREDICTORS:
            out.append(f"tracking.scheme must be one of {list(PREDICTORS)}")
        rp = d["report"]
        if rp["epochs"] < 1:
            out.append("report.epochs must be >= 1")
        if not rp["batch_sizes"] or any(b < 1 for b in rp["batch_sizes"]):
            out.append("report.batch_sizes must be positive")
        if d["jobs"] < 1:
            out.append("jobs must be >= 1")
        return out

    # -- typed views ---------------------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def n_train(self) -> int:
        sd = self.data["schedule"]
        return int(np.floor(sd["train_fraction"] * sd["T"]))

    def cluster_configs(self) -> tuple:
        S = self.data["system"]["n_subcarriers"]
        ch = self.data["channel"]
        return tuple(ClusterConfig(**ch[link], n_subcarriers_S=S) for link in ("bs_ris", "direct", "reflect"))

    def geometries(self, n_ris_elements: Optional[int] = None) -> tuple:
        s = self.data["system"]
        M = n_ris_elements or s["n_ris_elements"]
        bs = ArrayGeometry.half_wavelength_ula(s["n_bs_antennas"], s["carrier_hz"], s["bandwidth_hz"], s["n_subcarriers"])
        ris = ArrayGeometry.half_wavelength_ula(M, s["carrier_hz"], s["bandwidth_hz"], s["n_subcarriers"])
        return bs, ris

    def mobility(self, n_slots: int) -> MobilityModel:
        ch = self.data["channel"]
        return MobilityModel(angular_rate=ch["angular_rate"], slot_interval=self.data["schedule"]["slot_interval"],
                             n_slots_T=n_slots, gain_correlation=ch["gain_correlation"])

    def arch(self, n_elements: Optional[int] = None) -> ReservoirArch:
        M = n_elements or self.data["system"]["n_ris_elements"]
        return ReservoirArch.for_elements(M, **self.data["learner"])

    def bootstrap_spec(self, master_seed: int) -> BootstrapSpec:
        e = self.data["ensemble"]
        return BootstrapSpec(e["block_len"], e["coverage"], int(master_seed))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _deep_update(base: dict, override: dict) -> dict:
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_config(path=None, profile: Optional[str] = None, seed: Optional[int] = None,
                output_dir=None) -> ExperimentConfig:
    """Read a YAML config (or just a profile) and apply CLI overrides."""
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError([f"config {path} must be a mapping"])
    if seed is not None:
        raw["seed"] = int(seed)
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)
    return ExperimentConfig.from_dict(raw, profile)
