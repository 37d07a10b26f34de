"""Clustered wideband channel generation for a BS -> RIS -> user downlink.

All three links (BS->RIS, BS->user, RIS->user) follow a Saleh-Valenzuela
style sum over delay taps, clusters and rays. Array steering vectors belong to
uniform linear arrays and are unit-norm.

Shapes used throughout the package::

    G    (S, M, N_t)   BS -> RIS, one matrix per subcarrier
    h_d  (K, S, N_t)   BS -> user k
    h_r  (K, S, M)     RIS -> user k
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.constants import speed_of_light

__all__ = [
    "ConfigurationError",
    "ArrayGeometry",
    "ClusterConfig",
    "LinkPaths",
    "Scenario",
    "ChannelSet",
    "MobilityModel",
    "subcarrier_wavelengths",
    "steering_vector",
    "array_response",
    "pulse_shape",
    "draw_link_paths",
    "draw_scenario",
    "realize_channel_set",
    "generate_channel_set",
    "evolve_trajectory",
    "save_channel_set",
    "load_channel_set",
]

CHANNEL_MAGIC = b"CHSET-v1"


class ConfigurationError(ValueError):
    """Raised for inconsistent or invalid channel/system configuration."""


def subcarrier_wavelengths(carrier_hz: float, bandwidth_hz: float, n_subcarriers: int) -> tuple:
    """Wavelengths of ``n_subcarriers`` tones centred on ``carrier_hz``."""
    if carrier_hz <= 0 or bandwidth_hz < 0 or n_subcarriers < 1:
        raise ConfigurationError("carrier, bandwidth and subcarrier count must be positive")
    spacing = bandwidth_hz / n_subcarriers
    offsets = (np.arange(n_subcarriers) - (n_subcarriers - 1) / 2.0) * spacing
    return tuple(float(v) for v in speed_of_light / (carrier_hz + offsets))


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array.

    ``element_spacing_b`` and ``wavelength_per_subcarrier`` are in meters.
    """

    n_elements: int
    element_spacing_b: float
    wavelength_per_subcarrier: tuple

    def __post_init__(self):
        object.__setattr__(self, "wavelength_per_subcarrier",
                           tuple(float(w) for w in self.wavelength_per_subcarrier))
        if int(self.n_elements) < 1:
            raise ConfigurationError("n_elements must be >= 1")
        if not self.element_spacing_b > 0:
            raise ConfigurationError("element_spacing_b must be > 0")
        if len(self.wavelength_per_subcarrier) == 0:
            raise ConfigurationError("need at least one subcarrier wavelength")
        if any(not w > 0 for w in self.wavelength_per_subcarrier):
            raise ConfigurationError("wavelengths must be > 0")

    @classmethod
    def half_wavelength_ula(cls, n_elements: int, carrier_hz: float, bandwidth_hz: float,
                            n_subcarriers: int) -> "ArrayGeometry":
        wavelengths = subcarrier_wavelengths(carrier_hz, bandwidth_hz, n_subcarriers)
        return cls(n_elements, speed_of_light / carrier_hz / 2.0, wavelengths)

    @property
    def n_subcarriers(self) -> int:
        return len(self.wavelength_per_subcarrier)

    def spatial_frequency(self, physical_angle, subcarrier=None):
        """phi = (b / lambda[s]) * sin(theta); vectorised over angles and subcarriers."""
        lam = np.asarray(self.wavelength_per_subcarrier)
        if subcarrier is not None:
            lam = lam[subcarrier]
        return self.element_spacing_b / lam * np.sin(physical_angle)


@dataclass(frozen=True)
class ClusterConfig:
    """Statistics of one clustered link. Times are in seconds."""

    n_clusters: int = 3
    n_rays_per_cluster: int = 1
    cluster_delay_range: tuple = (0.0, 20e-9)
    ray_delay_offset_range: tuple = (-0.1e-9, 0.1e-9)
    cp_length_T: float = 2.5e-9
    n_delay_taps_D: int = 8
    n_subcarriers_S: int = 8
    roll_off: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "cluster_delay_range", tuple(self.cluster_delay_range))
        object.__setattr__(self, "ray_delay_offset_range", tuple(self.ray_delay_offset_range))
        problems = self.problems()
        if problems:
            raise ConfigurationError("; ".join(problems))

    def problems(self) -> list:
        out = []
        if self.n_clusters < 0:
            out.append("n_clusters must be >= 0")
        if self.n_clusters >= 1 and self.n_rays_per_cluster < 1:
            out.append("n_rays_per_cluster must be >= 1 when clusters exist")
        for name in ("cluster_delay_range", "ray_delay_offset_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                out.append(f"{name} must satisfy low <= high")
        if self.n_delay_taps_D < 1:
            out.append("n_delay_taps_D must be >= 1")
        if self.n_subcarriers_S < 1:
            out.append("n_subcarriers_S must be >= 1")
        if not self.cp_length_T > 0:
            out.append("cp_length_T must be > 0")
        if not 0.0 <= self.roll_off <= 1.0:
            out.append("roll_off must lie in [0, 1]")
        return out


def steering_vector(n_elements: int, phi) -> np.ndarray:
    """ULA response (1/sqrt(N)) exp(-j 2 pi i phi), i = 0..N-1.

    ``phi`` may be an array; the element axis is appended last.
    """
    phi = np.asarray(phi, dtype=float)
    i = np.arange(n_elements)
    return np.exp(-2j * np.pi * phi[..., None] * i) / np.sqrt(n_elements)


def array_response(geometry: ArrayGeometry, spatial_angle: float, subcarrier: int) -> np.ndarray:
    """Steering vector of ``geometry`` toward physical angle ``spatial_angle`` (rad)."""
    if not 0 <= subcarrier < geometry.n_subcarriers:
        raise IndexError(f"subcarrier {subcarrier} out of range [0, {geometry.n_subcarriers})")
    phi = geometry.spatial_frequency(spatial_angle, subcarrier)
    return steering_vector(geometry.n_elements, phi)


def pulse_shape(t, cp_length_T: float, roll_off: float = 0.3, n_taps: Optional[int] = None):
    """Peak-normalised raised-cosine pulse evaluated at ``t`` seconds.

    Zero outside ``|t| <= n_taps * cp_length_T`` when ``n_taps`` is given.
    """
    x = np.asarray(t, dtype=float) / cp_length_T
    if roll_off > 0:
        denom = 1.0 - (2.0 * roll_off * x) ** 2
        singular = np.isclose(denom, 0.0, atol=1e-12)
        safe = np.where(singular, 1.0, denom)
        value = np.sinc(x) * np.cos(np.pi * roll_off * x) / safe
        value = np.where(singular, np.pi / 4.0 * np.sinc(1.0 / (2.0 * roll_off)), value)
    else:
        value = np.sinc(x)
    if n_taps is not None:
        value = np.where(np.abs(x) > n_taps, 0.0, value)
    if np.ndim(value) == 0:
        return float(value)
    return value


@dataclass
class LinkPaths:
    """Random draws for one link: complex gains, delays and physical AoDs.

    Arrays have shape (n_clusters, n_rays). ``angles_bs``/``angles_ris`` are
    None when the link does not touch that array.
    """

    gains: np.ndarray
    delays: np.ndarray
    angles_bs: Optional[np.ndarray] = None
    angles_ris: Optional[np.ndarray] = None


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_link_paths(cfg: ClusterConfig, rng: np.random.Generator,
                    bs: bool = True, ris: bool = True) -> LinkPaths:
    shape = (cfg.n_clusters, cfg.n_rays_per_cluster if cfg.n_clusters else 0)
    gains = _complex_normal(rng, shape)
    cluster_delay = rng.uniform(*cfg.cluster_delay_range, size=(shape[0], 1))
    ray_offset = rng.uniform(*cfg.ray_delay_offset_range, size=shape)
    delays = cluster_delay + ray_offset
    angles_bs = rng.uniform(-np.pi / 2, np.pi / 2, size=shape) if bs else None
    angles_ris = rng.uniform(-np.pi / 2, np.pi / 2, size=shape) if ris else None
    return LinkPaths(gains, delays, angles_bs, angles_ris)


@dataclass
class Scenario:
    """All random draws behind one channel realisation."""

    bs_ris: LinkPaths
    direct: list
    reflect: list

    @property
    def n_users(self) -> int:
        return len(self.direct)


def _check_consistency(cluster_cfgs: Sequence[ClusterConfig], geometries) -> None:
    if len(cluster_cfgs) != 3:
        raise ConfigurationError("expected three cluster configs (BS-RIS, direct, reflect)")
    if len(geometries) != 2:
        raise ConfigurationError("expected (bs_geometry, ris_geometry)")
    sizes = {c.n_subcarriers_S for c in cluster_cfgs}
    sizes |= {g.n_subcarriers for g in geometries}
    if len(sizes) != 1:
        raise ConfigurationError(f"inconsistent subcarrier counts across configs: {sorted(sizes)}")


def draw_scenario(cluster_cfgs: Sequence[ClusterConfig], n_users: int, seed: int) -> Scenario:
    if n_users < 1:
        raise ConfigurationError("n_users must be >= 1")
    root = np.random.SeedSequence([int(seed), 0])
    link_seeds = root.spawn(1 + 2 * n_users)
    cfg_g, cfg_d, cfg_r = cluster_cfgs
    bs_ris = draw_link_paths(cfg_g, np.random.default_rng(link_seeds[0]))
    direct = [draw_link_paths(cfg_d, np.random.default_rng(link_seeds[1 + k]), ris=False)
              for k in range(n_users)]
    reflect = [draw_link_paths(cfg_r, np.random.default_rng(link_seeds[1 + n_users + k]), bs=False)
               for k in range(n_users)]
    return Scenario(bs_ris, direct, reflect)


def _tap_factors(cfg: ClusterConfig, delays: np.ndarray) -> np.ndarray:
    """sum_d delta(dT - tau) exp(-j 2 pi d s / S) for every path; shape (S, P)."""
    d = np.arange(cfg.n_delay_taps_D)
    s = np.arange(cfg.n_subcarriers_S)
    tau = delays.reshape(-1)
    pulse = pulse_shape(d[:, None] * cfg.cp_length_T - tau[None, :], cfg.cp_length_T,
                        cfg.roll_off, cfg.n_delay_taps_D)
    pulse = np.atleast_2d(pulse).reshape(len(d), len(tau))
    phase = np.exp(-2j * np.pi * np.outer(s, d) / cfg.n_subcarriers_S)
    return phase @ pulse


def _steering_per_subcarrier(geometry: ArrayGeometry, angles: np.ndarray) -> np.ndarray:
    """Shape (S, P, N)."""
    lam = np.asarray(geometry.wavelength_per_subcarrier)
    phi = geometry.element_spacing_b / lam[:, None] * np.sin(angles.reshape(-1))[None, :]
    return steering_vector(geometry.n_elements, phi)


def realize_channel_set(scenario: Scenario, cluster_cfgs: Sequence[ClusterConfig], geometries,
                        user_angle_shift=None, seed: int = 0, time_index: int = 0,
                        ris_aperture_gain: bool = False) -> "ChannelSet":
    """Evaluate the channel sums for fixed draws.

    ``user_angle_shift`` (length K, radians) is added to the physical AoDs of
    every user link; the BS->RIS geometry is static. ``ris_aperture_gain``
    scales G and h_r by sqrt(M) so every RIS element sees unit-power paths and
    the cascaded link gains coherent aperture gain with surface size.
    """
    _check_consistency(cluster_cfgs, geometries)
    bs_geom, ris_geom = geometries
    cfg_g, cfg_d, cfg_r = cluster_cfgs
    S, M, N_t, K = bs_geom.n_subcarriers, ris_geom.n_elements, bs_geom.n_elements, scenario.n_users
    shift = np.zeros(K) if user_angle_shift is None else np.asarray(user_angle_shift, dtype=float)

    G = np.zeros((S, M, N_t), dtype=complex)
    if scenario.bs_ris.gains.size:
        p = scenario.bs_ris
        weight = _tap_factors(cfg_g, p.delays) * p.gains.reshape(-1)[None, :]
        a_ris = _steering_per_subcarrier(ris_geom, p.angles_ris)
        a_bs = _steering_per_subcarrier(bs_geom, p.angles_bs)
        G = np.einsum("sp,spm,spn->smn", weight, a_ris, a_bs.conj())

    h_d = np.zeros((K, S, N_t), dtype=complex)
    h_r = np.zeros((K, S, M), dtype=complex)
    for k in range(K):
        p = scenario.direct[k]
        if p.gains.size:
            weight = _tap_factors(cfg_d, p.delays) * p.gains.reshape(-1)[None, :]
            a_bs = _steering_per_subcarrier(bs_geom, p.angles_bs + shift[k])
            h_d[k] = np.einsum("sp,spn->sn", weight, a_bs)
        p = scenario.reflect[k]
        if p.gains.size:
            weight = _tap_factors(cfg_r, p.delays) * p.gains.reshape(-1)[None, :]
            a_ris = _steering_per_subcarrier(ris_geom, p.angles_ris + shift[k])
            h_r[k] = np.einsum("sp,spm->sm", weight, a_ris)
    if ris_aperture_gain:
        G = G * np.sqrt(M)
        h_r = h_r * np.sqrt(M)
    return ChannelSet(G, h_d, h_r, seed=seed, time_index=time_index)


def generate_channel_set(cluster_cfgs: Sequence[ClusterConfig], geometries, n_users: int,
                         seed: int, user_angle_shift=None, ris_aperture_gain: bool = False) -> "ChannelSet":
    """One channel realisation; a pure function of its arguments."""
    _check_consistency(cluster_cfgs, geometries)
    scenario = draw_scenario(cluster_cfgs, n_users, seed)
    return realize_channel_set(scenario, cluster_cfgs, geometries, user_angle_shift, seed, 0,
                               ris_aperture_gain)


@dataclass
class ChannelSet:
    G: np.ndarray
    h_d: np.ndarray
    h_r: np.ndarray
    seed: int = 0
    time_index: int = 0

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=complex)
        self.h_d = np.asarray(self.h_d, dtype=complex)
        self.h_r = np.asarray(self.h_r, dtype=complex)
        S, M, N_t = self.G.shape
        K = self.h_d.shape[0]
        if self.h_d.shape != (K, S, N_t) or self.h_r.shape != (K, S, M):
            raise ConfigurationError(
                f"inconsistent channel shapes G{self.G.shape} h_d{self.h_d.shape} h_r{self.h_r.shape}")

    @property
    def shape(self) -> tuple:
        """(S, M, N_t, K)"""
        S, M, N_t = self.G.shape
        return S, M, N_t, self.h_d.shape[0]

    def without_direct_link(self) -> "ChannelSet":
        return replace(self, h_d=np.zeros_like(self.h_d))

    def users(self, k) -> "ChannelSet":
        """Restrict to a subset of users (index or slice)."""
        idx = np.atleast_1d(np.arange(self.h_d.shape[0])[k])
        return replace(self, h_d=self.h_d[idx], h_r=self.h_r[idx])


@dataclass(frozen=True)
class MobilityModel:
    """User motion as a linear drift of every user-link AoD.

    ``gain_correlation`` is the per-slot Gauss-Markov coefficient of the
    complex path gains; 1.0 freezes them.
    """

    angular_rate: float = 0.002
    slot_interval: float = 1.0
    n_slots_T: int = 100
    gain_correlation: float = 0.99
    initial_spatial_angles: Optional[tuple] = None

    def __post_init__(self):
        if not self.slot_interval > 0:
            raise ConfigurationError("slot_interval must be > 0")
        if self.n_slots_T < 1:
            raise ConfigurationError("n_slots_T must be >= 1")
        if not 0.0 <= self.gain_correlation <= 1.0:
            raise ConfigurationError("gain_correlation must lie in [0, 1]")


def _evolve_gains(paths: LinkPaths, rho: float, rng: np.random.Generator) -> LinkPaths:
    innovation = _complex_normal(rng, paths.gains.shape)
    gains = rho * paths.gains + np.sqrt(1.0 - rho * rho) * innovation
    return replace(paths, gains=gains)


def evolve_trajectory(cluster_cfgs: Sequence[ClusterConfig], geometries, n_users: int,
                      mobility: MobilityModel, seed: int, ris_aperture_gain: bool = False) -> list:
    """Channel sets for slots 0..T-1.

    Slot t shifts user AoDs by ``initial + t * angular_rate`` and advances all
    path gains by one Gauss-Markov step (marginals stay CN(0, 1)). Innovations
    come from per-slot seeds ``(seed, t)``.
    """
    _check_consistency(cluster_cfgs, geometries)
    scenario = draw_scenario(cluster_cfgs, n_users, seed)
    base = np.zeros(n_users)
    if mobility.initial_spatial_angles is not None:
        base = np.asarray(mobility.initial_spatial_angles, dtype=float)
        if base.shape != (n_users,):
            raise ConfigurationError("initial_spatial_angles needs one value per user")
    rho = mobility.gain_correlation
    slots = []
    for t in range(mobility.n_slots_T):
        if t > 0 and rho < 1.0:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1, t]))
            scenario = Scenario(
                _evolve_gains(scenario.bs_ris, rho, rng),
                [_evolve_gains(p, rho, rng) for p in scenario.direct],
                [_evolve_gains(p, rho, rng) for p in scenario.reflect],
            )
        shift = base + t * mobility.angular_rate
        slots.append(realize_channel_set(scenario, cluster_cfgs, geometries, shift, seed, t,
                                         ris_aperture_gain))
    return slots


# -- debugging dumps ---------------------------------------------------------

def _interleave(z: np.ndarray) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-1).astype("<f8")


def save_channel_set(ch: ChannelSet, path, fmt: str = "binary") -> None:
    """Dump a ChannelSet.

    binary: ``CHSET-v1`` magic, four little-endian uint64 (S, M, N_t, K), then
    G, h_d, h_r row-major as interleaved (re, im) little-endian float64.
    csv: rows ``tensor,k,s,i,j,re,im``.
    """
    path = Path(path)
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(CHANNEL_MAGIC)
            fh.write(struct.pack("<4Q", *ch.shape))
            for arr in (ch.G, ch.h_d, ch.h_r):
                fh.write(_interleave(arr).tobytes(order="C"))
    elif fmt == "csv":
        lines = ["tensor,k,s,i,j,re,im"]
        for s, i, j in np.ndindex(ch.G.shape):
            z = ch.G[s, i, j]
            lines.append(f"G,,{s},{i},{j},{z.real:.17g},{z.imag:.17g}")
        for name, arr in (("h_d", ch.h_d), ("h_r", ch.h_r)):
            for k, s, i in np.ndindex(arr.shape):
                z = arr[k, s, i]
                lines.append(f"{name},{k},{s},{i},,{z.real:.17g},{z.imag:.17g}")
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown channel dump format {fmt!r}")


def _load_channel_csv(text: str) -> ChannelSet:
    rows = [line.split(",") for line in text.splitlines()[1:] if line.strip()]
    g = [(int(r[2]), int(r[3]), int(r[4])) for r in rows if r[0] == "G"]
    v = [(int(r[1]), int(r[2]), int(r[3])) for r in rows if r[0] == "h_d"]
    u = [(int(r[1]), int(r[2]), int(r[3])) for r in rows if r[0] == "h_r"]
    if not g or not v or not u:
        raise ValueError("channel CSV needs G, h_d and h_r rows")
    S, M, N_t = (max(x[i] for x in g) + 1 for i in range(3))
    K = max(x[0] for x in v) + 1
    arrays = {"G": np.zeros((S, M, N_t), complex), "h_d": np.zeros((K, S, N_t), complex),
              "h_r": np.zeros((K, S, M), complex)}
    for r in rows:
        idx = tuple(int(c) for c in (r[2:5] if r[0] == "G" else r[1:4]))
        arrays[r[0]][idx] = float(r[5]) + 1j * float(r[6])
    return ChannelSet(arrays["G"], arrays["h_d"], arrays["h_r"])


def load_channel_set(path) -> ChannelSet:
    """Read a dump written by :func:`save_channel_set` (format detected from the content)."""
    raw = Path(path).read_bytes()
    if raw.startswith(b"tensor,"):
        return _load_channel_csv(raw.decode())
    if not raw.startswith(CHANNEL_MAGIC):
        raise ValueError("not a channel dump")
    offset = len(CHANNEL_MAGIC)
    S, M, N_t, K = struct.unpack_from("<4Q", raw, offset)
    offset += 32
    arrays = []
    for shape in ((S, M, N_t), (K, S, N_t), (K, S, M)):
        n = int(np.prod(shape)) * 2
        flat = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
        offset += 8 * n
        pairs = flat.reshape(*shape, 2)
        arrays.append(pairs[..., 0] + 1j * pairs[..., 1])
    return ChannelSet(*arrays)
