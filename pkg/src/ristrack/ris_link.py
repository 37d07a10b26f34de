"""Effective channels through the RIS, ZF precoding and sum spectral efficiency.

Effective channels are handled in *row* form: for user k on subcarrier s

    r_k[s] = h_d,k[s]^H + h_r,k[s]^H Theta G[s]        (length N_t)

so the scalar gain seen by user k from precoder column w is ``r_k[s] @ w``.
Stacking the rows gives the K x N_t matrix H[s] that ZF inverts.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import ChannelSet

__all__ = [
    "PhaseConfig",
    "Precoder",
    "SearchSpaceError",
    "wrap_phase",
    "effective_channel",
    "effective_rows",
    "zf_precoder",
    "sinr",
    "sinr_with_interference",
    "spectral_efficiency",
    "zf_spectral_efficiency",
    "oracle_optimize_theta",
    "oracle_multistart",
    "exhaustive_theta",
    "random_phase_config",
]

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
SVD_RTOL = 1e-12
# items whose Gram matrix is worse conditioned than this go through the SVD path
_GRAM_RTOL = 1e-10


class SearchSpaceError(ValueError):
    pass


def wrap_phase(phi):
    """Map angles into [0, 2*pi)."""
    out = np.mod(np.asarray(phi, dtype=float), TWO_PI)
    # np.mod can round up to exactly 2*pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


@dataclass
class PhaseConfig:
    """Per-element RIS phases (rad) and amplitudes; Theta = diag(beta * exp(j phi))."""

    phases: np.ndarray
    amplitudes: Optional[np.ndarray] = None

    def __post_init__(self):
        self.phases = wrap_phase(np.atleast_1d(self.phases))
        if self.amplitudes is None:
            self.amplitudes = np.ones_like(self.phases)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if self.amplitudes.shape != self.phases.shape:
            raise ValueError("phases and amplitudes must have equal length")
        if np.any(self.amplitudes < 0) or np.any(self.amplitudes > 1):
            raise ValueError("amplitudes must lie in [0, 1]")

    @property
    def n_elements(self) -> int:
        return self.phases.shape[0]

    @property
    def coefficients(self) -> np.ndarray:
        return self.amplitudes * np.exp(1j * self.phases)

    @property
    def theta(self) -> np.ndarray:
        return np.diag(self.coefficients)

    @classmethod
    def zeros(cls, n_elements: int) -> "PhaseConfig":
        return cls(np.zeros(n_elements))

    @classmethod
    def blocked(cls, n_elements: int) -> "PhaseConfig":
        """All amplitudes zero: the RIS reflects nothing."""
        return cls(np.zeros(n_elements), np.zeros(n_elements))

    def to_csv_row(self) -> str:
        return ",".join(f"{p:.17g}" for p in self.phases)

    @classmethod
    def from_csv_row(cls, row: str) -> "PhaseConfig":
        return cls(np.array([float(v) for v in row.strip().split(",")]))


@dataclass
class Precoder:
    """W has shape (S, N_t, K); column k of W[s] serves user k."""

    W: np.ndarray
    power_P: float
    noise_variance: float = 1.0
    rank_deficient: bool = False


def _check_dims(ch: ChannelSet, theta: PhaseConfig) -> None:
    if theta.n_elements != ch.G.shape[1]:
        raise ValueError(f"PhaseConfig has {theta.n_elements} elements, channel has {ch.G.shape[1]}")


def effective_channel(ch: ChannelSet, theta: PhaseConfig, user: int, subcarrier: int) -> np.ndarray:
    """Row channel r_k[s] = conj(h_d) + (conj(h_r) * theta) @ G."""
    _check_dims(ch, theta)
    hd = ch.h_d[user, subcarrier]
    hr = ch.h_r[user, subcarrier]
    return hd.conj() + (hr.conj() * theta.coefficients) @ ch.G[subcarrier]


def _direct_rows(ch: ChannelSet) -> np.ndarray:
    """(S, K, N_t)"""
    return ch.h_d.conj().transpose(1, 0, 2)


def _element_contributions(ch: ChannelSet) -> np.ndarray:
    """Per-element reflected rows, shape (M, S, K, N_t)."""
    return np.einsum("ksm,smt->mskt", ch.h_r.conj(), ch.G)


def effective_rows(ch: ChannelSet, theta: PhaseConfig) -> np.ndarray:
    """All effective rows, shape (S, K, N_t)."""
    _check_dims(ch, theta)
    return _direct_rows(ch) + np.einsum("ksm,m,smt->skt", ch.h_r.conj(), theta.coefficients, ch.G)


def _pinv_columns(H: np.ndarray):
    """Truncated-SVD pseudo-inverse of each K x N_t matrix in ``H[..., K, N_t]``."""
    U, sv, Vh = np.linalg.svd(H, full_matrices=False)
    cutoff = SVD_RTOL * sv[..., :1]
    keep = (sv > cutoff) & (sv > 0)
    inv = np.where(keep, 1.0 / np.where(keep, sv, 1.0), 0.0)
    # pinv = Vh^H diag(inv) U^H, shape (..., N_t, K)
    W = np.einsum("...in,...i,...ki->...nk", Vh.conj(), inv, U.conj())
    deficient = bool(np.any(~keep))
    return W, deficient


def zf_precoder(ch: ChannelSet, theta: PhaseConfig, power_P: float,
                noise_variance: float = 1.0) -> Precoder:
    """ZF directions Hᴴ(HHᴴ)⁻¹ with unit-norm columns; truncated SVD when rank-deficient."""
    H = effective_rows(ch, theta)
    W, deficient = _pinv_columns(H)
    norms = np.linalg.norm(W, axis=-2, keepdims=True)
    W = np.where(norms > 0, W / np.where(norms > 0, norms, 1.0), 0.0)
    if deficient:
        log.warning("effective channel is rank deficient; using truncated pseudo-inverse")
    return Precoder(W, float(power_P), float(noise_variance), deficient)


def sinr(ch: ChannelSet, theta: PhaseConfig, precoder: Precoder, user: int, subcarrier: int) -> float:
    """(P / sigma^2) |r_k w_k|^2; interference is taken as nulled by ZF."""
    r = effective_channel(ch, theta, user, subcarrier)
    g = r @ precoder.W[subcarrier, :, user]
    return float(precoder.power_P / precoder.noise_variance * abs(g) ** 2)


def sinr_with_interference(ch: ChannelSet, theta: PhaseConfig, precoder: Precoder,
                           user: int, subcarrier: int) -> float:
    """SINR including residual inter-user terms; for non-ZF precoders."""
    r = effective_channel(ch, theta, user, subcarrier)
    gains = np.abs(r @ precoder.W[subcarrier]) ** 2
    interference = precoder.power_P * (gains.sum() - gains[user])
    return float(precoder.power_P * gains[user] / (precoder.noise_variance + interference))


def spectral_efficiency(ch: ChannelSet, theta: PhaseConfig, precoder: Precoder) -> float:
    """Sum over users and subcarriers of ln(1 + gamma_k[s]), in nats/s/Hz."""
    H = effective_rows(ch, theta)
    g = np.einsum("skt,stk->sk", H, precoder.W)
    gamma = precoder.power_P / precoder.noise_variance * np.abs(g) ** 2
    return float(np.sum(np.log1p(gamma)))


def _zf_gamma(rows: np.ndarray, snr: float) -> np.ndarray:
    """Per-user ZF SNR for rows of shape (..., K, N_t).

    With w_k the normalised k-th pseudo-inverse column, |r_k w_k|^2 equals
    1 / [(H H^H)^-1]_kk when H has full row rank.
    """
    K = rows.shape[-2]
    if K == 1:
        return snr * np.sum(np.abs(rows) ** 2, axis=-1)
    gram = rows @ np.swapaxes(rows.conj(), -1, -2)
    lam, U = np.linalg.eigh(gram)
    lam_max = lam[..., -1:]
    good = np.all(lam > _GRAM_RTOL * lam_max, axis=-1) & (lam_max[..., 0] > 0)
    inv_diag = np.einsum("...ki,...i->...k", np.abs(U) ** 2, 1.0 / np.where(good[..., None], lam, 1.0))
    gamma = np.where(good[..., None], snr / np.where(good[..., None], inv_diag, 1.0), 0.0)
    if not np.all(good):
        bad = ~good
        W, _ = _pinv_columns(rows[bad])
        norms = np.linalg.norm(W, axis=-2)
        g = np.einsum("bkt,btk->bk", rows[bad], W)
        gamma[bad] = np.where(norms > 0, snr * np.abs(g) ** 2 / np.where(norms > 0, norms, 1.0) ** 2, 0.0)
    return gamma


def _se_from_rows(rows: np.ndarray, snr: float) -> np.ndarray:
    """Sum SE for rows of shape (..., S, K, N_t) -> (...)."""
    return np.sum(np.log1p(_zf_gamma(rows, snr)), axis=(-1, -2))


def zf_spectral_efficiency(ch: ChannelSet, theta: PhaseConfig, power_P: float,
                           noise_variance: float = 1.0) -> float:
    """SE under ZF precoding recomputed for ``theta``; equals
    ``spectral_efficiency(ch, theta, zf_precoder(ch, theta, P))``."""
    return float(_se_from_rows(effective_rows(ch, theta), power_P / noise_variance))


def random_phase_config(n_elements: int, rng: np.random.Generator) -> PhaseConfig:
    return PhaseConfig(rng.uniform(0.0, TWO_PI, n_elements))


def _coordinate_ascent(ch: ChannelSet, snr: float, grid_B: int, max_sweeps: int,
                       initial: PhaseConfig, rel_tol: float):
    phases = initial.phases.copy()
    beta = initial.amplitudes.copy()
    coeff = beta * np.exp(1j * phases)
    C = _element_contributions(ch)
    rows = _direct_rows(ch) + np.tensordot(coeff, C, axes=1)
    se = float(_se_from_rows(rows, snr))
    grid = TWO_PI * np.arange(grid_B) / grid_B
    unit = np.exp(1j * grid)
    for _ in range(max_sweeps):
        se_start = se
        for m in range(phases.shape[0]):
            delta = beta[m] * unit - coeff[m]
            cand = rows[None] + delta[:, None, None, None] * C[m][None]
            cand_se = _se_from_rows(cand, snr)
            b = int(np.argmax(cand_se))
            # strict improvement only, so a grid-optimal start is a fixed point
            if cand_se[b] > se + 1e-12 * max(1.0, abs(se)):
                phases[m] = grid[b]
                coeff[m] = beta[m] * unit[b]
                rows = cand[b]
                se = float(cand_se[b])
        if se - se_start <= rel_tol * abs(se_start):
            break
    return PhaseConfig(phases, beta)


def oracle_optimize_theta(ch: ChannelSet, power_P: float, grid_B: int = 8, max_sweeps: int = 50,
                          initial: Optional[PhaseConfig] = None, noise_variance: float = 1.0,
                          rel_tol: float = 1e-6) -> PhaseConfig:
    """Coordinate ascent over per-element grid phases, maximising ZF sum SE.

    Each sweep visits m = 0..M-1 and tries the ``grid_B`` phases 2*pi*b/B for
    that element with the others held fixed. Stops once a sweep improves SE
    by less than ``rel_tol`` (relative) or after ``max_sweeps``. Exact ties
    keep the lowest grid index.
    """
    if grid_B < 2:
        raise ValueError("grid_B must be >= 2")
    M = ch.G.shape[1]
    if initial is None:
        initial = PhaseConfig.zeros(M)
    _check_dims(ch, initial)
    return _coordinate_ascent(ch, power_P / noise_variance, grid_B, max_sweeps, initial, rel_tol)


def oracle_multistart(ch: ChannelSet, power_P: float, grid_B: int = 8, max_sweeps: int = 50,
                      noise_variance: float = 1.0) -> PhaseConfig:
    """Best coordinate-ascent result over the B constant starting configurations."""
    M = ch.G.shape[1]
    best, best_se = None, -np.inf
    for b in range(grid_B):
        start = PhaseConfig(np.full(M, TWO_PI * b / grid_B))
        cfg = oracle_optimize_theta(ch, power_P, grid_B, max_sweeps, start, noise_variance)
        se = zf_spectral_efficiency(ch, cfg, power_P, noise_variance)
        if se > best_se:
            best, best_se = cfg, se
    return best


def exhaustive_theta(ch: ChannelSet, power_P: float, grid_B: int = 8, noise_variance: float = 1.0,
                     max_configs: int = 10 ** 7, chunk: int = 4096) -> PhaseConfig:
    """Global argmax of ZF sum SE over the B^M phase grid (first lexicographic on ties)."""
    M = ch.G.shape[1]
    total = grid_B ** M
    if total > max_configs:
        raise SearchSpaceError(f"grid has {total} configurations, limit is {max_configs}")
    snr = power_P / noise_variance
    C = _element_contributions(ch)
    base = _direct_rows(ch)
    unit = np.exp(1j * TWO_PI * np.arange(grid_B) / grid_B)
    place = grid_B ** np.arange(M - 1, -1, -1)
    best_idx, best_se = 0, -np.inf
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = (idx[:, None] // place[None, :]) % grid_B
        rows = base[None] + np.tensordot(unit[digits], C, axes=1)
        se = _se_from_rows(rows, snr)
        j = int(np.argmax(se))
        if se[j] > best_se:
            best_idx, best_se = int(idx[j]), float(se[j])
    digits = (best_idx // place) % grid_B
    return PhaseConfig(TWO_PI * digits / grid_B)


def exhaustive_grid(M: int, grid_B: int):
    """Iterate the phase grid in the order exhaustive_theta scans it."""
    for digits in itertools.product(range(grid_B), repeat=M):
        yield TWO_PI * np.asarray(digits) / grid_B
