"""Synthetic SIMO-OFDM multipath channels and tensor pre-processing.

Channel model (receiver ULA with half-wavelength spacing)::

    h[:, n] = sum_i alpha_i * exp(-j 2 pi f_c tau_i T_s)
                    * exp(-j 2 pi (n / N_sub) tau_i) * a(theta_i)   (+ noise)

with ``tau_i`` the delay in sample periods ``T_s = 1 / 30.72 MHz`` and
``n = 0 .. N_sub - 1``. The carrier only contributes a constant per-path phase.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from mosel.numkit import exchange_matrix, left_pi_real_matrix
from mosel.tensorlab import concat, mode_product

SAMPLING_RATE_HZ = 30.72e6
MAX_DELAY_SAMPLES = 5.0
MIN_DELAY_GAP = 0.01
DOA_RANGE_DEG = (0.0, 120.0)

BASEBAND = (0.0,)
UPLINK_DOWNLINK = (2.6e9, 2.8e9)


class NotCentroHermitianError(ValueError):
    """The real transform left an imaginary residue above tolerance."""


@dataclass(frozen=True)
class PathParams:
    amplitude: complex
    delay_samples: float
    doa_deg: float


@dataclass(frozen=True)
class SimConfig:
    m_antennas: int = 8
    n_sub: int = 100
    k_smooth: int = 50
    l_max: int = 5
    samples_per_class: int = 3000
    snr_db: float = 20.0
    carriers_hz: tuple[float, ...] = BASEBAND
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "carriers_hz", tuple(float(c) for c in self.carriers_hz))
        if not 1 <= self.k_smooth < self.n_sub:
            raise ValueError("k_smooth must satisfy 1 <= k_smooth < n_sub")
        if self.samples_per_class < 1 or self.l_max < 1 or self.m_antennas < 1:
            raise ValueError("m_antennas, l_max and samples_per_class must be >= 1")
        if not self.carriers_hz:
            raise ValueError("need at least one carrier")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["carriers_hz"] = list(self.carriers_hz)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d["carriers_hz"] = tuple(d.get("carriers_hz", BASEBAND))
        return cls(**d)


@dataclass
class ChannelSample:
    """One channel realisation, observed at one or more carriers.

    ``h`` holds one ``M x N_sub`` matrix per carrier, in ``carriers_hz`` order.
    """
    h: list[np.ndarray]
    paths: list[PathParams]
    carriers_hz: tuple[float, ...]
    snr_db: float
    index: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def model_order(self) -> int:
        return len(self.paths)


def steering_vector(doa_deg: float, m: int) -> np.ndarray:
    """ULA response ``[1, e^{j mu}, ..., e^{j (m-1) mu}]`` with ``mu = pi cos(theta)``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    mu = np.pi * np.cos(np.deg2rad(doa_deg))
    return np.exp(1j * mu * np.arange(m))


def generate_channel(paths: Sequence[PathParams], cfg: SimConfig, carrier_hz: float) -> np.ndarray:
    """Noiseless ``M x N_sub`` channel matrix for the given paths and carrier."""
    if not paths:
        raise ValueError("at least one path is required")
    n = np.arange(cfg.n_sub) / cfg.n_sub
    h = np.zeros((cfg.m_antennas, cfg.n_sub), dtype=complex)
    for p in paths:
        carrier_phase = np.exp(-2j * np.pi * carrier_hz * p.delay_samples / SAMPLING_RATE_HZ)
        freq = np.exp(-2j * np.pi * n * p.delay_samples)
        h += p.amplitude * carrier_phase * np.outer(steering_vector(p.doa_deg, cfg.m_antennas), freq)
    return h


def add_noise(h: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add circular complex Gaussian noise at ``snr_db`` relative to the mean entry power."""
    h = np.asarray(h)
    p_sig = float(np.mean(np.abs(h) ** 2))
    if p_sig == 0.0:
        raise ValueError("SNR is undefined for an all-zero channel")
    noise_var = p_sig / 10.0 ** (snr_db / 10.0)
    z = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    return h + np.sqrt(noise_var / 2.0) * z


def smooth(h: np.ndarray, k: int) -> np.ndarray:
    """Stack the ``k`` sub-carrier windows of ``h`` into an ``(M, N_sub - k + 1, k)`` tensor."""
    h = np.asarray(h)
    n_sub = h.shape[1]
    if not 1 <= k < n_sub:
        raise ValueError(f"smoothing length {k} must be in [1, {n_sub})")
    width = n_sub - k + 1
    return np.stack([h[:, j:j + width] for j in range(k)], axis=2)


def forward_backward(t: np.ndarray) -> np.ndarray:
    """Forward-backward averaging: append the conjugated, fully index-reversed copy along the last mode."""
    t = np.asarray(t)
    back = t.conj()
    for d in range(1, t.ndim + 1):
        back = mode_product(back, exchange_matrix(t.shape[d - 1]), d)
    return concat(t, back, t.ndim)


def real_transform(t: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Map a centro-Hermitian tensor to a real one via ``x_d Q_{M_d}^H`` on every mode.

    Raises:
        NotCentroHermitianError: if the discarded imaginary part exceeds
            ``rtol * ||t||_F``.
    """
    t = np.asarray(t)
    out = t.astype(complex)
    for d in range(1, t.ndim + 1):
        out = mode_product(out, left_pi_real_matrix(t.shape[d - 1]).conj().T, d)
    residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
    if residue > rtol * float(np.linalg.norm(t)):
        raise NotCentroHermitianError(
            f"imaginary residue {residue:.3e} exceeds {rtol:g} * ||t||_F"
        )
    return np.ascontiguousarray(out.real)


def preprocess(h: np.ndarray, k: int) -> np.ndarray:
    """Smoothing, forward-backward averaging and real transform of one channel matrix."""
    return real_transform(forward_backward(smooth(h, k)))


def sample_rng(seed: int, model_order: int, index: int) -> np.random.Generator:
    """Independent stream for one sample, so generation order does not matter."""
    return np.random.default_rng([seed, model_order, index])


def draw_paths(l: int, rng: np.random.Generator) -> list[PathParams]:
    """Draw ``l`` paths: CN(0, 1) gains, distinct uniform delays, uniform DoAs."""
    while True:
        delays = rng.uniform(0.0, MAX_DELAY_SAMPLES, size=l)
        gaps = np.diff(np.sort(delays))
        if gaps.size == 0 or gaps.min() >= MIN_DELAY_GAP:
            break
    doas = rng.uniform(*DOA_RANGE_DEG, size=l)
    gains = (rng.standard_normal(l) + 1j * rng.standard_normal(l)) / np.sqrt(2.0)
    return [PathParams(complex(a), float(t), float(th)) for a, t, th in zip(gains, delays, doas)]


def generate_sample(cfg: SimConfig, l: int, index: int) -> ChannelSample:
    rng = sample_rng(cfg.seed, l, index)
    paths = draw_paths(l, rng)
    hs = [add_noise(generate_channel(paths, cfg, fc), cfg.snr_db, rng) for fc in cfg.carriers_hz]
    return ChannelSample(h=hs, paths=paths, carriers_hz=cfg.carriers_hz, snr_db=cfg.snr_db, index=index)


def iter_dataset(cfg: SimConfig) -> Iterator[ChannelSample]:
    for l in range(1, cfg.l_max + 1):
        for i in range(cfg.samples_per_class):
            yield generate_sample(cfg, l, i)


def generate_dataset(cfg: SimConfig) -> list[ChannelSample]:
    """All ``l_max * samples_per_class`` samples, grouped by model order."""
    return list(iter_dataset(cfg))
