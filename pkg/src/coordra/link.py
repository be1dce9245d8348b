"""Beam codebooks, SNR, effective SNR mapping, BLER model and goodput."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.special import expit

from .scenario import ScenarioConfig

BOLTZMANN = 1.380649e-23
NOISE_TEMPERATURE = 290.0


@dataclass(frozen=True)
class Codebook:
    vectors: np.ndarray  # (count, antennas), unit-norm rows
    angles: np.ndarray  # steering angle of each vector, degrees from the array axis
    spacing: float
    sector: tuple[float, float]

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def antennas(self) -> int:
        return self.vectors.shape[1]


def steering_vector(antennas: int, angle_deg: float) -> np.ndarray:
    phase = np.pi * np.arange(antennas) * np.cos(np.deg2rad(angle_deg))
    return np.exp(1j * phase) / np.sqrt(antennas)


def build_codebook(antennas: int, spacing: float, sector=(0.0, 180.0), conjugate: bool = False) -> Codebook:
    """Half-wavelength ULA steering vectors at sector[0] + i * spacing.

    Transmit beams are applied as precoders (``H @ v``) and therefore use the
    conjugated steering vector; receive filters enter as ``u^H`` and do not.
    """
    if spacing <= 0:
        raise ValueError("angular spacing must be positive")
    start, end = sector
    count = (end - start) / spacing
    if abs(count - round(count)) > 1e-9 or round(count) < 1:
        raise ValueError(f"spacing {spacing} does not divide sector {sector}")
    angles = start + spacing * np.arange(round(count))
    vectors = np.array([steering_vector(antennas, a) for a in angles])
    if conjugate:
        vectors = vectors.conj()
    return Codebook(vectors, angles, float(spacing), (float(start), float(end)))


def codebooks(config: ScenarioConfig) -> tuple[Codebook, Codebook]:
    tx = build_codebook(config.tx_antennas, config.tx_beam_spacing, conjugate=True)
    rx = build_codebook(config.rx_antennas, config.rx_beam_spacing)
    return tx, rx


# (bits per symbol, code rate, EESM beta). Thresholds are placed on a 1.8 dB
# grid starting at -4 dB before the calibration offset is applied.
_MCS_ROWS = [
    (2, Fraction(1, 8), 1.5),
    (2, Fraction(1, 5), 1.6),
    (2, Fraction(1, 3), 1.7),
    (2, Fraction(1, 2), 1.9),
    (2, Fraction(2, 3), 2.1),
    (4, Fraction(2, 5), 5.5),
    (4, Fraction(1, 2), 6.0),
    (4, Fraction(3, 5), 6.6),
    (4, Fraction(2, 3), 7.2),
    (4, Fraction(3, 4), 7.8),
    (6, Fraction(3, 5), 18.0),
    (6, Fraction(2, 3), 20.0),
    (6, Fraction(3, 4), 22.0),
    (6, Fraction(5, 6), 24.0),
    (6, Fraction(9, 10), 26.0),
]
THRESHOLD_START_DB = -4.0
THRESHOLD_STEP_DB = 1.8


@dataclass(frozen=True)
class McsTable:
    bits_per_symbol: np.ndarray  # (M,) int
    code_rates: tuple[Fraction, ...]
    thresholds_db: np.ndarray  # (M,)
    betas: np.ndarray  # (M,) linear
    payload_bits: np.ndarray  # (M,) bits per frame
    slope: float = 2.0

    def __post_init__(self):
        if not (np.all(np.diff(self.payload_bits) > 0) and np.all(np.diff(self.thresholds_db) > 0)):
            raise ValueError("MCS entries must have increasing payload and threshold")
        if np.any(self.betas <= 0):
            raise ValueError("EESM beta must be positive")
        if self.slope <= 0:
            raise ValueError("BLER slope must be positive")

    def __len__(self) -> int:
        return len(self.betas)

    @classmethod
    def build(cls, config: ScenarioConfig, rows, thresholds_db) -> "McsTable":
        bits = np.array([r[0] for r in rows], dtype=np.int64)
        rates = tuple(Fraction(r[1]) for r in rows)
        betas = np.array([r[2] for r in rows], dtype=float)
        payload = config.subcarrier_count * symbols_per_frame(config) * bits * np.array([float(r) for r in rates])
        return cls(bits, rates, np.asarray(thresholds_db, dtype=float), betas, payload, config.bler_slope)

    def to_text(self) -> str:
        lines = ["# m bits rate threshold_db beta"]
        for m in range(len(self)):
            lines.append(f"{m + 1} {self.bits_per_symbol[m]} {self.code_rates[m]} "
                         f"{float(self.thresholds_db[m])!r} {float(self.betas[m])!r}")
        return "\n".join(lines) + "\n"


def symbols_per_frame(config: ScenarioConfig) -> int:
    return int(math.floor(config.frame_duration * config.bandwidth / config.subcarrier_count + 1e-9))


def default_mcs_table(config: ScenarioConfig) -> McsTable:
    thresholds = (THRESHOLD_START_DB + THRESHOLD_STEP_DB * np.arange(len(_MCS_ROWS))
                  + config.mcs_threshold_offset_db)
    return McsTable.build(config, _MCS_ROWS, thresholds)


def load_mcs_table(path, config: ScenarioConfig) -> McsTable:
    """Text table, one entry per line: ``m bits rate threshold_db beta``."""
    rows, thresholds = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 columns")
        m, bits, rate, th, beta = parts
        if int(m) != len(rows) + 1:
            raise ValueError(f"{path}:{lineno}: entries must be numbered 1, 2, ...")
        rows.append((int(bits), Fraction(rate), float(beta)))
        thresholds.append(float(th))
    return McsTable.build(config, rows, thresholds)


def noise_power(config: ScenarioConfig) -> float:
    """Per-subcarrier noise power in watts."""
    return (BOLTZMANN * NOISE_TEMPERATURE * config.bandwidth / config.subcarrier_count
            * 10 ** (config.noise_figure_db / 10))


def snr(h: np.ndarray, v: np.ndarray, u: np.ndarray, tx_power: float, noise: float) -> float:
    if noise <= 0:
        raise ValueError("noise power must be positive")
    return float(tx_power * abs(np.vdot(u, h @ v)) ** 2 / noise)


def effective_snr(gammas, beta: float) -> float:
    """Exponential effective SNR mapping of linear per-subcarrier SNRs."""
    gammas = np.asarray(gammas, dtype=float)
    if beta <= 0:
        raise ValueError("beta must be positive")
    if np.any(gammas < 0):
        raise ValueError("SNR values must be non-negative")
    low = gammas.min()
    # factoring out the smallest term keeps the sum in [1, N] (no underflow)
    mean = np.exp(-(gammas - low) / beta).sum() / gammas.size
    return float(low - beta * math.log(mean))


def to_db(x):
    with np.errstate(divide="ignore"):
        return 10 * np.log10(x)


def error_rate(m: int, gamma_eff, table: McsTable):
    """Block error probability of MCS ``m`` (0-based) at linear effective SNR."""
    return expit(-table.slope * (to_db(gamma_eff) - table.thresholds_db[m]))


def goodput(m: int, eps, table: McsTable, frame_duration: float):
    if np.any(np.asarray(eps) < 0) or np.any(np.asarray(eps) > 1):
        raise ValueError("error rate must lie in [0, 1]")
    return (1 - eps) * table.payload_bits[m] / frame_duration


def beam_gains(channels: np.ndarray, tx: np.ndarray, rx: np.ndarray) -> np.ndarray:
    """|u^H H v|^2 for every subcarrier and beam pair: (B, N, U, V).

    The sums over antennas are unrolled so each entry is computed by the same
    sequence of operations whatever the batch or codebook size.
    """
    _, _, au, ar = channels.shape
    hv = 0
    for a in range(ar):
        hv = hv + channels[:, :, :, a, None] * tx[None, None, None, :, a]  # (B, N, Au, V)
    g = 0
    for a in range(au):
        g = g + rx[None, None, :, a, None].conj() * hv[:, :, a, None, :]  # (B, N, U, V)
    return g.real ** 2 + g.imag ** 2


def snr_grid(channels, tx, rx, config: ScenarioConfig) -> np.ndarray:
    return config.tx_power * beam_gains(channels, tx, rx) / noise_power(config)


def eesm_grid(gammas: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """EESM over the subcarrier axis (axis 1) for each beta: (B, U, V, M)."""
    n = gammas.shape[1]
    low = gammas.min(axis=1)
    out = np.empty(low.shape + (len(betas),))
    for j, beta in enumerate(betas):
        total = 0
        for i in range(n):
            total = total + np.exp(-(gammas[:, i] - low) / beta)
        out[..., j] = low - beta * np.log(total / n)
    return out


def goodput_grid(channels, tx: Codebook, rx: Codebook, table: McsTable, config: ScenarioConfig):
    """Goodput and effective SNR for every (v, u, m): two arrays of shape (B, V, U, M)."""
    gammas = snr_grid(channels, tx.vectors, rx.vectors, config)
    eff = eesm_grid(gammas, table.betas).transpose(0, 2, 1, 3)  # (B, V, U, M)
    eps = expit(-table.slope * (to_db(eff) - table.thresholds_db))
    rate = (1 - eps) * (table.payload_bits / config.frame_duration)
    return rate, eff
