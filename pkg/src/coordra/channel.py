"""LoS plus single-bounce multipath MIMO channel synthesis.

Both ends carry a uniform linear array of vertical Hertzian dipoles along
the x-axis with half-wavelength spacing. The channel coefficient between
terminal element ``a_u`` and BS element ``a_r`` on subcarrier ``n`` is

    H = sum_k h_k * exp(j 2 pi d_k / lambda) * exp(-j 2 pi f_n tau_k[a_u, a_r])

with ``tau_k[a_u, a_r]`` the path length of ray ``k`` between those two
elements divided by the speed of light (plane-wave element offsets).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import SPEED_OF_LIGHT, ScattererSets, Scatterer, ScenarioConfig, TerminalState

DIPOLE_DIRECTIVITY = 1.5


@dataclass
class PathComponent:
    total_distance: float
    delays: np.ndarray  # (A_u, A_r) seconds
    amplitudes: np.ndarray  # (A_u, A_r) complex
    departure_angle: float  # radians from the array (x) axis at the BS
    arrival_angle: float  # radians from the array (x) axis at the terminal


@dataclass
class ChannelRealization:
    matrices: np.ndarray  # (N, A_u, A_r)
    terminal: TerminalState | None = None

    def __post_init__(self):
        if self.matrices.ndim != 3:
            raise ValueError("matrices must have shape (N, A_u, A_r)")
        if not np.all(np.isfinite(self.matrices)):
            raise ValueError("channel contains non-finite entries")


def element_offsets(count: int, wavelength: float) -> np.ndarray:
    """Element x-offsets relative to the array centre, half-wavelength spacing."""
    return (np.arange(count) - (count - 1) / 2) * (wavelength / 2)


def dipole_gain(direction_z):
    """Amplitude gain of a vertical Hertzian dipole: sqrt(1.5) * sin(angle to z)."""
    return np.sqrt(DIPOLE_DIRECTIVITY * np.clip(1.0 - np.square(direction_z), 0.0, None))


def subcarrier_frequencies(config: ScenarioConfig) -> np.ndarray:
    n = np.arange(config.subcarrier_count)
    spacing = config.bandwidth / config.subcarrier_count
    return config.carrier_frequency + (n - (config.subcarrier_count - 1) / 2) * spacing


def _terminal_xyz(config: ScenarioConfig, positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    z = np.full((len(positions), 1), config.terminal_height)
    return np.hstack([positions, z])


def _ray_geometry(config, terminals, hops, gains):
    """Per-ray distance, unit departure/arrival vectors and amplitude.

    terminals: (B, 3); hops: (B, K, 3) bounce points, NaN rows for LoS;
    gains: (B, K) reflection amplitude, 0 for padding rays.
    """
    bs = np.asarray(config.bs_position, dtype=float)
    los = np.isnan(hops[..., 0])
    first = np.where(los[..., None], terminals[:, None, :], hops)
    last = np.where(los[..., None], bs, hops)
    seg1 = first - bs
    seg2 = last - terminals[:, None, :]
    d1 = np.linalg.norm(seg1, axis=-1)
    d2 = np.where(los, 0.0, np.linalg.norm(seg2, axis=-1))
    dist = d1 + d2
    dep = seg1 / d1[..., None]
    arr = seg2 / np.linalg.norm(seg2, axis=-1)[..., None]
    amp = config.wavelength / (4 * np.pi * dist) * dipole_gain(dep[..., 2]) * dipole_gain(arr[..., 2]) * gains
    return dist, dep, arr, amp


def _pad_rays(config, positions, scatterers: ScattererSets | None):
    terminals = _terminal_xyz(config, positions)
    b = len(terminals)
    counts = np.zeros(b, dtype=np.int64) if scatterers is None else scatterers.counts()
    k = 1 + (int(counts.max()) if b else 0)
    hops = np.full((b, k, 3), np.nan)
    gains = np.zeros((b, k))
    gains[:, 0] = 1.0
    if k > 1:
        rows = np.repeat(np.arange(b), counts)
        cols = 1 + np.arange(counts.sum()) - np.repeat(scatterers.offsets[:-1], counts)
        hops[rows, cols] = scatterers.positions
        gains[rows, cols] = scatterers.gains
    return terminals, hops, gains


def enumerate_paths(config: ScenarioConfig, terminal, scatterers: list[Scatterer] = ()) -> list[PathComponent]:
    p = terminal.true_position if isinstance(terminal, TerminalState) else np.asarray(terminal, dtype=float)
    sets = ScattererSets.from_lists([list(scatterers)])
    terminals, hops, gains = _pad_rays(config, p[None], sets)
    dist, dep, arr, amp = _ray_geometry(config, terminals, hops, gains)
    lam = config.wavelength
    off_r = element_offsets(config.tx_antennas, lam)
    off_u = element_offsets(config.rx_antennas, lam)
    paths = []
    for k in range(dist.shape[1]):
        length = dist[0, k] - off_u[:, None] * arr[0, k, 0] - off_r[None, :] * dep[0, k, 0]
        paths.append(PathComponent(
            total_distance=float(dist[0, k]),
            delays=length / SPEED_OF_LIGHT,
            amplitudes=np.full(length.shape, amp[0, k], dtype=complex),
            departure_angle=float(np.arccos(np.clip(dep[0, k, 0], -1, 1))),
            arrival_angle=float(np.arccos(np.clip(arr[0, k, 0], -1, 1))),
        ))
    return paths


def channel_matrix(paths: list[PathComponent], config: ScenarioConfig, n: int) -> np.ndarray:
    """Channel matrix on subcarrier ``n`` (1-based), shape (A_u, A_r)."""
    if not paths:
        raise ValueError("need at least one path")
    if not 1 <= n <= config.subcarrier_count:
        raise ValueError(f"subcarrier index {n} outside 1..{config.subcarrier_count}")
    f = subcarrier_frequencies(config)[n - 1]
    lam = config.wavelength
    h = np.zeros(paths[0].delays.shape, dtype=complex)
    for path in paths:
        h = h + path.amplitudes * np.exp(2j * np.pi * path.total_distance / lam) \
            * np.exp(-2j * np.pi * f * path.delays)
    return h


def channel_batch(config: ScenarioConfig, positions: np.ndarray,
                  scatterers: ScattererSets | None = None) -> np.ndarray:
    """Channels for many terminal positions at once, shape (B, N, A_u, A_r)."""
    terminals, hops, gains = _pad_rays(config, positions, scatterers)
    dist, dep, arr, amp = _ray_geometry(config, terminals, hops, gains)
    lam = config.wavelength
    f = subcarrier_frequencies(config)
    off_r = element_offsets(config.tx_antennas, lam)
    off_u = element_offsets(config.rx_antennas, lam)
    # (B, K, A_u, A_r) path lengths between element pairs
    length = (dist[..., None, None]
              - off_u[None, None, :, None] * arr[..., 0, None, None]
              - off_r[None, None, None, :] * dep[..., 0, None, None])
    tau = length / SPEED_OF_LIGHT
    base = amp * np.exp(2j * np.pi * dist / lam)  # (B, K)
    out = np.zeros((len(terminals), len(f), config.rx_antennas, config.tx_antennas), dtype=complex)
    for k in range(dist.shape[1]):
        out += base[:, k, None, None, None] * np.exp(-2j * np.pi * f[None, :, None, None] * tau[:, k, None])
    return out


def realize(config: ScenarioConfig, terminal: TerminalState, scatterers: list[Scatterer] = ()) -> ChannelRealization:
    sets = ScattererSets.from_lists([list(scatterers)])
    h = channel_batch(config, terminal.true_position[None], sets)[0]
    return ChannelRealization(h, terminal)


_DUMP_MAGIC = b"CHN1"


def dump_channels(path, channels: np.ndarray) -> None:
    """Binary batch dump: magic, then N, A_u, A_r, count as little-endian u32,
    then interleaved little-endian float64 real/imag in (count, N, A_u, A_r) order."""
    channels = np.asarray(channels, dtype=np.complex128)
    count, n, au, ar = channels.shape
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC + struct.pack("<4I", n, au, ar, count))
        fh.write(channels.astype("<c16").tobytes())


def load_channels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _DUMP_MAGIC:
        raise ValueError(f"{path}: not a channel dump")
    n, au, ar, count = struct.unpack("<4I", raw[4:20])
    if len(raw) - 20 != 16 * count * n * au * ar:
        raise ValueError(f"{path}: truncated channel dump")
    data = np.frombuffer(raw, dtype="<c16", offset=20)
    return data.reshape(count, n, au, ar).astype(np.complex128)
