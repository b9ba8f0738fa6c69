"""
Multipath OFDM channel simulation for a UPA base station.

Implements steering vectors, channel synthesis from path components, the
Kronecker DFT beam codebook, received power, the brute-force optimal-beam
oracle used for labeling, and noisy reception for SNR experiments.
"""

import hashlib
from typing import Optional, Sequence, Tuple

import numpy as np

from models.channel import (
    ArrayGeometry, ChannelResponse, Codebook, PathComponent, RxSignal, SubcarrierGrid,
)
from models.errors import DimensionError


def steering_vector(azimuth: float, elevation: float, geom: ArrayGeometry) -> np.ndarray:
    """
    Array response for a plane wave leaving at (azimuth, elevation).

    Entry (h, v) is exp(j 2pi d [h cos(phi) + v sin(theta) sin(phi)]) / sqrt(N_b),
    flattened h-major; with d = 0.5 wavelengths the phase factor is pi.
    """
    h = np.arange(geom.n_h)[:, None]
    v = np.arange(geom.n_v)[None, :]
    phase = 2 * np.pi * geom.spacing * (
        h * np.cos(elevation) + v * np.sin(azimuth) * np.sin(elevation)
    )
    return (np.exp(1j * phase) / np.sqrt(geom.n_elements)).reshape(-1)


def steering_matrix(azimuths: np.ndarray, elevations: np.ndarray, geom: ArrayGeometry) -> np.ndarray:
    """Steering vectors for many directions, shape (L, N_b)."""
    h = np.arange(geom.n_h)[None, :, None]
    v = np.arange(geom.n_v)[None, None, :]
    az = np.asarray(azimuths, dtype=np.float64)[:, None, None]
    el = np.asarray(elevations, dtype=np.float64)[:, None, None]
    phase = 2 * np.pi * geom.spacing * (h * np.cos(el) + v * np.sin(az) * np.sin(el))
    return (np.exp(1j * phase) / np.sqrt(geom.n_elements)).reshape(len(az), -1)


def channel_response(
    paths: Sequence[PathComponent], grid: SubcarrierGrid, geom: ArrayGeometry
) -> ChannelResponse:
    """
    h[k] = sum_l alpha_l exp(-j 2pi f_k tau_l + j psi_l) a(theta_l, phi_l).

    An empty path list gives an all-zero channel.
    """
    if not paths:
        return ChannelResponse(np.zeros((grid.n_subcarriers, geom.n_elements), dtype=np.complex128))
    alpha = np.array([p.attenuation for p in paths])
    tau = np.array([p.delay for p in paths])
    psi = np.array([p.phase for p in paths])
    steer = steering_matrix([p.azimuth for p in paths], [p.elevation for p in paths], geom)
    gains = alpha[None, :] * np.exp(-2j * np.pi * grid.frequencies[:, None] * tau[None, :] + 1j * psi[None, :])
    return ChannelResponse(gains @ steer)


def _dft_matrix(n: int, oversampling: int = 1) -> np.ndarray:
    """Columns exp(-j 2pi n p / (O N)) / sqrt(N), shape (N, O N)."""
    rows = np.arange(n)[:, None]
    cols = np.arange(n * oversampling)[None, :]
    return np.exp(-2j * np.pi * rows * cols / (n * oversampling)) / np.sqrt(n)


def dft_codebook(geom: ArrayGeometry, oversampling: Tuple[int, int] = (1, 1)) -> Codebook:
    """
    Kronecker product of horizontal and vertical DFT matrices.

    Beam m = p * M_v + q has entry (h, v) = F_h[h, p] F_v[v, q]. With no
    oversampling the codebook is unitary and M = N_h * N_v.
    """
    o_h, o_v = oversampling
    kron = np.kron(_dft_matrix(geom.n_h, o_h), _dft_matrix(geom.n_v, o_v))
    return Codebook(beams=np.ascontiguousarray(kron.T), oversampling=(o_h, o_v))


def codebook_hash(cb: Codebook) -> str:
    """Stable fingerprint of the beam set, used to guard label provenance."""
    interleaved = np.stack([cb.beams.real, cb.beams.imag], axis=-1).astype("<f8")
    return hashlib.sha256(interleaved.tobytes()).hexdigest()[:16]


def downsample_beam_index(index: int, factor: int) -> int:
    """Map a beam of a ``factor``-times finer linear codebook onto the coarse one."""
    if factor < 1:
        raise ValueError(f"downsampling factor must be >= 1, got {factor}")
    return int(index) // factor


def _check_beam(h: ChannelResponse, f: np.ndarray) -> None:
    if f.shape[-1] != h.n_elements:
        raise DimensionError(f"beam length {f.shape[-1]} does not match {h.n_elements} antennas")


def received_power(h: ChannelResponse, f: np.ndarray) -> float:
    """Subcarrier-averaged |h[k]^T f|^2."""
    f = np.asarray(f)
    _check_beam(h, f)
    return float(np.mean(np.abs(h.h @ f) ** 2))


def beam_sweep_powers(h: ChannelResponse, cb: Codebook) -> np.ndarray:
    """Received power of every codebook beam, shape (M,)."""
    if cb.n_elements != h.n_elements:
        raise DimensionError(f"codebook has {cb.n_elements} antennas, channel has {h.n_elements}")
    return np.mean(np.abs(h.h @ cb.matrix) ** 2, axis=0)


def optimal_beam(h: ChannelResponse, cb: Codebook) -> int:
    """Index of the beam with maximal received power; ties go to the lowest index."""
    return int(np.argmax(beam_sweep_powers(h, cb)))


def simulate_rx(
    h: ChannelResponse,
    f: np.ndarray,
    x: np.ndarray,
    sigma2: float,
    seed: Optional[int] = None,
) -> RxSignal:
    """
    y[k] = h[k]^T f x[k] + n[k], n[k] ~ CN(0, sigma2).

    Args:
        h: Channel response
        f: Beamforming vector
        x: Transmit symbols, one per subcarrier
        sigma2: Noise variance
        seed: Seed of the noise stream
    """
    if sigma2 < 0:
        raise ValueError(f"noise variance must be non-negative, got {sigma2}")
    f = np.asarray(f)
    _check_beam(h, f)
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != (h.n_subcarriers,):
        raise DimensionError(f"expected {h.n_subcarriers} transmit symbols, got {x.shape}")
    rng = np.random.default_rng(seed)
    noise = np.sqrt(sigma2 / 2) * (
        rng.standard_normal(h.n_subcarriers) + 1j * rng.standard_normal(h.n_subcarriers)
    )
    return RxSignal(x=x, sigma2=sigma2, noise=noise, y=(h.h @ f) * x + noise)


def beam_snr_db(h: ChannelResponse, f: np.ndarray, tx_power: float, sigma2: float) -> float:
    """Average post-beamforming SNR in dB for transmit power ``tx_power``."""
    if sigma2 <= 0:
        raise ValueError(f"noise variance must be positive for an SNR, got {sigma2}")
    power = received_power(h, f) * tx_power
    return float(10 * np.log10(max(power, np.finfo(float).tiny) / sigma2))


class ChannelSimulator:
    """
    One base station: its array, OFDM grid and beam codebook.

    Turns traced paths into channels, power sweeps and oracle labels, and
    simulates noisy reception on a chosen beam.
    """

    def __init__(self, geom: ArrayGeometry, grid: SubcarrierGrid, codebook: Optional[Codebook] = None):
        self.geom = geom
        self.grid = grid
        self.codebook = codebook if codebook is not None else dft_codebook(geom)
        if self.codebook.n_elements != geom.n_elements:
            raise DimensionError(
                f"codebook has {self.codebook.n_elements} antennas, array has {geom.n_elements}"
            )

    @property
    def codebook_hash(self) -> str:
        return codebook_hash(self.codebook)

    def response(self, paths: Sequence[PathComponent]) -> ChannelResponse:
        return channel_response(paths, self.grid, self.geom)

    def sweep(self, paths: Sequence[PathComponent]) -> np.ndarray:
        """Received power of every codebook beam for the channel of ``paths``."""
        return beam_sweep_powers(self.response(paths), self.codebook)

    def label(self, paths: Sequence[PathComponent]) -> int:
        """Oracle label: brute-force optimal beam of the channel of ``paths``."""
        return optimal_beam(self.response(paths), self.codebook)

    def receive(
        self, paths: Sequence[PathComponent], beam: int, x: np.ndarray, sigma2: float, seed: Optional[int] = None
    ) -> RxSignal:
        """Noisy reception of ``x`` sent on codebook beam ``beam``."""
        if not 0 <= beam < self.codebook.size:
            raise DimensionError(f"beam {beam} outside a codebook of {self.codebook.size}")
        return simulate_rx(self.response(paths), self.codebook.matrix[:, beam], x, sigma2, seed)
