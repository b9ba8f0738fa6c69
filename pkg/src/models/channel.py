"""
Channel-model data types: antenna array, multipath components, subcarrier grid,
channel responses, beam codebooks and received signals.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np

from models.errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0


class PathKind(Enum):
    """How a propagation path leaves the base station."""
    LOS = "los"
    FACADE = "facade"
    GROUND = "ground"


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array at the base station."""
    n_h: int = 8
    n_v: int = 8
    spacing: float = 0.5  # inter-element spacing in wavelengths

    def __post_init__(self):
        if self.n_h < 1 or self.n_v < 1:
            raise ConfigError(f"array needs at least one element per axis, got {self.n_h}x{self.n_v}")
        if self.spacing <= 0:
            raise ConfigError(f"element spacing must be positive, got {self.spacing}")

    @property
    def n_elements(self) -> int:
        return self.n_h * self.n_v


@dataclass
class PathComponent:
    """One propagation path: magnitude, delay, phase and departure angles at the BS."""
    attenuation: float
    delay: float  # seconds
    phase: float  # radians in [0, 2pi)
    azimuth: float  # theta, radians
    elevation: float  # phi, radians from the vertical axis
    bounces: int = 0
    kind: PathKind = PathKind.LOS

    def __post_init__(self):
        if self.attenuation < 0:
            raise ValueError(f"path attenuation must be non-negative, got {self.attenuation}")
        if self.delay < 0:
            raise ValueError(f"path delay must be non-negative, got {self.delay}")


PathSet = List[PathComponent]


@dataclass(frozen=True)
class SubcarrierGrid:
    """OFDM subcarriers centered on the carrier frequency."""
    n_subcarriers: int = 16
    center_frequency: float = 28e9  # Hz
    spacing: float = 120e3  # Hz

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ConfigError(f"need at least one subcarrier, got {self.n_subcarriers}")
        if self.spacing <= 0:
            raise ConfigError(f"subcarrier spacing must be positive, got {self.spacing}")

    @property
    def frequencies(self) -> np.ndarray:
        """f_k = f_c + (k - N_s/2) * spacing."""
        k = np.arange(self.n_subcarriers, dtype=np.float64)
        return self.center_frequency + (k - self.n_subcarriers / 2) * self.spacing

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.center_frequency


@dataclass
class ChannelResponse:
    """Per-subcarrier channel vectors, shape (N_s, N_b), complex."""
    h: np.ndarray

    @property
    def n_subcarriers(self) -> int:
        return self.h.shape[0]

    @property
    def n_elements(self) -> int:
        return self.h.shape[1]

    def scaled(self, factor: complex) -> "ChannelResponse":
        return ChannelResponse(self.h * factor)


@dataclass
class Codebook:
    """M unit-norm beamforming vectors, stored row-wise with shape (M, N_b)."""
    beams: np.ndarray
    oversampling: tuple = (1, 1)

    @property
    def size(self) -> int:
        return self.beams.shape[0]

    @property
    def n_elements(self) -> int:
        return self.beams.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        """Beams as columns, shape (N_b, M)."""
        return self.beams.T


@dataclass
class RxSignal:
    """Received samples y[k] = h[k]^T f x[k] + n[k]."""
    x: np.ndarray
    sigma2: float
    noise: np.ndarray
    y: np.ndarray
