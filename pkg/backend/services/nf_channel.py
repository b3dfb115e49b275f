"""
Near-field array responses for the RSU antenna arrays.

Evaluates the spherical-wave steering matrix, the non-uniform spherical wave
(NUSW) path loss, the composite channel and the analytic derivatives of the
two-way response B = A A^H used by the Fisher information.

Conventions:
    - Antenna indices are centred: n in {-(N-1)/2, ..., (N-1)/2}.
    - Channels are (n_tx x n_rx): H[n_t, n_r] = Gamma[n_r, n_t] * A[n_t, n_r].
    - Angles in radians, distances in meters.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..utils.constants import SPEED_OF_LIGHT
from ..utils.errors import DomainError

logger = logging.getLogger(__name__)

# Poses closer than this multiple of the aperture are rejected
APERTURE_GUARD = 1.2


@dataclass(frozen=True)
class ArrayGeometry:
    """Transmit/receive uniform linear arrays sharing a centre point."""

    n_tx: int
    n_rx: int
    d_tx: float
    d_rx: float
    wavelength: float
    carrier_freq: float

    def __post_init__(self):
        if self.n_tx < 1 or self.n_rx < 1:
            raise DomainError(f"antenna counts must be >= 1, got n_tx={self.n_tx}, n_rx={self.n_rx}")
        if self.d_tx <= 0 or self.d_rx <= 0:
            raise DomainError("element spacings must be positive")
        if self.wavelength <= 0 or self.carrier_freq <= 0:
            raise DomainError("wavelength and carrier frequency must be positive")

    @classmethod
    def half_wavelength(cls, n_tx: int, n_rx: int, carrier_freq: float) -> "ArrayGeometry":
        wavelength = SPEED_OF_LIGHT / carrier_freq
        return cls(n_tx, n_rx, wavelength / 2, wavelength / 2, wavelength, carrier_freq)

    @classmethod
    def with_spacing(cls, n_tx: int, n_rx: int, carrier_freq: float, spacing: float) -> "ArrayGeometry":
        return cls(n_tx, n_rx, spacing, spacing, SPEED_OF_LIGHT / carrier_freq, carrier_freq)

    @property
    def aperture(self) -> float:
        return (self.n_tx - 1) * self.d_tx

    @property
    def tx_offsets(self) -> np.ndarray:
        """Signed element positions n_t * d_t of the transmit array."""
        return centered_indices(self.n_tx) * self.d_tx

    @property
    def rx_offsets(self) -> np.ndarray:
        return centered_indices(self.n_rx) * self.d_rx


@dataclass(frozen=True)
class Pose:
    """Angle (rad) and distance (m) of a vehicle seen from an array centre."""

    angle: float
    distance: float

    def __post_init__(self):
        if not self.distance > 0:
            raise DomainError(f"distance must be positive, got {self.distance}")
        if not 0 < self.angle < math.pi:
            raise DomainError(f"angle must lie in (0, pi), got {self.angle}")


@dataclass(frozen=True)
class ChannelRealization:
    """Composite channel and two-way response for one (RSU, vehicle) pair."""

    h: np.ndarray          # (n_tx, n_rx)
    b: np.ndarray          # (n_tx, n_tx), A A^H
    db_dtheta: np.ndarray  # (n_tx, n_tx)
    db_ddist: np.ndarray   # (n_tx, n_tx)


def centered_indices(n: int) -> np.ndarray:
    return np.arange(n, dtype=float) - (n - 1) / 2.0


def _check_pose(pose: Pose, geom: ArrayGeometry) -> None:
    if pose.distance <= 0:
        raise DomainError(f"distance must be positive, got {pose.distance}")
    if pose.distance < APERTURE_GUARD * geom.aperture:
        raise DomainError(
            f"distance {pose.distance:.3f} m is inside {APERTURE_GUARD} x aperture "
            f"({geom.aperture:.3f} m)"
        )


def _phase(pose: Pose, geom: ArrayGeometry) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Phase of every steering entry and its partial derivatives.

    Returns:
        Tuple of (n_tx, n_rx) arrays: phase, d phase / d theta, d phase / d distance
    """
    k = 2 * math.pi / geom.wavelength
    theta, dist = pose.angle, pose.distance
    s, c = math.sin(theta), math.cos(theta)
    t = geom.tx_offsets[:, None]
    r = geom.rx_offsets[None, :]

    # A = conj(a_R) * a_T * conj(H) => phase = -phi_T + phi_R + psi
    phi_t = k * (-t * c + t ** 2 * s ** 2 / (2 * dist))
    phi_r = k * (-r * c + r ** 2 * s ** 2 / (2 * dist))
    psi = k * t * r * s ** 2 / dist
    phase = -phi_t + phi_r + psi

    dphi_t = k * (t * s + t ** 2 * s * c / dist)
    dphi_r = k * (r * s + r ** 2 * s * c / dist)
    dpsi = k * t * r * 2 * s * c / dist
    dphase_dtheta = -dphi_t + dphi_r + dpsi

    dphase_ddist = (k * t ** 2 * s ** 2 / (2 * dist ** 2)
                    - k * r ** 2 * s ** 2 / (2 * dist ** 2)
                    - k * t * r * s ** 2 / dist ** 2)
    return phase, dphase_dtheta, dphase_ddist


def steering_matrix(pose: Pose, geom: ArrayGeometry) -> np.ndarray:
    """
    Near-field steering matrix A(theta, d).

    Args:
        pose (Pose): Vehicle pose relative to the array centre
        geom (ArrayGeometry): Array description

    Returns:
        np.ndarray: (n_tx, n_rx) complex matrix with unit-modulus entries
    """
    _check_pose(pose, geom)
    phase, _, _ = _phase(pose, geom)
    return np.exp(1j * phase)


def path_loss_matrix(pose: Pose, geom: ArrayGeometry) -> np.ndarray:
    """
    NUSW path loss Gamma[n_r, n_t] = 1 / sqrt(4 pi phi).

    Args:
        pose (Pose): Vehicle pose
        geom (ArrayGeometry): Array description

    Returns:
        np.ndarray: (n_rx, n_tx) strictly positive matrix

    Raises:
        DomainError: If phi <= 0 for any element pair
    """
    _check_pose(pose, geom)
    offset = geom.tx_offsets[None, :] + geom.rx_offsets[:, None]
    phi = pose.distance ** 2 + offset ** 2 - 2 * pose.distance * offset * math.cos(pose.angle)
    if np.any(phi <= 0):
        raise DomainError("vehicle lies inside the array (phi <= 0)")
    return 1.0 / np.sqrt(4 * math.pi * phi)


def channel_matrix(pose: Pose, geom: ArrayGeometry) -> np.ndarray:
    """Composite channel H = Gamma^T (entrywise) A, shape (n_tx, n_rx)."""
    return path_loss_matrix(pose, geom).T * steering_matrix(pose, geom)


def response_derivatives(pose: Pose, geom: ArrayGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """
    Partial derivatives of B = A A^H with respect to angle and distance.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (dB/dtheta, dB/ddist), both Hermitian (n_tx, n_tx)
    """
    _check_pose(pose, geom)
    phase, dtheta, ddist = _phase(pose, geom)
    a = np.exp(1j * phase)

    def _db(dphase: np.ndarray) -> np.ndarray:
        a_dot = 1j * dphase * a
        half = a_dot @ a.conj().T
        return half + half.conj().T

    return _db(dtheta), _db(ddist)


def realize_channel(pose: Pose, geom: ArrayGeometry) -> ChannelRealization:
    """Evaluate every quantity of one (RSU, vehicle) link in a single pass."""
    a = steering_matrix(pose, geom)
    db_dtheta, db_ddist = response_derivatives(pose, geom)
    return ChannelRealization(
        h=path_loss_matrix(pose, geom).T * a,
        b=a @ a.conj().T,
        db_dtheta=db_dtheta,
        db_ddist=db_ddist,
    )


def rayleigh_distance(aperture: float, carrier_freq: float) -> float:
    """Rayleigh distance 2 D^2 f_c / c in meters."""
    if aperture < 0 or carrier_freq <= 0:
        raise DomainError("aperture must be >= 0 and carrier frequency > 0")
    return 2 * aperture ** 2 * carrier_freq / SPEED_OF_LIGHT
