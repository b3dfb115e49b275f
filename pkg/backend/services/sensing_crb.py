"""
Fisher information and Cramer-Rao bounds for (distance, angle) sensing.

Parameter order is (distance, angle) for the J11 block and (Re beta, Im beta)
for the J22 block. Every block is linear in the transmit covariance R_x, which
is what lets the convex engine turn CRB bounds into LMIs.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..utils.constants import RAD_TO_DEG
from .nf_channel import ArrayGeometry, Pose, realize_channel, ChannelRealization

logger = logging.getLogger(__name__)

# Schur complements whose smallest eigenvalue falls below this fraction of the
# largest are treated as singular
SINGULAR_RATIO = 1e-14


@dataclass(frozen=True)
class FisherBlocks:
    j11: np.ndarray  # (2, 2) distance/angle
    j12: np.ndarray  # (2, 2) rows (distance, angle), columns (Re beta, Im beta)
    j22: np.ndarray  # (2, 2) = c I
    t_obs: int
    noise_var: float
    beta: complex

    def full(self) -> np.ndarray:
        return np.block([[self.j11, self.j12], [self.j12.T, self.j22]])

    def scaled(self, factor: float) -> "FisherBlocks":
        return FisherBlocks(self.j11 * factor, self.j12 * factor, self.j22 * factor,
                            self.t_obs, self.noise_var, self.beta)


@dataclass(frozen=True)
class CrbReport:
    crb_dist: float   # m^2
    crb_angle: float  # rad^2

    @property
    def crb_angle_deg2(self) -> float:
        return self.crb_angle * RAD_TO_DEG ** 2

    @property
    def rcrb_dist(self) -> float:
        return math.sqrt(self.crb_dist)

    @property
    def rcrb_angle(self) -> float:
        """Root CRB of the angle in degrees."""
        return math.sqrt(self.crb_angle) * RAD_TO_DEG

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.crb_dist) and math.isfinite(self.crb_angle)

    def weighted_trace(self, w_dist: float = 1.0, w_angle: float = 1.0) -> float:
        """w_d CRB(d) [m^2] + w_theta CRB(theta) [deg^2]."""
        return w_dist * self.crb_dist + w_angle * self.crb_angle_deg2

    def to_dict(self) -> dict:
        return {
            "crb_dist_m2": self.crb_dist,
            "crb_angle_deg2": self.crb_angle_deg2,
            "rcrb_dist_m": self.rcrb_dist,
            "rcrb_angle_deg": self.rcrb_angle,
        }


UNBOUNDED = CrbReport(math.inf, math.inf)


def _herm(mat: np.ndarray) -> np.ndarray:
    return (mat + mat.conj().T) / 2


@dataclass(frozen=True)
class FimCoefficients:
    """
    Hermitian coefficient matrices G with J_ab = Re Tr(G_ab R_x).

    Pre-factors 2T|beta|^2/sigma^2 and 2T/sigma^2 are folded in.
    """

    j11: np.ndarray  # (2, 2, n, n)
    j12: np.ndarray  # (2, 2, n, n)
    j22: np.ndarray  # (n, n); J22 = Re Tr(j22 R_x) * I
    t_obs: int
    noise_var: float
    beta: complex

    def contract(self, r_x: np.ndarray) -> FisherBlocks:
        """Evaluate the Fisher blocks at a transmit covariance."""
        def _tr(g: np.ndarray) -> float:
            return float(np.real(np.sum(g * r_x.T)))

        j11 = np.array([[_tr(self.j11[a, b]) for b in range(2)] for a in range(2)])
        j12 = np.array([[_tr(self.j12[a, c]) for c in range(2)] for a in range(2)])
        j22 = _tr(self.j22) * np.eye(2)
        return FisherBlocks(j11, j12, j22, self.t_obs, self.noise_var, self.beta)


def _response(pose: Pose, geom: ArrayGeometry, channel: Optional[ChannelRealization]) -> ChannelRealization:
    return channel if channel is not None else realize_channel(pose, geom)


def fim_coefficients(pose: Pose, beta: complex, t_obs: int, noise_var: float, geom: ArrayGeometry,
                     channel: Optional[ChannelRealization] = None) -> FimCoefficients:
    """
    Coefficient form of the FIM for use inside the conic program.

    Args:
        pose (Pose): Vehicle pose
        beta (complex): Reflection coefficient
        t_obs (int): Samples per slot T
        noise_var (float): Sensing noise variance
        geom (ArrayGeometry): Array description
        channel (Optional[ChannelRealization]): Precomputed response for the pose

    Returns:
        FimCoefficients: Hermitian coefficient matrices
    """
    ch = _response(pose, geom, channel)
    derivs = [ch.db_ddist, ch.db_dtheta]
    scale = 2 * t_obs / noise_var
    n = ch.b.shape[0]

    j11 = np.empty((2, 2, n, n), dtype=complex)
    j12 = np.empty((2, 2, n, n), dtype=complex)
    for a in range(2):
        for b in range(2):
            j11[a, b] = scale * abs(beta) ** 2 * _herm(derivs[a].conj().T @ derivs[b])
        cross = np.conj(beta) * derivs[a].conj().T @ ch.b
        j12[a, 0] = scale * _herm(cross)
        j12[a, 1] = scale * _herm(-1j * cross)
    j22 = scale * _herm(ch.b.conj().T @ ch.b)
    return FimCoefficients(j11, j12, j22, t_obs, noise_var, beta)


def fim(pose: Pose, beta: complex, r_x: np.ndarray, t_obs: int, noise_var: float, geom: ArrayGeometry,
        channel: Optional[ChannelRealization] = None) -> FisherBlocks:
    """
    Fisher information blocks J_ab = (2T|beta|^2/sigma^2) Re Tr(dB_b R_x dB_a^H).

    Args:
        pose (Pose): Vehicle pose
        beta (complex): Reflection coefficient
        r_x (np.ndarray): Transmit covariance (n_tx, n_tx)
        t_obs (int): Samples per slot T
        noise_var (float): Sensing noise variance
        geom (ArrayGeometry): Array description
        channel (Optional[ChannelRealization]): Precomputed response for the pose

    Returns:
        FisherBlocks: Real blocks, linear in r_x
    """
    ch = _response(pose, geom, channel)
    derivs = [ch.db_ddist, ch.db_dtheta]
    scale = 2 * t_obs / noise_var

    j11 = np.empty((2, 2))
    j12 = np.empty((2, 2))
    for a in range(2):
        for b in range(2):
            j11[a, b] = scale * abs(beta) ** 2 * np.real(np.trace(derivs[b] @ r_x @ derivs[a].conj().T))
        c = np.conj(beta) * np.trace(ch.b @ r_x @ derivs[a].conj().T)
        j12[a] = scale * np.array([np.real(c), np.imag(c)])
    j22 = scale * np.real(np.trace(ch.b @ r_x @ ch.b.conj().T)) * np.eye(2)
    return FisherBlocks(j11, j12, j22, t_obs, noise_var, beta)


def schur_complement(blocks: FisherBlocks) -> Optional[np.ndarray]:
    """J11 - J12 J22^-1 J12^T, or None when J22 is singular but J12 is not zero."""
    c = blocks.j22[0, 0]
    if c > 0:
        return blocks.j11 - blocks.j12 @ blocks.j12.T / c
    if np.any(blocks.j12):
        return None
    return blocks.j11


def crb_from_fim(blocks: FisherBlocks) -> CrbReport:
    """
    CRBs of distance and angle from the Schur complement of the FIM.

    Returns:
        CrbReport: Bounds, or the UNBOUNDED sentinel for an unobservable geometry
    """
    s = schur_complement(blocks)
    if s is None:
        return UNBOUNDED
    s = (s + s.T) / 2
    eig = np.linalg.eigvalsh(s)
    if eig[-1] <= 0 or eig[0] <= SINGULAR_RATIO * eig[-1]:
        return UNBOUNDED
    inv = np.linalg.inv(s)
    return CrbReport(crb_dist=float(inv[0, 0]), crb_angle=float(inv[1, 1]))


def unit_scaling(w_dist: float = 1.0, w_angle: float = 1.0) -> np.ndarray:
    """
    Diagonal T such that CRB in transformed units is T CRB T^T.

    Maps (m, rad) to weighted (m, deg) so that trace(T CRB T) = w_d CRB_d + w_a CRB_deg2.
    """
    return np.diag([math.sqrt(w_dist), math.sqrt(w_angle) * RAD_TO_DEG])
