"""
Link-level metrics: transmit covariance, semantic rate, extraction-ratio bound
and the power / latency accounting of semantic computing and DT modelling.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.constants import PSD_FLOOR_REL
from ..utils.errors import ConfigurationError, DomainError
from .nf_channel import ChannelRealization

logger = logging.getLogger(__name__)

ChannelSet = Mapping[Tuple[int, int], Union[ChannelRealization, np.ndarray]]


@dataclass
class BeamPlan:
    """
    Per-RSU / per-vehicle decision variables of one timeslot.

    comm_cov is indexed (m, k); sense_cov is indexed by RSU because only the
    per-RSU sum of sensing covariances enters any expression.
    """

    comm_cov: np.ndarray          # (M, K, n, n) complex
    sense_cov: np.ndarray         # (M, n, n) complex
    assignment: np.ndarray        # (M, K) int, one 1 per column
    extraction_ratio: np.ndarray  # (M, K)
    cpu_freq: np.ndarray          # (M, K) Hz
    rate_epigraph: np.ndarray     # (M, K) bits/s/Hz
    crb_epigraph: np.ndarray      # (M, K) weighted deg^2 + m^2
    beamformers: Optional[np.ndarray] = None  # (M, K, n) after randomization

    @classmethod
    def empty(cls, assignment: np.ndarray, n_tx: int) -> "BeamPlan":
        m, k = assignment.shape
        return cls(
            comm_cov=np.zeros((m, k, n_tx, n_tx), dtype=complex),
            sense_cov=np.zeros((m, n_tx, n_tx), dtype=complex),
            assignment=np.asarray(assignment, dtype=int).copy(),
            extraction_ratio=np.ones((m, k)),
            cpu_freq=np.zeros((m, k)),
            rate_epigraph=np.zeros((m, k)),
            crb_epigraph=np.zeros((m, k)),
        )

    @property
    def rsu_count(self) -> int:
        return self.assignment.shape[0]

    @property
    def vehicle_count(self) -> int:
        return self.assignment.shape[1]

    def served(self, rsu: int) -> List[int]:
        return [int(k) for k in np.flatnonzero(self.assignment[rsu])]

    def serving_rsu(self, k: int) -> int:
        return int(np.argmax(self.assignment[:, k]))

    def violations(self, rho_lb: float, tol: float = 1e-6) -> List[str]:
        """List every broken invariant; empty when the plan is well formed."""
        problems = []
        if not np.all(self.assignment.sum(axis=0) == 1):
            problems.append("exclusivity: a vehicle is not served by exactly one RSU")
        for m in range(self.rsu_count):
            for name, mat in [(f"sense_cov[{m}]", self.sense_cov[m])] + [
                (f"comm_cov[{m},{k}]", self.comm_cov[m, k]) for k in range(self.vehicle_count)
            ]:
                if not is_psd(mat):
                    problems.append(f"{name} is not PSD")
            for k in self.served(m):
                rho = self.extraction_ratio[m, k]
                if rho < rho_lb - tol or rho > 1 + tol:
                    problems.append(f"extraction ratio {rho:.6f} of ({m},{k}) outside [{rho_lb:.6f}, 1]")
        return problems


@dataclass(frozen=True)
class PowerBreakdown:
    p_comp: float
    p_cs: float
    p_dt: float

    @property
    def total(self) -> float:
        return self.p_comp + self.p_cs + self.p_dt

    def to_dict(self) -> Dict[str, float]:
        return {"p_comp": self.p_comp, "p_cs": self.p_cs, "p_dt": self.p_dt, "total": self.total}


@dataclass(frozen=True)
class SemanticProfile:
    """BLEU-based description of the admissible semantic compression."""

    iota: float
    bleu_floor: float
    gram_weights: Tuple[float, ...] = field(default_factory=tuple)
    precisions: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.gram_weights) != len(self.precisions):
            raise ConfigurationError("gram weights and precisions differ in length")
        if any(w < 0 for w in self.gram_weights):
            raise ConfigurationError("gram weights must be nonnegative")
        if any(not 0 < p <= 1 for p in self.precisions):
            raise ConfigurationError("precisions must lie in (0, 1]")
        if not 0 < self.bleu_floor <= 1:
            raise ConfigurationError("BLEU floor must lie in (0, 1]")


@dataclass(frozen=True)
class WorkloadCoefficients:
    """Linear DT workload model coefficients (cycles per meter / per degree)."""

    nu_dist: float
    nu_angle: float
    offset: float = 0.0


def is_psd(mat: np.ndarray) -> bool:
    """Hermitian PSD test with an eigenvalue floor relative to the trace."""
    herm = (mat + mat.conj().T) / 2
    trace = float(np.real(np.trace(herm)))
    floor = -PSD_FLOOR_REL * max(abs(trace), 1.0)
    return bool(np.min(np.linalg.eigvalsh(herm)) >= floor)


def _h(channel: Union[ChannelRealization, np.ndarray]) -> np.ndarray:
    return channel.h if isinstance(channel, ChannelRealization) else np.asarray(channel)


def signal_covariance(plan: BeamPlan, rsu: int) -> np.ndarray:
    """Transmit covariance R_x = sum_k xi W + R of one RSU."""
    xi = plan.assignment[rsu].astype(float)
    cov = np.tensordot(xi, plan.comm_cov[rsu], axes=(0, 0)) + plan.sense_cov[rsu]
    return (cov + cov.conj().T) / 2


def received_covariances(k: int, channels: ChannelSet, plan: BeamPlan) -> Tuple[np.ndarray, np.ndarray]:
    """
    Desired and total received covariance at vehicle k (before noise).

    Returns:
        Tuple[np.ndarray, np.ndarray]: (signal, total), each (n_rx, n_rx)
    """
    m_serv = plan.serving_rsu(k)
    h_serv = _h(channels[(m_serv, k)])
    signal = h_serv.conj().T @ plan.comm_cov[m_serv, k] @ h_serv
    total = np.zeros_like(signal)
    for m in range(plan.rsu_count):
        h = _h(channels[(m, k)])
        total = total + h.conj().T @ signal_covariance(plan, m) @ h
    return signal, total


def semantic_rate(k: int, channels: ChannelSet, plan: BeamPlan, noise_var: float, iota: float) -> float:
    """
    Semantic transmission rate of vehicle k in bits/s/Hz.

    S = (iota / rho) * log2 det(I + signal (interference + noise)^-1)

    Args:
        k (int): Vehicle index
        channels (ChannelSet): Channel of every (RSU, vehicle) pair
        plan (BeamPlan): Current plan
        noise_var (float): Communication noise variance in Watts
        iota (float): Word-to-bit scalar

    Returns:
        float: Rate, 0 when the serving beamformer is zero
    """
    if noise_var <= 0:
        raise DomainError("noise variance must be positive")
    m_serv = plan.serving_rsu(k)
    rho = plan.extraction_ratio[m_serv, k]
    if rho <= 0:
        raise DomainError(f"extraction ratio must be positive, got {rho}")
    if not np.any(plan.comm_cov[m_serv, k]):
        return 0.0
    signal, total = received_covariances(k, channels, plan)
    n_rx = signal.shape[0]
    eye = noise_var * np.eye(n_rx)
    _, logdet_total = np.linalg.slogdet(eye + total)
    _, logdet_interf = np.linalg.slogdet(eye + total - signal)
    return max(0.0, (iota / rho) * (logdet_total - logdet_interf) / math.log(2))


def extraction_ratio_lower_bound(profile: SemanticProfile) -> float:
    """
    Lower bound rho_LB = 1 / (1 - ln Q + sum_g w_g ln p_g).

    Raises:
        ConfigurationError: When the denominator is below 1 (bound meaningless)
    """
    denominator = 1 - math.log(profile.bleu_floor) + sum(
        w * math.log(p) for w, p in zip(profile.gram_weights, profile.precisions)
    )
    if denominator <= 0:
        raise ConfigurationError(f"extraction-ratio bound denominator {denominator:.4f} is not positive")
    if denominator < 1:
        raise ConfigurationError(f"extraction-ratio bound 1/{denominator:.4f} exceeds 1")
    return 1.0 / denominator


def computing_power(rho: Sequence[float], compute_coeff: float) -> float:
    """Semantic extraction power -F sum ln rho over served vehicles."""
    return float(-compute_coeff * np.sum(np.log(np.asarray(rho, dtype=float))))


def dt_power(freq: float, cycles_per_bit: float, kappa: float) -> float:
    """DT modelling power kappa f^3 C of one task."""
    return kappa * freq ** 3 * cycles_per_bit


def power_breakdown(plan: BeamPlan, rsu: int, compute_coeff: float, kappa: float,
                    cycles_per_bit: Sequence[float]) -> PowerBreakdown:
    """
    Power used by one RSU for extraction, radiation and DT modelling.

    Args:
        plan (BeamPlan): Plan to account
        rsu (int): RSU index
        compute_coeff (float): F in Watts per nat
        kappa (float): Energy-efficiency coefficient
        cycles_per_bit (Sequence[float]): C of every vehicle

    Returns:
        PowerBreakdown: Components and total
    """
    served = plan.served(rsu)
    p_comp = computing_power([plan.extraction_ratio[rsu, k] for k in served], compute_coeff) if served else 0.0
    p_cs = float(np.real(np.trace(signal_covariance(plan, rsu))))
    p_dt = sum(dt_power(plan.cpu_freq[rsu, k], cycles_per_bit[k], kappa) for k in served)
    return PowerBreakdown(p_comp=max(p_comp, 0.0), p_cs=max(p_cs, 0.0), p_dt=float(p_dt))


def draw_workload_offset(variance: float, rng: np.random.Generator) -> float:
    """nu_3 for one slot: zero-mean Gaussian, negative draws clipped to 0."""
    return max(0.0, float(rng.normal(0.0, math.sqrt(variance)))) if variance > 0 else 0.0


def dt_workload(rcrb_dist: float, rcrb_angle_deg: float, nu: WorkloadCoefficients,
                model: str = "linear", base: float = 10.0) -> float:
    """
    Extra DT modelling workload in cycles.

    The linear model is nu_1 * RCRB(d) + nu_2 * RCRB(theta) + nu_3; the
    exponential model replaces each RCRB x with base**x - 1.
    """
    if rcrb_dist < 0 or rcrb_angle_deg < 0:
        raise DomainError("RCRB values must be nonnegative")
    if model == "linear":
        f_dist, f_angle = rcrb_dist, rcrb_angle_deg
    elif model == "exponential":
        f_dist, f_angle = base ** rcrb_dist - 1, base ** rcrb_angle_deg - 1
    else:
        raise ConfigurationError(f"unknown workload model {model!r}")
    return nu.nu_dist * f_dist + nu.nu_angle * f_angle + nu.offset


def dt_latency(cycles_per_bit: float, data_bits: float, freq: float, workload: float) -> float:
    """Processing latency (C D + L) / f in seconds."""
    if freq <= 0:
        raise DomainError(f"CPU frequency must be positive, got {freq}")
    return (cycles_per_bit * data_bits + workload) / freq


def min_cpu_frequency(cycles_per_bit: float, data_bits: float, workload: float, t_max: float) -> float:
    """Smallest CPU frequency meeting the latency bound, (C D + L) / t_max."""
    if t_max <= 0:
        raise DomainError(f"t_max must be positive, got {t_max}")
    return (cycles_per_bit * data_bits + workload) / t_max
