"""
Vehicle state tracking for the digital twin.

State: (angle [rad], distance [m], velocity [m/s], beta). The particle filter
carries complex beta; the Gaussian baselines (filterpy EKF / UKF) carry its
magnitude. Measurements observe (angle, distance, velocity) directly with
additive Gaussian noise.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from filterpy.kalman import ExtendedKalmanFilter, MerweScaledSigmaPoints, UnscentedKalmanFilter
from scipy.special import logsumexp
from scipy.stats import norm

from ..utils.constants import DEG_TO_RAD, RAD_TO_DEG, SPEED_OF_LIGHT, VARIANCE_FLOOR
from ..utils.errors import DomainError

logger = logging.getLogger(__name__)

MIN_DISTANCE = 0.1
# Estimates keep the angle strictly inside (0, pi)
MIN_ANGLE = 1e-6
COV_EIG_FLOOR = 1e-12
# Measurement matrix of the Gaussian filters over (angle, distance, velocity, |beta|)
MEASUREMENT_MATRIX = np.hstack([np.eye(3), np.zeros((3, 1))])
UKF_ALPHA, UKF_BETA, UKF_KAPPA = 1e-3, 2.0, 0.0


@dataclass(frozen=True)
class VehicleState:
    angle: float
    distance: float
    velocity: float
    beta: complex = 0j

    def __post_init__(self):
        if not self.distance > 0:
            raise DomainError(f"distance must be positive, got {self.distance}")
        if not (math.isfinite(self.angle) and math.isfinite(self.velocity)):
            raise DomainError("state entries must be finite")

    def as_vector(self) -> np.ndarray:
        """Real vector (angle, distance, velocity, |beta|)."""
        return np.array([self.angle, self.distance, self.velocity, abs(self.beta)])


@dataclass(frozen=True)
class Measurement:
    angle_meas: float
    dist_meas: float
    vel_meas: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.angle_meas, self.dist_meas, self.vel_meas])


@dataclass(frozen=True)
class NoiseConfig:
    """Process (q1) and measurement (q2) variances with angles in rad^2."""

    q1: Tuple[float, float, float, float]  # angle, distance, velocity, beta
    q2: Tuple[float, float, float]         # angle, distance, velocity

    def __post_init__(self):
        if len(self.q1) != 4 or len(self.q2) != 3:
            raise DomainError("q1 needs 4 variances and q2 needs 3")
        if any(v < 0 for v in (*self.q1, *self.q2)):
            raise DomainError("noise variances must be nonnegative")

    @classmethod
    def from_degrees(cls, q1: Sequence[float], q2: Sequence[float]) -> "NoiseConfig":
        """Build from variances whose angle entries are in deg^2."""
        scale = DEG_TO_RAD ** 2
        return cls(
            q1=(q1[0] * scale, float(q1[1]), float(q1[2]), float(q1[3])),
            q2=(q2[0] * scale, float(q2[1]), float(q2[2])),
        )

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(q1=(0.0, 0.0, 0.0, 0.0), q2=(0.0, 0.0, 0.0))

    @property
    def process_cov(self) -> np.ndarray:
        return np.diag(self.q1)

    @property
    def measurement_cov(self) -> np.ndarray:
        return np.diag(self.q2)


@dataclass
class ParticleBelief:
    states: np.ndarray    # (N, 3) angle, distance, velocity
    beta: np.ndarray      # (N,) complex
    weights: np.ndarray   # (N,)
    collapsed: bool = False

    @property
    def count(self) -> int:
        return self.states.shape[0]

    def mean(self) -> VehicleState:
        est = self.weights @ self.states
        return VehicleState(clamp_angle(float(est[0])), float(est[1]), float(est[2]),
                            complex(self.weights @ self.beta))


@dataclass
class GaussianBelief:
    mean: np.ndarray  # (4,)
    cov: np.ndarray   # (4, 4)

    def estimate(self) -> VehicleState:
        return VehicleState(clamp_angle(float(self.mean[0])), max(float(self.mean[1]), MIN_DISTANCE),
                            float(self.mean[2]), complex(self.mean[3]))


TrackBelief = Union[ParticleBelief, GaussianBelief]


def clamp_angle(angle: float) -> float:
    return min(max(angle, MIN_ANGLE), math.pi - MIN_ANGLE)


def _propagate(angle, dist, vel, beta, dt: float):
    """Noise-free state transition, elementwise over arrays."""
    s, c = np.sin(angle), np.cos(angle)
    step = vel * dt / dist
    return angle + step * s, dist - vel * dt * c, vel, beta * (1 + step * c)


def _complex_noise(variance: float, size, rng: np.random.Generator):
    std = math.sqrt(variance / 2)
    return rng.normal(0.0, std, size) + 1j * rng.normal(0.0, std, size)


def kinematic_step(q: VehicleState, dt: float, noise: NoiseConfig, rng: np.random.Generator) -> VehicleState:
    """
    Advance one slot under the vehicle motion model.

    Args:
        q (VehicleState): Current state
        dt (float): Slot length in seconds
        noise (NoiseConfig): Process noise q1
        rng (np.random.Generator): Random stream

    Returns:
        VehicleState: Next state, distance clamped to MIN_DISTANCE
    """
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    angle, dist, vel, beta = _propagate(q.angle, q.distance, q.velocity, q.beta, dt)
    std = np.sqrt(noise.q1[:3])
    u = rng.normal(0.0, 1.0, 3) * std
    u_beta = complex(_complex_noise(noise.q1[3], None, rng)) if noise.q1[3] > 0 else 0j
    return VehicleState(
        angle=float(angle + u[0]),
        distance=max(float(dist + u[1]), MIN_DISTANCE),
        velocity=float(vel + u[2]),
        beta=complex(beta + u_beta),
    )


def synthesize_measurement(q: VehicleState, noise: NoiseConfig, rng: np.random.Generator) -> Measurement:
    """Matched-filter abstraction: truth plus independent Gaussian errors."""
    z = q.as_vector()[:3] + rng.normal(0.0, 1.0, 3) * np.sqrt(noise.q2)
    return Measurement(float(z[0]), max(float(z[1]), MIN_DISTANCE), float(z[2]))


def range_from_delay(tau: float) -> float:
    """Round-trip delay to distance, c tau / 2."""
    return SPEED_OF_LIGHT * tau / 2


def velocity_from_doppler(mu: float, wavelength: float) -> float:
    return wavelength * mu / 2


def perturbed_prior(truth: VehicleState, noise: NoiseConfig, rng: np.random.Generator) -> VehicleState:
    """Initial filter centre: truth offset by one process-noise draw."""
    u = rng.normal(0.0, 1.0, 3) * np.sqrt(noise.q1[:3])
    u_beta = complex(_complex_noise(noise.q1[3], None, rng)) if noise.q1[3] > 0 else 0j
    return VehicleState(clamp_angle(truth.angle + u[0]), max(truth.distance + u[1], MIN_DISTANCE),
                        truth.velocity + u[2], truth.beta + u_beta)


def particle_belief(center: VehicleState, noise: NoiseConfig, count: int, prior_scale: float,
                    rng: np.random.Generator) -> ParticleBelief:
    """Particles drawn around center with covariance prior_scale * q1, equal weights."""
    if count < 1:
        raise DomainError("particle count must be >= 1")
    std = np.sqrt(prior_scale * np.asarray(noise.q1[:3]))
    states = center.as_vector()[:3] + rng.normal(0.0, 1.0, (count, 3)) * std
    states[:, 1] = np.maximum(states[:, 1], MIN_DISTANCE)
    beta = center.beta + (_complex_noise(prior_scale * noise.q1[3], count, rng) if noise.q1[3] > 0 else 0j)
    beta = np.broadcast_to(np.asarray(beta, dtype=complex), (count,)).copy()
    return ParticleBelief(states=states, beta=beta, weights=np.full(count, 1.0 / count))


def gaussian_belief(center: VehicleState, noise: NoiseConfig, prior_scale: float) -> GaussianBelief:
    return GaussianBelief(mean=center.as_vector(), cov=_condition(prior_scale * noise.process_cov))


def _condition(cov: np.ndarray) -> np.ndarray:
    """Re-symmetrize and floor eigenvalues."""
    sym = (cov + cov.T) / 2
    eig, vec = np.linalg.eigh(sym)
    if eig.min() >= COV_EIG_FLOOR:
        return sym
    return (vec * np.maximum(eig, COV_EIG_FLOOR)) @ vec.T


def particle_filter_step(belief: ParticleBelief, m: Measurement, dt: float, noise: NoiseConfig,
                         rng: np.random.Generator) -> Tuple[ParticleBelief, VehicleState]:
    """
    One predict / weight / resample cycle of the bootstrap particle filter.

    The estimate is the weighted mean before resampling. When every
    likelihood underflows the weights fall back to uniform and the returned
    belief carries collapsed=True.

    Args:
        belief (ParticleBelief): Prior particles
        m (Measurement): Current measurement
        dt (float): Slot length in seconds
        noise (NoiseConfig): Process and measurement variances
        rng (np.random.Generator): Random stream

    Returns:
        Tuple[ParticleBelief, VehicleState]: Resampled belief and estimate
    """
    n = belief.count
    x = belief.states
    angle, dist, vel, beta = _propagate(x[:, 0], x[:, 1], x[:, 2], belief.beta, dt)
    states = np.column_stack([angle, dist, vel]) + rng.normal(0.0, 1.0, (n, 3)) * np.sqrt(noise.q1[:3])
    states[:, 1] = np.maximum(states[:, 1], MIN_DISTANCE)
    if noise.q1[3] > 0:
        beta = beta + _complex_noise(noise.q1[3], n, rng)

    scale = np.sqrt(np.maximum(np.asarray(noise.q2), VARIANCE_FLOOR))
    log_lik = norm.logpdf(m.as_vector()[None, :], loc=states, scale=scale).sum(axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(belief.weights) + log_lik

    collapsed = False
    total = logsumexp(log_w)
    if not np.isfinite(total):
        logger.warning("Particle weights collapsed, resetting to uniform")
        weights = np.full(n, 1.0 / n)
        collapsed = True
    else:
        weights = np.exp(log_w - total)
        weights /= weights.sum()

    estimate = ParticleBelief(states, beta, weights).mean()
    idx = rng.choice(n, size=n, p=weights)
    resampled = ParticleBelief(states=states[idx], beta=np.asarray(beta)[idx],
                               weights=np.full(n, 1.0 / n), collapsed=collapsed)
    return resampled, estimate


def transition(x: np.ndarray, dt: float) -> np.ndarray:
    """Gaussian-filter state transition over (angle, distance, velocity, |beta|)."""
    angle, dist, vel, beta = _propagate(x[0], x[1], x[2], x[3], dt)
    return np.array([angle, max(dist, MIN_DISTANCE), vel, beta], dtype=float)


def transition_jacobian(x: np.ndarray, dt: float) -> np.ndarray:
    """Analytic Jacobian of transition at x."""
    angle, dist, vel, beta = (float(v) for v in x[:4])
    s, c = math.sin(angle), math.cos(angle)
    return np.array([
        [1 + vel * dt * c / dist, -vel * dt * s / dist ** 2, dt * s / dist, 0.0],
        [vel * dt * s, 1.0, -dt * c, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [-beta * vel * dt * s / dist, -beta * vel * dt * c / dist ** 2, beta * dt * c / dist,
         1 + vel * dt * c / dist],
    ])


def measure(x: np.ndarray) -> np.ndarray:
    return MEASUREMENT_MATRIX @ np.asarray(x).reshape(-1)


class KinematicEKF(ExtendedKalmanFilter):
    """EKF whose prediction runs the nonlinear motion model."""

    def __init__(self, dt: float):
        super().__init__(dim_x=4, dim_z=3)
        self.dt = dt

    def predict_x(self, u=0):
        self.F = transition_jacobian(self.x.ravel(), self.dt)
        self.x = transition(self.x.ravel(), self.dt).reshape(-1, 1)


def ekf_step(belief: GaussianBelief, m: Measurement, dt: float,
             noise: NoiseConfig) -> Tuple[GaussianBelief, VehicleState]:
    """Extended Kalman predict/update; the covariance is re-conditioned afterwards."""
    ekf = KinematicEKF(dt)
    ekf.x = belief.mean.reshape(-1, 1).astype(float)
    ekf.P = _condition(belief.cov)
    ekf.Q = noise.process_cov
    ekf.R = noise.measurement_cov
    ekf.predict()
    ekf.update(m.as_vector().reshape(-1, 1), HJacobian=lambda _x: MEASUREMENT_MATRIX,
               Hx=lambda x: MEASUREMENT_MATRIX @ x)
    post = GaussianBelief(mean=ekf.x.ravel().copy(), cov=_condition(ekf.P))
    return post, post.estimate()


def sigma_points() -> MerweScaledSigmaPoints:
    return MerweScaledSigmaPoints(4, alpha=UKF_ALPHA, beta=UKF_BETA, kappa=UKF_KAPPA)


def ukf_step(belief: GaussianBelief, m: Measurement, dt: float,
             noise: NoiseConfig) -> Tuple[GaussianBelief, VehicleState]:
    """Unscented Kalman predict/update with Merwe scaled sigma points."""
    ukf = UnscentedKalmanFilter(dim_x=4, dim_z=3, dt=dt, hx=measure, fx=transition, points=sigma_points())
    ukf.x = belief.mean.astype(float).copy()
    ukf.P = _condition(belief.cov)
    ukf.Q = noise.process_cov
    ukf.R = noise.measurement_cov
    ukf.predict()
    ukf.P = _condition(ukf.P)
    ukf.update(m.as_vector())
    post = GaussianBelief(mean=ukf.x.copy(), cov=_condition(ukf.P))
    return post, post.estimate()


GAUSSIAN_FILTERS = {"ekf": ekf_step, "ukf": ukf_step}


def dt_position(state: VehicleState, rsu_xy: Tuple[float, float]) -> Tuple[float, float]:
    """Cartesian DT position of a vehicle seen from an RSU."""
    return (rsu_xy[0] + state.distance * math.cos(state.angle),
            rsu_xy[1] + state.distance * math.sin(state.angle))


@dataclass
class TrackingMetrics:
    rmse_angle_deg: float
    rmse_dist: float
    rmse_vel: float
    rmse_x: float
    rmse_y: float
    rmse_x_per_slot: List[float] = field(default_factory=list)
    rmse_y_per_slot: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "rmse_angle_deg": self.rmse_angle_deg,
            "rmse_dist_m": self.rmse_dist,
            "rmse_vel_mps": self.rmse_vel,
            "rmse_x_m": self.rmse_x,
            "rmse_y_m": self.rmse_y,
            "rmse_x_per_slot": self.rmse_x_per_slot,
            "rmse_y_per_slot": self.rmse_y_per_slot,
        }


def _as_grid(states) -> List[List[VehicleState]]:
    if len(states) and isinstance(states[0], VehicleState):
        return [[s] for s in states]
    return [list(row) for row in states]


def tracking_metrics(estimates: Sequence, truths: Sequence,
                     rsu_pose: Union[Tuple[float, float], np.ndarray] = (0.0, 0.0)) -> TrackingMetrics:
    """
    RMSE of every tracked quantity and of the DT Cartesian position.

    Args:
        estimates: Sequence of VehicleState (one track) or slots x tracks grid
        truths: Same shape as estimates
        rsu_pose: RSU (x, y), or an array broadcastable to (slots, tracks, 2)

    Returns:
        TrackingMetrics: Overall RMSEs plus per-slot X/Y RMSE over tracks

    Raises:
        DomainError: On shape mismatch or empty input
    """
    est, tru = _as_grid(estimates), _as_grid(truths)
    if len(est) != len(tru) or any(len(a) != len(b) for a, b in zip(est, tru)):
        raise DomainError("estimates and truths are not aligned")
    if not est or not est[0]:
        raise DomainError("no samples to score")

    e = np.array([[s.as_vector()[:3] for s in row] for row in est])
    t = np.array([[s.as_vector()[:3] for s in row] for row in tru])
    rsu = np.broadcast_to(np.asarray(rsu_pose, dtype=float), e.shape[:2] + (2,))

    def _xy(a):
        return np.stack([rsu[..., 0] + a[..., 1] * np.cos(a[..., 0]),
                         rsu[..., 1] + a[..., 1] * np.sin(a[..., 0])], axis=-1)

    err = e - t
    err[..., 0] *= RAD_TO_DEG
    xy_err = _xy(e) - _xy(t)
    rmse = np.sqrt(np.mean(err ** 2, axis=(0, 1)))
    xy_rmse = np.sqrt(np.mean(xy_err ** 2, axis=(0, 1)))
    per_slot = np.sqrt(np.mean(xy_err ** 2, axis=1))
    return TrackingMetrics(
        rmse_angle_deg=float(rmse[0]),
        rmse_dist=float(rmse[1]),
        rmse_vel=float(rmse[2]),
        rmse_x=float(xy_rmse[0]),
        rmse_y=float(xy_rmse[1]),
        rmse_x_per_slot=per_slot[:, 0].tolist(),
        rmse_y_per_slot=per_slot[:, 1].tolist(),
    )


def predicted_state(belief: TrackBelief, dt: float) -> VehicleState:
    """Noise-free one-slot prediction of the belief mean, used for planning."""
    if isinstance(belief, GaussianBelief):
        x = transition(belief.mean, dt)
        return VehicleState(clamp_angle(float(x[0])), max(float(x[1]), MIN_DISTANCE), float(x[2]), complex(x[3]))
    s = belief.states
    angle, dist, vel, beta = _propagate(s[:, 0], s[:, 1], s[:, 2], belief.beta, dt)
    w = belief.weights
    return VehicleState(clamp_angle(float(w @ angle)), max(float(w @ dist), MIN_DISTANCE),
                        float(w @ vel), complex(w @ beta))
