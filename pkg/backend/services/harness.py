"""
Scenario generation, the closed sensing / planning / tracking loop of one
timeslot, Monte-Carlo experiments and their reports.

Every run is a pure function of (config, method, seed): randomness comes from
four independent streams spawned from the seed, and only the planner stream
depends on the method, so compared methods see identical scenarios and noise.
"""

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from ..agents import get_agent
from ..agents.base_agent import BaseAgent
from ..utils.config import ScenarioConfig, build_config
from ..utils.constants import FEASIBILITY_TOL, RAD_TO_DEG, REFERENCE_DATA_BITS
from ..utils.errors import ConfigurationError, InfeasibleError, ISCSCError, PlacementError
from .convex_engine import SubproblemParams
from .link_metrics import (
    BeamPlan, SemanticProfile, WorkloadCoefficients, draw_workload_offset, dt_latency, dt_power, dt_workload,
    extraction_ratio_lower_bound, power_breakdown, semantic_rate,
)
from .nf_channel import APERTURE_GUARD, ArrayGeometry, Pose, realize_channel
from .planner import SlotProblem, greedy_assign, pair_crb
from .tracking import (
    GAUSSIAN_FILTERS, NoiseConfig, ParticleBelief, VehicleState, gaussian_belief, kinematic_step,
    dt_position, particle_belief, particle_filter_step, perturbed_prior, predicted_state,
    synthesize_measurement, tracking_metrics,
)

logger = logging.getLogger(__name__)

STREAMS = ("scenario", "noise", "filter", "planner")
MAX_PLACEMENT_REJECTIONS = 10_000
ANGLE_MARGIN = 1e-3
SWEEP_PARAMETERS = ("K", "t_max", "f")

REPORT_COLUMNS = [
    "method", "parameter", "point", "seed", "data_bits", "workload_model",
    "mean_rate", "mean_rcrb_dist_m", "mean_rcrb_angle_deg",
    "rmse_angle_deg", "rmse_dist_m", "rmse_vel_mps", "rmse_x_m", "rmse_y_m",
    "mean_power_w", "f_min_hz", "p_dt_w", "latency_feasible", "degraded_slots", "slots",
]
METRIC_COLUMNS = [
    "mean_rate", "mean_rcrb_dist_m", "mean_rcrb_angle_deg", "rmse_angle_deg", "rmse_dist_m",
    "rmse_vel_mps", "rmse_x_m", "rmse_y_m", "mean_power_w", "f_min_hz", "p_dt_w",
]


def rng_streams(seed: int) -> Dict[str, np.random.Generator]:
    """Independent generators for scenario, noise, filter and planner draws."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


def geometry_from_config(config: ScenarioConfig, n_rx: Optional[int] = None) -> ArrayGeometry:
    return ArrayGeometry.with_spacing(config.n_tx, n_rx or config.n_rx, config.carrier_freq_hz,
                                      config.element_spacing_m)


def noise_from_config(config: ScenarioConfig) -> NoiseConfig:
    return NoiseConfig.from_degrees(
        [config.q1_angle_var_deg2, config.q1_dist_var_m2, config.q1_vel_var_m2ps2, config.q1_beta_var],
        [config.q2_angle_var_deg2, config.q2_dist_var_m2, config.q2_vel_var_m2ps2],
    )


def profile_from_config(config: ScenarioConfig) -> SemanticProfile:
    return SemanticProfile(config.iota, config.bleu_floor, tuple(config.gram_weights), tuple(config.gram_precisions))


@dataclass
class Scenario:
    """Road layout and the vehicles' constant-velocity motion along -x."""

    rsu_xy: np.ndarray          # (M, 2)
    start_xy: np.ndarray        # (K, 2)
    speed: np.ndarray           # (K,)
    beta_phase: np.ndarray      # (K,)
    cycles_per_bit: np.ndarray  # (K,)
    data_bits: np.ndarray       # (K,)
    vehicle_length: float
    vehicle_width: float
    beta_ref: float
    beta_ref_distance: float

    @property
    def rsu_count(self) -> int:
        return self.rsu_xy.shape[0]

    @property
    def vehicle_count(self) -> int:
        return self.start_xy.shape[0]

    def positions(self, t: float) -> np.ndarray:
        return self.start_xy - np.column_stack([self.speed * t, np.zeros_like(self.speed)])

    def truth(self, m: int, k: int, t: float) -> VehicleState:
        """State of vehicle k seen from RSU m at time t."""
        dx, dy = self.positions(t)[k] - self.rsu_xy[m]
        dist = math.hypot(dx, dy)
        beta = self.beta_ref * self.beta_ref_distance / dist * np.exp(1j * self.beta_phase[k])
        return VehicleState(math.atan2(dy, dx), dist, float(self.speed[k]), complex(beta))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rsu_xy": self.rsu_xy.tolist(),
            "start_xy": self.start_xy.tolist(),
            "speed_mps": self.speed.tolist(),
            "cycles_per_bit": self.cycles_per_bit.tolist(),
            "data_bits": self.data_bits.tolist(),
            "vehicle_footprint_m": [self.vehicle_length, self.vehicle_width],
        }


def generate_scenario(config: ScenarioConfig, rng: np.random.Generator) -> Scenario:
    """
    Place vehicles uniformly on random lanes, rejecting any draw closer than
    min_gap_m to an already placed vehicle.

    Raises:
        PlacementError: After MAX_PLACEMENT_REJECTIONS rejected draws
    """
    lanes = config.lane_centers_m
    placed: List[Tuple[float, float]] = []
    rejections = 0
    while len(placed) < config.vehicle_count:
        x = float(rng.uniform(0.0, config.road_length_m))
        y = lanes[int(rng.integers(len(lanes)))]
        if all(math.hypot(x - px, y - py) >= config.min_gap_m for px, py in placed):
            placed.append((x, y))
            continue
        rejections += 1
        if rejections >= MAX_PLACEMENT_REJECTIONS:
            raise PlacementError(
                f"placed {len(placed)} of {config.vehicle_count} vehicles before {rejections} rejections",
                detail={"placed": len(placed), "rejections": rejections},
            )
    k = config.vehicle_count
    return Scenario(
        rsu_xy=np.array([[x, -config.rsu_offset_m] for x in config.rsu_x_m]),
        start_xy=np.array(placed),
        speed=rng.uniform(config.speed_min_mps, config.speed_max_mps, k),
        beta_phase=rng.uniform(0.0, 2 * math.pi, k),
        cycles_per_bit=rng.uniform(config.cycles_per_bit_min, config.cycles_per_bit_max, k),
        data_bits=rng.uniform(config.data_bits_min, config.data_bits_max, k),
        vehicle_length=config.vehicle_length_m,
        vehicle_width=config.vehicle_width_m,
        beta_ref=config.beta_ref_amplitude,
        beta_ref_distance=config.beta_ref_distance_m,
    )


@dataclass
class SlotRecord:
    """Everything measured in one slot; per-vehicle lists are indexed by k."""

    slot: int
    method: str
    seed: int
    degraded: bool = False
    degraded_reason: str = ""
    assignment: List[int] = field(default_factory=list)
    semantic_rate: List[float] = field(default_factory=list)
    rcrb_dist_m: List[float] = field(default_factory=list)
    rcrb_angle_deg: List[float] = field(default_factory=list)
    extraction_ratio: List[float] = field(default_factory=list)
    cpu_freq_hz: List[float] = field(default_factory=list)
    workload_cycles: List[float] = field(default_factory=list)
    latency_s: List[float] = field(default_factory=list)
    power: List[Dict[str, float]] = field(default_factory=list)
    est_angle_deg: List[float] = field(default_factory=list)
    est_dist_m: List[float] = field(default_factory=list)
    est_vel_mps: List[float] = field(default_factory=list)
    err_angle_deg: List[float] = field(default_factory=list)
    err_dist_m: List[float] = field(default_factory=list)
    err_vel_mps: List[float] = field(default_factory=list)
    dt_x_err_m: List[float] = field(default_factory=list)
    dt_y_err_m: List[float] = field(default_factory=list)
    pf_collapsed: List[bool] = field(default_factory=list)
    ao_iterations: int = 0
    ao_reason: str = ""
    ao_objectives: List[float] = field(default_factory=list)
    # Wall clock; left out of serialized records unless asked for
    plan_time_s: float = 0.0

    def to_dict(self, include_timing: bool = False) -> Dict[str, Any]:
        data = asdict(self)
        if not include_timing:
            data.pop("plan_time_s")
        return data

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SlotRecord":
        return cls(**data)


@dataclass
class SimulationState:
    config: ScenarioConfig
    scenario: Scenario
    geometry: ArrayGeometry
    noise: NoiseConfig
    beliefs: Dict[Tuple[int, int], ParticleBelief]
    prev_rcrb: np.ndarray  # (K, 2) distance [m], angle [deg]
    streams: Dict[str, np.random.Generator]
    seed: int
    slot: int = 0


def init_simulation(config: ScenarioConfig, seed: int, n_rx: Optional[int] = None) -> SimulationState:
    """Draw the scenario and the initial particle beliefs of every (RSU, vehicle) frame."""
    streams = rng_streams(seed)
    scenario = generate_scenario(config, streams["scenario"])
    noise = noise_from_config(config)
    beliefs = {}
    for m in range(scenario.rsu_count):
        for k in range(scenario.vehicle_count):
            center = perturbed_prior(scenario.truth(m, k, 0.0), noise, streams["filter"])
            beliefs[(m, k)] = particle_belief(center, noise, config.particle_count, config.prior_cov_scale,
                                              streams["filter"])
    return SimulationState(
        config=config,
        scenario=scenario,
        geometry=geometry_from_config(config, n_rx),
        noise=noise,
        beliefs=beliefs,
        prev_rcrb=np.zeros((scenario.vehicle_count, 2)),
        streams=streams,
        seed=seed,
    )


def _planning_pose(state: VehicleState, geom: ArrayGeometry) -> Pose:
    angle = min(max(state.angle, ANGLE_MARGIN), math.pi - ANGLE_MARGIN)
    dist = max(state.distance, APERTURE_GUARD * geom.aperture * (1 + 1e-9), 1e-3)
    return Pose(angle, dist)


def _xy(state: VehicleState, rsu: np.ndarray) -> np.ndarray:
    return np.array(dt_position(state, tuple(rsu)))


def run_timeslot(state: SimulationState, agent: BaseAgent) -> SlotRecord:
    """
    One slot of the closed loop: predict, plan on predicted poses, sense the
    true vehicles, update the particle filters and account the outcome.

    Args:
        state (SimulationState): Mutable run state, advanced by one slot
        agent (BaseAgent): Assignment method

    Returns:
        SlotRecord: The slot's measurements; infeasible slots are flagged degraded
    """
    cfg, sc, geom = state.config, state.scenario, state.geometry
    dt = cfg.slot_length_s
    state.slot += 1
    t = state.slot * dt
    m_count, k_count = sc.rsu_count, sc.vehicle_count
    record = SlotRecord(slot=state.slot, method=agent.agent_name, seed=state.seed)

    # Predict and build the planning inputs
    predicted = {key: predicted_state(b, dt) for key, b in state.beliefs.items()}
    channels, betas = {}, np.zeros((m_count, k_count))
    for (m, k), pred in predicted.items():
        pose = _planning_pose(pred, geom)
        channels[(m, k)] = realize_channel(pose, geom)
        betas[m, k] = sc.beta_ref * sc.beta_ref_distance / pose.distance
    vehicle_xy = np.array([
        np.mean([_xy(predicted[(m, k)], sc.rsu_xy[m]) for m in range(m_count)], axis=0) for k in range(k_count)
    ])

    nu = [WorkloadCoefficients(cfg.nu_dist_hz_per_m, cfg.nu_angle_hz_per_deg,
                               draw_workload_offset(cfg.nu_offset_var, state.streams["noise"]))
          for _ in range(k_count)]
    workloads = np.array([
        dt_workload(state.prev_rcrb[k, 0], state.prev_rcrb[k, 1], nu[k], cfg.workload_model, cfg.workload_exp_base)
        for k in range(k_count)
    ])
    params = SubproblemParams.from_config(cfg)
    problem = SlotProblem(
        channels=channels, betas=betas, cycles_per_bit=sc.cycles_per_bit, data_bits=sc.data_bits,
        workloads=workloads, vehicle_xy=vehicle_xy, rsu_xy=sc.rsu_xy,
        rho_lb=extraction_ratio_lower_bound(profile_from_config(cfg)), params=params,
        t_max=cfg.t_max_s, f_max=cfg.f_max_hz,
    )

    # Plan
    start = time.perf_counter()
    outcome = None
    try:
        outcome = agent.plan_slot(problem, state.streams["planner"])
    except InfeasibleError as e:
        record.degraded, record.degraded_reason = True, e.reason
        logger.warning(f"Slot {state.slot} ({agent.agent_name}, seed {state.seed}) degraded: {str(e)}")
    record.plan_time_s = time.perf_counter() - start

    # Sense the true vehicles and update every frame's filter
    truths = {(m, k): sc.truth(m, k, t) for m in range(m_count) for k in range(k_count)}
    estimates, collapsed = {}, {}
    for key in sorted(state.beliefs):
        meas = synthesize_measurement(truths[key], state.noise, state.streams["noise"])
        belief, est = particle_filter_step(state.beliefs[key], meas, dt, state.noise, state.streams["filter"])
        state.beliefs[key] = belief
        estimates[key] = est
        collapsed[key] = belief.collapsed

    serving = list(outcome.assignment.serving) if outcome else list(greedy_assign(vehicle_xy, sc.rsu_xy).serving)
    record.assignment = serving
    record.workload_cycles = workloads.tolist()

    if outcome is not None:
        _account_plan(record, state, outcome, truths, problem)

    for k, m in enumerate(serving):
        est, tru = estimates[(m, k)], truths[(m, k)]
        record.est_angle_deg.append(est.angle * RAD_TO_DEG)
        record.est_dist_m.append(est.distance)
        record.est_vel_mps.append(est.velocity)
        record.err_angle_deg.append((est.angle - tru.angle) * RAD_TO_DEG)
        record.err_dist_m.append(est.distance - tru.distance)
        record.err_vel_mps.append(est.velocity - tru.velocity)
        exy, txy = _xy(est, sc.rsu_xy[m]), _xy(tru, sc.rsu_xy[m])
        record.dt_x_err_m.append(float(exy[0] - txy[0]))
        record.dt_y_err_m.append(float(exy[1] - txy[1]))
        record.pf_collapsed.append(bool(collapsed[(m, k)]))
    return record


def _account_plan(record: SlotRecord, state: SimulationState, outcome, truths, problem: SlotProblem) -> None:
    """Evaluate the deployed plan on the true channels and audit the constraints."""
    cfg, sc, geom = state.config, state.scenario, state.geometry
    plan, params = outcome.plan, problem.params
    true_channels = {key: realize_channel(_planning_pose(s, geom), geom) for key, s in truths.items()}
    true_betas = np.array([[abs(truths[(m, k)].beta) for k in range(sc.vehicle_count)]
                           for m in range(sc.rsu_count)])
    true_problem = replace(problem, channels=true_channels, betas=true_betas)

    for k in range(sc.vehicle_count):
        m = plan.serving_rsu(k)
        record.semantic_rate.append(semantic_rate(k, true_channels, plan, params.noise_comm, params.iota))
        crb = pair_crb(plan, true_problem, k)
        record.rcrb_dist_m.append(crb.rcrb_dist)
        record.rcrb_angle_deg.append(crb.rcrb_angle)
        record.extraction_ratio.append(float(plan.extraction_ratio[m, k]))
        freq = float(plan.cpu_freq[m, k])
        record.cpu_freq_hz.append(freq)
        record.latency_s.append(dt_latency(sc.cycles_per_bit[k], sc.data_bits[k], freq, record.workload_cycles[k]))
        if crb.bounded:
            state.prev_rcrb[k] = [crb.rcrb_dist, crb.rcrb_angle]

    for m in range(sc.rsu_count):
        record.power.append(power_breakdown(plan, m, params.compute_coeff, params.kappa, sc.cycles_per_bit).to_dict())
    record.ao_iterations = outcome.trace.iterations
    record.ao_reason = outcome.trace.reason
    record.ao_objectives = list(outcome.trace.objectives)

    reasons = audit_plan(plan, problem)
    if any(p["total"] > params.tx_power * (1 + FEASIBILITY_TOL) for p in record.power):
        reasons.append("power")
    if any(lat > cfg.t_max_s * (1 + FEASIBILITY_TOL) for lat in record.latency_s):
        reasons.append("latency")
    if reasons:
        record.degraded = True
        record.degraded_reason = ",".join(reasons)
        logger.warning(f"Slot {record.slot} violates the {record.degraded_reason} constraint")


def audit_plan(plan: BeamPlan, problem: SlotProblem) -> List[str]:
    """Structural constraint violations of a deployed plan, one reason per kind."""
    reasons = []
    for text in plan.violations(problem.rho_lb, FEASIBILITY_TOL):
        if text.startswith("exclusivity"):
            reason = "exclusivity"
        elif text.startswith("extraction ratio"):
            reason = "extraction_ratio"
        else:
            reason = "psd"
        if reason not in reasons:
            reasons.append(reason)
    if np.any(plan.cpu_freq.sum(axis=1) > problem.f_max * (1 + FEASIBILITY_TOL)):
        reasons.append("frequency")
    return reasons


def summarize_records(records: Sequence[SlotRecord]) -> Dict[str, float]:
    """Per-run averages: link metrics over non-degraded slots, tracking errors over every slot."""
    ok = [r for r in records if not r.degraded]
    rates = [v for r in ok for v in r.semantic_rate]
    rcrb_d = [v for r in ok for v in r.rcrb_dist_m if math.isfinite(v)]
    rcrb_a = [v for r in ok for v in r.rcrb_angle_deg if math.isfinite(v)]
    power = [p["total"] for r in ok for p in r.power]

    def rms(name: str) -> float:
        vals = np.array([v for r in records for v in getattr(r, name)], dtype=float)
        return float(np.sqrt(np.mean(vals ** 2))) if vals.size else math.nan

    return {
        "mean_rate": float(np.mean(rates)) if rates else math.nan,
        "mean_rcrb_dist_m": float(np.mean(rcrb_d)) if rcrb_d else math.nan,
        "mean_rcrb_angle_deg": float(np.mean(rcrb_a)) if rcrb_a else math.nan,
        "rmse_angle_deg": rms("err_angle_deg"),
        "rmse_dist_m": rms("err_dist_m"),
        "rmse_vel_mps": rms("err_vel_mps"),
        "rmse_x_m": rms("dt_x_err_m"),
        "rmse_y_m": rms("dt_y_err_m"),
        "mean_power_w": float(np.mean(power)) if power else math.nan,
        "degraded_slots": len(records) - len(ok),
        "slots": len(records),
    }


@dataclass
class SimulationResult:
    method: str
    seed: int
    records: List[SlotRecord]
    scenario: Scenario

    def summary(self) -> Dict[str, float]:
        return summarize_records(self.records)


def run_simulation(config: ScenarioConfig, method: str, seed: int, slots: Optional[int] = None) -> SimulationResult:
    """
    Run the closed loop for one method and seed.

    Raises:
        PlacementError: When the scenario cannot be placed
        ConfigurationError: Unknown method or invalid profile
    """
    agent = get_agent(method, config)
    state = init_simulation(config, seed, agent.n_rx_override)
    n_slots = slots if slots is not None else config.slot_count
    records = []
    for _ in range(n_slots):
        records.append(run_timeslot(state, agent))
    degraded = sum(r.degraded for r in records)
    logger.info(f"Simulation {method} seed {seed}: {n_slots} slots, {degraded} degraded")
    return SimulationResult(method, seed, records, state.scenario)


@dataclass
class SweepSpec:
    parameter: str                      # "K", "t_max" or "f"
    values: List[float]
    methods: List[str] = field(default_factory=lambda: ["hh"])
    seeds: List[int] = field(default_factory=lambda: [0])
    slots: Optional[int] = None
    reference_rcrb: Tuple[float, float] = (0.01, 0.01)  # distance [m], angle [deg]

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigurationError(f"unknown sweep parameter {self.parameter!r}, expected {SWEEP_PARAMETERS}")
        if not self.values:
            raise ConfigurationError("sweep needs at least one value")


@dataclass
class ExperimentResult:
    rows: pd.DataFrame
    summary: pd.DataFrame
    fingerprint: str
    failed_runs: int = 0
    meta: Dict[str, Any] = field(default_factory=dict)


def _row(**values) -> Dict[str, Any]:
    row = {col: math.nan for col in REPORT_COLUMNS}
    row.update(values)
    return row


def _analytic_rows(spec: SweepSpec, config: ScenarioConfig) -> List[Dict[str, Any]]:
    """Closed-form CPU frequency (t_max sweep) and DT power (f sweep) tables."""
    cycles = (config.cycles_per_bit_min + config.cycles_per_bit_max) / 2
    nu = WorkloadCoefficients(config.nu_dist_hz_per_m, config.nu_angle_hz_per_deg, 0.0)
    rows = []
    models = ["linear", "exponential"] if spec.parameter == "t_max" else [config.workload_model]
    for value in spec.values:
        for bits in REFERENCE_DATA_BITS:
            for model in models:
                load = dt_workload(spec.reference_rcrb[0], spec.reference_rcrb[1], nu, model, config.workload_exp_base)
                if spec.parameter == "t_max":
                    rows.append(_row(method="analytic", parameter="t_max", point=value, seed=-1, data_bits=bits,
                                     workload_model=model, f_min_hz=(cycles * bits + load) / value))
                else:
                    rows.append(_row(method="analytic", parameter="f", point=value, seed=-1, data_bits=bits,
                                     workload_model=model, p_dt_w=dt_power(value, cycles, config.kappa),
                                     latency_feasible=float(dt_latency(cycles, bits, value, load) <= config.t_max_s)))
    return rows


def summarize(rows: pd.DataFrame, confidence: float = 0.95) -> pd.DataFrame:
    """Mean and confidence half-width of every metric per (method, parameter, point, data_bits, model)."""
    if rows.empty:
        return pd.DataFrame(columns=["method", "parameter", "point", "n"])
    keys = ["method", "parameter", "point", "data_bits", "workload_model"]
    grouped = rows.fillna({"data_bits": -1, "workload_model": ""}).groupby(keys, sort=True, dropna=False)
    out = []
    for key, group in grouped:
        entry = dict(zip(keys, key))
        entry["n"] = int(len(group))
        for col in METRIC_COLUMNS:
            vals = group[col].dropna().to_numpy(dtype=float)
            vals = vals[np.isfinite(vals)]
            if vals.size == 0:
                continue
            entry[f"{col}_mean"] = float(vals.mean())
            if vals.size > 1:
                half = stats.t.ppf((1 + confidence) / 2, vals.size - 1) * vals.std(ddof=1) / math.sqrt(vals.size)
                entry[f"{col}_ci"] = float(half)
            else:
                entry[f"{col}_ci"] = 0.0
        out.append(entry)
    return pd.DataFrame(out)


def _sweep_run(config: ScenarioConfig, point: float, method: str, seed: int,
               slots: Optional[int]) -> Tuple[Optional[Dict[str, Any]], str]:
    """One (point, method, seed) run of a K sweep; typed failures come back as text."""
    try:
        result = run_simulation(config, method, seed, slots)
    except ConfigurationError:
        raise
    except ISCSCError as e:
        logger.warning(f"Run K={point:g} {method} seed {seed} failed: {str(e)}")
        return None, str(e)
    return _row(method=method, parameter="K", point=point, seed=seed, workload_model=config.workload_model,
                **result.summary()), ""


def run_experiment(spec: SweepSpec, config: ScenarioConfig, workers: int = 1) -> ExperimentResult:
    """
    Run a sweep over every (point, method, seed) with common random numbers.

    Args:
        spec (SweepSpec): Varied parameter, points, methods and seeds
        config (ScenarioConfig): Base scenario
        workers (int): Worker processes for K sweeps; rows are merged in submission order

    Returns:
        ExperimentResult: Per-run rows, aggregated summary and the failure count
    """
    for method in spec.methods:
        get_agent(method, config)
    failed = 0
    if spec.parameter == "K":
        jobs = []
        for value in spec.values:
            point_cfg = build_config({**config.model_dump(), "vehicle_count": int(value)})
            jobs.extend((point_cfg, float(value), method, seed, spec.slots)
                        for method in spec.methods for seed in spec.seeds)
        if workers > 1 and jobs:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_sweep_run, *zip(*jobs)))
        else:
            outcomes = [_sweep_run(*job) for job in jobs]
        rows = [row for row, _ in outcomes if row is not None]
        failed = sum(row is None for row, _ in outcomes)
    else:
        rows = _analytic_rows(spec, config)
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    logger.info(f"Sweep over {spec.parameter}: {len(frame)} rows, {failed} failed runs")
    return ExperimentResult(
        rows=frame,
        summary=summarize(frame),
        fingerprint=config.fingerprint(),
        failed_runs=failed,
        meta={"parameter": spec.parameter, "values": list(spec.values), "methods": list(spec.methods),
              "seeds": list(spec.seeds)},
    )


def emit_report(result: ExperimentResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    Write results.csv (one row per method, point and seed) and summary.json.

    Returns:
        Dict[str, Path]: Paths of the written files
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    json_path = out / "summary.json"
    try:
        result.rows.reindex(columns=REPORT_COLUMNS).to_csv(csv_path, index=False)
        payload = {
            "fingerprint": result.fingerprint,
            "failed_runs": result.failed_runs,
            "meta": result.meta,
            "summary": json.loads(result.summary.to_json(orient="records")),
        }
        with open(json_path, "w") as f:
            json.dump(payload, f, indent=2)
    except OSError as e:
        logger.error(f"Failed to write report to {out}: {str(e)}", exc_info=True)
        raise
    logger.info(f"Report written to {out}")
    return {"csv": csv_path, "summary": json_path}


def load_report(out_dir: Union[str, Path]) -> ExperimentResult:
    """Read a report back and re-aggregate its summary from the rows."""
    out = Path(out_dir)
    rows = pd.read_csv(out / "results.csv")
    meta, fingerprint, failed = {}, "", 0
    summary_path = out / "summary.json"
    if summary_path.exists():
        with open(summary_path, "r") as f:
            payload = json.load(f)
        meta, fingerprint, failed = payload.get("meta", {}), payload.get("fingerprint", ""), payload.get("failed_runs", 0)
    return ExperimentResult(rows=rows, summary=summarize(rows), fingerprint=fingerprint, failed_runs=failed, meta=meta)


def save_records(result: SimulationResult, out_dir: Union[str, Path]) -> Path:
    """Slot records of one simulation as JSON lines."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"records_{result.method}_seed{result.seed}.jsonl"
    with open(path, "w") as f:
        for record in result.records:
            f.write(record.to_json() + "\n")
    return path


def load_records(path: Union[str, Path]) -> List[SlotRecord]:
    with open(path, "r") as f:
        return [SlotRecord.from_dict(json.loads(line)) for line in f if line.strip()]


@dataclass
class TrackBenchResult:
    rows: List[Dict[str, Any]]     # one per (filter, seed)
    summary: List[Dict[str, Any]]  # one per filter


def _bench_filters(particle_counts: Sequence[int]) -> List[str]:
    return [f"pf-{n}" for n in particle_counts] + list(GAUSSIAN_FILTERS)


def track_bench(config: ScenarioConfig, seeds: Sequence[int], slots: Optional[int] = None,
                particle_counts: Sequence[int] = (500, 2000)) -> TrackBenchResult:
    """
    Compare the particle filter variants with the EKF and UKF on identical
    truth and measurement sequences generated by the state model.

    Returns:
        TrackBenchResult: RMSEs and mean step time per filter and seed, plus averages
    """
    noise = noise_from_config(config)
    dt = config.slot_length_s
    n_slots = slots if slots is not None else config.slot_count
    rows = []
    for seed in seeds:
        streams = rng_streams(seed)
        scenario = generate_scenario(config, streams["scenario"])
        rsu = scenario.rsu_xy[0]
        starts = [scenario.truth(0, k, 0.0) for k in range(scenario.vehicle_count)]

        truths, measurements = [], []
        current = list(starts)
        for _ in range(n_slots):
            current = [kinematic_step(q, dt, noise, streams["noise"]) for q in current]
            truths.append(current)
            measurements.append([synthesize_measurement(q, noise, streams["noise"]) for q in current])
        centers = [perturbed_prior(q, noise, streams["filter"]) for q in starts]

        filter_seeds = np.random.SeedSequence(seed).spawn(len(particle_counts) + 1)
        for name in _bench_filters(particle_counts):
            estimates, elapsed, steps = [], 0.0, 0
            if name.startswith("pf-"):
                count = int(name.split("-")[1])
                rng = np.random.default_rng(filter_seeds[list(particle_counts).index(count)])
                beliefs = [particle_belief(c, noise, count, config.prior_cov_scale, rng) for c in centers]
                for z_row in measurements:
                    row = []
                    for k, z in enumerate(z_row):
                        start = time.perf_counter()
                        beliefs[k], est = particle_filter_step(beliefs[k], z, dt, noise, rng)
                        elapsed += time.perf_counter() - start
                        steps += 1
                        row.append(est)
                    estimates.append(row)
            else:
                step = GAUSSIAN_FILTERS[name]
                beliefs = [gaussian_belief(c, noise, config.prior_cov_scale) for c in centers]
                for z_row in measurements:
                    row = []
                    for k, z in enumerate(z_row):
                        start = time.perf_counter()
                        beliefs[k], est = step(beliefs[k], z, dt, noise)
                        elapsed += time.perf_counter() - start
                        steps += 1
                        row.append(est)
                    estimates.append(row)
            metrics = tracking_metrics(estimates, truths, tuple(rsu))
            rows.append({"filter": name, "seed": seed, **metrics.to_dict(),
                         "mean_step_time_s": elapsed / max(steps, 1)})
        logger.info(f"Track bench seed {seed} done")

    summary = []
    for name in _bench_filters(particle_counts):
        sel = [r for r in rows if r["filter"] == name]
        entry = {"filter": name, "runs": len(sel)}
        for key in ("rmse_angle_deg", "rmse_dist_m", "rmse_vel_mps", "rmse_x_m", "rmse_y_m", "mean_step_time_s"):
            entry[key] = float(np.mean([r[key] for r in sel]))
        summary.append(entry)
    return TrackBenchResult(rows=rows, summary=summary)
