"""
Vehicle-to-RSU assignment and the alternating optimization of one slot.

The assignment layer is a greedy seed refined by simulated annealing with a
tabu list of infeasible plans; every candidate assignment is scored by a
(short) alternating optimization over beamforming, auxiliary matrices and
extraction ratios.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..utils.constants import FEASIBILITY_TOL
from ..utils.errors import InfeasibleError
from .convex_engine import (
    Pair, SubproblemParams, bisect_extraction_ratio, build_subproblem, gaussian_randomization,
    identity_auxiliary, mmse_auxiliary_update, solve_subproblem,
)
from .link_metrics import BeamPlan, min_cpu_frequency, semantic_rate, signal_covariance
from .nf_channel import ChannelRealization
from .sensing_crb import CrbReport, UNBOUNDED, crb_from_fim, fim

logger = logging.getLogger(__name__)

# Initial extraction ratio of the alternating optimization
RHO_INIT = 0.81
MONOTONE_TOL = 1e-6


@dataclass(frozen=True)
class Assignment:
    """Serving RSU of every vehicle; the binary matrix view has one 1 per column."""

    serving: Tuple[int, ...]
    rsu_count: int

    def __post_init__(self):
        if any(not 0 <= m < self.rsu_count for m in self.serving):
            raise ValueError(f"serving index outside [0, {self.rsu_count})")

    @classmethod
    def from_matrix(cls, xi: np.ndarray) -> "Assignment":
        xi = np.asarray(xi)
        if not np.all(xi.sum(axis=0) == 1):
            raise ValueError("every vehicle must be served by exactly one RSU")
        return cls(tuple(int(m) for m in np.argmax(xi, axis=0)), xi.shape[0])

    @property
    def vehicle_count(self) -> int:
        return len(self.serving)

    @property
    def matrix(self) -> np.ndarray:
        xi = np.zeros((self.rsu_count, self.vehicle_count), dtype=int)
        xi[list(self.serving), np.arange(self.vehicle_count)] = 1
        return xi

    @property
    def fingerprint(self) -> Tuple[int, ...]:
        return self.serving

    def moved(self, k: int, m: int) -> "Assignment":
        serving = list(self.serving)
        serving[k] = m
        return Assignment(tuple(serving), self.rsu_count)


@dataclass
class SlotProblem:
    """Everything one slot's optimization needs, evaluated at predicted poses."""

    channels: Dict[Pair, ChannelRealization]
    betas: np.ndarray           # (M, K)
    cycles_per_bit: np.ndarray  # (K,)
    data_bits: np.ndarray       # (K,)
    workloads: np.ndarray       # (K,) DT workload L from the previous slot
    vehicle_xy: np.ndarray      # (K, 2) predicted positions
    rsu_xy: np.ndarray          # (M, 2)
    rho_lb: float
    params: SubproblemParams
    t_max: float
    f_max: float
    fixed_rho: Optional[float] = None

    @property
    def rsu_count(self) -> int:
        return self.rsu_xy.shape[0]

    @property
    def vehicle_count(self) -> int:
        return self.vehicle_xy.shape[0]

    @property
    def n_tx(self) -> int:
        return next(iter(self.channels.values())).b.shape[0]

    @property
    def n_rx(self) -> int:
        return next(iter(self.channels.values())).h.shape[1]


@dataclass(frozen=True)
class AoSettings:
    tolerance: float = 1e-3
    max_iterations: int = 50
    randomization_samples: int = 100
    randomize: bool = True


@dataclass
class AoTrace:
    objectives: List[float] = field(default_factory=list)
    converged: bool = False
    reason: str = ""
    iterations: int = 0
    solve_times: List[float] = field(default_factory=list)
    final_objective: float = math.inf

    @property
    def objective(self) -> float:
        return self.objectives[-1] if self.objectives else math.inf

    def is_monotone(self, tol: float = MONOTONE_TOL) -> bool:
        return all(b <= a + tol for a, b in zip(self.objectives, self.objectives[1:]))

    def to_dict(self) -> Dict[str, object]:
        return {
            "objectives": self.objectives,
            "converged": self.converged,
            "reason": self.reason,
            "iterations": self.iterations,
            "final_objective": self.final_objective,
        }


@dataclass(frozen=True)
class AnnealSettings:
    temperature: float = 100.0
    cooling_rate: float = 0.95
    t_min: float = 0.01
    n_max: int = 100


@dataclass
class AnnealState:
    temperature: float
    cooling_rate: float
    t_min: float
    n_max: int
    iteration: int = 0
    best_score: float = -math.inf
    tabu: Set[Tuple[int, ...]] = field(default_factory=set)
    scores: Dict[Tuple[int, ...], float] = field(default_factory=dict)
    evaluations: int = 0
    log: List[Dict[str, object]] = field(default_factory=list)

    @classmethod
    def start(cls, settings: AnnealSettings) -> "AnnealState":
        return cls(settings.temperature, settings.cooling_rate, settings.t_min, settings.n_max)

    @property
    def running(self) -> bool:
        return self.iteration < self.n_max and self.temperature > self.t_min


def greedy_assign(vehicle_xy: np.ndarray, rsu_xy: np.ndarray) -> Assignment:
    """Nearest RSU per vehicle, ties to the lowest RSU index."""
    vehicle_xy = np.asarray(vehicle_xy, dtype=float).reshape(-1, 2)
    rsu_xy = np.asarray(rsu_xy, dtype=float).reshape(-1, 2)
    if rsu_xy.shape[0] < 1:
        raise ValueError("at least one RSU is required")
    dist = np.linalg.norm(rsu_xy[:, None, :] - vehicle_xy[None, :, :], axis=-1)
    return Assignment(tuple(int(m) for m in np.argmin(dist, axis=0)), rsu_xy.shape[0])


def allocate_cpu(assignment: Assignment, cycles_per_bit: Sequence[float], data_bits: Sequence[float],
                 workloads: Sequence[float], t_max: float, f_max: float) -> np.ndarray:
    """
    Latency-binding CPU frequencies, checked against each RSU's capacity.

    Returns:
        np.ndarray: (M, K) frequencies in Hz, zero for unserved pairs

    Raises:
        InfeasibleError: When an RSU's summed frequency exceeds f_max
    """
    freq = np.zeros((assignment.rsu_count, assignment.vehicle_count))
    for k, m in enumerate(assignment.serving):
        freq[m, k] = min_cpu_frequency(cycles_per_bit[k], data_bits[k], workloads[k], t_max)
    totals = freq.sum(axis=1)
    for m, total in enumerate(totals):
        if total > f_max * (1 + FEASIBILITY_TOL):
            raise InfeasibleError(
                f"RSU {m} needs {total / 1e9:.3f} GHz of {f_max / 1e9:.3f} GHz", reason="cpu",
                detail={"rsu": m, "required_hz": float(total), "f_max_hz": f_max},
            )
    return freq


def pair_crb(plan: BeamPlan, problem: SlotProblem, k: int) -> CrbReport:
    """CRB of vehicle k as sensed by its serving RSU under the plan."""
    m = plan.serving_rsu(k)
    r_x = signal_covariance(plan, m)
    if not np.any(r_x):
        return UNBOUNDED
    p = problem.params
    blocks = fim(None, problem.betas[m, k], r_x, p.t_obs, p.noise_sense, None, channel=problem.channels[(m, k)])
    return crb_from_fim(blocks)


def plan_objective(plan: BeamPlan, problem: SlotProblem) -> float:
    """Sum over vehicles of eps * (-S) + (1 - eps) * weighted CRB."""
    p = problem.params
    eps = p.weight_epsilon
    total = 0.0
    for k in range(plan.vehicle_count):
        rate = semantic_rate(k, problem.channels, plan, p.noise_comm, p.iota)
        crb = pair_crb(plan, problem, k).weighted_trace(p.crb_weight_dist, p.crb_weight_angle)
        total += eps * (-rate) + ((1 - eps) * crb if eps < 1 else 0.0)
    return total


def _initial_plan(problem: SlotProblem, assignment: Assignment) -> BeamPlan:
    plan = BeamPlan.empty(assignment.matrix, problem.n_tx)
    plan.cpu_freq = allocate_cpu(assignment, problem.cycles_per_bit, problem.data_bits, problem.workloads,
                                 problem.t_max, problem.f_max)
    rho = problem.fixed_rho if problem.fixed_rho is not None else max(problem.rho_lb, RHO_INIT)
    plan.extraction_ratio = np.where(plan.assignment == 1, rho, 1.0).astype(float)
    return plan


def _randomize(plan: BeamPlan, problem: SlotProblem, samples: int, rng: np.random.Generator) -> BeamPlan:
    """Replace each served covariance with a rank-one beamformer."""
    p = problem.params
    out = BeamPlan(plan.comm_cov.copy(), plan.sense_cov.copy(), plan.assignment.copy(),
                   plan.extraction_ratio.copy(), plan.cpu_freq.copy(), plan.rate_epigraph.copy(),
                   plan.crb_epigraph.copy())
    beams = np.zeros(plan.comm_cov.shape[:3], dtype=complex)
    for k in range(plan.vehicle_count):
        m = plan.serving_rsu(k)

        def score(w: np.ndarray, m=m, k=k) -> float:
            trial = BeamPlan(out.comm_cov.copy(), out.sense_cov, out.assignment, out.extraction_ratio,
                             out.cpu_freq, out.rate_epigraph, out.crb_epigraph)
            trial.comm_cov[m, k] = np.outer(w, w.conj())
            return semantic_rate(k, problem.channels, trial, p.noise_comm, p.iota)

        w = gaussian_randomization(plan.comm_cov[m, k], score=score, n_samples=samples, rng=rng)
        beams[m, k] = w
        out.comm_cov[m, k] = np.outer(w, w.conj())
    out.beamformers = beams
    return out


def alternating_optimize(problem: SlotProblem, assignment: Assignment, settings: AoSettings,
                         rng: np.random.Generator) -> Tuple[BeamPlan, AoTrace]:
    """
    Alternate the conic subproblem, the auxiliary update and the rho bisection.

    Args:
        problem (SlotProblem): Slot inputs
        assignment (Assignment): Fixed vehicle-to-RSU map
        settings (AoSettings): Tolerance, iteration cap and randomization size
        rng (np.random.Generator): Random stream for the randomization

    Returns:
        Tuple[BeamPlan, AoTrace]: Final (rank-one) plan and the objective trace

    Raises:
        InfeasibleError: CPU, power or subproblem infeasibility of this assignment
    """
    p = problem.params
    plan = _initial_plan(problem, assignment)
    aux = identity_auxiliary(plan, problem.n_rx)
    trace = AoTrace()
    previous = math.inf

    for iteration in range(1, settings.max_iterations + 1):
        program = build_subproblem(problem.channels, problem.betas, aux, plan, problem.cycles_per_bit, p)
        solution = solve_subproblem(program)
        trace.solve_times.append(solution.solve_time)
        candidate = solution.apply_to(plan)

        if problem.fixed_rho is None:
            for m in range(candidate.rsu_count):
                served = candidate.served(m)
                if served:
                    rho = bisect_extraction_ratio(candidate, m, problem.rho_lb, p, problem.cycles_per_bit)
                    candidate.extraction_ratio[m, served] = rho

        objective = plan_objective(candidate, problem)
        trace.iterations = iteration
        logger.debug(f"AO iteration {iteration}: objective {objective:.6g}")
        if objective > previous + MONOTONE_TOL:
            trace.converged, trace.reason = True, "no_improvement"
            break
        plan = candidate
        aux = mmse_auxiliary_update(problem.channels, plan, p.noise_comm)
        trace.objectives.append(objective)
        if abs(previous - objective) < settings.tolerance:
            trace.converged, trace.reason = True, "tolerance"
            break
        previous = objective
    else:
        trace.reason = "max_iterations"
        logger.info(f"AO hit the iteration cap ({settings.max_iterations})")

    if settings.randomize:
        plan = _randomize(plan, problem, settings.randomization_samples, rng)
    trace.final_objective = plan_objective(plan, problem)
    return plan, trace


def _random_assignment(state: AnnealState, rsu_count: int, vehicle_count: int,
                       rng: np.random.Generator) -> Assignment:
    """Uniform non-tabu assignment."""
    total = rsu_count ** vehicle_count
    if len(state.tabu) >= total:
        raise InfeasibleError("every assignment is tabu", reason="exhausted")
    for _ in range(1000):
        cand = Assignment(tuple(int(m) for m in rng.integers(0, rsu_count, vehicle_count)), rsu_count)
        if cand.fingerprint not in state.tabu:
            return cand
    if total <= 1_000_000:
        free = [c for c in itertools.product(range(rsu_count), repeat=vehicle_count) if c not in state.tabu]
        if free:
            return Assignment(tuple(free[int(rng.integers(len(free)))]), rsu_count)
    raise InfeasibleError("no non-tabu assignment found", reason="exhausted")


def _neighbor(current: Assignment, state: AnnealState, rng: np.random.Generator) -> Assignment:
    """Move one uniformly chosen vehicle to a different uniformly chosen RSU."""
    m_count, k_count = current.rsu_count, current.vehicle_count
    if m_count < 2:
        return current
    for _ in range(100):
        k = int(rng.integers(k_count))
        others = [m for m in range(m_count) if m != current.serving[k]]
        cand = current.moved(k, others[int(rng.integers(len(others)))])
        if cand.fingerprint not in state.tabu:
            return cand
    return _random_assignment(state, m_count, k_count, rng)


def _score(assignment: Assignment, evaluate: Callable[[Assignment], float], state: AnnealState) -> Optional[float]:
    """Cached score -objective, or None when the assignment is (now) tabu."""
    key = assignment.fingerprint
    if key in state.tabu:
        return None
    if key not in state.scores:
        state.evaluations += 1
        try:
            state.scores[key] = -float(evaluate(assignment))
        except InfeasibleError as e:
            logger.debug(f"Assignment {key} infeasible ({e.reason}), added to tabu")
            state.tabu.add(key)
            return None
    return state.scores[key]


def _feasible_random(evaluate, state: AnnealState, m_count: int, k_count: int,
                     rng: np.random.Generator) -> Tuple[Assignment, float]:
    while True:
        cand = _random_assignment(state, m_count, k_count, rng)
        score = _score(cand, evaluate, state)
        if score is not None:
            return cand, score


def hybrid_heuristic(evaluate: Callable[[Assignment], float], seed: Assignment, settings: AnnealSettings,
                     rng: np.random.Generator) -> Tuple[Assignment, float, AnnealState]:
    """
    Greedy-seeded simulated annealing over assignments with a tabu list.

    Args:
        evaluate: Objective of an assignment (lower is better); raises
            InfeasibleError for infeasible plans
        seed (Assignment): Greedy starting point
        settings (AnnealSettings): Temperature schedule
        rng (np.random.Generator): Random stream

    Returns:
        Tuple[Assignment, float, AnnealState]: Best assignment, its score
        (-objective) and the final annealing state

    Raises:
        InfeasibleError: reason "exhausted" when every assignment is tabu
    """
    state = AnnealState.start(settings)
    m_count, k_count = seed.rsu_count, seed.vehicle_count

    current, score = seed, _score(seed, evaluate, state)
    if score is None:
        current, score = _feasible_random(evaluate, state, m_count, k_count, rng)
    best, state.best_score = current, score

    while state.running:
        state.iteration += 1
        cand = _neighbor(current, state, rng)
        new_score = _score(cand, evaluate, state)
        if new_score is None:
            current, score = _feasible_random(evaluate, state, m_count, k_count, rng)
            state.log.append({"iteration": state.iteration, "candidate": list(cand.serving),
                              "event": "tabu", "temperature": state.temperature})
        else:
            accept = new_score >= score or rng.random() <= math.exp((new_score - score) / state.temperature)
            state.log.append({"iteration": state.iteration, "candidate": list(cand.serving),
                              "score": new_score, "accepted": bool(accept), "temperature": state.temperature})
            logger.debug(f"SA {state.iteration}: {cand.serving} score {new_score:.6g} accepted={accept}")
            if accept:
                current, score = cand, new_score
        if score > state.best_score:
            best, state.best_score = current, score
        state.temperature *= state.cooling_rate

    logger.info(f"SA finished after {state.iteration} iterations, {state.evaluations} evaluations, "
                f"{len(state.tabu)} tabu, best {best.serving}")
    return best, state.best_score, state


def flip_assignment(assignment: Assignment, probability: float, rng: np.random.Generator) -> Assignment:
    """Move each vehicle to a random other RSU with the given probability."""
    if assignment.rsu_count < 2:
        return assignment
    serving = list(assignment.serving)
    for k, m in enumerate(serving):
        if rng.random() < probability:
            others = [o for o in range(assignment.rsu_count) if o != m]
            serving[k] = others[int(rng.integers(len(others)))]
    return Assignment(tuple(serving), assignment.rsu_count)
