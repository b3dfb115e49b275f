"""
Test suite for the planner: greedy assignment, simulated annealing with tabu
list, CPU allocation and the alternating optimization.
"""

import itertools
import json
import math
from datetime import datetime
import sys
from collections import Counter
from pathlib import Path
from typing import Dict, Any, List
from dotenv import load_dotenv
import logging
import numpy as np
import pytest

# Add the project root directory to the Python path
project_root = str(Path(__file__).parent.parent)
sys.path.append(project_root)

from backend.services.convex_engine import SubproblemParams
from backend.services.link_metrics import BeamPlan
from backend.services.nf_channel import ArrayGeometry, Pose, realize_channel
from backend.services.planner import (
    AnnealSettings, AoSettings, Assignment, SlotProblem, allocate_cpu, alternating_optimize, flip_assignment,
    greedy_assign, hybrid_heuristic, plan_objective,
)
from backend.utils.errors import InfeasibleError

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv(project_root + '/config/.env')

TEST_RESULTS_DIR = Path(project_root) / "test_results"
TEST_RUN_DIR = TEST_RESULTS_DIR / f"test_planner_{datetime.now().strftime('%Y%m%d_%H%M%S')}"
TEST_RUN_DIR.mkdir(parents=True, exist_ok=True)

file_handler = logging.FileHandler(TEST_RUN_DIR / "test_planner.log")
file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
logger.addHandler(file_handler)


def save_test_data(data: Dict[str, Any], filename: str) -> None:
    """Save test data to a JSON file."""
    filepath = TEST_RUN_DIR / filename
    with open(filepath, 'w') as f:
        json.dump(data, f, indent=2)
    logger.info(f"Saved test data to {filepath}")


def single_vehicle_problem(eps: float, compute_coeff: float = 0.01) -> SlotProblem:
    geom = ArrayGeometry.half_wavelength(4, 1, 50e9)
    pose = Pose(1.2, 10.0)
    params = SubproblemParams(noise_comm=1e-6, noise_sense=1e-6, t_obs=256, iota=1.1, tx_power=0.316,
                              compute_coeff=compute_coeff, kappa=1e-32, weight_epsilon=eps)
    return SlotProblem(
        channels={(0, 0): realize_channel(pose, geom)}, betas=np.full((1, 1), 1e-3 + 0j),
        cycles_per_bit=np.array([1e3]), data_bits=np.array([2e3]), workloads=np.array([1e6]),
        vehicle_xy=np.array([[pose.distance * math.cos(pose.angle), pose.distance * math.sin(pose.angle)]]),
        rsu_xy=np.zeros((1, 2)), rho_lb=0.81, params=params, t_max=0.015, f_max=5.8e9,
    )


def score_table(seed: int) -> Dict[tuple, float]:
    rng = np.random.default_rng(seed)
    return {c: float(rng.uniform(-10, 10)) for c in itertools.product(range(2), repeat=3)}


def test_01_greedy_assign():
    """Nearest RSU wins, ties go to the lower index, and every column is a row-argmin."""
    logger.info("Testing greedy assignment...")
    rsu = np.array([[0.0, 0.0], [60.0, 0.0]])
    assert greedy_assign(np.array([[10.0, 0.0]]), rsu).serving == (0,)
    assert greedy_assign(np.array([[50.0, 0.0]]), rsu).serving == (1,)
    assert greedy_assign(np.array([[30.0, 4.0]]), rsu).serving == (0,)

    rng = np.random.default_rng(0)
    rsu = rng.uniform(0, 100, (3, 2))
    vehicles = rng.uniform(0, 100, (20, 2))
    assignment = greedy_assign(vehicles, rsu)
    dist = np.linalg.norm(rsu[:, None, :] - vehicles[None, :, :], axis=-1)
    assert list(assignment.serving) == list(np.argmin(dist, axis=0))
    assert np.all(assignment.matrix.sum(axis=0) == 1)
    with pytest.raises(ValueError):
        greedy_assign(vehicles, np.zeros((0, 2)))
    logger.info("✓ Greedy assignment successful")


def test_02_assignment_views():
    a = Assignment((1, 0, 1), 2)
    assert np.array_equal(a.matrix, np.array([[0, 1, 0], [1, 0, 1]]))
    assert Assignment.from_matrix(a.matrix) == a
    assert a.moved(1, 1).serving == (1, 1, 1)
    assert a.fingerprint == (1, 0, 1)
    with pytest.raises(ValueError):
        Assignment.from_matrix(np.array([[1, 1], [1, 0]]))
    with pytest.raises(ValueError):
        Assignment((2,), 2)


def test_03_allocate_cpu():
    """Latency-binding frequencies with the per-RSU capacity check."""
    logger.info("Testing CPU allocation...")
    trivial = allocate_cpu(Assignment((0, 0), 1), [1.0, 1.0], [1.0, 1.0], [0.0, 0.0], 0.015, 5.8e9)
    assert np.allclose(trivial, 1.0 / 0.015)

    # Four identical tasks each needing exactly f_max / 4
    f_max = 5.8e9
    cycles = f_max / 4 * 0.015
    boundary = allocate_cpu(Assignment((0,) * 4, 1), [1e3] * 4, [cycles / 1e3] * 4, [0.0] * 4, 0.015, f_max)
    assert boundary.sum() == pytest.approx(f_max)

    with pytest.raises(InfeasibleError) as exc:
        allocate_cpu(Assignment((0,) * 20, 1), [2e3] * 20, [3e3] * 20, [5e6] * 20, 0.015, f_max)
    assert exc.value.reason == "cpu"

    split = allocate_cpu(Assignment((0, 1), 2), [1e3, 1e3], [1e3, 1e3], [0.0, 0.0], 0.015, f_max)
    assert split[1, 0] == 0.0 and split[0, 1] == 0.0
    logger.info("✓ CPU allocation successful")


def test_04_annealing_finds_global_best():
    """M = 2, K = 3: annealing with n_max = 50 reaches the exhaustive optimum in at least 95 of 100 seeds."""
    logger.info("Testing simulated annealing against exhaustive search...")
    table = score_table(42)
    best_key = min(table, key=table.get)
    settings = AnnealSettings(temperature=100.0, cooling_rate=0.95, t_min=0.01, n_max=50)
    seed_assignment = Assignment((0, 0, 0), 2)
    hits = 0
    for seed in range(100):
        best, score, _ = hybrid_heuristic(lambda a: table[a.serving], seed_assignment, settings,
                                          np.random.default_rng(seed))
        hits += best.serving == best_key
        assert score >= -table[seed_assignment.serving]
    save_test_data({"hits": hits, "best": list(best_key)}, "04_anneal_hits.json")
    assert hits >= 95
    logger.info(f"✓ Simulated annealing found the optimum in {hits}/100 seeds")


def test_05_tabu_prevents_reevaluation():
    """Infeasible assignments are tabu-ed and no assignment is solved twice."""
    logger.info("Testing tabu list...")
    table = score_table(7)
    infeasible = {(1, 1, 1), (0, 1, 1)}
    calls: Counter = Counter()

    def evaluate(a: Assignment) -> float:
        calls[a.serving] += 1
        if a.serving in infeasible:
            raise InfeasibleError("synthetic", reason="power")
        return table[a.serving]

    best, _, state = hybrid_heuristic(evaluate, Assignment((1, 1, 1), 2), AnnealSettings(n_max=60),
                                      np.random.default_rng(3))
    assert max(calls.values()) == 1
    assert best.serving not in infeasible
    assert state.tabu <= infeasible
    assert state.evaluations == sum(calls.values())
    logger.info("✓ Tabu list successful")


def test_06_exhaustion_and_determinism():
    def never(a: Assignment) -> float:
        raise InfeasibleError("synthetic")

    with pytest.raises(InfeasibleError) as exc:
        hybrid_heuristic(never, Assignment((0, 0), 2), AnnealSettings(n_max=10), np.random.default_rng(0))
    assert exc.value.reason == "exhausted"

    table = score_table(11)
    runs = [hybrid_heuristic(lambda a: table[a.serving], Assignment((0, 1, 0), 2), AnnealSettings(n_max=30),
                             np.random.default_rng(5)) for _ in range(2)]
    assert runs[0][0] == runs[1][0]
    assert runs[0][2].log == runs[1][2].log


def test_07_flip_assignment():
    rng = np.random.default_rng(0)
    a = Assignment((0, 1, 2, 0), 3)
    assert flip_assignment(a, 0.0, rng) == a
    flipped = flip_assignment(a, 1.0, rng)
    assert all(x != y for x, y in zip(flipped.serving, a.serving))
    assert flip_assignment(Assignment((0, 0), 1), 1.0, rng) == Assignment((0, 0), 1)


def test_08_plan_objective_weighting():
    """With nothing transmitted the rate is zero; the CRB term only counts when eps < 1."""
    plan = BeamPlan.empty(np.array([[1]]), 4)
    assert plan_objective(plan, single_vehicle_problem(1.0)) == 0.0
    assert plan_objective(plan, single_vehicle_problem(0.5)) == math.inf


def test_09_alternating_optimization_converges():
    """Single vehicle: the AO trace is non-increasing and stops on convergence."""
    logger.info("Testing alternating optimization...")
    results: List[Dict[str, Any]] = []
    for eps in (1.0, 0.5):
        problem = single_vehicle_problem(eps)
        plan, trace = alternating_optimize(problem, Assignment((0,), 1), AoSettings(), np.random.default_rng(0))
        results.append({"eps": eps, **trace.to_dict()})
        assert trace.is_monotone()
        assert trace.converged
        assert trace.reason in ("tolerance", "no_improvement")
        assert plan.violations(problem.rho_lb) == []
        assert plan.beamformers is not None
        assert math.isfinite(trace.final_objective)
        if eps == 1.0:
            assert trace.iterations <= 5
    save_test_data({"runs": results}, "09_ao_traces.json")
    logger.info("✓ Alternating optimization successful")


def test_10_fixed_costs_exhaust_power():
    """Extraction power above P_t surfaces as a typed infeasibility."""
    problem = single_vehicle_problem(0.5, compute_coeff=50.0)
    with pytest.raises(InfeasibleError) as exc:
        alternating_optimize(problem, Assignment((0,), 1), AoSettings(), np.random.default_rng(0))
    assert exc.value.reason == "power"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
