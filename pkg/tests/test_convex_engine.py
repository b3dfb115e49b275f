"""
Test suite for the conic subproblem: construction, solving, the extraction
ratio bisection and Gaussian randomization.
"""

import json
import math
from datetime import datetime
import sys
from pathlib import Path
from typing import Dict, Any, List, Optional
from dotenv import load_dotenv
import logging
import numpy as np
import pytest

# Add the project root directory to the Python path
project_root = str(Path(__file__).parent.parent)
sys.path.append(project_root)

from backend.services.convex_engine import (
    SubproblemParams, build_subproblem, bisect_extraction_ratio, derealify, gaussian_randomization,
    identity_auxiliary, mmse_auxiliary_update, project_psd, rate_epigraph_value, realify, solve_subproblem,
)
from backend.services.link_metrics import BeamPlan, semantic_rate, signal_covariance
from backend.services.nf_channel import ArrayGeometry, ChannelRealization, Pose, realize_channel
from backend.services.planner import AoSettings, Assignment, SlotProblem, alternating_optimize
from backend.services.sensing_crb import crb_from_fim, fim
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
TEST_RUN_DIR = TEST_RESULTS_DIR / f"test_convex_engine_{datetime.now().strftime('%Y%m%d_%H%M%S')}"
TEST_RUN_DIR.mkdir(parents=True, exist_ok=True)

file_handler = logging.FileHandler(TEST_RUN_DIR / "test_convex_engine.log")
file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
logger.addHandler(file_handler)


def save_test_data(data: Dict[str, Any], filename: str) -> None:
    """Save test data to a JSON file."""
    filepath = TEST_RUN_DIR / filename
    with open(filepath, 'w') as f:
        json.dump(data, f, indent=2)
    logger.info(f"Saved test data to {filepath}")


def make_params(eps: float = 0.5, tx_power: float = 1.0, compute_coeff: float = 0.0,
                kappa: float = 0.0) -> SubproblemParams:
    return SubproblemParams(noise_comm=1e-3, noise_sense=1e-6, t_obs=256, iota=1.0, tx_power=tx_power,
                            compute_coeff=compute_coeff, kappa=kappa, weight_epsilon=eps)


def make_problem(n_tx: int, n_rx: int, poses: List[Pose], params: SubproblemParams,
                 fixed_rho: Optional[float] = None) -> SlotProblem:
    geom = ArrayGeometry.half_wavelength(n_tx, n_rx, 50e9)
    k_count = len(poses)
    channels = {(0, k): realize_channel(p, geom) for k, p in enumerate(poses)}
    xy = np.array([[p.distance * math.cos(p.angle), p.distance * math.sin(p.angle)] for p in poses])
    return SlotProblem(
        channels=channels, betas=np.full((1, k_count), 1e-3 + 0j), cycles_per_bit=np.full(k_count, 1e3),
        data_bits=np.full(k_count, 1e3), workloads=np.zeros(k_count), vehicle_xy=xy, rsu_xy=np.zeros((1, 2)),
        rho_lb=0.81, params=params, t_max=0.015, f_max=5.8e9, fixed_rho=fixed_rho,
    )


def single_pair_program(eps: float):
    problem = make_problem(4, 1, [Pose(1.2, 10.0)], make_params(eps=eps, tx_power=0.316))
    plan = BeamPlan.empty(np.array([[1]]), problem.n_tx)
    aux = identity_auxiliary(plan, problem.n_rx)
    return problem, plan, build_subproblem(problem.channels, problem.betas, aux, plan,
                                           problem.cycles_per_bit, problem.params)


def test_01_real_embedding():
    """realify / derealify invert each other and PSD projection clips negative eigenvalues."""
    rng = np.random.default_rng(0)
    g = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    herm = g + g.conj().T
    emb = realify(herm)
    assert np.allclose(emb, emb.T)
    assert np.allclose(derealify(emb), herm)
    assert np.allclose(np.sort(np.linalg.eigvalsh(emb)), np.sort(np.repeat(np.linalg.eigvalsh(herm), 2)))

    projected = project_psd(herm)
    assert np.linalg.eigvalsh(projected).min() >= -1e-12
    assert np.allclose(project_psd(np.eye(3)), np.eye(3))


def test_02_constraint_counts():
    """One RSU, one vehicle: the audited constraint groups have fixed sizes."""
    logger.info("Testing constraint counts...")
    _, _, program = single_pair_program(0.5)
    counts = program.constraint_counts()
    assert counts == {"psd": 2, "structure": 4, "rate": 1, "crb_lmi": 1, "omega_lmi": 2, "crb_sum": 1, "power": 1}
    listing = program.describe()
    assert "W_0_0" in listing and "R_0" in listing and "Omega_0_0" in listing
    (TEST_RUN_DIR / "02_program.txt").write_text(listing)

    _, _, rate_only = single_pair_program(1.0)
    assert "crb_lmi" not in rate_only.constraint_counts()
    logger.info("✓ Constraint counts successful")


def test_03_trivial_program():
    """All channels zero and pure rate weighting: the rate epigraph is zero."""
    logger.info("Testing trivial program...")
    n = 4
    zero = ChannelRealization(h=np.zeros((n, 1), dtype=complex), b=np.zeros((n, n), dtype=complex),
                              db_dtheta=np.zeros((n, n), dtype=complex), db_ddist=np.zeros((n, n), dtype=complex))
    plan = BeamPlan.empty(np.array([[1]]), n)
    params = make_params(eps=1.0)
    program = build_subproblem({(0, 0): zero}, np.full((1, 1), 1e-3 + 0j), identity_auxiliary(plan, 1), plan,
                               [1e3], params)
    solution = solve_subproblem(program)
    assert solution.rate_epigraph[0, 0] == pytest.approx(0.0, abs=1e-6)
    assert solution.objective == pytest.approx(0.0, abs=1e-6)
    logger.info("✓ Trivial program successful")


def test_04_solution_is_hermitian_psd_and_within_power():
    """De-realified covariances are Hermitian PSD and respect the power budget."""
    logger.info("Testing solved covariances...")
    problem, plan, program = single_pair_program(0.5)
    solution = solve_subproblem(program)
    solved = solution.apply_to(plan)
    for mat in (solved.comm_cov[0, 0], solved.sense_cov[0]):
        assert np.allclose(mat, mat.conj().T, atol=1e-10)
        assert np.linalg.eigvalsh(mat).min() >= -1e-9
    radiated = float(np.real(np.trace(signal_covariance(solved, 0))))
    assert radiated <= problem.params.tx_power * (1 + 1e-6)
    save_test_data({"objective": solution.objective, "radiated_w": radiated, "status": solution.status},
                   "04_solution.json")
    logger.info("✓ Solved covariances successful")


def test_05_crb_constraint_is_sound():
    """The direct CRB of the solved covariance stays below the CRB epigraph."""
    logger.info("Testing CRB soundness...")
    problem, plan, program = single_pair_program(0.5)
    solution = solve_subproblem(program)
    r_x = solution.comm_cov[0, 0] + solution.sense_cov[0]
    p = problem.params
    report = crb_from_fim(fim(None, problem.betas[0, 0], r_x, p.t_obs, p.noise_sense, None,
                              channel=problem.channels[(0, 0)]))
    assert report.bounded
    weighted = report.weighted_trace(p.crb_weight_dist, p.crb_weight_angle)
    eta = solution.crb_epigraph[0, 0]
    assert weighted <= eta * (1 + 1e-3) + 1e-5

    omega = solution.omega[(0, 0)]
    t = solution.t[(0, 0)]
    assert float(np.sum(t * program.omega_scale[(0, 0)] ** 2)) >= np.trace(np.linalg.inv(omega)) * (1 - 1e-4) - 1e-6
    save_test_data({"crb": report.to_dict(), "eta": eta, "weighted": weighted}, "05_crb_soundness.json")
    logger.info("✓ CRB soundness successful")


def test_06_power_precheck():
    """Extraction power above P_t is rejected before any solve."""
    problem = make_problem(4, 1, [Pose(1.2, 10.0)], make_params(tx_power=0.316, compute_coeff=10.0))
    plan = BeamPlan.empty(np.array([[1]]), problem.n_tx)
    plan.extraction_ratio[0, 0] = 0.81
    with pytest.raises(InfeasibleError) as exc:
        build_subproblem(problem.channels, problem.betas, identity_auxiliary(plan, 1), plan,
                         problem.cycles_per_bit, problem.params)
    assert exc.value.reason == "power"


def test_07_rate_epigraph_value():
    """At the MMSE auxiliary the epigraph equals the rate without interference and bounds it from below otherwise."""
    logger.info("Testing rate epigraph...")
    geom = ArrayGeometry.half_wavelength(4, 2, 50e9)
    channels = {(0, 0): realize_channel(Pose(1.0, 8.0), geom), (1, 0): realize_channel(Pose(2.0, 12.0), geom)}
    plan = BeamPlan.empty(np.array([[1], [0]]), 4)
    plan.comm_cov[0, 0] = 0.5 * np.eye(4)
    plan.extraction_ratio[0, 0] = 0.9
    aux = mmse_auxiliary_update(channels, plan, 1e-3)
    bound = rate_epigraph_value(0, channels, plan, aux, 1e-3, 1.1)
    assert bound == pytest.approx(semantic_rate(0, channels, plan, 1e-3, 1.1), rel=1e-9)

    plan.sense_cov[1] = 0.3 * np.eye(4)
    aux = mmse_auxiliary_update(channels, plan, 1e-3)
    assert rate_epigraph_value(0, channels, plan, aux, 1e-3, 1.1) <= semantic_rate(0, channels, plan, 1e-3, 1.1) + 1e-9
    logger.info("✓ Rate epigraph successful")


def test_08_matches_grid_search():
    """n_tx = 2, one vehicle: the optimized rate is at least the best of 10^4 rank-one grid points."""
    logger.info("Testing against grid search...")
    params = make_params(eps=1.0, tx_power=1.0)
    problem = make_problem(2, 1, [Pose(1.1, 6.0)], params, fixed_rho=1.0)
    plan, trace = alternating_optimize(problem, Assignment((0,), 1), AoSettings(), np.random.default_rng(1))
    ao_rate = semantic_rate(0, problem.channels, plan, params.noise_comm, params.iota)

    h = problem.channels[(0, 0)].h[:, 0]
    best = 0.0
    for a in np.linspace(0.0, math.pi / 2, 100):
        for phi in np.linspace(0.0, 2 * math.pi, 100, endpoint=False):
            w = math.sqrt(params.tx_power) * np.array([math.cos(a), math.sin(a) * np.exp(1j * phi)])
            best = max(best, math.log2(1 + abs(np.vdot(h, w)) ** 2 / params.noise_comm))
    optimum = math.log2(1 + params.tx_power * np.linalg.norm(h) ** 2 / params.noise_comm)

    save_test_data({"ao_rate": ao_rate, "grid_best": best, "optimum": optimum, "trace": trace.to_dict()},
                   "08_grid_search.json")
    assert ao_rate >= 0.98 * best
    assert ao_rate <= optimum * (1 + 1e-6)
    assert -trace.objectives[-1] >= best * (1 - 1e-4)
    assert trace.is_monotone()
    logger.info(f"✓ Grid search successful (ao {ao_rate:.4f}, grid {best:.4f})")


def test_09_bisection_closed_form():
    """rho* = max(rho_LB, exp(-s / (F K))) for slack s and K served vehicles."""
    logger.info("Testing extraction ratio bisection...")
    plan = BeamPlan.empty(np.array([[1, 1]]), 2)
    plan.comm_cov[0, 0] = 0.1 * np.eye(2)
    plan.sense_cov[0] = 0.05 * np.eye(2)
    params = make_params(tx_power=1.0, compute_coeff=2.0)
    slack = 1.0 - 0.3
    rho = bisect_extraction_ratio(plan, 0, 0.5, params, [1e3, 1e3])
    expected = max(0.5, math.exp(-slack / (2.0 * 2)))
    assert rho == pytest.approx(expected, abs=1e-6)

    assert bisect_extraction_ratio(plan, 0, 0.5, make_params(tx_power=0.3, compute_coeff=2.0), [1e3, 1e3]) == \
        pytest.approx(1.0, abs=1e-6)
    assert bisect_extraction_ratio(plan, 0, 0.81, make_params(tx_power=1e3, compute_coeff=2.0), [1e3, 1e3]) == 0.81
    with pytest.raises(InfeasibleError):
        bisect_extraction_ratio(plan, 0, 0.5, make_params(tx_power=0.1, compute_coeff=2.0), [1e3, 1e3])
    logger.info("✓ Extraction ratio bisection successful")


def test_10_gaussian_randomization():
    """Rank-one inputs return their principal direction; every candidate keeps Tr(W)."""
    logger.info("Testing Gaussian randomization...")
    rng = np.random.default_rng(9)
    u = rng.normal(size=4) + 1j * rng.normal(size=4)
    w_cov = 2.0 * np.outer(u, u.conj()) / np.vdot(u, u).real
    w = gaussian_randomization(w_cov, n_samples=20, rng=rng)
    assert np.linalg.norm(w) ** 2 == pytest.approx(2.0)
    assert abs(np.vdot(u, w)) / (np.linalg.norm(u) * np.linalg.norm(w)) == pytest.approx(1.0, abs=1e-9)

    g = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
    rank_two = g @ g.conj().T
    norms = []
    gaussian_randomization(rank_two, score=lambda x: norms.append(np.linalg.norm(x) ** 2) or 0.0,
                           n_samples=30, rng=rng)
    assert np.allclose(norms, np.real(np.trace(rank_two)))

    fallback = gaussian_randomization(rank_two, n_samples=10, rng=rng, feasible=lambda x: False)
    principal = np.linalg.eigh(rank_two)[1][:, -1]
    assert abs(np.vdot(principal, fallback)) / np.linalg.norm(fallback) == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(gaussian_randomization(np.zeros((3, 3)), rng=rng), 0.0)
    logger.info("✓ Gaussian randomization successful")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
