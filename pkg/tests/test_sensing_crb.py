"""
Test suite for the Fisher information and CRB computations.
"""

import json
import math
from datetime import datetime
import sys
from pathlib import Path
from typing import Dict, Any
from dotenv import load_dotenv
import logging
import numpy as np
import pytest
from scipy.optimize import least_squares

# Add the project root directory to the Python path
project_root = str(Path(__file__).parent.parent)
sys.path.append(project_root)

from backend.services.nf_channel import ArrayGeometry, Pose, realize_channel, steering_matrix
from backend.services.sensing_crb import (
    UNBOUNDED, CrbReport, FisherBlocks, crb_from_fim, fim, fim_coefficients, schur_complement, unit_scaling,
)
from backend.utils.constants import RAD_TO_DEG

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv(project_root + '/config/.env')

TEST_RESULTS_DIR = Path(project_root) / "test_results"
TEST_RUN_DIR = TEST_RESULTS_DIR / f"test_sensing_crb_{datetime.now().strftime('%Y%m%d_%H%M%S')}"
TEST_RUN_DIR.mkdir(parents=True, exist_ok=True)

file_handler = logging.FileHandler(TEST_RUN_DIR / "test_sensing_crb.log")
file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
logger.addHandler(file_handler)

GEOM = ArrayGeometry.half_wavelength(8, 2, 50e9)
POSE = Pose(1.2, 3.0)
BETA = 1e-3 * np.exp(0.4j)
T_OBS = 256
NOISE = 1e-6


def save_test_data(data: Dict[str, Any], filename: str) -> None:
    """Save test data to a JSON file."""
    filepath = TEST_RUN_DIR / filename
    with open(filepath, 'w') as f:
        json.dump(data, f, indent=2)
    logger.info(f"Saved test data to {filepath}")


def random_psd(rng: np.random.Generator, n: int, power: float = 1.0) -> np.ndarray:
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    r = g @ g.conj().T
    return power * r / np.real(np.trace(r))


def test_01_zero_covariance_is_unbounded():
    """Nothing transmitted: all blocks vanish and the bound is the UNBOUNDED sentinel."""
    logger.info("Testing zero covariance...")
    blocks = fim(POSE, BETA, np.zeros((8, 8), dtype=complex), T_OBS, NOISE, GEOM)
    assert np.allclose(blocks.full(), 0.0)
    report = crb_from_fim(blocks)
    assert report is UNBOUNDED
    assert not report.bounded
    logger.info("✓ Zero covariance successful")


def test_02_fim_is_symmetric_psd_and_linear():
    """FIM symmetric PSD; doubling R_x halves both CRBs."""
    logger.info("Testing FIM structure...")
    rng = np.random.default_rng(11)
    r_x = random_psd(rng, 8, 0.316)
    blocks = fim(POSE, BETA, r_x, T_OBS, NOISE, GEOM)
    full = blocks.full()
    assert np.allclose(full, full.T)
    assert np.linalg.eigvalsh(full).min() > -1e-8 * np.abs(full).max()
    assert np.allclose(blocks.j22, blocks.j22[0, 0] * np.eye(2))

    base = crb_from_fim(blocks)
    doubled = crb_from_fim(fim(POSE, BETA, 2 * r_x, T_OBS, NOISE, GEOM))
    assert base.bounded
    assert doubled.crb_dist == pytest.approx(base.crb_dist / 2, rel=1e-8)
    assert doubled.crb_angle == pytest.approx(base.crb_angle / 2, rel=1e-8)

    more_samples = crb_from_fim(fim(POSE, BETA, r_x, 2 * T_OBS, NOISE, GEOM))
    assert more_samples.crb_dist == pytest.approx(base.crb_dist / 2, rel=1e-8)
    save_test_data(base.to_dict(), "02_crb.json")
    logger.info("✓ FIM structure successful")


def test_03_diagonal_fim():
    """Decoupled blocks give CRB = 1 / J."""
    blocks = FisherBlocks(np.diag([4.0, 25.0]), np.zeros((2, 2)), 3.0 * np.eye(2), 1, 1.0, 1.0)
    report = crb_from_fim(blocks)
    assert report.crb_dist == pytest.approx(0.25)
    assert report.crb_angle == pytest.approx(0.04)
    assert report.rcrb_dist == pytest.approx(0.5)
    assert report.rcrb_angle == pytest.approx(0.2 * RAD_TO_DEG)
    assert report.crb_angle_deg2 == pytest.approx(0.04 * RAD_TO_DEG ** 2)


def test_04_schur_complement_edge_cases():
    """Nuisance coupling raises the bound; singular information is unbounded."""
    logger.info("Testing Schur complement...")
    coupled = FisherBlocks(np.diag([4.0, 4.0]), np.array([[1.0, 0.0], [0.0, 1.0]]), 2.0 * np.eye(2), 1, 1.0, 1.0)
    assert np.allclose(schur_complement(coupled), np.diag([3.5, 3.5]))
    assert crb_from_fim(coupled).crb_dist == pytest.approx(1 / 3.5)

    no_beta_info = FisherBlocks(np.eye(2), np.ones((2, 2)), np.zeros((2, 2)), 1, 1.0, 1.0)
    assert schur_complement(no_beta_info) is None
    assert crb_from_fim(no_beta_info) is UNBOUNDED

    rank_one = FisherBlocks(np.ones((2, 2)), np.zeros((2, 2)), np.eye(2), 1, 1.0, 1.0)
    assert crb_from_fim(rank_one) is UNBOUNDED
    logger.info("✓ Schur complement successful")


def test_05_coefficients_match_direct_fim():
    """The coefficient form contracted with R_x equals the direct FIM on random PSD matrices."""
    logger.info("Testing FIM coefficients...")
    rng = np.random.default_rng(5)
    channel = realize_channel(POSE, GEOM)
    coeffs = fim_coefficients(POSE, BETA, T_OBS, NOISE, GEOM, channel=channel)
    for g in (coeffs.j22, *coeffs.j11.reshape(-1, 8, 8), *coeffs.j12.reshape(-1, 8, 8)):
        assert np.allclose(g, g.conj().T)
    for _ in range(50):
        r_x = random_psd(rng, 8, float(rng.uniform(0.01, 1.0)))
        direct = fim(POSE, BETA, r_x, T_OBS, NOISE, GEOM, channel=channel)
        contracted = coeffs.contract(r_x)
        scale = np.abs(direct.full()).max()
        assert np.allclose(contracted.full(), direct.full(), atol=1e-9 * scale)
    logger.info("✓ FIM coefficients successful")


def test_06_unit_scaling_matches_weighted_trace():
    report = CrbReport(crb_dist=0.02, crb_angle=3e-6)
    t = unit_scaling(2.0, 0.5)
    crb = np.diag([report.crb_dist, report.crb_angle])
    assert np.trace(t @ crb @ t) == pytest.approx(report.weighted_trace(2.0, 0.5))
    assert report.weighted_trace() == pytest.approx(0.02 + 3e-6 * RAD_TO_DEG ** 2)


def test_07_ml_estimator_respects_bound():
    """Monte-Carlo ML of (distance, angle, beta) has MSE no smaller than the CRB."""
    logger.info("Testing ML estimator against the CRB...")
    geom = ArrayGeometry.with_spacing(4, 1, 50e9, spacing=0.1)
    pose = Pose(1.2, 2.0)
    beta = 1.0 + 0.5j
    t_obs, noise_var, trials = 32, 1e-2, 500
    rng = np.random.default_rng(2024)

    x = (rng.normal(size=(4, t_obs)) + 1j * rng.normal(size=(4, t_obs))) / math.sqrt(2)
    r_x = x @ x.conj().T / t_obs
    bound = crb_from_fim(fim(pose, beta, r_x, t_obs, noise_var, geom))
    assert bound.bounded

    def echo(theta: float, dist: float, b: complex) -> np.ndarray:
        a = steering_matrix(Pose(theta, dist), geom)
        return b * (a @ a.conj().T) @ x

    clean = echo(pose.angle, pose.distance, beta)
    errors = []
    for _ in range(trials):
        z = (rng.normal(size=clean.shape) + 1j * rng.normal(size=clean.shape)) * math.sqrt(noise_var / 2)
        y = clean + z

        def residual(p):
            r = y - echo(p[0], p[1], p[2] + 1j * p[3])
            return np.concatenate([r.real.ravel(), r.imag.ravel()])

        fit = least_squares(residual, [pose.angle, pose.distance, beta.real, beta.imag],
                            xtol=1e-14, ftol=1e-14, gtol=1e-14)
        errors.append((fit.x[1] - pose.distance, fit.x[0] - pose.angle))
    errors = np.asarray(errors)
    mse_dist, mse_angle = np.mean(errors[:, 0] ** 2), np.mean(errors[:, 1] ** 2)
    ratios = {"dist": mse_dist / bound.crb_dist, "angle": mse_angle / bound.crb_angle}
    save_test_data({"crb": bound.to_dict(), "ratios": ratios}, "07_ml_vs_crb.json")
    for name, ratio in ratios.items():
        assert 0.8 <= ratio < 3.0, f"{name} MSE / CRB = {ratio:.3f}"
    logger.info(f"✓ ML estimator respects bound ({ratios})")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
