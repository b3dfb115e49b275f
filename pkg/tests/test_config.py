"""
Test suite for scenario configuration parsing and validation.
"""

import json
import math
from datetime import datetime
import sys
from pathlib import Path
from typing import Dict, Any
from dotenv import load_dotenv
import logging
import pytest

# Add the project root directory to the Python path
project_root = str(Path(__file__).parent.parent)
sys.path.append(project_root)

from backend.utils.config import build_config, dump_config_text, load_config, parse_config_text
from backend.utils.constants import dbm_to_watts
from backend.utils.errors import ConfigurationError

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv(project_root + '/config/.env')

TEST_RESULTS_DIR = Path(project_root) / "test_results"
TEST_RUN_DIR = TEST_RESULTS_DIR / f"test_config_{datetime.now().strftime('%Y%m%d_%H%M%S')}"
TEST_RUN_DIR.mkdir(parents=True, exist_ok=True)

file_handler = logging.FileHandler(TEST_RUN_DIR / "test_config.log")
file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
logger.addHandler(file_handler)


def save_test_data(data: Dict[str, Any], filename: str) -> None:
    """Save test data to a JSON file."""
    filepath = TEST_RUN_DIR / filename
    with open(filepath, 'w') as f:
        json.dump(data, f, indent=2)
    logger.info(f"Saved test data to {filepath}")


def test_01_parse_config_text():
    """Comments and blank lines are skipped; list keys are split on commas."""
    logger.info("Testing scenario text parsing...")
    values = parse_config_text("# header\n\nn_tx = 16  # elements\nrsu_x_m = 0.0, 50.0\n")
    assert values == {"n_tx": "16", "rsu_x_m": ["0.0", "50.0"]}
    for text in ("n_tx 16", "unknown_key = 1", "n_tx = 4\nn_tx = 8"):
        with pytest.raises(ConfigurationError):
            parse_config_text(text)
    logger.info("✓ Scenario text parsing successful")


def test_02_scenario_file():
    """The shipped desk scenario loads and carries K = 3."""
    cfg = load_config(Path(project_root) / "config" / "scenario.cfg")
    assert cfg.vehicle_count == 3
    assert cfg.rsu_x_m == [0.0, 100.0]
    assert cfg.lane_centers_m == [2.5, 7.5]
    assert cfg.workload_model == "linear"
    with pytest.raises(ConfigurationError):
        load_config(Path(project_root) / "config" / "missing.cfg")


def test_03_overrides_and_validation():
    cfg = build_config({"n_tx": "16", "weight_epsilon": 1.0})
    assert cfg.n_tx == 16
    assert cfg.weight_epsilon == 1.0
    bad = [
        {"unknown": 1},
        {"weight_epsilon": 1.5},
        {"rsu_count": 3},
        {"speed_min_mps": 30.0},
        {"workload_model": "quadratic"},
        {"anneal_cooling": 1.0},
    ]
    for overrides in bad:
        with pytest.raises(ConfigurationError):
            build_config(overrides)


def test_04_derived_quantities():
    """Unit conversions and the aperture-preserving element spacing."""
    cfg = build_config()
    assert cfg.tx_power_w == pytest.approx(dbm_to_watts(25.0))
    assert cfg.tx_power_w == pytest.approx(0.316227766, rel=1e-6)
    assert cfg.noise_comm_w == pytest.approx(1e-6)
    assert cfg.wavelength_m == pytest.approx(299_792_458.0 / 50e9)
    assert cfg.array_aperture_m == pytest.approx(309 * cfg.wavelength_m / 2, rel=1e-3)
    assert cfg.element_spacing_m == pytest.approx(0.927 / 7)
    assert build_config({"array_aperture_m": 0.0}).element_spacing_m == pytest.approx(cfg.wavelength_m / 2)


def test_05_dump_and_fingerprint():
    """A dumped configuration parses back to the same fingerprint; any change alters it."""
    logger.info("Testing configuration fingerprint...")
    cfg = build_config({"vehicle_count": 4})
    text = dump_config_text(cfg)
    (TEST_RUN_DIR / "dumped.cfg").write_text(text)
    restored = load_config(TEST_RUN_DIR / "dumped.cfg")
    assert restored.fingerprint() == cfg.fingerprint()
    assert len(cfg.fingerprint()) == 16
    assert build_config({"vehicle_count": 5}).fingerprint() != cfg.fingerprint()
    save_test_data({"fingerprint": cfg.fingerprint()}, "05_fingerprint.json")
    logger.info("✓ Configuration fingerprint successful")


def test_06_dbm_conversion():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(0.0) == pytest.approx(1e-3)
    assert math.isclose(dbm_to_watts(-30.0), 1e-6)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
