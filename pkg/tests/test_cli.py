"""
Test suite for the command-line surface.
"""

import json
from datetime import datetime
import sys
from pathlib import Path
from typing import Dict, Any
from dotenv import load_dotenv
import logging
import pandas as pd
import pytest

# Add the project root directory to the Python path
project_root = str(Path(__file__).parent.parent)
sys.path.append(project_root)

from backend.cli import build_parser, main
from backend.services.harness import REPORT_COLUMNS
from backend.utils.errors import EXIT_INFEASIBLE, EXIT_OK

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv(project_root + '/config/.env')

TEST_RESULTS_DIR = Path(project_root) / "test_results"
TEST_RUN_DIR = TEST_RESULTS_DIR / f"test_cli_{datetime.now().strftime('%Y%m%d_%H%M%S')}"
TEST_RUN_DIR.mkdir(parents=True, exist_ok=True)

file_handler = logging.FileHandler(TEST_RUN_DIR / "test_cli.log")
file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
logger.addHandler(file_handler)

SMALL_SET = ["n_tx=4", "n_rx=1", "vehicle_count=2", "particle_count=100", "ao_max_iterations=5"]


def save_test_data(data: Dict[str, Any], filename: str) -> None:
    """Save test data to a JSON file."""
    filepath = TEST_RUN_DIR / filename
    with open(filepath, 'w') as f:
        json.dump(data, f, indent=2)
    logger.info(f"Saved test data to {filepath}")


def test_01_parser():
    """Subcommands and their defaults."""
    parser = build_parser()
    args = parser.parse_args(["sweep", "--vary", "K", "--values", "2", "4", "--methods", "hh", "greedy"])
    assert args.vary == "K"
    assert args.values == [2.0, 4.0]
    assert args.methods == ["hh", "greedy"]
    assert args.seeds == 1 and args.workers == 1
    assert parser.parse_args(["simulate"]).method == "hh"
    with pytest.raises(SystemExit):
        parser.parse_args(["sweep", "--vary", "power", "--values", "1"])
    with pytest.raises(SystemExit):
        parser.parse_args(["simulate", "--method", "oracle"])


def test_02_sweep_then_report():
    """An analytic sweep writes the report, and report re-aggregates it."""
    logger.info("Testing sweep and report commands...")
    out = TEST_RUN_DIR / "sweep_f"
    code = main(["sweep", "--vary", "f", "--values", "1e9", "2e9", "--out", str(out)])
    assert code == EXIT_OK
    rows = pd.read_csv(out / "results.csv")
    assert list(rows.columns) == REPORT_COLUMNS
    assert len(rows) == 6

    before = json.loads((out / "summary.json").read_text())
    assert main(["report", "--out", str(out)]) == EXIT_OK
    after = json.loads((out / "summary.json").read_text())
    assert after["fingerprint"] == before["fingerprint"]
    assert len(after["summary"]) == len(before["summary"])
    logger.info("✓ Sweep and report commands successful")


def test_03_simulate_records():
    """simulate writes JSON-lines slot records that report summarizes."""
    logger.info("Testing simulate command...")
    out = TEST_RUN_DIR / "simulate"
    code = main(["simulate", "--method", "greedy", "--seed", "2", "--slots", "2", "--out", str(out),
                 "--set", *SMALL_SET])
    assert code == EXIT_OK
    records = (out / "records_greedy_seed2.jsonl").read_text().strip().splitlines()
    assert len(records) == 2
    summary = json.loads((out / "summary_greedy_seed2.json").read_text())
    assert summary["slots"] == 2

    assert main(["report", "--out", str(out)]) == EXIT_OK
    table = pd.read_csv(out / "records_summary.csv")
    assert table.method.tolist() == ["greedy"]
    logger.info("✓ Simulate command successful")


def test_04_exit_codes():
    """Invalid overrides and unplaceable scenarios exit with 2."""
    out = TEST_RUN_DIR / "failures"
    assert main(["simulate", "--out", str(out), "--set", "no_such_key=1"]) == EXIT_INFEASIBLE
    assert main(["simulate", "--out", str(out), "--set", "n_tx"]) == EXIT_INFEASIBLE
    assert main(["simulate", "--method", "greedy", "--slots", "1", "--out", str(out),
                 "--set", "vehicle_count=100"]) == EXIT_INFEASIBLE
    assert main(["report", "--out", str(TEST_RUN_DIR / "empty")]) == EXIT_INFEASIBLE


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
