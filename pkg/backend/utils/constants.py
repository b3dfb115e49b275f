"""
Physical constants, unit conversions and numerical floors. The scenario
defaults used by the simulator live in defaults.json next to this module.
"""

import math

SPEED_OF_LIGHT = 299_792_458.0  # m/s

RAD_TO_DEG = 180.0 / math.pi
DEG_TO_RAD = math.pi / 180.0

# Data sizes used for the CPU-frequency and DT-power tables
REFERENCE_DATA_BITS = [1e3, 2e3, 3e3]

# Numerical floors shared by the engines
PSD_FLOOR_REL = 1e-9
VARIANCE_FLOOR = 1e-12
FEASIBILITY_TOL = 1e-6

METHODS = ["hh", "greedy", "greedy-flip", "no-semantic", "nr1"]


def dbm_to_watts(dbm: float) -> float:
    """Convert a power level in dBm to Watts."""
    return 10.0 ** ((dbm - 30.0) / 10.0)