"""
Scenario configuration.

Scenario files are flat, ordered ``key = value`` text files whose keys carry
their units (``slot_length_s``, ``tx_power_dbm``, ``q1_angle_var_deg2`` ...).
Every key maps onto a field of ScenarioConfig; anything the model does not
know about is rejected.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .constants import dbm_to_watts, SPEED_OF_LIGHT
from .errors import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULTS_PATH = Path(__file__).parent / "defaults.json"


class ScenarioConfig(BaseModel):
    """Every tunable of a desk-scale scenario, with units in the field names."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    # Road and RSUs
    rsu_count: int = Field(ge=1)
    rsu_x_m: List[float]
    rsu_offset_m: float = Field(gt=0)
    road_length_m: float = Field(gt=0)
    road_width_m: float = Field(gt=0)
    lane_count: int = Field(ge=1)

    # Vehicles
    vehicle_count: int = Field(ge=1)
    vehicle_length_m: float = Field(gt=0)
    vehicle_width_m: float = Field(gt=0)
    min_gap_m: float = Field(gt=0)
    speed_min_mps: float = Field(gt=0)
    speed_max_mps: float = Field(gt=0)

    # Time
    slot_length_s: float = Field(gt=0)
    slot_count: int = Field(ge=1)

    # Array and radio
    carrier_freq_hz: float = Field(gt=0)
    n_tx: int = Field(ge=1)
    n_rx: int = Field(ge=1)
    array_aperture_m: float = Field(ge=0)
    tx_power_dbm: float
    noise_comm_dbm: float
    noise_sense_dbm: float
    sensing_samples: int = Field(ge=1)
    beta_ref_amplitude: float = Field(ge=0)
    beta_ref_distance_m: float = Field(gt=0)

    # Tracking noise (angle entries in degrees squared)
    q1_angle_var_deg2: float = Field(ge=0)
    q1_dist_var_m2: float = Field(ge=0)
    q1_vel_var_m2ps2: float = Field(ge=0)
    q1_beta_var: float = Field(ge=0)
    q2_angle_var_deg2: float = Field(ge=0)
    q2_dist_var_m2: float = Field(ge=0)
    q2_vel_var_m2ps2: float = Field(ge=0)
    particle_count: int = Field(ge=1)
    prior_cov_scale: float = Field(gt=0)

    # Semantic profile
    iota: float = Field(gt=0)
    bleu_floor: float = Field(gt=0, le=1)
    gram_weights: List[float]
    gram_precisions: List[float]

    # Computing and digital twin
    compute_coeff_w_per_nat: float = Field(ge=0)
    kappa: float = Field(ge=0)
    nu_dist_hz_per_m: float = Field(ge=0)
    nu_angle_hz_per_deg: float = Field(ge=0)
    nu_offset_var: float = Field(ge=0)
    workload_model: Literal["linear", "exponential"]
    workload_exp_base: float = Field(gt=1)
    cycles_per_bit_min: float = Field(gt=0)
    cycles_per_bit_max: float = Field(gt=0)
    data_bits_min: float = Field(gt=0)
    data_bits_max: float = Field(gt=0)
    t_max_s: float = Field(gt=0)
    f_max_hz: float = Field(gt=0)

    # Objective and optimizer
    weight_epsilon: float = Field(ge=0, le=1)
    crb_weight_dist: float = Field(gt=0)
    crb_weight_angle: float = Field(gt=0)
    ao_tolerance: float = Field(gt=0)
    ao_max_iterations: int = Field(ge=1)
    anneal_ao_iterations: int = Field(ge=1)
    anneal_temperature: float = Field(gt=0)
    anneal_cooling: float = Field(gt=0, lt=1)
    anneal_t_min: float = Field(gt=0)
    anneal_max_iterations: int = Field(ge=1)
    flip_probability: float = Field(ge=0, le=1)
    randomization_samples: int = Field(ge=1)
    solver: str

    seed: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ScenarioConfig":
        if len(self.rsu_x_m) != self.rsu_count:
            raise ValueError(f"rsu_x_m lists {len(self.rsu_x_m)} positions for rsu_count={self.rsu_count}")
        if self.speed_min_mps > self.speed_max_mps:
            raise ValueError("speed_min_mps exceeds speed_max_mps")
        if self.cycles_per_bit_min > self.cycles_per_bit_max:
            raise ValueError("cycles_per_bit_min exceeds cycles_per_bit_max")
        if self.data_bits_min > self.data_bits_max:
            raise ValueError("data_bits_min exceeds data_bits_max")
        if len(self.gram_weights) != len(self.gram_precisions):
            raise ValueError("gram_weights and gram_precisions differ in length")
        if any(w < 0 for w in self.gram_weights):
            raise ValueError("gram_weights must be nonnegative")
        if any(not (0 < p <= 1) for p in self.gram_precisions):
            raise ValueError("gram_precisions must lie in (0, 1]")
        return self

    # Derived quantities in SI units

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watts(self.tx_power_dbm)

    @property
    def noise_comm_w(self) -> float:
        return dbm_to_watts(self.noise_comm_dbm)

    @property
    def noise_sense_w(self) -> float:
        return dbm_to_watts(self.noise_sense_dbm)

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def element_spacing_m(self) -> float:
        """Aperture-preserving spacing, or half a wavelength when no aperture is set."""
        if self.array_aperture_m > 0 and self.n_tx > 1:
            return self.array_aperture_m / (self.n_tx - 1)
        return self.wavelength_m / 2

    @property
    def lane_centers_m(self) -> List[float]:
        lane_width = self.road_width_m / self.lane_count
        return [lane_width * (i + 0.5) for i in range(self.lane_count)]

    def fingerprint(self) -> str:
        """Stable short hash of the configuration, used in reports."""
        payload = json.dumps(self.model_dump(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _load_defaults() -> Dict[str, Any]:
    with open(DEFAULTS_PATH, "r") as f:
        return json.load(f)


def _coerce(key: str, raw: str) -> Any:
    """Split list-valued keys; leave scalar coercion to pydantic."""
    annotation = ScenarioConfig.model_fields[key].annotation
    if getattr(annotation, "__origin__", None) in (list, List):
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    Parse the flat key-value format into a dict of raw values.

    Args:
        text (str): File contents

    Returns:
        Dict[str, Any]: Keys in file order with unvalidated values

    Raises:
        ConfigurationError: On malformed lines, unknown keys or duplicates
    """
    values: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in ScenarioConfig.model_fields:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def build_config(overrides: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    """Merge overrides onto the desk-scale defaults and validate."""
    merged = _load_defaults()
    for key, value in (overrides or {}).items():
        if key not in ScenarioConfig.model_fields:
            raise ConfigurationError(f"unknown key {key!r}")
        merged[key] = _coerce(key, value) if isinstance(value, str) else value
    try:
        return ScenarioConfig(**merged)
    except ValidationError as e:
        raise ConfigurationError(str(e)) from e


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    """
    Load a scenario file, apply overrides and validate.

    Args:
        path: Scenario file; None uses the defaults alone
        overrides: Extra key/value pairs applied after the file

    Returns:
        ScenarioConfig: The validated configuration
    """
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r") as f:
                values = parse_config_text(f.read())
        except OSError as e:
            logger.error(f"Failed to read scenario file {path}: {str(e)}")
            raise ConfigurationError(f"cannot read {path}: {e}") from e
        logger.info(f"Loaded {len(values)} keys from {path}")
    values.update(overrides or {})
    return build_config(values)


def dump_config_text(config: ScenarioConfig) -> str:
    """Serialize a configuration back to the flat key-value format."""
    lines = []
    for key, value in config.model_dump().items():
        if isinstance(value, list):
            value = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
