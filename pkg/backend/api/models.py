"""
Request and response models of the simulation API.
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class OverridableRequest(BaseModel):
    """
    Base for requests that run against a scenario.

    Attributes:
        overrides (Optional[Dict[str, Any]]): Scenario keys replacing the server's
            configuration for this request; validated like a scenario file
    """
    overrides: Optional[Dict[str, Any]] = None


class RayleighRequest(BaseModel):
    aperture_m: float = Field(gt=0)
    carrier_freq_hz: float = Field(gt=0)


class RayleighResponse(BaseModel):
    rayleigh_distance_m: float
    wavelength_m: float


class CrbRequest(BaseModel):
    """
    Request model for a single-pose CRB evaluation.

    Attributes:
        angle_deg (float): Vehicle angle seen from the array, in (0, 180)
        distance_m (float): Vehicle distance
        beta_amplitude (float): |beta| of the reflection
        tx_power_w (float): Total transmit power spread isotropically over the array
        n_tx (int): Transmit elements
        n_rx (int): Receive elements of the vehicle (does not enter the CRB)
        carrier_freq_hz (float): Carrier frequency
        spacing_m (Optional[float]): Element spacing, half a wavelength when omitted
        t_obs (int): Echo samples
        noise_var_w (float): Sensing noise variance
    """
    angle_deg: float = Field(gt=0, lt=180)
    distance_m: float = Field(gt=0)
    beta_amplitude: float = Field(default=1e-3, gt=0)
    tx_power_w: float = Field(default=0.316, gt=0)
    n_tx: int = Field(default=8, ge=1)
    n_rx: int = Field(default=2, ge=1)
    carrier_freq_hz: float = Field(default=50e9, gt=0)
    spacing_m: Optional[float] = Field(default=None, gt=0)
    t_obs: int = Field(default=256, ge=1)
    noise_var_w: float = Field(default=1e-6, gt=0)


class CrbResponse(BaseModel):
    crb_dist_m2: Optional[float]
    crb_angle_deg2: Optional[float]
    rcrb_dist_m: Optional[float]
    rcrb_angle_deg: Optional[float]
    bounded: bool


class SimulateRequest(OverridableRequest):
    """
    Request model for a closed-loop simulation.

    Attributes:
        method (str): Assignment method ("hh", "greedy", "greedy-flip", "no-semantic", "nr1")
        seed (int): Run seed
        slots (Optional[int]): Number of slots, slot_count when omitted
    """
    method: str = "hh"
    seed: int = Field(default=0, ge=0)
    slots: Optional[int] = Field(default=None, ge=1)


class SimulateResponse(BaseModel):
    """
    Response model for a closed-loop simulation.

    Attributes:
        method (str): Method that was run
        seed (int): Run seed
        fingerprint (str): Hash of the effective configuration
        scenario (Dict): RSU and vehicle layout
        records (List[Dict]): One slot record per slot
        summary (Dict): Per-run averages
    """
    method: str
    seed: int
    fingerprint: str
    scenario: Dict[str, Any]
    records: List[Dict[str, Any]]
    summary: Dict[str, Any]


class TrackBenchRequest(OverridableRequest):
    seeds: List[int] = Field(default_factory=lambda: [0])
    slots: Optional[int] = Field(default=None, ge=1)
    particle_counts: List[int] = Field(default_factory=lambda: [500, 2000])


class TrackBenchResponse(BaseModel):
    rows: List[Dict[str, Any]]
    summary: List[Dict[str, Any]]


class SweepRequest(OverridableRequest):
    """
    Request model for a parameter sweep.

    Attributes:
        vary (str): "K" (Monte-Carlo over vehicle counts), "t_max" or "f" (closed form)
        values (List[float]): Sweep points
        methods (List[str]): Methods compared at each point
        seeds (List[int]): Seeds shared by every method
        slots (Optional[int]): Slots per run
    """
    vary: Literal["K", "t_max", "f"]
    values: List[float] = Field(min_length=1)
    methods: List[str] = Field(default_factory=lambda: ["hh"])
    seeds: List[int] = Field(default_factory=lambda: [0])
    slots: Optional[int] = Field(default=None, ge=1)


class SweepResponse(BaseModel):
    parameter: str
    fingerprint: str
    failed_runs: int
    rows: List[Dict[str, Any]]
    summary: List[Dict[str, Any]]
