"""
API routes for the ISCSC simulation toolkit.
This module exposes the channel, CRB, simulation, tracking and sweep engines.
"""

import json
import logging
import math
import os
from functools import lru_cache
from typing import Any, Dict, Optional

import numpy as np
from fastapi import APIRouter, Depends, HTTPException

from ..utils.config import ScenarioConfig, build_config, load_config
from ..utils.constants import DEG_TO_RAD, SPEED_OF_LIGHT
from ..utils.errors import ISCSCError, http_status_for
from .models import (
    CrbRequest, CrbResponse, RayleighRequest, RayleighResponse, SimulateRequest, SimulateResponse,
    SweepRequest, SweepResponse, TrackBenchRequest, TrackBenchResponse,
)

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Initialize router
router = APIRouter(
    prefix="/api/v1",
    tags=["iscsc-simulation"],
    responses={404: {"description": "Not found"}},
)

# Import engines after router initialization to avoid circular imports
from ..services import harness
from ..services.nf_channel import ArrayGeometry, Pose, rayleigh_distance
from ..services.sensing_crb import crb_from_fim, fim


class ServiceManager:
    """
    Holds the server's base scenario configuration.
    The configuration is loaded on first use from ISCSC_CONFIG (or the defaults).
    """
    def __init__(self):
        self._base_config: Optional[ScenarioConfig] = None

    @property
    def base_config(self) -> ScenarioConfig:
        """Lazy initialization of the base configuration."""
        if self._base_config is None:
            path = os.getenv("ISCSC_CONFIG")
            solver = os.getenv("ISCSC_SOLVER")
            logger.info(f"Initializing scenario configuration from {path or 'defaults'}")
            self._base_config = load_config(path or None, {"solver": solver} if solver else None)
        return self._base_config

    def config_for(self, overrides: Optional[Dict[str, Any]]) -> ScenarioConfig:
        """Base configuration with request overrides, validated as a whole."""
        if not overrides:
            return self.base_config
        return build_config({**self.base_config.model_dump(), **overrides})


@lru_cache()
def get_service_manager() -> ServiceManager:
    """
    Dependency injection function for ServiceManager.
    Uses lru_cache to ensure we only create one instance per process.
    """
    return ServiceManager()


def _finite(value: Any) -> Any:
    """Replace NaN and infinities by None so responses stay valid JSON."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


def _frame_records(frame) -> list:
    return _finite(json.loads(frame.to_json(orient="records")))


def _fail(where: str, e: Exception) -> HTTPException:
    status = http_status_for(e)
    logger.error(f"Error in {where}: {str(e)}", exc_info=not isinstance(e, ISCSCError))
    return HTTPException(status_code=status, detail=str(e))


@router.get("/config/defaults")
async def config_defaults(service_manager: ServiceManager = Depends(get_service_manager)) -> Dict[str, Any]:
    """The scenario configuration requests run against when they carry no overrides."""
    try:
        config = service_manager.base_config
        return {"fingerprint": config.fingerprint(), "config": config.model_dump()}
    except Exception as e:
        raise _fail("config_defaults", e)


@router.post("/rayleigh", response_model=RayleighResponse)
async def rayleigh(request: RayleighRequest) -> RayleighResponse:
    """Rayleigh (near-field boundary) distance of an aperture."""
    try:
        return RayleighResponse(
            rayleigh_distance_m=rayleigh_distance(request.aperture_m, request.carrier_freq_hz),
            wavelength_m=SPEED_OF_LIGHT / request.carrier_freq_hz,
        )
    except Exception as e:
        raise _fail("rayleigh", e)


@router.post("/crb", response_model=CrbResponse)
def crb(request: CrbRequest) -> CrbResponse:
    """
    CRB of distance and angle for one pose under an isotropic transmit covariance.

    Args:
        request (CrbRequest): Pose, reflection amplitude, array and power

    Returns:
        CrbResponse: Bounds in m^2 / deg^2 and their roots; null when unbounded
    """
    try:
        if request.spacing_m is None:
            geom = ArrayGeometry.half_wavelength(request.n_tx, request.n_rx, request.carrier_freq_hz)
        else:
            geom = ArrayGeometry.with_spacing(request.n_tx, request.n_rx, request.carrier_freq_hz, request.spacing_m)
        r_x = (request.tx_power_w / request.n_tx) * np.eye(request.n_tx)
        pose = Pose(request.angle_deg * DEG_TO_RAD, request.distance_m)
        report = crb_from_fim(fim(pose, request.beta_amplitude, r_x, request.t_obs, request.noise_var_w, geom))
        return CrbResponse(**_finite({
            "crb_dist_m2": report.crb_dist,
            "crb_angle_deg2": report.crb_angle_deg2,
            "rcrb_dist_m": report.rcrb_dist,
            "rcrb_angle_deg": report.rcrb_angle,
            "bounded": report.bounded,
        }))
    except Exception as e:
        raise _fail("crb", e)


@router.post("/simulate", response_model=SimulateResponse)
def simulate(request: SimulateRequest,
             service_manager: ServiceManager = Depends(get_service_manager)) -> SimulateResponse:
    """
    Run the closed loop for one method and seed.

    Infeasible slots come back flagged as degraded; a failing scenario
    (placement, configuration) is a 409 / 422.
    """
    try:
        config = service_manager.config_for(request.overrides)
        logger.info(f"Simulating {request.method} with seed {request.seed}")
        result = harness.run_simulation(config, request.method, request.seed, request.slots)
        return SimulateResponse(
            method=result.method,
            seed=result.seed,
            fingerprint=config.fingerprint(),
            scenario=result.scenario.to_dict(),
            records=[_finite(r.to_dict()) for r in result.records],
            summary=_finite(result.summary()),
        )
    except Exception as e:
        raise _fail("simulate", e)


@router.post("/track-bench", response_model=TrackBenchResponse)
def track_bench(request: TrackBenchRequest,
                service_manager: ServiceManager = Depends(get_service_manager)) -> TrackBenchResponse:
    """PF variants against EKF and UKF on shared truth and measurements."""
    try:
        config = service_manager.config_for(request.overrides)
        result = harness.track_bench(config, request.seeds, request.slots, request.particle_counts)
        return TrackBenchResponse(rows=_finite(result.rows), summary=_finite(result.summary))
    except Exception as e:
        raise _fail("track_bench", e)


@router.post("/sweep", response_model=SweepResponse)
def sweep(request: SweepRequest,
          service_manager: ServiceManager = Depends(get_service_manager)) -> SweepResponse:
    """Sweep one parameter and return per-run rows plus the aggregated summary."""
    try:
        config = service_manager.config_for(request.overrides)
        spec = harness.SweepSpec(parameter=request.vary, values=request.values, methods=request.methods,
                                 seeds=request.seeds, slots=request.slots)
        result = harness.run_experiment(spec, config)
        return SweepResponse(
            parameter=request.vary,
            fingerprint=result.fingerprint,
            failed_runs=result.failed_runs,
            rows=_frame_records(result.rows),
            summary=_frame_records(result.summary),
        )
    except Exception as e:
        raise _fail("sweep", e)


@router.get("/")
async def root():
    return {"message": "Root endpoint"}
