"""
Base agent class for slot planning.
Each agent is one assignment method compared by the harness; the shared
machinery (AO settings, scoring, final optimization) lives here.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from ..services.planner import (
    AnnealSettings, AnnealState, AoSettings, AoTrace, Assignment, SlotProblem, alternating_optimize,
    greedy_assign,
)
from ..services.link_metrics import BeamPlan
from ..utils.config import ScenarioConfig

logger = logging.getLogger(__name__)


@dataclass
class PlanOutcome:
    """What an agent hands back to the harness for one slot."""

    assignment: Assignment
    plan: BeamPlan
    trace: AoTrace
    anneal: Optional[AnnealState] = None
    notes: Dict[str, Any] = field(default_factory=dict)


class BaseAgent:
    """Base class for assignment methods."""

    # Receive antennas the harness should model, None keeps the configured value
    n_rx_override: Optional[int] = None

    def __init__(self, agent_type: str, agent_name: str, config: ScenarioConfig):
        self.agent_type = agent_type
        self.agent_name = agent_name
        self.config = config
        self.logger = logging.getLogger(f"{agent_type}_{agent_name}")
        self.ao_settings = AoSettings(
            tolerance=config.ao_tolerance,
            max_iterations=config.ao_max_iterations,
            randomization_samples=config.randomization_samples,
        )
        self.score_settings = AoSettings(
            tolerance=config.ao_tolerance,
            max_iterations=config.anneal_ao_iterations,
            randomize=False,
        )
        self.anneal_settings = AnnealSettings(
            temperature=config.anneal_temperature,
            cooling_rate=config.anneal_cooling,
            t_min=config.anneal_t_min,
            n_max=config.anneal_max_iterations,
        )

    def prepare(self, problem: SlotProblem) -> SlotProblem:
        """Adjust the slot problem before planning; identity by default."""
        return problem

    def evaluate(self, problem: SlotProblem, assignment: Assignment, rng: np.random.Generator) -> float:
        """Short-AO objective of an assignment (lower is better)."""
        _, trace = alternating_optimize(problem, assignment, self.score_settings, rng)
        return trace.objective if math.isfinite(trace.objective) else trace.final_objective

    def finalize(self, problem: SlotProblem, assignment: Assignment, rng: np.random.Generator,
                 anneal: Optional[AnnealState] = None) -> PlanOutcome:
        """Full AO plus randomization on the chosen assignment."""
        plan, trace = alternating_optimize(problem, assignment, self.ao_settings, rng)
        self.logger.info(f"Assignment {assignment.serving}: {trace.iterations} AO iterations, "
                         f"objective {trace.final_objective:.6g} ({trace.reason})")
        return PlanOutcome(assignment=assignment, plan=plan, trace=trace, anneal=anneal)

    def greedy(self, problem: SlotProblem) -> Assignment:
        return greedy_assign(problem.vehicle_xy, problem.rsu_xy)

    def plan_slot(self, problem: SlotProblem, rng: np.random.Generator) -> PlanOutcome:
        """
        Choose an assignment and optimize the slot.

        Args:
            problem: Slot inputs at predicted poses
            rng: Random stream owned by this method and seed

        Returns:
            PlanOutcome: Assignment, final plan and traces
        """
        try:
            problem = self.prepare(problem)
            return self._plan(problem, rng)
        except Exception as e:
            self.logger.error(f"Error in plan_slot: {str(e)}")
            raise

    def _plan(self, problem: SlotProblem, rng: np.random.Generator) -> PlanOutcome:
        """
        Method-specific planning. This method should be implemented by subclasses.
        """
        raise NotImplementedError("Subclasses must implement _plan")
