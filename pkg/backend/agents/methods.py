"""
Assignment methods compared by the harness.

hh           greedy seed + simulated annealing with tabu list
greedy       nearest RSU
greedy-flip  greedy with each vehicle flipped to another RSU at random
no-semantic  hh with the extraction ratio pinned to 1
nr1          hh with a single receive antenna per vehicle
"""

import logging
from dataclasses import replace
from typing import Dict, Type

import numpy as np

from ..services.planner import SlotProblem, flip_assignment, hybrid_heuristic
from ..utils.config import ScenarioConfig
from ..utils.errors import ConfigurationError, InfeasibleError
from .base_agent import BaseAgent, PlanOutcome

logger = logging.getLogger(__name__)


class HybridAgent(BaseAgent):
    """Greedy seed refined by simulated annealing."""

    def __init__(self, config: ScenarioConfig, agent_name: str = "hh"):
        super().__init__(agent_type="agent", agent_name=agent_name, config=config)

    def _plan(self, problem: SlotProblem, rng: np.random.Generator) -> PlanOutcome:
        seed = self.greedy(problem)
        best, score, state = hybrid_heuristic(
            lambda a: self.evaluate(problem, a, rng), seed, self.anneal_settings, rng,
        )
        self.logger.info(f"SA picked {best.serving} (score {score:.6g}) over greedy {seed.serving}")
        outcome = self.finalize(problem, best, rng, anneal=state)
        outcome.notes["sa_evaluations"] = state.evaluations
        outcome.notes["sa_tabu"] = len(state.tabu)
        return outcome


class GreedyAgent(BaseAgent):
    """Nearest-RSU assignment."""

    def __init__(self, config: ScenarioConfig):
        super().__init__(agent_type="agent", agent_name="greedy", config=config)

    def _plan(self, problem: SlotProblem, rng: np.random.Generator) -> PlanOutcome:
        return self.finalize(problem, self.greedy(problem), rng)


class GreedyFlipAgent(BaseAgent):
    """Greedy plan with random flips, kept only when feasible."""

    def __init__(self, config: ScenarioConfig):
        super().__init__(agent_type="agent", agent_name="greedy-flip", config=config)

    def _plan(self, problem: SlotProblem, rng: np.random.Generator) -> PlanOutcome:
        seed = self.greedy(problem)
        flipped = flip_assignment(seed, self.config.flip_probability, rng)
        if flipped == seed:
            return self.finalize(problem, seed, rng)
        try:
            outcome = self.finalize(problem, flipped, rng)
            outcome.notes["flipped"] = True
            return outcome
        except InfeasibleError as e:
            self.logger.info(f"Flipped plan {flipped.serving} infeasible ({e.reason}), keeping greedy")
            return self.finalize(problem, seed, rng)


class NoSemanticAgent(HybridAgent):
    """Transmit raw data: rho = 1, no extraction power."""

    def __init__(self, config: ScenarioConfig):
        super().__init__(config, agent_name="no-semantic")

    def prepare(self, problem: SlotProblem) -> SlotProblem:
        return replace(problem, fixed_rho=1.0)


class SingleReceiveAgent(HybridAgent):
    """HH pipeline with MISO links."""

    n_rx_override = 1

    def __init__(self, config: ScenarioConfig):
        super().__init__(config, agent_name="nr1")


AGENTS: Dict[str, Type[BaseAgent]] = {
    "hh": HybridAgent,
    "greedy": GreedyAgent,
    "greedy-flip": GreedyFlipAgent,
    "no-semantic": NoSemanticAgent,
    "nr1": SingleReceiveAgent,
}


def get_agent(method: str, config: ScenarioConfig) -> BaseAgent:
    """Instantiate the agent for a method name."""
    try:
        cls = AGENTS[method]
    except KeyError:
        raise ConfigurationError(f"unknown method {method!r}, expected one of {sorted(AGENTS)}")
    return cls(config)
