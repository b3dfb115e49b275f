from .base_agent import BaseAgent, PlanOutcome
from .methods import AGENTS, get_agent

__all__ = ["BaseAgent", "PlanOutcome", "AGENTS", "get_agent"]
