"""Blockchain-backed remote patient monitoring, simulated at desk scale."""
from .errors import MedchainError
from .scenario import Scenario, load_scenario
from .sim import Simulation, audit, run_scenario, verify_chain

__all__ = ["MedchainError", "Scenario", "Simulation", "audit", "load_scenario",
           "run_scenario", "verify_chain"]
__version__ = "0.1.0"
