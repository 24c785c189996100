"""Round-based execution engine for the off-chain protocol."""
from .behaviors import HONEST, Behavior, Deviation
from .broadcast import AtomicBroadcastInstance, BroadcastOutcome, atomic_broadcast
from .messages import RoundMessage
from .party import Completion, Party
from .scenario import Scenario, ScenarioError, bundled_scenario, load_scenario, parse_scenario
from .world import World

__all__ = [
    "HONEST", "Behavior", "Deviation", "AtomicBroadcastInstance", "BroadcastOutcome",
    "atomic_broadcast", "RoundMessage", "Completion", "Party", "Scenario", "ScenarioError",
    "bundled_scenario", "load_scenario", "parse_scenario", "World",
]
