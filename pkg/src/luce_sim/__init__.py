"""LUCE simulator package: ledger, contracts, catalog, datastore, protocol and harness."""

from .config import Settings
from .contracts import LuceRuntime
from .harness import ScenarioConfig, run
from .ledger import Ledger, MiningConfig
from .protocol import LuceProtocol

__all__ = ["Settings", "LuceRuntime", "Ledger", "MiningConfig", "LuceProtocol", "ScenarioConfig", "run"]
