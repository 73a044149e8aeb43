"""Shared fixtures for the LUCE simulator tests."""

from pathlib import Path

import pytest

from src.luce_sim.catalog import Descriptor
from src.luce_sim.contracts import License, LuceRuntime, Role
from src.luce_sim.datastore import RecordSet
from src.luce_sim.ledger import Ledger, MiningConfig
from src.luce_sim.protocol import LuceProtocol, RequesterBehavior

GOLDEN_DIR = Path(__file__).parent / "golden"
SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"
WEEK = 604_800.0
TOKEN_PERIOD = 2 * WEEK


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running scale checks (deselect with -m 'not slow')")


@pytest.fixture
def mining():
    return MiningConfig(seed=7)


@pytest.fixture
def runtime():
    return LuceRuntime(token_period_s=TOKEN_PERIOD)


@pytest.fixture
def ledger(runtime, mining):
    return Ledger(runtime, mining)


@pytest.fixture
def research_license():
    return License("CC-BY-NC", "Non-commercial research use only.", frozenset({"research"}))


@pytest.fixture
def records():
    return RecordSet.from_rows({
        "a-001": {"age": "54", "diagnosis": "C50"},
        "a-002": {"age": "61", "diagnosis": "E11"},
        "a-003": {"age": "37", "diagnosis": "J45"},
    })


@pytest.fixture
def protocol(mining):
    return LuceProtocol(mining=mining, token_period_s=TOKEN_PERIOD, renew_lead_time_s=3600.0)


@pytest.fixture
def shared(protocol, records, research_license):
    """A provider with one published dataset, two data subjects and an authority."""
    provider = protocol.register(Role.DATA_PROVIDER, "provider-0")
    alice, bob = protocol.register_many([
        (Role.DATA_SUBJECT, "alice", RequesterBehavior.COMPLIANT),
        (Role.DATA_SUBJECT, "bob", RequesterBehavior.COMPLIANT),
    ])
    authority = protocol.register(Role.SUPERVISORY_AUTHORITY, "authority-0")
    descriptor = Descriptor(title="Breast cancer cohort", description="Oncology registry extract",
                            keywords=["oncology", "registry"])
    contract, dataset_id = protocol.share_dataset(
        provider, records, descriptor, research_license,
        subjects={"alice": "a-001", "bob": "a-002"},
    )
    return {
        "protocol": protocol,
        "provider": provider,
        "alice": alice,
        "bob": bob,
        "authority": authority,
        "contract": contract,
        "dataset_id": dataset_id,
    }
