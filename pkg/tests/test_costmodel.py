"""Tests for the gas schedule and fiat conversion."""

from decimal import Decimal

import pytest

from src.luce_sim.costmodel import (
    FiatRates,
    GasSchedule,
    cost_report,
    cost_usd,
    gas_for,
    render_csv,
    render_table,
    scenario_total_gas,
    tx_cost_eth,
)
from src.luce_sim.errors import InvalidConfig, UnknownAction

from .conftest import GOLDEN_DIR


def test_table_actions_in_order():
    assert GasSchedule.default().table_actions() == [
        "Deploy", "publishData", "setLicense", "addDataRequester",
        "updateData", "renewToken", "getLink", "getLicense",
    ]


def test_gas_for_known_and_unknown_actions():
    assert gas_for("addDataRequester") == (105842, 84186)
    assert gas_for("Deploy") == (1339598, 964030)
    with pytest.raises(UnknownAction):
        gas_for("selfDestruct")


def test_extrapolated_entries_stay_out_of_the_table():
    schedule = GasSchedule.default()
    assert schedule.gas_for("baseline.set") == (41000, 20000)
    assert "register" not in schedule.table_actions()
    assert schedule.entries["confirmUpdate"].note == "extrapolated"


def test_tx_cost_eth_is_exact():
    rates = FiatRates()
    assert tx_cost_eth(1339598, rates) == Decimal("0.042867136")
    assert tx_cost_eth(0, rates) == 0
    with pytest.raises(ValueError):
        tx_cost_eth(-1, rates)


def test_cost_usd_rounds_half_up_to_cents():
    rates = FiatRates()
    assert cost_usd(Decimal("0.042867136"), rates) == Decimal("79.28")
    assert cost_usd(Decimal("0.000516768"), rates) == Decimal("0.96")


def test_zero_gas_price_costs_nothing():
    rows = cost_report(GasSchedule.default(), FiatRates(gas_price_gwei=Decimal("0")))
    assert all(row.eth == 0 and row.usd == 0 for row in rows)


def test_cost_table_matches_golden():
    rates = FiatRates()
    rendered = render_table(cost_report(GasSchedule.default(), rates), rates)
    assert rendered == (GOLDEN_DIR / "cost_table.txt").read_text(encoding="utf-8")


def test_cost_csv_has_one_row_per_action():
    lines = render_csv(cost_report(GasSchedule.default(), FiatRates())).strip().split("\n")
    assert lines[0] == "action,transaction_gas,execution_gas,eth,eth_printed,usd,note"
    assert len(lines) == 9
    assert lines[1].startswith("Contract Deployment,1339598,964030,0.042867136,0.0428671,79.28")


def test_schedule_rejects_exec_gas_above_tx_gas(tmp_path):
    path = tmp_path / "schedule.json"
    path.write_text('{"entries": {"Deploy": {"transaction_gas": 10, "execution_gas": 20}}}')
    with pytest.raises(InvalidConfig):
        GasSchedule.from_json(path)


def test_scenario_total_gas(ledger, runtime):
    account = ledger.create_account("provider")
    ledger.submit(account, runtime.registry.address, "register", {"role": "DataProvider", "identity_ref": "p"})
    ledger.mine_next()
    assert scenario_total_gas(ledger.chain.transactions()) == 45000
