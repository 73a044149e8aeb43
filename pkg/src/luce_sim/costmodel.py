"""Gas schedule for every contract action and gas -> ETH -> USD conversion."""

from decimal import ROUND_DOWN, ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field, ValidationError, model_validator

from .config import settings
from .errors import InvalidConfig, UnknownAction

BASE_TX_GAS = 21000
GWEI = Decimal("1E-9")
ETH_DISPLAY = Decimal("1E-7")  # the cost table prints seven decimals, truncated
CENT = Decimal("0.01")


class GasEntry(BaseModel):
    """Gas figures of one contract action."""

    transaction_gas: int = Field(ge=0)
    execution_gas: int = Field(ge=0)
    label: Optional[str] = None
    in_table: bool = True  # part of the base cost table reproduction
    note: Optional[str] = None


class GasSchedule(BaseModel):
    """Per-action gas costs. Table actions come first, in table order."""

    entries: Dict[str, GasEntry]
    base_tx_gas: int = Field(default=BASE_TX_GAS, ge=0)

    @model_validator(mode="after")
    def _check_entries(self) -> "GasSchedule":
        for name, entry in self.entries.items():
            if entry.in_table and entry.transaction_gas < entry.execution_gas:
                raise ValueError(f"{name}: transaction gas below execution gas")
        return self

    @classmethod
    def default(cls) -> "GasSchedule":
        table = {
            "Deploy": GasEntry(transaction_gas=1339598, execution_gas=964030, label="Contract Deployment"),
            "publishData": GasEntry(transaction_gas=79652, execution_gas=56460),
            "setLicense": GasEntry(transaction_gas=24201, execution_gas=2737),
            "addDataRequester": GasEntry(transaction_gas=105842, execution_gas=84186),
            "updateData": GasEntry(transaction_gas=47756, execution_gas=24884),
            "renewToken": GasEntry(
                transaction_gas=16149,
                execution_gas=9685,
                note="reference table prints 0.0005268 ETH ($0.97), inconsistent with 16149 gas at 32 Gwei",
            ),
            "getLink": GasEntry(transaction_gas=24780, execution_gas=3316),
            "getLicense": GasEntry(transaction_gas=22384, execution_gas=1112),
        }
        # Not in the base cost table; extrapolated values, never printed in it.
        extrapolated = {
            "confirmUpdate": 30000,
            "unsubscribe": 25000,
            "register": 45000,
            "baseline.set": 41000,
        }
        for name, gas in extrapolated.items():
            table[name] = GasEntry(
                transaction_gas=gas,
                execution_gas=gas - BASE_TX_GAS,
                in_table=False,
                note="extrapolated",
            )
        return cls(entries=table)

    @classmethod
    def from_json(cls, path: Path) -> "GasSchedule":
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValidationError) as e:
            raise InvalidConfig(f"cannot load gas schedule from {path}: {e}") from e

    def gas_for(self, action: str) -> Tuple[int, int]:
        """Return ``(transaction_gas, execution_gas)`` for an action."""
        entry = self.entries.get(action)
        if entry is None:
            raise UnknownAction(f"no gas entry for action {action!r}")
        return entry.transaction_gas, entry.execution_gas

    def table_actions(self) -> List[str]:
        return [name for name, entry in self.entries.items() if entry.in_table]


class FiatRates(BaseModel):
    """Gas price and exchange rate used for conversion."""

    gas_price_gwei: Decimal = Field(default=Decimal("32"), ge=0)
    eth_usd: Decimal = Field(default=Decimal("1849.44"), ge=0)

    @classmethod
    def from_settings(cls) -> "FiatRates":
        return cls(gas_price_gwei=Decimal(settings.gas_price_gwei), eth_usd=Decimal(settings.eth_usd))


class CostRow(BaseModel):
    action: str
    transaction_gas: int
    execution_gas: int
    eth: Decimal
    usd: Decimal
    note: Optional[str] = None

    @property
    def eth_printed(self) -> Decimal:
        return self.eth.quantize(ETH_DISPLAY, rounding=ROUND_DOWN)


def gas_for(action: str, schedule: Optional[GasSchedule] = None) -> Tuple[int, int]:
    return (schedule or GasSchedule.default()).gas_for(action)


def tx_cost_eth(gas: int, rates: FiatRates) -> Decimal:
    """Exact ETH cost of ``gas`` units at the configured Gwei price."""
    if gas < 0:
        raise ValueError("gas must be non-negative")
    return Decimal(gas) * rates.gas_price_gwei * GWEI


def cost_usd(eth: Decimal, rates: FiatRates) -> Decimal:
    """USD value of an ETH amount, rounded half-up to cents."""
    if eth < 0:
        raise ValueError("eth must be non-negative")
    return (Decimal(eth) * rates.eth_usd).quantize(CENT, rounding=ROUND_HALF_UP)


def cost_report(schedule: GasSchedule, rates: FiatRates) -> List[CostRow]:
    """One row per table action: gas figures, ETH and USD."""
    rows = []
    for name in schedule.table_actions():
        entry = schedule.entries[name]
        eth = tx_cost_eth(entry.transaction_gas, rates)
        rows.append(CostRow(
            action=entry.label or name,
            transaction_gas=entry.transaction_gas,
            execution_gas=entry.execution_gas,
            eth=eth,
            usd=cost_usd(eth, rates),
            note=entry.note,
        ))
    logger.debug(f"Cost report with {len(rows)} rows at {rates.gas_price_gwei} Gwei")
    return rows


def scenario_total_gas(tx_log: Iterable) -> int:
    """Sum of gas used over a log of mined transactions."""
    return sum(tx.gas_used for tx in tx_log)


def render_table(rows: List[CostRow], rates: FiatRates) -> str:
    lines = [
        f"{'Action':<20} {'Tx gas':>12} {'Exec gas':>12} {'ETH':>11} {'USD':>9}  Note",
        "-" * 72,
    ]
    for row in rows:
        usd = f"${row.usd:f}"
        line = (
            f"{row.action:<20} {row.transaction_gas:>12} {row.execution_gas:>12} "
            f"{row.eth_printed:>11f} {usd:>9}  {row.note or ''}"
        )
        lines.append(line.rstrip())
    lines.append("-" * 72)
    lines.append(f"* {rates.gas_price_gwei:f} Gwei per gas, 1 ETH = ${rates.eth_usd:f}")
    return "\n".join(lines) + "\n"


def rows_to_frame(rows: List[CostRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "action": row.action,
                "transaction_gas": row.transaction_gas,
                "execution_gas": row.execution_gas,
                "eth": f"{row.eth:f}",
                "eth_printed": f"{row.eth_printed:f}",
                "usd": f"{row.usd:f}",
                "note": row.note or "",
            }
            for row in rows
        ],
        columns=["action", "transaction_gas", "execution_gas", "eth", "eth_printed", "usd", "note"],
    )


def render_csv(rows: List[CostRow]) -> str:
    return rows_to_frame(rows).to_csv(index=False, lineterminator="\n")
