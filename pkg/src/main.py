"""Main entry point for the LUCE simulator."""

import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Optional

import click
from loguru import logger

from .luce_sim.catalog import StateCache
from .luce_sim.config import settings
from .luce_sim.contracts import LuceRuntime
from .luce_sim.costmodel import FiatRates, GasSchedule
from .luce_sim.encoding import Address
from .luce_sim.errors import LuceError
from .luce_sim.harness import ScenarioConfig, cost_table, run_scenario, write_metrics
from .luce_sim.ledger import Chain, replay_chain
from .luce_sim.performance_monitor import PerformanceMonitor
from .luce_sim.protocol import audit_contract

EXIT_ERROR = 1
EXIT_VERIFICATION_FAILED = 2


def setup_logging():
    """Setup logging configuration."""
    logger.remove()  # Remove default handler

    # Console handler; quiet mode only shows WARNING and ERROR
    if not settings.quiet_mode:
        logger.add(
            sink=sys.stderr,
            level=settings.log_level,
            format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
        )
    else:
        logger.add(
            sink=sys.stderr,
            level="WARNING",
            format="<red>{time:HH:mm:ss}</red> | <level>{level: <8}</level> | <level>{message}</level>"
        )

    # File handler (always enabled for debugging)
    log_level = settings.log_level if settings.verbose_logging else "WARNING"
    logger.add(
        sink=settings.log_dir / "luce_sim.log",
        level=log_level,
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
        rotation="10 MB",
        retention="7 days"
    )


def _decimal(value: Optional[str], name: str) -> Optional[Decimal]:
    if value is None:
        return None
    try:
        return Decimal(value)
    except InvalidOperation as e:
        raise click.BadParameter(f"{value!r} is not a number", param_hint=name) from e


@click.group()
@click.option('--quiet', is_flag=True, help='Only warnings and errors on the console')
def cli(quiet: bool):
    """LUCE simulator - license accountability and compliance for data sharing."""
    if quiet:
        settings.quiet_mode = True
        settings.verbose_logging = False
    setup_logging()


@cli.command()
@click.option('--scenario', 'scenario_path', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Scenario JSON file')
@click.option('--seed', type=click.IntRange(0, 2**64 - 1), default=None,
              help='Base seed (overrides the scenario file)')
@click.option('--out', 'out_path', default=None, type=click.Path(dir_okay=False),
              help='Metrics CSV (default: <data_dir>/metrics.csv)')
@click.option('--artifacts', 'artifacts_dir', default=None, type=click.Path(file_okay=False),
              help='Directory for chain, catalog and complaint exports')
@click.option('--replications', type=click.IntRange(min=1), default=None,
              help='Replications per sweep point (overrides the scenario file)')
@click.option('--parallel/--no-parallel', default=None, help='Run replications in a process pool')
@click.option('--workers', type=click.IntRange(min=1), default=None, help='Process pool size')
def run(scenario_path: str, seed: Optional[int], out_path: Optional[str], artifacts_dir: Optional[str],
        replications: Optional[int], parallel: Optional[bool], workers: Optional[int]):
    """Run a scenario and write its metrics CSV."""
    try:
        config = ScenarioConfig.from_json(Path(scenario_path))
        overrides = {}
        if seed is not None:
            overrides['seed'] = seed
        if replications is not None:
            overrides['replications'] = replications
        if overrides:
            config = ScenarioConfig.model_validate({**config.model_dump(), **overrides})

        monitor = PerformanceMonitor()
        result = run_scenario(
            config,
            parallel=parallel,
            max_workers=workers,
            collect_artifacts=artifacts_dir is not None,
            monitor=monitor,
            progress=not settings.quiet_mode,
        )
        monitor.stop_monitoring()

        out = Path(out_path) if out_path else settings.data_dir / "metrics.csv"
        write_metrics(result.rows, out)
        monitor.save_report(out.with_name(out.stem + "_performance.json"))

        if artifacts_dir is not None:
            target = Path(artifacts_dir)
            target.mkdir(parents=True, exist_ok=True)
            for name, content in sorted(result.artifacts.items()):
                (target / name).write_text(content, encoding="utf-8")
                logger.info(f"Artifact saved to: {target / name}")

        logger.info(f"{config.experiment.value} finished: {len(result.rows)} rows")
    except LuceError as e:
        logger.error(f"Run failed: {e.code}: {e.message}")
        sys.exit(EXIT_ERROR)


@cli.command()
@click.option('--gas-price', default=None, help='Gas price in Gwei (default from settings)')
@click.option('--eth-usd', default=None, help='USD per ETH (default from settings)')
@click.option('--format', 'fmt', type=click.Choice(['table', 'csv']), default='table', help='Output format')
@click.option('--schedule', 'schedule_path', default=None, type=click.Path(exists=True, dir_okay=False),
              help='Gas schedule JSON (default: built-in base cost table)')
def costs(gas_price: Optional[str], eth_usd: Optional[str], fmt: str, schedule_path: Optional[str]):
    """Print the base cost table: gas, ETH and USD per contract action."""
    try:
        defaults = FiatRates.from_settings()
        rates = FiatRates(
            gas_price_gwei=_decimal(gas_price, '--gas-price') if gas_price is not None else defaults.gas_price_gwei,
            eth_usd=_decimal(eth_usd, '--eth-usd') if eth_usd is not None else defaults.eth_usd,
        )
        schedule = GasSchedule.from_json(Path(schedule_path)) if schedule_path else GasSchedule.default()
        click.echo(cost_table(rates, fmt, schedule), nl=False)
    except LuceError as e:
        logger.error(f"Cost table failed: {e.code}: {e.message}")
        sys.exit(EXIT_ERROR)
    except ValueError as e:
        logger.error(f"Invalid rates: {e}")
        sys.exit(EXIT_ERROR)


@cli.command()
@click.option('--chain', 'chain_path', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Exported chain (JSON Lines)')
@click.option('--gdpr', 'gdpr_contract', default=None, help='Audit update propagation on this dataset contract')
def verify(chain_path: str, gdpr_contract: Optional[str]):
    """Verify chain integrity, replay it, check cache coherence and optionally audit a contract."""
    try:
        chain = Chain.load_jsonl(Path(chain_path))
    except (OSError, ValueError, KeyError) as e:
        logger.error(f"Cannot read chain {chain_path}: {e}")
        sys.exit(EXIT_ERROR)

    failures = []
    if not chain.verify():
        failures.append("hash chain does not verify")
    runtime = LuceRuntime()
    failures.extend(replay_chain(chain, runtime))
    end_time = chain.head.mined_at + chain.head.execution_time
    failures.extend(StateCache().sync_chain(chain, runtime, end_time).check_coherence(runtime))

    if gdpr_contract is not None:
        try:
            contract = runtime.dataset(Address.from_hex(gdpr_contract))
        except (LuceError, ValueError) as e:
            logger.error(f"Cannot audit {gdpr_contract}: {e}")
            sys.exit(EXIT_ERROR)
        audit = audit_contract(contract.event_log, contract.token_period_s, end_time)
        for violation in audit.violations:
            failures.append(f"{violation.address} neither confirmed version {violation.version} "
                            f"nor lost access by t={violation.deadline:.1f}s")
        click.echo(f"GDPR audit of {gdpr_contract}: {'Compliant' if audit.compliant else 'NonCompliant'} "
                   f"({audit.open_updates} updates still within their deadline)")

    if failures:
        for failure in failures:
            logger.warning(failure)
        click.echo(f"FAILED: {len(failures)} problem(s) in {chain_path}")
        sys.exit(EXIT_VERIFICATION_FAILED)
    click.echo(f"OK: {len(chain)} blocks, {sum(len(b.txs) for b in chain)} transactions verified")


if __name__ == "__main__":
    cli()
