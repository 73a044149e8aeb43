"""Tests for the simulated ledger: submission, mining, timing and verification."""

import copy
import json
import random

import pytest
from pydantic import ValidationError

from src.luce_sim.contracts import BASELINE_ADDRESS, REGISTRY_ADDRESS, LuceRuntime, Role
from src.luce_sim.encoding import Address
from src.luce_sim.errors import EmptyMempool, ExecutionFailed, MalformedAction, NotRegistered, UnknownSender, UnknownTx
from src.luce_sim.ledger import Block, Chain, Client, Ledger, MiningConfig, TxStatus, replay_chain


def _register(ledger, label="user", role="DataRequester"):
    account = ledger.create_account(label)
    ledger.submit(account, REGISTRY_ADDRESS, "register", {"role": role, "identity_ref": label})
    return account


def test_speedup_curve():
    cfg = MiningConfig()
    assert cfg.speedup(1) == 1
    assert cfg.speedup(8) == 8
    assert cfg.speedup(16) == 16
    assert cfg.speedup(32) == pytest.approx(3.2)


def test_mining_config_rejects_no_speedup():
    with pytest.raises(ValidationError):
        MiningConfig(threads=40)
    with pytest.raises(ValidationError):
        MiningConfig(latency_low_s=30.0, latency_high_s=20.0)


def test_genesis_only_chain_verifies(ledger):
    assert len(ledger.chain) == 1
    assert ledger.chain.head.prev_hash == "0" * 64
    assert ledger.verify_chain()


def test_submit_does_not_move_clock(ledger):
    _register(ledger)
    assert ledger.clock == 0.0
    assert ledger.mempool_size == 1
    assert ledger.submission_ops == 1


def test_submit_from_unknown_sender(ledger):
    with pytest.raises(UnknownSender):
        ledger.submit(Address.derive("stranger"), REGISTRY_ADDRESS, "register", {"role": "DataRequester",
                                                                                  "identity_ref": "x"})


def test_submit_rejects_unknown_action_and_target(ledger):
    account = ledger.create_account()
    with pytest.raises(MalformedAction):
        ledger.submit(account, REGISTRY_ADDRESS, "selfDestruct", {})
    with pytest.raises(MalformedAction):
        ledger.submit(account, Address.derive("nowhere"), "getLink", {})
    with pytest.raises(MalformedAction):
        ledger.submit(account, REGISTRY_ADDRESS, "register", {"role": "DataRequester"})
    assert ledger.mempool_size == 0


def test_mine_empty_mempool(ledger):
    with pytest.raises(EmptyMempool):
        ledger.mine_next()


def test_block_timing(ledger):
    _register(ledger)
    block = ledger.mine_next()
    assert 10.0 <= block.mining_latency <= 20.0
    assert block.mined_at == pytest.approx(block.mining_latency)
    assert block.execution_time == pytest.approx(45000 * 1e-6)
    assert ledger.clock == pytest.approx(block.mined_at + block.execution_time)


def test_threads_shorten_latency(runtime):
    slow = Ledger(runtime, MiningConfig(seed=3, threads=1))
    fast = Ledger(LuceRuntime(), MiningConfig(seed=3, threads=4))
    _register(slow)
    _register(fast)
    assert fast.mine_next().mining_latency == pytest.approx(slow.mine_next().mining_latency / 4)


def test_block_capacity_and_fifo(runtime):
    ledger = Ledger(runtime, MiningConfig(seed=1, block_capacity=3))
    accounts = [_register(ledger, f"user-{i}") for i in range(5)]
    first = ledger.mine_next()
    second = ledger.mine_next()
    assert [tx.sender for tx in first.txs] == accounts[:3]
    assert [tx.sender for tx in second.txs] == accounts[3:]
    assert second.mined_at > first.mined_at


def test_rejected_transaction_keeps_error_code(ledger):
    account = ledger.create_account()
    tx_id = ledger.submit(account, BASELINE_ADDRESS, "baseline.set", {"key": account.hex, "value": 1}).tx_id
    block = ledger.mine_next()
    receipt = ledger.receipt_of(tx_id)
    assert receipt.status == TxStatus.REJECTED
    assert receipt.error_code == "NotRegistered"
    assert block.txs == ()
    with pytest.raises(NotRegistered):
        receipt.raise_for_status()


def test_receipt_of_unknown_tx(ledger):
    with pytest.raises(UnknownTx):
        ledger.receipt_of("f" * 64)


def test_nonces_make_identical_calls_distinct(ledger):
    account = _register(ledger)
    first = ledger.submit(account, BASELINE_ADDRESS, "baseline.set", {"key": account.hex, "value": 1}).tx_id
    second = ledger.submit(account, BASELINE_ADDRESS, "baseline.set", {"key": account.hex, "value": 1}).tx_id
    assert first != second


def test_client_transact_and_view(ledger):
    account = _register(ledger)
    client = Client(ledger, account)
    client.wait([])
    assert client.transact(BASELINE_ADDRESS, "baseline.set", key=account.hex, value=9) is True
    assert client.call(BASELINE_ADDRESS, "baseline.get", key=account.hex) == 9
    assert ledger.view_ops == 1


def test_advance_to_never_moves_backwards(ledger):
    assert ledger.advance_to(100.0) == 100.0
    assert ledger.advance_to(50.0) == 100.0


def test_reseed_repeats_latencies():
    a = Ledger(LuceRuntime(), MiningConfig(seed=11))
    b = Ledger(LuceRuntime(), MiningConfig(seed=99))
    _register(a)
    _register(b)
    a.reseed(5)
    b.reseed(5)
    assert a.mine_next().mining_latency == b.mine_next().mining_latency


def test_same_seed_same_chain():
    def build():
        ledger = Ledger(LuceRuntime(), MiningConfig(seed=21))
        for i in range(4):
            _register(ledger, f"user-{i}")
            ledger.mine_next()
        return ledger.chain.to_jsonl()

    assert build() == build()


def test_export_load_and_replay(ledger, tmp_path):
    account = _register(ledger)
    ledger.mine_next()
    ledger.submit(account, BASELINE_ADDRESS, "baseline.set", {"key": account.hex, "value": 3})
    ledger.mine_next()
    path = ledger.export_jsonl(tmp_path / "chain.jsonl")

    loaded = Chain.load_jsonl(path)
    assert loaded.verify()
    assert [b.block_hash for b in loaded] == [b.block_hash for b in ledger.chain]
    assert replay_chain(loaded, LuceRuntime()) == []


def test_tampered_gas_breaks_verification(ledger, tmp_path):
    _register(ledger)
    ledger.mine_next()
    path = ledger.export_jsonl(tmp_path / "chain.jsonl")
    lines = path.read_text().splitlines()
    record = json.loads(lines[1])
    record["txs"][0]["gas_used"] = 1
    lines[1] = json.dumps(record)
    path.write_text("\n".join(lines) + "\n")

    assert not Chain.load_jsonl(path).verify()


def test_tampered_arguments_break_verification(ledger, tmp_path):
    _register(ledger, "honest")
    ledger.mine_next()
    path = ledger.export_jsonl(tmp_path / "chain.jsonl")
    text = path.read_text().replace('"identity_ref":"honest"', '"identity_ref":"forged"')
    path.write_text(text)

    assert not Chain.load_jsonl(path).verify()


def test_total_gas_sums_mined_transactions(ledger):
    for i in range(3):
        _register(ledger, f"user-{i}")
    ledger.mine_until_empty()
    assert ledger.total_gas() == 3 * 45000


def test_bad_argument_is_refused_before_the_block(ledger):
    account = _register(ledger, "a")
    with pytest.raises(MalformedAction):
        ledger.submit(account, BASELINE_ADDRESS, "baseline.set", {"key": "not-hex", "value": 1})
    block = ledger.mine_next()
    assert [tx.action for tx in block.txs] == ["register"]
    assert ledger.mempool_size == 0
    assert ledger.verify_chain()


def test_crash_during_execution_rolls_back_only_that_transaction(ledger, monkeypatch):
    setter = _register(ledger, "setter")
    ledger.mine_next()
    baseline = ledger.runtime.baseline

    def crash(ctx, key, value):
        baseline.values[key] = value
        raise RuntimeError("storage backend went away")

    monkeypatch.setattr(baseline, "set", crash)
    before = _register(ledger, "before")
    set_tx = ledger.submit(setter, BASELINE_ADDRESS, "baseline.set", {"key": setter.hex, "value": 5}).tx_id
    after = _register(ledger, "after")
    block = ledger.mine_next()

    assert [tx.sender for tx in block.txs] == [before, after]
    receipt = ledger.receipt_of(set_tx)
    assert receipt.status == TxStatus.REJECTED
    assert receipt.error_code == "ExecutionFailed"
    with pytest.raises(ExecutionFailed):
        receipt.raise_for_status()
    assert baseline.values == {}
    assert ledger.runtime.registry.role_of(after) is not None
    assert ledger.verify_chain()
    assert replay_chain(ledger.chain, LuceRuntime()) == []


def test_receipts_settle_only_once_the_block_is_appended(ledger, monkeypatch):
    account = ledger.create_account()
    tx_id = ledger.submit(account, REGISTRY_ADDRESS, "register", {"role": "DataRequester", "identity_ref": "a"}).tx_id

    def refuse(block):
        raise ValueError("block store is read-only")

    monkeypatch.setattr(ledger.chain, "append", refuse)
    with pytest.raises(ValueError):
        ledger.mine_next()
    assert ledger.receipt_of(tx_id).status == TxStatus.PENDING
    assert len(ledger.chain) == 1


HEX = "0123456789abcdef"
ALNUM = "abcdefghijklmnopqrstuvwxyz0123456789"


def _swap_char(rng, text, start=0, alphabet=HEX):
    i = rng.randrange(start, len(text))
    return text[:i] + rng.choice([c for c in alphabet if c != text[i]]) + text[i + 1:]


def _swap_digit(rng, number):
    digits = str(number)
    i = rng.randrange(len(digits))
    pool = "123456789" if i == 0 else "0123456789"
    return int(digits[:i] + rng.choice([c for c in pool if c != digits[i]]) + digits[i + 1:])


def _mutate(rng, records):
    """Change one character of one header, transaction or argument field; returns what was changed."""
    block = rng.choice(records)
    fields = ["block_hash", "prev_hash", "index"]
    if block["txs"]:
        fields += ["tx_id", "sender", "target", "action", "payload", "nonce", "gas_used", "args"]
    name = rng.choice(fields)
    where = f"{name} in block {block['index']}"
    if name in ("block_hash", "prev_hash"):
        block[name] = _swap_char(rng, block[name])
        return where
    if name == "index":
        block[name] = _swap_digit(rng, block[name])
        return where
    tx = rng.choice(block["txs"])
    args = {k: v for k, v in tx["args"].items() if isinstance(v, (str, int)) and not isinstance(v, bool) and v != ""}
    if name == "args" and not args:
        name = "payload"
    if name == "tx_id":
        tx[name] = _swap_char(rng, tx[name])
    elif name in ("sender", "target"):
        tx[name] = _swap_char(rng, tx[name], start=2)
    elif name in ("action", "payload"):
        tx[name] = _swap_char(rng, tx[name], alphabet=ALNUM)
    elif name in ("nonce", "gas_used"):
        tx[name] = _swap_digit(rng, tx[name])
    else:
        key = rng.choice(sorted(args))
        value = args[key]
        tx["args"][key] = _swap_digit(rng, value) if isinstance(value, int) else _swap_char(rng, value, alphabet=ALNUM)
        where = f"argument {key} of {tx['action']} in block {block['index']}"
    return where


def test_every_single_character_tamper_is_detected(shared):
    protocol = shared["protocol"]
    requester = protocol.register(Role.DATA_REQUESTER, "req-1")
    protocol.acquire(requester, shared["dataset_id"], "research")
    protocol.baseline_set(requester, requester, 7)
    protocol.request_erasure(shared["alice"], shared["provider"], shared["dataset_id"])
    records = [block.to_record() for block in protocol.ledger.chain]
    assert Chain([Block.from_record(r) for r in records]).verify()

    for seed in range(50):
        rng = random.Random(seed)
        tampered = copy.deepcopy(records)
        where = _mutate(rng, tampered)
        chain = Chain([Block.from_record(r) for r in tampered])
        assert not chain.verify() or replay_chain(chain, LuceRuntime()), f"seed {seed}: {where} went unnoticed"
