"""Embedded hash-chained proof-of-work ledger with gas accounting and receipts.

Single-node stand-in for a public chain: blocks are mined locally, linked by
SHA-256, and journaled to an append-only file. Contract state is only ever
mutated inside mine_block(), so reads observe confirmed state exclusively.
"""

import hashlib
import os
import threading
import time
from dataclasses import dataclass, replace

from .contracts import Contract, ContractRevert, default_contracts
from .wireformat import Reader, Truncated, Writer, WireError

GENESIS_PREV = b"\x00" * 32

DEFAULT_GAS_LIMIT = 4_712_388   # matches the desk-scale transaction budget
DEFAULT_GAS_PRICE = 40

APPLIED = "Applied"
REVERTED = "Reverted"
OUT_OF_GAS = "OutOfGas"


class LedgerError(Exception):
    pass


class BadNonce(LedgerError):
    pass


class MalformedTransaction(LedgerError):
    pass


class UnknownContract(LedgerError):
    pass


class TxNotFound(LedgerError):
    pass


class JournalError(LedgerError):
    pass


class OutOfGasError(Exception):
    pass


@dataclass
class ChainConfig:
    difficulty_bits: int = 12
    block_interval_ms: int = 500
    gas_base: int = 21_000
    gas_per_stored_byte: int = 625
    gas_per_read_byte: int = 3

    def validate(self) -> None:
        if not 0 <= self.difficulty_bits <= 32:
            raise ValueError("difficulty_bits must be within [0, 32]")
        for name in ("block_interval_ms", "gas_base", "gas_per_stored_byte", "gas_per_read_byte"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def paper_emulation(cls) -> "ChainConfig":
        # Confirmation latency scaled to the public-testnet regime (~half a minute).
        return cls(block_interval_ms=30_000)

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "ChainConfig":
        if values.get("profile") == "paper-emulation":
            cfg = cls.paper_emulation()
        else:
            cfg = cls()
        for name in ("difficulty_bits", "block_interval_ms", "gas_base",
                     "gas_per_stored_byte", "gas_per_read_byte"):
            if name in values:
                cfg = replace(cfg, **{name: int(values[name])})
        cfg.validate()
        return cfg


class GasMeter:
    def __init__(self, limit: int, config: ChainConfig):
        self.limit = limit
        self.config = config
        self.used = 0

    def _charge(self, amount: int) -> None:
        if self.used + amount > self.limit:
            raise OutOfGasError()
        self.used += amount

    def charge_base(self) -> None:
        self._charge(self.config.gas_base)

    def charge_read(self, nbytes: int) -> None:
        self._charge(nbytes * self.config.gas_per_read_byte)

    def charge_store(self, nbytes: int) -> None:
        self._charge(nbytes * self.config.gas_per_stored_byte)


@dataclass(frozen=True)
class Transaction:
    contract: str
    function: str
    args: bytes
    caller: str
    gas_limit: int
    gas_price: int
    nonce: int
    tx_id: bytes = b""

    def signing_bytes(self) -> bytes:
        w = Writer()
        w.str_(self.contract).str_(self.function).bytes_(self.args).str_(self.caller)
        w.u64(self.gas_limit).u64(self.gas_price).u64(self.nonce)
        return w.getvalue()

    def with_id(self) -> "Transaction":
        return replace(self, tx_id=hashlib.sha256(self.signing_bytes()).digest())

    def encode(self) -> bytes:
        return self.signing_bytes() + self.tx_id

    @classmethod
    def decode(cls, data: bytes) -> "Transaction":
        r = Reader(data)
        tx = cls(contract=r.str_(), function=r.str_(), args=r.bytes_(), caller=r.str_(),
                 gas_limit=r.u64(), gas_price=r.u64(), nonce=r.u64(), tx_id=r.raw(32))
        r.expect_end()
        return tx


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp_ms: int
    txs: tuple
    pow_nonce: int
    hash: bytes = b""

    def header_bytes(self) -> bytes:
        w = Writer()
        w.u64(self.height).raw(self.prev_hash).u64(self.timestamp_ms)
        w.u32(len(self.txs))
        for tx in self.txs:
            w.bytes_(tx.encode())
        w.u64(self.pow_nonce)
        return w.getvalue()

    def compute_hash(self) -> bytes:
        return hashlib.sha256(self.header_bytes()).digest()

    def encode(self) -> bytes:
        return self.header_bytes() + self.hash

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        r = Reader(data)
        height, prev_hash, timestamp_ms = r.u64(), r.raw(32), r.u64()
        txs = tuple(Transaction.decode(r.bytes_()) for _ in range(r.u32()))
        pow_nonce = r.u64()
        block_hash = r.raw(32)
        r.expect_end()
        return cls(height, prev_hash, timestamp_ms, txs, pow_nonce, block_hash)


@dataclass(frozen=True)
class Receipt:
    tx_id: bytes
    status: str
    gas_used: int
    block_height: int
    revert_reason: str | None = None


def leading_zero_bits(digest: bytes) -> int:
    bits = 0
    for byte in digest:
        if byte == 0:
            bits += 8
            continue
        for shift in range(7, -1, -1):
            if byte >> shift:
                return bits + (7 - shift)
        break
    return bits


class Ledger:
    """Single-writer chain: submit/call are thread-safe; mine_block is the only
    state-mutating entry point and may run in a dedicated miner thread."""

    def __init__(self, config: ChainConfig | None = None, journal_path: str | None = None):
        self.config = config or ChainConfig()
        self.config.validate()
        self.journal_path = journal_path
        self._lock = threading.RLock()
        self._mine_lock = threading.Lock()
        self._contracts: dict[str, Contract] = default_contracts()
        self._blocks: list[Block] = []
        self._block_digests: list[bytes] = []
        self._receipts: dict[bytes, Receipt] = {}
        self._pending: dict[bytes, Transaction] = {}
        self._nonces: dict[str, int] = {}
        self._miner_thread: threading.Thread | None = None
        self._miner_stop = threading.Event()
        if journal_path and os.path.exists(journal_path) and os.path.getsize(journal_path):
            self._load_journal(journal_path)

    # -- transaction intake ------------------------------------------------

    def next_nonce(self, caller: str) -> int:
        with self._lock:
            pending_max = max((tx.nonce for tx in self._pending.values() if tx.caller == caller),
                              default=self._nonces.get(caller, 0))
            return max(pending_max, self._nonces.get(caller, 0)) + 1

    def submit_transaction(self, tx: Transaction) -> bytes:
        if tx.gas_limit <= 0:
            raise MalformedTransaction("gas_limit must be > 0")
        if not tx.contract or not tx.function:
            raise MalformedTransaction("contract and function must be non-empty")
        if tx.tx_id != hashlib.sha256(tx.signing_bytes()).digest():
            raise MalformedTransaction("tx_id does not match transaction contents")
        with self._lock:
            expected = self.next_nonce(tx.caller)
            if tx.nonce != expected:
                raise BadNonce(f"expected nonce {expected} for {tx.caller!r}, got {tx.nonce}")
            if tx.tx_id in self._pending or tx.tx_id in self._receipts:
                raise BadNonce("duplicate transaction")
            self._pending[tx.tx_id] = tx
            return tx.tx_id

    def submit(self, contract: str, function: str, args: bytes, caller: str,
               gas_limit: int = DEFAULT_GAS_LIMIT, gas_price: int = DEFAULT_GAS_PRICE) -> bytes:
        """Build a transaction with a fresh nonce and submit it atomically."""
        with self._lock:
            tx = Transaction(contract, function, args, caller, gas_limit, gas_price,
                             self.next_nonce(caller)).with_id()
            return self.submit_transaction(tx)

    # -- mining ------------------------------------------------------------

    def mine_block(self) -> Block:
        with self._mine_lock:
            started = time.monotonic()
            with self._lock:
                txs = tuple(self._pending.values())
                height = len(self._blocks)
                prev_hash = self._blocks[-1].hash if self._blocks else GENESIS_PREV
                prev_ts = self._blocks[-1].timestamp_ms if self._blocks else 0
            timestamp_ms = max(int(time.time() * 1000), prev_ts)
            block = self._proof_of_work(height, prev_hash, timestamp_ms, txs)
            remaining = self.config.block_interval_ms / 1000 - (time.monotonic() - started)
            if remaining > 0:
                time.sleep(remaining)
            with self._lock:
                for tx in txs:
                    self._pending.pop(tx.tx_id, None)
                    self._receipts[tx.tx_id] = self._execute(tx, height)
                    self._nonces[tx.caller] = max(self._nonces.get(tx.caller, 0), tx.nonce)
                self._blocks.append(block)
                self._block_digests.append(self.state_digest())
                if self.journal_path:
                    self._append_journal(block)
            return block

    def _proof_of_work(self, height: int, prev_hash: bytes, timestamp_ms: int, txs: tuple) -> Block:
        pow_nonce = 0
        while True:
            block = Block(height, prev_hash, timestamp_ms, txs, pow_nonce)
            digest = block.compute_hash()
            if leading_zero_bits(digest) >= self.config.difficulty_bits:
                return replace(block, hash=digest)
            pow_nonce += 1

    def _execute(self, tx: Transaction, block_height: int) -> Receipt:
        meter = GasMeter(tx.gas_limit, self.config)
        contract = self._contracts.get(tx.contract)
        snap = contract.snapshot() if contract is not None else None
        try:
            meter.charge_base()
            if contract is None:
                raise ContractRevert("unknown contract")
            contract.execute(tx.function, tx.args, meter)
        except ContractRevert as e:
            if contract is not None:
                contract.restore(snap)
            return Receipt(tx.tx_id, REVERTED, meter.used, block_height, e.reason)
        except OutOfGasError:
            if contract is not None:
                contract.restore(snap)
            return Receipt(tx.tx_id, OUT_OF_GAS, tx.gas_limit, block_height)
        return Receipt(tx.tx_id, APPLIED, meter.used, block_height)

    def start_auto_miner(self, mine_empty: bool = False) -> None:
        """Mine whenever transactions are pending (every block_interval_ms)."""
        if self._miner_thread is not None:
            return
        self._miner_stop.clear()

        def loop():
            while not self._miner_stop.is_set():
                if self._pending or mine_empty:
                    self.mine_block()
                else:
                    self._miner_stop.wait(0.01)

        self._miner_thread = threading.Thread(target=loop, name="lm2m-miner", daemon=True)
        self._miner_thread.start()

    def stop_auto_miner(self) -> None:
        if self._miner_thread is None:
            return
        self._miner_stop.set()
        self._miner_thread.join()
        self._miner_thread = None

    # -- reads ---------------------------------------------------------------

    def call(self, contract: str, function: str, args: bytes = b"") -> bytes:
        with self._lock:
            c = self._contracts.get(contract)
            if c is None:
                raise UnknownContract(f"unknown contract {contract!r}")
            return c.call(function, args)

    def get_receipt(self, tx_id: bytes) -> Receipt | None:
        """Receipt once mined, None while still pending; TxNotFound otherwise."""
        with self._lock:
            if tx_id in self._receipts:
                return self._receipts[tx_id]
            if tx_id in self._pending:
                return None
            raise TxNotFound(tx_id.hex())

    def wait_receipt(self, tx_id: bytes, timeout: float = 30.0) -> Receipt:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            receipt = self.get_receipt(tx_id)
            if receipt is not None:
                return receipt
            time.sleep(0.01)
        raise TimeoutError(f"transaction {tx_id.hex()} not mined within {timeout}s")

    @property
    def blocks(self) -> list[Block]:
        with self._lock:
            return list(self._blocks)

    @property
    def height(self) -> int:
        with self._lock:
            return len(self._blocks)

    def pending_count(self) -> int:
        with self._lock:
            return len(self._pending)

    def state_digest(self) -> bytes:
        h = hashlib.sha256()
        with self._lock:
            for name in sorted(self._contracts):
                h.update(name.encode())
                h.update(self._contracts[name].state_bytes())
        return h.digest()

    # -- verification ----------------------------------------------------------

    def verify_chain(self) -> tuple[bool, int | None]:
        """True iff every block invariant holds and replaying all transactions
        from genesis reproduces the current confirmed state."""
        with self._lock:
            blocks = list(self._blocks)
            digests = list(self._block_digests)
            current = self.state_digest()
        replay = Ledger(replace(self.config, difficulty_bits=0, block_interval_ms=0))
        prev_hash, prev_ts = GENESIS_PREV, 0
        for i, block in enumerate(blocks):
            if block.height != i or block.prev_hash != prev_hash:
                return False, i
            if block.compute_hash() != block.hash:
                return False, i
            if leading_zero_bits(block.hash) < self.config.difficulty_bits:
                return False, i
            if block.timestamp_ms < prev_ts:
                return False, i
            for tx in block.txs:
                if hashlib.sha256(tx.signing_bytes()).digest() != tx.tx_id:
                    return False, i
                replay._receipts[tx.tx_id] = replay._execute(tx, i)
            if i < len(digests) and replay.state_digest() != digests[i]:
                return False, i
            prev_hash, prev_ts = block.hash, block.timestamp_ms
        if blocks and replay.state_digest() != current:
            return False, len(blocks) - 1
        return True, None

    @classmethod
    def from_blocks(cls, blocks: list[Block], config: ChainConfig | None = None) -> "Ledger":
        """Ingest blocks without invariant checks; pair with verify_chain()."""
        ledger = cls(config=config)
        for block in blocks:
            for tx in block.txs:
                ledger._receipts[tx.tx_id] = ledger._execute(tx, block.height)
                ledger._nonces[tx.caller] = max(ledger._nonces.get(tx.caller, 0), tx.nonce)
            ledger._blocks.append(block)
            ledger._block_digests.append(ledger.state_digest())
        return ledger

    # -- journal -----------------------------------------------------------------

    def _append_journal(self, block: Block) -> None:
        frame = block.encode()
        with open(self.journal_path, "ab") as f:
            f.write(len(frame).to_bytes(4, "big") + frame)
            f.flush()
            os.fsync(f.fileno())

    def _load_journal(self, path: str) -> None:
        for block in read_journal(path):
            expected_height = len(self._blocks)
            prev_hash = self._blocks[-1].hash if self._blocks else GENESIS_PREV
            if (block.height != expected_height or block.prev_hash != prev_hash
                    or block.compute_hash() != block.hash
                    or leading_zero_bits(block.hash) < self.config.difficulty_bits):
                raise JournalError(f"journal block {expected_height} fails verification")
            for tx in block.txs:
                if hashlib.sha256(tx.signing_bytes()).digest() != tx.tx_id:
                    raise JournalError(f"bad tx_id in journal block {expected_height}")
                self._receipts[tx.tx_id] = self._execute(tx, block.height)
                self._nonces[tx.caller] = max(self._nonces.get(tx.caller, 0), tx.nonce)
            self._blocks.append(block)
            self._block_digests.append(self.state_digest())


def read_journal(path: str):
    """Yield blocks from an append-only journal file; JournalError on framing damage."""
    with open(path, "rb") as f:
        data = f.read()
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise JournalError("truncated frame length")
        size = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        if pos + size > len(data):
            raise JournalError("truncated frame")
        try:
            yield Block.decode(data[pos:pos + size])
        except (WireError, Truncated) as e:
            raise JournalError(f"undecodable block frame: {e}") from None
        pos += size


def verify_journal(path: str, config: ChainConfig) -> tuple[bool, int | None]:
    """Verify a journal file without trusting it: framing or decode damage
    counts as a failure at the first unreadable frame."""
    blocks: list[Block] = []
    try:
        for block in read_journal(path):
            blocks.append(block)
    except JournalError:
        return False, len(blocks)
    return Ledger.from_blocks(blocks, config).verify_chain()
