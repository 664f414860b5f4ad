"""Benchmark harness: latency of the ledger-backed flows versus stored-record
count, plus a plain in-memory baseline, emitted as CSV.

Schema: header `scenario,size,rep,elapsed_ms`, LF endings, UTF-8. Absolute
numbers are hardware-dependent; consumers should compare trends (and the
paper-emulation profile, where the artificial block interval dominates).
"""

import csv
import hashlib
import hmac
import io
import math
import os
import statistics
import time
from dataclasses import dataclass

from .bootstrap_server import BootstrapConfig, BootstrapServer
from .contracts import (AnomalyRecord, ClientRecord, UserRecord,
                        args_add_anomaly, args_add_client, args_add_user,
                        args_remove_client)
from .dm_server import DmServer
from .ledger import ChainConfig, Ledger
from .mgmt_service import MgmtService, hash_password
from .wire.codec import CREATED, CHANGED, Message, POST
from .wire.transport import SecureChannel

SCENARIO_NAMES = ("RegisterVsStored", "ClientAddRemove", "LoginVsUsers",
                  "AnomalyQueryVsCount", "AnomalyAdd", "InMemoryBaseline")

PROFILES = {
    "desk": ChainConfig(),
    "paper-emulation": ChainConfig.paper_emulation(),
}

CSV_HEADER = ["scenario", "size", "rep", "elapsed_ms"]


class BenchError(Exception):
    pass


class ScenarioSetupFailed(BenchError):
    pass


class EmptyInput(BenchError):
    pass


@dataclass(frozen=True)
class Row:
    scenario: str
    size: int
    rep: int
    elapsed_ms: float


@dataclass
class BenchScenario:
    name: str
    sizes: list[int]
    repetitions: int = 100
    chain_profile: str = "desk"

    def validate(self) -> None:
        if self.name not in SCENARIO_NAMES:
            raise ValueError(f"unknown scenario {self.name!r}")
        if not self.sizes or list(self.sizes) != sorted(self.sizes):
            raise ValueError("sizes must be non-empty and ascending")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.chain_profile not in PROFILES:
            raise ValueError(f"unknown chain profile {self.chain_profile!r}")


# -- fixtures -------------------------------------------------------------------


def _secret(tag: str, endpoint: str) -> bytes:
    return hashlib.sha256(f"{tag}:{endpoint}".encode()).digest()[:16]


def _client_record(endpoint: str, bootstrap_uri="coap://127.0.0.1:5683",
                   server_uri="coap://127.0.0.1:5783") -> ClientRecord:
    return ClientRecord(endpoint=endpoint, bootstrap_uri=bootstrap_uri,
                        server_uri=server_uri,
                        bootstrap_psk_identity=endpoint,
                        bootstrap_psk_secret=_secret("bs", endpoint),
                        server_psk_identity=endpoint,
                        server_psk_secret=_secret("dm", endpoint))


def _seed(ledger: Ledger, txs) -> None:
    """Batch-submit and confirm in one block; fail loudly on any revert."""
    tx_ids = [ledger.submit(contract, function, args, caller="bench-seed")
              for contract, function, args in txs]
    if tx_ids:
        ledger.mine_block()
    for tx_id in tx_ids:
        receipt = ledger.get_receipt(tx_id)
        if receipt is None or receipt.status != "Applied":
            raise ScenarioSetupFailed(f"seed transaction failed: {receipt}")


def _seed_clients(ledger: Ledger, n: int, prefix="stored", **record_kwargs) -> None:
    _seed(ledger, [("ClientStore", "addClient",
                    args_add_client(f"{prefix}-{i:05d}",
                                    _client_record(f"{prefix}-{i:05d}", **record_kwargs)))
                   for i in range(n)])


def _seed_users(ledger: Ledger, n: int) -> None:
    def user(i: int) -> UserRecord:
        username = f"user-{i:05d}"
        salt = hashlib.sha256(f"salt:{username}".encode()).digest()[:16]
        return UserRecord(username=username, email=f"{username}@bench.example",
                          password_hash=hash_password(salt, f"pw-{i}"),
                          salt=salt, role="User")

    _seed(ledger, [("UserStore", "addUser", args_add_user(f"user-{i:05d}", user(i)))
                   for i in range(n)])


def _seed_anomalies(ledger: Ledger, n: int) -> None:
    _seed(ledger, [("AnomalyStore", "addAnomaly",
                    args_add_anomaly(AnomalyRecord(timestamp_ms=1 + i,
                                                   endpoint=f"dev-{i % 16}",
                                                   payload=f"seed event {i}")))
                   for i in range(n)])


def _timed(fn) -> float:
    start = time.perf_counter()
    fn()
    return (time.perf_counter() - start) * 1000.0


# -- scenario bodies -------------------------------------------------------------


def _run_register_vs_stored(size, reps, config, rows_out):
    ledger = Ledger(config=config)
    bs = BootstrapServer(ledger)
    dm = DmServer(ledger, token_secret=os.urandom(32))
    try:
        bs_uri = f"coap://{bs.address[0]}:{bs.address[1]}"
        dm_uri = f"coap://{dm.udp_address[0]}:{dm.udp_address[1]}"
        _seed_clients(ledger, size, bootstrap_uri=bs_uri, server_uri=dm_uri)
        endpoint = "bench-reg"
        record = _client_record(endpoint, bootstrap_uri=bs_uri, server_uri=dm_uri)
        _seed(ledger, [("ClientStore", "addClient", args_add_client(endpoint, record))])

        def register_once():
            channel = SecureChannel()
            try:
                channel.handshake(bs.address, endpoint, record.bootstrap_psk_secret)
                resp = channel.request(bs.address,
                                       Message(code=POST, path=f"/bs?ep={endpoint}"))
                if resp.code != CHANGED:
                    raise ScenarioSetupFailed("bootstrap rejected")
                cfg = BootstrapConfig.decode(resp.payload)
                channel.handshake(dm.udp_address, cfg.server_psk_identity,
                                  cfg.server_psk_secret)
                resp = channel.request(dm.udp_address,
                                       Message(code=POST, path=f"/rd?ep={endpoint}&lt=60",
                                               payload=b"/0/0,/1/0,/3/0,/3303/0"))
                if resp.code != CREATED:
                    raise ScenarioSetupFailed("registration rejected")
            finally:
                channel.close()

        for rep in range(reps):
            rows_out.append(Row("RegisterVsStored", size, rep, _timed(register_once)))
    finally:
        dm.close()
        bs.close()


def _confirmed(ledger: Ledger, contract, function, args) -> float:
    """Elapsed ms from submission to a mined, applied receipt."""
    start = time.perf_counter()
    tx_id = ledger.submit(contract, function, args, caller="bench")
    ledger.mine_block()
    receipt = ledger.get_receipt(tx_id)
    elapsed = (time.perf_counter() - start) * 1000.0
    if receipt is None or receipt.status != "Applied":
        raise ScenarioSetupFailed(f"benchmark transaction failed: {receipt}")
    return elapsed


def _run_client_add_remove(size, reps, config, rows_out):
    ledger = Ledger(config=config)
    _seed_clients(ledger, size)
    endpoint = "bench-churn"
    record = _client_record(endpoint)
    rep = 0
    for _ in range(reps):
        rows_out.append(Row("ClientAddRemove", size, rep, _confirmed(
            ledger, "ClientStore", "addClient", args_add_client(endpoint, record))))
        rep += 1
        rows_out.append(Row("ClientAddRemove", size, rep, _confirmed(
            ledger, "ClientStore", "removeClient", args_remove_client(endpoint))))
        rep += 1


def _run_login_vs_users(size, reps, config, rows_out):
    ledger = Ledger(config=config)
    _seed_users(ledger, size)
    svc = MgmtService(ledger, token_secret=os.urandom(32))
    try:
        for rep in range(reps):
            i = rep % size
            rows_out.append(Row("LoginVsUsers", size, rep, _timed(
                lambda: svc.login(f"user-{i:05d}", f"pw-{i}"))))
    finally:
        svc.close()


def _run_anomaly_query_vs_count(size, reps, config, rows_out):
    ledger = Ledger(config=config)
    _seed_anomalies(ledger, size)
    for rep in range(reps):
        rows_out.append(Row("AnomalyQueryVsCount", size, rep, _timed(
            lambda: ledger.call("AnomalyStore", "getAllAnomalies"))))


def _run_anomaly_add(size, reps, config, rows_out):
    ledger = Ledger(config=config)
    _seed_anomalies(ledger, size)
    for rep in range(reps):
        record = AnomalyRecord(timestamp_ms=10_000 + rep, endpoint="bench",
                               payload=f"bench event {rep}")
        rows_out.append(Row("AnomalyAdd", size, rep, _confirmed(
            ledger, "AnomalyStore", "addAnomaly", args_add_anomaly(record))))


class InMemoryStore:
    """Plain-map stand-in for the ledger flows: the comparison baseline."""

    def __init__(self):
        self.clients: dict[str, ClientRecord] = {}
        self.users: dict[str, UserRecord] = {}
        self.anomalies: list[AnomalyRecord] = []

    def add_client(self, endpoint: str, record: ClientRecord) -> None:
        if endpoint in self.clients:
            raise KeyError("client exists")
        self.clients[endpoint] = record

    def remove_client(self, endpoint: str) -> None:
        del self.clients[endpoint]

    def login(self, wildcard: str, password: str) -> UserRecord | None:
        record = self.users.get(wildcard)
        if record is None:
            record = next((u for u in self.users.values() if u.email == wildcard), None)
        if record is None:
            return None
        if hmac.compare_digest(hash_password(record.salt, password), record.password_hash):
            return record
        return None

    def get_all_anomalies(self) -> list[AnomalyRecord]:
        return list(self.anomalies)

    def add_anomaly(self, record: AnomalyRecord) -> None:
        self.anomalies.append(record)


def _run_in_memory_baseline(size, reps, config, rows_out):
    store = InMemoryStore()
    for i in range(size):
        store.add_client(f"stored-{i:05d}", _client_record(f"stored-{i:05d}"))
    endpoint = "bench-churn"
    record = _client_record(endpoint)
    rep = 0
    for _ in range(reps):
        rows_out.append(Row("InMemoryBaseline", size, rep, _timed(
            lambda: store.add_client(endpoint, record))))
        rep += 1
        rows_out.append(Row("InMemoryBaseline", size, rep, _timed(
            lambda: store.remove_client(endpoint))))
        rep += 1


_RUNNERS = {
    "RegisterVsStored": _run_register_vs_stored,
    "ClientAddRemove": _run_client_add_remove,
    "LoginVsUsers": _run_login_vs_users,
    "AnomalyQueryVsCount": _run_anomaly_query_vs_count,
    "AnomalyAdd": _run_anomaly_add,
    "InMemoryBaseline": _run_in_memory_baseline,
}


def run_scenario(scenario: BenchScenario, config: ChainConfig | None = None) -> list[Row]:
    """Run one scenario over all its sizes; `config` overrides the profile
    (used by tests to avoid proof-of-work waits)."""
    scenario.validate()
    config = PROFILES[scenario.chain_profile] if config is None else config
    runner = _RUNNERS[scenario.name]
    rows: list[Row] = []
    for size in scenario.sizes:
        runner(size, scenario.repetitions, config, rows)
    return rows


# -- CSV and reporting -------------------------------------------------------------


def write_csv(rows: list[Row], fp) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([row.scenario, row.size, row.rep, f"{row.elapsed_ms:.3f}"])


def rows_to_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def read_csv(fp) -> list[Row]:
    reader = csv.reader(fp)
    header = next(reader, None)
    if header != CSV_HEADER:
        raise EmptyInput(f"bad or missing CSV header: {header}")
    return [Row(sc, int(size), int(rep), float(ms)) for sc, size, rep, ms in reader]


def percentile_95(values: list[float]) -> float:
    ordered = sorted(values)
    index = min(len(ordered) - 1, math.ceil(0.95 * len(ordered)) - 1)
    return ordered[index]


def report(rows: list[Row]) -> list[dict]:
    """Per (scenario, size): median and p95 elapsed, deterministic order."""
    if not rows:
        raise EmptyInput("no rows to report on")
    groups: dict[tuple[str, int], list[float]] = {}
    for row in rows:
        groups.setdefault((row.scenario, row.size), []).append(row.elapsed_ms)
    return [{"scenario": scenario, "size": size,
             "median_ms": statistics.median(values),
             "p95_ms": percentile_95(values)}
            for (scenario, size), values in sorted(groups.items())]


def format_report(summary: list[dict]) -> str:
    lines = [f"{'scenario':<22} {'size':>6} {'median_ms':>12} {'p95_ms':>12}"]
    for entry in summary:
        lines.append(f"{entry['scenario']:<22} {entry['size']:>6} "
                     f"{entry['median_ms']:>12.3f} {entry['p95_ms']:>12.3f}")
    return "\n".join(lines)
