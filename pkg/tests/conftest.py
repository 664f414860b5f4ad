import hashlib
import http.client
import json
import os
import time

import pytest

from lwm2m_chain import tokens
from lwm2m_chain.bootstrap_server import BootstrapServer
from lwm2m_chain.contracts import (AnomalyRecord, ClientRecord, UserRecord,
                                   args_add_client)
from lwm2m_chain.device_sim import SimConfig, SimDevice
from lwm2m_chain.dm_server import DmServer
from lwm2m_chain.ledger import ChainConfig, Ledger

# Fast profile for unit tests: no PoW search, no artificial confirmation delay.
FAST = ChainConfig(difficulty_bits=0, block_interval_ms=0)


@pytest.fixture
def ledger():
    return Ledger(config=ChainConfig(difficulty_bits=0, block_interval_ms=0))


def make_client_record(endpoint="dev-1", **overrides) -> ClientRecord:
    fields = dict(
        endpoint=endpoint,
        bootstrap_uri="coap://127.0.0.1:5683",
        server_uri="coap://127.0.0.1:5783",
        bootstrap_psk_identity=endpoint,
        bootstrap_psk_secret=hashlib.sha256(f"bs:{endpoint}".encode()).digest()[:16],
        server_psk_identity=endpoint,
        server_psk_secret=hashlib.sha256(f"dm:{endpoint}".encode()).digest()[:16],
    )
    fields.update(overrides)
    return ClientRecord(**fields)


def make_user_record(username="alice", role="User", password="secret", **overrides) -> UserRecord:
    salt = hashlib.sha256(f"salt:{username}".encode()).digest()[:16]
    fields = dict(
        username=username,
        email=f"{username}@example.org",
        password_hash=hashlib.sha256(salt + password.encode()).digest(),
        salt=salt,
        role=role,
    )
    fields.update(overrides)
    return UserRecord(**fields)


def make_anomaly(payload="temperature spike", endpoint="dev-1", timestamp_ms=1_700_000_000_000) -> AnomalyRecord:
    return AnomalyRecord(timestamp_ms=timestamp_ms, endpoint=endpoint, payload=payload)


def confirm(ledger: Ledger, tx_id: bytes):
    """Mine until the receipt exists (single block suffices in tests)."""
    ledger.mine_block()
    return ledger.get_receipt(tx_id)


def wait_until(pred, timeout=5.0, interval=0.05) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(interval)
    return pred()


class HttpResult:
    def __init__(self, status: int, body: bytes):
        self.status = status
        self.body = body

    def json(self):
        return json.loads(self.body)


def http_request(addr, method, path, token=None, body=None) -> HttpResult:
    conn = http.client.HTTPConnection(addr[0], addr[1], timeout=10)
    headers = {}
    if token is not None:
        headers["Authorization"] = f"Bearer {token}"
    payload = None
    if body is not None:
        payload = json.dumps(body).encode()
        headers["Content-Type"] = "application/json"
    try:
        conn.request(method, path, body=payload, headers=headers)
        resp = conn.getresponse()
        return HttpResult(resp.status, resp.read())
    finally:
        conn.close()


class ServerStack:
    """In-process ledger + bootstrap server + DM server, with sim helpers."""

    def __init__(self, on_bootstrap_send=None, chain_config=FAST):
        self.ledger = Ledger(config=chain_config)
        self.token_secret = os.urandom(32)
        self.bootstrap = BootstrapServer(self.ledger, on_send=on_bootstrap_send)
        self.dm = DmServer(self.ledger, self.token_secret,
                           sweep_interval_s=0.2, ack_timeout=0.3, retries=2)
        self.sims: list[SimDevice] = []

    @property
    def bootstrap_uri(self) -> str:
        host, port = self.bootstrap.address
        return f"coap://{host}:{port}"

    @property
    def dm_uri(self) -> str:
        host, port = self.dm.udp_address
        return f"coap://{host}:{port}"

    def add_client(self, endpoint: str, **overrides) -> ClientRecord:
        record = make_client_record(endpoint, bootstrap_uri=self.bootstrap_uri,
                                    server_uri=self.dm_uri, **overrides)
        tx_id = self.ledger.submit("ClientStore", "addClient",
                                   args_add_client(endpoint, record), caller="test")
        receipt = confirm(self.ledger, tx_id)
        assert receipt.status == "Applied", receipt.revert_reason
        return record

    def sim(self, record: ClientRecord, *, start=True, on_send=None, **cfg) -> SimDevice:
        defaults = dict(lifetime_s=4, temp_period_s=0.3, temp_seed=1,
                        retry_backoff_s=0.2, ack_timeout_s=0.4, retries=2)
        defaults.update(cfg)
        device = SimDevice(SimConfig(
            endpoint=record.endpoint, bootstrap_uri=record.bootstrap_uri,
            bootstrap_psk_identity=record.bootstrap_psk_identity,
            bootstrap_psk_secret=record.bootstrap_psk_secret, **defaults),
            on_send=on_send)
        self.sims.append(device)
        if start:
            device.start()
        return device

    def token(self, role="Admin", sub="tester") -> str:
        return tokens.issue_token(self.token_secret, sub, role)

    def api(self, method, path, role="Admin", token=..., body=None) -> HttpResult:
        if token is ...:
            token = self.token(role)
        return http_request(self.dm.http_address, method, path, token=token, body=body)

    def close(self) -> None:
        for device in self.sims:
            device.stop()
        self.dm.close()
        self.bootstrap.close()


@pytest.fixture
def stack():
    st = ServerStack()
    yield st
    st.close()
