"""Management service: login semantics, asynchronous CRUD over the ledger,
role gates, first-run seeding, and the no-plaintext-password property."""

import os
import statistics
import time

import pytest

from conftest import FAST, confirm, http_request
from lwm2m_chain import tokens
from lwm2m_chain.ledger import Ledger
from lwm2m_chain.mgmt_service import (InvalidCredentials, MgmtService,
                                      SeedRefused, TokenSecretMissing)

SEED_PASSWORD = "first-light"


class MgmtHarness:
    def __init__(self, journal_path=None):
        self.ledger = Ledger(config=FAST, journal_path=journal_path)
        self.token_secret = os.urandom(32)
        self.svc = MgmtService(self.ledger, self.token_secret)
        tx_id = self.svc.bootstrap_admin("root", "root@example.org", SEED_PASSWORD)
        confirm(self.ledger, tx_id)

    def api(self, method, path, token=None, body=None):
        return http_request(self.svc.http_address, method, path, token=token, body=body)

    def login(self, wildcard, password):
        return self.api("POST", "/mgmt/login",
                        body={"wildcard": wildcard, "password": password})

    def token(self, wildcard="root", password=SEED_PASSWORD) -> str:
        resp = self.login(wildcard, password)
        assert resp.status == 200, resp.body
        return resp.json()["token"]

    def settle(self, resp):
        """Mine the pending mutation and return the final receipt response."""
        assert resp.status == 202, resp.body
        tx_id = resp.json()["tx_id"]
        self.ledger.mine_block()
        return self.api("GET", f"/mgmt/tx/{tx_id}", token=self.token())

    def add_user(self, username, role, password="pw-1234"):
        resp = self.api("POST", "/mgmt/users", token=self.token(),
                        body={"username": username, "email": f"{username}@example.org",
                              "password": password, "role": role})
        settled = self.settle(resp)
        assert settled.status == 200, settled.body
        return settled

    def close(self):
        self.svc.close()


@pytest.fixture
def mgmt():
    h = MgmtHarness()
    yield h
    h.close()


DEVICE = {
    "endpoint": "dev-1",
    "bootstrap_uri": "coap://127.0.0.1:5683",
    "server_uri": "coap://127.0.0.1:5783",
    "bootstrap_psk_identity": "dev-1",
    "bootstrap_psk_secret": "11" * 16,
    "server_psk_identity": "dev-1",
    "server_psk_secret": "22" * 16,
}


# -- login ---------------------------------------------------------------------


def test_login_with_username(mgmt):
    resp = mgmt.login("root", SEED_PASSWORD)
    assert resp.status == 200
    body = resp.json()
    assert body["role"] == "Admin" and body["sub"] == "root"
    assert body["expires_in"] == 3600
    assert tokens.verify_token(mgmt.token_secret, body["token"]) == ("root", "Admin")


def test_login_with_email(mgmt):
    resp = mgmt.login("root@example.org", SEED_PASSWORD)
    assert resp.status == 200
    assert resp.json()["sub"] == "root"


def test_wrong_password_and_unknown_user_indistinguishable(mgmt):
    wrong = mgmt.login("root", "nope")
    absent = mgmt.login("who", "nope")
    assert wrong.status == absent.status == 401
    assert wrong.json() == absent.json()


def test_login_timing_paths_within_10_percent(mgmt):
    def sample(wildcard):
        start = time.perf_counter()
        with pytest.raises(InvalidCredentials):
            mgmt.svc.login(wildcard, "wrong-password")
        return time.perf_counter() - start

    # interleave the two failure paths so scheduler drift hits both equally
    for _ in range(50):  # warm-up
        sample("root"), sample("absent-user")
    wrong_pw, user_absent = [], []
    for _ in range(600):
        wrong_pw.append(sample("root"))
        user_absent.append(sample("absent-user"))
    a, b = statistics.median(wrong_pw), statistics.median(user_absent)
    assert abs(a - b) <= 0.10 * max(a, b)


def test_login_without_secret_raises(mgmt):
    svc = MgmtService.__new__(MgmtService)
    svc.ledger, svc.token_secret = mgmt.ledger, b""
    with pytest.raises(TokenSecretMissing):
        svc.login("root", SEED_PASSWORD)


def test_login_requires_both_fields(mgmt):
    assert mgmt.api("POST", "/mgmt/login", body={"wildcard": "root"}).status == 400


# -- seeding ---------------------------------------------------------------------


def test_bootstrap_admin_second_run_noop(mgmt):
    assert mgmt.svc.bootstrap_admin("root", "root@example.org", SEED_PASSWORD) is None


def test_bootstrap_admin_refuses_foreign_store(mgmt):
    mgmt.add_user("worker", "Application")
    with pytest.raises(SeedRefused):
        mgmt.svc.bootstrap_admin("other-admin", "oa@example.org", "pw")


# -- device CRUD -------------------------------------------------------------------


def test_device_add_poll_list(mgmt):
    token = mgmt.token()
    resp = mgmt.api("POST", "/mgmt/devices", token=token, body=DEVICE)
    assert resp.status == 202
    tx_id = resp.json()["tx_id"]
    # pending until a block is mined
    assert mgmt.api("GET", f"/mgmt/tx/{tx_id}", token=token).json()["status"] == "Pending"
    mgmt.ledger.mine_block()
    settled = mgmt.api("GET", f"/mgmt/tx/{tx_id}", token=token)
    assert settled.status == 200 and settled.json()["status"] == "Applied"
    listed = mgmt.api("GET", "/mgmt/devices", token=token)
    assert listed.status == 200
    assert [d["endpoint"] for d in listed.json()] == ["dev-1"]
    assert listed.json()[0]["server_psk_secret"] == "22" * 16


def test_duplicate_device_surfaces_conflict(mgmt):
    token = mgmt.token()
    mgmt.settle(mgmt.api("POST", "/mgmt/devices", token=token, body=DEVICE))
    settled = mgmt.settle(mgmt.api("POST", "/mgmt/devices", token=token, body=DEVICE))
    assert settled.status == 409
    body = settled.json()
    assert body["status"] == "Reverted" and body["revert_reason"] == "client exists"


def test_device_remove(mgmt):
    token = mgmt.token()
    mgmt.settle(mgmt.api("POST", "/mgmt/devices", token=token, body=DEVICE))
    settled = mgmt.settle(mgmt.api("DELETE", "/mgmt/devices/dev-1", token=token))
    assert settled.status == 200
    assert mgmt.api("GET", "/mgmt/devices", token=token).json() == []


def test_device_bad_record_400(mgmt):
    resp = mgmt.api("POST", "/mgmt/devices", token=mgmt.token(),
                    body={"endpoint": "dev-1"})
    assert resp.status == 400


def test_unknown_tx_404_and_bad_hex_400(mgmt):
    token = mgmt.token()
    assert mgmt.api("GET", f"/mgmt/tx/{'00' * 32}", token=token).status == 404
    assert mgmt.api("GET", "/mgmt/tx/zz", token=token).status == 400


# -- user CRUD ----------------------------------------------------------------------


def test_add_user_and_login_with_ledger_role(mgmt):
    mgmt.add_user("app-1", "Application", password="app-pw")
    resp = mgmt.login("app-1", "app-pw")
    assert resp.status == 200 and resp.json()["role"] == "Application"


def test_role_change_takes_effect_at_next_login(mgmt):
    mgmt.add_user("flo", "User", password="flo-pw")
    before = mgmt.login("flo", "flo-pw").json()["role"]
    settled = mgmt.settle(mgmt.api("PUT", "/mgmt/users/flo", token=mgmt.token(),
                                   body={"role": "Application"}))
    assert settled.status == 200
    after = mgmt.login("flo", "flo-pw").json()["role"]
    assert (before, after) == ("User", "Application")


def test_update_password_rehashes(mgmt):
    mgmt.add_user("flo", "User", password="old-pw")
    mgmt.settle(mgmt.api("PUT", "/mgmt/users/flo", token=mgmt.token(),
                         body={"password": "new-pw"}))
    assert mgmt.login("flo", "old-pw").status == 401
    assert mgmt.login("flo", "new-pw").status == 200


def test_update_absent_user_conflict(mgmt):
    settled = mgmt.settle(mgmt.api("PUT", "/mgmt/users/nobody", token=mgmt.token(),
                                   body={"role": "User"}))
    assert settled.status == 409
    assert settled.json()["revert_reason"] == "user not found"


def test_duplicate_email_conflict(mgmt):
    mgmt.add_user("a-user", "User")
    mgmt.add_user("b-user", "User")
    settled = mgmt.settle(mgmt.api("PUT", "/mgmt/users/b-user", token=mgmt.token(),
                                   body={"email": "a-user@example.org"}))
    assert settled.status == 409
    assert settled.json()["revert_reason"] == "email in use"


def test_list_users_hides_credentials(mgmt):
    listed = mgmt.api("GET", "/mgmt/users", token=mgmt.token())
    assert listed.status == 200
    assert listed.json() == [{"username": "root", "email": "root@example.org",
                              "role": "Admin"}]


# -- anomalies ------------------------------------------------------------------------


def test_anomaly_submit_and_read_across_roles(mgmt):
    mgmt.add_user("app-1", "Application", password="app-pw")
    mgmt.add_user("viewer", "User", password="view-pw")
    app_token = mgmt.token("app-1", "app-pw")
    settled = mgmt.settle(mgmt.api(
        "POST", "/mgmt/anomalies", token=app_token,
        body={"endpoint": "dev-1", "payload": "temp spike", "timestamp_ms": 123456}))
    assert settled.status == 200
    listed = mgmt.api("GET", "/mgmt/anomalies", token=mgmt.token("viewer", "view-pw"))
    assert listed.status == 200
    assert listed.json() == [{"timestamp_ms": 123456, "endpoint": "dev-1",
                              "payload": "temp spike"}]


def test_anomaly_server_stamps_missing_timestamp(mgmt):
    before = int(time.time() * 1000)
    mgmt.settle(mgmt.api("POST", "/mgmt/anomalies", token=mgmt.token(),
                         body={"endpoint": "dev-1", "payload": "late reading"}))
    after = int(time.time() * 1000)
    [entry] = mgmt.api("GET", "/mgmt/anomalies", token=mgmt.token()).json()
    assert before <= entry["timestamp_ms"] <= after


def test_anomaly_empty_payload_400(mgmt):
    resp = mgmt.api("POST", "/mgmt/anomalies", token=mgmt.token(),
                    body={"endpoint": "dev-1", "payload": ""})
    assert resp.status == 400


def test_anomaly_order_is_confirmation_order(mgmt):
    token = mgmt.token()
    for i in range(3):
        mgmt.settle(mgmt.api("POST", "/mgmt/anomalies", token=token,
                             body={"endpoint": "dev-1", "payload": f"event {i}"}))
    listed = mgmt.api("GET", "/mgmt/anomalies", token=token).json()
    assert [e["payload"] for e in listed] == ["event 0", "event 1", "event 2"]


# -- role gates -----------------------------------------------------------------------


def test_role_gates(mgmt):
    mgmt.add_user("app-1", "Application", password="app-pw")
    mgmt.add_user("viewer", "User", password="view-pw")
    app, user = mgmt.token("app-1", "app-pw"), mgmt.token("viewer", "view-pw")
    for token in (app, user):
        assert mgmt.api("POST", "/mgmt/devices", token=token, body=DEVICE).status == 403
        assert mgmt.api("GET", "/mgmt/devices", token=token).status == 403
        assert mgmt.api("GET", "/mgmt/users", token=token).status == 403
        assert mgmt.api("PUT", "/mgmt/users/x", token=token, body={}).status == 403
    assert mgmt.api("POST", "/mgmt/anomalies", token=user,
                    body={"endpoint": "e", "payload": "p"}).status == 403
    assert mgmt.api("POST", "/mgmt/anomalies", token=app,
                    body={"endpoint": "e", "payload": "p"}).status == 202
    for token in (app, user):
        assert mgmt.api("GET", "/mgmt/anomalies", token=token).status == 200
    assert mgmt.api("GET", "/mgmt/anomalies", token=None).status == 401


# -- no plaintext passwords anywhere ----------------------------------------------------


def test_no_plaintext_password_on_chain_or_journal(tmp_path):
    journal = tmp_path / "chain.journal"
    h = MgmtHarness(journal_path=str(journal))
    try:
        h.add_user("carol", "User", password="hunter2-plaintext")
        assert h.login("carol", "hunter2-plaintext").status == 200
        journal_bytes = journal.read_bytes()
        assert b"hunter2-plaintext" not in journal_bytes
        assert SEED_PASSWORD.encode() not in journal_bytes
        for block in h.ledger.blocks:
            assert b"hunter2-plaintext" not in block.encode()
    finally:
        h.close()
