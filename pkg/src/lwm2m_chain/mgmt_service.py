"""Management service: login against the UserStore, token issuance, and
device/user/anomaly administration as ledger transactions.

Mutations are asynchronous: the handler submits exactly one transaction and
answers 202 with its tx_id; callers poll GET /mgmt/tx/{tx_id} until the
receipt lands (Reverted surfaces as 409). The service keeps no authoritative
state of its own — replaying the chain reconstructs everything.
"""

import hashlib
import hmac
import logging
import os
import time

from .contracts import (AnomalyRecord, ClientRecord, ContractError, ROLES,
                        UserRecord, args_add_anomaly, args_add_client,
                        args_add_user, args_remove_client, args_update_user,
                        args_wildcard, decode_anomaly_list, decode_keyed_list)
from .httpkit import HttpApi, HttpError
from .ledger import Ledger, TxNotFound
from .tokens import DEFAULT_TTL_S, issue_token

log = logging.getLogger(__name__)

ALL_ROLES = frozenset(ROLES)
ANOMALY_WRITERS = frozenset({"Admin", "Application"})

# constant-shape work for the user-absent login path, so its timing matches
# the wrong-password path
_DUMMY_SALT = bytes(16)
_DUMMY_HASH = hashlib.sha256(_DUMMY_SALT + b"\x00invalid\x00").digest()
_DUMMY_USER = UserRecord(username="nobody", email="nobody@invalid",
                         password_hash=_DUMMY_HASH, salt=_DUMMY_SALT, role="User")


class MgmtError(Exception):
    pass


class InvalidCredentials(MgmtError):
    pass


class TokenSecretMissing(MgmtError):
    pass


class SeedRefused(MgmtError):
    pass


def hash_password(salt: bytes, password: str) -> bytes:
    return hashlib.sha256(salt + password.encode("utf-8")).digest()


def client_record_to_json(record: ClientRecord) -> dict:
    return {
        "endpoint": record.endpoint,
        "bootstrap_uri": record.bootstrap_uri,
        "server_uri": record.server_uri,
        "bootstrap_psk_identity": record.bootstrap_psk_identity,
        "bootstrap_psk_secret": record.bootstrap_psk_secret.hex(),
        "server_psk_identity": record.server_psk_identity,
        "server_psk_secret": record.server_psk_secret.hex(),
    }


def client_record_from_json(obj: dict) -> ClientRecord:
    try:
        record = ClientRecord(
            endpoint=str(obj["endpoint"]),
            bootstrap_uri=str(obj["bootstrap_uri"]),
            server_uri=str(obj["server_uri"]),
            bootstrap_psk_identity=str(obj["bootstrap_psk_identity"]),
            bootstrap_psk_secret=bytes.fromhex(obj["bootstrap_psk_secret"]),
            server_psk_identity=str(obj["server_psk_identity"]),
            server_psk_secret=bytes.fromhex(obj["server_psk_secret"]),
        )
        record.validate()
    except (KeyError, TypeError, ValueError) as e:
        raise HttpError(400, f"bad device record: {e}") from None
    return record


def user_to_json(record: UserRecord) -> dict:
    # password hash and salt stay server-side
    return {"username": record.username, "email": record.email, "role": record.role}


def anomaly_to_json(record: AnomalyRecord) -> dict:
    return {"timestamp_ms": record.timestamp_ms, "endpoint": record.endpoint,
            "payload": record.payload}


class MgmtService:
    def __init__(self, ledger: Ledger, token_secret: bytes,
                 http_bind=("127.0.0.1", 0), cors_origin: str | None = None):
        self.ledger = ledger
        self.token_secret = token_secret
        self.api = HttpApi(token_secret=token_secret, cors_origin=cors_origin)
        self._register_routes()
        self.http = self.api.serve(http_bind)

    @property
    def http_address(self):
        return self.http.address

    def close(self) -> None:
        self.http.close()

    # -- core operations -----------------------------------------------------

    def login(self, wildcard: str, password: str) -> tuple[str, UserRecord]:
        """Returns (token, user record); raises InvalidCredentials on either a
        missing user or a wrong password, doing the same hashing work in both
        cases."""
        if not self.token_secret:
            raise TokenSecretMissing("token secret not configured")
        found = True
        try:
            blob = self.ledger.call("UserStore", "validateLogin", args_wildcard(wildcard))
        except ContractError:
            # mirror the found path's serialization cost
            blob, found = _DUMMY_USER.encode(), False
        record = UserRecord.decode(blob)
        supplied = hash_password(record.salt, password)
        if not hmac.compare_digest(supplied, record.password_hash) or not found:
            raise InvalidCredentials("invalid credentials")
        token = issue_token(self.token_secret, record.username, record.role,
                            ttl_s=DEFAULT_TTL_S)
        return token, record

    def bootstrap_admin(self, username: str, email: str, password: str) -> bytes | None:
        """First-run seeding: create one Admin when the UserStore is empty.
        Re-running with the same username is a no-op; any other non-empty
        store is refused. Returns the tx_id to await, or None."""
        users = decode_keyed_list(self.ledger.call("UserStore", "getAllUsers"), UserRecord)
        if any(name == username for name, _ in users):
            return None
        if users:
            raise SeedRefused("user store is not empty")
        salt = os.urandom(16)
        record = UserRecord(username=username, email=email,
                            password_hash=hash_password(salt, password),
                            salt=salt, role="Admin")
        return self.ledger.submit("UserStore", "addUser",
                                  args_add_user(username, record), caller="seed")

    # -- helpers ----------------------------------------------------------------

    def _accepted(self, tx_id: bytes):
        return 202, {"tx_id": tx_id.hex(), "status": "Pending"}

    def _find_user(self, username: str) -> UserRecord | None:
        users = decode_keyed_list(self.ledger.call("UserStore", "getAllUsers"), UserRecord)
        return next((u for name, u in users if name == username), None)

    # -- routes -------------------------------------------------------------------

    def _register_routes(self) -> None:
        api = self.api

        @api.route("POST", "/mgmt/login")
        def login(req):
            body = req.json() or {}
            wildcard, password = body.get("wildcard"), body.get("password")
            if not isinstance(wildcard, str) or not isinstance(password, str):
                raise HttpError(400, "wildcard and password required")
            try:
                token, record = self.login(wildcard, password)
            except InvalidCredentials:
                raise HttpError(401, "invalid credentials") from None
            return 200, {"token": token, "sub": record.username,
                         "role": record.role, "expires_in": DEFAULT_TTL_S}

        @api.route("GET", "/mgmt/tx/{tx_id}", roles=ALL_ROLES)
        def tx_status(req):
            try:
                tx_id = bytes.fromhex(req.params["tx_id"])
            except ValueError:
                raise HttpError(400, "tx_id must be hex") from None
            try:
                receipt = self.ledger.get_receipt(tx_id)
            except TxNotFound:
                raise HttpError(404, "unknown transaction") from None
            if receipt is None:
                return 200, {"tx_id": tx_id.hex(), "status": "Pending"}
            body = {"tx_id": tx_id.hex(), "status": receipt.status,
                    "gas_used": receipt.gas_used, "block_height": receipt.block_height,
                    "revert_reason": receipt.revert_reason}
            return (200 if receipt.status == "Applied" else 409), body

        # devices --------------------------------------------------------------

        @api.route("POST", "/mgmt/devices", roles={"Admin"})
        def add_device(req):
            record = client_record_from_json(req.json() or {})
            tx_id = self.ledger.submit("ClientStore", "addClient",
                                       args_add_client(record.endpoint, record),
                                       caller=req.sub)
            return self._accepted(tx_id)

        @api.route("GET", "/mgmt/devices", roles={"Admin"})
        def list_devices(req):
            entries = decode_keyed_list(self.ledger.call("ClientStore", "getAllClients"),
                                        ClientRecord)
            return 200, [client_record_to_json(r) for _, r in entries]

        @api.route("DELETE", "/mgmt/devices/{endpoint}", roles={"Admin"})
        def remove_device(req):
            tx_id = self.ledger.submit("ClientStore", "removeClient",
                                       args_remove_client(req.params["endpoint"]),
                                       caller=req.sub)
            return self._accepted(tx_id)

        # users ----------------------------------------------------------------

        @api.route("POST", "/mgmt/users", roles={"Admin"})
        def add_user(req):
            body = req.json() or {}
            password = body.get("password")
            if not isinstance(password, str) or not password:
                raise HttpError(400, "password required")
            salt = os.urandom(16)
            try:
                record = UserRecord(username=str(body.get("username", "")),
                                    email=str(body.get("email", "")),
                                    password_hash=hash_password(salt, password),
                                    salt=salt, role=str(body.get("role", "")))
                record.validate()
            except ValueError as e:
                raise HttpError(400, f"bad user record: {e}") from None
            tx_id = self.ledger.submit("UserStore", "addUser",
                                       args_add_user(record.username, record),
                                       caller=req.sub)
            return self._accepted(tx_id)

        @api.route("GET", "/mgmt/users", roles={"Admin"})
        def list_users(req):
            entries = decode_keyed_list(self.ledger.call("UserStore", "getAllUsers"),
                                        UserRecord)
            return 200, [user_to_json(r) for _, r in entries]

        @api.route("PUT", "/mgmt/users/{username}", roles={"Admin"})
        def update_user(req):
            username = req.params["username"]
            body = req.json() or {}
            current = self._find_user(username)
            # absent users still go through the ledger so the revert is on-chain,
            # but we need a base record to merge the partial update into
            base = current or UserRecord(username=username, email=f"{username}@invalid",
                                         password_hash=_DUMMY_HASH, salt=_DUMMY_SALT,
                                         role="User")
            salt, password_hash = base.salt, base.password_hash
            if "password" in body:
                if not isinstance(body["password"], str) or not body["password"]:
                    raise HttpError(400, "password must be a non-empty string")
                salt = os.urandom(16)
                password_hash = hash_password(salt, body["password"])
            try:
                record = UserRecord(username=username,
                                    email=str(body.get("email", base.email)),
                                    password_hash=password_hash, salt=salt,
                                    role=str(body.get("role", base.role)))
                record.validate()
            except ValueError as e:
                raise HttpError(400, f"bad user record: {e}") from None
            tx_id = self.ledger.submit("UserStore", "updateUser",
                                       args_update_user(username, record),
                                       caller=req.sub)
            return self._accepted(tx_id)

        # anomalies ------------------------------------------------------------

        @api.route("POST", "/mgmt/anomalies", roles=ANOMALY_WRITERS)
        def add_anomaly(req):
            body = req.json() or {}
            payload = body.get("payload")
            if not isinstance(payload, str) or not payload:
                raise HttpError(400, "payload required")
            # client-supplied collection time wins; otherwise stamp receive time
            timestamp_ms = body.get("timestamp_ms") or int(time.time() * 1000)
            try:
                record = AnomalyRecord(timestamp_ms=int(timestamp_ms),
                                       endpoint=str(body.get("endpoint", "")),
                                       payload=payload)
                record.validate()
            except (TypeError, ValueError) as e:
                raise HttpError(400, f"bad anomaly: {e}") from None
            tx_id = self.ledger.submit("AnomalyStore", "addAnomaly",
                                       args_add_anomaly(record), caller=req.sub)
            return self._accepted(tx_id)

        @api.route("GET", "/mgmt/anomalies", roles=ALL_ROLES)
        def list_anomalies(req):
            records = decode_anomaly_list(self.ledger.call("AnomalyStore", "getAllAnomalies"))
            return 200, [anomaly_to_json(r) for r in records]
