"""The three on-ledger stores and their record types.

State-changing functions run inside ledger transactions and signal failure by
raising ContractRevert, which the ledger turns into a Reverted receipt with a
full state rollback. Read-only functions raise ContractError subclasses
directly (no transaction, no rollback needed).
"""

from dataclasses import dataclass, field
from urllib.parse import urlparse

from .wireformat import Reader, Writer

ROLES = ("Admin", "User", "Application")

CONTRACT_NAMES = ("ClientStore", "AnomalyStore", "UserStore")


class ContractRevert(Exception):
    """Raised by a transaction function; the ledger rolls back and records Reverted."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ContractError(Exception):
    """Read-only call failure."""


class NotFoundError(ContractError):
    pass


class UnknownFunction(ContractError):
    pass


def _check_uri(uri: str, what: str) -> None:
    p = urlparse(uri)
    if not p.scheme or not p.hostname or p.port is None:
        raise ValueError(f"{what} must be scheme://host:port, got {uri!r}")


@dataclass(frozen=True)
class ClientRecord:
    endpoint: str
    bootstrap_uri: str
    server_uri: str
    bootstrap_psk_identity: str
    bootstrap_psk_secret: bytes
    server_psk_identity: str
    server_psk_secret: bytes

    def validate(self) -> None:
        if not self.endpoint:
            raise ValueError("endpoint must be non-empty")
        for name, secret in (("bootstrap_psk_secret", self.bootstrap_psk_secret),
                             ("server_psk_secret", self.server_psk_secret)):
            if not 16 <= len(secret) <= 64:
                raise ValueError(f"{name} must be 16-64 bytes, got {len(secret)}")
        _check_uri(self.bootstrap_uri, "bootstrap_uri")
        _check_uri(self.server_uri, "server_uri")

    def encode(self) -> bytes:
        w = Writer()
        w.str_(self.endpoint).str_(self.bootstrap_uri).str_(self.server_uri)
        w.str_(self.bootstrap_psk_identity).bytes_(self.bootstrap_psk_secret)
        w.str_(self.server_psk_identity).bytes_(self.server_psk_secret)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "ClientRecord":
        r = Reader(data)
        rec = cls(r.str_(), r.str_(), r.str_(), r.str_(), r.bytes_(), r.str_(), r.bytes_())
        r.expect_end()
        return rec


MAX_ANOMALY_PAYLOAD = 4096


@dataclass(frozen=True)
class AnomalyRecord:
    timestamp_ms: int
    endpoint: str
    payload: str

    def validate(self) -> None:
        if self.timestamp_ms <= 0:
            raise ValueError("timestamp_ms must be > 0")
        if not self.payload:
            raise ValueError("payload must be non-empty")
        if len(self.payload.encode("utf-8")) > MAX_ANOMALY_PAYLOAD:
            raise ValueError(f"payload exceeds {MAX_ANOMALY_PAYLOAD} bytes")

    def encode(self) -> bytes:
        return Writer().u64(self.timestamp_ms).str_(self.endpoint).str_(self.payload).getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "AnomalyRecord":
        r = Reader(data)
        rec = cls(r.u64(), r.str_(), r.str_())
        r.expect_end()
        return rec


@dataclass(frozen=True)
class UserRecord:
    username: str
    email: str
    password_hash: bytes
    salt: bytes
    role: str

    def validate(self) -> None:
        if not self.username:
            raise ValueError("username must be non-empty")
        if not self.email or "@" not in self.email:
            raise ValueError("email must contain '@'")
        if len(self.password_hash) != 32:
            raise ValueError("password_hash must be 32 bytes")
        if len(self.salt) != 16:
            raise ValueError("salt must be 16 bytes")
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")

    def encode(self) -> bytes:
        w = Writer()
        w.str_(self.username).str_(self.email)
        w.bytes_(self.password_hash).bytes_(self.salt).str_(self.role)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "UserRecord":
        r = Reader(data)
        rec = cls(r.str_(), r.str_(), r.bytes_(), r.bytes_(), r.str_())
        r.expect_end()
        return rec


class Contract:
    """Base: named state plus dispatch of transaction and read-only functions."""

    name = ""
    tx_functions: frozenset = frozenset()
    call_functions: frozenset = frozenset()

    def snapshot(self):
        raise NotImplementedError

    def restore(self, snap) -> None:
        raise NotImplementedError

    def state_bytes(self) -> bytes:
        """Canonical serialization of the full state, for digests and replay checks."""
        raise NotImplementedError

    def execute(self, function: str, args: bytes, meter) -> None:
        if function not in self.tx_functions:
            raise ContractRevert(f"unknown function {self.name}.{function}")
        meter.charge_read(len(args))
        getattr(self, "tx_" + function)(args, meter)

    def call(self, function: str, args: bytes) -> bytes:
        if function not in self.call_functions:
            raise UnknownFunction(f"unknown function {self.name}.{function}")
        return getattr(self, "call_" + function)(args)


def _encode_keyed_list(entries) -> bytes:
    w = Writer()
    w.u32(len(entries))
    for key, record in entries:
        w.str_(key).bytes_(record.encode())
    return w.getvalue()


def decode_keyed_list(data: bytes, record_cls):
    r = Reader(data)
    out = [(r.str_(), record_cls.decode(r.bytes_())) for _ in range(r.u32())]
    r.expect_end()
    return out


class ClientStore(Contract):
    name = "ClientStore"
    tx_functions = frozenset({"addClient", "removeClient"})
    call_functions = frozenset({"getClient", "getAllClients", "clientExists"})

    def __init__(self):
        self.clients: dict[str, ClientRecord] = {}

    def snapshot(self):
        return dict(self.clients)

    def restore(self, snap) -> None:
        self.clients = snap

    def state_bytes(self) -> bytes:
        return _encode_keyed_list(list(self.clients.items()))

    def tx_addClient(self, args: bytes, meter) -> None:
        r = Reader(args)
        endpoint, blob = r.str_(), r.bytes_()
        r.expect_end()
        try:
            record = ClientRecord.decode(blob)
            record.validate()
        except Exception as e:
            raise ContractRevert(f"bad client record: {e}") from None
        if record.endpoint != endpoint:
            raise ContractRevert("record endpoint does not match key")
        if endpoint in self.clients:
            raise ContractRevert("client exists")
        meter.charge_store(len(endpoint.encode()) + len(blob))
        self.clients[endpoint] = record

    def tx_removeClient(self, args: bytes, meter) -> None:
        r = Reader(args)
        endpoint = r.str_()
        r.expect_end()
        if endpoint not in self.clients:
            raise ContractRevert("client not found")
        meter.charge_store(len(endpoint.encode()))
        del self.clients[endpoint]

    def call_getClient(self, args: bytes) -> bytes:
        r = Reader(args)
        endpoint = r.str_()
        r.expect_end()
        if endpoint not in self.clients:
            raise NotFoundError(f"client {endpoint!r} not found")
        return self.clients[endpoint].encode()

    def call_getAllClients(self, args: bytes) -> bytes:
        return _encode_keyed_list(list(self.clients.items()))

    def call_clientExists(self, args: bytes) -> bytes:
        r = Reader(args)
        endpoint = r.str_()
        r.expect_end()
        return Writer().u8(1 if endpoint in self.clients else 0).getvalue()


class AnomalyStore(Contract):
    name = "AnomalyStore"
    tx_functions = frozenset({"addAnomaly"})
    call_functions = frozenset({"getAllAnomalies", "getNumAnomalies"})

    def __init__(self):
        self.anomalies: list[AnomalyRecord] = []

    def snapshot(self):
        return list(self.anomalies)

    def restore(self, snap) -> None:
        self.anomalies = snap

    def state_bytes(self) -> bytes:
        w = Writer()
        w.u32(len(self.anomalies))
        for rec in self.anomalies:
            w.bytes_(rec.encode())
        return w.getvalue()

    def tx_addAnomaly(self, args: bytes, meter) -> None:
        r = Reader(args)
        blob = r.bytes_()
        r.expect_end()
        try:
            record = AnomalyRecord.decode(blob)
            record.validate()
        except Exception as e:
            raise ContractRevert(f"bad anomaly record: {e}") from None
        meter.charge_store(len(blob))
        self.anomalies.append(record)

    def call_getAllAnomalies(self, args: bytes) -> bytes:
        return self.state_bytes()

    def call_getNumAnomalies(self, args: bytes) -> bytes:
        return Writer().u64(len(self.anomalies)).getvalue()


def decode_anomaly_list(data: bytes) -> list[AnomalyRecord]:
    r = Reader(data)
    out = [AnomalyRecord.decode(r.bytes_()) for _ in range(r.u32())]
    r.expect_end()
    return out


class UserStore(Contract):
    name = "UserStore"
    tx_functions = frozenset({"addUser", "updateUser"})
    call_functions = frozenset({"getAllUsers", "validateLogin", "userExists"})

    def __init__(self):
        self.users: dict[str, UserRecord] = {}

    def snapshot(self):
        return dict(self.users)

    def restore(self, snap) -> None:
        self.users = snap

    def state_bytes(self) -> bytes:
        return _encode_keyed_list(list(self.users.items()))

    def _email_taken(self, email: str, exclude_username: str | None = None) -> bool:
        return any(u.email == email and name != exclude_username
                   for name, u in self.users.items())

    def _decode_user_args(self, args: bytes) -> tuple[str, bytes, UserRecord]:
        r = Reader(args)
        username, blob = r.str_(), r.bytes_()
        r.expect_end()
        try:
            record = UserRecord.decode(blob)
            record.validate()
        except Exception as e:
            raise ContractRevert(f"bad user record: {e}") from None
        if record.username != username:
            raise ContractRevert("record username does not match key")
        return username, blob, record

    def tx_addUser(self, args: bytes, meter) -> None:
        username, blob, record = self._decode_user_args(args)
        if username in self.users or self._email_taken(record.email):
            raise ContractRevert("user exists")
        meter.charge_store(len(username.encode()) + len(blob))
        self.users[username] = record

    def tx_updateUser(self, args: bytes, meter) -> None:
        username, blob, record = self._decode_user_args(args)
        if username not in self.users:
            raise ContractRevert("user not found")
        if self._email_taken(record.email, exclude_username=username):
            raise ContractRevert("email in use")
        meter.charge_store(len(username.encode()) + len(blob))
        self.users[username] = record

    def call_getAllUsers(self, args: bytes) -> bytes:
        return _encode_keyed_list(list(self.users.items()))

    def call_validateLogin(self, args: bytes) -> bytes:
        r = Reader(args)
        wildcard = r.str_()
        r.expect_end()
        record = self.users.get(wildcard)
        if record is None:
            record = next((u for u in self.users.values() if u.email == wildcard), None)
        if record is None:
            raise NotFoundError("no such user")
        return record.encode()

    def call_userExists(self, args: bytes) -> bytes:
        r = Reader(args)
        wildcard = r.str_()
        r.expect_end()
        exists = wildcard in self.users or self._email_taken(wildcard)
        return Writer().u8(1 if exists else 0).getvalue()


def default_contracts() -> dict[str, Contract]:
    return {"ClientStore": ClientStore(), "AnomalyStore": AnomalyStore(), "UserStore": UserStore()}


# Argument encoders, shared by services and tests.

def args_add_client(endpoint: str, record: ClientRecord) -> bytes:
    return Writer().str_(endpoint).bytes_(record.encode()).getvalue()


def args_remove_client(endpoint: str) -> bytes:
    return Writer().str_(endpoint).getvalue()


def args_get_client(endpoint: str) -> bytes:
    return Writer().str_(endpoint).getvalue()


def args_add_anomaly(record: AnomalyRecord) -> bytes:
    return Writer().bytes_(record.encode()).getvalue()


def args_add_user(username: str, record: UserRecord) -> bytes:
    return Writer().str_(username).bytes_(record.encode()).getvalue()


args_update_user = args_add_user


def args_wildcard(wildcard: str) -> bytes:
    return Writer().str_(wildcard).getvalue()
