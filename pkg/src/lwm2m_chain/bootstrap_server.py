"""Bootstrap server: authenticates clients by PSK against the ClientStore and
hands out the DM-server URI plus credentials.

Every lookup hits the ledger fresh (no cache), so a provisioning response
always reflects the latest confirmed ClientStore state. Nothing from a
ClientRecord is ever written to a failure response.
"""

import logging
from dataclasses import dataclass
from urllib.parse import parse_qsl, urlsplit

from .contracts import ClientRecord, ContractError, args_get_client, decode_keyed_list
from .ledger import Ledger
from .wire.codec import CHANGED, Message, NOT_FOUND, POST, UNAUTHORIZED
from .wire.transport import SecureChannel
from .wireformat import Reader, Writer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BootstrapConfig:
    server_uri: str
    server_psk_identity: str
    server_psk_secret: bytes

    def encode(self) -> bytes:
        return (Writer().str_(self.server_uri).str_(self.server_psk_identity)
                .bytes_(self.server_psk_secret).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "BootstrapConfig":
        r = Reader(data)
        cfg = cls(r.str_(), r.str_(), r.bytes_())
        r.expect_end()
        return cfg

    @classmethod
    def from_client_record(cls, record: ClientRecord) -> "BootstrapConfig":
        return cls(record.server_uri, record.server_psk_identity, record.server_psk_secret)


def make_store_resolver(ledger: Ledger, secret_field: str, identity_field: str,
                        contract: str = "ClientStore"):
    """Resolve a PSK identity to its secret via the client store, trying the
    endpoint name first and the stored PSK identity second."""

    def resolve(identity: str) -> bytes | None:
        try:
            record = ClientRecord.decode(ledger.call(contract, "getClient",
                                                     args_get_client(identity)))
        except ContractError:
            record = None
        if record is not None:
            return getattr(record, secret_field)
        entries = decode_keyed_list(ledger.call(contract, "getAllClients"), ClientRecord)
        for _, rec in entries:
            if getattr(rec, identity_field) == identity:
                return getattr(rec, secret_field)
        return None

    return resolve


class BootstrapServer:
    def __init__(self, ledger: Ledger, bind=("127.0.0.1", 0), contract: str = "ClientStore",
                 on_send=None):
        self.ledger = ledger
        self.contract = contract
        self.channel = SecureChannel(
            bind=bind,
            request_handler=self._handle,
            psk_resolver=make_store_resolver(ledger, "bootstrap_psk_secret",
                                             "bootstrap_psk_identity", contract),
            on_send=on_send)

    @property
    def address(self):
        return self.channel.address

    def close(self) -> None:
        self.channel.close()

    def _handle(self, msg: Message, addr, session) -> Message:
        split = urlsplit(msg.path)
        if msg.code != POST or split.path != "/bs":
            return Message(code=NOT_FOUND)
        endpoint = dict(parse_qsl(split.query)).get("ep", "")
        if session is None or session.peer_identity != endpoint:
            return Message(code=UNAUTHORIZED)
        try:
            record = ClientRecord.decode(
                self.ledger.call(self.contract, "getClient", args_get_client(endpoint)))
        except ContractError:
            # record vanished after the handshake: fail closed, leak nothing
            return Message(code=NOT_FOUND)
        log.info("provisioned endpoint %s from %s", endpoint, addr)
        return Message(code=CHANGED, payload=BootstrapConfig.from_client_record(record).encode())
