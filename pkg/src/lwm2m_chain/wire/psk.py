"""PSK mutual authentication and per-session message integrity.

Replaces DTLS with a 3-message HMAC challenge-response over reserved paths
/hs/1 (HELLO), /hs/2 (CHALLENGE), /hs/3 (FINISH). Messages carry an 8-byte
HMAC-SHA256 tag once a session is established: integrity and authentication
only, NO confidentiality. Payloads travel in the clear.
"""

import hmac
import hashlib
import os
from dataclasses import dataclass

NONCE_LEN = 16
TAG_LEN = 8

HS_HELLO = "/hs/1"
HS_CHALLENGE = "/hs/2"
HS_FINISH = "/hs/3"
HANDSHAKE_TIMEOUT_S = 10.0


class HandshakeError(Exception):
    pass


class UnknownIdentity(HandshakeError):
    pass


class BadProof(HandshakeError):
    pass


class BadTag(Exception):
    pass


@dataclass
class PskSession:
    peer_identity: str
    session_key: bytes
    client_nonce: bytes
    server_nonce: bytes
    established: bool = False


def _mac(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def new_nonce() -> bytes:
    return os.urandom(NONCE_LEN)


def derive_session_key(psk: bytes, client_nonce: bytes, server_nonce: bytes) -> bytes:
    return _mac(psk, client_nonce + server_nonce + b"session")


def server_proof(psk: bytes, client_nonce: bytes, server_nonce: bytes) -> bytes:
    return _mac(psk, client_nonce + server_nonce + b"server")


def client_proof(psk: bytes, client_nonce: bytes, server_nonce: bytes) -> bytes:
    return _mac(psk, server_nonce + client_nonce + b"client")


def proofs_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


def seal(msg_bytes: bytes, session: PskSession) -> bytes:
    if not session.established:
        raise BadTag("session not established")
    return msg_bytes + _mac(session.session_key, msg_bytes)[:TAG_LEN]


def open_(data: bytes, session: PskSession) -> bytes:
    if not session.established:
        raise BadTag("session not established")
    if len(data) < TAG_LEN:
        raise BadTag("datagram shorter than tag")
    msg_bytes, tag = data[:-TAG_LEN], data[-TAG_LEN:]
    if not hmac.compare_digest(tag, _mac(session.session_key, msg_bytes)[:TAG_LEN]):
        raise BadTag("tag mismatch")
    return msg_bytes
