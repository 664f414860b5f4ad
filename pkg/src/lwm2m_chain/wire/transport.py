"""Sealed UDP channel: one mini-CoAP message per datagram.

A SecureChannel plays both roles: it answers incoming requests through a
handler and issues outgoing requests with CON retransmission. Handshake
messages (paths /hs/*) are never sealed; all other traffic is sealed once a
session exists for the peer address. Responses are matched to requests by
(peer address, message_id); observe notifications are matched by token.
"""

import logging
import queue
import threading
import socket
import time
from collections import OrderedDict
from dataclasses import replace

from ..wireformat import Reader, Writer, WireError, Truncated as WireTruncated
from . import codec, psk
from .codec import (ACK, CHANGED, CON, CONTENT, GET, Message, NON, POST,
                    UNAUTHORIZED, decode, encode)
from .psk import (HS_CHALLENGE, HS_FINISH, HS_HELLO, HANDSHAKE_TIMEOUT_S,
                  BadProof, BadTag, HandshakeError, NONCE_LEN, PskSession,
                  UnknownIdentity, client_proof, derive_session_key, new_nonce,
                  proofs_equal, seal, server_proof, open_ as unseal)

log = logging.getLogger(__name__)

Addr = tuple[str, int]


class RequestTimeout(Exception):
    pass


def _is_handshake(path: str) -> bool:
    return path.startswith("/hs/")


class SecureChannel:
    def __init__(self, bind: Addr = ("127.0.0.1", 0), request_handler=None,
                 psk_resolver=None, ack_timeout: float = 2.0, retries: int = 4,
                 on_send=None):
        """request_handler(msg, addr, session) -> Message | None;
        psk_resolver(identity) -> psk bytes | None (enables the responder role);
        on_send(addr, raw) observes every outgoing datagram (transcript taps)."""
        self.request_handler = request_handler
        self.psk_resolver = psk_resolver
        self.ack_timeout = ack_timeout
        self.retries = retries
        self.on_send = on_send
        self.sessions: dict[Addr, PskSession] = {}
        self._half_open: dict[Addr, dict] = {}
        self._pending: dict[tuple[Addr, int], queue.Queue] = {}
        self._notify_handlers: dict[bytes, object] = {}
        self._response_cache: OrderedDict[tuple[Addr, int], bytes] = OrderedDict()
        self._lock = threading.Lock()
        self._mid = 0
        self._closed = False
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(bind)
        self._thread = threading.Thread(target=self._recv_loop, daemon=True,
                                        name=f"udp-{self.sock.getsockname()[1]}")
        self._thread.start()

    @property
    def address(self) -> Addr:
        return self.sock.getsockname()

    def close(self) -> None:
        self._closed = True
        try:
            # wake the recv loop so it can observe the closed flag
            self.sock.sendto(b"", self.sock.getsockname())
        except OSError:
            pass
        self._thread.join(timeout=2)
        try:
            self.sock.close()
        except OSError:
            pass

    # -- sending ---------------------------------------------------------------

    def _next_mid(self) -> int:
        with self._lock:
            self._mid = (self._mid + 1) % 0x10000
            return self._mid

    def _transmit(self, addr: Addr, msg: Message) -> None:
        raw = encode(msg)
        if not _is_handshake(msg.path):
            session = self.sessions.get(addr)
            if session is not None and session.established:
                raw = seal(raw, session)
        if self.on_send:
            self.on_send(addr, raw)
        self.sock.sendto(raw, addr)

    def send(self, addr: Addr, msg: Message) -> None:
        if msg.message_id == 0 and msg.code in codec.REQUEST_CODES:
            msg = replace(msg, message_id=self._next_mid())
        self._transmit(addr, msg)

    def request(self, addr: Addr, msg: Message, ack_timeout: float | None = None,
                retries: int | None = None) -> Message:
        """Send a CON request, retransmitting with exponential backoff."""
        ack_timeout = self.ack_timeout if ack_timeout is None else ack_timeout
        retries = self.retries if retries is None else retries
        mid = self._next_mid()
        msg = replace(msg, mtype=CON, message_id=mid)
        waiter: queue.Queue = queue.Queue(maxsize=1)
        key = (addr, mid)
        self._pending[key] = waiter
        try:
            timeout = ack_timeout
            for attempt in range(retries + 1):
                self._transmit(addr, msg)
                try:
                    return waiter.get(timeout=timeout)
                except queue.Empty:
                    timeout *= 2
            raise RequestTimeout(f"no response from {addr} for mid={mid} path={msg.path!r}")
        finally:
            self._pending.pop(key, None)

    # -- notifications (observe) -----------------------------------------------

    def add_notification_handler(self, token: bytes, handler) -> None:
        self._notify_handlers[token] = handler

    def remove_notification_handler(self, token: bytes) -> None:
        self._notify_handlers.pop(token, None)

    # -- handshake, initiator role ----------------------------------------------

    def handshake(self, addr: Addr, identity: str, psk_secret: bytes,
                  ack_timeout: float | None = None) -> PskSession:
        client_nonce = new_nonce()
        hello = Writer().str_(identity).raw(client_nonce).getvalue()
        resp = self.request(addr, Message(code=POST, path=HS_HELLO, payload=hello),
                            ack_timeout=ack_timeout)
        if resp.code != CONTENT:
            reason = resp.payload.decode("utf-8", "replace")
            if "unknown identity" in reason:
                raise UnknownIdentity(reason)
            raise HandshakeError(reason or f"handshake rejected 0x{resp.code:02x}")
        if len(resp.payload) != NONCE_LEN + 32:
            raise HandshakeError("malformed challenge")
        server_nonce, proof_s = resp.payload[:NONCE_LEN], resp.payload[NONCE_LEN:]
        if not proofs_equal(proof_s, server_proof(psk_secret, client_nonce, server_nonce)):
            raise BadProof("server proof mismatch")
        finish = client_proof(psk_secret, client_nonce, server_nonce)
        resp = self.request(addr, Message(code=POST, path=HS_FINISH, payload=finish),
                            ack_timeout=ack_timeout)
        if resp.code != CHANGED:
            raise BadProof(resp.payload.decode("utf-8", "replace") or "finish rejected")
        session = PskSession(peer_identity=identity,
                             session_key=derive_session_key(psk_secret, client_nonce, server_nonce),
                             client_nonce=client_nonce, server_nonce=server_nonce,
                             established=True)
        self.sessions[addr] = session
        return session

    def drop_session(self, addr: Addr) -> None:
        self.sessions.pop(addr, None)
        self._half_open.pop(addr, None)

    # -- handshake, responder role ------------------------------------------------

    def _handle_handshake(self, msg: Message, addr: Addr) -> Message:
        now = time.monotonic()
        for stale in [a for a, h in self._half_open.items()
                      if now - h["ts"] > HANDSHAKE_TIMEOUT_S]:
            del self._half_open[stale]
        if msg.path == HS_HELLO:
            if self.psk_resolver is None:
                return Message(code=UNAUTHORIZED, payload=b"handshake not accepted here")
            try:
                r = Reader(msg.payload)
                identity = r.str_()
                client_nonce = r.raw(NONCE_LEN)
                r.expect_end()
            except (WireError, WireTruncated):
                return Message(code=UNAUTHORIZED, payload=b"malformed hello")
            secret = self.psk_resolver(identity)
            if secret is None:
                return Message(code=UNAUTHORIZED, payload=b"unknown identity")
            server_nonce = new_nonce()
            self._half_open[addr] = {"identity": identity, "psk": secret,
                                     "cn": client_nonce, "sn": server_nonce, "ts": now}
            # a fresh HELLO supersedes any established session with this peer
            self.sessions.pop(addr, None)
            return Message(code=CONTENT,
                           payload=server_nonce + server_proof(secret, client_nonce, server_nonce))
        if msg.path == HS_FINISH:
            half = self._half_open.pop(addr, None)
            if half is None:
                return Message(code=UNAUTHORIZED, payload=b"stale handshake")
            expected = client_proof(half["psk"], half["cn"], half["sn"])
            if not proofs_equal(msg.payload, expected):
                return Message(code=UNAUTHORIZED, payload=b"bad proof")
            self.sessions[addr] = PskSession(
                peer_identity=half["identity"],
                session_key=derive_session_key(half["psk"], half["cn"], half["sn"]),
                client_nonce=half["cn"], server_nonce=half["sn"], established=True)
            return Message(code=CHANGED)
        return Message(code=UNAUTHORIZED, payload=b"bad handshake path")

    # -- receive path ----------------------------------------------------------------

    def _recv_loop(self) -> None:
        while not self._closed:
            try:
                data, addr = self.sock.recvfrom(65535)
            except OSError:
                return
            try:
                self._dispatch_datagram(data, addr)
            except Exception:
                log.exception("error handling datagram from %s", addr)

    def _dispatch_datagram(self, data: bytes, addr: Addr) -> None:
        session = self.sessions.get(addr)
        msg = None
        sealed = False
        if session is not None and session.established:
            try:
                msg = decode(unseal(data, session))
                sealed = True
            except (BadTag, codec.CodecError):
                msg = None
        if msg is None:
            try:
                msg = decode(data)
            except codec.CodecError:
                return
            if not _is_handshake(msg.path) and session is not None and not sealed:
                # peer skipped sealing while a session exists: reject requests,
                # ignore unsealable responses
                if msg.is_request():
                    self.sock.sendto(encode(Message(code=UNAUTHORIZED, mtype=ACK,
                                                    message_id=msg.message_id,
                                                    payload=b"seal required")), addr)
                return
        self._dispatch_message(msg, addr, sealed)

    def _dispatch_message(self, msg: Message, addr: Addr, sealed: bool) -> None:
        if msg.is_request():
            if _is_handshake(msg.path):
                reply = self._handle_handshake(msg, addr)
                self._transmit(addr, replace(reply, mtype=ACK, message_id=msg.message_id,
                                             path=msg.path))
                return
            if not sealed:
                self.sock.sendto(encode(Message(code=UNAUTHORIZED, mtype=ACK,
                                                message_id=msg.message_id,
                                                path=msg.path, payload=b"seal required")), addr)
                return
            cache_key = (addr, msg.message_id)
            cached = self._response_cache.get(cache_key)
            if cached is not None:
                self.sock.sendto(cached, addr)
                return
            reply = None
            if self.request_handler is not None:
                try:
                    reply = self.request_handler(msg, addr, self.sessions.get(addr))
                except Exception:
                    log.exception("request handler failed for %s %s", addr, msg.path)
                    reply = Message(code=codec.BAD_REQUEST, payload=b"internal error")
            if reply is not None:
                reply = replace(reply, mtype=ACK, message_id=msg.message_id,
                                token=reply.token or msg.token)
                raw = encode(reply)
                session = self.sessions.get(addr)
                if session is not None and session.established:
                    raw = seal(raw, session)
                with self._lock:
                    self._response_cache[cache_key] = raw
                    while len(self._response_cache) > 1024:
                        self._response_cache.popitem(last=False)
                if self.on_send:
                    self.on_send(addr, raw)
                self.sock.sendto(raw, addr)
            return
        # response: match a pending request first, then observe notifications
        waiter = self._pending.get((addr, msg.message_id))
        if waiter is not None:
            try:
                waiter.put_nowait(msg)
            except queue.Full:
                pass
            return
        if msg.token and msg.token in self._notify_handlers:
            self._notify_handlers[msg.token](msg, addr)
