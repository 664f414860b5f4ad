"""Device-management server.

Devices speak sealed mini-CoAP over UDP after a PSK handshake verified
against the ClientStore (the registration-time credential check, mirroring
the one the bootstrap server already performed). Applications reach the
registered devices through a JWT-gated REST API under /api; Admin and
Application roles may use it, User may not.
"""

import logging
import os
import queue
import random
import string
import threading
import time
from dataclasses import dataclass, field, replace
from urllib.parse import parse_qsl, urlsplit

from .httpkit import HttpApi, HttpError
from .ledger import Ledger
from .bootstrap_server import make_store_resolver
from .wire import codec
from .wire.codec import (BAD_REQUEST, CHANGED, CONTENT, CREATED, DELETE,
                         DELETED, GET, Message, NOT_FOUND, OBS_DEREGISTER,
                         OBS_REGISTER, POST, PUT, Path, ResourceValue,
                         UNAUTHORIZED)
from .wire.transport import RequestTimeout, SecureChannel

log = logging.getLogger(__name__)

API_ROLES = frozenset({"Admin", "Application"})

DEFAULT_LIFETIME_S = 86_400
SUBSCRIBER_BUFFER = 64


class DmError(Exception):
    pass


class NotRegistered(DmError):
    pass


class ClientTimeout(DmError):
    pass


class ClientError(DmError):
    def __init__(self, code: int, detail: str = ""):
        super().__init__(f"client responded 0x{code:02x} {detail}".strip())
        self.code = code


def _new_reg_id() -> str:
    return "".join(random.choices(string.ascii_lowercase + string.digits, k=8))


@dataclass
class RegistrationEntry:
    reg_id: str
    endpoint: str
    remote_addr: tuple[str, int]
    lifetime_s: int
    last_update_ms: int
    object_links: list[str]

    def expired(self, now_ms: int) -> bool:
        return now_ms - self.last_update_ms > self.lifetime_s * 1000

    def to_json(self) -> dict:
        return {"reg_id": self.reg_id, "endpoint": self.endpoint,
                "remote_addr": f"{self.remote_addr[0]}:{self.remote_addr[1]}",
                "lifetime_s": self.lifetime_s, "last_update_ms": self.last_update_ms,
                "object_links": list(self.object_links)}


@dataclass
class _Observation:
    token: bytes
    endpoint: str
    path: str
    # one upstream observation, fanned out to per-subscriber bounded buffers
    subscribers: dict = field(default_factory=dict)
    dropped: int = 0

    def publish(self, item) -> None:
        for q in self.subscribers.values():
            try:
                q.put_nowait(item)
            except queue.Full:
                try:
                    q.get_nowait()
                except queue.Empty:
                    pass
                self.dropped += 1
                q.put_nowait(item)


class DmServer:
    def __init__(self, ledger: Ledger, token_secret: bytes,
                 udp_bind=("127.0.0.1", 0), http_bind=("127.0.0.1", 0),
                 sweep_interval_s: float = 1.0, ack_timeout: float = 2.0,
                 retries: int = 4, cors_origin: str | None = None):
        self.ledger = ledger
        self._regs: dict[str, RegistrationEntry] = {}
        self._reg_ids: dict[str, str] = {}
        self._observations: dict[tuple[str, str], _Observation] = {}
        self._state_lock = threading.RLock()
        self.channel = SecureChannel(
            bind=udp_bind, request_handler=self._handle_udp,
            psk_resolver=make_store_resolver(ledger, "server_psk_secret", "server_psk_identity"),
            ack_timeout=ack_timeout, retries=retries)
        self.api = HttpApi(token_secret=token_secret, cors_origin=cors_origin)
        self._register_routes()
        self.http = self.api.serve(http_bind)
        self._sweep_stop = threading.Event()
        self._sweeper = threading.Thread(target=self._sweep_loop, args=(sweep_interval_s,),
                                         name="dm-reg-sweep", daemon=True)
        self._sweeper.start()

    @property
    def udp_address(self):
        return self.channel.address

    @property
    def http_address(self):
        return self.http.address

    def close(self) -> None:
        self._sweep_stop.set()
        self._sweeper.join(timeout=5)
        self.http.close()
        self.channel.close()

    # -- registration state ------------------------------------------------

    def registrations(self) -> list[RegistrationEntry]:
        now_ms = int(time.time() * 1000)
        with self._state_lock:
            return [replace(r) for r in self._regs.values() if not r.expired(now_ms)]

    def _live_reg(self, endpoint: str) -> RegistrationEntry:
        with self._state_lock:
            reg = self._regs.get(endpoint)
            if reg is None or reg.expired(int(time.time() * 1000)):
                raise NotRegistered(endpoint)
            return reg

    def _sweep_loop(self, interval_s: float) -> None:
        while not self._sweep_stop.wait(interval_s):
            now_ms = int(time.time() * 1000)
            with self._state_lock:
                for endpoint in [ep for ep, r in self._regs.items() if r.expired(now_ms)]:
                    log.info("registration expired for %s", endpoint)
                    self._remove_endpoint(endpoint)

    def _remove_endpoint(self, endpoint: str) -> None:
        reg = self._regs.pop(endpoint, None)
        if reg is not None:
            self._reg_ids.pop(reg.reg_id, None)
        for key in [k for k in self._observations if k[0] == endpoint]:
            obs = self._observations.pop(key)
            self.channel.remove_notification_handler(obs.token)
            obs.publish(None)

    # -- device-facing UDP -------------------------------------------------

    def _handle_udp(self, msg: Message, addr, session) -> Message:
        split = urlsplit(msg.path)
        query = dict(parse_qsl(split.query))
        if split.path == "/rd" and msg.code == POST:
            return self._register(msg, addr, session, query)
        if split.path.startswith("/rd/"):
            reg_id = split.path[len("/rd/"):]
            if msg.code == POST:
                return self._update_registration(reg_id, query)
            if msg.code == DELETE:
                return self._deregister(reg_id)
        return Message(code=NOT_FOUND)

    def _register(self, msg: Message, addr, session, query) -> Message:
        endpoint = query.get("ep", "")
        if session is None or session.peer_identity != endpoint:
            return Message(code=UNAUTHORIZED)
        links = [l for l in msg.payload.decode("utf-8", "replace").split(",") if l]
        if not links:
            return Message(code=BAD_REQUEST, payload=b"no object links")
        lifetime_s = int(query.get("lt", DEFAULT_LIFETIME_S))
        entry = RegistrationEntry(
            reg_id=_new_reg_id(), endpoint=endpoint, remote_addr=addr,
            lifetime_s=lifetime_s, last_update_ms=int(time.time() * 1000),
            object_links=links)
        with self._state_lock:
            self._remove_endpoint(endpoint)
            self._regs[endpoint] = entry
            self._reg_ids[entry.reg_id] = endpoint
        log.info("registered %s at %s (reg_id %s)", endpoint, addr, entry.reg_id)
        return Message(code=CREATED, payload=entry.reg_id.encode())

    def _update_registration(self, reg_id: str, query) -> Message:
        with self._state_lock:
            endpoint = self._reg_ids.get(reg_id)
            reg = self._regs.get(endpoint) if endpoint else None
            if reg is None or reg.expired(int(time.time() * 1000)):
                return Message(code=NOT_FOUND)
            reg.last_update_ms = int(time.time() * 1000)
            if "lt" in query:
                reg.lifetime_s = int(query["lt"])
        return Message(code=CHANGED)

    def _deregister(self, reg_id: str) -> Message:
        with self._state_lock:
            endpoint = self._reg_ids.get(reg_id)
            if endpoint is None:
                return Message(code=NOT_FOUND)
            self._remove_endpoint(endpoint)
        return Message(code=DELETED)

    # -- device operations (server -> client) -------------------------------

    def _device_request(self, endpoint: str, msg: Message, ok_codes) -> Message:
        reg = self._live_reg(endpoint)
        try:
            resp = self.channel.request(reg.remote_addr, msg)
        except RequestTimeout as e:
            raise ClientTimeout(str(e)) from None
        if resp.code not in ok_codes:
            raise ClientError(resp.code, resp.payload.decode("utf-8", "replace"))
        return resp

    def device_read(self, endpoint: str, path: Path) -> ResourceValue:
        resp = self._device_request(endpoint, Message(code=GET, path=str(path)), {CONTENT})
        return ResourceValue.decode(resp.payload)

    def device_write(self, endpoint: str, path: Path, value: ResourceValue) -> None:
        self._device_request(endpoint, Message(code=PUT, path=str(path),
                                               payload=value.encode()), {CHANGED})

    def device_execute(self, endpoint: str, path: Path) -> None:
        self._device_request(endpoint, Message(code=POST, path=str(path)), {CHANGED})

    def observe(self, endpoint: str, path: Path, subscriber: str) -> queue.Queue:
        """Start (or join) the observation stream for (endpoint, path)."""
        key = (endpoint, str(path))
        with self._state_lock:
            obs = self._observations.get(key)
            if obs is not None:
                q = obs.subscribers.get(subscriber)
                if q is None:
                    q = queue.Queue(maxsize=SUBSCRIBER_BUFFER)
                    obs.subscribers[subscriber] = q
                return q
        token = os.urandom(8)
        obs = _Observation(token=token, endpoint=endpoint, path=str(path))
        q = queue.Queue(maxsize=SUBSCRIBER_BUFFER)
        obs.subscribers[subscriber] = q

        def on_notification(msg: Message, addr) -> None:
            try:
                value = ResourceValue.decode(msg.payload)
            except codec.CodecError:
                return
            obs.publish((int(time.time() * 1000), value))

        self.channel.add_notification_handler(token, on_notification)
        try:
            resp = self._device_request(
                endpoint, Message(code=GET, path=str(path), token=token,
                                  observe=OBS_REGISTER), {CONTENT})
        except DmError:
            self.channel.remove_notification_handler(token)
            raise
        with self._state_lock:
            self._observations[key] = obs
        obs.publish((int(time.time() * 1000), ResourceValue.decode(resp.payload)))
        return q

    def cancel_observe(self, endpoint: str, path: Path, subscriber: str) -> bool:
        key = (endpoint, str(path))
        with self._state_lock:
            obs = self._observations.get(key)
            if obs is None or subscriber not in obs.subscribers:
                return False
            q = obs.subscribers.pop(subscriber)
            last = not obs.subscribers
            if last:
                del self._observations[key]
                self.channel.remove_notification_handler(obs.token)
        try:
            q.put_nowait(None)
        except queue.Full:
            pass
        if last:
            try:
                self._device_request(endpoint, Message(code=GET, path=str(path),
                                                       token=obs.token,
                                                       observe=OBS_DEREGISTER), {CONTENT, CHANGED})
            except DmError:
                log.warning("observe cancel did not reach %s", endpoint)
        return True

    # -- REST API ------------------------------------------------------------

    def _parse_path(self, params) -> Path:
        try:
            return Path(int(params["obj"]), int(params["inst"]), int(params["res"]))
        except ValueError as e:
            raise HttpError(400, f"bad resource path: {e}") from None

    def _map_device_error(self, e: DmError) -> HttpError:
        if isinstance(e, NotRegistered):
            return HttpError(404, "endpoint not registered")
        if isinstance(e, ClientTimeout):
            return HttpError(504, "client did not respond")
        assert isinstance(e, ClientError)
        if e.code == NOT_FOUND:
            return HttpError(404, "no such resource on client")
        return HttpError(502, str(e))

    def _register_routes(self) -> None:
        api = self.api
        base = "/api/clients/{ep}/{obj}/{inst}/{res}"

        @api.route("GET", "/api/clients", roles=API_ROLES)
        def list_clients(req):
            return 200, [r.to_json() for r in self.registrations()]

        @api.route("GET", base, roles=API_ROLES)
        def read_resource(req):
            try:
                value = self.device_read(req.params["ep"], self._parse_path(req.params))
            except DmError as e:
                raise self._map_device_error(e) from None
            return 200, {"timestamp_ms": int(time.time() * 1000), **value.to_json()}

        @api.route("PUT", base, roles=API_ROLES)
        def write_resource(req):
            try:
                value = ResourceValue.from_json(req.json() or {})
            except (ValueError, TypeError) as e:
                raise HttpError(400, f"bad resource value: {e}") from None
            try:
                self.device_write(req.params["ep"], self._parse_path(req.params), value)
            except DmError as e:
                raise self._map_device_error(e) from None
            return 200, {"status": "changed"}

        @api.route("POST", base + "/exec", roles=API_ROLES)
        def execute_resource(req):
            try:
                self.device_execute(req.params["ep"], self._parse_path(req.params))
            except DmError as e:
                raise self._map_device_error(e) from None
            return 200, {"status": "executed"}

        @api.route("POST", base + "/observe", roles=API_ROLES)
        def start_observe(req):
            try:
                self.observe(req.params["ep"], self._parse_path(req.params), req.sub)
            except DmError as e:
                raise self._map_device_error(e) from None
            return 201, {"status": "observing"}

        @api.route("GET", base + "/observe", roles=API_ROLES)
        def stream_observe(req):
            endpoint, path = req.params["ep"], self._parse_path(req.params)
            with self._state_lock:
                obs = self._observations.get((endpoint, str(path)))
                q = obs.subscribers.get(req.sub) if obs else None
            if q is None:
                raise HttpError(404, "no observation for this subscriber")

            def events():
                while True:
                    item = q.get()
                    if item is None:
                        return
                    ts, value = item
                    yield f"{ts} {value.value}"

            return events()

        @api.route("DELETE", base + "/observe", roles=API_ROLES)
        def stop_observe(req):
            if not self.cancel_observe(req.params["ep"], self._parse_path(req.params), req.sub):
                raise HttpError(404, "no observation for this subscriber")
            return 200, {"status": "canceled"}
