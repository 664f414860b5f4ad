"""Simulated LwM2M clients.

Each SimDevice owns one UDP socket and a worker thread driving the lifecycle:
PSK handshake with the bootstrap server, credential provisioning, handshake
with the DM server, registration, then periodic registration updates and
temperature notifications. Executing /3/0/4 reboots the device (session
dropped, objects reset, lifecycle restarted); /1/0/8 triggers an immediate
registration update.
"""

import logging
import math
import random
import threading
import time
from dataclasses import dataclass
from urllib.parse import urlparse

from .bootstrap_server import BootstrapConfig
from .wire import codec
from .wire.codec import (BAD_REQUEST, CHANGED, CONTENT, CREATED, GET,
                         KIND_INTEGER, Message, NON, NOT_FOUND, OBS_DEREGISTER,
                         OBS_REGISTER, POST, PUT, ResourceValue, UNAUTHORIZED)
from .wire.psk import HandshakeError
from .wire.transport import RequestTimeout, SecureChannel
from .wireformat import WireError

log = logging.getLogger(__name__)

MANUFACTURER = "ERTIS-SIM"
MODEL = "SIM-1"

TEMPERATURE_PATH = "/3303/0/5700"
LIFETIME_PATH = "/1/0/1"
REBOOT_PATH = "/3/0/4"
REG_UPDATE_TRIGGER_PATH = "/1/0/8"

EXECUTABLE_PATHS = {REBOOT_PATH, REG_UPDATE_TRIGGER_PATH}
WRITABLE_PATHS = {LIFETIME_PATH}


class BootstrapFailed(Exception):
    pass


class RegisterFailed(Exception):
    pass


def temperature(t_s: float, seed: int, noise_amplitude: float = 0.25) -> float:
    """Deterministic synthetic temperature: daily-ish sine plus seeded noise."""
    base = 20.0 + 5.0 * math.sin(2 * math.pi * t_s / 600.0)
    if noise_amplitude == 0:
        return base
    rng = random.Random(f"{seed}|{t_s!r}")
    return base + rng.uniform(-noise_amplitude, noise_amplitude)


def _addr_of(uri: str) -> tuple[str, int]:
    p = urlparse(uri)
    if not p.hostname or p.port is None:
        raise ValueError(f"URI must carry host and port: {uri!r}")
    return (p.hostname, p.port)


@dataclass
class SimConfig:
    endpoint: str
    bootstrap_uri: str
    bootstrap_psk_identity: str
    bootstrap_psk_secret: bytes
    lifetime_s: int = 60
    temp_period_s: float = 2.0
    temp_seed: int = 0
    noise_amplitude: float = 0.25
    retry_backoff_s: float = 1.0
    ack_timeout_s: float = 2.0
    retries: int = 4
    # test fault injection: register with a PSK that does not match the ledger
    corrupt_server_psk: bool = False


class SimDevice:
    def __init__(self, config: SimConfig, on_send=None):
        self.config = config
        self.endpoint = config.endpoint
        self.channel = SecureChannel(request_handler=self._handle_request,
                                     ack_timeout=config.ack_timeout_s,
                                     retries=config.retries, on_send=on_send)
        self.objects: dict[str, ResourceValue] = {}
        self.reg_id: str | None = None
        self.state = "boot"
        self.last_error: str | None = None
        self._registered = threading.Event()
        self._reboot = threading.Event()
        self._update_now = threading.Event()
        self._stop = threading.Event()
        self._observed: dict[str, bytes] = {}
        self._dm_addr: tuple[str, int] | None = None
        self._epoch = time.monotonic()
        self._lock = threading.RLock()
        self._reset_objects()
        self._thread = threading.Thread(target=self._run, name=f"sim-{self.endpoint}",
                                        daemon=True)

    # -- public control ----------------------------------------------------

    def start(self) -> "SimDevice":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)
        self.channel.close()

    def wait_registered(self, timeout: float = 10.0) -> bool:
        return self._registered.wait(timeout)

    def request_reboot(self) -> None:
        self._reboot.set()

    def read_resource(self, path: str) -> ResourceValue:
        with self._lock:
            return self.objects[path]

    # -- lifecycle ----------------------------------------------------------

    def _reset_objects(self) -> None:
        with self._lock:
            self.objects = {
                "/3/0/0": ResourceValue.text(MANUFACTURER),
                "/3/0/1": ResourceValue.text(MODEL),
                "/3/0/2": ResourceValue.text(self.endpoint),
                REBOOT_PATH: ResourceValue(),
                TEMPERATURE_PATH: ResourceValue.float_(self._temperature_now()),
            }
            self._observed.clear()

    def _temperature_now(self) -> float:
        return temperature(time.monotonic() - self._epoch, self.config.temp_seed,
                           self.config.noise_amplitude)

    def _run(self) -> None:
        backoff = self.config.retry_backoff_s
        while not self._stop.is_set():
            try:
                provisioned = self._bootstrap()
                self._register(provisioned)
                backoff = self.config.retry_backoff_s
                self._session_loop()
            except (BootstrapFailed, RegisterFailed) as e:
                self.last_error = str(e)
                self.state = "retrying"
                log.warning("%s: %s; retrying in %.1fs", self.endpoint, e, backoff)
                self._stop.wait(backoff)
                backoff = min(backoff * 2, 60.0)
            if self._reboot.is_set():
                # let the in-flight reply to the reboot execute leave first
                time.sleep(0.1)
                self._reboot.clear()
                self._registered.clear()
                self.reg_id = None
                if self._dm_addr:
                    self.channel.drop_session(self._dm_addr)
                self._reset_objects()
                self.state = "boot"

    def _bootstrap(self) -> BootstrapConfig:
        self.state = "bootstrapping"
        addr = _addr_of(self.config.bootstrap_uri)
        try:
            self.channel.handshake(addr, self.config.bootstrap_psk_identity,
                                   self.config.bootstrap_psk_secret)
            resp = self.channel.request(addr, Message(
                code=POST, path=f"/bs?ep={self.endpoint}"))
        except (HandshakeError, RequestTimeout) as e:
            raise BootstrapFailed(str(e)) from None
        if resp.code != CHANGED:
            raise BootstrapFailed(f"bootstrap rejected 0x{resp.code:02x}")
        try:
            provisioned = BootstrapConfig.decode(resp.payload)
        except WireError as e:
            raise BootstrapFailed(f"bad bootstrap payload: {e}") from None
        # apply provisioning to the security(0) and server(1) objects
        with self._lock:
            self.objects["/0/0/0"] = ResourceValue.text(provisioned.server_uri)
            self.objects["/0/0/3"] = ResourceValue.text(provisioned.server_psk_identity)
            self.objects[LIFETIME_PATH] = ResourceValue.integer(self.config.lifetime_s)
            self.objects[REG_UPDATE_TRIGGER_PATH] = ResourceValue()
        return provisioned

    def _register(self, provisioned: BootstrapConfig) -> None:
        self.state = "registering"
        self._dm_addr = _addr_of(provisioned.server_uri)
        secret = provisioned.server_psk_secret
        if self.config.corrupt_server_psk:
            secret = bytes(b ^ 0xFF for b in secret)
        try:
            self.channel.handshake(self._dm_addr, provisioned.server_psk_identity, secret)
            links = ",".join(p for p in ("/0/0", "/1/0", "/3/0", "/3303/0"))
            resp = self.channel.request(self._dm_addr, Message(
                code=POST, path=f"/rd?ep={self.endpoint}&lt={self._lifetime()}",
                payload=links.encode()))
        except (HandshakeError, RequestTimeout) as e:
            raise RegisterFailed(str(e)) from None
        if resp.code != CREATED:
            raise RegisterFailed(f"registration rejected 0x{resp.code:02x}")
        self.reg_id = resp.payload.decode()
        self.state = "registered"
        self._registered.set()
        log.info("%s registered as %s", self.endpoint, self.reg_id)

    def _lifetime(self) -> int:
        with self._lock:
            value = self.objects.get(LIFETIME_PATH)
        if value is not None and value.kind == KIND_INTEGER:
            return int(value.value)
        return self.config.lifetime_s

    def _session_loop(self) -> None:
        next_update = time.monotonic() + self._lifetime() / 2
        next_temp = time.monotonic() + self.config.temp_period_s
        while not self._stop.is_set() and not self._reboot.is_set():
            now = time.monotonic()
            if self._update_now.is_set() or now >= next_update:
                self._update_now.clear()
                try:
                    resp = self.channel.request(self._dm_addr, Message(
                        code=POST, path=f"/rd/{self.reg_id}?lt={self._lifetime()}"))
                except RequestTimeout as e:
                    raise RegisterFailed(f"registration update lost: {e}") from None
                if resp.code != CHANGED:
                    raise RegisterFailed(f"registration update rejected 0x{resp.code:02x}")
                next_update = time.monotonic() + self._lifetime() / 2
            if now >= next_temp:
                next_temp = now + self.config.temp_period_s
                value = ResourceValue.float_(self._temperature_now())
                with self._lock:
                    self.objects[TEMPERATURE_PATH] = value
                    observed = dict(self._observed)
                for path, token in observed.items():
                    with self._lock:
                        current = self.objects.get(path, ResourceValue())
                    self.channel.send(self._dm_addr, Message(
                        code=CONTENT, mtype=NON, token=token, path=path,
                        payload=current.encode()))
            self._stop.wait(0.02)

    # -- serving DM operations -----------------------------------------------

    def _handle_request(self, msg: Message, addr, session) -> Message:
        path = msg.path
        with self._lock:
            value = self.objects.get(path)
        if msg.code == GET:
            if value is None:
                return Message(code=NOT_FOUND)
            if msg.observe == OBS_REGISTER:
                with self._lock:
                    self._observed[path] = msg.token
            elif msg.observe == OBS_DEREGISTER:
                with self._lock:
                    self._observed.pop(path, None)
            return Message(code=CONTENT, observe=msg.observe, payload=value.encode())
        if msg.code == PUT:
            if value is None:
                return Message(code=NOT_FOUND)
            if path not in WRITABLE_PATHS:
                return Message(code=UNAUTHORIZED, payload=b"read-only resource")
            try:
                new_value = ResourceValue.decode(msg.payload)
            except codec.CodecError:
                return Message(code=BAD_REQUEST, payload=b"undecodable value")
            if new_value.kind != value.kind:
                return Message(code=BAD_REQUEST, payload=b"type mismatch")
            with self._lock:
                self.objects[path] = new_value
            return Message(code=CHANGED)
        if msg.code == POST:
            if value is None:
                return Message(code=NOT_FOUND)
            if path not in EXECUTABLE_PATHS:
                return Message(code=BAD_REQUEST, payload=b"not executable")
            if path == REBOOT_PATH:
                self._reboot.set()
            else:
                self._update_now.set()
            return Message(code=CHANGED)
        return Message(code=BAD_REQUEST)


# -- fleets --------------------------------------------------------------------


def parse_psk_file(text: str) -> dict[str, tuple[str, bytes]]:
    """Lines of `endpoint,identity,hex-secret`; returns endpoint -> (identity, secret)."""
    table = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected endpoint,identity,hex-secret")
        table[parts[0]] = (parts[1], bytes.fromhex(parts[2]))
    return table


class Fleet:
    def __init__(self, devices: list[SimDevice]):
        self.devices = devices

    def __len__(self):
        return len(self.devices)

    def get(self, endpoint: str) -> SimDevice | None:
        return next((d for d in self.devices if d.endpoint == endpoint), None)

    def wait_all_registered(self, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        return all(d.wait_registered(max(0.0, deadline - time.monotonic()))
                   for d in self.devices)

    def stop(self) -> None:
        for d in self.devices:
            d.stop()


def spawn_fleet(n: int, prefix: str, bootstrap_uri: str,
                psk_table: dict[str, tuple[str, bytes]], **config_overrides) -> Fleet:
    """Start n SimDevices named <prefix>-0001..; PSKs come from psk_table."""
    if n < 1:
        raise ValueError("fleet size must be >= 1")
    devices = []
    for i in range(1, n + 1):
        endpoint = f"{prefix}-{i:04d}"
        if endpoint not in psk_table:
            raise KeyError(f"no PSK entry for {endpoint}")
        identity, secret = psk_table[endpoint]
        cfg = SimConfig(endpoint=endpoint, bootstrap_uri=bootstrap_uri,
                        bootstrap_psk_identity=identity, bootstrap_psk_secret=secret,
                        **config_overrides)
        devices.append(SimDevice(cfg).start())
    return Fleet(devices)
