"""Command-line entry points for the servers, the benchmark harness, and the
device-simulator fleet controller.

Each service reads key=value defaults from an optional --config file with
environment-variable overrides (LM2M_BS_*, LM2M_DM_*, LM2M_MGMT_*); the chain
itself is configured via LM2M_CHAIN_* / a chain config file. Explicit flags
win over both.
"""

import argparse
import json
import logging
import signal
import socket
import sys
import threading

from . import device_sim
from .bench import (BenchScenario, format_report, report, run_scenario,
                    write_csv)
from .bootstrap_server import BootstrapServer
from .config import load_config
from .dm_server import DmServer
from .ledger import ChainConfig, Ledger
from .mgmt_service import MgmtService
from .tokens import load_or_create_secret

log = logging.getLogger(__name__)


def _parse_bind(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"bind must be host:port, got {text!r}")
    return (host, int(port))


def _chain_config(path: str | None) -> ChainConfig:
    return ChainConfig.from_mapping(load_config(path, "LM2M_CHAIN_"))


def _service_parser(description: str, env_prefix: str, defaults: dict,
                    argv) -> tuple:
    """Build a parser whose defaults come from config file + env overrides."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    values = dict(defaults)
    values.update(load_config(known.config, env_prefix))
    parser = argparse.ArgumentParser(description=description, parents=[pre])
    return parser, values


def _wait_forever() -> None:
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()


def _open_ledger(journal: str | None, chain_config_path: str | None) -> Ledger:
    ledger = Ledger(config=_chain_config(chain_config_path), journal_path=journal)
    ledger.start_auto_miner()
    return ledger


def bootstrap_main(argv=None) -> int:
    parser, values = _service_parser("LwM2M bootstrap server", "LM2M_BS_", {
        "bind": "127.0.0.1:5683", "journal": None, "contract": "ClientStore",
        "chain_config": None}, argv)
    parser.add_argument("--bind", type=_parse_bind,
                        default=_parse_bind(values["bind"]))
    parser.add_argument("--journal", default=values["journal"])
    parser.add_argument("--contract", default=values["contract"])
    parser.add_argument("--chain-config", default=values["chain_config"])
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO)
    ledger = _open_ledger(args.journal, args.chain_config)
    server = BootstrapServer(ledger, bind=args.bind, contract=args.contract)
    log.info("bootstrap server on %s:%d", *server.address)
    try:
        _wait_forever()
    finally:
        server.close()
        ledger.stop_auto_miner()
    return 0


def dm_main(argv=None) -> int:
    parser, values = _service_parser("LwM2M device-management server", "LM2M_DM_", {
        "udp_bind": "127.0.0.1:5783", "http_bind": "127.0.0.1:8080",
        "journal": None, "token_secret_file": "dm-token.secret",
        "chain_config": None, "cors_origin": None}, argv)
    parser.add_argument("--udp-bind", type=_parse_bind,
                        default=_parse_bind(values["udp_bind"]))
    parser.add_argument("--http-bind", type=_parse_bind,
                        default=_parse_bind(values["http_bind"]))
    parser.add_argument("--journal", default=values["journal"])
    parser.add_argument("--token-secret-file", default=values["token_secret_file"])
    parser.add_argument("--chain-config", default=values["chain_config"])
    parser.add_argument("--cors-origin", default=values["cors_origin"])
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO)
    ledger = _open_ledger(args.journal, args.chain_config)
    server = DmServer(ledger, token_secret=load_or_create_secret(args.token_secret_file),
                      udp_bind=args.udp_bind, http_bind=args.http_bind,
                      cors_origin=args.cors_origin)
    log.info("dm server: udp %s:%d, http %s:%d",
             *server.udp_address, *server.http_address)
    try:
        _wait_forever()
    finally:
        server.close()
        ledger.stop_auto_miner()
    return 0


def mgmt_main(argv=None) -> int:
    parser, values = _service_parser("Management service", "LM2M_MGMT_", {
        "http_bind": "127.0.0.1:8081", "journal": None,
        "token_secret_file": "mgmt-token.secret", "seed_admin_file": None,
        "chain_config": None, "cors_origin": None}, argv)
    parser.add_argument("--http-bind", type=_parse_bind,
                        default=_parse_bind(values["http_bind"]))
    parser.add_argument("--journal", default=values["journal"])
    parser.add_argument("--token-secret-file", default=values["token_secret_file"])
    parser.add_argument("--seed-admin-file", default=values["seed_admin_file"],
                        help="key=value file with username, email, password")
    parser.add_argument("--chain-config", default=values["chain_config"])
    parser.add_argument("--cors-origin", default=values["cors_origin"])
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO)
    ledger = _open_ledger(args.journal, args.chain_config)
    service = MgmtService(ledger, token_secret=load_or_create_secret(args.token_secret_file),
                          http_bind=args.http_bind, cors_origin=args.cors_origin)
    if args.seed_admin_file:
        seed = load_config(args.seed_admin_file, "LM2M_MGMT_SEED_")
        tx_id = service.bootstrap_admin(seed["username"], seed["email"], seed["password"])
        if tx_id is not None:
            receipt = ledger.wait_receipt(tx_id)
            log.info("seeded admin %r: %s", seed["username"], receipt.status)
    log.info("mgmt service on %s:%d", *service.http_address)
    try:
        _wait_forever()
    finally:
        service.close()
        ledger.stop_auto_miner()
    return 0


def bench_main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Latency benchmark harness")
    parser.add_argument("--scenario", required=True)
    parser.add_argument("--sizes", default="100,200,300,400,500",
                        help="comma-separated record counts")
    parser.add_argument("--reps", type=int, default=100)
    parser.add_argument("--profile", default="desk",
                        choices=["desk", "paper-emulation"])
    parser.add_argument("--out", help="CSV output path (default: stdout)")
    args = parser.parse_args(argv)

    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
        scenario = BenchScenario(name=args.scenario, sizes=sizes,
                                 repetitions=args.reps, chain_profile=args.profile)
        scenario.validate()
    except ValueError as e:
        parser.error(str(e))
    rows = run_scenario(scenario)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            write_csv(rows, f)
    else:
        write_csv(rows, sys.stdout)
    print(format_report(report(rows)), file=sys.stderr)
    return 0


# -- simctl -----------------------------------------------------------------------
#
# `simctl spawn` runs the fleet in the foreground and listens on a local UDP
# control socket; `simctl exec-reboot` and `simctl stop` send it one-line
# commands.

DEFAULT_CONTROL = "127.0.0.1:5690"


def _control_loop(sock: socket.socket, fleet: device_sim.Fleet,
                  stop: threading.Event) -> None:
    while not stop.is_set():
        try:
            data, addr = sock.recvfrom(4096)
        except OSError:
            return
        parts = data.decode("utf-8", "replace").split()
        if parts == ["stop"]:
            sock.sendto(b"ok", addr)
            stop.set()
        elif len(parts) == 2 and parts[0] == "reboot":
            device = fleet.get(parts[1])
            if device is None:
                sock.sendto(b"error: no such endpoint", addr)
            else:
                device.request_reboot()
                sock.sendto(b"ok", addr)
        elif parts == ["status"]:
            payload = json.dumps({d.endpoint: {"state": d.state, "reg_id": d.reg_id}
                                  for d in fleet.devices})
            sock.sendto(payload.encode(), addr)
        else:
            sock.sendto(b"error: unknown command", addr)


def _control_send(control: str, command: str, timeout: float = 5.0) -> str:
    addr = _parse_bind(control)
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        sock.settimeout(timeout)
        sock.sendto(command.encode(), addr)
        data, _ = sock.recvfrom(65535)
    return data.decode("utf-8", "replace")


def simctl_main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Device-simulator fleet control")
    parser.add_argument("--control", default=DEFAULT_CONTROL,
                        help="control socket host:port")
    sub = parser.add_subparsers(dest="command", required=True)

    spawn = sub.add_parser("spawn", help="run a fleet in the foreground")
    spawn.add_argument("--n", type=int, required=True)
    spawn.add_argument("--prefix", default="sim")
    spawn.add_argument("--bootstrap-uri", required=True)
    spawn.add_argument("--psk-file", required=True,
                       help="one line per device: endpoint,identity,hex-secret")
    spawn.add_argument("--lifetime", type=int, default=60)
    spawn.add_argument("--temp-period", type=float, default=2.0)

    reboot = sub.add_parser("exec-reboot", help="reboot one running sim")
    reboot.add_argument("endpoint")

    sub.add_parser("stop", help="stop a running fleet")
    sub.add_parser("status", help="show fleet registration state")

    args = parser.parse_args(argv)
    if args.command == "spawn":
        logging.basicConfig(level=logging.INFO)
        with open(args.psk_file, "r", encoding="utf-8") as f:
            table = device_sim.parse_psk_file(f.read())
        fleet = device_sim.spawn_fleet(args.n, args.prefix, args.bootstrap_uri, table,
                                       lifetime_s=args.lifetime,
                                       temp_period_s=args.temp_period)
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.bind(_parse_bind(args.control))
        stop = threading.Event()
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: stop.set())
        control = threading.Thread(target=_control_loop, args=(sock, fleet, stop),
                                   daemon=True)
        control.start()
        log.info("fleet of %d running; control on %s", len(fleet), args.control)
        try:
            stop.wait()
        finally:
            sock.close()
            fleet.stop()
        return 0
    if args.command == "exec-reboot":
        reply = _control_send(args.control, f"reboot {args.endpoint}")
    elif args.command == "status":
        reply = _control_send(args.control, "status")
    else:
        reply = _control_send(args.control, "stop")
    print(reply)
    return 0 if not reply.startswith("error") else 1
