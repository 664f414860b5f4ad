"""Minimal JSON-over-HTTP routing on top of the stdlib threading server.

Routes are (method, pattern) pairs; "{name}" segments capture path parameters.
A route with `roles` requires a valid Bearer token whose role is in the set.
Handlers return (status, json_obj) or a generator of text lines, which is
streamed as server-sent events until the generator ends or the client leaves.
"""

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from types import GeneratorType
from urllib.parse import parse_qsl, urlsplit

from . import tokens

log = logging.getLogger(__name__)


@dataclass
class Request:
    method: str
    path: str
    params: dict
    query: dict
    headers: dict
    body: bytes
    sub: str | None = None
    role: str | None = None

    def json(self):
        if not self.body:
            return None
        return json.loads(self.body)


class HttpError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class _Route:
    method: str
    regex: re.Pattern
    handler: object
    roles: frozenset | None


class HttpApi:
    def __init__(self, token_secret: bytes | None = None, cors_origin: str | None = None):
        self.token_secret = token_secret
        self.cors_origin = cors_origin
        self._routes: list[_Route] = []

    def route(self, method: str, pattern: str, roles=None):
        regex = re.compile("^" + re.sub(r"\{(\w+)\}", r"(?P<\1>[^/]+)", pattern) + "$")
        role_set = frozenset(roles) if roles is not None else None

        def register(fn):
            self._routes.append(_Route(method.upper(), regex, fn, role_set))
            return fn

        return register

    def dispatch(self, request: Request):
        path_matched = False
        for route in self._routes:
            m = route.regex.match(request.path)
            if not m:
                continue
            path_matched = True
            if route.method != request.method:
                continue
            if route.roles is not None:
                self._authorize(request, route.roles)
            request.params = m.groupdict()
            return route.handler(request)
        if path_matched:
            raise HttpError(405, "method not allowed")
        raise HttpError(404, "no such route")

    def _authorize(self, request: Request, roles: frozenset) -> None:
        header = request.headers.get("authorization", "")
        if not header.startswith("Bearer "):
            raise HttpError(401, "missing bearer token")
        if self.token_secret is None:
            raise HttpError(500, "token secret not configured")
        try:
            request.sub, request.role = tokens.verify_token(self.token_secret, header[7:])
        except tokens.TokenError as e:
            raise HttpError(401, str(e)) from None
        if request.role not in roles:
            raise HttpError(403, f"role {request.role} not allowed")

    def serve(self, bind: tuple[str, int]) -> "ApiServer":
        return ApiServer(self, bind)


class ApiServer:
    def __init__(self, api: HttpApi, bind: tuple[str, int]):
        api_ref = api

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                log.debug("http %s " + fmt, self.client_address, *args)

            def _respond(self, status: int, obj) -> None:
                body = json.dumps(obj).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self._cors()
                self.end_headers()
                self.wfile.write(body)

            def _cors(self):
                if api_ref.cors_origin:
                    self.send_header("Access-Control-Allow-Origin", api_ref.cors_origin)
                    self.send_header("Access-Control-Allow-Headers", "Authorization, Content-Type")
                    self.send_header("Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS")

            def _stream(self, gen) -> None:
                self.send_response(200)
                self.send_header("Content-Type", "text/event-stream")
                self.send_header("Cache-Control", "no-cache")
                self._cors()
                self.end_headers()
                try:
                    for line in gen:
                        self.wfile.write(f"data: {line}\n\n".encode("utf-8"))
                        self.wfile.flush()
                except (BrokenPipeError, ConnectionResetError):
                    pass
                finally:
                    gen.close()
                    self.close_connection = True

            def _handle(self):
                split = urlsplit(self.path)
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                request = Request(
                    method=self.command, path=split.path, params={},
                    query=dict(parse_qsl(split.query)),
                    headers={k.lower(): v for k, v in self.headers.items()},
                    body=body)
                try:
                    result = api_ref.dispatch(request)
                except HttpError as e:
                    self._respond(e.status, {"error": e.message})
                    return
                except json.JSONDecodeError as e:
                    self._respond(400, {"error": f"bad JSON body: {e}"})
                    return
                except Exception:
                    log.exception("handler failure on %s %s", self.command, self.path)
                    self._respond(500, {"error": "internal error"})
                    return
                if isinstance(result, GeneratorType):
                    self._stream(result)
                else:
                    status, obj = result
                    self._respond(status, obj)

            def do_GET(self):
                self._handle()

            def do_POST(self):
                self._handle()

            def do_PUT(self):
                self._handle()

            def do_DELETE(self):
                self._handle()

            def do_OPTIONS(self):
                self.send_response(204)
                self._cors()
                self.send_header("Content-Length", "0")
                self.end_headers()

        self._httpd = ThreadingHTTPServer(bind, Handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name=f"http-{self._httpd.server_address[1]}",
                                        daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)
