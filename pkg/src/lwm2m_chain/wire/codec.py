"""Fixed-layout mini-CoAP message codec and object/instance/resource addressing.

One message per UDP datagram. Layout:
  byte0        version<<4 | mtype
  byte1        code
  bytes2-3     message_id (big-endian)
  byte4        token length, then that many token bytes
  1 byte       observe (0 none / 1 register / 2 deregister)
  1 byte       path length, then UTF-8 path
  2 bytes      payload length (big-endian), then payload
Full CoAP options/blockwise are intentionally out; retransmission lives in
the transport layer.
"""

import struct
from dataclasses import dataclass, field

VERSION = 1

# message types
CON, NON, ACK, RST = 0, 1, 2, 3

# request codes
GET, POST, PUT, DELETE = 1, 2, 3, 4
# response codes
CREATED = 0x41
DELETED = 0x42
CHANGED = 0x44
CONTENT = 0x45
UNAUTHORIZED = 0x81
NOT_FOUND = 0x84
BAD_REQUEST = 0x88

REQUEST_CODES = frozenset({GET, POST, PUT, DELETE})
RESPONSE_CODES = frozenset({CREATED, DELETED, CHANGED, CONTENT, UNAUTHORIZED, NOT_FOUND, BAD_REQUEST})
VALID_CODES = REQUEST_CODES | RESPONSE_CODES

OBS_NONE, OBS_REGISTER, OBS_DEREGISTER = 0, 1, 2


class CodecError(Exception):
    pass


class Truncated(CodecError):
    pass


class BadVersion(CodecError):
    pass


class BadCode(CodecError):
    pass


class PathTooLong(CodecError):
    pass


class PayloadTooLong(CodecError):
    pass


@dataclass(frozen=True)
class Path:
    """LwM2M object addressing: /object[/instance[/resource]]."""

    object: int
    instance: int | None = None
    resource: int | None = None

    def __post_init__(self):
        for v in (self.object, self.instance, self.resource):
            if v is not None and not 0 <= v <= 0xFFFF:
                raise ValueError("path components are unsigned 16-bit")
        if self.resource is not None and self.instance is None:
            raise ValueError("resource requires an instance")

    def __str__(self) -> str:
        parts = [str(self.object)]
        if self.instance is not None:
            parts.append(str(self.instance))
            if self.resource is not None:
                parts.append(str(self.resource))
        return "/" + "/".join(parts)

    @classmethod
    def parse(cls, text: str) -> "Path":
        if not text.startswith("/"):
            raise ValueError(f"path must start with '/': {text!r}")
        parts = text[1:].split("/")
        if not 1 <= len(parts) <= 3:
            raise ValueError(f"path must have 1-3 components: {text!r}")
        nums = []
        for p in parts:
            if not p.isdigit():
                raise ValueError(f"non-numeric path component in {text!r}")
            nums.append(int(p))
        nums += [None] * (3 - len(nums))
        return cls(*nums)


@dataclass(frozen=True)
class Message:
    code: int
    mtype: int = CON
    message_id: int = 0
    token: bytes = b""
    observe: int = OBS_NONE
    path: str = ""
    payload: bytes = b""

    def is_request(self) -> bool:
        return self.code in REQUEST_CODES


def encode(msg: Message) -> bytes:
    if len(msg.token) > 8:
        raise CodecError("token longer than 8 bytes")
    path_bytes = msg.path.encode("utf-8")
    if len(path_bytes) > 255:
        raise PathTooLong(f"path is {len(path_bytes)} bytes")
    if len(msg.payload) > 0xFFFF:
        raise PayloadTooLong(f"payload is {len(msg.payload)} bytes")
    if msg.code not in VALID_CODES:
        raise BadCode(f"code 0x{msg.code:02x}")
    if msg.mtype not in (CON, NON, ACK, RST):
        raise CodecError(f"bad mtype {msg.mtype}")
    if msg.observe not in (OBS_NONE, OBS_REGISTER, OBS_DEREGISTER):
        raise CodecError(f"bad observe {msg.observe}")
    out = bytearray()
    out.append(VERSION << 4 | msg.mtype)
    out.append(msg.code)
    out += struct.pack(">H", msg.message_id)
    out.append(len(msg.token))
    out += msg.token
    out.append(msg.observe)
    out.append(len(path_bytes))
    out += path_bytes
    out += struct.pack(">H", len(msg.payload))
    out += msg.payload
    return bytes(out)


def decode(data: bytes) -> Message:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise Truncated(f"need {n} bytes at offset {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    b0 = take(1)[0]
    if b0 >> 4 != VERSION:
        raise BadVersion(f"version {b0 >> 4}")
    mtype = b0 & 0x0F
    code = take(1)[0]
    if code not in VALID_CODES:
        raise BadCode(f"code 0x{code:02x}")
    message_id = struct.unpack(">H", take(2))[0]
    token_len = take(1)[0]
    if token_len > 8:
        raise CodecError(f"token length {token_len}")
    token = take(token_len)
    observe = take(1)[0]
    if observe not in (OBS_NONE, OBS_REGISTER, OBS_DEREGISTER):
        raise CodecError(f"observe {observe}")
    path_len = take(1)[0]
    try:
        path = take(path_len).decode("utf-8")
    except UnicodeDecodeError:
        raise CodecError("path is not valid UTF-8") from None
    payload_len = struct.unpack(">H", take(2))[0]
    payload = take(payload_len)
    if pos != len(data):
        raise CodecError(f"{len(data) - pos} trailing bytes")
    return Message(code=code, mtype=mtype, message_id=message_id, token=token,
                   observe=observe, path=path, payload=payload)


# -- resource values ---------------------------------------------------------

KIND_NONE, KIND_TEXT, KIND_INTEGER, KIND_FLOAT, KIND_OPAQUE = 0, 1, 2, 3, 4
_KIND_NAMES = {KIND_NONE: "none", KIND_TEXT: "text", KIND_INTEGER: "integer",
               KIND_FLOAT: "float", KIND_OPAQUE: "opaque"}
_KIND_BY_NAME = {v: k for k, v in _KIND_NAMES.items()}


@dataclass(frozen=True)
class ResourceValue:
    kind: int = KIND_NONE
    value: object = None

    @classmethod
    def text(cls, s: str) -> "ResourceValue":
        return cls(KIND_TEXT, s)

    @classmethod
    def integer(cls, v: int) -> "ResourceValue":
        return cls(KIND_INTEGER, int(v))

    @classmethod
    def float_(cls, v: float) -> "ResourceValue":
        return cls(KIND_FLOAT, float(v))

    @classmethod
    def opaque(cls, b: bytes) -> "ResourceValue":
        return cls(KIND_OPAQUE, bytes(b))

    def kind_name(self) -> str:
        return _KIND_NAMES[self.kind]

    def encode(self) -> bytes:
        if self.kind == KIND_NONE:
            return bytes([KIND_NONE])
        if self.kind == KIND_TEXT:
            raw = self.value.encode("utf-8")
        elif self.kind == KIND_INTEGER:
            raw = struct.pack(">q", self.value)
        elif self.kind == KIND_FLOAT:
            raw = struct.pack(">d", self.value)
        elif self.kind == KIND_OPAQUE:
            raw = self.value
        else:
            raise CodecError(f"bad kind {self.kind}")
        return bytes([self.kind]) + struct.pack(">I", len(raw)) + raw

    @classmethod
    def decode(cls, data: bytes) -> "ResourceValue":
        if not data:
            raise Truncated("empty resource value")
        kind = data[0]
        if kind == KIND_NONE:
            if len(data) != 1:
                raise CodecError("trailing bytes after none value")
            return cls()
        if len(data) < 5:
            raise Truncated("missing value length")
        size = struct.unpack(">I", data[1:5])[0]
        raw = data[5:]
        if len(raw) != size:
            raise CodecError("value length mismatch")
        if kind == KIND_TEXT:
            try:
                return cls(KIND_TEXT, raw.decode("utf-8"))
            except UnicodeDecodeError:
                raise CodecError("text value is not UTF-8") from None
        if kind == KIND_INTEGER:
            if size != 8:
                raise CodecError("integer value must be 8 bytes")
            return cls(KIND_INTEGER, struct.unpack(">q", raw)[0])
        if kind == KIND_FLOAT:
            if size != 8:
                raise CodecError("float value must be 8 bytes")
            return cls(KIND_FLOAT, struct.unpack(">d", raw)[0])
        if kind == KIND_OPAQUE:
            return cls(KIND_OPAQUE, raw)
        raise CodecError(f"bad kind {kind}")

    def to_json(self) -> dict:
        value = self.value
        if self.kind == KIND_OPAQUE:
            value = self.value.hex()
        return {"kind": self.kind_name(), "value": value}

    @classmethod
    def from_json(cls, obj: dict) -> "ResourceValue":
        kind = _KIND_BY_NAME.get(obj.get("kind"))
        if kind is None:
            raise ValueError(f"unknown kind {obj.get('kind')!r}")
        value = obj.get("value")
        if kind == KIND_NONE:
            return cls()
        if kind == KIND_TEXT:
            return cls.text(str(value))
        if kind == KIND_INTEGER:
            return cls.integer(int(value))
        if kind == KIND_FLOAT:
            return cls.float_(float(value))
        return cls.opaque(bytes.fromhex(value))
