"""HS256 JSON Web Tokens for API principals.

Wire form: base64url(header).base64url(claims).base64url(signature), signature
= HMAC-SHA256 over the first two segments with the service secret. Claims:
sub (username), role, iat, exp.
"""

import base64
import hmac
import hashlib
import json
import os
import time

DEFAULT_TTL_S = 3600


class TokenError(Exception):
    pass


class Malformed(TokenError):
    pass


class BadSignature(TokenError):
    pass


class Expired(TokenError):
    pass


def _b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _unb64url(text: str) -> bytes:
    pad = "=" * (-len(text) % 4)
    try:
        return base64.urlsafe_b64decode(text + pad)
    except Exception as e:
        raise Malformed(f"bad base64url segment: {e}") from None


def _sign(secret: bytes, signing_input: bytes) -> bytes:
    return hmac.new(secret, signing_input, hashlib.sha256).digest()


def issue_token(secret: bytes, sub: str, role: str, ttl_s: int = DEFAULT_TTL_S,
                now: int | None = None) -> str:
    now = int(time.time()) if now is None else now
    header = _b64url(json.dumps({"alg": "HS256", "typ": "JWT"}, separators=(",", ":")).encode())
    claims = _b64url(json.dumps({"sub": sub, "role": role, "iat": now, "exp": now + ttl_s},
                                separators=(",", ":")).encode())
    signing_input = f"{header}.{claims}".encode("ascii")
    return f"{header}.{claims}.{_b64url(_sign(secret, signing_input))}"


def verify_token(secret: bytes, token: str, now: int | None = None) -> tuple[str, str]:
    """Returns (sub, role); raises Malformed / BadSignature / Expired."""
    now = int(time.time()) if now is None else now
    parts = token.split(".")
    if len(parts) != 3:
        raise Malformed("token must have three segments")
    signing_input = f"{parts[0]}.{parts[1]}".encode("ascii")
    if not hmac.compare_digest(_unb64url(parts[2]), _sign(secret, signing_input)):
        raise BadSignature("signature mismatch")
    try:
        header = json.loads(_unb64url(parts[0]))
        claims = json.loads(_unb64url(parts[1]))
    except (ValueError, UnicodeDecodeError) as e:
        raise Malformed(f"bad JSON segment: {e}") from None
    if header.get("alg") != "HS256":
        raise Malformed(f"unsupported alg {header.get('alg')!r}")
    if not isinstance(claims.get("exp"), int) or not isinstance(claims.get("iat"), int):
        raise Malformed("iat/exp must be integers")
    if claims["exp"] <= now:
        raise Expired("token expired")
    sub, role = claims.get("sub"), claims.get("role")
    if not isinstance(sub, str) or not isinstance(role, str):
        raise Malformed("sub/role must be strings")
    return sub, role


def load_or_create_secret(path: str) -> bytes:
    """32 random bytes persisted at first start."""
    if os.path.exists(path):
        with open(path, "rb") as f:
            secret = f.read()
        if len(secret) != 32:
            raise TokenError(f"token secret file {path} must hold exactly 32 bytes")
        return secret
    secret = os.urandom(32)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
    with os.fdopen(fd, "wb") as f:
        f.write(secret)
    return secret
