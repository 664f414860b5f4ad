"""key=value config files with environment-variable overrides.

A config source is a flat mapping of lowercase keys to strings. Environment
variables override file values: LM2M_CHAIN_DIFFICULTY_BITS=8 overrides the
file key `difficulty_bits` when the prefix is LM2M_CHAIN_.
"""

import os


def load_kv_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip().lower()] = value.strip()
    return values


def env_overrides(prefix: str) -> dict[str, str]:
    return {k[len(prefix):].lower(): v
            for k, v in os.environ.items() if k.startswith(prefix)}


def load_config(path: str | None, env_prefix: str) -> dict[str, str]:
    values = load_kv_file(path) if path else {}
    values.update(env_overrides(env_prefix))
    return values
