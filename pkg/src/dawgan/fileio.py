"""Atomic file writes and key=value sidecar headers.

Every binary artifact (mask, volume, k-space dump) is a raw little-endian
payload next to a text sidecar at ``<path>.hdr`` holding one ``key=value``
pair per line. Writes go through a temp file + rename so interrupted runs
never leave truncated artifacts.
"""

import os
import tempfile

from .errors import FormatError


def write_bytes_atomic(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text: str):
    write_bytes_atomic(path, text.encode("utf-8"))


def sidecar_path(path):
    return os.fspath(path) + ".hdr"


def write_sidecar(path, fields: dict):
    lines = [f"{k}={v}" for k, v in fields.items()]
    write_text_atomic(sidecar_path(path), "\n".join(lines) + "\n")


def read_sidecar(path):
    """Parse a sidecar into a str->str dict; malformed lines raise FormatError."""
    hdr = sidecar_path(path)
    if not os.path.exists(hdr):
        raise FormatError(f"missing sidecar header {hdr}")
    fields = {}
    with open(hdr, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"sidecar {hdr} line {ln}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            fields[k.strip()] = v.strip()
    return fields


def require_field(fields: dict, key: str, path):
    if key not in fields:
        raise FormatError(f"sidecar for {path} is missing field '{key}'")
    return fields[key]
