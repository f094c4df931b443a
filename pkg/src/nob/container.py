"""Framed binary container: magic, length-prefixed JSON header, raw payload.

Layout (little-endian throughout)::

    bytes 0..7    magic  b"NOFHN1\\x00\\x00"
    bytes 8..11   u32  byte length of the JSON header
    next          UTF-8 JSON header (a single object)
    rest          raw payload

The same framing carries dataset files (``nob.dataset``) and model
checkpoints (``nob.models``); the header's ``kind`` field tells them apart.
"""

from __future__ import annotations

import json
import struct

MAGIC = b"NOFHN1\x00\x00"
_LEN = struct.Struct("<I")


class ContainerError(Exception):
    """Base class for malformed container files."""


class BadMagicError(ContainerError):
    """File does not start with the expected magic bytes."""


class TruncatedPayloadError(ContainerError):
    """Payload is shorter than the header-declared size."""


class HeaderMismatchError(ContainerError):
    """Header fields disagree with the payload (shape/dtype bookkeeping)."""


def write_frame(path, header: dict, payload: bytes) -> None:
    """Write a framed file. ``header`` must be JSON-serializable."""
    head = json.dumps(header, ensure_ascii=False, separators=(",", ":"),
                      sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(head)))
        fh.write(head)
        fh.write(payload)


def read_frame(path) -> tuple[dict, bytes]:
    """Read a framed file, returning (header, payload).

    Raises :class:`BadMagicError` on a wrong magic, :class:`ContainerError`
    on an unparseable header, and :class:`TruncatedPayloadError` when the
    file ends before the header-declared header length.  Payload-size
    validation against the header's shape fields is the caller's job (it
    knows the schema); :func:`expect_payload_size` helps.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + _LEN.size or blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a NOFHN1 container")
    (hlen,) = _LEN.unpack_from(blob, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if len(blob) < start + hlen:
        raise TruncatedPayloadError(f"{path}: header truncated "
                                    f"({len(blob) - start} of {hlen} bytes)")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise ContainerError(f"{path}: header must be a JSON object")
    return header, blob[start + hlen:]


def expect_payload_size(path, payload: bytes, nbytes: int) -> None:
    """Validate payload length against a header-derived byte count."""
    if len(payload) < nbytes:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, header implies {nbytes}")
    if len(payload) > nbytes:
        raise HeaderMismatchError(
            f"{path}: payload has {len(payload)} bytes, header implies {nbytes}")
