"""Line-oriented wire format for control and data messages.

One message per line::

    seq=7 kind=STATUS node=axis status=S
    seq=8 kind=DATA node=hmi.target type=real value=12.5

Node ids and string values are percent-quoted; reals use ``repr`` so they
round-trip exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any
from urllib.parse import quote, unquote

from .errors import DecodeError

KINDS = ("TICK", "HALT", "STATUS", "DATA")
VALUE_TYPES = ("bool", "int", "real", "str")
MAX_SEQ = (1 << 64) - 1
_SAFE = "-._~@"


@dataclass(frozen=True)
class Message:
    seq: int
    kind: str
    node: str
    status: str | None = None
    type: str | None = None
    value: Any = None

    def __post_init__(self):
        if not 0 <= self.seq <= MAX_SEQ:
            raise ValueError(f"seq out of range: {self.seq}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")
        if self.kind == "STATUS" and self.status not in ("R", "S", "F"):
            raise ValueError("STATUS messages carry status R, S or F")
        if self.kind == "DATA" and self.type not in VALUE_TYPES:
            raise ValueError("DATA messages carry a value type")

    def same(self, other: "Message") -> bool:
        """Equality that treats two NaN payloads as equal."""
        if self == other:
            return True
        return (
            isinstance(self.value, float) and isinstance(other.value, float)
            and math.isnan(self.value) and math.isnan(other.value)
            and (self.seq, self.kind, self.node, self.status, self.type)
            == (other.seq, other.kind, other.node, other.status, other.type)
        )


def _encode_value(type_: str, value) -> str:
    if type_ == "bool":
        if not isinstance(value, bool):
            raise TypeError("bool payload expected")
        return "true" if value else "false"
    if type_ == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError("int payload expected")
        return str(value)
    if type_ == "real":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError("real payload expected")
        return repr(float(value))
    if not isinstance(value, str):
        raise TypeError("str payload expected")
    return quote(value, safe=_SAFE)


def wire_encode(msg: Message) -> bytes:
    parts = [f"seq={msg.seq}", f"kind={msg.kind}", f"node={quote(msg.node, safe=_SAFE)}"]
    if msg.kind == "STATUS":
        parts.append(f"status={msg.status}")
    if msg.kind == "DATA":
        parts.append(f"type={msg.type}")
        parts.append(f"value={_encode_value(msg.type, msg.value)}")
    return (" ".join(parts) + "\n").encode("ascii")


_FIELDS = {
    "TICK": ("seq", "kind", "node"),
    "HALT": ("seq", "kind", "node"),
    "STATUS": ("seq", "kind", "node", "status"),
    "DATA": ("seq", "kind", "node", "type", "value"),
}


def wire_decode(data: bytes) -> Message:
    """Decode one newline-terminated message; ``DecodeError.offset`` is a 0-based byte index."""
    end = data.find(b"\n")
    if end < 0:
        raise DecodeError(len(data), "missing line terminator")
    if end != len(data) - 1:
        raise DecodeError(end + 1, "trailing bytes after line terminator")
    try:
        text = data[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise DecodeError(exc.start, "non-ASCII byte") from None

    fields: dict[str, tuple[str, int]] = {}
    order = []
    pos = 0
    for token in text.split(" "):
        if "=" not in token:
            raise DecodeError(pos, f"expected key=value, found {token!r}")
        key, value = token.split("=", 1)
        if key in fields:
            raise DecodeError(pos, f"duplicate field {key!r}")
        fields[key] = (value, pos + len(key) + 1)
        order.append(key)
        pos += len(token) + 1

    def need(key):
        if key not in fields:
            raise DecodeError(end, f"missing field {key!r}")
        return fields[key]

    kind, kpos = need("kind")
    if kind not in KINDS:
        raise DecodeError(kpos, f"unknown kind {kind!r}")
    if tuple(order) != _FIELDS[kind]:
        raise DecodeError(0, f"fields for {kind} must be {' '.join(_FIELDS[kind])}")

    seq_text, spos = need("seq")
    if not seq_text.isdigit() or int(seq_text) > MAX_SEQ or (len(seq_text) > 1 and seq_text[0] == "0"):
        raise DecodeError(spos, "seq must be an unsigned 64-bit integer")
    node_text, npos = need("node")
    if not node_text:
        raise DecodeError(npos, "empty node id")
    node = unquote(node_text, errors="strict")

    status = type_ = value = None
    if kind == "STATUS":
        status, stpos = need("status")
        if status not in ("R", "S", "F"):
            raise DecodeError(stpos, "status must be R, S or F")
    if kind == "DATA":
        type_, tpos = need("type")
        if type_ not in VALUE_TYPES:
            raise DecodeError(tpos, f"unknown value type {type_!r}")
        raw, vpos = need("value")
        value = _decode_value(type_, raw, vpos)
    return Message(int(seq_text), kind, node, status, type_, value)


def _decode_value(type_: str, raw: str, pos: int):
    if type_ == "bool":
        if raw not in ("true", "false"):
            raise DecodeError(pos, "bool must be true or false")
        return raw == "true"
    if type_ == "int":
        body = raw[1:] if raw.startswith("-") else raw
        if not body.isdigit():
            raise DecodeError(pos, "malformed int")
        return int(raw)
    if type_ == "real":
        try:
            return float(raw)
        except ValueError:
            raise DecodeError(pos, "malformed real") from None
    try:
        return unquote(raw, errors="strict")
    except UnicodeDecodeError:
        raise DecodeError(pos, "malformed percent escape") from None


def status_message(seq: int, node: str, letter: str) -> Message:
    return Message(seq, "STATUS", node, status=letter)


def data_message(seq: int, node: str, type_: str, value) -> Message:
    return Message(seq, "DATA", node, type=type_, value=value)
