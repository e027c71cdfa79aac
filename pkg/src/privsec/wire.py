"""Length-prefixed binary framing for federation messages.

Frame layout: magic "AJFW", version byte 0x01, kind byte, 4-byte
little-endian payload length, payload. The payload starts with a fixed
header (round u32, rank u32, n_samples u64, all little-endian) followed by
the message body (serialized ParamVector or ciphertext list).
"""

import struct
from dataclasses import dataclass

__all__ = ["FedMessage", "WireError", "wire_encode", "wire_decode", "read_frame", "KINDS"]

MAGIC = b"AJFW"
VERSION = 1
MAX_PAYLOAD = 2**32 - 1

KINDS = {"hello": 1, "global_model": 2, "local_update": 3, "enc_update": 4, "bye": 5}
_KIND_NAMES = {v: k for k, v in KINDS.items()}

_HEADER = struct.Struct("<IIQ")


class WireError(ValueError):
    pass


@dataclass
class FedMessage:
    kind: str
    round: int = 0
    rank: int = 0
    n_samples: int = 0
    body: bytes = b""


def wire_encode(msg: FedMessage) -> bytes:
    if msg.kind not in KINDS:
        raise WireError(f"unknown message kind {msg.kind!r}")
    payload = _HEADER.pack(msg.round, msg.rank, msg.n_samples) + msg.body
    if len(payload) > MAX_PAYLOAD:
        raise WireError("payload exceeds frame size limit")
    return MAGIC + bytes([VERSION, KINDS[msg.kind]]) + struct.pack("<I", len(payload)) + payload


def wire_decode(data: bytes) -> FedMessage:
    """Decode exactly one frame; trailing bytes are an error."""
    if len(data) < 10:
        raise WireError("truncated frame header")
    if data[:4] != MAGIC:
        raise WireError("bad magic")
    if data[4] != VERSION:
        raise WireError(f"unsupported version {data[4]}")
    kind = _KIND_NAMES.get(data[5])
    if kind is None:
        raise WireError(f"unknown kind byte {data[5]}")
    (length,) = struct.unpack_from("<I", data, 6)
    if len(data) != 10 + length:
        raise WireError("frame length mismatch")
    if length < _HEADER.size:
        raise WireError("payload shorter than header")
    rnd, rank, n_samples = _HEADER.unpack_from(data, 10)
    return FedMessage(kind, rnd, rank, n_samples, data[10 + _HEADER.size :])


def _recv_exact(sock, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise WireError("connection closed mid-frame")
        buf += chunk
    return buf


def read_frame(sock) -> FedMessage:
    """Read one complete frame from a socket."""
    head = _recv_exact(sock, 10)
    if head[:4] != MAGIC:
        raise WireError("bad magic")
    (length,) = struct.unpack_from("<I", head, 6)
    return wire_decode(head + _recv_exact(sock, length))
