"""Round messages and their binary frames.

A frame is a 4-byte big-endian payload length followed by the payload::

    b"FH01" | kind:u8 | round:i64 BE | kind-specific fields

Tensors are ``rank:u8, dims:u32 BE..., float64 LE data``. A coefficient set
is ``layers:u32, slots:u32, width:u32`` followed by layers*slots vectors,
each ``count:u32`` + float64 LE data. Lists are ``count:u32`` prefixed.
Frames carry numbers only; schema names never appear on the wire.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, fields
from typing import Sequence, Union

import numpy as np

from ..errors import ProtocolError

MAGIC = b"FH01"
_HEAD = struct.Struct(">4sBq")


class Kind(enum.IntEnum):
    JOIN = 1
    ACK = 2
    BROADCAST = 3      # server -> client, start of a round
    UPDATE = 4         # client -> server, end of local training
    EVAL_REQUEST = 5
    EVAL_REPLY = 6
    STOP = 7
    ABORT = 8          # client -> server, local step failed


class EvalMode(enum.IntEnum):
    VALID = 0
    FINAL = 1


class AbortReason(enum.IntEnum):
    NUMERIC = 1
    CONFIG = 2


class _Message:
    kind: Kind

    def __eq__(self, other) -> bool:
        if type(self) is not type(other):
            return NotImplemented
        return all(_same(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))

    __hash__ = None


def _same(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        if not (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)):
            return False
        return a.shape == b.shape and bool(np.array_equal(a, b, equal_nan=True))
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return a == b


Tensors = tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class Join(_Message):
    round: int
    client_id: int
    n_train: int
    type_counts: tuple[int, ...]      # edge-type count per layer
    kind = Kind.JOIN


@dataclass(frozen=True, eq=False)
class Ack(_Message):
    round: int
    shared: Tensors
    own_coeffs: np.ndarray | None
    kind = Kind.ACK


@dataclass(frozen=True, eq=False)
class ServerToClient(_Message):
    round: int
    shared: Tensors
    peers: tuple[np.ndarray, ...]
    kind = Kind.BROADCAST


@dataclass(frozen=True, eq=False)
class ClientToServer(_Message):
    round: int
    shared: Tensors
    own_coeffs: np.ndarray | None
    n_train: int
    kind = Kind.UPDATE


@dataclass(frozen=True, eq=False)
class EvalRequest(_Message):
    round: int
    mode: EvalMode
    keep_round: int
    shared: Tensors
    kind = Kind.EVAL_REQUEST


@dataclass(frozen=True, eq=False)
class EvalReply(_Message):
    round: int
    n_valid: int
    valid_correct: int
    n_test: int
    test_correct: int
    kind = Kind.EVAL_REPLY


@dataclass(frozen=True, eq=False)
class Stop(_Message):
    round: int
    kind = Kind.STOP


@dataclass(frozen=True, eq=False)
class Abort(_Message):
    round: int
    reason: AbortReason
    kind = Kind.ABORT


RoundMessage = Union[Join, Ack, ServerToClient, ClientToServer, EvalRequest, EvalReply, Stop, Abort]


# ---------------------------------------------------------------------------
# encoding


def _u32(n: int) -> bytes:
    return struct.pack(">I", n)


def _tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8")
    if arr.ndim > 255:
        raise ProtocolError("tensor rank too large")
    return bytes([arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes(order="C")


def _tensors(ts: Sequence[np.ndarray]) -> bytes:
    return _u32(len(ts)) + b"".join(_tensor(t) for t in ts)


def _coeff_set(c: np.ndarray) -> bytes:
    c = np.asarray(c, dtype="<f8")
    if c.ndim != 3:
        raise ProtocolError("coefficient sets are (layers, slots, width) arrays")
    L, R, B = c.shape
    parts = [_u32(L), _u32(R), _u32(B)]
    for l in range(L):
        for r in range(R):
            parts.append(_u32(B) + c[l, r].tobytes())
    return b"".join(parts)


def _opt_coeff_set(c: np.ndarray | None) -> bytes:
    return b"\x00" if c is None else b"\x01" + _coeff_set(c)


def encode_payload(m: RoundMessage) -> bytes:
    body = _HEAD.pack(MAGIC, int(m.kind), m.round)
    if isinstance(m, Join):
        body += _u32(m.client_id) + _u32(m.n_train) + _u32(len(m.type_counts))
        body += b"".join(_u32(c) for c in m.type_counts)
    elif isinstance(m, Ack):
        body += _tensors(m.shared) + _opt_coeff_set(m.own_coeffs)
    elif isinstance(m, ServerToClient):
        body += _tensors(m.shared) + _u32(len(m.peers)) + b"".join(_coeff_set(p) for p in m.peers)
    elif isinstance(m, ClientToServer):
        body += _tensors(m.shared) + _opt_coeff_set(m.own_coeffs) + _u32(m.n_train)
    elif isinstance(m, EvalRequest):
        body += bytes([int(m.mode)]) + struct.pack(">q", m.keep_round) + _tensors(m.shared)
    elif isinstance(m, EvalReply):
        body += struct.pack(">4Q", m.n_valid, m.valid_correct, m.n_test, m.test_correct)
    elif isinstance(m, Abort):
        body += bytes([int(m.reason)])
    elif not isinstance(m, Stop):
        raise ProtocolError(f"cannot encode {type(m).__name__}")
    return body


def encode_message(m: RoundMessage) -> bytes:
    payload = encode_payload(m)
    return struct.pack(">I", len(payload)) + payload


# ---------------------------------------------------------------------------
# decoding


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ProtocolError("truncated frame")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u32(self) -> int:
        return self.unpack(">I")[0]

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def tensor(self) -> np.ndarray:
        rank = self.take(1)[0]
        dims = self.unpack(f">{rank}I")
        return self.floats(int(np.prod(dims, dtype=np.int64))).reshape(dims)

    def tensors(self) -> Tensors:
        return tuple(self.tensor() for _ in range(self.u32()))

    def coeff_set(self) -> np.ndarray:
        L, R, B = self.unpack(">3I")
        out = np.zeros((L, R, B))
        for l in range(L):
            for r in range(R):
                if self.u32() != B:
                    raise ProtocolError("coefficient vector length differs from set width")
                out[l, r] = self.floats(B)
        return out

    def opt_coeff_set(self) -> np.ndarray | None:
        flag = self.take(1)[0]
        if flag not in (0, 1):
            raise ProtocolError("bad optional flag")
        return self.coeff_set() if flag else None


def decode_payload(payload: bytes) -> RoundMessage:
    rd = _Reader(payload)
    magic, kind, rnd = rd.unpack(">4sBq")
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise ProtocolError(f"unknown message kind {kind}") from None
    if kind is Kind.JOIN:
        cid, n_train, n = rd.unpack(">3I")
        m = Join(rnd, cid, n_train, tuple(rd.u32() for _ in range(n)))
    elif kind is Kind.ACK:
        m = Ack(rnd, rd.tensors(), rd.opt_coeff_set())
    elif kind is Kind.BROADCAST:
        shared = rd.tensors()
        m = ServerToClient(rnd, shared, tuple(rd.coeff_set() for _ in range(rd.u32())))
    elif kind is Kind.UPDATE:
        m = ClientToServer(rnd, rd.tensors(), rd.opt_coeff_set(), rd.u32())
    elif kind is Kind.EVAL_REQUEST:
        try:
            mode = EvalMode(rd.take(1)[0])
        except ValueError:
            raise ProtocolError("unknown evaluation mode") from None
        m = EvalRequest(rnd, mode, rd.unpack(">q")[0], rd.tensors())
    elif kind is Kind.EVAL_REPLY:
        m = EvalReply(rnd, *rd.unpack(">4Q"))
    elif kind is Kind.ABORT:
        try:
            m = Abort(rnd, AbortReason(rd.take(1)[0]))
        except ValueError:
            raise ProtocolError("unknown abort reason") from None
    else:
        m = Stop(rnd)
    if rd.pos != len(payload):
        raise ProtocolError("trailing bytes in frame")
    return m


def decode_message(frame: bytes) -> RoundMessage:
    if len(frame) < 4:
        raise ProtocolError("truncated frame header")
    (n,) = struct.unpack(">I", frame[:4])
    if len(frame) - 4 != n:
        raise ProtocolError(f"frame declares {n} payload bytes, has {len(frame) - 4}")
    return decode_payload(frame[4:])
