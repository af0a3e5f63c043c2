"""Frame transports between the server and its clients.

Both transports move the same encoded frames; a link is a bidirectional
byte pipe with ``send(frame)``, ``recv(timeout)`` and ``close()``.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading

from ..errors import TransportError

_CLOSED = object()


class QueueLink:
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._in = inbox
        self._out = outbox

    def send(self, frame: bytes) -> None:
        self._out.put(bytes(frame))

    def recv(self, timeout: float | None = None) -> bytes:
        try:
            item = self._in.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no frame within timeout") from None
        if item is _CLOSED:
            raise TransportError("peer closed the link")
        return item

    def close(self) -> None:
        self._out.put(_CLOSED)


def queue_pair() -> tuple[QueueLink, QueueLink]:
    """(server side, client side) of one in-process connection."""
    a, b = queue.Queue(), queue.Queue()
    return QueueLink(a, b), QueueLink(b, a)


class SocketLink:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._lock = threading.Lock()

    def send(self, frame: bytes) -> None:
        try:
            with self._lock:
                self.sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise TransportError("connection closed by peer")
            buf += chunk
        return bytes(buf)

    def recv(self, timeout: float | None = None) -> bytes:
        self.sock.settimeout(timeout)
        try:
            head = self._exact(4)
            # once a header arrived the rest of the frame is waited for
            self.sock.settimeout(None)
            return head + self._exact(struct.unpack(">I", head)[0])
        except socket.timeout:
            raise TimeoutError("no frame within timeout") from None
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class SocketListener:
    """Accepts client connections on a TCP address (port 0 picks a free one)."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.sock = socket.create_server((host, port))

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()[:2]

    def accept(self, n: int, timeout: float | None = None) -> list[SocketLink]:
        self.sock.settimeout(timeout)
        links = []
        try:
            for _ in range(n):
                conn, _ = self.sock.accept()
                conn.settimeout(None)
                links.append(SocketLink(conn))
        except socket.timeout:
            for link in links:
                link.close()
            raise TransportError(f"only {len(links)} of {n} clients connected") from None
        return links

    def close(self) -> None:
        self.sock.close()


def connect(address: tuple[str, int], timeout: float = 30.0) -> SocketLink:
    try:
        sock = socket.create_connection(address, timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to {address}: {exc}") from exc
    sock.settimeout(None)
    return SocketLink(sock)
