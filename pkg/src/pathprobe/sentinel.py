"""The control server: answers every HTTP request with one static payload.

The payload is the ground truth for "no on-path interference": any response a
prober sees that is not byte-identical to it was produced by the network, not
by us. The server therefore answers every method, path, and Host the same
way, logs each request for server-side correlation, and never keeps a
connection alive.
"""

from __future__ import annotations

import html
import json
import socket
import socketserver
import threading
import time
from dataclasses import dataclass

from .model import ControlServer, ModelError

MAX_PAYLOAD_BYTES = 8 * 1024
MAX_LOGGED_REQUEST_LINE = 512
_HEADER_LIMIT = 64 * 1024

DEFAULT_DESCRIPTION = (
    "This server is part of an academic network measurement experiment that "
    "studies how HTTP requests are treated on different network paths. It "
    "serves only this fixed page and stores no visitor content. "
    "Questions or concerns: measurement-ops@example.net"
)


class PayloadTooLarge(ModelError):
    """The rendered sentinel body would reach the 8 KiB ceiling."""


@dataclass(frozen=True)
class SentinelPayload:
    token: str
    description_text: str
    body: bytes

    def __post_init__(self) -> None:
        if self.body.count(self.token.encode()) != 1:
            raise ModelError("body must contain the token exactly once")
        if self.description_text and html.escape(self.description_text).encode() not in self.body:
            raise ModelError("body must contain the description text")
        if len(self.body) >= MAX_PAYLOAD_BYTES:
            raise PayloadTooLarge(
                f"payload is {len(self.body)} bytes, limit {MAX_PAYLOAD_BYTES}"
            )


@dataclass(frozen=True)
class ServerLogEntry:
    timestamp: float
    client_ip: str
    host_header: str
    request_line: str
    bytes_in: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "timestamp": self.timestamp,
                "client_ip": self.client_ip,
                "host_header": self.host_header,
                "request_line": self.request_line,
                "bytes_in": self.bytes_in,
            },
            ensure_ascii=False,
        )


def render_payload(server: ControlServer, description_text: str) -> SentinelPayload:
    """Render the static sentinel page. Deterministic in its inputs."""
    if not description_text:
        raise ModelError("description_text must be non-empty")
    body = (
        "<!DOCTYPE html>\n"
        "<html>\n"
        "<head><title>Network measurement sentinel</title></head>\n"
        "<body>\n"
        "<h1>Network measurement in progress</h1>\n"
        f"<p>{html.escape(description_text)}</p>\n"
        f"<p>Endpoint: platform={html.escape(server.platform)} "
        f"region={html.escape(server.region)} id={html.escape(server.id)}</p>\n"
        f"<p>Sentinel token: {server.sentinel_token}</p>\n"
        "</body>\n"
        "</html>\n"
    ).encode("utf-8")
    if len(body) >= MAX_PAYLOAD_BYTES:
        raise PayloadTooLarge(f"payload is {len(body)} bytes, limit {MAX_PAYLOAD_BYTES}")
    return SentinelPayload(
        token=server.sentinel_token, description_text=description_text, body=body
    )


def _response_bytes(status: str, body: bytes) -> bytes:
    head = (
        f"HTTP/1.1 {status}\r\n"
        "Content-Type: text/html; charset=utf-8\r\n"
        f"Content-Length: {len(body)}\r\n"
        "Cache-Control: no-store\r\n"
        "Connection: close\r\n"
        "\r\n"
    ).encode("ascii")
    return head + body


class _SentinelHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:  # noqa: D102 - socketserver hook
        server: SentinelServer = self.server  # type: ignore[assignment]
        sock: socket.socket = self.request
        sock.settimeout(10.0)
        raw = b""
        try:
            while b"\r\n\r\n" not in raw and len(raw) < _HEADER_LIMIT:
                chunk = sock.recv(65536)
                if not chunk:
                    break
                raw += chunk
        except (OSError, socket.timeout):
            pass
        if not raw:
            return

        request_line, host, well_formed = _parse_head(raw)
        status = "200 OK" if well_formed else "400 Bad Request"
        try:
            sock.sendall(_response_bytes(status, server.payload.body))
        except OSError:
            pass
        server.log(
            ServerLogEntry(
                timestamp=time.time(),
                client_ip=self.client_address[0],
                host_header=host,
                request_line=request_line[:MAX_LOGGED_REQUEST_LINE],
                bytes_in=len(raw),
            )
        )


def _parse_head(raw: bytes) -> tuple[str, str, bool]:
    """Split out the request line and Host header, tolerating any garbage."""
    head = raw.split(b"\r\n\r\n", 1)[0]
    lines = head.split(b"\r\n")
    request_line = lines[0].decode("latin-1", errors="replace")
    host = ""
    for line in lines[1:]:
        name, sep, value = line.partition(b":")
        if sep and name.strip().lower() == b"host":
            host = value.strip().decode("latin-1", errors="replace")
            break
    parts = request_line.split(" ")
    well_formed = (
        len(parts) == 3
        and parts[0].isalpha()
        and parts[2].startswith("HTTP/")
    )
    return request_line, host, well_formed


class SentinelServer(socketserver.ThreadingTCPServer):
    """Running responder handle. One log entry per completed request.

    Use as a context manager or call start()/stop(). stop() drains in-flight
    connections before returning.
    """

    allow_reuse_address = True
    daemon_threads = False
    block_on_close = True
    request_queue_size = 128

    def __init__(self, bind_address: tuple[str, int], payload: SentinelPayload, log_sink):
        super().__init__(bind_address, _SentinelHandler)
        self.payload = payload
        self._log_sink = log_sink
        self._log_lock = threading.Lock()
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def log(self, entry: ServerLogEntry) -> None:
        with self._log_lock:
            self._log_sink.write(entry.to_json() + "\n")
            self._log_sink.flush()

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.shutdown()
        if self._thread is not None:
            self._thread.join()
        self.server_close()

    def wait(self) -> None:
        """Block until the server is shut down from elsewhere."""
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "SentinelServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(bind_address: tuple[str, int], payload: SentinelPayload, log_sink) -> SentinelServer:
    """Bind and start a sentinel responder; returns the running handle."""
    server = SentinelServer(bind_address, payload, log_sink)
    server.start()
    return server
