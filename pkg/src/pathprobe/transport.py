"""Connection transports used by the prober, vetting, and tracer.

A transport opens one TCP connection per exchange (keep-alive is never used),
sends the prepared request bytes, and reports what came back as an event. The
real transport speaks plain TCP or SOCKS5 (RFC 1928, CONNECT only); the
simulated transport lives in the simnet package and implements the same
protocol against a topology.
"""

from __future__ import annotations

import errno
import select
import socket
import struct
import time
from dataclasses import dataclass
from typing import Protocol

from .model import DirectAccess, Responder, Socks5Access, VantagePoint

DEFAULT_HTTP_PORT = 80
_MAX_RESPONSE_BYTES = 1 << 20


@dataclass(frozen=True)
class HttpResponse:
    """A complete HTTP message arrived (any status, any body).

    origin identifies the responding device when the transport knows it
    (simulation only); the real network never reveals it.
    """

    data: bytes
    rtt_ms: int
    origin: Responder | None = None


@dataclass(frozen=True)
class ConnectionReset:
    """The connection was torn down (RST, or FIN before any payload)."""

    rtt_ms: int
    origin: Responder | None = None


@dataclass(frozen=True)
class TimedOut:
    """Nothing came back within the deadline."""


@dataclass(frozen=True)
class HopExceeded:
    """ICMP Time Exceeded from an on-path router (TTL-limited sends only)."""

    ip: str | None
    asn: int | None
    label: str | None
    rtt_ms: int


@dataclass(frozen=True)
class SetupFailure:
    """The transport itself could not be established (e.g. SOCKS refusal)."""

    reason: str


ExchangeEvent = HttpResponse | ConnectionReset | TimedOut | HopExceeded | SetupFailure


class Transport(Protocol):
    def exchange(
        self,
        vp: VantagePoint,
        server_address: str,
        request: bytes,
        timeout_ms: int,
        ttl: int | None = None,
        port: int = DEFAULT_HTTP_PORT,
    ) -> ExchangeEvent:
        """Send one request from ``vp`` to the server and classify the wire result."""
        ...

    def now_ms(self) -> int:
        """Current clock in milliseconds (wall clock or simulated)."""
        ...

    def supports_ttl(self, vp: VantagePoint) -> bool:
        """Whether TTL-limited probes can be issued from this vantage point."""
        ...


class Socks5Error(OSError):
    """SOCKS5 negotiation failed before the tunnel was established."""


def socks5_connect(
    sock: socket.socket,
    dest_ip: str,
    dest_port: int,
    username: str | None = None,
    password: str | None = None,
) -> None:
    """Negotiate a SOCKS5 CONNECT tunnel on an already-connected socket.

    Implements the client side of RFC 1928 (and RFC 1929 username/password
    auth when credentials are given). IPv4 destinations only.
    """
    if username is not None:
        methods = bytes([0x05, 0x02, 0x00, 0x02])  # no-auth + user/pass
    else:
        methods = bytes([0x05, 0x01, 0x00])
    sock.sendall(methods)
    reply = _recv_exact(sock, 2)
    if reply[0] != 0x05:
        raise Socks5Error(f"not a SOCKS5 server (version {reply[0]})")
    chosen = reply[1]
    if chosen == 0x02:
        if username is None:
            raise Socks5Error("server demands username/password auth")
        creds = (
            bytes([0x01, len(username)])
            + username.encode()
            + bytes([len(password or "")])
            + (password or "").encode()
        )
        sock.sendall(creds)
        auth = _recv_exact(sock, 2)
        if auth[1] != 0x00:
            raise Socks5Error("username/password auth rejected")
    elif chosen != 0x00:
        raise Socks5Error(f"no acceptable auth method (server offered {chosen:#x})")

    request = bytes([0x05, 0x01, 0x00, 0x01]) + socket.inet_aton(dest_ip)
    request += struct.pack(">H", dest_port)
    sock.sendall(request)
    head = _recv_exact(sock, 4)
    if head[1] != 0x00:
        raise Socks5Error(f"CONNECT refused (reply code {head[1]})")
    # Drain the bound address so the stream starts at the tunneled payload.
    atyp = head[3]
    if atyp == 0x01:
        _recv_exact(sock, 4 + 2)
    elif atyp == 0x03:
        n = _recv_exact(sock, 1)[0]
        _recv_exact(sock, n + 2)
    elif atyp == 0x04:
        _recv_exact(sock, 16 + 2)
    else:
        raise Socks5Error(f"unknown address type {atyp:#x} in reply")


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise Socks5Error("connection closed during negotiation")
        buf += chunk
    return buf


class RealTransport:
    """Plain TCP / SOCKS5 transport over the actual network.

    TTL-limited sends are available for direct vantage points only. Mapping a
    TTL expiry to the responding router's address requires a raw ICMP socket;
    without that privilege the hop is reported silent.
    """

    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def supports_ttl(self, vp: VantagePoint) -> bool:
        return isinstance(vp.access, DirectAccess)

    def exchange(
        self,
        vp: VantagePoint,
        server_address: str,
        request: bytes,
        timeout_ms: int,
        ttl: int | None = None,
        port: int = DEFAULT_HTTP_PORT,
    ) -> ExchangeEvent:
        timeout = timeout_ms / 1000.0
        started = time.monotonic()
        icmp_sock = None
        try:
            sock = self._open(vp, server_address, port, timeout, ttl)
        except Socks5Error as exc:
            return SetupFailure(f"socks5: {exc}")
        except socket.timeout:
            return TimedOut()
        except ConnectionResetError:
            return ConnectionReset(self._elapsed_ms(started))
        except OSError as exc:
            if ttl is not None and exc.errno in (errno.EHOSTUNREACH, errno.ENETUNREACH, errno.ETIMEDOUT):
                return TimedOut()
            return SetupFailure(str(exc))

        if ttl is not None:
            icmp_sock = self._try_icmp_socket()
        try:
            sock.sendall(request)
            data = b""
            deadline = started + timeout
            while len(data) < _MAX_RESPONSE_BYTES:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return TimedOut() if not data else HttpResponse(data, self._elapsed_ms(started))
                readable = [sock] + ([icmp_sock] if icmp_sock else [])
                ready, _, _ = select.select(readable, [], [], remaining)
                if not ready:
                    return TimedOut() if not data else HttpResponse(data, self._elapsed_ms(started))
                if icmp_sock in ready:
                    hop_ip = self._read_time_exceeded(icmp_sock)
                    if hop_ip:
                        return HopExceeded(hop_ip, None, None, self._elapsed_ms(started))
                if sock in ready:
                    try:
                        chunk = sock.recv(65536)
                    except ConnectionResetError:
                        if data:
                            return HttpResponse(data, self._elapsed_ms(started))
                        return ConnectionReset(self._elapsed_ms(started))
                    if not chunk:
                        if data:
                            return HttpResponse(data, self._elapsed_ms(started))
                        return ConnectionReset(self._elapsed_ms(started))
                    data += chunk
            return HttpResponse(data, self._elapsed_ms(started))
        except socket.timeout:
            return TimedOut()
        except ConnectionResetError:
            return ConnectionReset(self._elapsed_ms(started))
        finally:
            sock.close()
            if icmp_sock:
                icmp_sock.close()

    def _open(self, vp, server_address, port, timeout, ttl):
        if isinstance(vp.access, Socks5Access):
            sock = socket.create_connection((vp.access.host, vp.access.port), timeout=timeout)
            try:
                socks5_connect(
                    sock, server_address, port, vp.access.username, vp.access.password
                )
            except Exception:
                sock.close()
                raise
            return sock
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.settimeout(timeout)
        if ttl is not None:
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_TTL, ttl)
        try:
            sock.connect((server_address, port))
        except Exception:
            sock.close()
            raise
        return sock

    @staticmethod
    def _try_icmp_socket():
        try:
            s = socket.socket(socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_ICMP)
            s.setblocking(False)
            return s
        except (PermissionError, OSError):
            return None

    @staticmethod
    def _read_time_exceeded(icmp_sock) -> str | None:
        try:
            packet, addr = icmp_sock.recvfrom(1024)
        except OSError:
            return None
        if len(packet) < 21:
            return None
        ihl = (packet[0] & 0x0F) * 4
        icmp_type = packet[ihl]
        if icmp_type == 11:  # Time Exceeded
            return addr[0]
        return None

    @staticmethod
    def _elapsed_ms(started: float) -> int:
        return max(0, int((time.monotonic() - started) * 1000))
