"""Packet delivery over a topology, and the transport built on top of it.

One exchange is one forward walk of the router chain from the vantage
point's AS to the destination server's AS:

* every router decrements TTL; expiry at a responding router returns an
  ICMP Time Exceeded event, at a silent router the packet vanishes;
* middleboxes inspect after the decrement, caches before censors at the
  same router;
* a censor whose direction matches the packet's travel relative to its own
  AS (inbound: source outside the AS, outbound: destination outside the AS)
  and whose blocklist matches the Host or request line applies its action;
* injected RST/blockpage packets carry a fresh TTL of 64, or the probe's
  TTL per the censor's ttl_copy mode, and must survive the reverse walk
  (one decrement per hop back) to reach the client;
* caches store every response that flows back through them except injected
  packets, and replay by exact Host.

Censors inspect request packets only: blocklist matching is scoped to the
Host header and request line, which responses do not carry.

Simulated time advances 10 ms per router traversal in each direction; a
packet that vanishes costs the client its full timeout.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Sequence

from ..model import ControlServer, Responder, VantagePoint
from ..sentinel import DEFAULT_DESCRIPTION, render_payload
from ..transport import (
    ConnectionReset,
    ExchangeEvent,
    HopExceeded,
    HttpResponse,
    SetupFailure,
    TimedOut,
)
from .routing import RouterHop, hop_chain, route
from .topology import CacheProxy, Censor, Topology

HOP_MS = 10
FRESH_TTL = 64


@dataclass(frozen=True)
class SimPacket:
    src_asn: int
    dst_asn: int
    ttl: int
    host: str
    request_line: str


@dataclass(frozen=True)
class IcmpTtlExceeded:
    router: RouterHop
    rtt_ms: int


@dataclass(frozen=True)
class InjectedRst:
    censor_hop: RouterHop
    rtt_ms: int


@dataclass(frozen=True)
class InjectedBlockpage:
    data: bytes
    censor_hop: RouterHop
    rtt_ms: int


@dataclass(frozen=True)
class Dropped:
    reason: str


@dataclass(frozen=True)
class DeliveredToServer:
    data: bytes
    rtt_ms: int


@dataclass(frozen=True)
class CachedResponse:
    data: bytes
    cache_hop: RouterHop
    rtt_ms: int


DeliveryEvent = (
    IcmpTtlExceeded | InjectedRst | InjectedBlockpage | Dropped | DeliveredToServer | CachedResponse
)


def direction_matches(censor: Censor, packet: SimPacket) -> bool:
    inbound = packet.src_asn != censor.asn
    outbound = packet.dst_asn != censor.asn
    if censor.direction == "inbound":
        return inbound
    if censor.direction == "outbound":
        return outbound
    return inbound or outbound


def deliver(topology: Topology, packet: SimPacket, server_response: bytes) -> DeliveryEvent:
    """Walk one request packet and return what the client-side observer sees."""
    chain = hop_chain(topology, route(topology, packet.src_asn, packet.dst_asn))
    ttl = packet.ttl
    passed_caches: list[CacheProxy] = []
    for hop in chain:
        ttl -= 1
        for box in topology.middleboxes_at(hop.asn, hop.router_index):
            if isinstance(box, CacheProxy):
                stored = box.store.get(packet.host)
                if stored is not None:
                    for earlier in passed_caches:
                        earlier.store[packet.host] = stored
                    return CachedResponse(stored, hop, rtt_ms=2 * HOP_MS * hop.index)
                passed_caches.append(box)
                continue
            censor: Censor = box
            if direction_matches(censor, packet) and censor.matches(
                packet.host, packet.request_line
            ):
                if censor.action == "drop":
                    return Dropped(f"drop censor at hop {hop.index}")
                if censor.ttl_copy:
                    injected_ttl = ttl if censor.ttl_copy_mode == "remaining" else packet.ttl
                else:
                    injected_ttl = FRESH_TTL
                if injected_ttl < hop.index:
                    return Dropped(f"injected packet expired on reverse path from hop {hop.index}")
                rtt = 2 * HOP_MS * hop.index
                if censor.action == "rst":
                    return InjectedRst(hop, rtt_ms=rtt)
                return InjectedBlockpage(censor.injected_response(), hop, rtt_ms=rtt)
        if ttl == 0:
            if hop.responds_icmp:
                return IcmpTtlExceeded(hop, rtt_ms=2 * HOP_MS * hop.index)
            return Dropped(f"ttl expired at silent router, hop {hop.index}")
    for cache in passed_caches:
        cache.store[packet.host] = server_response
    return DeliveredToServer(server_response, rtt_ms=2 * HOP_MS * (len(chain) + 1))


def _parse_request(request: bytes) -> tuple[str, str]:
    head = request.split(b"\r\n\r\n", 1)[0]
    lines = head.split(b"\r\n")
    request_line = lines[0].decode("latin-1", errors="replace")
    host = ""
    for line in lines[1:]:
        name, sep, value = line.partition(b":")
        if sep and name.strip().lower() == b"host":
            host = value.strip().decode("latin-1", errors="replace")
            break
    return host, request_line


@dataclass(frozen=True)
class _Endpoint:
    server: ControlServer
    asn: int
    response: bytes


class SimTransport:
    """Transport backed by a topology; the drop-in replacement for real TCP.

    One packet walk runs at a time per instance; the logical clock advances
    by the walk's round-trip time, or by the caller's timeout when the
    packet vanished.
    """

    def __init__(
        self,
        topology: Topology,
        servers: Sequence[ControlServer],
        description: str = DEFAULT_DESCRIPTION,
        start_ms: int = 0,
    ):
        self._topology = topology
        self._lock = threading.RLock()
        self._now = start_ms
        self._endpoints: dict[str, _Endpoint] = {}
        for server in servers:
            asn = topology.servers.get(server.id)
            if asn is None:
                raise ValueError(f"server {server.id!r} is not hosted in the topology")
            payload = render_payload(server, description)
            self._endpoints[server.address] = _Endpoint(
                server=server, asn=asn, response=_http_ok(payload.body)
            )

    @property
    def topology(self) -> Topology:
        return self._topology

    def now_ms(self) -> int:
        with self._lock:
            return self._now

    def supports_ttl(self, vp: VantagePoint) -> bool:
        from ..model import DirectAccess

        return isinstance(vp.access, DirectAccess)

    def exchange(
        self,
        vp: VantagePoint,
        server_address: str,
        request: bytes,
        timeout_ms: int,
        ttl: int | None = None,
        port: int = 80,
    ) -> ExchangeEvent:
        with self._lock:
            endpoint = self._endpoints.get(server_address)
            if endpoint is None:
                return SetupFailure(f"no simulated server at {server_address}")
            src_asn = self._topology.vps.get(vp.id)
            if src_asn is None:
                return SetupFailure(f"vp {vp.id!r} is not hosted in the topology")
            host, request_line = _parse_request(request)
            packet = SimPacket(
                src_asn=src_asn,
                dst_asn=endpoint.asn,
                ttl=ttl if ttl is not None else FRESH_TTL,
                host=host,
                request_line=request_line,
            )
            event = deliver(self._topology, packet, endpoint.response)
            return self._to_exchange_event(event, endpoint, timeout_ms)

    def _to_exchange_event(self, event, endpoint: _Endpoint, timeout_ms: int) -> ExchangeEvent:
        if isinstance(event, DeliveredToServer):
            self._now += event.rtt_ms
            server = endpoint.server
            origin = Responder(server.address, endpoint.asn, f"{server.platform} {server.region}")
            return HttpResponse(event.data, event.rtt_ms, origin=origin)
        if isinstance(event, CachedResponse):
            self._now += event.rtt_ms
            return HttpResponse(event.data, event.rtt_ms, origin=_hop_responder(event.cache_hop))
        if isinstance(event, InjectedBlockpage):
            self._now += event.rtt_ms
            return HttpResponse(event.data, event.rtt_ms, origin=_hop_responder(event.censor_hop))
        if isinstance(event, InjectedRst):
            self._now += event.rtt_ms
            return ConnectionReset(event.rtt_ms, origin=_hop_responder(event.censor_hop))
        if isinstance(event, IcmpTtlExceeded):
            self._now += event.rtt_ms
            return HopExceeded(
                event.router.ip, event.router.asn, event.router.label, event.rtt_ms
            )
        if isinstance(event, Dropped):
            self._now += timeout_ms
            return TimedOut()
        raise AssertionError(f"unhandled delivery event {event!r}")


def _hop_responder(hop: RouterHop) -> Responder:
    return Responder(hop.ip, hop.asn, hop.label)


def _http_ok(body: bytes) -> bytes:
    head = (
        "HTTP/1.1 200 OK\r\n"
        "Content-Type: text/html; charset=utf-8\r\n"
        f"Content-Length: {len(body)}\r\n"
        "Cache-Control: no-store\r\n"
        "Connection: close\r\n"
        "\r\n"
    )
    return head.encode("ascii") + body


def path_censorship(
    topology: Topology,
    src_asn: int,
    dst_asn: int,
    host: str,
    request_line: str = "GET / HTTP/1.1",
) -> Censor | None:
    """First censor that would act on this request, ignoring caches and TTL.

    This is the side-effect-free inspection used by what-if queries; it never
    touches cache-proxy state.
    """
    packet = SimPacket(src_asn, dst_asn, FRESH_TTL, host, request_line)
    for hop in hop_chain(topology, route(topology, src_asn, dst_asn)):
        for box in topology.middleboxes_at(hop.asn, hop.router_index):
            if (
                isinstance(box, Censor)
                and direction_matches(box, packet)
                and box.matches(host, request_line)
            ):
                return box
    return None


@dataclass(frozen=True)
class WhatIfEntry:
    server: ControlServer
    censored_fraction: float
    censored_domains: tuple[str, ...]


def whatif_min_censorship(
    topology: Topology,
    vp: VantagePoint,
    domains: Sequence,
    candidate_servers: Sequence[ControlServer],
) -> list[WhatIfEntry]:
    """Rank candidate servers by the fraction of domains censored on path.

    Ascending by fraction, ties by server id: the first entry is the best
    detour destination for this vantage point.
    """
    src_asn = topology.vps.get(vp.id)
    if src_asn is None:
        raise ValueError(f"vp {vp.id!r} is not hosted in the topology")
    entries = []
    for server in candidate_servers:
        dst_asn = topology.servers.get(server.id)
        if dst_asn is None:
            raise ValueError(f"server {server.id!r} is not hosted in the topology")
        censored = tuple(
            d.name
            for d in domains
            if path_censorship(topology, src_asn, dst_asn, d.name.lower()) is not None
        )
        fraction = len(censored) / len(domains) if domains else 0.0
        entries.append(WhatIfEntry(server, fraction, censored))
    entries.sort(key=lambda e: (e.censored_fraction, e.server.id))
    return entries
