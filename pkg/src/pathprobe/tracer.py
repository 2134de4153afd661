"""Application traceroute: locate the hop where interference is injected.

The censor-triggering HTTP request is re-sent with TTL 1, 2, 3, ... over a
fresh connection each time. Routers before the interfering device answer
with ICMP Time Exceeded; the first TTL that elicits an interference sign
(RST or blockpage) is the censor hop. A censor that copies the probe's
remaining TTL into its injected packet first becomes visible at twice its
true distance, because the injection must survive the walk back.
"""

from __future__ import annotations

import csv
import io
import ipaddress
import logging
from typing import Iterable, Sequence

from .model import (
    Blockpage,
    Censored,
    CensorSign,
    Exhausted,
    ModelError,
    OtherPayload,
    ProbeSpec,
    Reset,
    Responder,
    Sentinel,
    SentinelReached,
    TraceHop,
    TraceResult,
    TtlExceeded,
)
from .prober import BlockpageSignatureDB, build_request, classify
from .transport import (
    ConnectionReset,
    HopExceeded,
    SetupFailure,
    TimedOut,
    Transport,
)

log = logging.getLogger(__name__)

DEFAULT_MAX_TTL = 40
DEFAULT_PER_HOP_TIMEOUT_MS = 2_000
DEFAULT_PER_HOP_RETRIES = 1


class UnsupportedTransport(RuntimeError):
    """The vantage point cannot set the IP TTL (SOCKS relays operate above it)."""


class TraceError(RuntimeError):
    """The traceroute could not run at all (transport setup failed)."""


def app_traceroute(
    spec: ProbeSpec,
    max_ttl: int,
    transport: Transport,
    db: BlockpageSignatureDB | None = None,
    per_hop_timeout_ms: int = DEFAULT_PER_HOP_TIMEOUT_MS,
    per_hop_retries: int = DEFAULT_PER_HOP_RETRIES,
) -> TraceResult:
    """Sweep TTLs until a terminal signal or max_ttl.

    One full TCP+HTTP exchange per TTL value, with one retry before a hop is
    marked silent. An unexpected payload (neither sentinel nor blockpage,
    e.g. a cache reply) ends the sweep as exhausted; such vantage points
    should have been vetted out beforehand.
    """
    if not 1 <= max_ttl <= 64:
        raise ModelError(f"max_ttl must be within 1..64, got {max_ttl}")
    if not transport.supports_ttl(spec.vp):
        raise UnsupportedTransport(
            f"vp {spec.vp.id!r} cannot set TTLs on probe packets (proxied access)"
        )
    db = db if db is not None else BlockpageSignatureDB.empty()
    request = build_request(spec.domain)
    hops: list[TraceHop] = []
    terminal = Exhausted()
    censor_hop = None

    for ttl in range(1, max_ttl + 1):
        event = None
        for _ in range(1 + per_hop_retries):
            event = transport.exchange(
                spec.vp, spec.server.address, request, per_hop_timeout_ms, ttl=ttl
            )
            if not isinstance(event, TimedOut):
                break
        if isinstance(event, SetupFailure):
            raise TraceError(f"transport setup failed at ttl {ttl}: {event.reason}")
        if isinstance(event, TimedOut):
            hops.append(TraceHop(ttl=ttl))
            continue
        if isinstance(event, HopExceeded):
            responder = Responder(event.ip, event.asn, event.label) if event.ip else None
            hops.append(TraceHop(ttl=ttl, responder=responder, signal=TtlExceeded()))
            continue
        if isinstance(event, ConnectionReset):
            hops.append(TraceHop(ttl=ttl, responder=event.origin, signal=CensorSign(Reset())))
            terminal = Censored(Reset())
            censor_hop = ttl
            break
        outcome = classify(event, spec.server, db)
        if isinstance(outcome, Sentinel):
            hops.append(
                TraceHop(ttl=ttl, responder=event.origin, signal=SentinelReached())
            )
            terminal = Sentinel()
            break
        if isinstance(outcome, Blockpage):
            mechanism = Blockpage(outcome.signature_id)
            hops.append(
                TraceHop(ttl=ttl, responder=event.origin, signal=CensorSign(mechanism))
            )
            terminal = Censored(mechanism)
            censor_hop = ttl
            break
        if isinstance(outcome, OtherPayload):
            log.warning(
                "trace %s->%s ttl %d: unexpected payload (digest %s), stopping",
                spec.vp.id, spec.server.id, ttl, outcome.body_digest[:12],
            )
            hops.append(TraceHop(ttl=ttl))
            break

    return TraceResult(spec=spec, hops=tuple(hops), terminal=terminal, censor_hop=censor_hop)


# --- IP to ASN annotation ----------------------------------------------------


class IpAsnTable:
    """Longest-prefix-match lookup over `<CIDR> <ASN> [label]` text lines."""

    def __init__(self, entries: Iterable[tuple[str, int, str | None]]):
        # prefixes bucketed by length: {prefix_len: {network_int: (asn, label)}}
        self._buckets: dict[int, dict[int, tuple[int, str | None]]] = {}
        for cidr, asn, label in entries:
            network = ipaddress.IPv4Network(cidr, strict=False)
            bucket = self._buckets.setdefault(network.prefixlen, {})
            bucket[int(network.network_address)] = (asn, label)

    @classmethod
    def from_text(cls, text: str) -> "IpAsnTable":
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 2)
            if len(parts) < 2:
                raise ValueError(f"line {lineno}: expected '<CIDR> <ASN> [label]'")
            entries.append((parts[0], int(parts[1]), parts[2] if len(parts) > 2 else None))
        return cls(entries)

    def lookup(self, ip: str) -> tuple[int, str | None] | None:
        addr = int(ipaddress.IPv4Address(ip))
        for prefix_len in sorted(self._buckets, reverse=True):
            mask = 0xFFFFFFFF << (32 - prefix_len) & 0xFFFFFFFF if prefix_len else 0
            hit = self._buckets[prefix_len].get(addr & mask)
            if hit is not None:
                return hit
        return None


def annotate_asn(result: TraceResult, mapping: IpAsnTable) -> TraceResult:
    """Re-derive every responder's ASN by longest-prefix match.

    Unmapped responders come back with an unknown (None) ASN; their label is
    kept so simulation-sourced context survives a partial table.
    """
    hops = []
    for hop in result.hops:
        if hop.responder is None:
            hops.append(hop)
            continue
        hit = mapping.lookup(hop.responder.ip)
        if hit is None:
            responder = Responder(hop.responder.ip, None, hop.responder.label)
        else:
            asn, label = hit
            responder = Responder(hop.responder.ip, asn, label or hop.responder.label)
        hops.append(TraceHop(ttl=hop.ttl, responder=responder, signal=hop.signal))
    return TraceResult(
        spec=result.spec, hops=tuple(hops), terminal=result.terminal, censor_hop=result.censor_hop
    )


# --- Trace table rendering ---------------------------------------------------


def _cell(hop: TraceHop | None, result: TraceResult) -> str:
    if hop is None:
        return ""
    if hop.silent:
        return "*"
    who = ""
    if hop.responder is not None:
        who = hop.responder.ip
        if hop.responder.asn is not None:
            who += f" AS{hop.responder.asn}"
        label = hop.responder.label
        if label and label != f"AS{hop.responder.asn}":
            who += f" {label}"
    if isinstance(hop.signal, CensorSign):
        return f"Censor: {who}" if who else "Censor: *"
    if isinstance(hop.signal, SentinelReached):
        return f"{who} ({result.spec.server.region})" if who else f"({result.spec.server.region})"
    return who or "*"


def trace_table(results: Sequence[TraceResult]) -> tuple[list[str], list[list[str]]]:
    """Rows are TTLs, columns are servers grouped by platform then region."""
    if not results:
        raise ModelError("need at least one trace result")
    ordered = sorted(results, key=lambda r: (r.spec.server.platform, r.spec.server.region))
    header = ["ttl"] + [
        f"{r.spec.server.platform} {r.spec.server.region}" for r in ordered
    ]
    max_ttl = max((h.ttl for r in ordered for h in r.hops), default=0)
    by_ttl = [{h.ttl: h for h in r.hops} for r in ordered]
    rows = []
    for ttl in range(1, max_ttl + 1):
        rows.append(
            [f"ttl = {ttl}"] + [_cell(hops.get(ttl), r) for hops, r in zip(by_ttl, ordered)]
        )
    return header, rows


def render_trace_table(results: Sequence[TraceResult], fmt: str = "text") -> str:
    header, rows = trace_table(results)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
