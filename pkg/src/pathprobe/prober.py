"""Probe construction, response classification, and the probe matrix.

A probe is one HTTP request from a vantage point to a control server with a
censored domain in the Host header. Classification is a pure function of the
wire result: the sentinel token decides "uncensored", the signature DB names
blockpages, RST/timeout events map to teardown/drop, and anything else is an
anomalous payload left to vetting.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from .model import (
    Anomalous,
    Attempt,
    Blockpage,
    Censored,
    ControlServer,
    Drop,
    ModelError,
    OtherPayload,
    ProbeOutcome,
    ProbeRecord,
    ProbeSpec,
    Reset,
    Sentinel,
    TestDomain,
    Timeout,
    Uncensored,
    VantagePoint,
    Verdict,
)
from .transport import (
    ConnectionReset,
    ExchangeEvent,
    HttpResponse,
    SetupFailure,
    TimedOut,
    Transport,
)

log = logging.getLogger(__name__)

DEFAULT_USER_AGENT = "Mozilla/5.0 (X11; Linux x86_64) pathprobe/0.1"

SIGNATURE_MATCH_KINDS = ("substring", "title-equals", "redirect-location-prefix")

_TITLE_RE = re.compile(rb"<title[^>]*>(.*?)</title>", re.IGNORECASE | re.DOTALL)


@dataclass(frozen=True)
class BlockpageSignature:
    signature_id: str
    match_kind: str
    pattern: str

    def __post_init__(self) -> None:
        if self.match_kind not in SIGNATURE_MATCH_KINDS:
            raise ModelError(f"unknown match kind {self.match_kind!r}")
        if not self.pattern:
            raise ModelError(f"signature {self.signature_id!r}: empty pattern")


@dataclass(frozen=True)
class BlockpageSignatureDB:
    """Ordered blockpage fingerprints; first match in file order wins."""

    entries: tuple[BlockpageSignature, ...]

    def __post_init__(self) -> None:
        ids = [e.signature_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ModelError("duplicate signature ids")

    @classmethod
    def from_json(cls, text: str) -> "BlockpageSignatureDB":
        raw = json.loads(text)
        return cls(
            tuple(
                BlockpageSignature(
                    signature_id=e["id"], match_kind=e["kind"], pattern=e["pattern"]
                )
                for e in raw
            )
        )

    @classmethod
    def empty(cls) -> "BlockpageSignatureDB":
        return cls(())


def build_request(domain: TestDomain, user_agent: str = DEFAULT_USER_AGENT) -> bytes:
    """Exact probe request bytes. Host is lower-cased, no port suffix."""
    return (
        "GET / HTTP/1.1\r\n"
        f"Host: {domain.name.lower()}\r\n"
        f"User-Agent: {user_agent}\r\n"
        "Accept: */*\r\n"
        "Connection: close\r\n"
        "\r\n"
    ).encode("ascii")


def parse_http_message(data: bytes) -> tuple[str, dict[str, str], bytes]:
    """Split raw HTTP bytes into (status line, headers, body), leniently.

    Censor-injected pages are frequently malformed, so anything that does not
    parse as HTTP is treated as a headerless body.
    """
    if b"\r\n\r\n" in data:
        head, body = data.split(b"\r\n\r\n", 1)
    elif b"\n\n" in data:
        head, body = data.split(b"\n\n", 1)
    else:
        head, body = b"", data
    lines = head.replace(b"\r\n", b"\n").split(b"\n")
    status_line = lines[0].decode("latin-1", errors="replace") if lines[0] else ""
    if not status_line.startswith("HTTP/"):
        return "", {}, data
    headers: dict[str, str] = {}
    for line in lines[1:]:
        name, sep, value = line.partition(b":")
        if sep:
            key = name.strip().decode("latin-1", errors="replace").lower()
            headers.setdefault(key, value.strip().decode("latin-1", errors="replace"))
    return status_line, headers, body


def extract_title(body: bytes) -> str | None:
    m = _TITLE_RE.search(body)
    if not m:
        return None
    return m.group(1).decode("utf-8", errors="replace").strip()


def classify(
    event: ExchangeEvent, server: ControlServer, db: BlockpageSignatureDB
) -> ProbeOutcome:
    """Map one wire result to a probe outcome. Pure in its inputs."""
    if isinstance(event, TimedOut):
        return Timeout()
    if isinstance(event, ConnectionReset):
        return Reset()
    if isinstance(event, SetupFailure):
        # Callers decide how to annotate; the attempt itself saw nothing.
        return Timeout()
    if not isinstance(event, HttpResponse):
        raise ModelError(f"unclassifiable event: {event!r}")

    _, headers, body = parse_http_message(event.data)
    if server.sentinel_token.encode("ascii") in body:
        return Sentinel()
    title = extract_title(body)
    location = headers.get("location", "")
    for sig in db.entries:
        if sig.match_kind == "substring":
            if sig.pattern.encode("utf-8", errors="replace") in body:
                return Blockpage(sig.signature_id)
        elif sig.match_kind == "title-equals":
            if title is not None and title.strip().lower() == sig.pattern.strip().lower():
                return Blockpage(sig.signature_id)
        elif sig.match_kind == "redirect-location-prefix":
            if location.startswith(sig.pattern):
                return Blockpage(sig.signature_id)
    return OtherPayload(body_digest=hashlib.sha256(body).hexdigest(), title=title)


def verdict_for(final_outcome: ProbeOutcome) -> Verdict:
    """The verdict implied by a record's terminal outcome.

    A final Timeout can only exist once every attempt timed out, so it maps
    to a silent drop.
    """
    if isinstance(final_outcome, Sentinel):
        return Uncensored()
    if isinstance(final_outcome, Timeout):
        return Censored(Drop())
    if isinstance(final_outcome, Reset):
        return Censored(Reset())
    if isinstance(final_outcome, Blockpage):
        return Censored(Blockpage(final_outcome.signature_id))
    if isinstance(final_outcome, OtherPayload):
        return Anomalous()
    raise ModelError(f"no verdict for outcome {final_outcome!r}")


def probe(
    spec: ProbeSpec,
    db: BlockpageSignatureDB,
    transport: Transport,
    epoch: int = 0,
    user_agent: str = DEFAULT_USER_AGENT,
) -> ProbeRecord:
    """Run one probe with the timeout/retry policy.

    Only timeouts are retried; any other outcome is an immediate verdict. A
    transport-setup failure counts as a timed-out attempt and flags the
    record so analysis treats it as inconclusive.
    """
    request = build_request(spec.domain, user_agent)
    attempts: list[Attempt] = []
    flags: set[str] = set()
    started = transport.now_ms()
    for _ in range(spec.max_attempts):
        event = transport.exchange(
            spec.vp, spec.server.address, request, spec.timeout_ms
        )
        if isinstance(event, SetupFailure):
            flags.add("transport_error")
            log.debug("probe %s->%s setup failure: %s", spec.vp.id, spec.server.id, event.reason)
        outcome = classify(event, spec.server, db)
        rtt = getattr(event, "rtt_ms", None)
        attempts.append(Attempt(outcome=outcome, rtt_ms=rtt))
        if not isinstance(outcome, Timeout):
            break
    final = attempts[-1].outcome
    return ProbeRecord(
        spec=spec,
        attempts=tuple(attempts),
        final_outcome=final,
        verdict=verdict_for(final),
        started_at=started,
        ended_at=transport.now_ms(),
        epoch=epoch,
        flags=tuple(sorted(flags)),
    )


@dataclass(frozen=True)
class SchedulePolicy:
    """Per-epoch scheduling rules for the probe matrix."""

    epoch: int = 0
    per_country_cap: int = 80
    parallel: int = 64
    timeout_ms: int | None = None
    max_attempts: int | None = None


@dataclass
class ScheduleLog:
    """Why vantage points were left out of a matrix run."""

    capped: list[str] = field(default_factory=list)
    duplicates: list[str] = field(default_factory=list)
    no_domains: list[str] = field(default_factory=list)


def select_vps(
    vps: Sequence[VantagePoint], policy: SchedulePolicy, sched_log: ScheduleLog | None = None
) -> list[VantagePoint]:
    """Apply the once-per-epoch rule and the per-country cap, in offer order."""
    sched_log = sched_log if sched_log is not None else ScheduleLog()
    selected: list[VantagePoint] = []
    seen_ids: set[str] = set()
    country_counts: dict[str, int] = {}
    for vp in vps:
        if vp.id in seen_ids:
            sched_log.duplicates.append(vp.id)
            log.info("epoch %s: vp %s already selected this epoch, skipping", policy.epoch, vp.id)
            continue
        seen_ids.add(vp.id)
        if country_counts.get(vp.country, 0) >= policy.per_country_cap:
            sched_log.capped.append(vp.id)
            log.info(
                "epoch %s: country %s at cap %d, discarding vp %s",
                policy.epoch, vp.country, policy.per_country_cap, vp.id,
            )
            continue
        country_counts[vp.country] = country_counts.get(vp.country, 0) + 1
        selected.append(vp)
    return selected


def _domains_for(
    domains: Sequence[TestDomain] | Mapping[str, Sequence[TestDomain]],
    vp: VantagePoint,
) -> Sequence[TestDomain]:
    if isinstance(domains, Mapping):
        return domains.get(vp.country, ())
    return domains


def run_matrix(
    vps: Sequence[VantagePoint],
    servers: Sequence[ControlServer],
    domains: Sequence[TestDomain] | Mapping[str, Sequence[TestDomain]],
    policy: SchedulePolicy,
    db: BlockpageSignatureDB,
    transport: Transport,
    sched_log: ScheduleLog | None = None,
    user_agent: str = DEFAULT_USER_AGENT,
) -> Iterator[ProbeRecord]:
    """Probe every scheduled (vp, server, domain) triple.

    Probes run with bounded parallelism; records are yielded in schedule
    order so a fixed schedule over a deterministic transport produces a
    byte-stable stream.
    """
    sched_log = sched_log if sched_log is not None else ScheduleLog()
    selected = select_vps(vps, policy, sched_log)
    specs: list[ProbeSpec] = []
    for vp in selected:
        vp_domains = _domains_for(domains, vp)
        if not vp_domains:
            sched_log.no_domains.append(vp.id)
            continue
        for server in servers:
            for domain in vp_domains:
                kwargs = {}
                if policy.timeout_ms is not None:
                    kwargs["timeout_ms"] = policy.timeout_ms
                if policy.max_attempts is not None:
                    kwargs["max_attempts"] = policy.max_attempts
                specs.append(ProbeSpec(vp=vp, server=server, domain=domain, **kwargs))

    if policy.parallel <= 1:
        for spec in specs:
            yield probe(spec, db, transport, epoch=policy.epoch, user_agent=user_agent)
        return
    with ThreadPoolExecutor(max_workers=policy.parallel) as pool:
        futures = [
            pool.submit(probe, spec, db, transport, policy.epoch, user_agent)
            for spec in specs
        ]
        for future in futures:
            yield future.result()
