"""Pre-campaign vantage-point hygiene.

Three checks keep cache proxies and inbound interference out of the data:

* cache_test: probe two reference servers that share a domain but serve
  distinct payloads; a replayed first payload unmasks an on-path cache.
* offline_cache_check: a response whose title matches the domain's real
  landing page can only have come from an intermediate cache.
* verify_inbound_clean: probing every server with domains that are not
  censored where the prober sits must always return the sentinel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .model import (
    ControlServer,
    Dataset,
    ModelError,
    OtherPayload,
    ProbeSpec,
    TestDomain,
    Uncensored,
    VantagePoint,
)
from .prober import BlockpageSignatureDB, build_request, probe
from .transport import HttpResponse, Transport

CACHE_ONLINE = "cache_online"
CACHE_OFFLINE = "cache_offline"


class InsufficientEvidence(ValueError):
    """Too few clean vantage points to certify anything."""


@dataclass(frozen=True)
class ReferenceServerPair:
    """Two controlled endpoints serving the same domain with distinct payloads."""

    shared_domain: TestDomain
    server_a: ControlServer
    server_b: ControlServer

    def __post_init__(self) -> None:
        if self.server_a.address == self.server_b.address:
            raise ModelError("reference servers must have distinct addresses")
        if self.server_a.sentinel_token == self.server_b.sentinel_token:
            raise ModelError("reference servers must have distinct payload tokens")


@dataclass(frozen=True)
class LegitTitleTable:
    """Canonical landing-page titles, keyed case-sensitively by domain."""

    titles: Mapping[str, str]

    @classmethod
    def from_json(cls, text: str) -> "LegitTitleTable":
        raw = json.loads(text)
        return cls({str(k): str(v).strip() for k, v in raw.items()})

    @classmethod
    def empty(cls) -> "LegitTitleTable":
        return cls({})

    def matches(self, domain_name: str, title: str | None) -> bool:
        if title is None:
            return False
        canonical = self.titles.get(domain_name)
        if canonical is None:
            return False
        return title.strip().casefold() == canonical.strip().casefold()


@dataclass(frozen=True)
class CacheTestResult:
    vp_id: str
    keep: bool
    reason: str

    @property
    def exclusion_reason(self) -> str | None:
        return None if self.keep else CACHE_ONLINE


def cache_test(
    vp: VantagePoint,
    pair: ReferenceServerPair,
    transport: Transport,
    timeout_ms: int = 5_000,
) -> CacheTestResult:
    """Sequentially probe both reference servers and judge the second response.

    Keep only when the second response carries the second server's own
    payload; everything else is treated as cache evidence. Stricter than
    strictly necessary, by design: selective caches escape this test, and
    the offline check is the backstop.
    """
    request = build_request(pair.shared_domain)
    first = transport.exchange(vp, pair.server_a.address, request, timeout_ms)
    if not isinstance(first, HttpResponse):
        return CacheTestResult(vp.id, keep=False, reason=f"first probe failed: {type(first).__name__}")
    second = transport.exchange(vp, pair.server_b.address, request, timeout_ms)
    if not isinstance(second, HttpResponse):
        return CacheTestResult(vp.id, keep=False, reason=f"second probe failed: {type(second).__name__}")
    if pair.server_a.sentinel_token.encode() in second.data:
        return CacheTestResult(vp.id, keep=False, reason="second response replayed first server's payload")
    if pair.server_b.sentinel_token.encode() in second.data:
        return CacheTestResult(vp.id, keep=True, reason="second response carried its own payload")
    return CacheTestResult(vp.id, keep=False, reason="second response carried neither payload")


def offline_cache_check(dataset: Dataset, table: LegitTitleTable) -> set[str]:
    """Vantage points whose responses replayed a real landing page.

    A VP is excluded iff any of its records carries an unexpected payload
    whose title equals (case-insensitively) the legit title of that record's
    test domain. Pure in its inputs, so rerunning never changes the set.
    """
    excluded: set[str] = set()
    for record in dataset.records:
        if record.inconclusive:
            continue
        outcome = record.final_outcome
        if isinstance(outcome, OtherPayload) and table.matches(
            record.spec.domain.name, outcome.title
        ):
            excluded.add(record.spec.vp.id)
    return excluded


DomainPicker = Callable[[VantagePoint], Sequence[TestDomain]]


def noncensored_domain_picker(
    domains_by_country: Mapping[str, Sequence[TestDomain]],
) -> DomainPicker:
    """Domains censored elsewhere, i.e. not in the vantage point's country."""

    def pick(vp: VantagePoint) -> list[TestDomain]:
        return [
            d
            for country, ds in sorted(domains_by_country.items())
            for d in ds
            if country != vp.country
        ]

    return pick


@dataclass
class InboundReport:
    """Per-server verdicts for the inbound-censorship verification."""

    passed: dict[str, bool] = field(default_factory=dict)
    failures: list[tuple[str, str, str]] = field(default_factory=list)  # (vp, server, domain)
    probes: int = 0

    def all_clean(self) -> bool:
        return all(self.passed.values())

    def failing_servers(self) -> list[str]:
        return sorted(sid for sid, ok in self.passed.items() if not ok)


def verify_inbound_clean(
    clean_vps: Sequence[VantagePoint],
    servers: Sequence[ControlServer],
    domain_picker: DomainPicker,
    transport: Transport,
    db: BlockpageSignatureDB | None = None,
    timeout_ms: int = 5_000,
    max_attempts: int = 5,
) -> InboundReport:
    """Probe every server from every clean VP with non-censored domains.

    A server passes iff every probe returned the sentinel; the report lists
    each failing (vp, server, domain) triple.
    """
    if not clean_vps:
        raise InsufficientEvidence("no clean vantage points: cannot certify inbound paths")
    db = db if db is not None else BlockpageSignatureDB.empty()
    report = InboundReport(passed={s.id: True for s in servers})
    for vp in clean_vps:
        for server in servers:
            for domain in domain_picker(vp):
                spec = ProbeSpec(
                    vp=vp,
                    server=server,
                    domain=domain,
                    timeout_ms=timeout_ms,
                    max_attempts=max_attempts,
                )
                record = probe(spec, db, transport)
                report.probes += 1
                if not isinstance(record.verdict, Uncensored):
                    report.passed[server.id] = False
                    report.failures.append((vp.id, server.id, domain.name))
    return report
