"""Core domain types shared by every other module.

Everything here is an immutable value object: construction validates the
invariants, after which instances are safe to share across threads. No I/O
happens in this module.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# Officially assigned ISO 3166-1 alpha-2 codes (plus user-assigned XK used by
# several routing databases for Kosovo).
ISO_COUNTRY_CODES = frozenset(
    """
    AD AE AF AG AI AL AM AO AQ AR AS AT AU AW AX AZ BA BB BD BE BF BG BH BI
    BJ BL BM BN BO BQ BR BS BT BV BW BY BZ CA CC CD CF CG CH CI CK CL CM CN
    CO CR CU CV CW CX CY CZ DE DJ DK DM DO DZ EC EE EG EH ER ES ET FI FJ FK
    FM FO FR GA GB GD GE GF GG GH GI GL GM GN GP GQ GR GS GT GU GW GY HK HM
    HN HR HT HU ID IE IL IM IN IO IQ IR IS IT JE JM JO JP KE KG KH KI KM KN
    KP KR KW KY KZ LA LB LC LI LK LR LS LT LU LV LY MA MC MD ME MF MG MH MK
    ML MM MN MO MP MQ MR MS MT MU MV MW MX MY MZ NA NC NE NF NG NI NL NO NP
    NR NU NZ OM PA PE PF PG PH PK PL PM PN PR PS PT PW PY QA RE RO RS RU RW
    SA SB SC SD SE SG SH SI SJ SK SL SM SN SO SR SS ST SV SX SY SZ TC TD TF
    TG TH TJ TK TL TM TN TO TR TT TV TW TZ UA UG UM US UY UZ VA VC VE VG VI
    VN VU WF WS XK YE YT ZA ZM ZW
    """.split()
)

_HOSTNAME_LABEL_RE = re.compile(r"^[a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?$")
_IPV4_RE = re.compile(r"^(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})$")
_TOKEN_RE = re.compile(r"^[0-9a-f]{32}$")
_SHA256_RE = re.compile(r"^[0-9a-f]{64}$")

DEFAULT_TIMEOUT_MS = 5_000
DEFAULT_MAX_ATTEMPTS = 5  # 1 initial + 4 retries


class ModelError(ValueError):
    """Raised when a value object would violate one of its invariants."""


def is_valid_hostname(name: str) -> bool:
    """Syntactic hostname check: labels of 1-63 chars, 253 chars total."""
    if not name or len(name) > 253:
        return False
    labels = name.lower().rstrip(".").split(".")
    return all(_HOSTNAME_LABEL_RE.match(label) for label in labels)


def is_valid_ipv4(address: str) -> bool:
    m = _IPV4_RE.match(address)
    return bool(m) and all(0 <= int(octet) <= 255 for octet in m.groups())


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ModelError(message)


@dataclass(frozen=True)
class TestDomain:
    """A hostname known to be censored somewhere, scoped to one country."""

    __test__ = False  # "Test" prefix is domain language, not a pytest class

    name: str
    country_scope: str

    def __post_init__(self) -> None:
        _require(is_valid_hostname(self.name), f"invalid hostname: {self.name!r}")
        _require(
            self.country_scope in ISO_COUNTRY_CODES,
            f"unknown country code: {self.country_scope!r}",
        )


@dataclass(frozen=True)
class Socks5Access:
    """SOCKS5 entry endpoint for a proxied vantage point (RFC 1928 client side)."""

    host: str
    port: int
    username: str | None = None
    password: str | None = None

    def __post_init__(self) -> None:
        _require(0 < self.port < 65536, f"invalid SOCKS port: {self.port}")


@dataclass(frozen=True)
class DirectAccess:
    """Vantage point we control directly (raw TCP, TTL settable)."""


VpAccess = DirectAccess | Socks5Access


@dataclass(frozen=True)
class VantagePoint:
    id: str
    address: str
    country: str
    asn: int
    access: VpAccess = field(default_factory=DirectAccess)

    def __post_init__(self) -> None:
        _require(bool(self.id), "vantage point id must be non-empty")
        _require(is_valid_ipv4(self.address), f"invalid IPv4 address: {self.address!r}")
        _require(bool(self.country), f"vp {self.id}: country must be non-empty")
        _require(
            self.country in ISO_COUNTRY_CODES,
            f"vp {self.id}: unknown country code {self.country!r}",
        )
        _require(self.asn > 0, f"vp {self.id}: asn must be positive")


@dataclass(frozen=True)
class ControlServer:
    """A probing destination: one HTTP responder with a unique static payload."""

    id: str
    address: str
    platform: str
    region: str
    sentinel_token: str

    def __post_init__(self) -> None:
        _require(bool(self.id), "server id must be non-empty")
        _require(is_valid_ipv4(self.address), f"invalid IPv4 address: {self.address!r}")
        _require(bool(self.platform), f"server {self.id}: platform must be non-empty")
        _require(bool(self.region), f"server {self.id}: region must be non-empty")
        _require(
            bool(_TOKEN_RE.match(self.sentinel_token)),
            f"server {self.id}: sentinel_token must be 32 lowercase hex chars",
        )


@dataclass(frozen=True)
class ProbeSpec:
    vp: VantagePoint
    server: ControlServer
    domain: TestDomain
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_attempts: int = DEFAULT_MAX_ATTEMPTS

    def __post_init__(self) -> None:
        _require(self.timeout_ms > 0, "timeout must be positive")
        _require(self.max_attempts >= 1, "max_attempts must be at least 1")


# --- Probe outcomes ---------------------------------------------------------
#
# Exactly one of these describes the terminal state of a single attempt.


@dataclass(frozen=True)
class Sentinel:
    """The control server's static payload came back intact."""


@dataclass(frozen=True)
class Blockpage:
    """A censor-injected page matched a known signature."""

    signature_id: str

    def __post_init__(self) -> None:
        _require(bool(self.signature_id), "blockpage signature_id must be non-empty")


@dataclass(frozen=True)
class Reset:
    """Connection torn down by an injected RST/FIN."""


@dataclass(frozen=True)
class Timeout:
    """No response within the probe timeout."""


@dataclass(frozen=True)
class OtherPayload:
    """An HTTP response that is neither the sentinel nor a known blockpage."""

    body_digest: str
    title: str | None = None

    def __post_init__(self) -> None:
        _require(
            bool(_SHA256_RE.match(self.body_digest)),
            "body_digest must be a 64-char hex sha-256",
        )


ProbeOutcome = Sentinel | Blockpage | Reset | Timeout | OtherPayload


# --- Verdicts ---------------------------------------------------------------


@dataclass(frozen=True)
class Drop:
    """All attempts timed out: the request was silently discarded."""


# An interference mechanism is how the censor acted; Reset and Blockpage pull
# double duty as both attempt outcomes and mechanisms.
CensorMechanism = Drop | Reset | Blockpage


@dataclass(frozen=True)
class Uncensored:
    pass


@dataclass(frozen=True)
class Censored:
    mechanism: CensorMechanism


@dataclass(frozen=True)
class Anomalous:
    """Unexpected payload; possibly a cache artifact, resolved by vetting."""


Verdict = Uncensored | Censored | Anomalous


@dataclass(frozen=True)
class Attempt:
    outcome: ProbeOutcome
    rtt_ms: int | None = None


@dataclass(frozen=True)
class ProbeRecord:
    """One (vantage point, control server, domain) measurement."""

    spec: ProbeSpec
    attempts: tuple[Attempt, ...]
    final_outcome: ProbeOutcome
    verdict: Verdict
    started_at: int
    ended_at: int
    epoch: int
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        n = len(self.attempts)
        _require(1 <= n <= self.spec.max_attempts, "attempt count out of range")
        _require(
            self.attempts[-1].outcome == self.final_outcome,
            "final_outcome must equal the last attempt's outcome",
        )
        for a in self.attempts[:-1]:
            _require(
                isinstance(a.outcome, Timeout),
                "all non-final attempts must be timeouts",
            )
        _require(self.ended_at >= self.started_at, "ended_at precedes started_at")

    @property
    def inconclusive(self) -> bool:
        """Transport-setup failures are flagged and never enter metrics."""
        return "transport_error" in self.flags


# --- Application traceroute -------------------------------------------------


@dataclass(frozen=True)
class Responder:
    ip: str
    asn: int | None = None
    label: str | None = None


@dataclass(frozen=True)
class TtlExceeded:
    """ICMP Time Exceeded arrived for this TTL."""


@dataclass(frozen=True)
class CensorSign:
    """Interference (RST or blockpage) arrived for this TTL."""

    mechanism: CensorMechanism


@dataclass(frozen=True)
class SentinelReached:
    """The static payload arrived: the probe traversed the full path."""


HopSignal = TtlExceeded | CensorSign | SentinelReached


@dataclass(frozen=True)
class TraceHop:
    """One TTL step. A silent hop has neither responder nor signal."""

    ttl: int
    responder: Responder | None = None
    signal: HopSignal | None = None

    def __post_init__(self) -> None:
        _require(self.ttl >= 1, "ttl must be >= 1")

    @property
    def silent(self) -> bool:
        return self.signal is None

    @property
    def terminal(self) -> bool:
        return isinstance(self.signal, (CensorSign, SentinelReached))


@dataclass(frozen=True)
class Exhausted:
    """The sweep hit max_ttl without a terminal signal."""


TraceTerminal = Sentinel | Censored | Exhausted


@dataclass(frozen=True)
class TraceResult:
    spec: ProbeSpec
    hops: tuple[TraceHop, ...]
    terminal: TraceTerminal
    censor_hop: int | None = None

    def __post_init__(self) -> None:
        ttls = [h.ttl for h in self.hops]
        _require(ttls == sorted(set(ttls)), "hops must be strictly ascending by ttl")
        for h in self.hops[:-1]:
            _require(not h.terminal, "no hop may follow a terminal signal")
        censor_ttls = [h.ttl for h in self.hops if isinstance(h.signal, CensorSign)]
        if isinstance(self.terminal, Censored):
            _require(
                self.censor_hop is not None and censor_ttls == [self.censor_hop],
                "censor_hop must equal the ttl of the CensorSign hop",
            )
        else:
            _require(self.censor_hop is None, "censor_hop set without a censored terminal")
            _require(not censor_ttls, "CensorSign hop without a censored terminal")


# --- Dataset ----------------------------------------------------------------

EXCLUSION_REASONS = ("cache_online", "cache_offline")


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of probe records plus the campaign catalogs.

    Records from excluded vantage points are retained but flagged; analysis
    never counts them.
    """

    records: tuple[ProbeRecord, ...]
    servers: tuple[ControlServer, ...]
    vps: tuple[VantagePoint, ...]
    domains: tuple[TestDomain, ...]
    excluded_vps: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        vp_ids = {vp.id for vp in self.vps}
        server_ids = {s.id for s in self.servers}
        domain_names = {d.name for d in self.domains}
        for rec in self.records:
            _require(rec.spec.vp.id in vp_ids, f"record references unknown vp {rec.spec.vp.id!r}")
            _require(
                rec.spec.server.id in server_ids,
                f"record references unknown server {rec.spec.server.id!r}",
            )
            _require(
                rec.spec.domain.name in domain_names,
                f"record references unknown domain {rec.spec.domain.name!r}",
            )
        for vp_id, reason in self.excluded_vps.items():
            _require(vp_id in vp_ids, f"excluded vp {vp_id!r} not in catalog")
            _require(
                reason in EXCLUSION_REASONS,
                f"unknown exclusion reason {reason!r} for vp {vp_id!r}",
            )

    def active_records(self) -> list[ProbeRecord]:
        """Records that analysis may count: not excluded, not inconclusive."""
        return [
            r
            for r in self.records
            if r.spec.vp.id not in self.excluded_vps and not r.inconclusive
        ]


def _access_from_mapping(raw) -> VpAccess:
    if raw is None:
        return DirectAccess()
    kind = raw.get("type", "direct")
    if kind == "direct":
        return DirectAccess()
    if kind == "socks5":
        return Socks5Access(
            host=raw["host"],
            port=int(raw["port"]),
            username=raw.get("username"),
            password=raw.get("password"),
        )
    raise ModelError(f"unknown access type {kind!r}")


def vantage_point_from_mapping(raw) -> VantagePoint:
    return VantagePoint(
        id=str(raw["id"]),
        address=raw["address"],
        country=raw["country"],
        asn=int(raw["asn"]),
        access=_access_from_mapping(raw.get("access")),
    )


def control_server_from_mapping(raw) -> ControlServer:
    return ControlServer(
        id=str(raw["id"]),
        address=raw["address"],
        platform=raw["platform"],
        region=raw["region"],
        sentinel_token=raw["sentinel_token"],
    )


def test_domain_from_mapping(raw) -> TestDomain:
    return TestDomain(name=raw["name"], country_scope=raw["country_scope"])


def _coerce_all(items, builder, cls, kind: str, violations: list[str]) -> list:
    objs = []
    for item in items:
        if isinstance(item, cls):
            objs.append(item)
        elif isinstance(item, dict):
            ident = item.get("id") or item.get("name") or "?"
            try:
                objs.append(builder(item))
            except (ModelError, KeyError, TypeError, ValueError) as exc:
                violations.append(f"{kind} {ident!r}: {exc}")
        else:
            violations.append(f"{kind} {item!r}: expected an object")
    return objs


def _flatten_domains(domains) -> list:
    """Per-country mappings {country: [name...]} flatten to domain entries."""
    if not hasattr(domains, "items"):
        return list(domains)
    flat = []
    for country, items in domains.items():
        for item in items:
            if isinstance(item, str):
                flat.append({"name": item, "country_scope": country})
            else:
                flat.append(item)
    return flat


def _catalog_violations(servers, vps, domains) -> list[str]:
    violations: list[str] = []

    seen_tokens: dict[str, str] = {}
    seen_platform_region: dict[tuple[str, str], str] = {}
    seen_server_ids: dict[str, int] = {}
    for s in servers:
        seen_server_ids[s.id] = seen_server_ids.get(s.id, 0) + 1
        if s.sentinel_token in seen_tokens:
            violations.append(
                f"servers {seen_tokens[s.sentinel_token]!r} and {s.id!r} share "
                f"sentinel_token {s.sentinel_token}"
            )
        else:
            seen_tokens[s.sentinel_token] = s.id
        key = (s.platform, s.region)
        if key in seen_platform_region:
            violations.append(
                f"servers {seen_platform_region[key]!r} and {s.id!r} share "
                f"platform/region {s.platform}/{s.region}"
            )
        else:
            seen_platform_region[key] = s.id
    violations.extend(
        f"duplicate server id {sid!r}" for sid, n in seen_server_ids.items() if n > 1
    )

    seen_vp_ids: dict[str, int] = {}
    for vp in vps:
        seen_vp_ids[vp.id] = seen_vp_ids.get(vp.id, 0) + 1
    violations.extend(
        f"duplicate vantage point id {vid!r}" for vid, n in seen_vp_ids.items() if n > 1
    )

    seen_domains: dict[tuple[str, str], int] = {}
    for d in domains:
        key = (d.name, d.country_scope)
        seen_domains[key] = seen_domains.get(key, 0) + 1
    violations.extend(
        f"duplicate domain {name!r} for country {cc}"
        for (name, cc), n in seen_domains.items()
        if n > 1
    )
    return violations


def validate_campaign(config) -> list[str]:
    """Cross-catalog invariant check over anything exposing servers/vps/domains.

    Returns human-readable violation descriptions, empty when the campaign is
    well formed. Catalog entries may be constructed values or raw dicts; field
    invariants that a raw dict breaks (bad hostname, asn <= 0, malformed
    token) are reported as violations, never raised.
    """
    violations: list[str] = []
    servers = _coerce_all(
        getattr(config, "servers", ()),
        control_server_from_mapping,
        ControlServer,
        "server",
        violations,
    )
    vps = _coerce_all(
        getattr(config, "vps", ()),
        vantage_point_from_mapping,
        VantagePoint,
        "vantage point",
        violations,
    )
    domains = _coerce_all(
        _flatten_domains(getattr(config, "domains", ())),
        test_domain_from_mapping,
        TestDomain,
        "domain",
        violations,
    )
    violations.extend(_catalog_violations(servers, vps, domains))
    return violations
