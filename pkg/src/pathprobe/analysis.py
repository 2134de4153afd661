"""Censorship, inconsistency, and hosting metrics over a dataset.

Everything here is a pure function of an immutable dataset or of the verdict
cube built from it. Vantage-point-level metrics treat a VP as censored when
any of its measurements was censored; inconsistency requires the same domain
to be censored on one path and clean on another. Request-level metrics count
individual measurements.

Anomalous cells (unexpected payloads) are marked but never counted as
censored; inconclusive records never enter any denominator. Percentages are
carried at full precision and rendered with two decimals, rounding half up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

from .model import Anomalous, Blockpage, Censored, Dataset, Drop, Reset, Verdict


class AnalysisError(ValueError):
    pass


class UnknownCountry(AnalysisError):
    pass


class NotEnoughGroups(AnalysisError):
    """Fewer than two servers or platforms: no inconsistency is defined."""


def format_pct(value: float | None, digits: int = 2) -> str:
    """Render a percentage with half-up rounding; None becomes n/a."""
    if value is None:
        return "n/a"
    q = Decimal(1).scaleb(-digits)
    return str(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def _mechanism_key(verdict: Verdict) -> str | None:
    if not isinstance(verdict, Censored):
        return None
    m = verdict.mechanism
    if isinstance(m, Drop):
        return "drop"
    if isinstance(m, Reset):
        return "reset"
    if isinstance(m, Blockpage):
        return f"blockpage:{m.signature_id}"
    return "unknown"


@dataclass(frozen=True)
class CubeCell:
    server_id: str
    domain: str
    epoch: int
    censored: bool
    anomalous: bool
    mechanism: str | None


@dataclass
class VpVerdictCube:
    """Terminal verdict per (vp, server, domain[, epoch]) for counted records."""

    cells: dict[str, list[CubeCell]] = field(default_factory=dict)
    vp_country: dict[str, str] = field(default_factory=dict)
    vp_asn: dict[str, int] = field(default_factory=dict)
    server_ids: list[str] = field(default_factory=list)

    def vps_in(self, country: str) -> list[str]:
        return [vp for vp, c in self.vp_country.items() if c == country]

    def countries(self) -> list[str]:
        return sorted(set(self.vp_country.values()))


def build_cube(dataset: Dataset, mode: str = "per-epoch") -> VpVerdictCube:
    """One cell per (vp, server, domain, epoch); latest-wins collapses epochs."""
    if mode not in ("per-epoch", "latest-wins"):
        raise AnalysisError(f"unknown cube mode {mode!r}")
    cube = VpVerdictCube()
    staged: dict[str, dict[tuple, CubeCell]] = {}
    for record in dataset.active_records():
        vp = record.spec.vp
        verdict = record.verdict
        cell = CubeCell(
            server_id=record.spec.server.id,
            domain=record.spec.domain.name,
            epoch=record.epoch,
            censored=isinstance(verdict, Censored),
            anomalous=isinstance(verdict, Anomalous),
            mechanism=_mechanism_key(verdict),
        )
        cube.vp_country[vp.id] = vp.country
        cube.vp_asn[vp.id] = vp.asn
        per_vp = staged.setdefault(vp.id, {})
        if mode == "per-epoch":
            per_vp[(cell.server_id, cell.domain, cell.epoch)] = cell
        else:
            key = (cell.server_id, cell.domain)
            incumbent = per_vp.get(key)
            if incumbent is None or cell.epoch >= incumbent.epoch:
                per_vp[key] = cell
    for vp_id, cells in staged.items():
        cube.cells[vp_id] = list(cells.values())
    cube.server_ids = sorted({s.id for s in dataset.servers})
    return cube


def _vp_censored(cells: Iterable[CubeCell]) -> bool:
    return any(c.censored for c in cells)


def _vp_inconsistent(cells: Sequence[CubeCell]) -> bool:
    """Same domain censored on one server, uncensored on a different server."""
    by_domain: dict[str, list[CubeCell]] = {}
    for c in cells:
        by_domain.setdefault(c.domain, []).append(c)
    for domain_cells in by_domain.values():
        censored_servers = {c.server_id for c in domain_cells if c.censored}
        clean_servers = {
            c.server_id for c in domain_cells if not c.censored and not c.anomalous
        }
        if censored_servers and clean_servers - censored_servers:
            return True
    return False


def _vp_mechanism_diverse(cells: Sequence[CubeCell]) -> bool:
    """Same domain censored via different mechanisms on different servers."""
    by_domain: dict[str, dict[str, set[str]]] = {}
    for c in cells:
        if not c.censored:
            continue
        by_domain.setdefault(c.domain, {}).setdefault(c.mechanism or "", set()).add(c.server_id)
    for mechanisms in by_domain.values():
        if len(mechanisms) >= 2:
            servers = [s for group in mechanisms.values() for s in group]
            if len(set(servers)) >= 2:
                return True
    return False


def censorship_pct(cube: VpVerdictCube, country: str) -> float:
    """Censored vantage points over all evaluated vantage points, as a percentage."""
    vps = cube.vps_in(country)
    if not vps:
        raise UnknownCountry(f"no vantage points for country {country!r}")
    censored = sum(1 for vp in vps if _vp_censored(cube.cells.get(vp, ())))
    return 100.0 * censored / len(vps)


def inconsistency_pct(cube: VpVerdictCube, country: str) -> float | None:
    """Share of censored VPs that saw path-dependent verdicts; None if none censored."""
    vps = cube.vps_in(country)
    if not vps:
        raise UnknownCountry(f"no vantage points for country {country!r}")
    censored = [vp for vp in vps if _vp_censored(cube.cells.get(vp, ()))]
    if not censored:
        return None
    inconsistent = sum(1 for vp in censored if _vp_inconsistent(cube.cells[vp]))
    return 100.0 * inconsistent / len(censored)


@dataclass(frozen=True)
class CountrySummary:
    country: str
    total_vps: int
    censored_vps: int
    inconsistent_vps: int
    mechanism_diverse_vps: int
    censorship_pct: float
    inconsistency_pct: float | None


def country_summaries(cube: VpVerdictCube) -> list[CountrySummary]:
    summaries = []
    for country in cube.countries():
        vps = cube.vps_in(country)
        censored = [vp for vp in vps if _vp_censored(cube.cells.get(vp, ()))]
        inconsistent = [vp for vp in censored if _vp_inconsistent(cube.cells[vp])]
        diverse = [vp for vp in censored if _vp_mechanism_diverse(cube.cells[vp])]
        summaries.append(
            CountrySummary(
                country=country,
                total_vps=len(vps),
                censored_vps=len(censored),
                inconsistent_vps=len(inconsistent),
                mechanism_diverse_vps=len(diverse),
                censorship_pct=100.0 * len(censored) / len(vps),
                inconsistency_pct=(
                    100.0 * len(inconsistent) / len(censored) if censored else None
                ),
            )
        )
    summaries.sort(key=lambda s: (-s.censorship_pct, s.country))
    return summaries


def domain_censorship_pct(dataset: Dataset, country: str, domain: str) -> float | None:
    """Censored requests carrying this domain over all such requests, in-country."""
    total = censored = 0
    for record in dataset.active_records():
        if record.spec.vp.country != country or record.spec.domain.name != domain:
            continue
        total += 1
        if isinstance(record.verdict, Censored):
            censored += 1
    if total == 0:
        return None
    return 100.0 * censored / total


def _spread(values: Sequence[float]) -> float:
    return max(values) - min(values)


def _per_server_vp_pcts(
    cube: VpVerdictCube, vp_ids: Sequence[str]
) -> dict[str, float]:
    """Per-server VP-level censorship percentages over the given VPs."""
    pcts: dict[str, float] = {}
    for server_id in cube.server_ids:
        evaluated = censored = 0
        for vp in vp_ids:
            cells = [c for c in cube.cells.get(vp, ()) if c.server_id == server_id]
            if not cells:
                continue
            evaluated += 1
            if any(c.censored for c in cells):
                censored += 1
        if evaluated:
            pcts[server_id] = 100.0 * censored / evaluated
    return pcts


def _per_server_request_pcts(
    cube: VpVerdictCube, vp_ids: Sequence[str]
) -> dict[str, float]:
    pcts: dict[str, float] = {}
    for server_id in cube.server_ids:
        total = censored = 0
        for vp in vp_ids:
            for c in cube.cells.get(vp, ()):
                if c.server_id != server_id:
                    continue
                total += 1
                if c.censored:
                    censored += 1
        if total:
            pcts[server_id] = 100.0 * censored / total
    return pcts


@dataclass(frozen=True)
class PathSummary:
    """Per-destination censorship vector and its spread for one country."""

    country: str
    granularity: str
    per_server: dict[str, float]
    inconsistency: float


def destination_inconsistency(
    cube: VpVerdictCube, country: str, granularity: str = "vp"
) -> PathSummary:
    """Max minus min of per-server censorship percentages for one country."""
    if granularity not in ("vp", "request"):
        raise AnalysisError(f"unknown granularity {granularity!r}")
    vps = cube.vps_in(country)
    if not vps:
        raise UnknownCountry(f"no vantage points for country {country!r}")
    per_server = (
        _per_server_vp_pcts(cube, vps)
        if granularity == "vp"
        else _per_server_request_pcts(cube, vps)
    )
    if len(per_server) < 2:
        raise NotEnoughGroups("destination inconsistency needs at least two servers")
    return PathSummary(
        country=country,
        granularity=granularity,
        per_server=per_server,
        inconsistency=_spread(list(per_server.values())),
    )


@dataclass(frozen=True)
class AsSummary:
    asn: int
    vp_count: int
    per_server: dict[str, float]
    inconsistency: float


def as_inconsistency(
    cube: VpVerdictCube, min_vps: int = 80, granularity: str = "vp"
) -> list[AsSummary]:
    """Per-AS destination inconsistency, for ASes with enough vantage points.

    Sorted by inconsistency, largest first.
    """
    by_asn: dict[int, list[str]] = {}
    for vp_id, asn in cube.vp_asn.items():
        by_asn.setdefault(asn, []).append(vp_id)
    summaries = []
    for asn, vp_ids in by_asn.items():
        if len(vp_ids) < min_vps:
            continue
        per_server = (
            _per_server_vp_pcts(cube, vp_ids)
            if granularity == "vp"
            else _per_server_request_pcts(cube, vp_ids)
        )
        if len(per_server) < 2:
            continue
        summaries.append(
            AsSummary(
                asn=asn,
                vp_count=len(vp_ids),
                per_server=per_server,
                inconsistency=_spread(list(per_server.values())),
            )
        )
    summaries.sort(key=lambda s: (-s.inconsistency, s.asn))
    return summaries


@dataclass(frozen=True)
class PlatformSummary:
    country: str
    requests: int
    per_platform: dict[str, float]
    inconsistency: float


def hosting_inconsistency(dataset: Dataset, country: str) -> PlatformSummary:
    """Request-level censorship spread across hosting platforms for one country."""
    platform_of = {s.id: s.platform for s in dataset.servers}
    totals: dict[str, int] = {}
    censored: dict[str, int] = {}
    requests = 0
    for record in dataset.active_records():
        if record.spec.vp.country != country:
            continue
        platform = platform_of[record.spec.server.id]
        requests += 1
        totals[platform] = totals.get(platform, 0) + 1
        if isinstance(record.verdict, Censored):
            censored[platform] = censored.get(platform, 0) + 1
    if not totals:
        raise UnknownCountry(f"no requests for country {country!r}")
    if len(totals) < 2:
        raise NotEnoughGroups("hosting inconsistency needs at least two platforms")
    per_platform = {
        platform: 100.0 * censored.get(platform, 0) / total
        for platform, total in sorted(totals.items())
    }
    return PlatformSummary(
        country=country,
        requests=requests,
        per_platform=per_platform,
        inconsistency=_spread(list(per_platform.values())),
    )


def cdf_series(values: Sequence[float]) -> list[tuple[float, float]]:
    """Step-function points (x, fraction of values <= x), ascending in x."""
    if not values:
        raise AnalysisError("cdf_series needs at least one value")
    ordered = sorted(values)
    n = len(ordered)
    points: list[tuple[float, float]] = []
    for i, x in enumerate(ordered, 1):
        if i < n and ordered[i] == x:
            continue
        points.append((x, i / n))
    return points


def cdf_at(series: Sequence[tuple[float, float]], x: float) -> float:
    """Evaluate a cdf_series step function at x."""
    result = 0.0
    for value, fraction in series:
        if value <= x:
            result = fraction
        else:
            break
    return result
