"""Campaign configuration: JSON loading, validation, derived defaults.

Sentinel tokens may be given explicitly or derived from the campaign seed,
which keeps a simulated campaign fully reproducible from one integer.
Referenced files (vantage-point list, signature DB, legit titles) must exist
at load time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

from .. import model
from ..model import ControlServer, TestDomain, VantagePoint
from ..prober import BlockpageSignatureDB
from ..sentinel import DEFAULT_DESCRIPTION
from ..vetting import LegitTitleTable, ReferenceServerPair


class ConfigError(ValueError):
    """The campaign config is invalid; violations lists every problem."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class Caps:
    per_country_per_epoch: int = 80


@dataclass(frozen=True)
class ProbeSettings:
    timeout_ms: int = 5_000
    max_attempts: int = 5
    parallel: int = 64


@dataclass(frozen=True)
class TracerouteSettings:
    max_ttl: int = 40
    per_hop_timeout_ms: int = 2_000
    per_hop_retries: int = 1


@dataclass
class CampaignConfig:
    campaign_id: str
    seed: int = 0
    servers: list[ControlServer] = field(default_factory=list)
    vps: list[VantagePoint] = field(default_factory=list)
    domains: dict[str, list[TestDomain]] = field(default_factory=dict)
    reference_pair: ReferenceServerPair | None = None
    signature_db: BlockpageSignatureDB = field(default_factory=BlockpageSignatureDB.empty)
    legit_titles: LegitTitleTable = field(default_factory=LegitTitleTable.empty)
    caps: Caps = field(default_factory=Caps)
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    traceroute: TracerouteSettings = field(default_factory=TracerouteSettings)
    min_clean_vps: int = 50
    experiment_description: str = DEFAULT_DESCRIPTION
    config_sha256: str | None = None

    def domain_catalog(self) -> list[TestDomain]:
        return [d for ds in self.domains.values() for d in ds]

    def server_by_id(self, server_id: str) -> ControlServer:
        for server in self.servers:
            if server.id == server_id:
                return server
        raise ConfigError([f"no server with id {server_id!r}"])

    def vp_by_id(self, vp_id: str) -> VantagePoint:
        for vp in self.vps:
            if vp.id == vp_id:
                return vp
        raise ConfigError([f"no vantage point with id {vp_id!r}"])

    def all_server_endpoints(self) -> list[ControlServer]:
        """Campaign servers plus the reference pair, for transports."""
        endpoints = list(self.servers)
        if self.reference_pair is not None:
            endpoints += [self.reference_pair.server_a, self.reference_pair.server_b]
        return endpoints


def derive_token(seed: int, server_id: str) -> str:
    return hashlib.sha256(f"{seed}:{server_id}".encode()).hexdigest()[:32]


def _with_token(raw_server: dict, seed: int) -> dict:
    if "sentinel_token" not in raw_server and "id" in raw_server:
        raw_server = dict(raw_server)
        raw_server["sentinel_token"] = derive_token(seed, str(raw_server["id"]))
    return raw_server


def _load_vps_source(source, base: Path) -> list:
    """vps may be an inline list or a path to a JSON file holding one."""
    if isinstance(source, list):
        return source
    if isinstance(source, str):
        source = {"file": source}
    if isinstance(source, dict) and "file" in source:
        path = base / source["file"]
        if not path.exists():
            raise ConfigError([f"vps file {str(path)!r} does not exist"])
        with open(path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, list):
            raise ConfigError([f"vps file {str(path)!r} must hold a JSON list"])
        return loaded
    raise ConfigError(["vps must be an inline list or {'file': path}"])


def _read_referenced(base: Path, name: str | None, what: str) -> str | None:
    if name is None:
        return None
    path = base / name
    if not path.exists():
        raise ConfigError([f"{what} file {str(path)!r} does not exist"])
    return path.read_text(encoding="utf-8")


def load_campaign_config(path) -> CampaignConfig:
    path = Path(path)
    raw_bytes = path.read_bytes()
    digest = hashlib.sha256(raw_bytes).hexdigest()
    try:
        raw = json.loads(raw_bytes)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON: {exc}"]) from exc
    base = path.parent

    seed = int(raw.get("seed", 0))
    raw_servers = [_with_token(s, seed) for s in raw.get("servers", [])]
    raw_vps = _load_vps_source(raw.get("vps", []), base)
    raw_domains = raw.get("domains", {})

    view = SimpleNamespace(servers=raw_servers, vps=raw_vps, domains=raw_domains)
    violations = model.validate_campaign(view)

    reference_pair = None
    raw_pair = raw.get("reference_pair")
    if raw_pair is not None:
        try:
            reference_pair = ReferenceServerPair(
                shared_domain=model.test_domain_from_mapping(raw_pair["shared_domain"]),
                server_a=model.control_server_from_mapping(_with_token(raw_pair["server_a"], seed)),
                server_b=model.control_server_from_mapping(_with_token(raw_pair["server_b"], seed)),
            )
        except (model.ModelError, KeyError, TypeError, ValueError) as exc:
            violations.append(f"reference_pair: {exc}")

    signature_text = _read_referenced(base, raw.get("signature_db"), "signature_db")
    titles_text = _read_referenced(base, raw.get("legit_titles"), "legit_titles")
    try:
        signature_db = (
            BlockpageSignatureDB.from_json(signature_text)
            if signature_text is not None
            else BlockpageSignatureDB.empty()
        )
    except (model.ModelError, KeyError, TypeError, ValueError) as exc:
        violations.append(f"signature_db: {exc}")
        signature_db = BlockpageSignatureDB.empty()
    legit_titles = (
        LegitTitleTable.from_json(titles_text) if titles_text is not None else LegitTitleTable.empty()
    )

    if violations:
        raise ConfigError(violations)

    servers = [model.control_server_from_mapping(s) for s in raw_servers]
    vps = [model.vantage_point_from_mapping(v) for v in raw_vps]
    domains = {}
    for country, names in raw_domains.items():
        domains[country] = [
            TestDomain(name=n, country_scope=country)
            if isinstance(n, str)
            else model.test_domain_from_mapping(n)
            for n in names
        ]

    caps_raw = raw.get("caps", {})
    probe_raw = raw.get("probe", {})
    trace_raw = raw.get("traceroute", {})
    return CampaignConfig(
        campaign_id=str(raw.get("campaign_id", path.stem)),
        seed=seed,
        servers=servers,
        vps=vps,
        domains=domains,
        reference_pair=reference_pair,
        signature_db=signature_db,
        legit_titles=legit_titles,
        caps=Caps(per_country_per_epoch=int(caps_raw.get("per_country_per_epoch", 80))),
        probe=ProbeSettings(
            timeout_ms=int(probe_raw.get("timeout_ms", 5000)),
            max_attempts=int(probe_raw.get("max_attempts", 5)),
            parallel=int(probe_raw.get("parallel", 64)),
        ),
        traceroute=TracerouteSettings(
            max_ttl=int(trace_raw.get("max_ttl", 40)),
            per_hop_timeout_ms=int(trace_raw.get("per_hop_timeout_ms", 2000)),
            per_hop_retries=int(trace_raw.get("per_hop_retries", 1)),
        ),
        min_clean_vps=int(raw.get("min_clean_vps", 50)),
        experiment_description=str(raw.get("experiment_description", DEFAULT_DESCRIPTION)),
        config_sha256=digest,
    )
