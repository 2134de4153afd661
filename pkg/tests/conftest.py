"""Shared builders for tests: catalogs, records, scenarios, topologies."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

from pathprobe.model import (
    Anomalous,
    Attempt,
    Blockpage,
    Censored,
    ControlServer,
    Drop,
    OtherPayload,
    ProbeRecord,
    ProbeSpec,
    Reset,
    Sentinel,
    TestDomain,
    Timeout,
    Uncensored,
    VantagePoint,
)

PLATFORMS = ("cloud-a", "cloud-b", "cloud-c")
REGIONS = ("virginia", "london", "bahrain", "sydney", "saopaulo", "capetown")


def token_for(name: str) -> str:
    return hashlib.sha256(name.encode()).hexdigest()[:32]


def make_server(i: int = 1, platform: str | None = None, region: str | None = None) -> ControlServer:
    return ControlServer(
        id=f"srv-{i}",
        address=f"203.0.113.{i}",
        platform=platform or PLATFORMS[(i - 1) % len(PLATFORMS)],
        region=region or REGIONS[(i - 1) % len(REGIONS)],
        sentinel_token=token_for(f"srv-{i}"),
    )


def make_vp(i: int = 1, country: str = "CN", asn: int = 100, access=None) -> VantagePoint:
    kwargs = {"access": access} if access is not None else {}
    return VantagePoint(
        id=f"vp-{i}", address=f"192.0.2.{i % 250 + 1}", country=country, asn=asn, **kwargs
    )


def make_domain(name: str = "blocked.test", country: str = "CN") -> TestDomain:
    return TestDomain(name=name, country_scope=country)


def digest_of(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def make_record(
    vp: VantagePoint,
    server: ControlServer,
    domain: TestDomain,
    verdict: str,
    epoch: int = 0,
    started_at: int = 0,
    flags: tuple[str, ...] = (),
    signature_id: str = "sig-1",
    title: str | None = None,
    max_attempts: int = 5,
) -> ProbeRecord:
    """Build a record whose attempts are consistent with the named verdict."""
    spec = ProbeSpec(vp=vp, server=server, domain=domain, max_attempts=max_attempts)
    if verdict == "uncensored":
        attempts = (Attempt(Sentinel(), 40),)
        final, v = Sentinel(), Uncensored()
    elif verdict == "drop":
        attempts = tuple(Attempt(Timeout(), None) for _ in range(max_attempts))
        final, v = Timeout(), Censored(Drop())
    elif verdict == "reset":
        attempts = (Attempt(Reset(), 30),)
        final, v = Reset(), Censored(Reset())
    elif verdict == "blockpage":
        attempts = (Attempt(Blockpage(signature_id), 30),)
        final, v = Blockpage(signature_id), Censored(Blockpage(signature_id))
    elif verdict == "anomalous":
        payload = OtherPayload(body_digest=digest_of(f"{vp.id}:{domain.name}"), title=title)
        attempts = (Attempt(payload, 35),)
        final, v = payload, Anomalous()
    else:
        raise ValueError(f"unknown verdict shorthand {verdict!r}")
    ended = started_at + sum(a.rtt_ms or spec.timeout_ms for a in attempts)
    return ProbeRecord(
        spec=spec,
        attempts=attempts,
        final_outcome=final,
        verdict=v,
        started_at=started_at,
        ended_at=ended,
        epoch=epoch,
        flags=flags,
    )


@pytest.fixture
def server():
    return make_server(1)


@pytest.fixture
def vp():
    return make_vp(1)


@pytest.fixture
def domain():
    return make_domain()


def synthetic_country(country, total, censored, inconsistent, vp_offset=0):
    """Records reproducing the (total, censored, inconsistent) VP counts.

    Inconsistent VPs are censored on server 1 but clean on server 2 for the
    same domain; consistently censored VPs are censored on both; clean VPs
    see the sentinel everywhere.
    """
    s1, s2 = make_server(1), make_server(2)
    domain = make_domain("blocked.test", country)
    records = []
    vps = []
    for i in range(total):
        vp = make_vp(vp_offset + i + 1, country=country, asn=64500)
        vps.append(vp)
        if i < inconsistent:
            records.append(make_record(vp, s1, domain, "reset"))
            records.append(make_record(vp, s2, domain, "uncensored"))
        elif i < censored:
            records.append(make_record(vp, s1, domain, "reset"))
            records.append(make_record(vp, s2, domain, "reset"))
        else:
            records.append(make_record(vp, s1, domain, "uncensored"))
            records.append(make_record(vp, s2, domain, "uncensored"))
    return records, [s1, s2], vps, [domain]


def scenario_files(tmp_path: Path, seed: int = 3, **kwargs):
    """Materialize a generated scenario as config + topology files."""
    from pathprobe.simnet import random_scenario, save_topology

    sc = random_scenario(seed, **kwargs)
    topo_path = tmp_path / "topology.json"
    save_topology(sc.topology, topo_path)
    (tmp_path / "signatures.json").write_text(
        json.dumps(
            [
                {"id": e.signature_id, "kind": e.match_kind, "pattern": e.pattern}
                for e in sc.signature_db.entries
            ]
        )
    )
    (tmp_path / "titles.json").write_text(json.dumps(sc.legit_titles))
    config_obj = {
        "campaign_id": f"sim-{seed}",
        "seed": seed,
        "servers": [
            {
                "id": s.id, "address": s.address, "platform": s.platform,
                "region": s.region, "sentinel_token": s.sentinel_token,
            }
            for s in sc.servers
        ],
        "vps": [
            {"id": v.id, "address": v.address, "country": v.country, "asn": v.asn}
            for v in sc.vps
        ],
        "domains": {cc: [d.name for d in ds] for cc, ds in sc.domains.items()},
        "reference_pair": {
            "shared_domain": {
                "name": sc.reference_pair.shared_domain.name,
                "country_scope": sc.reference_pair.shared_domain.country_scope,
            },
            "server_a": {
                "id": sc.reference_pair.server_a.id,
                "address": sc.reference_pair.server_a.address,
                "platform": sc.reference_pair.server_a.platform,
                "region": sc.reference_pair.server_a.region,
                "sentinel_token": sc.reference_pair.server_a.sentinel_token,
            },
            "server_b": {
                "id": sc.reference_pair.server_b.id,
                "address": sc.reference_pair.server_b.address,
                "platform": sc.reference_pair.server_b.platform,
                "region": sc.reference_pair.server_b.region,
                "sentinel_token": sc.reference_pair.server_b.sentinel_token,
            },
        },
        "signature_db": "signatures.json",
        "legit_titles": "titles.json",
    }
    config_path = tmp_path / "campaign.json"
    config_path.write_text(json.dumps(config_obj, indent=2))
    return sc, config_path, topo_path

