"""Seeded random scenario generation for simulation suites.

A scenario bundles a topology with consistent campaign catalogs: hosted
vantage points and servers, per-country domains, a reference-server pair for
cache vetting, a signature DB covering every generated blockpage censor, and
the legit-title table for offline vetting.

Construction guarantees:

* the AS graph is a provider tree plus random peer links, so every pair of
  ASes is valley-free connected;
* censor blocklists are built only from test-domain names, never matching
  the reference domain;
* pre-seeded cache entries replay a page whose title equals the legit title
  of a test domain, so offline vetting has something to find.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

from ..model import ControlServer, DirectAccess, TestDomain, VantagePoint
from ..prober import BlockpageSignature, BlockpageSignatureDB
from ..vetting import ReferenceServerPair
from .topology import AsNode, CacheProxy, Censor, Link, Topology, _wrap_cached_body

PLATFORMS = ("cloud-a", "cloud-b", "cloud-c")
REGIONS = ("virginia", "london", "bahrain", "sydney", "saopaulo", "capetown")


def derive_token(seed: int, server_id: str) -> str:
    return hashlib.sha256(f"{seed}:{server_id}".encode()).hexdigest()[:32]


@dataclass
class Scenario:
    topology: Topology
    vps: list[VantagePoint]
    servers: list[ControlServer]
    domains: dict[str, list[TestDomain]]
    reference_pair: ReferenceServerPair
    signature_db: BlockpageSignatureDB
    legit_titles: dict[str, str] = field(default_factory=dict)

    def all_domains(self) -> list[TestDomain]:
        return [d for ds in self.domains.values() for d in ds]


def random_scenario(
    seed: int,
    n_as: int = 8,
    n_servers: int = 3,
    n_vps: int = 6,
    n_domains: int = 4,
    censor_probability: float = 0.4,
    cache_probability: float = 0.25,
    preseed_probability: float = 0.15,
    country: str = "CN",
) -> Scenario:
    rng = random.Random(seed)
    n_as = max(2, rng.randint(2, n_as))
    n_servers = max(1, rng.randint(1, n_servers))
    n_vps = max(1, rng.randint(1, n_vps))
    n_domains = max(1, rng.randint(1, n_domains))

    asns = [100 + 10 * i for i in range(n_as)]
    nodes = {}
    for i, asn in enumerate(asns):
        router_count = rng.randint(1, 3)
        icmp = tuple(rng.random() < 0.85 for _ in range(router_count))
        role = "transit" if i == 0 else rng.choice(("eyeball", "transit", "cloud"))
        nodes[asn] = AsNode(asn=asn, role=role, router_count=router_count, icmp_responsive=icmp)

    links = []
    for i in range(1, n_as):
        provider = asns[rng.randrange(i)]
        links.append(Link(a=asns[i], b=provider, relation="customer-of"))
    linked = {frozenset((l.a, l.b)) for l in links}
    for i in range(n_as):
        for j in range(i + 1, n_as):
            pair = frozenset((asns[i], asns[j]))
            if pair not in linked and rng.random() < 0.15:
                links.append(Link(a=asns[i], b=asns[j], relation="peer"))
                linked.add(pair)

    domains = [TestDomain(name=f"blocked-{i + 1}.test", country_scope=country) for i in range(n_domains)]
    legit_titles = {d.name: f"Welcome to {d.name}" for d in domains}

    servers = []
    for i in range(n_servers):
        sid = f"srv-{i + 1}"
        servers.append(
            ControlServer(
                id=sid,
                address=f"203.0.113.{i + 1}",
                platform=PLATFORMS[i % len(PLATFORMS)],
                region=REGIONS[i % len(REGIONS)],
                sentinel_token=derive_token(seed, sid),
            )
        )
    ref_a = ControlServer(
        id="ref-a",
        address="198.51.100.1",
        platform="reference",
        region="alpha",
        sentinel_token=derive_token(seed, "ref-a"),
    )
    ref_b = ControlServer(
        id="ref-b",
        address="198.51.100.2",
        platform="reference",
        region="beta",
        sentinel_token=derive_token(seed, "ref-b"),
    )
    reference_pair = ReferenceServerPair(
        shared_domain=TestDomain(name="reference.test", country_scope=country),
        server_a=ref_a,
        server_b=ref_b,
    )

    vps = [
        VantagePoint(
            id=f"vp-{i + 1}",
            address=f"192.0.2.{i + 1}",
            country=country,
            asn=rng.choice(asns),
            access=DirectAccess(),
        )
        for i in range(n_vps)
    ]

    censors = []
    signatures = []
    for asn in asns:
        if rng.random() >= censor_probability:
            continue
        action = rng.choice(("drop", "rst", "blockpage"))
        blocklist = frozenset(
            d.name for d in rng.sample(domains, rng.randint(1, len(domains)))
        )
        sig_id = body = None
        if action == "blockpage":
            sig_id = f"sig-{asn}"
            body = f"<html><title>Blocked</title><body>BLOCKED-{asn}</body></html>"
            signatures.append(
                BlockpageSignature(signature_id=sig_id, match_kind="substring", pattern=f"BLOCKED-{asn}")
            )
        censors.append(
            Censor(
                asn=asn,
                router_index=rng.randrange(nodes[asn].router_count),
                direction=rng.choice(("inbound", "outbound", "both")),
                blocklist=blocklist,
                action=action,
                signature_id=sig_id,
                blockpage_body=body,
                ttl_copy=rng.random() < 0.2,
                ttl_copy_mode="remaining",
            )
        )

    caches = []
    for asn in asns:
        if rng.random() >= cache_probability:
            continue
        store = {}
        if rng.random() < preseed_probability:
            victim = rng.choice(domains)
            store[victim.name] = _wrap_cached_body(
                f"<html><head><title>{legit_titles[victim.name]}</title></head>"
                f"<body>stale copy</body></html>"
            )
        caches.append(
            CacheProxy(asn=asn, router_index=rng.randrange(nodes[asn].router_count), store=store)
        )

    topology = Topology(
        nodes=nodes,
        links=tuple(links),
        censors=tuple(censors),
        caches=caches,
        vps={vp.id: vp.asn for vp in vps},
        servers={s.id: rng.choice(asns) for s in servers}
        | {ref_a.id: rng.choice(asns), ref_b.id: rng.choice(asns)},
        seed=seed,
    )
    topology.validate_connectivity()

    return Scenario(
        topology=topology,
        vps=vps,
        servers=servers,
        domains={country: domains},
        reference_pair=reference_pair,
        signature_db=BlockpageSignatureDB(tuple(signatures)),
        legit_titles=legit_titles,
    )


def chain_topology(
    router_counts: list[int],
    vp_id: str = "vp-1",
    server_id: str = "srv-1",
    censors: tuple[Censor, ...] = (),
    caches: list[CacheProxy] | None = None,
    seed: int = 0,
) -> Topology:
    """A linear provider chain: the VP's AS first, the server's AS last.

    The hop chain from VP to server is exactly sum(router_counts) routers,
    which makes censor placement by absolute hop index easy in tests.
    """
    asns = [100 + 10 * i for i in range(len(router_counts))]
    nodes = {
        asn: AsNode(asn=asn, role="transit", router_count=rc)
        for asn, rc in zip(asns, router_counts)
    }
    links = tuple(
        Link(a=asns[i], b=asns[i + 1], relation="customer-of") for i in range(len(asns) - 1)
    )
    topo = Topology(
        nodes=nodes,
        links=links,
        censors=censors,
        caches=caches or [],
        vps={vp_id: asns[0]},
        servers={server_id: asns[-1]},
        seed=seed,
    )
    topo.validate_connectivity()
    return topo


def censor_at_hop(
    router_counts: list[int],
    hop_index: int,
    blocklist: frozenset[str],
    action: str = "rst",
    direction: str = "outbound",
    ttl_copy: bool = False,
    ttl_copy_mode: str = "remaining",
    signature_id: str | None = None,
    blockpage_body: str | None = None,
    redirect_to: str | None = None,
) -> Censor:
    """Build a censor sitting at the given absolute 1-based hop of a chain."""
    remaining = hop_index
    for i, rc in enumerate(router_counts):
        if remaining <= rc:
            return Censor(
                asn=100 + 10 * i,
                router_index=remaining - 1,
                direction=direction,
                blocklist=blocklist,
                action=action,
                signature_id=signature_id,
                blockpage_body=blockpage_body,
                redirect_to=redirect_to,
                ttl_copy=ttl_copy,
                ttl_copy_mode=ttl_copy_mode,
            )
        remaining -= rc
    raise ValueError(f"hop {hop_index} beyond chain of {sum(router_counts)} routers")
