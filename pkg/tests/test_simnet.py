"""Routing, delivery, and topology-format tests for the simulated network.

route() is checked against an independent fixed-point BGP-style oracle that
iterates per-node best routes under Gao-Rexford export rules until stable,
plus a structural valley-free check on every returned path.
"""

from __future__ import annotations

import random

import pytest

from pathprobe.model import TestDomain
from pathprobe.simnet import (
    AsNode,
    CacheProxy,
    Censor,
    Link,
    NoRouteError,
    Topology,
    TopologyError,
    censor_at_hop,
    chain_topology,
    deliver,
    hop_chain,
    route,
    topology_from_obj,
    topology_to_obj,
    whatif_min_censorship,
)
from pathprobe.simnet.engine import (
    CachedResponse,
    DeliveredToServer,
    Dropped,
    IcmpTtlExceeded,
    InjectedRst,
    SimPacket,
    SimTransport,
)
from conftest import make_server, make_vp

# --- Independent routing oracle ----------------------------------------------

CUSTOMER, PEER, PROVIDER = 0, 1, 2


def oracle_routes(topo: Topology, dst: int) -> dict[int, tuple[int, tuple[int, ...]]]:
    """Fixed-point iteration of per-node best routes; independent of route()."""
    best: dict[int, tuple[int, tuple[int, ...]]] = {dst: (CUSTOMER, (dst,))}
    for _ in range(2 * len(topo.nodes) + 4):
        changed = False
        for v in sorted(topo.nodes):
            if v == dst:
                continue
            candidates = []
            for rel, neighbors in (
                (CUSTOMER, topo.customers_of[v]),
                (PEER, topo.peers_of[v]),
                (PROVIDER, topo.providers_of[v]),
            ):
                for n in neighbors:
                    if n not in best:
                        continue
                    n_class, n_path = best[n]
                    # n exports its best route to v only if v is n's customer
                    # (rel == PROVIDER from v's side); peers and providers of n
                    # only ever receive n's customer routes.
                    if rel in (CUSTOMER, PEER) and n_class != CUSTOMER:
                        continue
                    if v in n_path:
                        continue
                    candidates.append((rel, len(n_path) + 1, n, (v,) + n_path))
            if not candidates:
                continue
            rel, _, _, path = min(candidates, key=lambda c: (c[0], c[1], c[2]))
            if best.get(v) != (rel, path):
                best[v] = (rel, path)
                changed = True
        if not changed:
            return best
    raise AssertionError("oracle failed to converge")


def relation(topo: Topology, a: int, b: int) -> str:
    if b in topo.providers_of[a]:
        return "up"
    if b in topo.customers_of[a]:
        return "down"
    if b in topo.peers_of[a]:
        return "peer"
    raise AssertionError(f"no link {a}-{b}")


def is_valley_free(topo: Topology, path) -> bool:
    state = "up"
    for a, b in zip(path, path[1:]):
        rel = relation(topo, a, b)
        if state == "up":
            if rel == "up":
                continue
            state = "after-peer" if rel == "peer" else "down"
        elif state == "after-peer":
            if rel != "down":
                return False
            state = "down"
        elif rel != "down":
            return False
    return True


def random_gr_topology(rng: random.Random, n: int) -> Topology:
    """Provider tree plus random peer links: always GR-safe and connected."""
    asns = [100 + 10 * i for i in range(n)]
    nodes = {a: AsNode(a, "transit", rng.randint(1, 2)) for a in asns}
    links = [
        Link(a=asns[i], b=asns[rng.randrange(i)], relation="customer-of")
        for i in range(1, n)
    ]
    present = {frozenset((l.a, l.b)) for l in links}
    for i in range(n):
        for j in range(i + 1, n):
            pair = frozenset((asns[i], asns[j]))
            if pair not in present and rng.random() < 0.2:
                links.append(Link(a=asns[i], b=asns[j], relation="peer"))
                present.add(pair)
    return Topology(nodes=nodes, links=tuple(links), censors=(), caches=[], vps={}, servers={})


class TestRouteExamples:
    def test_linear_provider_chain(self):
        topo = Topology(
            nodes={1: AsNode(1), 2: AsNode(2), 3: AsNode(3)},
            links=(Link(1, 2, "provider-of"), Link(2, 3, "provider-of")),
            censors=(), caches=[], vps={}, servers={},
        )
        assert route(topo, 1, 3) == (1, 2, 3)

    def test_peer_route_beats_shorter_provider_route(self):
        # src 1: peer path 1-2-3-4 (len 3 via peer), provider path 1-5-4 (len 2)
        topo = Topology(
            nodes={n: AsNode(n) for n in (1, 2, 3, 4, 5)},
            links=(
                Link(1, 2, "peer"),
                Link(3, 2, "customer-of"),   # 2 provides 3
                Link(3, 4, "provider-of"),   # 3 provides 4 -> 2 hears customer route
                Link(1, 5, "customer-of"),   # 5 provides 1
                Link(4, 5, "customer-of"),   # 5 provides 4
            ),
            censors=(), caches=[], vps={}, servers={},
        )
        assert route(topo, 1, 4) == (1, 2, 3, 4)

    def test_tiebreak_by_lowest_next_hop(self):
        # two equal-class equal-length provider paths via 100 and 200
        topo = Topology(
            nodes={n: AsNode(n) for n in (1, 100, 200, 9)},
            links=(
                Link(1, 100, "customer-of"),
                Link(1, 200, "customer-of"),
                Link(9, 100, "customer-of"),
                Link(9, 200, "customer-of"),
            ),
            censors=(), caches=[], vps={}, servers={},
        )
        assert route(topo, 1, 9) == (1, 100, 9)

    def test_no_valley_free_path(self):
        # two customers of nothing: 1 and 2 disconnected
        topo = Topology(
            nodes={1: AsNode(1), 2: AsNode(2)},
            links=(), censors=(), caches=[], vps={}, servers={},
        )
        with pytest.raises(NoRouteError):
            route(topo, 1, 2)

    def test_peer_cannot_transit_for_peer(self):
        # 1-2 peer, 2-3 peer: a route via two peer links is not valley-free
        topo = Topology(
            nodes={1: AsNode(1), 2: AsNode(2), 3: AsNode(3)},
            links=(Link(1, 2, "peer"), Link(2, 3, "peer")),
            censors=(), caches=[], vps={}, servers={},
        )
        with pytest.raises(NoRouteError):
            route(topo, 1, 3)


class TestRouteOracle:
    def test_matches_fixed_point_oracle_on_random_topologies(self):
        rng = random.Random(20_000)
        for trial in range(40):
            topo = random_gr_topology(rng, rng.randint(2, 8))
            asns = sorted(topo.nodes)
            for dst in asns:
                expected = oracle_routes(topo, dst)
                for src in asns:
                    if src in expected:
                        got = route(topo, src, dst)
                        assert got == expected[src][1], (
                            f"trial {trial}: route {src}->{dst} got {got}, "
                            f"oracle {expected[src][1]}"
                        )
                        assert is_valley_free(topo, got)
                    else:
                        with pytest.raises(NoRouteError):
                            route(topo, src, dst)

    def test_deterministic_across_instances(self):
        rng1, rng2 = random.Random(7), random.Random(7)
        t1 = random_gr_topology(rng1, 7)
        t2 = random_gr_topology(rng2, 7)
        for dst in sorted(t1.nodes):
            for src in sorted(t1.nodes):
                try:
                    assert route(t1, src, dst) == route(t2, src, dst)
                except NoRouteError:
                    with pytest.raises(NoRouteError):
                        route(t2, src, dst)


class TestHopChain:
    def test_concatenation_and_indices(self):
        topo = Topology(
            nodes={1: AsNode(1, router_count=2), 2: AsNode(2, router_count=1)},
            links=(Link(1, 2, "customer-of"),),
            censors=(), caches=[], vps={}, servers={},
        )
        hops = hop_chain(topo, (1, 2))
        assert [(h.index, h.asn, h.router_index) for h in hops] == [(1, 1, 0), (2, 1, 1), (3, 2, 0)]

    def test_single_as_single_router(self):
        topo = Topology(nodes={1: AsNode(1)}, links=(), censors=(), caches=[], vps={}, servers={})
        assert len(hop_chain(topo, (1,))) == 1

    def test_empty_path(self):
        topo = Topology(nodes={1: AsNode(1)}, links=(), censors=(), caches=[], vps={}, servers={})
        assert hop_chain(topo, ()) == []


class TestDeliver:
    def _topo(self, censors=(), counts=(1, 1, 1, 1, 1)):
        return chain_topology(list(counts), censors=censors)

    def test_rst_censor_with_full_ttl(self):
        censor = censor_at_hop([1] * 5, 4, frozenset({"blocked.test"}), action="rst")
        topo = self._topo((censor,))
        event = deliver(topo, SimPacket(100, 140, 64, "blocked.test", "GET / HTTP/1.1"), b"body")
        assert isinstance(event, InjectedRst)
        assert event.censor_hop.index == 4

    def test_ttl_expiry_before_censor(self):
        censor = censor_at_hop([1] * 5, 4, frozenset({"blocked.test"}), action="rst")
        topo = self._topo((censor,))
        event = deliver(topo, SimPacket(100, 140, 3, "blocked.test", "GET / HTTP/1.1"), b"body")
        assert isinstance(event, IcmpTtlExceeded)
        assert event.router.index == 3

    def test_ttl_copy_remaining_brute_force(self):
        # censor at hop 5 copying remaining TTL: first delivered sign at 2d=10
        censor = censor_at_hop(
            [1] * 12, 5, frozenset({"blocked.test"}), action="rst",
            ttl_copy=True, ttl_copy_mode="remaining",
        )
        topo = self._topo((censor,), counts=(1,) * 12)
        outcomes = {}
        for ttl in range(1, 21):
            event = deliver(topo, SimPacket(100, 210, ttl, "blocked.test", "GET / HTTP/1.1"), b"x")
            outcomes[ttl] = type(event).__name__
        for ttl in range(1, 5):
            assert outcomes[ttl] == "IcmpTtlExceeded"
        for ttl in range(5, 10):
            assert outcomes[ttl] == "Dropped"
        for ttl in range(10, 21):
            assert outcomes[ttl] == "InjectedRst"

    def test_ttl_copy_original_mode_always_delivers(self):
        censor = censor_at_hop(
            [1] * 12, 5, frozenset({"blocked.test"}), action="rst",
            ttl_copy=True, ttl_copy_mode="original",
        )
        topo = self._topo((censor,), counts=(1,) * 12)
        event = deliver(topo, SimPacket(100, 210, 5, "blocked.test", "GET / HTTP/1.1"), b"x")
        assert isinstance(event, InjectedRst)

    def test_keyword_matching_is_substring_case_insensitive(self):
        censor = censor_at_hop([1] * 3, 2, frozenset({"BongaCams"}), action="rst")
        topo = self._topo((censor,), counts=(1, 1, 1))
        event = deliver(topo, SimPacket(100, 120, 64, "www.bongacams.com", "GET / HTTP/1.1"), b"x")
        assert isinstance(event, InjectedRst)
        event = deliver(topo, SimPacket(100, 120, 64, "other.test", "GET / HTTP/1.1"), b"x")
        assert isinstance(event, DeliveredToServer)

    def test_silent_router_swallows_expiry(self):
        topo = Topology(
            nodes={
                100: AsNode(100, router_count=2, icmp_responsive=(True, False)),
                110: AsNode(110),
            },
            links=(Link(100, 110, "customer-of"),),
            censors=(), caches=[], vps={}, servers={},
        )
        assert isinstance(
            deliver(topo, SimPacket(100, 110, 1, "a.test", "GET / HTTP/1.1"), b"x"),
            IcmpTtlExceeded,
        )
        assert isinstance(
            deliver(topo, SimPacket(100, 110, 2, "a.test", "GET / HTTP/1.1"), b"x"),
            Dropped,
        )

    def test_direction_inbound_ignores_internal_traffic(self):
        # inbound censor in the server's AS: a VP in the same AS is never censored
        censor = Censor(
            asn=100, router_index=0, direction="inbound",
            blocklist=frozenset({"blocked.test"}), action="rst",
        )
        topo = Topology(
            nodes={100: AsNode(100, router_count=2), 110: AsNode(110)},
            links=(Link(110, 100, "customer-of"),),
            censors=(censor,), caches=[], vps={}, servers={},
        )
        internal = deliver(topo, SimPacket(100, 100, 64, "blocked.test", "GET / HTTP/1.1"), b"x")
        assert isinstance(internal, DeliveredToServer)
        external = deliver(topo, SimPacket(110, 100, 64, "blocked.test", "GET / HTTP/1.1"), b"x")
        assert isinstance(external, InjectedRst)

    def test_direction_outbound_ignores_inward_traffic(self):
        censor = Censor(
            asn=100, router_index=0, direction="outbound",
            blocklist=frozenset({"blocked.test"}), action="rst",
        )
        topo = Topology(
            nodes={100: AsNode(100, router_count=2), 110: AsNode(110)},
            links=(Link(110, 100, "customer-of"),),
            censors=(censor,), caches=[], vps={}, servers={},
        )
        to_self = deliver(topo, SimPacket(100, 100, 64, "blocked.test", "GET / HTTP/1.1"), b"x")
        assert isinstance(to_self, DeliveredToServer)
        outward = deliver(topo, SimPacket(100, 110, 64, "blocked.test", "GET / HTTP/1.1"), b"x")
        assert isinstance(outward, InjectedRst)

    def test_cache_replays_and_stores_before_censor(self):
        cache = CacheProxy(asn=110, router_index=0, store={})
        censor = Censor(
            asn=110, router_index=0, direction="both",
            blocklist=frozenset({"blocked.test"}), action="rst",
        )
        topo = chain_topology([1, 1, 1], censors=(censor,), caches=[cache])
        # first probe: censor acts (cache has nothing yet)
        first = deliver(topo, SimPacket(100, 120, 64, "blocked.test", "GET / HTTP/1.1"), b"srv")
        assert isinstance(first, InjectedRst)
        # seed the cache by probing an uncensored host, then hit it again
        ok = deliver(topo, SimPacket(100, 120, 64, "free.test", "GET / HTTP/1.1"), b"reply-1")
        assert isinstance(ok, DeliveredToServer)
        again = deliver(topo, SimPacket(100, 120, 64, "free.test", "GET / HTTP/1.1"), b"reply-2")
        assert isinstance(again, CachedResponse)
        assert again.data == b"reply-1"
        # cache sits before the censor at the same router: a now-blocked host
        # with a cached entry is replayed, not censored
        censored_then_cached = Censor(
            asn=110, router_index=0, direction="both",
            blocklist=frozenset({"free.test"}), action="rst",
        )
        topo2 = chain_topology(
            [1, 1, 1], censors=(censored_then_cached,),
            caches=[CacheProxy(asn=110, router_index=0, store={"free.test": b"cached"})],
        )
        event = deliver(topo2, SimPacket(100, 120, 64, "free.test", "GET / HTTP/1.1"), b"srv")
        assert isinstance(event, CachedResponse)

    def test_direct_cloud_peering_bypasses_transit_censor(self):
        # eyeball 100 reaches cloud 130 either via transit 110 (censored) or a
        # direct peer link; the peer route wins and the censor never sees it.
        censor = Censor(
            asn=110, router_index=0, direction="both",
            blocklist=frozenset({"blocked.test"}), action="rst",
        )
        nodes = {100: AsNode(100, "eyeball"), 110: AsNode(110, "transit"), 130: AsNode(130, "cloud")}
        links_with_peer = (
            Link(100, 110, "customer-of"),
            Link(130, 110, "customer-of"),
            Link(100, 130, "peer"),
        )
        topo = Topology(nodes=dict(nodes), links=links_with_peer, censors=(censor,), caches=[], vps={}, servers={})
        assert route(topo, 100, 130) == (100, 130)
        event = deliver(topo, SimPacket(100, 130, 64, "blocked.test", "GET / HTTP/1.1"), b"x")
        assert isinstance(event, DeliveredToServer)
        # without the peering, traffic transits 110 and is censored
        topo2 = Topology(nodes=dict(nodes), links=links_with_peer[:2], censors=(censor,), caches=[], vps={}, servers={})
        assert route(topo2, 100, 130) == (100, 110, 130)
        assert isinstance(
            deliver(topo2, SimPacket(100, 130, 64, "blocked.test", "GET / HTTP/1.1"), b"x"),
            InjectedRst,
        )


class TestWhatIf:
    def _setup(self):
        vp = make_vp(1, asn=100)
        servers = [make_server(1), make_server(2), make_server(3)]
        censor = Censor(
            asn=110, router_index=0, direction="both",
            blocklist=frozenset({"blocked-1.test", "blocked-2.test"}), action="rst",
        )
        topo = Topology(
            nodes={100: AsNode(100), 110: AsNode(110), 120: AsNode(120), 130: AsNode(130)},
            links=(
                Link(100, 110, "customer-of"),
                Link(120, 110, "customer-of"),
                Link(130, 110, "customer-of"),
                Link(100, 130, "peer"),
            ),
            censors=(censor,), caches=[],
            vps={vp.id: 100},
            servers={"srv-1": 120, "srv-2": 120, "srv-3": 130},
        )
        return vp, servers, topo

    def test_clean_server_ranked_first(self):
        vp, servers, topo = self._setup()
        domains = [TestDomain("blocked-1.test", "CN"), TestDomain("blocked-2.test", "CN")]
        ranking = whatif_min_censorship(topo, vp, domains, servers)
        assert ranking[0].server.id == "srv-3"
        assert ranking[0].censored_fraction == 0.0
        assert ranking[1].censored_fraction == 1.0

    def test_all_clean_ties_by_id(self):
        vp, servers, topo = self._setup()
        domains = [TestDomain("free.test", "CN")]
        ranking = whatif_min_censorship(topo, vp, domains, servers)
        assert [e.server.id for e in ranking] == ["srv-1", "srv-2", "srv-3"]
        assert all(e.censored_fraction == 0.0 for e in ranking)

    def test_half_blocked_fraction_matches_enumeration(self):
        vp, servers, topo = self._setup()
        domains = [
            TestDomain("blocked-1.test", "CN"),
            TestDomain("blocked-2.test", "CN"),
            TestDomain("free-1.test", "CN"),
            TestDomain("free-2.test", "CN"),
        ]
        ranking = whatif_min_censorship(topo, vp, domains, servers)
        by_id = {e.server.id: e for e in ranking}
        # enumeration oracle: the censor matches exactly 2 of 4 domains on
        # paths through AS 110; srv-3 is reached over the direct peer link
        assert by_id["srv-1"].censored_fraction == 0.5
        assert by_id["srv-2"].censored_fraction == 0.5
        assert by_id["srv-3"].censored_fraction == 0.0
        # whatif is side-effect free: no cache state was touched
        assert all(not c.store for c in topo.caches)


class TestTopologyFormat:
    def _scenario_topology(self):
        from pathprobe.simnet import random_scenario

        return random_scenario(3).topology

    def test_round_trip(self):
        topo = self._scenario_topology()
        obj = topology_to_obj(topo)
        loaded = topology_from_obj(obj)
        assert topology_to_obj(loaded) == obj

    def test_rejects_unknown_as_in_link(self):
        with pytest.raises(TopologyError, match="unknown AS"):
            Topology(
                nodes={1: AsNode(1)},
                links=(Link(1, 2, "peer"),),
                censors=(), caches=[], vps={}, servers={},
            )

    def test_rejects_out_of_range_router_index(self):
        with pytest.raises(TopologyError, match="router"):
            Topology(
                nodes={1: AsNode(1, router_count=1)},
                links=(),
                censors=(
                    Censor(asn=1, router_index=5, direction="both",
                           blocklist=frozenset({"x"}), action="drop"),
                ),
                caches=[], vps={}, servers={},
            )

    def test_rejects_duplicate_links(self):
        with pytest.raises(TopologyError, match="duplicate link"):
            Topology(
                nodes={1: AsNode(1), 2: AsNode(2)},
                links=(Link(1, 2, "peer"), Link(2, 1, "peer")),
                censors=(), caches=[], vps={}, servers={},
            )

    def test_connectivity_validation(self):
        topo = Topology(
            nodes={1: AsNode(1), 2: AsNode(2)},
            links=(),
            censors=(), caches=[],
            vps={"vp-1": 1}, servers={"srv-1": 2},
        )
        with pytest.raises(TopologyError, match="no valley-free path"):
            topo.validate_connectivity()

    def test_empty_blocklist_rejected(self):
        with pytest.raises(TopologyError, match="blocklist"):
            Censor(asn=1, router_index=0, direction="both", blocklist=frozenset(), action="drop")


class TestSimClock:
    def test_rtt_is_hop_proportional_and_clock_advances(self):
        topo = chain_topology([2, 2, 1])
        server = make_server(1)
        transport = SimTransport(topo, [server])
        vp = make_vp(1)
        from pathprobe.prober import build_request
        from conftest import make_domain

        event = transport.exchange(vp, server.address, build_request(make_domain("free.test")), 5000)
        # 5 routers + server = 6 one-way hops, 10 ms each way
        assert event.rtt_ms == 120
        assert transport.now_ms() == 120
        transport.exchange(vp, server.address, build_request(make_domain("free.test")), 5000)
        assert transport.now_ms() == 240
