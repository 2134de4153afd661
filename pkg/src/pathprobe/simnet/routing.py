"""Valley-free AS path selection and router-hop expansion.

Route selection follows the Gao-Rexford preferences: routes learned from
customers beat routes learned from peers beat routes learned from providers,
then shortest AS path, then lowest next-hop ASN. Selection is computed by
propagating the destination's announcement in three stages:

1. customer routes climb provider edges from the destination,
2. a node holding a customer route announces it across one peer edge,
3. every node announces its single best route down to its customers.

A path produced this way can never contain a valley (a provider edge
followed later by a customer-to-provider climb).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .topology import NoRouteError, Topology, router_ip

_CUSTOMER, _PEER, _PROVIDER = 0, 1, 2


def _routes_to(topology: Topology, dst: int) -> dict[int, tuple[int, ...]]:
    """Best path from every AS to dst; paths run node..dst."""
    best: dict[int, tuple[int, tuple[int, ...]]] = {dst: (_CUSTOMER, (dst,))}

    # Stage 1: customer routes, BFS up provider edges, lowest next hop on ties.
    layer = [dst]
    while layer:
        nominees: dict[int, tuple[int, ...]] = {}
        for node in sorted(layer):
            for provider in topology.providers_of[node]:
                if provider in best:
                    continue
                candidate = (provider,) + best[node][1]
                incumbent = nominees.get(provider)
                if incumbent is None or candidate[1] < incumbent[1]:
                    nominees[provider] = candidate
        for node, path in nominees.items():
            best[node] = (_CUSTOMER, path)
        layer = list(nominees)

    # Stage 2: one peer edge off any customer route.
    peer_nominees: dict[int, tuple[int, ...]] = {}
    for node, (_, path) in list(best.items()):
        for peer in topology.peers_of[node]:
            if peer in best:
                continue
            candidate = (peer,) + path
            incumbent = peer_nominees.get(peer)
            if incumbent is None or (len(candidate), candidate[1]) < (len(incumbent), incumbent[1]):
                peer_nominees[peer] = candidate
    for node, path in peer_nominees.items():
        best[node] = (_PEER, path)

    # Stage 3: best routes descend customer edges; Dijkstra orders ties by
    # path length then the announcing (next hop) ASN.
    heap: list[tuple[int, int, int, tuple[int, ...]]] = []
    for node, (_, path) in best.items():
        for customer in topology.customers_of[node]:
            heapq.heappush(heap, (len(path) + 1, node, customer, (customer,) + path))
    while heap:
        length, _, node, path = heapq.heappop(heap)
        if node in best:
            continue
        best[node] = (_PROVIDER, path)
        for customer in topology.customers_of[node]:
            heapq.heappush(heap, (length + 1, node, customer, (customer,) + path))

    return {node: path for node, (_, path) in best.items()}


def route(topology: Topology, src_asn: int, dst_asn: int) -> tuple[int, ...]:
    """Deterministic valley-free AS path from src to dst, inclusive."""
    for asn in (src_asn, dst_asn):
        if asn not in topology.nodes:
            raise NoRouteError(f"AS{asn} not in topology")
    cached = topology._route_cache.get(dst_asn)
    if cached is None:
        cached = _routes_to(topology, dst_asn)
        topology._route_cache[dst_asn] = cached
    path = cached.get(src_asn)
    if path is None:
        raise NoRouteError(f"no valley-free path from AS{src_asn} to AS{dst_asn}")
    return path


@dataclass(frozen=True)
class RouterHop:
    """One simulated router; index is the 1-based TTL at which it is reached."""

    index: int
    asn: int
    router_index: int
    ip: str
    responds_icmp: bool
    label: str


def hop_chain(topology: Topology, as_path: tuple[int, ...] | list[int]) -> list[RouterHop]:
    """Expand an AS path into the full ordered router chain."""
    hops: list[RouterHop] = []
    index = 0
    for asn in as_path:
        node = topology.nodes[asn]
        for r in range(node.router_count):
            index += 1
            hops.append(
                RouterHop(
                    index=index,
                    asn=asn,
                    router_index=r,
                    ip=router_ip(asn, r),
                    responds_icmp=node.responds_icmp(r),
                    label=f"AS{asn}",
                )
            )
    return hops
