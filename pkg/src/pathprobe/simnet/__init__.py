"""Deterministic simulated internetwork: topology, routing, packet walks."""

from .engine import (
    CachedResponse,
    DeliveredToServer,
    Dropped,
    IcmpTtlExceeded,
    InjectedBlockpage,
    InjectedRst,
    SimPacket,
    SimTransport,
    deliver,
    path_censorship,
    whatif_min_censorship,
)
from .gen import Scenario, censor_at_hop, chain_topology, random_scenario
from .routing import RouterHop, hop_chain, route
from .topology import (
    AsNode,
    CacheProxy,
    Censor,
    Link,
    NoRouteError,
    Topology,
    TopologyError,
    load_topology,
    router_ip,
    save_topology,
    topology_from_obj,
    topology_to_obj,
)

__all__ = [
    "AsNode", "CacheProxy", "CachedResponse", "Censor", "DeliveredToServer",
    "Dropped", "IcmpTtlExceeded", "InjectedBlockpage", "InjectedRst", "Link",
    "NoRouteError", "RouterHop", "Scenario", "SimPacket", "SimTransport",
    "Topology", "TopologyError", "censor_at_hop", "chain_topology", "deliver",
    "hop_chain", "load_topology", "path_censorship", "random_scenario",
    "route", "router_ip", "save_topology", "topology_from_obj",
    "topology_to_obj", "whatif_min_censorship",
]
