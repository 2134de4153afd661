"""Simulated internetwork topology: AS nodes, policy links, middleboxes.

The topology is the unit of determinism: everything an exchange can observe
is a pure function of this structure plus the cache-proxy stores, which are
the only mutable state (campaign-lifetime, per clone).

Direct cloud peering is expressed as an ordinary peer link between an
eyeball/transit AS and a cloud AS; no dedicated edge type exists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

AS_ROLES = ("eyeball", "transit", "cloud")
LINK_RELATIONS = ("customer-of", "peer", "provider-of")
CENSOR_DIRECTIONS = ("inbound", "outbound", "both")
CENSOR_ACTIONS = ("drop", "rst", "blockpage")
TTL_COPY_MODES = ("remaining", "original")


class TopologyError(ValueError):
    """The topology file or structure violates an invariant."""


class NoRouteError(TopologyError):
    """No valley-free path exists between the requested ASes."""


def router_ip(asn: int, router_index: int) -> str:
    """Deterministic synthetic IPv4 for a simulated router."""
    return f"10.{(asn >> 8) & 0xFF}.{asn & 0xFF}.{router_index + 1}"


@dataclass(frozen=True)
class AsNode:
    asn: int
    role: str = "transit"
    router_count: int = 1
    icmp_responsive: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        if self.asn <= 0:
            raise TopologyError(f"asn must be positive, got {self.asn}")
        if self.role not in AS_ROLES:
            raise TopologyError(f"AS{self.asn}: unknown role {self.role!r}")
        if self.router_count < 1:
            raise TopologyError(f"AS{self.asn}: router_count must be >= 1")
        if self.icmp_responsive is not None and len(self.icmp_responsive) != self.router_count:
            raise TopologyError(f"AS{self.asn}: icmp_responsive length != router_count")

    def responds_icmp(self, router_index: int) -> bool:
        if self.icmp_responsive is None:
            return True
        return self.icmp_responsive[router_index]


@dataclass(frozen=True)
class Link:
    """Relation is read from a's perspective: a customer-of b means b provides."""

    a: int
    b: int
    relation: str

    def __post_init__(self) -> None:
        if self.relation not in LINK_RELATIONS:
            raise TopologyError(f"link {self.a}-{self.b}: unknown relation {self.relation!r}")
        if self.a == self.b:
            raise TopologyError(f"link {self.a}-{self.b}: self links not allowed")


@dataclass(frozen=True)
class Censor:
    asn: int
    router_index: int
    direction: str
    blocklist: frozenset[str]
    action: str
    signature_id: str | None = None
    blockpage_body: str | None = None
    redirect_to: str | None = None
    ttl_copy: bool = False
    ttl_copy_mode: str = "remaining"

    def __post_init__(self) -> None:
        if self.direction not in CENSOR_DIRECTIONS:
            raise TopologyError(f"censor at AS{self.asn}: bad direction {self.direction!r}")
        if self.action not in CENSOR_ACTIONS:
            raise TopologyError(f"censor at AS{self.asn}: bad action {self.action!r}")
        if self.ttl_copy_mode not in TTL_COPY_MODES:
            raise TopologyError(f"censor at AS{self.asn}: bad ttl_copy_mode {self.ttl_copy_mode!r}")
        if not self.blocklist:
            raise TopologyError(f"censor at AS{self.asn}: blocklist must be non-empty")
        if self.action == "blockpage" and not self.signature_id:
            raise TopologyError(f"censor at AS{self.asn}: blockpage needs a signature_id")

    def matches(self, host: str, request_line: str) -> bool:
        """Case-insensitive substring match over Host and the request line."""
        haystacks = (host.lower(), request_line.lower())
        return any(kw.lower() in h for kw in self.blocklist for h in haystacks)

    def injected_response(self) -> bytes:
        body = (self.blockpage_body or "").encode("utf-8")
        if self.redirect_to:
            head = (
                "HTTP/1.1 302 Found\r\n"
                f"Location: {self.redirect_to}\r\n"
                f"Content-Length: {len(body)}\r\n"
                "Connection: close\r\n\r\n"
            )
        else:
            head = (
                "HTTP/1.1 200 OK\r\n"
                "Content-Type: text/html; charset=utf-8\r\n"
                f"Content-Length: {len(body)}\r\n"
                "Connection: close\r\n\r\n"
            )
        return head.encode("ascii") + body


@dataclass
class CacheProxy:
    """Host-keyed replay proxy. The store is campaign-lifetime mutable state."""

    asn: int
    router_index: int
    store: dict[str, bytes] = field(default_factory=dict)


@dataclass
class Topology:
    nodes: dict[int, AsNode]
    links: tuple[Link, ...]
    censors: tuple[Censor, ...]
    caches: list[CacheProxy]
    vps: dict[str, int]
    servers: dict[str, int]
    seed: int = 0

    def __post_init__(self) -> None:
        self.providers_of: dict[int, list[int]] = {asn: [] for asn in self.nodes}
        self.customers_of: dict[int, list[int]] = {asn: [] for asn in self.nodes}
        self.peers_of: dict[int, list[int]] = {asn: [] for asn in self.nodes}
        seen_pairs: set[frozenset[int]] = set()
        for link in self.links:
            if link.a not in self.nodes or link.b not in self.nodes:
                raise TopologyError(f"link {link.a}-{link.b} references unknown AS")
            pair = frozenset((link.a, link.b))
            if pair in seen_pairs:
                raise TopologyError(f"duplicate link between AS{link.a} and AS{link.b}")
            seen_pairs.add(pair)
            if link.relation == "customer-of":
                self.providers_of[link.a].append(link.b)
                self.customers_of[link.b].append(link.a)
            elif link.relation == "provider-of":
                self.providers_of[link.b].append(link.a)
                self.customers_of[link.a].append(link.b)
            else:
                self.peers_of[link.a].append(link.b)
                self.peers_of[link.b].append(link.a)
        for mapping in (self.providers_of, self.customers_of, self.peers_of):
            for neighbors in mapping.values():
                neighbors.sort()

        self._middleboxes: dict[tuple[int, int], list] = {}
        for cache in self.caches:
            self._check_router(cache.asn, cache.router_index, "cache")
            self._middleboxes.setdefault((cache.asn, cache.router_index), []).append(cache)
        for censor in self.censors:
            self._check_router(censor.asn, censor.router_index, "censor")
            self._middleboxes.setdefault((censor.asn, censor.router_index), []).append(censor)

        for vp_id, asn in self.vps.items():
            if asn not in self.nodes:
                raise TopologyError(f"vp {vp_id!r} hosted in unknown AS{asn}")
        for server_id, asn in self.servers.items():
            if asn not in self.nodes:
                raise TopologyError(f"server {server_id!r} hosted in unknown AS{asn}")

        self._route_cache: dict[int, dict[int, tuple[int, ...]]] = {}

    def _check_router(self, asn: int, router_index: int, what: str) -> None:
        node = self.nodes.get(asn)
        if node is None:
            raise TopologyError(f"{what} placed in unknown AS{asn}")
        if not 0 <= router_index < node.router_count:
            raise TopologyError(
                f"{what} at AS{asn} router {router_index}: AS has {node.router_count} routers"
            )

    def middleboxes_at(self, asn: int, router_index: int) -> list:
        """Middleboxes in inspection order: caches act before censors."""
        boxes = self._middleboxes.get((asn, router_index), [])
        return sorted(boxes, key=lambda b: isinstance(b, Censor))

    def clone(self) -> "Topology":
        """Independent copy with its own cache-proxy state."""
        return Topology(
            nodes=dict(self.nodes),
            links=self.links,
            censors=self.censors,
            caches=[CacheProxy(c.asn, c.router_index, dict(c.store)) for c in self.caches],
            vps=dict(self.vps),
            servers=dict(self.servers),
            seed=self.seed,
        )

    def validate_connectivity(self) -> None:
        """Every hosted VP must reach every hosted server valley-free."""
        from .routing import route  # local import to avoid a cycle

        for vp_id, src in self.vps.items():
            for server_id, dst in self.servers.items():
                try:
                    route(self, src, dst)
                except NoRouteError:
                    raise TopologyError(
                        f"no valley-free path from vp {vp_id!r} (AS{src}) "
                        f"to server {server_id!r} (AS{dst})"
                    ) from None


def _node_from_obj(obj: dict) -> AsNode:
    icmp = obj.get("icmp_responsive")
    return AsNode(
        asn=int(obj["asn"]),
        role=obj.get("role", "transit"),
        router_count=int(obj.get("router_count", 1)),
        icmp_responsive=tuple(bool(v) for v in icmp) if icmp is not None else None,
    )


def _censor_from_obj(obj: dict) -> Censor:
    return Censor(
        asn=int(obj["asn"]),
        router_index=int(obj.get("router_index", 0)),
        direction=obj.get("direction", "both"),
        blocklist=frozenset(obj["blocklist"]),
        action=obj["action"],
        signature_id=obj.get("signature_id"),
        blockpage_body=obj.get("body"),
        redirect_to=obj.get("redirect_to"),
        ttl_copy=bool(obj.get("ttl_copy", False)),
        ttl_copy_mode=obj.get("ttl_copy_mode", "remaining"),
    )


def _cache_from_obj(obj: dict) -> CacheProxy:
    store = {
        host: _wrap_cached_body(body) for host, body in obj.get("store", {}).items()
    }
    return CacheProxy(asn=int(obj["asn"]), router_index=int(obj.get("router_index", 0)), store=store)


def _wrap_cached_body(body: str) -> bytes:
    """Pre-seeded store entries are HTML bodies; replay them as full messages."""
    raw = body.encode("utf-8")
    head = (
        "HTTP/1.1 200 OK\r\n"
        "Content-Type: text/html; charset=utf-8\r\n"
        f"Content-Length: {len(raw)}\r\n"
        "Connection: close\r\n\r\n"
    )
    return head.encode("ascii") + raw


def _unwrap_cached_body(message: bytes) -> str:
    """Inverse of _wrap_cached_body for serialization; tolerates bare bodies."""
    if b"\r\n\r\n" in message:
        message = message.split(b"\r\n\r\n", 1)[1]
    return message.decode("utf-8", errors="replace")


def _hosting_from_obj(raw) -> dict[str, int]:
    """Hosted endpoints: an array of {id, asn} entries, or an id-to-asn map."""
    if isinstance(raw, dict):
        return {str(k): int(v) for k, v in raw.items()}
    return {str(e["id"]): int(e["asn"]) for e in raw}


def topology_from_obj(obj: dict) -> Topology:
    topo = Topology(
        nodes={int(n["asn"]): _node_from_obj(n) for n in obj.get("nodes", [])},
        links=tuple(
            Link(a=int(l["a"]), b=int(l["b"]), relation=l["relation"])
            for l in obj.get("links", [])
        ),
        censors=tuple(_censor_from_obj(c) for c in obj.get("censors", [])),
        caches=[_cache_from_obj(c) for c in obj.get("caches", [])],
        vps=_hosting_from_obj(obj.get("vps", {})),
        servers=_hosting_from_obj(obj.get("servers", {})),
        seed=int(obj.get("seed", 0)),
    )
    topo.validate_connectivity()
    return topo


def topology_to_obj(topo: Topology) -> dict:
    return {
        "seed": topo.seed,
        "nodes": [
            {
                "asn": n.asn,
                "role": n.role,
                "router_count": n.router_count,
                **(
                    {"icmp_responsive": list(n.icmp_responsive)}
                    if n.icmp_responsive is not None
                    else {}
                ),
            }
            for n in topo.nodes.values()
        ],
        "links": [{"a": l.a, "b": l.b, "relation": l.relation} for l in topo.links],
        "censors": [
            {
                "asn": c.asn,
                "router_index": c.router_index,
                "direction": c.direction,
                "blocklist": sorted(c.blocklist),
                "action": c.action,
                **({"signature_id": c.signature_id} if c.signature_id else {}),
                **({"body": c.blockpage_body} if c.blockpage_body else {}),
                **({"redirect_to": c.redirect_to} if c.redirect_to else {}),
                **({"ttl_copy": True, "ttl_copy_mode": c.ttl_copy_mode} if c.ttl_copy else {}),
            }
            for c in topo.censors
        ],
        "caches": [
            {
                "asn": c.asn,
                "router_index": c.router_index,
                **(
                    {"store": {h: _unwrap_cached_body(b) for h, b in sorted(c.store.items())}}
                    if c.store
                    else {}
                ),
            }
            for c in topo.caches
        ],
        "vps": [{"id": vp_id, "asn": asn} for vp_id, asn in sorted(topo.vps.items())],
        "servers": [{"id": sid, "asn": asn} for sid, asn in sorted(topo.servers.items())],
    }


def load_topology(path) -> Topology:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TopologyError(f"{path}: not valid JSON: {exc}") from exc
    return topology_from_obj(obj)


def save_topology(topo: Topology, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(topology_to_obj(topo), fh, indent=2, sort_keys=True)
        fh.write("\n")
