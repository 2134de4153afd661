"""JSON schemas for the domain types: every value round-trips losslessly.

The record wire form is one flat JSON object per line. Keys beyond the
documented schema (vp access, sentinel tokens, probe settings, domain scope)
keep reads lossless; consumers that only know the documented keys can ignore
them, and unknown keys found on read are preserved through a rewrite.
"""

from __future__ import annotations

from typing import Any

from ..model import (
    Anomalous,
    Attempt,
    Blockpage,
    Censored,
    CensorMechanism,
    CensorSign,
    ControlServer,
    DirectAccess,
    Drop,
    Exhausted,
    ModelError,
    OtherPayload,
    ProbeOutcome,
    ProbeRecord,
    ProbeSpec,
    Reset,
    Responder,
    Sentinel,
    SentinelReached,
    Socks5Access,
    TestDomain,
    Timeout,
    TraceHop,
    TraceResult,
    TtlExceeded,
    Uncensored,
    VantagePoint,
    Verdict,
)

SCHEMA_VERSION = 1

RECORD_KEYS = frozenset(
    {
        "schema_version", "campaign_id", "epoch", "ts_start", "ts_end",
        "vp", "server", "domain", "domain_scope", "timeout_ms", "max_attempts",
        "attempts", "final_outcome", "verdict", "flags",
    }
)


def access_to_obj(access) -> dict | None:
    if isinstance(access, DirectAccess):
        return None
    return {
        "type": "socks5",
        "host": access.host,
        "port": access.port,
        **({"username": access.username} if access.username else {}),
        **({"password": access.password} if access.password else {}),
    }


def access_from_obj(obj) -> DirectAccess | Socks5Access:
    if obj is None or obj.get("type", "direct") == "direct":
        return DirectAccess()
    return Socks5Access(
        host=obj["host"],
        port=int(obj["port"]),
        username=obj.get("username"),
        password=obj.get("password"),
    )


def vp_to_obj(vp: VantagePoint) -> dict:
    obj = {"id": vp.id, "ip": vp.address, "country": vp.country, "asn": vp.asn}
    access = access_to_obj(vp.access)
    if access is not None:
        obj["access"] = access
    return obj


def vp_from_obj(obj: dict) -> VantagePoint:
    return VantagePoint(
        id=obj["id"],
        address=obj.get("ip", obj.get("address")),
        country=obj["country"],
        asn=int(obj["asn"]),
        access=access_from_obj(obj.get("access")),
    )


def server_to_obj(server: ControlServer) -> dict:
    return {
        "id": server.id,
        "platform": server.platform,
        "region": server.region,
        "ip": server.address,
        "sentinel_token": server.sentinel_token,
    }


def server_from_obj(obj: dict) -> ControlServer:
    return ControlServer(
        id=obj["id"],
        address=obj.get("ip", obj.get("address")),
        platform=obj["platform"],
        region=obj["region"],
        sentinel_token=obj.get("sentinel_token", "0" * 32),
    )


def outcome_to_obj(outcome: ProbeOutcome) -> dict:
    if isinstance(outcome, Sentinel):
        return {"kind": "sentinel"}
    if isinstance(outcome, Blockpage):
        return {"kind": "blockpage", "signature_id": outcome.signature_id}
    if isinstance(outcome, Reset):
        return {"kind": "reset"}
    if isinstance(outcome, Timeout):
        return {"kind": "timeout"}
    if isinstance(outcome, OtherPayload):
        obj: dict[str, Any] = {"kind": "other_payload", "body_digest": outcome.body_digest}
        if outcome.title is not None:
            obj["title"] = outcome.title
        return obj
    raise ModelError(f"unserializable outcome {outcome!r}")


def outcome_from_obj(obj: dict) -> ProbeOutcome:
    kind = obj["kind"]
    if kind == "sentinel":
        return Sentinel()
    if kind == "blockpage":
        return Blockpage(obj["signature_id"])
    if kind == "reset":
        return Reset()
    if kind == "timeout":
        return Timeout()
    if kind == "other_payload":
        return OtherPayload(body_digest=obj["body_digest"], title=obj.get("title"))
    raise ModelError(f"unknown outcome kind {kind!r}")


def mechanism_to_obj(mechanism: CensorMechanism) -> dict:
    if isinstance(mechanism, Drop):
        return {"kind": "drop"}
    if isinstance(mechanism, Reset):
        return {"kind": "reset"}
    if isinstance(mechanism, Blockpage):
        return {"kind": "blockpage", "signature_id": mechanism.signature_id}
    raise ModelError(f"unserializable mechanism {mechanism!r}")


def mechanism_from_obj(obj: dict) -> CensorMechanism:
    kind = obj["kind"]
    if kind == "drop":
        return Drop()
    if kind == "reset":
        return Reset()
    if kind == "blockpage":
        return Blockpage(obj["signature_id"])
    raise ModelError(f"unknown mechanism kind {kind!r}")


def verdict_to_obj(verdict: Verdict) -> dict:
    if isinstance(verdict, Uncensored):
        return {"kind": "uncensored"}
    if isinstance(verdict, Censored):
        return {"kind": "censored", "mechanism": mechanism_to_obj(verdict.mechanism)}
    if isinstance(verdict, Anomalous):
        return {"kind": "anomalous"}
    raise ModelError(f"unserializable verdict {verdict!r}")


def verdict_from_obj(obj: dict) -> Verdict:
    kind = obj["kind"]
    if kind == "uncensored":
        return Uncensored()
    if kind == "censored":
        return Censored(mechanism_from_obj(obj["mechanism"]))
    if kind == "anomalous":
        return Anomalous()
    raise ModelError(f"unknown verdict kind {kind!r}")


def record_to_obj(record: ProbeRecord, campaign_id: str = "") -> dict:
    spec = record.spec
    return {
        "schema_version": SCHEMA_VERSION,
        "campaign_id": campaign_id,
        "epoch": record.epoch,
        "ts_start": record.started_at,
        "ts_end": record.ended_at,
        "vp": vp_to_obj(spec.vp),
        "server": server_to_obj(spec.server),
        "domain": spec.domain.name,
        "domain_scope": spec.domain.country_scope,
        "timeout_ms": spec.timeout_ms,
        "max_attempts": spec.max_attempts,
        "attempts": [
            {"outcome": outcome_to_obj(a.outcome), "rtt_ms": a.rtt_ms} for a in record.attempts
        ],
        "final_outcome": outcome_to_obj(record.final_outcome),
        "verdict": verdict_to_obj(record.verdict),
        "flags": list(record.flags),
    }


def record_from_obj(obj: dict) -> tuple[ProbeRecord, str, dict]:
    """Decode one record line; returns (record, campaign_id, unknown fields)."""
    vp = vp_from_obj(obj["vp"])
    server = server_from_obj(obj["server"])
    domain = TestDomain(
        name=obj["domain"], country_scope=obj.get("domain_scope", vp.country)
    )
    spec = ProbeSpec(
        vp=vp,
        server=server,
        domain=domain,
        timeout_ms=int(obj.get("timeout_ms", 5000)),
        max_attempts=int(obj.get("max_attempts", 5)),
    )
    attempts = tuple(
        Attempt(outcome=outcome_from_obj(a["outcome"]), rtt_ms=a.get("rtt_ms"))
        for a in obj["attempts"]
    )
    record = ProbeRecord(
        spec=spec,
        attempts=attempts,
        final_outcome=outcome_from_obj(obj["final_outcome"]),
        verdict=verdict_from_obj(obj["verdict"]),
        started_at=int(obj["ts_start"]),
        ended_at=int(obj["ts_end"]),
        epoch=int(obj["epoch"]),
        flags=tuple(obj.get("flags", ())),
    )
    extra = {k: v for k, v in obj.items() if k not in RECORD_KEYS}
    return record, obj.get("campaign_id", ""), extra


# --- Trace results -----------------------------------------------------------


def _signal_to_obj(signal) -> dict | None:
    if signal is None:
        return None
    if isinstance(signal, TtlExceeded):
        return {"kind": "ttl_exceeded"}
    if isinstance(signal, CensorSign):
        return {"kind": "censor_sign", "mechanism": mechanism_to_obj(signal.mechanism)}
    if isinstance(signal, SentinelReached):
        return {"kind": "sentinel_reached"}
    raise ModelError(f"unserializable hop signal {signal!r}")


def _signal_from_obj(obj):
    if obj is None:
        return None
    kind = obj["kind"]
    if kind == "ttl_exceeded":
        return TtlExceeded()
    if kind == "censor_sign":
        return CensorSign(mechanism_from_obj(obj["mechanism"]))
    if kind == "sentinel_reached":
        return SentinelReached()
    raise ModelError(f"unknown hop signal kind {kind!r}")


def hop_to_obj(hop: TraceHop) -> dict:
    obj: dict[str, Any] = {"ttl": hop.ttl}
    if hop.responder is not None:
        obj["responder"] = {
            "ip": hop.responder.ip,
            "asn": hop.responder.asn,
            "label": hop.responder.label,
        }
    signal = _signal_to_obj(hop.signal)
    if signal is not None:
        obj["signal"] = signal
    return obj


def hop_from_obj(obj: dict) -> TraceHop:
    responder = None
    if "responder" in obj:
        r = obj["responder"]
        responder = Responder(ip=r["ip"], asn=r.get("asn"), label=r.get("label"))
    return TraceHop(ttl=int(obj["ttl"]), responder=responder, signal=_signal_from_obj(obj.get("signal")))


def trace_to_obj(result: TraceResult, campaign_id: str = "") -> dict:
    if isinstance(result.terminal, Sentinel):
        terminal: dict[str, Any] = {"kind": "sentinel"}
    elif isinstance(result.terminal, Censored):
        terminal = {"kind": "censored", "mechanism": mechanism_to_obj(result.terminal.mechanism)}
    elif isinstance(result.terminal, Exhausted):
        terminal = {"kind": "exhausted"}
    else:
        raise ModelError(f"unserializable terminal {result.terminal!r}")
    return {
        "schema_version": SCHEMA_VERSION,
        "campaign_id": campaign_id,
        "vp": vp_to_obj(result.spec.vp),
        "server": server_to_obj(result.spec.server),
        "domain": result.spec.domain.name,
        "domain_scope": result.spec.domain.country_scope,
        "timeout_ms": result.spec.timeout_ms,
        "max_attempts": result.spec.max_attempts,
        "hops": [hop_to_obj(h) for h in result.hops],
        "terminal": terminal,
        "censor_hop": result.censor_hop,
    }


def trace_from_obj(obj: dict) -> TraceResult:
    vp = vp_from_obj(obj["vp"])
    server = server_from_obj(obj["server"])
    spec = ProbeSpec(
        vp=vp,
        server=server,
        domain=TestDomain(name=obj["domain"], country_scope=obj.get("domain_scope", vp.country)),
        timeout_ms=int(obj.get("timeout_ms", 5000)),
        max_attempts=int(obj.get("max_attempts", 5)),
    )
    t = obj["terminal"]
    if t["kind"] == "sentinel":
        terminal = Sentinel()
    elif t["kind"] == "censored":
        terminal = Censored(mechanism_from_obj(t["mechanism"]))
    elif t["kind"] == "exhausted":
        terminal = Exhausted()
    else:
        raise ModelError(f"unknown terminal kind {t['kind']!r}")
    return TraceResult(
        spec=spec,
        hops=tuple(hop_from_obj(h) for h in obj["hops"]),
        terminal=terminal,
        censor_hop=obj.get("censor_hop"),
    )
