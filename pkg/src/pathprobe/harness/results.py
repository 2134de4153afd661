"""Results persistence: JSONL records, the run manifest, dataset assembly.

One JSON object per line, append-friendly. A truncated final line (the
tell-tale of a crashed writer) is skipped with a warning; corruption
anywhere else is an error. Unknown fields on a line survive a read-rewrite
cycle.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..model import ControlServer, Dataset, ProbeRecord, TestDomain, VantagePoint
from .serde import SCHEMA_VERSION, record_from_obj, record_to_obj

log = logging.getLogger(__name__)

EXCLUDED_FLAG_PREFIX = "excluded:"


class ResultsError(ValueError):
    pass


class SchemaVersionMismatch(ResultsError):
    def __init__(self, found, expected=SCHEMA_VERSION):
        super().__init__(f"results schema version {found!r}, this build reads {expected!r}")
        self.found = found
        self.expected = expected


@dataclass
class RecordEnvelope:
    record: ProbeRecord
    campaign_id: str = ""
    extra: dict = field(default_factory=dict)


@dataclass
class ResultsFile:
    envelopes: list[RecordEnvelope]
    warnings: list[str] = field(default_factory=list)

    @property
    def records(self) -> list[ProbeRecord]:
        return [e.record for e in self.envelopes]

    @property
    def campaign_id(self) -> str:
        return self.envelopes[0].campaign_id if self.envelopes else ""


def record_line(record: ProbeRecord, campaign_id: str = "", extra: dict | None = None) -> str:
    obj = record_to_obj(record, campaign_id)
    if extra:
        for key, value in extra.items():
            obj.setdefault(key, value)
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_results(path, envelopes, campaign_id: str = "") -> int:
    """Write records (or envelopes) as JSONL; returns the line count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for item in envelopes:
            if isinstance(item, RecordEnvelope):
                fh.write(record_line(item.record, item.campaign_id or campaign_id, item.extra))
            else:
                fh.write(record_line(item, campaign_id))
            fh.write("\n")
            count += 1
    return count


def read_results(path) -> ResultsFile:
    envelopes: list[RecordEnvelope] = []
    warnings: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    while lines and lines[-1] == "":
        lines.pop()
    for i, line in enumerate(lines):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            if i == len(lines) - 1:
                message = f"{path}: skipped truncated final line {i + 1}: {exc.msg}"
                warnings.append(message)
                log.warning(message)
                continue
            raise ResultsError(f"{path}: corrupt record on line {i + 1}: {exc.msg}") from exc
        version = obj.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionMismatch(version)
        record, campaign_id, extra = record_from_obj(obj)
        envelopes.append(RecordEnvelope(record=record, campaign_id=campaign_id, extra=extra))
    return ResultsFile(envelopes=envelopes, warnings=warnings)


def exclusions_from_records(records) -> dict[str, str]:
    """Reconstruct offline exclusions from per-record flags."""
    excluded: dict[str, str] = {}
    for record in records:
        for flag in record.flags:
            if flag.startswith(EXCLUDED_FLAG_PREFIX):
                excluded[record.spec.vp.id] = flag[len(EXCLUDED_FLAG_PREFIX):]
    return excluded


def dataset_from_records(
    records,
    servers=None,
    vps=None,
    domains=None,
    excluded_vps: dict[str, str] | None = None,
) -> Dataset:
    """Assemble a dataset, deriving any catalog not supplied from the records."""
    records = tuple(records)

    def derive(getter, given):
        if given is not None:
            return tuple(given)
        seen: dict = {}
        for record in records:
            item = getter(record)
            seen.setdefault(_key_of(item), item)
        return tuple(seen.values())

    servers = derive(lambda r: r.spec.server, servers)
    vps = derive(lambda r: r.spec.vp, vps)
    domains = derive(lambda r: r.spec.domain, domains)
    if excluded_vps is None:
        excluded_vps = exclusions_from_records(records)
    else:
        excluded_vps = dict(excluded_vps)
    vp_ids = {vp.id for vp in vps}
    excluded_vps = {k: v for k, v in excluded_vps.items() if k in vp_ids}
    return Dataset(
        records=records,
        servers=servers,
        vps=vps,
        domains=domains,
        excluded_vps=excluded_vps,
    )


def _key_of(item):
    if isinstance(item, (VantagePoint, ControlServer)):
        return item.id
    if isinstance(item, TestDomain):
        return (item.name, item.country_scope)
    raise TypeError(f"no catalog key for {item!r}")


def load_dataset(path) -> tuple[Dataset, ResultsFile]:
    results = read_results(path)
    if not results.envelopes:
        raise ResultsError(f"{path}: no records")
    return dataset_from_records(results.records), results


# --- Run manifest ------------------------------------------------------------


@dataclass
class RunManifest:
    campaign_id: str
    seed: int
    epoch: int
    config_sha256: str | None
    records: int
    excluded: int
    exclusions: dict[str, str]
    complete: bool
    schema_version: int = SCHEMA_VERSION

    def to_obj(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "campaign_id": self.campaign_id,
            "seed": self.seed,
            "epoch": self.epoch,
            "config_sha256": self.config_sha256,
            "counts": {"records": self.records, "excluded": self.excluded},
            "exclusions": dict(sorted(self.exclusions.items())),
            "complete": self.complete,
        }


def write_manifest(path, manifest: RunManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def manifest_path_for(results_path) -> Path:
    p = Path(results_path)
    return p.with_name(p.stem + ".manifest.json")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
