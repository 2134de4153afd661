"""Campaign orchestration: vetting, probe matrix, persistence, manifest.

The pipeline runs online cache vetting over the scheduled vantage points,
probes the matrix from the survivors, annotates records of vantage points
that the offline title check catches, and writes the results plus a run
manifest. Over a simulated transport with a fixed seed the whole run is
byte-deterministic; to keep it that way, simulated campaigns probe
sequentially (cache middleboxes make interleaving order observable).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..model import Dataset, ProbeRecord
from ..prober import SchedulePolicy, ScheduleLog, run_matrix, select_vps
from ..simnet.engine import SimTransport
from ..vetting import CACHE_OFFLINE, CACHE_ONLINE, cache_test, offline_cache_check
from .config import CampaignConfig, ConfigError
from .results import (
    EXCLUDED_FLAG_PREFIX,
    RunManifest,
    dataset_from_records,
    write_manifest,
    write_results,
)
from .. import model

log = logging.getLogger(__name__)


class PartialRun(RuntimeError):
    """The campaign aborted midway; partial results were preserved."""

    def __init__(self, message: str, manifest: RunManifest):
        super().__init__(message)
        self.manifest = manifest


@dataclass
class CampaignResult:
    dataset: Dataset
    manifest: RunManifest
    results_path: Path
    manifest_path: Path
    schedule: ScheduleLog = field(default_factory=ScheduleLog)


def run_campaign(
    config: CampaignConfig,
    transport,
    out_path,
    epoch: int = 0,
    manifest_path=None,
) -> CampaignResult:
    """Run the full pipeline and persist results + manifest.

    Raises ConfigError before touching the network if the campaign is
    invalid, and PartialRun if probing aborts midway (whatever completed is
    written, with the manifest marked incomplete).
    """
    violations = model.validate_campaign(config)
    if violations:
        raise ConfigError(violations)
    if config.reference_pair is None:
        raise ConfigError(["reference_pair is required to run a campaign"])

    out_path = Path(out_path)
    manifest_path = Path(manifest_path) if manifest_path else out_path.with_name(
        out_path.stem + ".manifest.json"
    )

    policy = SchedulePolicy(
        epoch=epoch,
        per_country_cap=config.caps.per_country_per_epoch,
        parallel=config.probe.parallel,
        timeout_ms=config.probe.timeout_ms,
        max_attempts=config.probe.max_attempts,
    )
    if isinstance(transport, SimTransport) and policy.parallel != 1:
        log.info("simulated transport: probing sequentially for determinism")
        policy = dataclasses.replace(policy, parallel=1)

    schedule = ScheduleLog()
    scheduled = select_vps(config.vps, policy, schedule)

    exclusions: dict[str, str] = {}
    kept = []
    for vp in scheduled:
        outcome = cache_test(vp, config.reference_pair, transport, config.probe.timeout_ms)
        if outcome.keep:
            kept.append(vp)
        else:
            exclusions[vp.id] = CACHE_ONLINE
            log.info("vp %s excluded online: %s", vp.id, outcome.reason)

    records: list[ProbeRecord] = []
    failure: Exception | None = None
    try:
        for record in run_matrix(
            kept,
            config.servers,
            config.domains,
            policy,
            config.signature_db,
            transport,
            sched_log=schedule,
        ):
            records.append(record)
    except Exception as exc:  # noqa: BLE001 - preserve partial results on any failure
        failure = exc

    provisional = dataset_from_records(
        records,
        servers=config.servers,
        vps=config.vps,
        domains=config.domain_catalog(),
        excluded_vps=exclusions,
    )
    offline = offline_cache_check(provisional, config.legit_titles)
    for vp_id in offline:
        exclusions.setdefault(vp_id, CACHE_OFFLINE)
    if offline:
        flag = EXCLUDED_FLAG_PREFIX + CACHE_OFFLINE
        records = [
            dataclasses.replace(r, flags=tuple(sorted(set(r.flags) | {flag})))
            if r.spec.vp.id in offline
            else r
            for r in records
        ]

    count = write_results(out_path, records, campaign_id=config.campaign_id)
    manifest = RunManifest(
        campaign_id=config.campaign_id,
        seed=config.seed,
        epoch=epoch,
        config_sha256=config.config_sha256,
        records=count,
        excluded=len(exclusions),
        exclusions=exclusions,
        complete=failure is None,
    )
    write_manifest(manifest_path, manifest)
    if failure is not None:
        raise PartialRun(f"campaign aborted after {count} records: {failure}", manifest) from failure

    dataset = dataset_from_records(
        records,
        servers=config.servers,
        vps=config.vps,
        domains=config.domain_catalog(),
        excluded_vps=exclusions,
    )
    return CampaignResult(
        dataset=dataset,
        manifest=manifest,
        results_path=out_path,
        manifest_path=manifest_path,
        schedule=schedule,
    )
