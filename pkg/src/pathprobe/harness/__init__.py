"""Campaign orchestration, configuration, persistence, and the CLI."""

from .campaign import CampaignResult, PartialRun, run_campaign
from .config import CampaignConfig, Caps, ConfigError, ProbeSettings, TracerouteSettings, load_campaign_config
from .report import render_country_table, write_reports
from .results import (
    RecordEnvelope,
    ResultsError,
    ResultsFile,
    RunManifest,
    SchemaVersionMismatch,
    dataset_from_records,
    load_dataset,
    read_manifest,
    read_results,
    write_manifest,
    write_results,
)

__all__ = [
    "CampaignConfig", "CampaignResult", "Caps", "ConfigError", "PartialRun",
    "ProbeSettings", "RecordEnvelope", "ResultsError", "ResultsFile",
    "RunManifest", "SchemaVersionMismatch", "TracerouteSettings",
    "dataset_from_records", "load_campaign_config", "load_dataset",
    "read_manifest", "read_results", "render_country_table", "run_campaign",
    "write_manifest", "write_reports", "write_results",
]
