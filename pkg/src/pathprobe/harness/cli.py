"""The pathprobe command line.

Subcommands: serve-sentinel, probe, vet, trace, sim, analyze, report.
Exit codes: 0 success, 2 invalid config, 3 partial run, 4 I/O error.
Set PATHPROBE_LOG (debug/info/warning/error) to control log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .. import model
from ..prober import SchedulePolicy, ScheduleLog, run_matrix
from ..sentinel import render_payload, serve
from ..simnet.engine import SimTransport, whatif_min_censorship
from ..simnet.topology import TopologyError, load_topology
from ..tracer import (
    IpAsnTable,
    UnsupportedTransport,
    annotate_asn,
    app_traceroute,
    render_trace_table,
)
from ..transport import RealTransport
from ..vetting import (
    InsufficientEvidence,
    cache_test,
    noncensored_domain_picker,
    offline_cache_check,
    verify_inbound_clean,
)
from .campaign import PartialRun, run_campaign
from .config import CampaignConfig, ConfigError, load_campaign_config
from .report import render_country_table, write_reports
from .results import ResultsError, load_dataset, write_results

log = logging.getLogger("pathprobe")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3
EXIT_IO = 4


def _setup_logging() -> None:
    level = os.environ.get("PATHPROBE_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _load_config(path) -> CampaignConfig:
    config = load_campaign_config(path)
    violations = model.validate_campaign(config)
    if violations:
        raise ConfigError(violations)
    return config


def _transport_for(args, config: CampaignConfig):
    topology_path = getattr(args, "topology", None)
    if topology_path:
        topology = load_topology(topology_path)
        return SimTransport(
            topology, config.all_server_endpoints(), description=config.experiment_description
        )
    return RealTransport()


def _cmd_serve_sentinel(args) -> int:
    config = _load_config(args.config)
    server = config.server_by_id(args.server_id)
    payload = render_payload(server, config.experiment_description)
    log_path = args.log or f"sentinel-{server.id}.jsonl"
    sink = open(log_path, "a", encoding="utf-8")
    handle = serve((args.bind, args.port), payload, sink)
    print(f"sentinel {server.id} listening on {args.bind}:{handle.port}, logging to {log_path}")
    try:
        handle.wait()
    except KeyboardInterrupt:
        handle.stop()
    finally:
        sink.close()
    return EXIT_OK


def _cmd_probe(args) -> int:
    config = _load_config(args.config)
    transport = _transport_for(args, config)
    policy = SchedulePolicy(
        epoch=args.epoch,
        per_country_cap=config.caps.per_country_per_epoch,
        parallel=args.parallel if args.parallel is not None else config.probe.parallel,
        timeout_ms=config.probe.timeout_ms,
        max_attempts=config.probe.max_attempts,
    )
    if isinstance(transport, SimTransport):
        policy = dataclasses.replace(policy, parallel=1)
    schedule = ScheduleLog()
    records = list(
        run_matrix(
            config.vps, config.servers, config.domains, policy, config.signature_db,
            transport, sched_log=schedule,
        )
    )
    count = write_results(args.out, records, campaign_id=config.campaign_id)
    print(f"wrote {count} records to {args.out}")
    if schedule.capped or schedule.duplicates:
        print(f"discarded: {len(schedule.capped)} over country cap, {len(schedule.duplicates)} duplicates")
    return EXIT_OK


def _cmd_vet(args) -> int:
    config = _load_config(args.config)
    transport = _transport_for(args, config)
    out = {}
    if args.mode == "online":
        if config.reference_pair is None:
            raise ConfigError(["reference_pair is required for online vetting"])
        results = [
            cache_test(vp, config.reference_pair, transport, config.probe.timeout_ms)
            for vp in config.vps
        ]
        out = {
            "mode": "online",
            "excluded": {r.vp_id: r.reason for r in results if not r.keep},
            "kept": [r.vp_id for r in results if r.keep],
        }
    elif args.mode == "offline":
        if not args.results:
            print("--in is required for offline vetting", file=sys.stderr)
            return EXIT_CONFIG
        dataset, _ = load_dataset(args.results)
        excluded = offline_cache_check(dataset, config.legit_titles)
        out = {"mode": "offline", "excluded": sorted(excluded)}
    else:
        picker = noncensored_domain_picker(config.domains)
        if len(config.vps) < config.min_clean_vps:
            log.warning(
                "only %d clean vantage points, config asks for %d",
                len(config.vps), config.min_clean_vps,
            )
        report = verify_inbound_clean(
            config.vps, config.servers, picker, transport, config.signature_db,
            timeout_ms=config.probe.timeout_ms, max_attempts=config.probe.max_attempts,
        )
        out = {
            "mode": "inbound",
            "passed": report.passed,
            "failures": [
                {"vp": vp, "server": server, "domain": domain}
                for vp, server, domain in report.failures
            ],
        }
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _cmd_trace(args) -> int:
    config = _load_config(args.config)
    transport = _transport_for(args, config)
    vp = config.vp_by_id(args.vp)
    domain = next(
        (d for d in config.domain_catalog() if d.name == args.domain.lower()), None
    )
    if domain is None:
        domain = model.TestDomain(name=args.domain.lower(), country_scope=vp.country)
    servers = [config.server_by_id(args.server)] if args.server else config.servers
    results = []
    for server in servers:
        spec = model.ProbeSpec(vp=vp, server=server, domain=domain)
        results.append(
            app_traceroute(
                spec,
                args.max_ttl or config.traceroute.max_ttl,
                transport,
                config.signature_db,
                per_hop_timeout_ms=config.traceroute.per_hop_timeout_ms,
                per_hop_retries=config.traceroute.per_hop_retries,
            )
        )
    if args.asn_table:
        table = IpAsnTable.from_text(Path(args.asn_table).read_text(encoding="utf-8"))
        results = [annotate_asn(r, table) for r in results]
    if args.out:
        Path(args.out).write_text(render_trace_table(results, fmt="csv"), encoding="utf-8")
        print(f"wrote trace table to {args.out}")
    print(render_trace_table(results, fmt="text"))
    for result in results:
        if result.censor_hop is not None:
            print(f"{result.spec.server.id}: censor located at hop {result.censor_hop}")
    return EXIT_OK


def _cmd_sim(args) -> int:
    config = _load_config(args.campaign)
    topology = load_topology(args.topology)
    if args.deterministic and "seed" not in json.loads(Path(args.campaign).read_text()):
        raise ConfigError(["--deterministic requires an explicit seed in the campaign config"])
    transport = SimTransport(
        topology, config.all_server_endpoints(), description=config.experiment_description
    )
    result = run_campaign(config, transport, args.out, epoch=args.epoch)
    print(
        f"wrote {result.manifest.records} records to {result.results_path} "
        f"(excluded {result.manifest.excluded} vantage points)"
    )
    if args.whatif_vp:
        vp = config.vp_by_id(args.whatif_vp)
        ranking = whatif_min_censorship(
            topology, vp, config.domains.get(vp.country, []), config.servers
        )
        print(f"what-if ranking for {vp.id} (least censored first):")
        for entry in ranking:
            print(f"  {entry.server.id}: {entry.censored_fraction:.2f} censored")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    dataset, results = load_dataset(args.results)
    for warning in results.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    paths = write_reports(
        dataset, args.out_dir, min_as_vps=args.min_as_vps, granularity=args.granularity
    )
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    dataset, results = load_dataset(args.results)
    for warning in results.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    write_reports(
        dataset, args.out_dir, min_as_vps=args.min_as_vps, granularity=args.granularity
    )
    print(render_country_table(dataset, top=args.top))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathprobe",
        description="Censorship path-diversity measurement framework",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve-sentinel", help="run a control server")
    p.add_argument("--config", required=True)
    p.add_argument("--server-id", required=True)
    p.add_argument("--bind", default="0.0.0.0")
    p.add_argument("--port", type=int, default=80)
    p.add_argument("--log", default=None, help="request log path (JSONL)")
    p.set_defaults(func=_cmd_serve_sentinel)

    p = sub.add_parser("probe", help="run the probe matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--parallel", type=int, default=None)
    p.add_argument("--topology", default=None, help="probe over a simulated topology")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("vet", help="vantage point and server hygiene checks")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=["online", "offline", "inbound"], required=True)
    p.add_argument("--in", dest="results", default=None, help="results file (offline mode)")
    p.add_argument("--out", default=None, help="write the report JSON here too")
    p.add_argument("--topology", default=None)
    p.set_defaults(func=_cmd_vet)

    p = sub.add_parser("trace", help="application traceroute")
    p.add_argument("--config", required=True)
    p.add_argument("--vp", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--server", default=None, help="one server id (default: all)")
    p.add_argument("--max-ttl", type=int, default=None)
    p.add_argument("--asn-table", default=None, help="CIDR-to-ASN text table")
    p.add_argument("--out", default=None, help="CSV output path")
    p.add_argument("--topology", default=None)
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("sim", help="full campaign over a simulated topology")
    p.add_argument("--topology", required=True)
    p.add_argument("--campaign", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--whatif-vp", default=None, help="print a what-if server ranking for this vp")
    p.set_defaults(func=_cmd_sim)

    p = sub.add_parser("analyze", help="write CSV reports from results")
    p.add_argument("--in", dest="results", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-as-vps", type=int, default=80)
    p.add_argument("--granularity", choices=["vp", "request"], default="vp")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("report", help="analyze and print the country table")
    p.add_argument("--in", dest="results", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-as-vps", type=int, default=80)
    p.add_argument("--granularity", choices=["vp", "request"], default="vp")
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return EXIT_CONFIG
    except (TopologyError, model.ModelError, InsufficientEvidence, UnsupportedTransport) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PartialRun as exc:
        print(f"partial run: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except ResultsError as exc:
        print(f"results error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
