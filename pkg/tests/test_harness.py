"""Config loading, persistence behaviors, the campaign pipeline, and the CLI."""

from __future__ import annotations

import hashlib
import json

import pytest

from pathprobe.harness.campaign import run_campaign
from pathprobe.harness.cli import main
from pathprobe.harness.config import CampaignConfig, ConfigError, load_campaign_config
from pathprobe.harness.results import (
    ResultsError,
    SchemaVersionMismatch,
    dataset_from_records,
    load_dataset,
    read_manifest,
    read_results,
    write_results,
)
from pathprobe.simnet import CacheProxy, Topology, random_scenario
from pathprobe.simnet.engine import SimTransport
from pathprobe.vetting import LegitTitleTable
from conftest import make_domain, make_record, make_server, make_vp, scenario_files




class TestConfig:
    def test_load_derives_tokens_from_seed(self, tmp_path):
        config_path = tmp_path / "c.json"
        config_path.write_text(
            json.dumps(
                {
                    "campaign_id": "t",
                    "seed": 11,
                    "servers": [
                        {"id": "s1", "address": "203.0.113.1", "platform": "aws", "region": "virginia"}
                    ],
                    "vps": [{"id": "v1", "address": "192.0.2.1", "country": "CN", "asn": 1}],
                    "domains": {"CN": ["blocked.test"]},
                }
            )
        )
        config = load_campaign_config(config_path)
        expected = hashlib.sha256(b"11:s1").hexdigest()[:32]
        assert config.servers[0].sentinel_token == expected
        assert config.config_sha256 == hashlib.sha256(config_path.read_bytes()).hexdigest()

    def test_invalid_entries_reported_as_violations(self, tmp_path):
        config_path = tmp_path / "c.json"
        config_path.write_text(
            json.dumps(
                {
                    "campaign_id": "t",
                    "servers": [],
                    "vps": [{"id": "v1", "address": "192.0.2.1", "country": "CN", "asn": 0}],
                    "domains": {"CN": ["not a hostname!"]},
                }
            )
        )
        with pytest.raises(ConfigError) as err:
            load_campaign_config(config_path)
        text = "\n".join(err.value.violations)
        assert "asn must be positive" in text
        assert "invalid hostname" in text

    def test_missing_referenced_file(self, tmp_path):
        config_path = tmp_path / "c.json"
        config_path.write_text(
            json.dumps({"campaign_id": "t", "servers": [], "vps": [], "domains": {},
                        "signature_db": "nope.json"})
        )
        with pytest.raises(ConfigError, match="does not exist"):
            load_campaign_config(config_path)

    def test_vps_from_file(self, tmp_path):
        (tmp_path / "vps.json").write_text(
            json.dumps([{"id": "v1", "address": "192.0.2.1", "country": "CN", "asn": 5,
                         "access": {"type": "socks5", "host": "10.0.0.1", "port": 1080}}])
        )
        config_path = tmp_path / "c.json"
        config_path.write_text(
            json.dumps({"campaign_id": "t", "servers": [], "vps": "vps.json", "domains": {}})
        )
        config = load_campaign_config(config_path)
        assert config.vps[0].access.port == 1080


class TestResultsFile:
    def _records(self):
        vp, server, domain = make_vp(1), make_server(1), make_domain()
        return [
            make_record(vp, server, domain, "uncensored", epoch=0),
            make_record(vp, server, domain, "reset", epoch=1),
        ]

    def test_write_read_round_trip(self, tmp_path):
        path = tmp_path / "r.jsonl"
        records = self._records()
        write_results(path, records, campaign_id="c1")
        loaded = read_results(path)
        assert loaded.records == records
        assert loaded.campaign_id == "c1"
        ds = dataset_from_records(loaded.records)
        ds2 = dataset_from_records(records)
        assert ds == ds2

    def test_truncated_final_line_skipped_with_warning(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_results(path, self._records())
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"schema_version": 1, "truncated...')
        loaded = read_results(path)
        assert len(loaded.records) == 2
        assert len(loaded.warnings) == 1

    def test_corruption_mid_file_is_an_error(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_results(path, self._records())
        lines = path.read_text().splitlines()
        lines.insert(1, "{broken")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ResultsError):
            read_results(path)

    def test_schema_version_mismatch_names_versions(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_results(path, self._records())
        text = path.read_text().replace('"schema_version":1', '"schema_version":99')
        path.write_text(text)
        with pytest.raises(SchemaVersionMismatch, match="99"):
            read_results(path)

    def test_unknown_fields_preserved_through_rewrite(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_results(path, self._records())
        obj = json.loads(path.read_text().splitlines()[0])
        obj["x_operator_note"] = "keep me"
        path.write_text(json.dumps(obj) + "\n")
        loaded = read_results(path)
        assert loaded.envelopes[0].extra == {"x_operator_note": "keep me"}
        out = tmp_path / "rewritten.jsonl"
        write_results(out, loaded.envelopes)
        assert json.loads(out.read_text())["x_operator_note"] == "keep me"

    def test_empty_results_error(self, tmp_path):
        path = tmp_path / "r.jsonl"
        path.write_text("")
        with pytest.raises(ResultsError, match="no records"):
            load_dataset(path)


class TestRunCampaign:
    def _config(self, sc, seed=3):
        return CampaignConfig(
            campaign_id=f"sim-{seed}", seed=seed, servers=sc.servers, vps=sc.vps,
            domains=sc.domains, reference_pair=sc.reference_pair,
            signature_db=sc.signature_db, legit_titles=LegitTitleTable(sc.legit_titles),
        )

    def test_pipeline_counts_and_manifest(self, tmp_path):
        sc = random_scenario(3)
        config = self._config(sc)
        transport = SimTransport(sc.topology.clone(), config.all_server_endpoints())
        result = run_campaign(config, transport, tmp_path / "r.jsonl")
        manifest = read_manifest(result.manifest_path)
        assert manifest["complete"] is True
        assert manifest["counts"]["records"] == len(result.dataset.records)
        lines = (tmp_path / "r.jsonl").read_text().splitlines()
        assert len(lines) == manifest["counts"]["records"]

    def test_cache_vp_excluded_and_flagged(self, tmp_path):
        sc = random_scenario(3, cache_probability=0.0, censor_probability=0.0)
        base = sc.topology
        vp_asn = base.vps[sc.vps[0].id]
        topo = Topology(
            nodes=dict(base.nodes), links=base.links, censors=base.censors,
            caches=[CacheProxy(asn=vp_asn, router_index=0)],
            vps=dict(base.vps), servers=dict(base.servers), seed=base.seed,
        )
        config = self._config(sc)
        transport = SimTransport(topo, config.all_server_endpoints())
        result = run_campaign(config, transport, tmp_path / "r.jsonl")
        assert result.manifest.exclusions[sc.vps[0].id] == "cache_online"
        assert all(r.spec.vp.id != sc.vps[0].id for r in result.dataset.active_records())

    def test_determinism_same_seed_byte_identical(self, tmp_path):
        for run in ("a", "b"):
            sc = random_scenario(5)
            config = self._config(sc, seed=5)
            transport = SimTransport(sc.topology.clone(), config.all_server_endpoints())
            run_campaign(config, transport, tmp_path / f"{run}.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_config_violations_block_run(self, tmp_path):
        sc = random_scenario(3)
        config = self._config(sc)
        config.vps = config.vps + [config.vps[0]]  # duplicate id
        transport = SimTransport(sc.topology.clone(), config.all_server_endpoints())
        with pytest.raises(ConfigError):
            run_campaign(config, transport, tmp_path / "r.jsonl")


class TestCli:
    def test_sim_analyze_report_flow(self, tmp_path, capsys):
        sc, config_path, topo_path = scenario_files(tmp_path, seed=3)
        out = tmp_path / "results.jsonl"
        code = main(["sim", "--topology", str(topo_path), "--campaign", str(config_path),
                     "--out", str(out)])
        assert code == 0
        assert out.exists()

        reports = tmp_path / "reports"
        code = main(["analyze", "--in", str(out), "--out-dir", str(reports)])
        assert code == 0
        for name in (
            "country_summary.csv", "as_summary.csv", "platform_summary.csv",
            "domain_summary.csv", "cdf_destination_inconsistency.csv",
            "cdf_hosting_inconsistency.csv",
        ):
            assert (reports / name).exists(), name

        code = main(["report", "--in", str(out), "--out-dir", str(reports)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "% Censored" in printed and "% Incons." in printed

    def test_probe_over_topology(self, tmp_path):
        sc, config_path, topo_path = scenario_files(tmp_path, seed=6)
        out = tmp_path / "probe.jsonl"
        code = main(["probe", "--config", str(config_path), "--topology", str(topo_path),
                     "--out", str(out)])
        assert code == 0
        loaded = read_results(out)
        matrix = len(sc.vps) * len(sc.servers) * len(sc.all_domains())
        assert len(loaded.records) == matrix

    def test_vet_online_over_topology(self, tmp_path, capsys):
        sc, config_path, topo_path = scenario_files(tmp_path, seed=3)
        code = main(["vet", "--config", str(config_path), "--mode", "online",
                     "--topology", str(topo_path)])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["mode"] == "online"
        assert set(out["kept"]) | set(out["excluded"]) == {vp.id for vp in sc.vps}

    def test_trace_over_topology(self, tmp_path, capsys):
        sc, config_path, topo_path = scenario_files(tmp_path, seed=3, censor_probability=0.0)
        trace_out = tmp_path / "trace.csv"
        domain = sc.all_domains()[0]
        code = main(["trace", "--config", str(config_path), "--topology", str(topo_path),
                     "--vp", sc.vps[0].id, "--domain", domain.name, "--out", str(trace_out)])
        assert code == 0
        assert trace_out.exists()
        assert trace_out.read_text().startswith("ttl,")

    def test_invalid_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({
            "campaign_id": "x", "servers": [],
            "vps": [{"id": "v", "address": "192.0.2.1", "country": "CN", "asn": 0}],
            "domains": {},
        }))
        out = tmp_path / "r.jsonl"
        code = main(["probe", "--config", str(bad), "--out", str(out)])
        assert code == 2

    def test_analyze_missing_file_is_io_error(self, tmp_path):
        code = main(["analyze", "--in", str(tmp_path / "absent.jsonl"),
                     "--out-dir", str(tmp_path / "rep")])
        assert code == 4

    def test_deterministic_requires_seed(self, tmp_path):
        sc, config_path, topo_path = scenario_files(tmp_path, seed=3)
        obj = json.loads(config_path.read_text())
        del obj["seed"]
        config_path.write_text(json.dumps(obj))
        code = main(["sim", "--topology", str(topo_path), "--campaign", str(config_path),
                     "--out", str(tmp_path / "r.jsonl"), "--deterministic"])
        assert code == 2


class TestEdgeBehaviors:
    def test_partial_run_preserves_records_and_marks_manifest(self, tmp_path):
        sc = random_scenario(3, censor_probability=0.0, cache_probability=0.0)
        config = CampaignConfig(
            campaign_id="partial", seed=3, servers=sc.servers, vps=sc.vps,
            domains=sc.domains, reference_pair=sc.reference_pair,
        )
        real = SimTransport(sc.topology.clone(), config.all_server_endpoints())

        class Flaky:
            def __init__(self, inner, fail_after):
                self.inner, self.remaining = inner, fail_after

            def now_ms(self):
                return self.inner.now_ms()

            def supports_ttl(self, vp):
                return self.inner.supports_ttl(vp)

            def exchange(self, *args, **kwargs):
                if self.remaining <= 0:
                    raise OSError("transport burned down")
                self.remaining -= 1
                return self.inner.exchange(*args, **kwargs)

        vetting_probes = 2 * len(sc.vps)
        flaky = Flaky(real, fail_after=vetting_probes + 3)
        out = tmp_path / "partial.jsonl"
        from pathprobe.harness.campaign import PartialRun

        with pytest.raises(PartialRun):
            run_campaign(config, flaky, out)
        manifest = read_manifest(out.with_name("partial.manifest.json"))
        assert manifest["complete"] is False
        assert manifest["counts"]["records"] == len(out.read_text().splitlines()) == 3

    def test_transport_error_records_are_inconclusive(self, tmp_path):
        sc = random_scenario(3, censor_probability=0.0, cache_probability=0.0)
        vp = sc.vps[0]
        config = CampaignConfig(
            campaign_id="inconclusive", seed=3, servers=sc.servers, vps=[vp],
            domains=sc.domains, reference_pair=sc.reference_pair,
        )
        real = SimTransport(sc.topology.clone(), config.all_server_endpoints())

        class Hostile:
            """Vetting works; every matrix probe fails at transport setup."""

            def __init__(self, inner, good_probes):
                self.inner, self.good = inner, good_probes

            def now_ms(self):
                return self.inner.now_ms()

            def supports_ttl(self, vp):
                return self.inner.supports_ttl(vp)

            def exchange(self, *args, **kwargs):
                if self.good > 0:
                    self.good -= 1
                    return self.inner.exchange(*args, **kwargs)
                from pathprobe.transport import SetupFailure

                return SetupFailure("socks5: handshake refused")

        hostile = Hostile(real, good_probes=2)  # the two vetting probes
        result = run_campaign(config, hostile, tmp_path / "r.jsonl")
        assert len(result.dataset.records) > 0
        assert all(r.inconclusive for r in result.dataset.records)
        assert all(len(r.attempts) == 5 for r in result.dataset.records)
        assert result.dataset.active_records() == []
        from pathprobe.harness.report import render_country_table

        table = render_country_table(result.dataset)
        assert "% Censored" in table  # renders headers even with no rows

    def test_verdicts_always_derivable_from_final_outcome(self, tmp_path):
        from pathprobe.prober import verdict_for

        sc = random_scenario(9)
        config = CampaignConfig(
            campaign_id="consistency", seed=9, servers=sc.servers, vps=sc.vps,
            domains=sc.domains, reference_pair=sc.reference_pair,
            signature_db=sc.signature_db,
        )
        transport = SimTransport(sc.topology.clone(), config.all_server_endpoints())
        result = run_campaign(config, transport, tmp_path / "r.jsonl")
        for record in result.dataset.records:
            assert record.verdict == verdict_for(record.final_outcome)

    def test_report_with_only_excluded_vps_renders_na(self, tmp_path, capsys):
        vp, server, domain = make_vp(1), make_server(1), make_domain()
        records = [
            make_record(vp, server, domain, "uncensored", flags=("excluded:cache_offline",))
        ]
        path = tmp_path / "r.jsonl"
        write_results(path, records)
        code = main(["report", "--in", str(path), "--out-dir", str(tmp_path / "rep")])
        assert code == 0
        out = capsys.readouterr().out
        assert "% Censored" in out

    def test_vet_offline_cli(self, tmp_path, capsys):
        sc, config_path, topo_path = scenario_files(tmp_path, seed=3)
        title = sc.legit_titles[sc.all_domains()[0].name]
        record = make_record(
            sc.vps[0], sc.servers[0], sc.all_domains()[0], "anomalous", title=title
        )
        results = tmp_path / "res.jsonl"
        write_results(results, [record])
        code = main(["vet", "--config", str(config_path), "--mode", "offline",
                     "--in", str(results)])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["excluded"] == [sc.vps[0].id]

    def test_sim_whatif_ranking_printed(self, tmp_path, capsys):
        sc, config_path, topo_path = scenario_files(tmp_path, seed=3)
        code = main(["sim", "--topology", str(topo_path), "--campaign", str(config_path),
                     "--out", str(tmp_path / "r.jsonl"), "--whatif-vp", sc.vps[0].id])
        assert code == 0
        out = capsys.readouterr().out
        assert "what-if ranking" in out
