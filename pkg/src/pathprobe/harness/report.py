"""CSV report generation and the stdout country table.

Reports are plot-ready data, nothing more: per-country censorship and
inconsistency, per-AS and per-platform spreads, per-domain request-level
percentages, and CDF step series of the spread distributions.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

from .. import analysis
from ..analysis import NotEnoughGroups, UnknownCountry, format_pct
from ..model import Censored, Dataset

log = logging.getLogger(__name__)


def write_reports(
    dataset: Dataset,
    out_dir,
    min_as_vps: int = 80,
    granularity: str = "vp",
    cube_mode: str = "per-epoch",
) -> dict[str, Path]:
    """Write every CSV report; returns {report name: path}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cube = analysis.build_cube(dataset, mode=cube_mode)
    paths: dict[str, Path] = {}

    summaries = analysis.country_summaries(cube)
    path = out_dir / "country_summary.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "country", "total_vps", "censored_vps", "inconsistent_vps",
                "mechanism_diverse_vps", "censorship_pct", "inconsistency_pct",
            ]
        )
        for s in summaries:
            w.writerow(
                [
                    s.country, s.total_vps, s.censored_vps, s.inconsistent_vps,
                    s.mechanism_diverse_vps, format_pct(s.censorship_pct),
                    format_pct(s.inconsistency_pct),
                ]
            )
    paths["country_summary"] = path

    server_ids = cube.server_ids
    as_rows = analysis.as_inconsistency(cube, min_vps=min_as_vps, granularity=granularity)
    path = out_dir / "as_summary.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["asn", "vp_count"] + [f"pct_{sid}" for sid in server_ids] + ["inconsistency"])
        for row in as_rows:
            w.writerow(
                [row.asn, row.vp_count]
                + [format_pct(row.per_server.get(sid)) for sid in server_ids]
                + [format_pct(row.inconsistency)]
            )
    paths["as_summary"] = path

    platforms = sorted({s.platform for s in dataset.servers})
    path = out_dir / "platform_summary.csv"
    hosting_values = []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["country", "requests"] + [f"pct_{p}" for p in platforms] + ["inconsistency"])
        for country in cube.countries():
            try:
                summary = analysis.hosting_inconsistency(dataset, country)
            except (NotEnoughGroups, UnknownCountry):
                continue
            hosting_values.append(summary.inconsistency)
            w.writerow(
                [country, summary.requests]
                + [format_pct(summary.per_platform.get(p)) for p in platforms]
                + [format_pct(summary.inconsistency)]
            )
    paths["platform_summary"] = path

    path = out_dir / "domain_summary.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["country", "domain", "requests", "censored", "censorship_pct"])
        counts: dict[tuple[str, str], list[int]] = {}
        for record in dataset.active_records():
            key = (record.spec.vp.country, record.spec.domain.name)
            entry = counts.setdefault(key, [0, 0])
            entry[0] += 1
            if isinstance(record.verdict, Censored):
                entry[1] += 1
        for (country, domain), (total, censored) in sorted(counts.items()):
            w.writerow(
                [country, domain, total, censored, format_pct(100.0 * censored / total)]
            )
    paths["domain_summary"] = path

    destination_values = []
    for country in cube.countries():
        try:
            destination_values.append(
                analysis.destination_inconsistency(cube, country, granularity).inconsistency
            )
        except (NotEnoughGroups, UnknownCountry):
            continue
    for name, values in (
        ("cdf_destination_inconsistency", destination_values),
        ("cdf_hosting_inconsistency", hosting_values),
    ):
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["value", "cum_fraction"])
            if values:
                for x, fraction in analysis.cdf_series(values):
                    w.writerow([format_pct(x), f"{fraction:.6f}"])
        paths[name] = path

    return paths


def render_country_table(dataset: Dataset, top: int = 10, cube_mode: str = "per-epoch") -> str:
    """Top countries by censorship percentage, shaped like the paper's table."""
    cube = analysis.build_cube(dataset, mode=cube_mode)
    summaries = analysis.country_summaries(cube)[:top]
    header = ["Country", "Total", "Censored", "Incons.", "% Censored", "% Incons."]
    rows = [
        [
            s.country,
            str(s.total_vps),
            str(s.censored_vps),
            str(s.inconsistent_vps),
            format_pct(s.censorship_pct) + "%",
            (format_pct(s.inconsistency_pct) + "%") if s.inconsistency_pct is not None else "n/a",
        ]
        for s in summaries
    ]
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
