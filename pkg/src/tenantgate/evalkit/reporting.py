"""Report assembly and byte-stable emission (JSON, CSV, text summary)."""

from __future__ import annotations

import csv
import json
import platform
import sys
from pathlib import Path

import numpy

from .. import __version__
from ..errors import ValidationError


def environment_fingerprint(seed: int, dim: int) -> dict:
    return {
        "package": f"tenantgate-{__version__}",
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": numpy.__version__,
        "embedding_dim": dim,
        "seed": seed,
    }


def assemble_report(seed: int, dim: int, sections: dict) -> dict:
    report = {"seed": seed, "environment": environment_fingerprint(seed, dim)}
    checks = []
    for name, section in sections.items():
        if section is None:
            continue
        report[name] = section
        if isinstance(section, dict):
            checks.extend(section.get("checks", ()))
    report["checks"] = checks
    return report


def report_checks_passed(report: dict) -> bool:
    return all(c.get("passed") for c in report.get("checks", ()))


def _flatten(prefix: str, value, rows: list[tuple[str, str]]) -> None:
    if isinstance(value, dict):
        for key in sorted(value, key=str):
            _flatten(f"{prefix}.{key}" if prefix else str(key), value[key], rows)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _flatten(f"{prefix}[{i}]", item, rows)
    elif isinstance(value, float):
        rows.append((prefix, f"{value:.6g}"))
    else:
        rows.append((prefix, str(value)))


def _fmt(value: float, digits: int = 3) -> str:
    return f"{value:.{digits}f}"


def render_summary(report: dict) -> str:
    lines: list[str] = []
    out = lines.append
    out("tenantgate evaluation report")
    out(f"seed: {report.get('seed')}")
    env = report.get("environment", {})
    out(
        "environment: "
        + " ".join(f"{k}={env[k]}" for k in sorted(env))
    )

    security = report.get("security")
    if security:
        out("")
        out("[security: 2x2 configuration matrix]")
        out(f"{'config':<7}{'orchestration':<15}{'retrieval':<11}{'CTLR':>7}{'AVR':>8}{'injection':>11}")
        for config in sorted(k for k in security if len(k) == 1):
            row = security[config]
            out(
                f"{config:<7}{row['orchestration']:<15}{row['retrieval']:<11}"
                f"{_fmt(row['ctlr']):>7}{_fmt(row['avr']):>8}"
                f"{row['injection_leaked']:>7}/{row['injection_probes']}"
            )

    quality = report.get("quality")
    if quality:
        out("")
        out("[retrieval quality]")
        out(f"{'config':<7}{'P@5':>7}{'R@5':>7}{'MRR':>7}")
        for config in sorted(k for k in quality if len(k) == 1):
            row = quality[config]
            out(
                f"{config:<7}{_fmt(row['precision_at_5']):>7}"
                f"{_fmt(row['recall_at_5']):>7}{_fmt(row['mrr']):>7}"
            )
        ratios = quality.get("ratios")
        if ratios:
            out(
                "precision gated/ungated: client="
                + _fmt(ratios["client_precision_gated_vs_ungated"], 2)
                + " server="
                + _fmt(ratios["server_precision_gated_vs_ungated"], 2)
            )
        oracle = quality.get("pushdown_oracle")
        if oracle and oracle.get("checked"):
            out(
                f"pushdown vs brute-force oracle: {oracle['checked'] - oracle['mismatches']}"
                f"/{oracle['checked']} identical"
            )

    g3 = report.get("g3")
    if g3:
        ok = sum(1 for d in g3["drills"] if d["ok"])
        out("")
        out("[fail-fast on deny paths]")
        out(
            f"drills {ok}/{len(g3['drills'])} returned the expected status; "
            f"provider call delta={g3['provider_call_delta']}"
        )

    abac = report.get("abac")
    if abac:
        out("")
        out("[authorization matrix]")
        out(
            f"{abac['correct']}/{abac['total']} correct "
            f"({abac['accuracy']:.1%}), false positives: {abac['false_positives']}"
        )

    scaling = report.get("pushdown_scaling")
    if scaling:
        out("")
        out(f"[post-filter vs pushdown scaling at {scaling['overfetch']}x over-fetch]")
        out(f"{'size':>8}{'postfilter R@5':>16}{'pushdown R@5':>14}{'gated ms':>10}{'overhead ms':>13}")
        for row in scaling["rows"]:
            out(
                f"{row['corpus_size']:>8}{_fmt(row['postfilter_recall_at_5']):>16}"
                f"{_fmt(row['pushdown_recall_at_5']):>14}"
                f"{_fmt(row['gated_latency_ms_median'], 2):>10}"
                f"{_fmt(row['filter_overhead_ms_median'], 2):>13}"
            )

    throughput = report.get("throughput")
    if throughput:
        out("")
        out(
            f"[throughput, simulated inference latency {throughput['simulated_latency_s'] * 1000:.0f} ms]"
        )
        cs = throughput["concurrency"]
        out(f"{'config':<7}" + "".join(f"{'c=' + str(c):>9}" for c in cs))
        for config in sorted(throughput["qps"]):
            row = throughput["qps"][config]
            out(f"{config:<7}" + "".join(f"{row[str(c)]:>9.1f}" for c in cs))

    overhead = report.get("latency_overhead")
    if overhead:
        out("")
        out("[relative latency overhead]")
        out(
            f"gated-ungated search median: {overhead['gated_overhead_ms_median']:.3f} ms on "
            f"{overhead['corpus_chunks']} chunks; policy evaluate median: "
            f"{overhead['policy_evaluate_ms_median']:.4f} ms"
        )

    checks = report.get("checks")
    if checks:
        out("")
        out("[checks]")
        for check in checks:
            status = "PASS" if check.get("passed") else "FAIL"
            detail = check.get("detail", "")
            out(f"{status} {check['name']}" + (f" ({detail})" if detail else ""))
    out("")
    return "\n".join(lines)


def emit_report(report: dict, out_dir: str | Path, basename: str = "report") -> dict[str, Path]:
    """Write report.json, metrics CSV, and the text summary; byte-stable."""
    out_path = Path(out_dir)
    try:
        out_path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out_dir}: {exc}") from exc

    paths = {
        "json": out_path / f"{basename}.json",
        "csv": out_path / f"{basename}_metrics.csv",
        "summary": out_path / f"{basename}_summary.txt",
    }
    with open(paths["json"], "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    rows: list[tuple[str, str]] = []
    for section in sorted(report):
        if section == "checks":
            continue
        _flatten(section, report[section], rows)
    with open(paths["csv"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(rows)

    with open(paths["summary"], "w", encoding="utf-8") as fh:
        fh.write(render_summary(report))
    return paths
