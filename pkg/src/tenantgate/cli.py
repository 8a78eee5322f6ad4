"""Command-line interface: serve the gateway and run the evaluation suite."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import TenantGateError
from .evalkit import bench, scaling
from .evalkit.abac_cases import run_abac_matrix
from .evalkit.client import GatewayHandle
from .evalkit.matrix import MatrixOptions, run_matrix
from .evalkit.reporting import assemble_report, emit_report, report_checks_passed
from .evalkit.workload import (
    CorpusSpec,
    Workload,
    build_workload,
    read_canary_registry,
    read_probes,
    write_canary_registry,
    write_probes,
)
from .gateway import ServerConfig, apply_env_overrides, build_app, load_server_config
from .tenancy import read_corpus, write_corpus


def _spec_from_args(args) -> CorpusSpec:
    return CorpusSpec(
        docs_per_tenant=args.docs_per_tenant,
        topics=args.topics,
        tokens_per_doc=args.tokens_per_doc,
        seed=args.seed,
    )


def _add_spec_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--docs-per-tenant", type=int, default=100)
    parser.add_argument("--topics", type=int, default=10)
    parser.add_argument("--tokens-per-doc", type=int, default=512)


def _emit_and_exit(report: dict, out_dir: str, basename: str) -> int:
    paths = emit_report(report, out_dir, basename)
    print(Path(paths["summary"]).read_text(), end="")
    print(f"report written to {paths['json']}")
    return 0 if report_checks_passed(report) else 1


def cmd_gen_corpus(args) -> int:
    workload = build_workload(_spec_from_args(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = write_corpus(out / "corpus.jsonl", workload.documents)
    write_canary_registry(out / "canaries.json", workload.canary_registry)
    print(f"wrote {n} documents to {out / 'corpus.jsonl'} and {len(workload.canary_registry)} canaries")
    return 0


def cmd_gen_probes(args) -> int:
    workload = build_workload(_spec_from_args(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_probes(out / "probes.json", workload.probes, workload.spec)
    p = workload.probes
    print(
        f"wrote {len(p.authorized)} authorized, {len(p.cross_tenant)} cross-tenant, "
        f"{len(p.injection)} injection probes to {out / 'probes.json'}"
    )
    return 0


def _load_workload(args) -> Workload:
    if args.corpus or args.probes or args.canaries:
        if not (args.corpus and args.probes and args.canaries):
            raise TenantGateError("--corpus, --probes, and --canaries must be given together")
        documents = list(read_corpus(args.corpus))
        probes = read_probes(args.probes)
        registry = read_canary_registry(args.canaries)
        with open(args.probes, "r", encoding="utf-8") as fh:
            meta = json.load(fh)["spec"]
        spec = CorpusSpec(
            tenants=tuple(meta["tenants"]),
            docs_per_tenant=meta["docs_per_tenant"],
            topics=meta["topics"],
            tokens_per_doc=meta["tokens_per_doc"],
            seed=meta["seed"],
        )
        return Workload(spec=spec, documents=documents, canary_registry=registry, probes=probes)
    return build_workload(_spec_from_args(args))


def cmd_run_matrix(args) -> int:
    workload = _load_workload(args)
    options = MatrixOptions(k=args.k, verify_oracle=not args.no_oracle)
    if args.gateway:
        handle = GatewayHandle.remote(args.gateway)
    else:
        config = load_server_config(args.config) if args.config else ServerConfig()
        config = replace(
            config,
            enable_ungated_endpoints=True,
            simulated_latency_s=0.0,
            seed=workload.spec.seed,
            embedding_dim=args.dim,
        )
        handle = GatewayHandle.in_process(config, workload.documents)
    with handle:
        sections = run_matrix(handle, workload, options)
    report = assemble_report(
        workload.spec.seed,
        args.dim,
        {
            "security": sections["security"],
            "quality": sections["quality"],
            "g3": sections["g3"],
            "performance": sections["performance"],
            "matrix_checks": {"checks": sections["checks"]},
        },
    )
    return _emit_and_exit(report, args.out, "matrix_report")


def cmd_run_pushdown(args) -> int:
    section = scaling.run_pushdown_scaling(
        sizes=tuple(args.sizes), overfetch=args.overfetch, seed=args.seed, dim=args.dim
    )
    report = assemble_report(args.seed, args.dim, {"pushdown_scaling": section})
    return _emit_and_exit(report, args.out, "pushdown_report")


def cmd_run_throughput(args) -> int:
    section = bench.run_throughput(
        concurrency=tuple(args.concurrency),
        duration_s=args.duration,
        latency_s=args.latency_ms / 1000.0,
        seed=args.seed,
        dim=args.dim,
        gateway_url=args.gateway,
    )
    overhead = bench.measure_relative_overhead(seed=args.seed, dim=args.dim)
    report = assemble_report(
        args.seed, args.dim, {"throughput": section, "latency_overhead": overhead}
    )
    return _emit_and_exit(report, args.out, "throughput_report")


def cmd_run_abac(args) -> int:
    report = assemble_report(0, 0, {"abac": run_abac_matrix()})
    return _emit_and_exit(report, args.out, "abac_report")


def cmd_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    paths = emit_report(report, args.out, Path(args.report).stem)
    print(f"re-emitted {paths['csv']} and {paths['summary']}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    config = load_server_config(args.config) if args.config else ServerConfig()
    config = apply_env_overrides(config)
    if args.host:
        config = replace(config, listen_host=args.host)
    if args.port:
        config = replace(config, listen_port=args.port)
    app = build_app(config)
    uvicorn.run(app, host=config.listen_host, port=config.listen_port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tenantgate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic corpus and canary registry")
    _add_spec_args(p)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("gen-probes", help="generate authorized/cross-tenant/injection probes")
    _add_spec_args(p)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_gen_probes)

    p = sub.add_parser("run-matrix", help="run the 2x2 security and quality matrix")
    _add_spec_args(p)
    p.add_argument("--out", default="out")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--gateway", help="base URL of a running gateway (default: in-process)")
    p.add_argument("--config", help="server config JSON for the in-process gateway")
    p.add_argument("--corpus", help="corpus.jsonl from gen-corpus")
    p.add_argument("--probes", help="probes.json from gen-probes")
    p.add_argument("--canaries", help="canaries.json from gen-corpus")
    p.add_argument("--no-oracle", action="store_true", help="skip brute-force cross-checks")
    p.set_defaults(func=cmd_run_matrix)

    p = sub.add_parser("run-pushdown", help="post-filter vs pushdown recall scaling")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--overfetch", type=int, default=5)
    p.add_argument("--sizes", type=int, nargs="+", default=[100, 1000, 10000, 50000])
    p.set_defaults(func=cmd_run_pushdown)

    p = sub.add_parser("run-throughput", help="QPS benchmark across the 2x2 matrix")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--concurrency", type=int, nargs="+", default=[1, 5, 10, 25])
    p.add_argument("--duration", type=float, default=18.0, help="seconds per cell")
    p.add_argument("--latency-ms", type=float, default=250.0, help="simulated inference latency")
    p.add_argument("--gateway", help="benchmark an already-running gateway instead")
    p.set_defaults(func=cmd_run_throughput)

    p = sub.add_parser("run-abac", help="run the 48-case authorization matrix")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_run_abac)

    p = sub.add_parser("report", help="re-emit CSV and summary from a report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the gateway HTTP server")
    p.add_argument("--config", help="server config JSON (or TENANTGATE_CONFIG)")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TenantGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
