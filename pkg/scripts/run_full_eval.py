#!/usr/bin/env python3
"""Run every experiment end to end and merge the results into one report.

    python scripts/run_full_eval.py [--out out] [--seed 0] [--quick]

--quick shrinks the throughput benchmark (shorter cells, lower concurrency)
for a fast sanity pass; the full run takes roughly eight minutes.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tenantgate.evalkit import bench, scaling  # noqa: E402
from tenantgate.evalkit.abac_cases import run_abac_matrix  # noqa: E402
from tenantgate.evalkit.client import GatewayHandle  # noqa: E402
from tenantgate.evalkit.matrix import MatrixOptions, run_matrix  # noqa: E402
from tenantgate.evalkit.reporting import assemble_report, emit_report, report_checks_passed  # noqa: E402
from tenantgate.evalkit.workload import CorpusSpec, build_workload  # noqa: E402
from tenantgate.gateway import ServerConfig  # noqa: E402

DIM = 256


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()

    t0 = time.perf_counter()
    print("== 2x2 configuration matrix ==", flush=True)
    workload = build_workload(CorpusSpec(seed=args.seed))
    config = ServerConfig(
        enable_ungated_endpoints=True, simulated_latency_s=0.0, seed=args.seed, embedding_dim=DIM
    )
    with GatewayHandle.in_process(config, workload.documents) as handle:
        matrix = run_matrix(handle, workload, MatrixOptions())
    print(f"   done in {time.perf_counter() - t0:.0f}s", flush=True)

    print("== authorization matrix ==", flush=True)
    abac = run_abac_matrix()

    print("== pushdown scaling ==", flush=True)
    pushdown = scaling.run_pushdown_scaling(seed=args.seed, dim=DIM)

    print("== relative latency overhead ==", flush=True)
    overhead = bench.measure_relative_overhead(seed=args.seed, dim=DIM)

    print("== throughput ==", flush=True)
    if args.quick:
        throughput = bench.run_throughput(
            concurrency=(1, 5), duration_s=6.0, seed=args.seed, dim=DIM
        )
    else:
        throughput = bench.run_throughput(seed=args.seed, dim=DIM)

    report = assemble_report(
        args.seed,
        DIM,
        {
            "security": matrix["security"],
            "quality": matrix["quality"],
            "g3": matrix["g3"],
            "performance": matrix["performance"],
            "matrix_checks": {"checks": matrix["checks"]},
            "abac": abac,
            "pushdown_scaling": pushdown,
            "latency_overhead": overhead,
            "throughput": throughput,
        },
    )
    paths = emit_report(report, args.out, "full_report")
    print(Path(paths["summary"]).read_text())
    print(f"total wall time {time.perf_counter() - t0:.0f}s; report at {paths['json']}")
    return 0 if report_checks_passed(report) else 1


if __name__ == "__main__":
    raise SystemExit(main())
