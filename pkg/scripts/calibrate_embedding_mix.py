#!/usr/bin/env python3
"""Calibration oracle for the synthetic embedding mix weights.

Sweeps the topic-energy share and measures, over random document pairs:
  * same-topic / different-text cosine (target band: 0.93..0.97, mid 0.95)
  * different-topic cosine (must stay below 0.5)

The committed constants in tenantgate.retrieval correspond to a topic share
of 0.95; run this script to re-verify after any embedding change:

    python scripts/calibrate_embedding_mix.py [--pairs 1000] [--dim 256]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tenantgate.retrieval import SAME_TOPIC_TARGET, SyntheticEmbedder  # noqa: E402

WORDS = [f"w{i:03d}" for i in range(400)]


def random_text(rng: np.random.Generator, length: int = 120) -> str:
    return " ".join(rng.choice(WORDS, size=length))


def measure(topic_share: float, pairs: int, dim: int, seed: int) -> dict:
    import tenantgate.retrieval as r

    # Temporarily override the mix for the sweep.
    saved = (r.TOPIC_WEIGHT, r.TEXT_WEIGHT)
    r.TOPIC_WEIGHT = float(np.sqrt(topic_share))
    r.TEXT_WEIGHT = float(np.sqrt(1.0 - topic_share))
    try:
        emb = SyntheticEmbedder(dim=dim, seed=seed)
        rng = np.random.default_rng(seed)
        topics = [f"topic-{i:02d}" for i in range(10)]
        same, diff = [], []
        for _ in range(pairs):
            t = rng.choice(topics)
            a = emb.embed_document(random_text(rng), t, "tenant-a")
            b = emb.embed_document(random_text(rng), t, "tenant-b")
            same.append(float(a.values @ b.values))
            t1, t2 = rng.choice(topics, size=2, replace=False)
            c = emb.embed_document(random_text(rng), t1, "tenant-a")
            d = emb.embed_document(random_text(rng), t2, "tenant-b")
            diff.append(float(c.values @ d.values))
        same_arr, diff_arr = np.asarray(same), np.asarray(diff)
        return {
            "topic_share": topic_share,
            "same_mean": same_arr.mean(),
            "same_min": same_arr.min(),
            "same_max": same_arr.max(),
            "diff_mean": diff_arr.mean(),
            "diff_max": np.abs(diff_arr).max(),
            "in_band": float(np.mean((same_arr >= 0.93) & (same_arr <= 0.97))),
        }
    finally:
        r.TOPIC_WEIGHT, r.TEXT_WEIGHT = saved


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=1000)
    ap.add_argument("--dim", type=int, default=256)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument(
        "--sweep",
        type=float,
        nargs="*",
        default=[0.90, 0.93, 0.95, 0.97],
        help="topic-energy shares to measure",
    )
    args = ap.parse_args()

    print(f"{'share':>6} {'same mean':>10} {'same min':>9} {'same max':>9} {'in band':>8} {'diff |max|':>10}")
    for share in args.sweep:
        m = measure(share, args.pairs, args.dim, args.seed)
        print(
            f"{m['topic_share']:>6.3f} {m['same_mean']:>10.4f} {m['same_min']:>9.4f} "
            f"{m['same_max']:>9.4f} {m['in_band']:>8.1%} {m['diff_max']:>10.4f}"
        )
    print(f"\ncommitted constant: topic share = {SAME_TOPIC_TARGET}")
    final = measure(SAME_TOPIC_TARGET, args.pairs, args.dim, args.seed)
    ok = final["in_band"] == 1.0 and final["diff_max"] < 0.5
    print("calibration check:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
