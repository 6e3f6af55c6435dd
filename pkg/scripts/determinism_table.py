"""Bit-exact match rates for repeated runs, cross-profile runs and batching.

    python scripts/determinism_table.py [--tuples 100] [--repeats 10]
"""

import argparse
import dataclasses
import hashlib
import random

from verinfer.detcore import VOCAB_SIZE, DecodePolicy, ExecutionTuple, infer, infer_batch

DIGEST = hashlib.sha256(b"table-container").digest()


def tuples(n: int, seed: int) -> list[ExecutionTuple]:
    rng = random.Random(seed)
    pol = [DecodePolicy.greedy(8), DecodePolicy.top_k(8, 8), DecodePolicy.nucleus(0.9, 8)]
    return [
        ExecutionTuple("toy-1", DIGEST, "archA", "drv-535", rng.choice(pol), rng.getrandbits(64),
                       tuple(rng.randrange(VOCAB_SIZE) for _ in range(rng.randint(8, 16))))
        for _ in range(n)
    ]


def rate(hits: int, total: int) -> str:
    return f"{100 * hits / total:5.1f}% ({hits}/{total})"


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--tuples", type=int, default=100)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ts = tuples(args.tuples, args.seed)
    ref = [infer(e).canonical_bytes for e in ts]

    same = sum(infer(e).canonical_bytes == r for e, r in zip(ts, ref) for _ in range(args.repeats))
    print(f"{'same profile, repeated':32s} {rate(same, len(ts) * args.repeats)}")
    for arch in ("archB", "archC"):
        hits = sum(infer(dataclasses.replace(e, arch=arch)).canonical_bytes == r for e, r in zip(ts, ref))
        print(f"{'archA vs ' + arch:32s} {rate(hits, len(ts))}")
    for size in (1, 4, 8, 7, 9):
        outs = infer_batch(ts, batch_size=size)
        hits = sum(o.canonical_bytes == r for o, r in zip(outs, ref))
        print(f"{'batch size ' + str(size):32s} {rate(hits, len(ts))}")


if __name__ == "__main__":
    main()
