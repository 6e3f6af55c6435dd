"""Monte Carlo payoff curve for honest and cheating operators.

    python scripts/payoff_curve.py --out payoff.csv [--trials 10000]
"""

import argparse

from verinfer.econ import break_even_probability, critical_challenge_probability, sweep, write_csv, zero_crossing


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="payoff.csv")
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--G", type=float, default=50)
    ap.add_argument("--S", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--grid", type=float, nargs="*", default=[i / 20 for i in range(21)])
    args = ap.parse_args()
    rows = sweep(args.grid, args.G, args.S, args.trials, args.seed)
    write_csv(rows, args.out)
    cheat = [(r["pi_c"], r["mean_utility"]) for r in rows if r["strategy"] == "cheat"]
    for pi, u in cheat:
        print(f"pi_c={pi:.2f}  cheat utility {u:+8.2f}")
    print(f"empirical zero crossing {zero_crossing(cheat):.3f}; "
          f"exact root G/(G+S) {break_even_probability(args.G, args.S):.3f}; "
          f"sufficient bound G/S {critical_challenge_probability(args.G, args.S).value:.3f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
