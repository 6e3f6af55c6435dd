"""Runs one scenario per threat class and reports whether its mitigation fired.

    python scripts/threat_matrix.py [--seed 0]
"""

import argparse

from verinfer.harness import run_scenario, threat_matrix


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for case in threat_matrix(seed=args.seed):
        m = run_scenario(case.config).metrics
        status = "mitigated" if case.mitigated(m) else "NOT MITIGATED"
        print(f"{case.threat:28s} {status:14s} {case.mechanism}")
        print(f"{'':28s} submissions={m.submissions} rejected={m.rejected_submissions} "
              f"frauds={m.frauds_injected}/{m.frauds_detected} denied={m.share_requests_denied} "
              f"unavailable={m.availability_failures} exposures={m.plaintext_exposures}")


if __name__ == "__main__":
    main()
