"""Command line entry point: ``python -m verinfer <command>``.

Commands
  run --config C --out DIR         run a scenario; writes events.ndjson,
                                   metrics.json, metrics.csv, da_dump.json and
                                   one receipts/<id>.json per submission
  replay --log L --config C        re-run and compare, byte for byte
  econ-sweep --grid G [--out F]    payoff CSV from a JSON grid file
  verify-receipt --receipt R --da D
                                   public audit of one receipt against a DA dump

Scenario configs are JSON objects; see ``ScenarioConfig.from_dict`` for the
accepted fields. An econ grid file looks like
``{"pi_c": [0, 0.5, 1], "G": 50, "S_slash": 100, "trials": 1000, "seed": 0}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .da import DaArchive
from .econ import sweep, write_csv
from .harness import ConfigError, ScenarioConfig, replay_verify, run_scenario
from .receipts import Registry, ResponseMetadata, audit_public


def _load_config(path: str) -> ScenarioConfig:
    try:
        return ScenarioConfig.load(path)
    except ConfigError as exc:
        for k, v in exc.problems.items():
            print(f"config error: {k}: {v}", file=sys.stderr)
        raise SystemExit(2) from None


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    run = run_scenario(cfg)
    out = Path(args.out)
    (out / "receipts").mkdir(parents=True, exist_ok=True)
    (out / "events.ndjson").write_text(run.log)
    (out / "metrics.json").write_text(json.dumps(run.metrics.to_dict(), indent=1, sort_keys=True))
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("metric", "value"))
        w.writerows(run.metrics.csv_rows())
    batches = [run.archive[s].to_json_dict() for s in sorted(run.archive)]
    (out / "da_dump.json").write_text(json.dumps(batches, indent=1))
    keys = run.protocol.operator_pubkeys()
    registry = run.protocol.registry.to_dict()
    for sub in run.protocol.submissions:
        doc = {
            "metadata": ResponseMetadata.for_receipt(sub.receipt).to_json_dict(),
            "pointer": str(sub.da_pointer),
            "operator_pubkey": keys[sub.operator].hex(),
            "registry": registry,
        }
        (out / "receipts" / f"{sub.id}.json").write_text(json.dumps(doc, indent=1))
    print(json.dumps({k: v for k, v in run.metrics.to_dict().items() if k != "final_stakes"}, sort_keys=True))
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    res = replay_verify(Path(args.log).read_text(), cfg)
    if res.ok:
        print("replay: identical; receipts and inclusion proofs verify")
        return 0
    print(f"replay: diverges at line {res.line}: {res.reason}")
    return 1


def cmd_econ_sweep(args: argparse.Namespace) -> int:
    grid = json.loads(Path(args.grid).read_text())
    rows = sweep(grid["pi_c"], grid["G"], grid["S_slash"], int(grid.get("trials", 1000)), int(grid.get("seed", 0)))
    if args.out:
        write_csv(rows, args.out)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return 0


def cmd_verify_receipt(args: argparse.Namespace) -> int:
    doc = json.loads(Path(args.receipt).read_text())
    meta = ResponseMetadata.from_json_dict(doc["metadata"])
    registry = Registry.from_dict(doc.get("registry", {}))
    verdict, _, _, _ = audit_public(doc["pointer"], meta, DaArchive.load(args.da),
                                    bytes.fromhex(doc["operator_pubkey"]), registry)
    print(json.dumps({"status": verdict.status.value, "step": verdict.step, "detail": verdict.detail}))
    return 0 if verdict.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="verinfer", description="verifiable inference simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)
    r = sub.add_parser("replay", help="re-run a scenario and compare its log")
    r.add_argument("--log", required=True)
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_replay)
    r = sub.add_parser("econ-sweep", help="Monte Carlo payoff curve")
    r.add_argument("--grid", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_econ_sweep)
    r = sub.add_parser("verify-receipt", help="audit one receipt against a DA dump")
    r.add_argument("--receipt", required=True)
    r.add_argument("--da", required=True)
    r.set_defaults(func=cmd_verify_receipt)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
