"""Command-line front end: protocol traces, op-count tables and sweeps.

Exit codes: 0 ok, 1 an invariant auditor fired, 2 bad config or scenario.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .core import HmacScheme, InvariantViolation
from .engine.scenario import Scenario, ScenarioError, bundled_scenario, load_scenario
from .engine.world import World
from .sim.experiment import (
    ConfigError,
    OUTPUT_NOTES,
    ExperimentConfig,
    results_csv,
    run_experiment,
    summary_csv,
)
from .strategies import StrategyKind, setup_ops

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2

OPCOUNT_KINDS = (StrategyKind.STARFISH, StrategyKind.SHADUF_HL, StrategyKind.SHADUF_AO,
                 StrategyKind.SHADUF_AB)

log = logging.getLogger("starfish")


class OutputExists(Exception):
    pass


def _claim(out: Path, names: Sequence[str], force: bool) -> dict[str, Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = {n: out / n for n in names}
    taken = [str(p) for p in paths.values() if p.exists()]
    if taken and not force:
        raise OutputExists(f"refusing to overwrite {', '.join(taken)} (use --force)")
    return paths


def _resolve_scenario(ref: str) -> Scenario:
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        return load_scenario(path)
    return bundled_scenario(ref)


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------


def final_state(world: World) -> dict:
    """Ledger, channel and merge states as plain data."""
    from .contracts import ChannelContract

    channels, merges = {}, {}
    for cid in sorted(world.contracts):
        c = world.contracts[cid]
        if isinstance(c, ChannelContract):
            channels[cid] = {"status": c.channel.status.value, "versionC": c.channel.versionC,
                             "balances": dict(sorted(c.channel.balanceC.items()))}
        else:
            merges[cid] = {"hub": c.hub, "status": c.merge.status.value,
                           "versionM": c.merge.versionM, "escrow": c.escrow,
                           "capacities": dict(sorted(c.merge.capacities().items()))}
    ledger = {p: world.ledger.balance(p) for p in sorted(world.parties)}
    return {"round": world.now, "ledger": ledger, "channels": channels, "merges": merges}


def format_state(state: dict) -> str:
    lines = [f"final round {state['round']}", "ledger:"]
    lines += [f"  {p:<8} {v}" for p, v in state["ledger"].items()]
    lines.append("channels:")
    for cid, ch in state["channels"].items():
        bal = " ".join(f"{u}={v}" for u, v in ch["balances"].items())
        lines.append(f"  {cid:<8} {ch['status']:<9} v{ch['versionC']:<3} {bal}")
    lines.append("merges:")
    for mid, m in state["merges"].items():
        caps = " ".join(f"{u}={v}" for u, v in m["capacities"].items())
        lines.append(f"  {mid:<8} {m['status']:<9} v{m['versionM']:<3} escrow={m['escrow']} {caps}")
    return "\n".join(lines)


def run_trace(scenario: Scenario, sink, seed: int | None = None,
              max_rounds: int = 100_000) -> World:
    scheme = HmacScheme(f"starfish/{seed}") if seed is not None else None
    world = scenario.build(sink=sink, tick_events=True, scheme=scheme)
    world.run_round()
    world.run_until_idle(max_rounds)
    return world


def cmd_trace(args) -> int:
    ref = args.scenario or args.config
    if not ref:
        log.error("trace needs a scenario file or bundled scenario name")
        return EXIT_CONFIG
    try:
        scenario = _resolve_scenario(ref)
        paths = _claim(Path(args.out), ["events.jsonl", "final.json"], args.force)
    except ScenarioError as exc:
        log.error("scenario error: %s", exc)
        return EXIT_CONFIG
    except OutputExists as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    with paths["events.jsonl"].open("w") as sink:
        try:
            world = run_trace(scenario, sink, args.seed)
        except InvariantViolation as exc:
            log.error("invariant violated: %s", exc)
            return EXIT_INVARIANT
    state = final_state(world)
    paths["final.json"].write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")
    print(format_state(state))
    return EXIT_OK


# ---------------------------------------------------------------------------
# opcount
# ---------------------------------------------------------------------------


def opcount_csv(max_n: int) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["N"] + [k.value for k in OPCOUNT_KINDS])
    for n in range(2, max_n + 1):
        w.writerow([n] + [setup_ops(k, n) for k in OPCOUNT_KINDS])
    return out.getvalue()


def cmd_opcount(args) -> int:
    if args.max_n < 2:
        log.error("--max-n must be at least 2")
        return EXIT_CONFIG
    text = opcount_csv(args.max_n)
    if args.out:
        try:
            paths = _claim(Path(args.out), ["opcount.csv"], args.force)
        except OutputExists as exc:
            log.error("%s", exc)
            return EXIT_CONFIG
        paths["opcount.csv"].write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg.seeds = [args.seed]
        cfg.validate()
        paths = _claim(Path(args.out), ["results.csv", "summary.csv", "config.json"], args.force)
        results = run_experiment(cfg, jobs=args.jobs)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OutputExists as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    written = {**cfg.to_dict(), "notes": OUTPUT_NOTES}
    paths["config.json"].write_text(json.dumps(written, indent=2, sort_keys=True) + "\n")
    paths["results.csv"].write_text(results_csv(results))
    paths["summary.csv"].write_text(summary_csv(results))
    failed = [r for r in results if r.error]
    for r in failed:
        log.error("cell %s x%d skew %s seed %d: %s", r.strategy, r.capacity_mult, r.skewness,
                  r.seed, r.error)
    print(f"{len(results) - len(failed)} cells written to {paths['results.csv']}")
    if failed:
        print(f"{len(failed)} cells failed an invariant audit")
        return EXIT_INVARIANT
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario (trace) or experiment (sweep) JSON file")
    common.add_argument("--out", help="output directory (created if absent)")
    common.add_argument("--seed", type=int, help="seed override")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--verbose", "-v", action="count", default=0)

    parser = argparse.ArgumentParser(prog="starfish", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", parents=[common], help="run a protocol scenario round by round")
    p.add_argument("scenario", nargs="?", help="scenario JSON path or bundled scenario name")
    p.set_defaults(func=cmd_trace, out_default="trace-out")

    p = sub.add_parser("opcount", parents=[common], help="setup on-chain operations per strategy")
    p.add_argument("--max-n", type=int, default=16, help="largest channel count N")
    p.set_defaults(func=cmd_opcount, out_default=None)

    p = sub.add_parser("sweep", parents=[common], help="success-ratio experiment sweep")
    p.set_defaults(func=cmd_sweep, out_default="sweep-out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out is None:
        args.out = args.out_default
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        log.error("--jobs must be at least 1")
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
