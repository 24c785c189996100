"""Run each bundled misbehaviour scenario and compare payouts with what the
honest parties last co-signed.

    python3 demos/adversaries.py
"""
from __future__ import annotations

from starfish.engine import bundled_scenario

# latest co-signed balance of every party, worked out by hand from the schedules
ENTITLED = {
    "stale-close": {"A": 14, "H": 26},
    "silent-party": {"A": 19, "B": 20, "H": 61},
    "stale-merge-close": {"A": 12, "B": 11, "C": 13, "D": 11, "H": 29},
    "double-spend": {"A": 28, "B": 0, "C": 0, "D": 10, "H": 7},
}


def main() -> None:
    for name, entitled in ENTITLED.items():
        sc = bundled_scenario(name)
        world = sc.build()
        world.run_until_idle()
        cheats = ", ".join(
            f"{p} {'+'.join(sorted(d.value for d in b.deviations))} from round {b.since}"
            for p, b in sorted(sc.adversary.items())) or "none"
        print(f"{name}  (deviating: {cheats})")
        for pid in sorted(world.parties):
            party = world.parties[pid]
            got = world.ledger.balance(pid)
            tag = "honest" if party.honest else "deviating"
            mark = "ok" if got == entitled[pid] else "MISMATCH"
            print(f"    {pid} {tag:9s} paid {got:3d}, entitled {entitled[pid]:3d}  {mark}")
        refused = [e for e in world.events if e.event.endswith("-rejected")]
        for e in refused:
            print(f"    round {e.round}: {e.source} refused ({e.event})")


if __name__ == "__main__":
    main()
