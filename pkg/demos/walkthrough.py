"""Step through the four-channel hub example and print what each party sees.

    python3 demos/walkthrough.py
"""
from __future__ import annotations

from starfish.engine import bundled_scenario

STOPS = [
    (24, "channels open; H holds 0, 5, 10 and 21 on its four channels"),
    (40, "H pools its four sides into one merge"),
    (54, "capacity moved from D and C over to A"),
    (59, "H pays A 2, B 1 and C 3 on the edges"),
    (64, "4 of A's capacity moved to B"),
]


def show(world, round_: int, note: str) -> None:
    hub = world.parties["H"]
    print(f"round {round_:3d}  {note}")
    m = hub.merges.get("M")
    if m is None:
        for cid, ch in sorted(hub.channels.items()):
            print(f"           {cid}: {ch.balances}")
        return
    print(f"           capacities {dict(m.caps)} pooled {m.pooled()}")
    for user, edge in sorted(m.edges.items()):
        print(f"           edge {user}: {edge.balances} v{edge.version}")


def main() -> None:
    world = bundled_scenario("fig2").build()
    for round_, note in STOPS:
        world.run_until(round_)
        show(world, round_, note)
    last = world.run_until_idle() - 1
    contract = world.merge_contract("M")
    print(f"round {last:3d}  D left the merge; escrow {contract.escrow}, "
          f"remaining {contract.merge.capacities()}")
    print(f"           HD settled on chain as {world.channel_contract('HD').channel.balanceC}")


if __name__ == "__main__":
    main()
