"""Compiled payment replay for large sweeps.

Mirrors :mod:`starfish.sim.routing` rule for rule (same BFS order, same
donor and cycle choices) over flat arrays, so the two produce identical
metrics. Every payment's balance changes are journalled; the journal
doubles as the rollback log and as a per-payment conservation audit.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from ..network import NetworkState
from ..strategies import StrategyKind

KIND_CODE = {k: i for i, k in enumerate(StrategyKind)}
LN, CLOSE_OPEN, LOOP, REVIVE, HL, AO, AB, STARFISH = range(8)

OK = 0
NEGATIVE = 1
NOT_CONSERVED = 2


@njit(cache=True)
def _side(ends, c, node):
    return 0 if ends[c, 0] == node else 1


@njit(cache=True)
def _bfs(ends, bal, locked, adj_ptr, adj_nbr, adj_ch, s, r, amount, now, check,
         parent, pch, queue, path_c, path_p):
    """Fill path_c/path_p with the hops from s to r; returns hop count or -1."""
    n = adj_ptr.shape[0] - 1
    for i in range(n):
        parent[i] = -2
    parent[s] = -1
    head = 0
    tail = 0
    queue[tail] = s
    tail += 1
    found = False
    while head < tail and not found:
        x = queue[head]
        head += 1
        for j in range(adj_ptr[x], adj_ptr[x + 1]):
            y = adj_nbr[j]
            c = adj_ch[j]
            if parent[y] != -2 or locked[c] > now:
                continue
            if check and bal[c, _side(ends, c, x)] < amount:
                continue
            parent[y] = x
            pch[y] = c
            if y == r:
                found = True
                break
            queue[tail] = y
            tail += 1
    if not found:
        return -1
    hops = 0
    y = r
    while y != s:
        hops += 1
        y = parent[y]
    y = r
    k = hops - 1
    while y != s:
        path_c[k] = pch[y]
        path_p[k] = parent[y]
        y = parent[y]
        k -= 1
    return hops


@njit(cache=True)
def _shift(bal, ends, c, node, d, jc, jk, jd, jn):
    k = _side(ends, c, node)
    bal[c, k] += d
    jc[jn] = c
    jk[jn] = k
    jd[jn] = d
    return jn + 1


@njit(cache=True)
def _rebalance(kind, ends, bal, ledger, initial, locked, adj_ptr, adj_nbr, adj_ch,
               bind_ptr, bind_ch, node, target, need, now, delta, max_cycle,
               jc, jk, jd, jn, used, depth, parent, pch, queue, res):
    """Apply a rebalance in place. res = [new journal length, ops, ledger delta];
    returns False if infeasible (nothing applied)."""
    res[0] = jn
    res[1] = 0
    res[2] = 0
    if kind == LN:
        return False
    if kind == CLOSE_OPEN or kind == LOOP:
        if locked[target] > now:
            return False
        k = _side(ends, target, node)
        topup = initial[target, k] - bal[target, k]
        if topup <= 0 or ledger[node] < topup:
            return False
        ledger[node] -= topup
        res[0] = _shift(bal, ends, target, node, topup, jc, jk, jd, jn)
        res[1] = 2 if kind == CLOSE_OPEN else 1
        res[2] = -topup
        locked[target] = now + delta
        return True
    if kind == STARFISH:
        total = 0
        for j in range(adj_ptr[node], adj_ptr[node + 1]):
            c = adj_ch[j]
            if c != target and locked[c] <= now:
                b = bal[c, _side(ends, c, node)]
                if b > 0:
                    total += b
        if total < need:
            return False
        for j in range(adj_ptr[node], adj_ptr[node + 1]):
            used[j - adj_ptr[node]] = False
        left = need
        while left > 0:
            best = -1
            bestb = 0
            for j in range(adj_ptr[node], adj_ptr[node + 1]):
                c = adj_ch[j]
                if used[j - adj_ptr[node]] or c == target or locked[c] > now:
                    continue
                b = bal[c, _side(ends, c, node)]
                if b > bestb:  # strict: the earlier (smaller) neighbour wins ties
                    best = j
                    bestb = b
            used[best - adj_ptr[node]] = True
            take = min(bestb, left)
            jn = _shift(bal, ends, adj_ch[best], node, -take, jc, jk, jd, jn)
            left -= take
        res[0] = _shift(bal, ends, target, node, need, jc, jk, jd, jn)
        return True
    if kind == HL or kind == AO or kind == AB:
        slot = 2 * target + _side(ends, target, node)
        best = -1
        bestb = -1
        bestn = -1
        for j in range(bind_ptr[slot], bind_ptr[slot + 1]):
            c = bind_ch[j]
            if locked[c] > now:
                continue
            b = bal[c, _side(ends, c, node)]
            nb = ends[c, 1] if ends[c, 0] == node else ends[c, 0]
            if b >= need and (best == -1 or b > bestb or (b == bestb and nb < bestn)):
                best = c
                bestb = b
                bestn = nb
        if best == -1:
            return False
        jn = _shift(bal, ends, best, node, -need, jc, jk, jd, jn)
        res[0] = _shift(bal, ends, target, node, need, jc, jk, jd, jn)
        return True
    # Revive: shortest cycle node -> w -> ... -> v -> node
    v = ends[target, 1] if ends[target, 0] == node else ends[target, 0]
    if locked[target] > now or bal[target, _side(ends, target, v)] < need:
        return False
    max_hops = max_cycle - 2
    n = adj_ptr.shape[0] - 1
    for i in range(n):
        depth[i] = -1
    head = 0
    tail = 0
    for j in range(adj_ptr[node], adj_ptr[node + 1]):
        w = adj_nbr[j]
        c = adj_ch[j]
        if c == target or locked[c] > now or bal[c, _side(ends, c, node)] < need:
            continue
        parent[w] = node
        pch[w] = c
        depth[w] = 0
        queue[tail] = w
        tail += 1
    found = False
    while head < tail and not found:
        x = queue[head]
        head += 1
        if depth[x] >= max_hops:
            continue
        for j in range(adj_ptr[x], adj_ptr[x + 1]):
            y = adj_nbr[j]
            c = adj_ch[j]
            if y == node or depth[y] != -1 or locked[c] > now or bal[c, _side(ends, c, x)] < need:
                continue
            parent[y] = x
            pch[y] = c
            depth[y] = depth[x] + 1
            if y == v:
                found = True
                break
            queue[tail] = y
            tail += 1
    if not found:
        return False
    jn = _shift(bal, ends, target, v, -need, jc, jk, jd, jn)
    jn = _shift(bal, ends, target, node, need, jc, jk, jd, jn)
    y = v
    while y != node:
        x = parent[y]
        c = pch[y]
        jn = _shift(bal, ends, c, x, -need, jc, jk, jd, jn)
        jn = _shift(bal, ends, c, y, need, jc, jk, jd, jn)
        y = x
    res[0] = jn
    return True


@njit(cache=True)
def replay(kind, ends, bal, ledger, initial, locked, adj_ptr, adj_nbr, adj_ch,
           bind_ptr, bind_ch, senders, receivers, amounts, delta, max_cycle, full_audit):
    """Replay a workload in place.

    Returns (succeeded, refill ops, locked rounds, index of the first
    audit failure or -1, audit failure code).
    """
    n = adj_ptr.shape[0] - 1
    m = ends.shape[0]
    parent = np.empty(n, np.int64)
    pch = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    depth = np.empty(n, np.int64)
    path_c = np.empty(n, np.int64)
    path_p = np.empty(n, np.int64)
    topo_c = np.empty(n, np.int64)
    topo_p = np.empty(n, np.int64)
    used = np.empty(n, np.bool_)
    cap = 4 * m + 4 * n + 16
    jc = np.empty(cap, np.int64)
    jk = np.empty(cap, np.int64)
    jd = np.empty(cap, np.int64)
    res = np.zeros(3, np.int64)
    expected = bal.sum() + ledger.sum()
    succeeded = 0
    ops = 0
    locked_rounds = 0
    for t in range(senders.shape[0]):
        s = senders[t]
        r = receivers[t]
        amount = amounts[t]
        jn = 0
        ledger_delta = 0
        ok = False
        hops = _bfs(ends, bal, locked, adj_ptr, adj_nbr, adj_ch, s, r, amount, t, True,
                    parent, pch, queue, path_c, path_p)
        if hops < 0 and kind != LN:
            th = _bfs(ends, bal, locked, adj_ptr, adj_nbr, adj_ch, s, r, amount, t, False,
                      parent, pch, queue, topo_c, topo_p)
            if th >= 0:
                feasible = True
                for h in range(th):
                    c = topo_c[h]
                    payer = topo_p[h]
                    have = bal[c, _side(ends, c, payer)]
                    if have >= amount:
                        continue
                    if not _rebalance(kind, ends, bal, ledger, initial, locked, adj_ptr, adj_nbr,
                                      adj_ch, bind_ptr, bind_ch, payer, c, amount - have, t,
                                      delta, max_cycle, jc, jk, jd, jn, used, depth, parent, pch,
                                      queue, res):
                        feasible = False
                        break
                    jn = res[0]
                    ledger_delta += res[2]
                    if res[1] > 0:
                        ops += res[1]
                        locked_rounds += delta
                if feasible:
                    hops = _bfs(ends, bal, locked, adj_ptr, adj_nbr, adj_ch, s, r, amount, t,
                                True, parent, pch, queue, path_c, path_p)
                if hops < 0 and kind != CLOSE_OPEN and kind != LOOP:
                    # roll back the off-chain shifts of this attempt
                    for i in range(jn - 1, -1, -1):
                        bal[jc[i], jk[i]] -= jd[i]
                    jn = 0
        if hops >= 0:
            for h in range(hops):
                c = path_c[h]
                k = _side(ends, c, path_p[h])
                bal[c, k] -= amount
                bal[c, 1 - k] += amount
                jc[jn] = c
                jk[jn] = k
                jd[jn] = -amount
                jn += 1
                jc[jn] = c
                jk[jn] = 1 - k
                jd[jn] = amount
                jn += 1
            succeeded += 1
        # audit the transition
        total = ledger_delta
        for i in range(jn):
            total += jd[i]
            if bal[jc[i], jk[i]] < 0:
                return succeeded, ops, locked_rounds, t, NEGATIVE
        if total != 0:
            return succeeded, ops, locked_rounds, t, NOT_CONSERVED
        if full_audit:
            if bal.sum() + ledger.sum() != expected:
                return succeeded, ops, locked_rounds, t, NOT_CONSERVED
            for c in range(m):
                if bal[c, 0] < 0 or bal[c, 1] < 0:
                    return succeeded, ops, locked_rounds, t, NEGATIVE
    return succeeded, ops, locked_rounds, -1, OK


def arrays_for(state: NetworkState, partners: list[dict[int, list[int]]]) -> dict:
    """Flatten a network state (and Shaduf bindings) for :func:`replay`."""
    n, m = state.n, len(state.ends)
    adj_ptr = np.zeros(n + 1, np.int64)
    nbr, ch = [], []
    for x in range(n):
        for y, c in state.adj[x]:
            nbr.append(y)
            ch.append(c)
        adj_ptr[x + 1] = len(nbr)
    bind_ptr = np.zeros(2 * m + 1, np.int64)
    bind = []
    for c in range(m):
        for k in (0, 1):
            node = state.ends[c][k]
            bind.extend(partners[node].get(c, []) if partners else [])
            bind_ptr[2 * c + k + 1] = len(bind)
    return {
        "ends": np.array(state.ends, np.int64).reshape(m, 2),
        "bal": np.array(state.bal, np.int64).reshape(m, 2),
        "ledger": np.array(state.ledger, np.int64),
        "initial": np.array(state.initial, np.int64).reshape(m, 2),
        "locked": np.array(state.lockedUntil, np.int64),
        "adj_ptr": adj_ptr,
        "adj_nbr": np.array(nbr, np.int64),
        "adj_ch": np.array(ch, np.int64),
        "bind_ptr": bind_ptr,
        "bind_ch": np.array(bind, np.int64),
    }
