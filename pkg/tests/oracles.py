"""Independent reference implementations used as test oracles.

Written in plain Python over lists so they share no code with the package.
"""

from __future__ import annotations

import math


def window_edges(n: int, w: int) -> set[tuple[int, int]]:
    out = set()
    for i in range(n):
        for j in range(n):
            if 1 <= abs(i - j) <= w:
                out.add((min(i, j), max(i, j)))
    return out


def cos(a: list[float], b: list[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def lite_update(vectors: list[list[float]], i: int, alpha: float, k: int) -> tuple[list[float], list[int]]:
    """Return (new embedding of node i, its top-k neighbor indices)."""
    scored = [(-cos(vectors[i], vectors[j]), j) for j in range(len(vectors)) if j != i]
    scored.sort()
    top = [j for _, j in scored[:k]]
    weights = [cos(vectors[i], vectors[j]) for j in top]
    total = sum(weights)
    if total <= 0:
        return list(vectors[i]), top
    mean = [sum(wt * vectors[j][c] for wt, j in zip(weights, top)) / total for c in range(len(vectors[i]))]
    return [alpha * vectors[i][c] + (1 - alpha) * mean[c] for c in range(len(vectors[i]))], top


def greedy_readout(
    vectors: list[list[float]],
    adjacency: dict[int, set[int]],
    meaningful: list[bool],
    query: list[float],
    k: int,
) -> list[int]:
    """Replay of the selection loop over node indices (index = reading-order rank)."""
    cands = [i for i in range(len(vectors)) if meaningful[i]]
    ranked = sorted(cands, key=lambda i: (-cos(vectors[i], query), i))
    out: list[int] = []
    for v in ranked:
        if len(out) >= k:
            break
        if v not in out:
            out.append(v)
        for nb in sorted(adjacency.get(v, ())):
            if meaningful[nb] and nb not in out:
                out.append(nb)
    return out


def has_cycle(nodes: list[str], edges: list[tuple[str, str]]) -> bool:
    """Iterative depth-first search with an explicit on-stack set."""
    adj: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, [])
    done: set[str] = set()
    for start in adj:
        if start in done:
            continue
        on_stack = {start}
        stack = [(start, iter(adj[start]))]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                on_stack.discard(node)
                done.add(node)
            elif nxt in on_stack:
                return True
            elif nxt not in done:
                on_stack.add(nxt)
                stack.append((nxt, iter(adj[nxt])))
    return False
