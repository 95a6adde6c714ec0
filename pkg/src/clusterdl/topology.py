"""Communication graphs: fresh random regular graphs and a static ring.

The gossip protocols draw a new r-regular graph every round via the
pairing (configuration-model) construction: lay out r stubs per node,
shuffle, pair consecutive stubs, and restart from scratch whenever the
pairing produces a self-loop or a duplicate edge. Connectivity is
recorded as a diagnostic but never enforced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TopologyInfeasibleError(ValueError):
    """The requested (n, r) admits no simple r-regular graph."""


class PairingRetryError(RuntimeError):
    """The pairing construction failed too many times in a row."""


@dataclass(frozen=True)
class Topology:
    """An undirected simple graph on nodes 0..n-1."""

    round_index: int
    n: int
    r: int
    edges: frozenset[tuple[int, int]]
    _adj: dict[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        adj: dict[int, list[int]] = {i: [] for i in range(self.n)}
        for u, v in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n) or u == v:
                raise ValueError(f"bad edge ({u}, {v}) for n={self.n}")
            adj[u].append(v)
            adj[v].append(u)
        object.__setattr__(
            self, "_adj", {i: tuple(sorted(vs)) for i, vs in adj.items()}
        )

    def degree(self, i: int) -> int:
        return len(self._adj[i])


def neighbors(topology: Topology, i: int) -> tuple[int, ...]:
    """Sorted neighbors of node i."""
    if not 0 <= i < topology.n:
        raise IndexError(f"node {i} out of range for n={topology.n}")
    return topology._adj[i]


def _check_feasible(n: int, r: int) -> None:
    if n < 2:
        raise TopologyInfeasibleError(f"need at least 2 nodes, got {n}")
    if not 1 <= r < n:
        raise TopologyInfeasibleError(f"degree r={r} must satisfy 1 <= r < n={n}")
    if (n * r) % 2 != 0:
        raise TopologyInfeasibleError(f"n*r must be even, got n={n}, r={r}")


def gen_r_regular(
    n: int, r: int, seed, round_index: int = 0, max_restarts: int = 1000
) -> Topology:
    """Sample a simple r-regular graph by repeated stub pairing.

    Each attempt shuffles the full stub multiset and pairs consecutive
    stubs; any self-loop or repeated edge voids the whole attempt. Raises
    PairingRetryError after ``max_restarts`` failed attempts.
    """
    _check_feasible(n, r)
    rng = np.random.default_rng(seed)
    stubs = np.repeat(np.arange(n), r)
    for _ in range(max_restarts):
        perm = rng.permutation(stubs)
        edges = set()
        ok = True
        for a, b in zip(perm[0::2], perm[1::2]):
            u, v = (int(a), int(b)) if a < b else (int(b), int(a))
            if u == v or (u, v) in edges:
                ok = False
                break
            edges.add((u, v))
        if ok:
            return Topology(round_index, n, r, frozenset(edges))
    raise PairingRetryError(
        f"no simple {r}-regular pairing on {n} nodes after {max_restarts} attempts"
    )


def gen_static_ring(n: int, r: int) -> Topology:
    """Ring lattice: node i connected to i +- 1 .. i +- r/2 (mod n)."""
    if r % 2 != 0:
        raise TopologyInfeasibleError(f"ring degree must be even, got r={r}")
    _check_feasible(n, r)
    edges = set()
    for i in range(n):
        for off in range(1, r // 2 + 1):
            j = (i + off) % n
            edges.add((min(i, j), max(i, j)))
    return Topology(0, n, r, frozenset(edges))


def is_connected(topology: Topology) -> bool:
    """Breadth-first reachability from node 0."""
    if topology.n == 0:
        return True
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in topology._adj[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return len(seen) == topology.n


def dump_edges(topology: Topology, path) -> None:
    """Write the edge list as sorted 'u v' lines (debug helper)."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in sorted(topology.edges):
            fh.write(f"{u} {v}\n")
