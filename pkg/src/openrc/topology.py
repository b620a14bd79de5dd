"""Potential digraph over the agent pool, activation-induced subgraphs and
strong-connectivity checks.

Edges are ordered pairs ``(i, j)`` meaning agent ``j`` receives from agent
``i``. Self-loops are never stored; an agent's own contribution is carried by
its self weight in the protocol layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Edge = tuple[int, int]


@dataclass(frozen=True)
class OpenDigraph:
    pool_size: int
    edges: frozenset[Edge]
    _out: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _in: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        out = [[] for _ in range(self.pool_size)]
        inn = [[] for _ in range(self.pool_size)]
        for i, j in self.edges:
            if not (0 <= i < self.pool_size and 0 <= j < self.pool_size):
                raise ValueError(f"edge {i}->{j} outside pool of size {self.pool_size}")
            if i == j:
                raise ValueError(f"self-loop on agent {i}")
            out[i].append(j)
            inn[j].append(i)
        object.__setattr__(self, "_out", tuple(tuple(sorted(o)) for o in out))
        object.__setattr__(self, "_in", tuple(tuple(sorted(o)) for o in inn))

    @classmethod
    def from_edges(cls, pool_size: int, edges: Iterable[Edge]) -> "OpenDigraph":
        return cls(pool_size, frozenset((int(i), int(j)) for i, j in edges))

    def out_neighbors(self, j: int) -> tuple[int, ...]:
        """Potential out-neighbors of ``j`` in ascending id order."""
        return self._out[j]

    def in_neighbors(self, j: int) -> tuple[int, ...]:
        return self._in[j]

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges)


def cycle_graph(pool_size: int) -> OpenDigraph:
    """Directed cycle 0 -> 1 -> ... -> n-1 -> 0."""
    if pool_size == 1:
        return OpenDigraph(1, frozenset())
    return OpenDigraph(pool_size, frozenset((i, (i + 1) % pool_size) for i in range(pool_size)))


def active_ids(activation: Sequence[bool]) -> list[int]:
    return [j for j, a in enumerate(activation) if a]


def induced_subgraph(g: OpenDigraph, activation: Sequence[bool]) -> frozenset[Edge]:
    """Potential edges whose endpoints are both active."""
    if len(activation) != g.pool_size:
        raise ValueError(f"activation has {len(activation)} entries, pool has {g.pool_size}")
    return frozenset((i, j) for i, j in g.edges if activation[i] and activation[j])


def strongly_connected_components(nodes: Iterable[int], edges: Iterable[Edge]) -> list[list[int]]:
    """Tarjan's algorithm, iterative so deep graphs do not hit the recursion limit.

    Returns the components with members sorted, ordered by smallest member.
    """
    nodes = sorted(set(nodes))
    adj: dict[int, list[int]] = {v: [] for v in nodes}
    for i, j in edges:
        adj[i].append(j)

    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0

    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(adj[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(adj[w])))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
    comps.sort(key=lambda c: c[0])
    return comps


def is_strongly_connected(nodes: Iterable[int], edges: Iterable[Edge]) -> bool:
    nodes = list(nodes)
    if not nodes:
        raise ValueError("strong connectivity is undefined for an empty node set")
    return len(strongly_connected_components(nodes, edges)) == 1


def generate_pool_graph(pool_size: int, extra_edge_prob: float, rng: np.random.Generator) -> OpenDigraph:
    """Random digraph with a Hamiltonian backbone cycle plus Bernoulli extra edges.

    The backbone visits the pool in a random order, so the full-pool graph is
    strongly connected. Every other ordered pair (no self-loops) is added
    independently with probability ``extra_edge_prob``.
    """
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    if not 0.0 <= extra_edge_prob <= 1.0:
        raise ValueError("extra_edge_prob must lie in [0, 1]")
    perm = rng.permutation(pool_size)
    edges: set[Edge] = set()
    if pool_size > 1:
        for a, b in zip(perm, np.roll(perm, -1)):
            edges.add((int(a), int(b)))
    mask = rng.random((pool_size, pool_size)) < extra_edge_prob
    np.fill_diagonal(mask, False)
    for i, j in zip(*np.nonzero(mask)):
        edges.add((int(i), int(j)))
    return OpenDigraph(pool_size, frozenset(edges))


@dataclass(frozen=True)
class TransitionReport:
    """Outcome of :func:`validate_transition`.

    ``components`` lists the strongly connected components of the next active
    subgraph when it is not strongly connected (empty otherwise); ``stranded``
    lists departing agents without a remaining out-neighbor.
    """

    components: tuple[tuple[int, ...], ...] = ()
    stranded: tuple[int, ...] = ()
    empty: bool = False

    @property
    def ok(self) -> bool:
        return not (self.components or self.stranded or self.empty)

    def describe(self) -> str:
        if self.ok:
            return "ok"
        parts = []
        if self.empty:
            parts.append("no agent would remain active")
        if self.components:
            comps = "; ".join("{" + ",".join(map(str, c)) + "}" for c in self.components)
            parts.append(f"next active graph not strongly connected, components: {comps}")
        if self.stranded:
            parts.append("departing agents with no remaining out-neighbor: "
                         + ",".join(map(str, self.stranded)))
        return "; ".join(parts)


def next_activation(activation: Sequence[bool], departures: Iterable[int],
                    arrivals: Iterable[int]) -> tuple[bool, ...]:
    nxt = list(activation)
    for j in departures:
        nxt[j] = False
    for j in arrivals:
        nxt[j] = True
    return tuple(nxt)


def validate_transition(g: OpenDigraph, activation: Sequence[bool], departures: Iterable[int],
                        arrivals: Iterable[int]) -> TransitionReport:
    """Check a proposed churn step against strong connectivity and stranded mass.

    Raises ``ValueError`` when the proposal itself is malformed (departing an
    inactive agent, arriving an active one, or both at once).
    """
    departures = set(departures)
    arrivals = set(arrivals)
    if len(activation) != g.pool_size:
        raise ValueError("activation length does not match the pool")
    if departures & arrivals:
        raise ValueError(f"agents both arriving and departing: {sorted(departures & arrivals)}")
    bad = sorted(j for j in departures if not activation[j])
    if bad:
        raise ValueError(f"departing agents are not active: {bad}")
    bad = sorted(j for j in arrivals if activation[j])
    if bad:
        raise ValueError(f"arriving agents are already active: {bad}")

    nxt = next_activation(activation, departures, arrivals)
    stranded = tuple(sorted(
        j for j in departures
        if not any(activation[l] and l not in departures for l in g.out_neighbors(j))
    ))
    nodes = active_ids(nxt)
    if not nodes:
        return TransitionReport(stranded=stranded, empty=True)
    comps = strongly_connected_components(nodes, induced_subgraph(g, nxt))
    components = tuple(tuple(c) for c in comps) if len(comps) > 1 else ()
    return TransitionReport(components=components, stranded=stranded)
