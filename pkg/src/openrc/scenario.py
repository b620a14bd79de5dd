"""Churn scenarios: file format, built-in experiment, and per-round event sampling.

Round convention: the events sampled at round ``k`` move the activation from
``alpha(k)`` to ``alpha(k+1)``. A churn window ``(start, end]`` allows the
network to change at destination rounds ``start < k+1 <= end``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .topology import (OpenDigraph, active_ids, cycle_graph, generate_pool_graph,
                       induced_subgraph, is_strongly_connected, validate_transition)

log = logging.getLogger(__name__)

RETRY_BUDGET = 32

# spawn keys of the independent random streams derived from the scenario seed
STREAMS = {"graph": 0, "initial": 1, "churn": 2, "mass": 3}


class ScenarioError(ValueError):
    """Malformed or unrealizable scenario. ``lineno`` is set for parse errors,
    ``round`` for failures while sampling events."""

    def __init__(self, msg: str, lineno: int | None = None, round: int | None = None):
        self.lineno = lineno
        self.round = round
        where = []
        if lineno is not None:
            where.append(f"line {lineno}")
        if round is not None:
            where.append(f"round {round}")
        super().__init__(f"{', '.join(where)}: {msg}" if where else msg)


@dataclass(frozen=True)
class MassDist:
    kind: str  # "uniform" or "const"
    lo: float
    hi: float

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "MassDist":
        if lo > hi:
            raise ValueError(f"uniform bounds out of order: {lo} > {hi}")
        return cls("uniform", float(lo), float(hi))

    @classmethod
    def const(cls, v: float) -> "MassDist":
        return cls("const", float(v), float(v))

    def to_directive(self) -> str:
        if self.kind == "const":
            return f"const {self.lo!r}"
        return f"uniform {self.lo!r} {self.hi!r}"


def sample_mass(dist: MassDist, rng: np.random.Generator) -> float:
    if dist.kind == "const":
        return dist.lo
    if dist.lo > dist.hi:
        raise ValueError(f"uniform bounds out of order: {dist.lo} > {dist.hi}")
    return float(rng.uniform(dist.lo, dist.hi))


@dataclass(frozen=True)
class ChurnWindow:
    start: int
    end: int
    event_prob: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"churn window start {self.start} must be < end {self.end}")
        if not 0.0 <= self.event_prob <= 1.0:
            raise ValueError(f"churn probability {self.event_prob} outside [0, 1]")

    def covers(self, k: int) -> bool:
        """True when the step out of round ``k`` may change the network."""
        return self.start < k + 1 <= self.end


@dataclass(frozen=True)
class ScriptedEvent:
    round: int
    kind: str  # "arrive" or "depart"
    agent: int
    mass: float | None = None


@dataclass(frozen=True)
class GraphSpec:
    kind: str  # "cycle", "auto" or "edges"
    extra_edge_prob: float = 0.0
    edges: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class Scenario:
    pool_size: int
    graph: GraphSpec
    rounds: int
    initial_active: tuple[int, ...] | None = None
    initial_random: int | None = None
    churn_windows: tuple[ChurnWindow, ...] = ()
    scripted_events: tuple[ScriptedEvent, ...] = ()
    mass_initial: MassDist = MassDist.uniform(1.0, 10.0)
    mass_arrival: MassDist = MassDist.uniform(10.0, 20.0)
    seed: int = 0

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))

    def window_at(self, k: int) -> ChurnWindow | None:
        for w in self.churn_windows:
            if w.covers(k):
                return w
        return None

    def to_text(self) -> str:
        """Serialize back into the scenario-file dialect."""
        lines = [f"pool {self.pool_size}"]
        if self.initial_random is not None:
            lines.append(f"initial random {self.initial_random}")
        else:
            lines.append("initial " + " ".join(map(str, self.initial_active)))
        if self.graph.kind == "cycle":
            lines.append("graph cycle")
        elif self.graph.kind == "auto":
            lines.append(f"graph auto {self.graph.extra_edge_prob!r}")
        else:
            lines.extend(f"edge {i} {j}" for i, j in self.graph.edges)
        lines.append(f"rounds {self.rounds}")
        lines.append(f"seed {self.seed}")
        lines.extend(f"interval {w.start} {w.end} {w.event_prob!r}" for w in self.churn_windows)
        lines.append(f"mass_initial {self.mass_initial.to_directive()}")
        lines.append(f"mass_arrival {self.mass_arrival.to_directive()}")
        for ev in self.scripted_events:
            if ev.kind == "arrive":
                lines.append(f"at {ev.round} arrive {ev.agent} {ev.mass!r}")
            else:
                lines.append(f"at {ev.round} depart {ev.agent}")
        return "\n".join(lines) + "\n"


PAPER_SCENARIO_TEXT = """\
# 150-agent pool, 100 initially active; churn 10% then 20% per round,
# each churn window followed by a stable stretch of 20 rounds.
pool 150
initial random 100
graph auto 0.1
rounds 200
seed 0
mass_initial uniform 1 10
mass_arrival uniform 10 20
interval 1 80 0.10
interval 101 180 0.20
"""


def paper_scenario() -> Scenario:
    return parse_scenario(PAPER_SCENARIO_TEXT)


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ScenarioError(f"malformed {what} {tok!r}", lineno) from None


def _float(tok: str, lineno: int, what: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ScenarioError(f"malformed {what} {tok!r}", lineno) from None
    if not np.isfinite(v):
        raise ScenarioError(f"non-finite {what} {tok!r}", lineno)
    return v


def _mass(args: list[str], lineno: int) -> MassDist:
    if len(args) == 3 and args[0] == "uniform":
        lo, hi = _float(args[1], lineno, "bound"), _float(args[2], lineno, "bound")
        if lo > hi:
            raise ScenarioError(f"uniform bounds out of order: {lo} > {hi}", lineno)
        return MassDist.uniform(lo, hi)
    if len(args) == 2 and args[0] == "const":
        return MassDist.const(_float(args[1], lineno, "mass"))
    raise ScenarioError("expected 'uniform <lo> <hi>' or 'const <v>'", lineno)


def parse_scenario(text: str) -> Scenario:
    """Parse the line-oriented scenario format.

    Directives: ``pool``, ``initial`` (ids or ``random <count>``), ``graph
    cycle|auto <p>``, ``edge <i> <j>``, ``rounds``, ``seed``, ``interval
    <start> <end> <prob>``, ``mass_initial``/``mass_arrival`` (``uniform <lo>
    <hi>`` or ``const <v>``), ``at <k> arrive <id> <mass>``, ``at <k> depart
    <id>``. ``#`` starts a comment.
    """
    pool = rounds = None
    seed = 0
    initial: tuple[int, ...] | None = None
    initial_random: int | None = None
    graph: GraphSpec | None = None
    edges: list[tuple[int, int, int]] = []
    windows: list[tuple[ChurnWindow, int]] = []
    events: list[tuple[ScriptedEvent, int]] = []
    mass_initial = MassDist.uniform(1.0, 10.0)
    mass_arrival = MassDist.uniform(10.0, 20.0)
    initial_line = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *args = line.split()
        if head == "pool":
            if len(args) != 1:
                raise ScenarioError("expected 'pool <n>'", lineno)
            pool = _int(args[0], lineno, "pool size")
            if pool < 1:
                raise ScenarioError("pool size must be >= 1", lineno)
        elif head == "initial":
            initial_line = lineno
            if args[:1] == ["random"]:
                if len(args) != 2:
                    raise ScenarioError("expected 'initial random <count>'", lineno)
                initial_random = _int(args[1], lineno, "count")
                initial = None
            else:
                if not args:
                    raise ScenarioError("initial needs at least one agent", lineno)
                initial = tuple(_int(a, lineno, "agent id") for a in args)
                initial_random = None
        elif head == "graph":
            if args == ["cycle"]:
                graph = GraphSpec("cycle")
            elif len(args) == 2 and args[0] == "auto":
                p = _float(args[1], lineno, "edge probability")
                if not 0.0 <= p <= 1.0:
                    raise ScenarioError(f"edge probability {p} outside [0, 1]", lineno)
                graph = GraphSpec("auto", extra_edge_prob=p)
            else:
                raise ScenarioError("expected 'graph cycle' or 'graph auto <p>'", lineno)
        elif head == "edge":
            if len(args) != 2:
                raise ScenarioError("expected 'edge <i> <j>'", lineno)
            i, j = _int(args[0], lineno, "agent id"), _int(args[1], lineno, "agent id")
            if i == j:
                raise ScenarioError(f"self-loop on agent {i}", lineno)
            edges.append((i, j, lineno))
        elif head == "rounds":
            if len(args) != 1:
                raise ScenarioError("expected 'rounds <n>'", lineno)
            rounds = _int(args[0], lineno, "round count")
            if rounds < 0:
                raise ScenarioError("round count must be >= 0", lineno)
        elif head == "seed":
            if len(args) != 1:
                raise ScenarioError("expected 'seed <u64>'", lineno)
            seed = _int(args[0], lineno, "seed")
            if not 0 <= seed < 2**64:
                raise ScenarioError("seed must be an unsigned 64-bit integer", lineno)
        elif head == "interval":
            if len(args) != 3:
                raise ScenarioError("expected 'interval <start> <end> <prob>'", lineno)
            start, end = _int(args[0], lineno, "round"), _int(args[1], lineno, "round")
            prob = _float(args[2], lineno, "probability")
            try:
                windows.append((ChurnWindow(start, end, prob), lineno))
            except ValueError as exc:
                raise ScenarioError(str(exc), lineno) from None
        elif head in ("mass_initial", "mass_arrival"):
            dist = _mass(args, lineno)
            if head == "mass_initial":
                mass_initial = dist
            else:
                mass_arrival = dist
        elif head == "at":
            if len(args) == 4 and args[1] == "arrive":
                ev = ScriptedEvent(_int(args[0], lineno, "round"), "arrive",
                                   _int(args[2], lineno, "agent id"),
                                   _float(args[3], lineno, "mass"))
            elif len(args) == 3 and args[1] == "depart":
                ev = ScriptedEvent(_int(args[0], lineno, "round"), "depart",
                                   _int(args[2], lineno, "agent id"))
            else:
                raise ScenarioError("expected 'at <k> arrive <id> <mass>' or 'at <k> depart <id>'", lineno)
            events.append((ev, lineno))
        else:
            raise ScenarioError(f"unknown directive {head!r}", lineno)

    if pool is None:
        raise ScenarioError("missing 'pool' directive")
    if rounds is None:
        raise ScenarioError("missing 'rounds' directive")
    if initial is None and initial_random is None:
        raise ScenarioError("missing 'initial' directive")
    if initial is not None:
        for a in initial:
            if not 0 <= a < pool:
                raise ScenarioError(f"agent id {a} outside pool of size {pool}", initial_line)
        if len(set(initial)) != len(initial):
            raise ScenarioError("duplicate agent in 'initial'", initial_line)
        initial = tuple(sorted(initial))
    elif not 1 <= initial_random <= pool:
        raise ScenarioError(f"initial count must lie in [1, {pool}]", initial_line)

    if edges:
        if graph is not None:
            raise ScenarioError("'edge' lines cannot be combined with a 'graph' directive", edges[0][2])
        for i, j, ln in edges:
            for a in (i, j):
                if not 0 <= a < pool:
                    raise ScenarioError(f"agent id {a} outside pool of size {pool}", ln)
        graph = GraphSpec("edges", edges=tuple(sorted({(i, j) for i, j, _ in edges})))
    elif graph is None:
        raise ScenarioError("missing graph: use 'graph cycle', 'graph auto <p>' or 'edge' lines")

    ordered = sorted(windows, key=lambda t: t[0].start)
    for (w, ln) in ordered:
        if w.end > rounds:
            raise ScenarioError(f"churn window ({w.start}, {w.end}] exceeds horizon {rounds}", ln)
        if w.start < 0:
            raise ScenarioError("churn window starts before round 0", ln)
    for (a, _), (b, ln) in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise ScenarioError(f"churn windows ({a.start}, {a.end}] and ({b.start}, {b.end}] overlap", ln)

    for ev, ln in events:
        if not 0 <= ev.agent < pool:
            raise ScenarioError(f"agent id {ev.agent} outside pool of size {pool}", ln)
        if not 0 <= ev.round < rounds:
            raise ScenarioError(f"event round {ev.round} outside [0, {rounds})", ln)
    seen: dict[tuple[int, int], int] = {}
    for ev, ln in events:
        key = (ev.round, ev.agent)
        if key in seen:
            raise ScenarioError(f"agent {ev.agent} has two events at round {ev.round}", ln)
        seen[key] = ln

    return Scenario(
        pool_size=pool, graph=graph, rounds=rounds,
        initial_active=initial, initial_random=initial_random,
        churn_windows=tuple(w for w, _ in ordered),
        scripted_events=tuple(ev for ev, _ in sorted(events, key=lambda t: (t[0].round, t[0].agent))),
        mass_initial=mass_initial, mass_arrival=mass_arrival, seed=seed,
    )


class Streams:
    """Independent named generators derived from one 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        for name, key in STREAMS.items():
            ss = np.random.SeedSequence(self.seed, spawn_key=(key,))
            setattr(self, name, np.random.Generator(np.random.PCG64(ss)))

    graph: np.random.Generator
    initial: np.random.Generator
    churn: np.random.Generator
    mass: np.random.Generator


def build_graph(sc: Scenario, streams: Streams) -> OpenDigraph:
    if sc.graph.kind == "cycle":
        return cycle_graph(sc.pool_size)
    if sc.graph.kind == "auto":
        return generate_pool_graph(sc.pool_size, sc.graph.extra_edge_prob, streams.graph)
    return OpenDigraph.from_edges(sc.pool_size, sc.graph.edges)


def initial_activation(sc: Scenario, g: OpenDigraph, streams: Streams) -> tuple[bool, ...]:
    """Resolve the initial active set and require it to induce a strongly connected graph.

    ``initial random`` draws up to RETRY_BUDGET subsets before giving up.
    """
    def as_vector(ids):
        a = [False] * sc.pool_size
        for j in ids:
            a[int(j)] = True
        return tuple(a)

    if sc.initial_active is not None:
        act = as_vector(sc.initial_active)
        if not is_strongly_connected(active_ids(act), induced_subgraph(g, act)):
            raise ScenarioError("initial active graph is not strongly connected", round=0)
        return act
    for _ in range(RETRY_BUDGET):
        act = as_vector(streams.initial.choice(sc.pool_size, size=sc.initial_random, replace=False))
        if is_strongly_connected(active_ids(act), induced_subgraph(g, act)):
            return act
    raise ScenarioError(f"no strongly connected initial set of {sc.initial_random} agents "
                        f"found in {RETRY_BUDGET} draws", round=0)


@dataclass(frozen=True)
class RoundEvents:
    arrivals: tuple[tuple[int, float], ...] = ()
    departures: tuple[int, ...] = ()
    skipped: bool = False  # a stochastic event was due but every candidate was rejected

    @property
    def empty(self) -> bool:
        return not (self.arrivals or self.departures)

    def arrival_ids(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.arrivals)


def sample_round_events(sc: Scenario, k: int, g: OpenDigraph, activation: Sequence[bool],
                        streams: Streams) -> RoundEvents:
    """Events moving the network from round ``k`` to ``k + 1``.

    Scripted events at ``k`` are always applied and must validate. Inside a
    churn window one Bernoulli(event_prob) trial decides whether a stochastic
    event happens; a fair coin picks arrival or departure (forced when only
    one is possible) and candidates of that kind are drawn without
    replacement until one validates or RETRY_BUDGET draws are spent.
    """
    if not 0 <= k < sc.rounds:
        raise ValueError(f"round {k} outside [0, {sc.rounds})")
    arr: dict[int, float] = {}
    dep: set[int] = set()
    for ev in sc.scripted_events:
        if ev.round != k:
            continue
        if ev.kind == "arrive":
            if activation[ev.agent]:
                raise ScenarioError(f"scripted arrival of already active agent {ev.agent}", round=k)
            arr[ev.agent] = ev.mass
        else:
            if not activation[ev.agent]:
                raise ScenarioError(f"scripted departure of inactive agent {ev.agent}", round=k)
            dep.add(ev.agent)
    if arr or dep:
        report = validate_transition(g, activation, dep, arr)
        if not report.ok:
            what = [f"depart {j}" for j in sorted(dep)] + [f"arrive {j}" for j in sorted(arr)]
            raise ScenarioError(f"scripted events ({', '.join(what)}) rejected: {report.describe()}",
                                round=k)

    window = sc.window_at(k)
    skipped = False
    if window is not None and streams.churn.random() < window.event_prob:
        arrive_pool = [j for j in range(sc.pool_size) if not activation[j] and j not in arr]
        depart_pool = [j for j in range(sc.pool_size) if activation[j] and j not in dep]
        coin = streams.churn.random() < 0.5
        if not arrive_pool:
            coin = False
        elif not depart_pool:
            coin = True
        candidates = arrive_pool if coin else depart_pool
        chosen = None
        for _ in range(min(RETRY_BUDGET, len(candidates))):
            idx = int(streams.churn.integers(len(candidates)))
            cand = candidates.pop(idx)
            if coin:
                report = validate_transition(g, activation, dep, set(arr) | {cand})
            else:
                report = validate_transition(g, activation, dep | {cand}, arr)
            if report.ok:
                chosen = cand
                break
        if chosen is None:
            skipped = True
            log.info("round %d: no valid churn candidate, stochastic event skipped", k)
        elif coin:
            arr[chosen] = sample_mass(sc.mass_arrival, streams.mass)
        else:
            dep.add(chosen)

    return RoundEvents(arrivals=tuple(sorted(arr.items())), departures=tuple(sorted(dep)),
                       skipped=skipped)
