"""Synchronous round loop, metrics, matrix-form oracle and runtime invariant checks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .protocol import (INACTIVE_STATE, AgentState, BroadcastPair, Mode, ProtocolError,
                       RoundWeights, arriving_update, assign_departing_weights,
                       assign_remaining_weights, broadcast_values, classify_mode,
                       departing_finalize, remaining_out_neighbors, remaining_update)
from .scenario import (RoundEvents, Scenario, Streams, build_graph, initial_activation,
                       sample_mass, sample_round_events)
from .topology import OpenDigraph, next_activation, validate_transition

MASS_TOL = 1e-9
COLUMN_TOL = 1e-12
ORACLE_TOL = 1e-12

METRICS_HEADER = ("k", "n", "xbar", "err", "sum_x", "sum_y", "flags")
STATES_HEADER = ("k", "agent", "active", "x", "y", "z", "xhat")


class InvariantViolation(AssertionError):
    def __init__(self, msg: str, round: int | None = None, agent: int | None = None):
        self.round = round
        self.agent = agent
        ctx = []
        if round is not None:
            ctx.append(f"round {round}")
        if agent is not None:
            ctx.append(f"agent {agent}")
        super().__init__(f"{', '.join(ctx)}: {msg}" if ctx else msg)


@dataclass
class WorldState:
    round: int
    graph: OpenDigraph
    active: tuple[bool, ...]
    states: list[AgentState]
    flags: int = 0

    @classmethod
    def initial(cls, graph: OpenDigraph, active: Sequence[bool], masses: dict[int, float]) -> "WorldState":
        """All initially active agents register their joining mass at round 0."""
        states = [arriving_update(masses[j]) if a else INACTIVE_STATE for j, a in enumerate(active)]
        return cls(0, graph, tuple(bool(a) for a in active), states)

    def vectors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        s = self.states
        return (np.array([a.x for a in s]), np.array([a.y for a in s]),
                np.array([a.x_hat for a in s]), np.array([a.y_hat for a in s]))


@dataclass
class FeedbackCache:
    """Remaining-out-neighbor sets keyed on the activation transition.

    With caching on, acknowledgements are recomputed only when the
    transition differs from the previous round's.
    """

    enabled: bool = False
    key: tuple | None = None
    table: dict[int, list[int]] = field(default_factory=dict)
    recomputations: int = 0


def round_weights(w: WorldState, active_next: Sequence[bool],
                  cache: FeedbackCache | None = None) -> tuple[list[Mode], RoundWeights]:
    """Mode classification, feedback exchange and weight assignment for one round."""
    g = w.graph
    modes = [classify_mode(a, b) for a, b in zip(w.active, active_next)]
    key = (w.active, tuple(active_next))
    if cache is not None and cache.enabled and cache.key == key:
        table = cache.table
    else:
        table = {j: remaining_out_neighbors(g.out_neighbors(j), modes)
                 for j, m in enumerate(modes) if m in (Mode.REMAINING, Mode.DEPARTING)}
        if cache is not None:
            cache.key, cache.table = key, table
            cache.recomputations += 1
    c: dict[tuple[int, int], float] = {}
    c_tilde: dict[tuple[int, int], float] = {}
    for j, m in enumerate(modes):
        if m is Mode.REMAINING:
            for l, v in assign_remaining_weights(j, table[j]).items():
                c[(j, l)] = v
        elif m is Mode.DEPARTING:
            try:
                frag = assign_departing_weights(j, table[j])
            except ProtocolError as exc:
                raise type(exc)(f"round {w.round}, agent {j}: {exc}") from None
            for l, v in frag.items():
                c_tilde[(j, l)] = v
    return modes, RoundWeights(c, c_tilde)


def advance(w: WorldState, ev: RoundEvents, cache: FeedbackCache | None = None
            ) -> tuple[WorldState, list[Mode], RoundWeights, tuple[bool, ...]]:
    """Like :func:`step` but also returns the round's modes, weights and next activation."""
    active_next = next_activation(w.active, ev.departures, ev.arrival_ids())
    modes, weights = round_weights(w, active_next, cache)

    # one broadcast pair per sender; recipients are the keys of its weight fragment
    inbox: dict[int, list[tuple[int, BroadcastPair]]] = {}
    outgoing: dict[int, tuple[float, float, list[int]]] = {}
    for (j, l), v in weights.c.items():
        outgoing.setdefault(j, (v, 0.0, []))[2].append(l)
    for (j, l), v in weights.c_tilde.items():
        outgoing.setdefault(j, (0.0, v, []))[2].append(l)
    for j in sorted(outgoing):
        c, ct, recipients = outgoing[j]
        pair = broadcast_values(w.states[j], modes[j], c, ct)
        for l in recipients:
            inbox.setdefault(l, []).append((j, pair))

    arrivals = dict(ev.arrivals)
    states = list(w.states)
    flags = w.flags
    for j, m in enumerate(modes):
        if m is Mode.REMAINING:
            states[j], degenerate = remaining_update(w.states[j], inbox.get(j, ()))
            flags += degenerate
        elif m is Mode.DEPARTING:
            states[j] = departing_finalize(w.states[j])
        elif m is Mode.ARRIVING:
            states[j] = arriving_update(arrivals[j])
    nxt = WorldState(w.round + 1, w.graph, active_next, states, flags)
    return nxt, modes, weights, active_next


def step(w: WorldState, ev: RoundEvents, cache: FeedbackCache | None = None) -> WorldState:
    """One synchronous OpenRC round; ``ev`` must already be validated."""
    return advance(w, ev, cache)[0]


def target_average(activation: Sequence[bool], states: Sequence[AgentState]) -> float:
    total = 0.0
    n = 0
    for a, s in zip(activation, states):
        if a:
            total += s.x_hat
            n += 1
    if n == 0:
        raise ValueError("target average undefined with no active agent")
    return total / n


def consensus_error(activation: Sequence[bool], states: Sequence[AgentState], x_bar: float) -> float:
    """Euclidean distance of the active agents' ratios from ``x_bar``.

    Inactive agents are left out entirely rather than contributing ``-x_bar``.
    """
    return math.sqrt(sum((s.z - x_bar) ** 2 for a, s in zip(activation, states) if a))


@dataclass
class SystemMatrices:
    C: np.ndarray
    C_tilde: np.ndarray
    W: np.ndarray


def build_matrices(w: WorldState, weights: RoundWeights, active_next: Sequence[bool]) -> SystemMatrices:
    """Receiver-row matrices: ``C[l, j]`` is what sender ``j`` puts on receiver ``l``."""
    n = w.graph.pool_size
    C = np.zeros((n, n))
    Ct = np.zeros((n, n))
    for (j, l), v in weights.c.items():
        C[l, j] = v
    for (j, l), v in weights.c_tilde.items():
        Ct[l, j] = v
    now = np.asarray(w.active, dtype=float)
    nxt = np.asarray(active_next, dtype=float)
    return SystemMatrices(C, Ct, np.diag(nxt * (1.0 - now)))


def oracle_step(x, y, x_hat, y_hat, x_hat_next, y_hat_next, m: SystemMatrices):
    """Vector-matrix form of one round:
    ``x' = C x + C~ (x - x^) + W x^(k+1)`` and the same for ``y``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    x_next = m.C @ x + m.C_tilde @ (x - np.asarray(x_hat, float)) + m.W @ np.asarray(x_hat_next, float)
    y_next = m.C @ y + m.C_tilde @ (y - np.asarray(y_hat, float)) + m.W @ np.asarray(y_hat_next, float)
    return x_next, y_next


def mass_check(w: WorldState) -> tuple[float, float]:
    """Active-set residuals ``(sum x - sum x^, sum y - sum y^)``, summed in id order."""
    sx = sxh = sy = syh = 0.0
    for a, s in zip(w.active, w.states):
        if a:
            sx += s.x
            sxh += s.x_hat
            sy += s.y
            syh += s.y_hat
    rx = sx - sxh
    ry = sy - syh
    return rx, ry


def mass_tolerances(w: WorldState) -> tuple[float, float]:
    sum_x_hat = sum(s.x_hat for a, s in zip(w.active, w.states) if a)
    n = sum(w.active)
    return MASS_TOL * max(1.0, abs(sum_x_hat)), MASS_TOL * n


def column_stochasticity_check(m: SystemMatrices, active_now: Sequence[bool],
                               active_next: Sequence[bool]) -> float:
    """Largest deviation from 1 of a sender column of ``C + C~`` over rows active now.

    Only senders that are active this round (remaining or departing) count.
    """
    now = np.asarray(active_now, dtype=bool)
    if not now.any():
        return 0.0
    sums = (m.C + m.C_tilde)[now][:, now].sum(axis=0)
    return float(np.max(np.abs(sums - 1.0)))


@dataclass(frozen=True)
class MetricsRecord:
    k: int
    n_k: int
    x_bar: float
    err: float
    sum_x: float
    sum_y: float
    flags: int


def metrics(w: WorldState) -> MetricsRecord:
    x_bar = target_average(w.active, w.states)
    sum_x = sum_y = 0.0
    for a, s in zip(w.active, w.states):
        if a:
            sum_x += s.x
            sum_y += s.y
    return MetricsRecord(w.round, sum(w.active), x_bar, consensus_error(w.active, w.states, x_bar),
                         sum_x, sum_y, w.flags)


@dataclass
class RunResult:
    metrics: list[MetricsRecord]
    final: WorldState
    initial: WorldState
    states_trace: list[tuple[int, list[AgentState], tuple[bool, ...]]] | None = None
    events: list[RoundEvents] = field(default_factory=list)
    max_mass_residual: tuple[float, float] = (0.0, 0.0)
    max_column_deviation: float | None = None
    max_oracle_deviation: float | None = None
    skipped_events: int = 0
    feedback_recomputations: int = 0


def initialize(sc: Scenario, streams: Streams | None = None) -> tuple[WorldState, Streams]:
    streams = streams or Streams(sc.seed)
    g = build_graph(sc, streams)
    active = initial_activation(sc, g, streams)
    masses = {j: sample_mass(sc.mass_initial, streams.mass) for j, a in enumerate(active) if a}
    return WorldState.initial(g, active, masses), streams


def run(sc: Scenario, *, check: bool = True, oracle: bool = False, trace_states: bool = False,
        cache_feedback: bool = False) -> RunResult:
    """Run ``sc.rounds`` rounds; metrics are recorded after every step (k = 1..rounds).

    ``check`` verifies mass preservation and column stochasticity each round and
    raises :class:`InvariantViolation` on failure. ``oracle`` additionally carries
    an independent matrix-form trajectory and requires it to match the per-agent
    states componentwise within ``ORACLE_TOL``.
    """
    w, streams = initialize(sc)
    result = RunResult(metrics=[], final=w, initial=w)
    cache = FeedbackCache(enabled=cache_feedback)
    if trace_states:
        result.states_trace = [(0, list(w.states), w.active)]
    ox = oy = None
    if oracle:
        ox, oy, _, _ = w.vectors()
        result.max_oracle_deviation = 0.0
    if check or oracle:
        result.max_column_deviation = 0.0
    worst_x = worst_y = 0.0

    for k in range(sc.rounds):
        ev = sample_round_events(sc, k, w.graph, w.active, streams)
        result.events.append(ev)
        result.skipped_events += ev.skipped
        nxt, modes, weights, active_next = advance(w, ev, cache)

        if check or oracle:
            m = build_matrices(w, weights, active_next)
            dev = column_stochasticity_check(m, w.active, active_next)
            result.max_column_deviation = max(result.max_column_deviation, dev)
            if check and dev > COLUMN_TOL:
                raise InvariantViolation(f"column sum deviates from 1 by {dev:.3e}", round=k)
            if oracle:
                _, _, xh, yh = w.vectors()
                _, _, xh1, yh1 = nxt.vectors()
                ox, oy = oracle_step(ox, oy, xh, yh, xh1, yh1, m)
                px, py, _, _ = nxt.vectors()
                diff = np.maximum(np.abs(px - ox), np.abs(py - oy))
                worst = int(np.argmax(diff))
                result.max_oracle_deviation = max(result.max_oracle_deviation, float(diff[worst]))
                if diff[worst] > ORACLE_TOL:
                    raise InvariantViolation(
                        f"per-agent state departs from matrix oracle by {diff[worst]:.3e}",
                        round=k + 1, agent=worst)
        if check:
            rx, ry = mass_check(nxt)
            tx, ty = mass_tolerances(nxt)
            worst_x, worst_y = max(worst_x, abs(rx)), max(worst_y, abs(ry))
            if abs(rx) > tx or abs(ry) > ty:
                raise InvariantViolation(f"mass not preserved: residuals ({rx:.3e}, {ry:.3e})",
                                         round=k + 1)

        w = nxt
        result.metrics.append(metrics(w))
        if trace_states:
            result.states_trace.append((w.round, list(w.states), w.active))

    result.final = w
    result.max_mass_residual = (worst_x, worst_y)
    result.feedback_recomputations = cache.recomputations
    return result


def replay_events(sc: Scenario) -> list[RoundEvents]:
    """Sample and validate the event stream without running the protocol."""
    w, streams = initialize(sc)
    active = w.active
    out = []
    for k in range(sc.rounds):
        ev = sample_round_events(sc, k, w.graph, active, streams)
        report = validate_transition(w.graph, active, ev.departures, ev.arrival_ids())
        if not report.ok:
            raise InvariantViolation(report.describe(), round=k)
        out.append(ev)
        active = next_activation(active, ev.departures, ev.arrival_ids())
    return out


def _fmt(v: float) -> str:
    return repr(float(v))


def write_metrics_csv(records: Iterable[MetricsRecord], fh) -> None:
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(METRICS_HEADER)
    for r in records:
        wr.writerow((r.k, r.n_k, _fmt(r.x_bar), _fmt(r.err), _fmt(r.sum_x), _fmt(r.sum_y), r.flags))


def write_states_csv(trace, fh) -> None:
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(STATES_HEADER)
    for k, states, active in trace:
        for j, (a, s) in enumerate(zip(active, states)):
            wr.writerow((k, j, int(a), _fmt(s.x), _fmt(s.y), _fmt(s.z), _fmt(s.x_hat)))


def metrics_csv_text(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    write_metrics_csv(records, buf)
    return buf.getvalue()
