"""Per-agent OpenRC state machine.

Each round an active agent is either remaining or departing; agents that
become active at the end of the round are arriving and stay silent until the
next round. Senders learn how many of their out-neighbors remain through
one-bit acknowledgements, split their mass uniformly over those recipients
(plus themselves when remaining) and the receivers sum what arrives.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

Y_GUARD = 1e-12


class ProtocolError(RuntimeError):
    pass


class StrandedMassError(ProtocolError):
    """A departing agent has no remaining out-neighbor to hand its residual to."""


class Mode(enum.Enum):
    ARRIVING = "arriving"
    REMAINING = "remaining"
    DEPARTING = "departing"
    INACTIVE = "inactive"


@dataclass(frozen=True, slots=True)
class AgentState:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    x_hat: float = 0.0
    y_hat: float = 0.0
    active: bool = False


INACTIVE_STATE = AgentState()


@dataclass(frozen=True, slots=True)
class BroadcastPair:
    zeta_x: float
    zeta_y: float


@dataclass
class RoundWeights:
    """Weights of one round keyed by ``(sender, receiver)``.

    ``c[(j, l)]`` is the weight remaining agent ``j`` puts on receiver ``l``
    (``l == j`` for the self weight); ``c_tilde[(j, l)]`` is the weight a
    departing ``j`` puts on remaining out-neighbor ``l``.
    """

    c: dict[tuple[int, int], float]
    c_tilde: dict[tuple[int, int], float]

    def outgoing_sum(self, j: int) -> float:
        return (sum(w for (s, _), w in self.c.items() if s == j)
                + sum(w for (s, _), w in self.c_tilde.items() if s == j))


def classify_mode(active_now: bool, active_next: bool) -> Mode:
    if active_now:
        return Mode.REMAINING if active_next else Mode.DEPARTING
    return Mode.ARRIVING if active_next else Mode.INACTIVE


def feedback(sender_mode: Mode, receiver_active: bool) -> int:
    """Acknowledgement bit that out-neighbor ``l`` (in ``sender_mode``) returns.

    Only agents active this round are linked; asking an arriving or inactive
    agent for feedback is a protocol error.
    """
    if sender_mode is Mode.DEPARTING:
        return 0
    if sender_mode is Mode.REMAINING:
        if not receiver_active:
            raise ProtocolError("feedback requested by an inactive agent")
        return 1
    raise ProtocolError(f"no link to a {sender_mode.value} agent in the current graph")


def remaining_out_neighbors(out_neighbors: Iterable[int], modes: Sequence[Mode],
                            receiver_active: bool = True) -> list[int]:
    """Out-neighbors that acknowledged with a 1 bit; inactive-at-k ones are not linked."""
    return [l for l in out_neighbors
            if modes[l] in (Mode.REMAINING, Mode.DEPARTING)
            and feedback(modes[l], receiver_active)]


def assign_remaining_weights(j: int, remaining_out: Iterable[int]) -> dict[int, float]:
    """Uniform split over the remaining out-neighbors and the agent itself."""
    recipients = sorted(set(remaining_out) | {j})
    w = 1.0 / len(recipients)
    return {l: w for l in recipients}


def assign_departing_weights(j: int, remaining_out: Iterable[int]) -> dict[int, float]:
    recipients = sorted(set(remaining_out) - {j})
    if not recipients:
        raise StrandedMassError(f"stranded departing mass: agent {j} has no remaining out-neighbor")
    w = 1.0 / len(recipients)
    return {l: w for l in recipients}


def broadcast_values(s: AgentState, mode: Mode, c: float = 0.0, c_tilde: float = 0.0) -> BroadcastPair:
    """Per-recipient message; weights are uniform so one pair serves every recipient."""
    if mode is Mode.REMAINING:
        c_tilde = 0.0
    elif mode is Mode.DEPARTING:
        c = 0.0
    else:
        raise ProtocolError(f"a {mode.value} agent does not broadcast")
    return BroadcastPair(c * s.x + c_tilde * (s.x - s.x_hat),
                         c * s.y + c_tilde * (s.y - s.y_hat))


def arriving_update(joining_mass: float) -> AgentState:
    m = float(joining_mass)
    return AgentState(x=m, y=1.0, z=m, x_hat=m, y_hat=1.0, active=True)


def remaining_update(s: AgentState, from_remaining: Iterable[tuple[int, BroadcastPair]],
                     from_departing: Iterable[tuple[int, BroadcastPair]] = ()
                     ) -> tuple[AgentState, bool]:
    """Sum the inbox of a remaining agent.

    Both inboxes hold ``(sender, pair)`` tuples; ``from_remaining`` must
    include the agent's own contribution. Messages are summed in ascending
    sender order so that runs are bit-reproducible. Returns the new state and
    whether the y guard fired (``z`` then keeps its previous value).
    """
    inbox = sorted([*from_remaining, *from_departing], key=lambda m: m[0])
    x = 0.0
    y = 0.0
    for _, pair in inbox:
        x += pair.zeta_x
        y += pair.zeta_y
    degenerate = abs(y) <= Y_GUARD
    z = s.z if degenerate else x / y
    return AgentState(x=x, y=y, z=z, x_hat=s.x_hat, y_hat=s.y_hat, active=True), degenerate


def departing_finalize(s: AgentState) -> AgentState:
    return INACTIVE_STATE
