"""Scenario factories and brute-force oracles shared by the test modules."""

from collections import deque
from itertools import product

import numpy as np

from openrc.protocol import AgentState
from openrc.scenario import ChurnWindow, GraphSpec, MassDist, Scenario


def reachable(n, edges, src):
    adj = {v: [] for v in range(n)}
    for i, j in edges:
        adj[i].append(j)
    seen = {src}
    q = deque([src])
    while q:
        v = q.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                q.append(w)
    return seen


def brute_strongly_connected(nodes, edges):
    """Every ordered pair joined by a directed path, checked by BFS from every node."""
    nodes = set(nodes)
    edges = [(i, j) for i, j in edges if i in nodes and j in nodes]
    n = max(nodes) + 1
    return all(nodes <= reachable(n, edges, v) for v in nodes)


def brute_transition_ok(n, edges, active, departures, arrivals):
    nxt = [(a and j not in departures) or j in arrivals for j, a in enumerate(active)]
    nodes = {j for j in range(n) if nxt[j]}
    if not nodes:
        return False
    if not brute_strongly_connected(nodes, edges):
        return False
    remaining = {j for j in range(n) if active[j] and j not in departures}
    for d in departures:
        outs = {j for i, j in edges if i == d}
        if not outs & remaining:
            return False
    return True


def proposals(n):
    """All (active, departures, arrivals) combinations on n agents."""
    for roles in product(range(4), repeat=n):
        # 0 inactive, 1 arriving, 2 remaining, 3 departing
        active = [r >= 2 for r in roles]
        dep = {j for j, r in enumerate(roles) if r == 3}
        arr = {j for j, r in enumerate(roles) if r == 1}
        yield active, dep, arr


def random_scenario(rng, *, pool=(20, 40), rounds=300, max_prob=0.3, density=None,
                    windows=None, seed=None):
    n = int(rng.integers(pool[0], pool[1] + 1))
    if density is None:
        # sparse small pools rarely keep a strongly connected active set
        density = (0.1, 0.3) if n >= 20 else (0.3, 0.6)
    if windows is None:
        cut = int(rng.integers(rounds // 4, 3 * rounds // 4))
        windows = (ChurnWindow(0, cut, float(rng.uniform(0.05, max_prob))),
                   ChurnWindow(cut, rounds, float(rng.uniform(0.05, max_prob))))
    return Scenario(
        pool_size=n,
        graph=GraphSpec("auto", extra_edge_prob=float(rng.uniform(*density))),
        rounds=rounds,
        initial_random=int(rng.integers(max(1, n // 2), n + 1)),
        churn_windows=windows,
        mass_initial=MassDist.uniform(1.0, 10.0),
        mass_arrival=MassDist.uniform(10.0, 20.0),
        seed=int(rng.integers(2**63)) if seed is None else seed,
    )


def validated_scenario(rng, **kw):
    """Draw random scenarios until one has a strongly connected initial active set."""
    from openrc.engine import initialize
    from openrc.scenario import ScenarioError

    while True:
        sc = random_scenario(rng, **kw)
        try:
            initialize(sc)
        except ScenarioError:
            continue
        return sc


def joined(x_hat, active=True):
    return AgentState(x=x_hat, y=1.0, z=x_hat, x_hat=x_hat, y_hat=1.0, active=active)


def state(x, y, x_hat, y_hat=1.0):
    return AgentState(x=x, y=y, z=x / y, x_hat=x_hat, y_hat=y_hat, active=True)


def plain_ratio_consensus(g, x0, y0, rounds):
    """Closed-network push-sum with self weight: c = 1/(1 + out-degree),
    receivers sum contributions in ascending sender order."""
    n = g.pool_size
    outdeg = [len(g.out_neighbors(i)) for i in range(n)]
    senders = [sorted(set(g.in_neighbors(j)) | {j}) for j in range(n)]
    x, y = list(x0), list(y0)
    traj = [(list(x), list(y))]
    for _ in range(rounds):
        nx_, ny_ = [], []
        for j in range(n):
            sx = sy = 0.0
            for i in senders[j]:
                c = 1.0 / (1 + outdeg[i])
                sx += c * x[i]
                sy += c * y[i]
            nx_.append(sx)
            ny_.append(sy)
        x, y = nx_, ny_
        traj.append((list(x), list(y)))
    return traj


def as_rng(seed):
    return np.random.default_rng(seed)
