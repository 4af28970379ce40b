"""
Adaptive diffusion: virtual-source token, pass/keep decisions, the alpha
schedule and balanced frontier growth.

Timestep t is always even; after step t the infected set of a tree is the
ball of radius t/2 around the current virtual source. A round moves t to
t + 2 and either keeps the token (every leaf advances one hop) or passes it
one hop away (the new holder grows two levels on its far side).
"""
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np
from loguru import logger

from src.core.exceptions import NoEligibleNeighbor

Adjacency = Sequence[Sequence[int]]


class AlphaSchedule(str, Enum):
    DP = "dp"
    FALLBACK = "fallback"


def shell_size(h: int, degree: int) -> int:
    """Nodes at distance h from a node of a degree-regular tree"""
    return 1 if h == 0 else degree * (degree - 1) ** (h - 1)


@lru_cache(maxsize=None)
def _dp_row(degree: int, radius: int) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """
    (q, alpha) at radius t/2 where q[h] is the distribution of the token's hop
    count and alpha[h] the pass probability that makes the next q match the
    perfect-obfuscation target over the radius+1 ball.
    """
    if radius == 0:
        return (1.0,), (1.0,)
    prev_q, prev_alpha = _dp_row(degree, radius - 1)
    q = np.zeros(radius + 1)
    for h, mass in enumerate(prev_q):
        q[h] += mass * (1.0 - prev_alpha[h])
        q[h + 1] += mass * prev_alpha[h]

    # the forced first pass means the holder is never the origin, so the
    # target covers hop counts 1..radius+1
    shells = np.array([shell_size(h, degree) for h in range(1, radius + 2)], dtype=float)
    target = np.concatenate(([0.0], shells / shells.sum()))
    alpha = np.ones(radius + 1)
    inflow = 0.0
    for h in range(1, radius + 1):
        if q[h] > 0:
            alpha[h] = 1.0 - (target[h] - inflow) / q[h]
        alpha[h] = min(max(alpha[h], 0.0), 1.0)
        inflow = q[h] * alpha[h]
    return tuple(q.tolist()), tuple(alpha.tolist())


def alpha(
    t: int,
    h: int,
    degree: int = 3,
    schedule: AlphaSchedule = AlphaSchedule.DP,
) -> float:
    """Token-transfer probability at timestep t for a holder h hops from the origin"""
    if t % 2 or t < 0:
        raise ValueError(f"timestep must be even and non-negative, got {t}")
    if not 0 <= h <= t // 2:
        raise ValueError(f"hop count {h} outside [0, {t // 2}]")
    if t == 0 or h == 0:
        return 1.0
    if schedule is AlphaSchedule.FALLBACK:
        return 2.0 / (t + 2)
    if degree < 2:
        raise ValueError("the DP schedule needs a degree of at least 2")
    return _dp_row(degree, t // 2)[1][h]


@dataclass(frozen=True)
class VirtualSourceToken:
    message_id: str
    t: int = 0
    h: int = 0
    d_max: Optional[int] = None
    sender: Optional[int] = None

    def __post_init__(self):
        if self.t % 2 or self.t < 0:
            raise ValueError(f"token timestep must be even, got {self.t}")
        if self.d_max is not None and self.t > 2 * self.d_max:
            raise ValueError(f"token timestep {self.t} beyond 2*d_max={2 * self.d_max}")
        if self.h > self.t // 2:
            raise ValueError(f"hop count {self.h} exceeds t/2={self.t // 2}")

    @property
    def radius(self) -> int:
        return self.t // 2

    @property
    def exhausted(self) -> bool:
        return self.d_max is not None and self.t >= 2 * self.d_max

    def advanced(self, passed: bool, sender: Optional[int] = None) -> "VirtualSourceToken":
        if passed:
            return replace(self, t=self.t + 2, h=self.h + 1, sender=sender)
        return replace(self, t=self.t + 2)


@dataclass
class DiffusionState:
    """One node's view of one message during phase 2"""

    infected: bool = False
    parent: Optional[int] = None
    is_virtual_source: bool = False
    token: Optional[VirtualSourceToken] = None
    spread_rounds: Set[int] = field(default_factory=set)
    final_seen: bool = False

    def infect(self, parent: Optional[int]) -> bool:
        """Mark infected; the first parent sticks. True on first receipt"""
        if self.infected:
            return False
        self.infected = True
        self.parent = parent
        return True


@dataclass(frozen=True)
class PassDecision:
    passed: bool
    target: Optional[int] = None


def _pass_targets(token: VirtualSourceToken, neighbors: Sequence[int]) -> List[int]:
    targets = [n for n in neighbors if n != token.sender]
    if not targets:
        raise NoEligibleNeighbor(f"holder has no neighbour besides {token.sender}")
    return targets


def pass_or_keep(
    token: VirtualSourceToken,
    rng: np.random.Generator,
    neighbors: Sequence[int],
    degree: int = 3,
    schedule: AlphaSchedule = AlphaSchedule.DP,
) -> PassDecision:
    """With probability alpha pass to a uniform neighbour other than the sender"""
    draw = rng.random()
    if draw >= alpha(token.t, token.h, degree, schedule):
        return PassDecision(False)
    try:
        targets = _pass_targets(token, neighbors)
    except NoEligibleNeighbor:
        logger.debug(f"Forced keep for message {token.message_id} at t={token.t}")
        return PassDecision(False)
    return PassDecision(True, targets[int(rng.integers(len(targets)))])


def spread_step(
    virtual_source: int,
    radius: int,
    adjacency: Adjacency,
    exclude: Optional[int] = None,
) -> Set[int]:
    """
    Nodes reached when the holder grows its ball to `radius`, skipping the
    direction of `exclude` on the first hop (the previous holder after a pass).
    """
    reached = {virtual_source}
    frontier = deque([(virtual_source, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth == radius:
            continue
        for nxt in adjacency[node]:
            if node == virtual_source and nxt == exclude:
                continue
            if nxt not in reached:
                reached.add(nxt)
                frontier.append((nxt, depth + 1))
    return reached


def relay_targets(neighbors: Sequence[int], sender: Optional[int]) -> List[int]:
    """Every neighbour except the one the envelope came from"""
    return [n for n in neighbors if n != sender]


def finalize(token: VirtualSourceToken, state: DiffusionState) -> int:
    """
    Ends phase 2 at the final holder. Returns the hop budget of the switch
    envelopes; 0 means the holder itself is the whole frontier and floods.
    """
    state.is_virtual_source = False
    state.token = None
    logger.debug(f"Final virtual source switches message {token.message_id} at t={token.t}")
    return max(token.radius - 1, 0)


@dataclass(frozen=True)
class DiffusionSnapshot:
    t: int
    virtual_source: int
    h: int
    infected: FrozenSet[int]


def diffuse(
    adjacency: Adjacency,
    source: int,
    rounds: int,
    rng: np.random.Generator,
    degree: int = 3,
    schedule: AlphaSchedule = AlphaSchedule.DP,
) -> List[DiffusionSnapshot]:
    """Round-synchronous run of the spreading rules, one snapshot per even t"""
    token = VirtualSourceToken("sync", d_max=rounds)
    holder = source
    infected: Set[int] = {source}
    snapshots = [DiffusionSnapshot(0, holder, 0, frozenset(infected))]
    for _ in range(rounds):
        decision = pass_or_keep(token, rng, adjacency[holder], degree, schedule)
        if decision.passed:
            token = token.advanced(True, sender=holder)
            infected |= spread_step(decision.target, token.radius, adjacency, exclude=holder)
            holder = decision.target
        else:
            token = token.advanced(False)
            infected |= spread_step(holder, token.radius, adjacency)
        snapshots.append(DiffusionSnapshot(token.t, holder, token.h, frozenset(infected)))
    return snapshots


def simulate_virtual_source_walk(
    degree: int,
    rounds: int,
    trials: int,
    rng: np.random.Generator,
    schedule: AlphaSchedule = AlphaSchedule.DP,
) -> np.ndarray:
    """Histogram of the token's hop count after `rounds` rounds on a regular tree"""
    hops = np.zeros(trials, dtype=np.int64)
    for r in range(rounds):
        t = 2 * r
        row = np.array([alpha(t, h, degree, schedule) for h in range(r + 1)])
        hops += rng.random(trials) < row[hops]
    return np.bincount(hops, minlength=rounds + 1)


def obfuscation_target(degree: int, radius: int) -> np.ndarray:
    """Perfect-obfuscation distribution of hop counts 0..radius"""
    shells = np.array([0.0] + [shell_size(h, degree) for h in range(1, radius + 1)])
    return shells / shells.sum()


def hop_distances(adjacency: Adjacency, origin: int) -> Dict[int, int]:
    return {node: depth for node, depth in _bfs(adjacency, origin)}


def _bfs(adjacency: Adjacency, origin: int):
    seen = {origin}
    frontier = deque([(origin, 0)])
    while frontier:
        node, depth = frontier.popleft()
        yield node, depth
        for nxt in adjacency[node]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, depth + 1))
