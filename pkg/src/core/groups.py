"""
DC-net group membership: bootstrap, join, leave, split at 2k, overlap and
origin-probability accounting.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import numpy as np
from loguru import logger

from src.core.exceptions import NetworkTooSmall, NotAMember, WrongSize


class OverlapPolicy(str, Enum):
    EXACT = "exact"
    RANDOM = "random"


@dataclass
class GroupView:
    group_id: int
    members: List[int]
    k_min: int
    created_at: int = 0

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def max_size(self) -> int:
        return 2 * self.k_min - 1

    def __contains__(self, node: int) -> bool:
        return node in self.members


@dataclass
class MembershipIndex:
    """Bidirectional node <-> group index for one simulated network"""

    k: int
    target_overlap: int = 1
    groups: Dict[int, GroupView] = field(default_factory=dict)
    node_groups: Dict[int, Set[int]] = field(default_factory=dict)
    lobby: List[int] = field(default_factory=list)
    trust: Dict[int, Set[int]] = field(default_factory=dict)
    distrust: Dict[int, Set[int]] = field(default_factory=dict)
    next_group_id: int = 0
    now: int = 0

    def allocate_id(self) -> int:
        gid = self.next_group_id
        self.next_group_id += 1
        return gid

    def groups_of(self, node: int) -> List[int]:
        return sorted(self.node_groups.get(node, ()))

    def group_count(self, node: int) -> int:
        return len(self.node_groups.get(node, ()))

    @property
    def nodes(self) -> List[int]:
        return sorted(n for n, gs in self.node_groups.items() if gs)

    def add_group(self, members: Iterable[int], group_id: Optional[int] = None) -> GroupView:
        gid = self.allocate_id() if group_id is None else group_id
        group = GroupView(gid, sorted(set(members)), self.k, self.now)
        self.groups[gid] = group
        for node in group.members:
            self.node_groups.setdefault(node, set()).add(gid)
        return group

    def remove_group(self, group_id: int) -> GroupView:
        group = self.groups.pop(group_id)
        for node in group.members:
            self.node_groups[node].discard(group_id)
        return group

    def add_member(self, group_id: int, node: int) -> None:
        group = self.groups[group_id]
        if node not in group.members:
            group.members.append(node)
            self.node_groups.setdefault(node, set()).add(group_id)

    def remove_member(self, group_id: int, node: int) -> None:
        group = self.groups[group_id]
        if node in group.members:
            group.members.remove(node)
        self.node_groups.get(node, set()).discard(group_id)

    def compatible(self, node: int, members: Iterable[int]) -> bool:
        """False when node and any of members have expelled one another"""
        members = set(members)
        if self.distrust.get(node, set()) & members:
            return False
        return not any(node in self.distrust.get(m, ()) for m in members)

    def to_dict(self) -> Dict[str, List[int]]:
        """Group assignment as dumped into run traces under "groups" """
        return {str(gid): list(g.members) for gid, g in sorted(self.groups.items())}


def check_invariants(index: MembershipIndex) -> List[str]:
    """Violations of the size bounds and of index consistency (empty when sound)"""
    problems = []
    for gid, group in index.groups.items():
        if not index.k <= group.size <= 2 * index.k - 1:
            problems.append(f"group {gid} has size {group.size}")
        if len(set(group.members)) != group.size:
            problems.append(f"group {gid} has duplicate members")
        for node in group.members:
            if gid not in index.node_groups.get(node, ()):
                problems.append(f"node {node} missing back-reference to group {gid}")
    for node, gids in index.node_groups.items():
        for gid in gids:
            if gid not in index.groups or node not in index.groups[gid].members:
                problems.append(f"node {node} references stale group {gid}")
    return problems


def _partition(nodes: List[int], k: int, rng: np.random.Generator) -> List[List[int]]:
    """Random partition into len // k groups with sizes in [k, 2k-1]"""
    order = [int(x) for x in rng.permutation(nodes)]
    count = len(order) // k
    base, extra = divmod(len(order), count)
    parts, start = [], 0
    for i in range(count):
        size = base + (1 if i < extra else 0)
        parts.append(order[start : start + size])
        start += size
    return parts


def bootstrap(
    nodes: Iterable[int],
    k: int,
    rng: np.random.Generator,
    overlap: int = 1,
    policy: OverlapPolicy = OverlapPolicy.EXACT,
    trust: Optional[Dict[int, Set[int]]] = None,
) -> MembershipIndex:
    """Seeded initial assignment: `overlap` independent random partitions"""
    nodes = sorted(nodes)
    if len(nodes) < k:
        raise NetworkTooSmall(f"{len(nodes)} nodes cannot form a group of minimum size {k}")
    index = MembershipIndex(k=k, target_overlap=overlap, trust=dict(trust or {}))
    if policy is OverlapPolicy.EXACT:
        wanted = {node: overlap for node in nodes}
    else:
        wanted = {node: int(rng.integers(1, overlap + 1)) for node in nodes}

    for layer in range(overlap):
        members = [node for node in nodes if wanted[node] > layer]
        if len(members) >= k:
            for part in _partition(members, k, rng):
                index.add_group(part)
        else:
            for node in members:
                join(node, index, rng, overlap=True)
    logger.debug(f"Bootstrapped {len(index.groups)} groups over {len(nodes)} nodes (k={k})")
    return index


def split(
    group: GroupView, rng: np.random.Generator, new_group_id: Optional[int] = None
) -> Tuple[GroupView, GroupView]:
    """Uniform random partition of a size-2k group into two size-k groups"""
    k = group.k_min
    if group.size != 2 * k:
        raise WrongSize(f"group {group.group_id} has size {group.size}, split needs {2 * k}")
    order = [int(x) for x in rng.permutation(group.members)]
    other_id = group.group_id + 1 if new_group_id is None else new_group_id
    return (
        GroupView(group.group_id, sorted(order[:k]), k, group.created_at),
        GroupView(other_id, sorted(order[k:]), k, group.created_at),
    )


def _split_in_index(index: MembershipIndex, group_id: int, rng: np.random.Generator) -> None:
    group = index.remove_group(group_id)
    first, second = split(group, rng, index.allocate_id())
    index.add_group(first.members, first.group_id)
    index.add_group(second.members, second.group_id)
    logger.info(f"Split group {group_id} into {first.group_id} and {second.group_id}")


def _eligible(
    node: int, index: MembershipIndex, exclude: FrozenSet[int] = frozenset()
) -> List[GroupView]:
    return [
        g
        for gid, g in sorted(index.groups.items())
        if gid not in exclude and node not in g.members and index.compatible(node, g.members)
    ]


def join(
    node: int,
    index: MembershipIndex,
    rng: np.random.Generator,
    overlap: bool = False,
    exclude: FrozenSet[int] = frozenset(),
) -> MembershipIndex:
    """
    Add node to the smallest eligible group, splitting it when it reaches 2k.

    With no group in reach the node waits in the lobby; NetworkTooSmall is
    raised while the lobby holds fewer than k nodes.
    """
    if not overlap and index.group_count(node):
        return index
    candidates = _eligible(node, index, exclude)
    if not candidates:
        if overlap and index.group_count(node):
            logger.debug(f"Node {node} already belongs to every reachable group")
            return index
        if node not in index.lobby:
            index.lobby.append(node)
        if len(index.lobby) < index.k:
            raise NetworkTooSmall(
                f"{len(index.lobby)} waiting nodes, a group needs at least {index.k}"
            )
        group = index.add_group(index.lobby)
        index.lobby.clear()
        logger.info(f"Formed group {group.group_id} from the lobby ({group.size} nodes)")
        return index

    trusted = index.trust.get(node)
    if trusted:
        preferred = [g for g in candidates if trusted & set(g.members)]
        candidates = preferred or candidates
    smallest = min(g.size for g in candidates)
    ties = [g for g in candidates if g.size == smallest]
    chosen = ties[int(rng.integers(len(ties)))]
    index.add_member(chosen.group_id, node)
    if node in index.lobby:
        index.lobby.remove(node)
    if chosen.size >= 2 * index.k:
        _split_in_index(index, chosen.group_id, rng)
    return index


def ensure_overlap(node: int, index: MembershipIndex, rng: np.random.Generator) -> MembershipIndex:
    """Top the node up to the index's target number of groups"""
    while index.group_count(node) < index.target_overlap:
        before = index.group_count(node)
        join(node, index, rng, overlap=before > 0)
        if index.group_count(node) == before:
            break
    return index


def _repair(group_id: int, index: MembershipIndex, rng: np.random.Generator) -> None:
    """Restore the lower bound of a group that dropped below k"""
    group = index.groups[group_id]
    k = index.k
    if group.size >= k:
        return

    def movable(donor: GroupView) -> List[int]:
        return [
            m
            for m in donor.members
            if m not in group and index.compatible(m, group.members)
        ]

    donors = [
        g for gid, g in index.groups.items() if gid != group_id and g.size > k and movable(g)
    ]
    if donors:
        donor = min(donors, key=lambda g: (-g.size, g.group_id))
        candidates = movable(donor)
        recruit = candidates[int(rng.integers(len(candidates)))]
        index.remove_member(donor.group_id, recruit)
        index.add_member(group_id, recruit)
        logger.debug(f"Group {group_id} recruited node {recruit} from group {donor.group_id}")
        return

    partners = [
        g
        for gid, g in index.groups.items()
        if gid != group_id
        and len(set(g.members) | set(group.members)) <= 2 * k - 1
        and all(index.compatible(m, g.members) for m in group.members)
    ]
    if partners:
        partner = min(
            partners, key=lambda g: (len(set(g.members) | set(group.members)), g.group_id)
        )
        absorbed = index.remove_group(group_id)
        for node in absorbed.members:
            index.add_member(partner.group_id, node)
        logger.info(f"Merged group {group_id} into group {partner.group_id}")
        for node in absorbed.members:
            _rejoin(node, index, rng)
        return

    dissolved = index.remove_group(group_id)
    logger.info(f"Dissolved group {group_id}, {dissolved.size} members rejoin")
    for node in dissolved.members:
        _rejoin(node, index, rng)


def _rejoin(node: int, index: MembershipIndex, rng: np.random.Generator) -> None:
    try:
        ensure_overlap(node, index, rng)
    except NetworkTooSmall:
        logger.warning(f"Node {node} waits in the lobby, no group can take it")


def leave(node: int, index: MembershipIndex, rng: np.random.Generator) -> MembershipIndex:
    """Remove node everywhere and repair every group it leaves below k"""
    gids = index.groups_of(node)
    for gid in gids:
        index.remove_member(gid, node)
    index.node_groups.pop(node, None)
    if node in index.lobby:
        index.lobby.remove(node)
    for gid in gids:
        if gid in index.groups:
            _repair(gid, index, rng)
    return index


def expel(
    node: int, group_id: int, index: MembershipIndex, rng: np.random.Generator
) -> MembershipIndex:
    """Re-form a group without a distrusted member; the node rejoins elsewhere"""
    group = index.groups.get(group_id)
    if group is None or node not in group:
        raise NotAMember(f"node {node} is not a member of group {group_id}")
    index.distrust.setdefault(node, set()).update(m for m in group.members if m != node)
    index.remove_member(group_id, node)
    _repair(group_id, index, rng)
    _rejoin(node, index, rng)
    return index


def select_group(node: int, index: MembershipIndex, rng: np.random.Generator) -> int:
    """Uniform choice among the node's groups"""
    gids = index.groups_of(node)
    if not gids:
        raise NotAMember(f"node {node} belongs to no group")
    return gids[int(rng.integers(len(gids)))]


def origin_distribution(group: GroupView, index: MembershipIndex) -> Dict[int, float]:
    """Posterior P(member is origin) for a message emerging from `group`"""
    weights = {m: 1.0 / max(index.group_count(m), 1) for m in group.members}
    total = sum(weights.values())
    return {m: w / total for m, w in weights.items()}
