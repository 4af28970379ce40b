"""Phase 3: flood and prune with silent duplicate drop"""
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Set


@dataclass
class SeenSet:
    """Message ids a node has already forwarded"""

    message_ids: Set[str] = field(default_factory=set)

    def mark(self, message_id: str) -> bool:
        """Insert message_id; True only on first insertion"""
        if message_id in self.message_ids:
            return False
        self.message_ids.add(message_id)
        return True

    def __contains__(self, message_id: str) -> bool:
        return message_id in self.message_ids


def on_flood_receive(
    seen: SeenSet,
    message_id: str,
    neighbors: Sequence[int],
    sender: Optional[int],
) -> List[int]:
    """
    Destinations of the forwarded copies: every neighbour but the sender on
    first receipt, nothing on a repeat. `sender` is None at the flood origin.
    """
    if not seen.mark(message_id):
        return []
    return [n for n in neighbors if n != sender]


def expected_flood_messages(degrees: Iterable[int]) -> int:
    """2|E| - n + 1 on a connected graph: origin sends deg, others deg - 1"""
    degrees = list(degrees)
    return sum(degrees) - len(degrees) + 1


CARRYING_KINDS = frozenset({"TokenPass", "DiffusionSpread", "Flood"})


def reach(trace: Iterable, topology, message_id: str, holders: Iterable[int] = ()) -> float:
    """
    Fraction of topology.n nodes that received message_id: destinations of
    message-carrying envelopes plus `holders` (the phase-1 group, which
    learns the message from DC rounds whose records carry a round label).
    """
    if topology.n <= 0:
        return 0.0
    received = set(holders)
    received.update(
        r.dst for r in trace if r.mid == message_id and r.kind in CARRYING_KINDS
    )
    return len(received) / topology.n
