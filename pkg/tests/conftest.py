from typing import Dict, List, Optional, Sequence

import numpy as np
import pytest

from src.core.groups import MembershipIndex
from src.core.protocol import NodeState, ProtocolConfig, Timer
from src.models.schemas import ExperimentConfig
from src.utils.rng import RngStreams, Stream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def isolated_output(tmp_path, monkeypatch):
    """Keep every written artefact inside the test's temp dir"""
    monkeypatch.setattr("src.config.settings.settings.OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.delenv("PRIVBCAST_SEED", raising=False)
    return tmp_path


@pytest.fixture
def make_config():
    def factory(**overrides) -> ExperimentConfig:
        data = {"n": 50, "topology": "regular:4", "mode": "flood_only"}
        data.update(overrides)
        return ExperimentConfig(**data)

    return factory


class FakeContext:
    """Records what a node asks of the simulator"""

    def __init__(
        self,
        adjacency: Sequence[Sequence[int]],
        config: Optional[ProtocolConfig] = None,
        membership: Optional[MembershipIndex] = None,
        seed: int = 0,
    ):
        self.adjacency = adjacency
        self.config = config or ProtocolConfig()
        self.membership = membership or MembershipIndex(k=3)
        self.rngs = RngStreams(seed)
        self.now = 0
        self.timers: List[tuple] = []
        self.requested: List[int] = []
        self.scheduled: List[tuple] = []
        self.delivered: Dict[str, List[int]] = {}
        self.covered = False

    def neighbors(self, node: int) -> Sequence[int]:
        return self.adjacency[node]

    def rng(self, purpose: Stream) -> np.random.Generator:
        return self.rngs[purpose]

    def set_timer(self, delay: int, timer: Timer) -> None:
        self.timers.append((delay, timer))

    def request_round(self, group_id: int) -> None:
        self.requested.append(group_id)

    def schedule_round(self, group_id, round_id, size, announcement, outcome) -> None:
        self.scheduled.append((group_id, round_id, size, announcement, outcome))

    def deliver(self, node, message_id, group_id=None, round_id=None) -> None:
        self.delivered.setdefault(message_id, []).append(node)

    def coverage_complete(self, message_id: str) -> bool:
        return self.covered


@pytest.fixture
def fake_context():
    return FakeContext


@pytest.fixture
def node_state():
    def factory(node_id: int, groups=()) -> NodeState:
        return NodeState(node_id, tuple(groups))

    return factory
