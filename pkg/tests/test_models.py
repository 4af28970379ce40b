import pytest
from pydantic import ValidationError

from src.core.diffusion import AlphaSchedule
from src.models.schemas import ExperimentConfig, Mode, TopologyKind


def test_defaults():
    config = ExperimentConfig(k=4)
    assert config.mode is Mode.FULL
    assert config.topology.kind is TopologyKind.REGULAR
    assert config.topology.degree == 8
    assert config.topology.n == config.n == 1000
    assert config.d_max_value is None
    assert config.alpha_schedule is AlphaSchedule.DP


def test_topology_string_is_parsed():
    config = ExperimentConfig(n=30, topology="er:0.2", mode="flood_only")
    assert config.topology.kind is TopologyKind.ERDOS_RENYI
    assert config.topology.p == 0.2
    assert config.topology.n == 30


@pytest.mark.parametrize(
    "overrides",
    [
        {"mode": "full"},
        {"mode": "dc_only"},
        {"k": 4, "round_interval": 3},
        {"k": 4, "d_max": -1},
        {"k": 4, "adversary_fraction": 1.0},
        {"k": 4, "messages": 2, "message_size": 4},
        {"k": 4, "topology": "tree:3"},
        {"k": 4, "unknown_field": 1},
    ],
)
def test_invalid_configs(overrides):
    with pytest.raises(ValidationError):
        ExperimentConfig(**overrides)


def test_d_max_accepts_auto_or_int():
    assert ExperimentConfig(k=3, d_max="auto").d_max_value is None
    assert ExperimentConfig(k=3, d_max=4).d_max_value == 4


def test_trial_seeds_follow_master_seed():
    config = ExperimentConfig(k=3, seed=100)
    assert [config.trial_seed(i) for i in range(3)] == [100, 101, 102]


def test_flood_only_does_not_need_k():
    assert ExperimentConfig(mode="flood_only").k is None
