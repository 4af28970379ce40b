from enum import Enum
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from src.core.diffusion import AlphaSchedule
from src.core.groups import OverlapPolicy


class Mode(str, Enum):
    FULL = "full"
    FLOOD_ONLY = "flood_only"
    DIFFUSION_ONLY = "diffusion_only"
    DC_ONLY = "dc_only"


class Estimator(str, Enum):
    FIRST_TIMESTAMP = "first_timestamp"
    DC_GROUP = "dc_group"
    UNIFORM = "uniform"


class TopologyKind(str, Enum):
    REGULAR = "regular"
    ERDOS_RENYI = "erdos_renyi"
    TREE = "tree"
    LINE = "line"


class TopologySpec(BaseModel):
    """Graph family and its parameters; n is filled in from the experiment"""

    kind: TopologyKind = TopologyKind.REGULAR
    n: Optional[int] = Field(default=None, gt=0)
    degree: Optional[int] = Field(default=8, ge=1)
    p: Optional[float] = Field(default=None, gt=0, le=1)
    depth: Optional[int] = Field(default=None, ge=0)

    @classmethod
    def parse(cls, text: str) -> "TopologySpec":
        """`regular:8`, `er:0.01`, `tree:3:4` or `line`"""
        name, *args = text.strip().split(":")
        name = {"er": "erdos_renyi", "erdos-renyi": "erdos_renyi"}.get(name, name)
        kind = TopologyKind(name)
        wanted = {
            TopologyKind.REGULAR: (0, 1),
            TopologyKind.ERDOS_RENYI: (1, 1),
            TopologyKind.TREE: (2, 2),
            TopologyKind.LINE: (0, 0),
        }[kind]
        if not wanted[0] <= len(args) <= wanted[1]:
            raise ValueError(f"malformed topology {text!r}")
        if kind is TopologyKind.REGULAR:
            return cls(kind=kind, degree=int(args[0]) if args else 8)
        if kind is TopologyKind.ERDOS_RENYI:
            return cls(kind=kind, p=float(args[0]), degree=None)
        if kind is TopologyKind.TREE:
            return cls(kind=kind, degree=int(args[0]), depth=int(args[1]))
        return cls(kind=kind, degree=2)

    @model_validator(mode="after")
    def check_parameters(self) -> "TopologySpec":
        if self.kind is TopologyKind.ERDOS_RENYI and self.p is None:
            raise ValueError("topology.p: required for erdos_renyi graphs")
        if self.kind is TopologyKind.TREE and (self.depth is None or self.degree is None):
            raise ValueError("topology.depth: tree graphs need a degree and a depth")
        if self.kind is TopologyKind.TREE and self.degree < 2:
            raise ValueError("topology.degree: tree graphs need degree >= 2")
        return self

    @property
    def nominal_degree(self) -> Optional[int]:
        """Degree of the regular family, None where degrees vary"""
        if self.kind in (TopologyKind.REGULAR, TopologyKind.TREE):
            return self.degree
        if self.kind is TopologyKind.LINE:
            return 2
        return None

    def label(self) -> str:
        if self.kind is TopologyKind.REGULAR:
            return f"regular:{self.degree}"
        if self.kind is TopologyKind.ERDOS_RENYI:
            return f"er:{self.p}"
        if self.kind is TopologyKind.TREE:
            return f"tree:{self.degree}:{self.depth}"
        return "line"


class ExperimentConfig(BaseModel):
    """One experiment: topology, protocol parameters, adversary and output"""

    n: int = Field(default=1000, gt=0)
    topology: TopologySpec = Field(default_factory=TopologySpec)
    k: Optional[int] = Field(default=None, ge=2)
    overlap: int = Field(default=1, ge=1)
    overlap_policy: OverlapPolicy = OverlapPolicy.EXACT
    d_max: Union[int, Literal["auto"]] = "auto"
    round_interval: int = Field(default=4, gt=0)
    link_delay: int = Field(default=1, gt=0)
    adaptive_interval: bool = False
    length_announcement: bool = True
    alpha_schedule: AlphaSchedule = AlphaSchedule.DP
    adversary_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    estimator: Estimator = Estimator.FIRST_TIMESTAMP
    trials: int = Field(default=1, gt=0)
    seed: int = Field(default=0, ge=0)
    mode: Mode = Mode.FULL
    message_size: int = Field(default=64, ge=0)
    messages: int = Field(default=1, ge=0)
    message_spacing: int = Field(default=0, ge=0)
    fixed_topology: bool = False
    event_cap: Optional[int] = Field(default=None, gt=0)
    trace: bool = False
    output: Optional[str] = None

    model_config = {"extra": "forbid"}

    @field_validator("topology", mode="before")
    @classmethod
    def parse_topology(cls, value: Any) -> Any:
        if isinstance(value, str):
            return TopologySpec.parse(value)
        return value

    @field_validator("d_max")
    @classmethod
    def check_d_max(cls, value: Union[int, str]) -> Union[int, str]:
        if isinstance(value, int) and value < 0:
            raise ValueError("d_max must be non-negative or 'auto'")
        return value

    @model_validator(mode="after")
    def check_consistency(self) -> "ExperimentConfig":
        if self.mode in (Mode.FULL, Mode.DC_ONLY) and self.k is None:
            raise ValueError(f"k: required in {self.mode.value} mode")
        if self.round_interval <= 3 * self.link_delay:
            raise ValueError(
                "round_interval: must exceed 3 * link_delay so a round completes "
                "before the next one starts"
            )
        if self.messages > 1 and self.message_size < 8:
            raise ValueError("message_size: concurrent messages need at least 8 bytes to be distinct")
        if self.topology.n != self.n:
            self.topology = self.topology.model_copy(update={"n": self.n})
        return self

    @property
    def d_max_value(self) -> Optional[int]:
        return None if self.d_max == "auto" else int(self.d_max)

    def trial_seed(self, run_id: int) -> int:
        return self.seed + run_id
