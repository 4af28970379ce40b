"""
Deterministic discrete-event simulator.

simpy's Environment is the event queue: every delivery and timer is a
timeout whose callback runs the node handler, so events execute in
(time, insertion order). A run is a pure function of (config, seed).
"""
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import simpy
from loguru import logger
from simpy.core import Infinity

from src.config.settings import settings
from src.core import flood
from src.core.dcnet import BASE_ROUND_SIZE, FRAME_OVERHEAD, OutcomeKind
from src.core.diffusion import AlphaSchedule
from src.core.exceptions import NonTermination
from src.core.groups import MembershipIndex, bootstrap
from src.core.protocol import (
    PHASE_OF,
    Envelope,
    EnvelopeKind,
    NodeState,
    ProtocolConfig,
    Timer,
    TimerKind,
    message_id,
    on_envelope,
    on_timer,
    originate,
)
from src.models.schemas import ExperimentConfig, Mode
from src.monitoring.prometheus import MetricsCollector
from src.services.topology import Topology, auto_d_max, generate_topology
from src.utils.rng import RngStreams, Stream

Schedule = Sequence[Tuple[int, int, bytes]]


@dataclass(frozen=True)
class TraceRecord:
    t: int
    kind: str
    src: int
    dst: int
    mid: str
    size: int

    @property
    def phase(self) -> int:
        return PHASE_OF.get(self.kind, 0)  # type: ignore[call-overload]


class Trace:
    """Append-only delivery log; frozen once the run ends"""

    def __init__(self, groups: Optional[Dict[str, List[int]]] = None):
        self._records: List[TraceRecord] = []
        self.groups = groups or {}
        self.frozen = False

    def append(self, record: TraceRecord) -> None:
        if self.frozen:
            raise RuntimeError("trace is frozen")
        self._records.append(record)

    def freeze(self) -> "Trace":
        self._records = tuple(self._records)  # type: ignore[assignment]
        self.frozen = True
        return self

    @property
    def records(self) -> Sequence[TraceRecord]:
        return self._records

    def __iter__(self):
        return iter(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def for_message(self, message_id: str) -> List[TraceRecord]:
        return [r for r in self._records if r.mid == message_id]

    def to_ndjson(self) -> str:
        return "".join(
            json.dumps(asdict(r), separators=(",", ":")) + "\n" for r in self._records
        )


@dataclass
class MessageCounts:
    by_kind: Dict[str, int] = field(default_factory=dict)
    by_phase: Dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})

    @property
    def total(self) -> int:
        return sum(self.by_phase.values())

    @property
    def phase1(self) -> int:
        return self.by_phase.get(1, 0)

    @property
    def phase2(self) -> int:
        return self.by_phase.get(2, 0)

    @property
    def phase3(self) -> int:
        return self.by_phase.get(3, 0)


def count_messages(
    trace: Iterable[TraceRecord],
    phases: Optional[Iterable[int]] = None,
    message_id: Optional[str] = None,
) -> MessageCounts:
    """Per-kind and per-phase totals, optionally restricted to phases or one message id"""
    wanted = set(phases) if phases is not None else None
    counts = MessageCounts()
    for record in trace:
        if message_id is not None and record.mid != message_id:
            continue
        if wanted is not None and record.phase not in wanted:
            continue
        counts.by_kind[record.kind] = counts.by_kind.get(record.kind, 0) + 1
        counts.by_phase[record.phase] = counts.by_phase.get(record.phase, 0) + 1
    return counts


@dataclass
class MessageRecord:
    message_id: str
    origin: int
    created_at: int
    group_id: Optional[int] = None
    round_label: Optional[str] = None
    dc_holders: Set[int] = field(default_factory=set)
    first_arrival: Dict[int, int] = field(default_factory=dict)


@dataclass
class GroupClock:
    group_id: int
    interval: int
    base_interval: int
    next_round: int = 0
    completed: int = -1
    last_start: Optional[int] = None
    busy: bool = False


@dataclass
class RunReport:
    run_id: int
    seed: int
    n: int
    k: Optional[int]
    d_max: Optional[int]
    adversary_frac: float
    mode: str
    counts: MessageCounts
    reach: float
    ticks: int
    events: int
    messages: List[MessageRecord]
    adversaries: List[int]
    dropped: int = 0
    true_origin: Optional[int] = None
    guess: Optional[int] = None
    correct: Optional[bool] = None
    anonset: Optional[float] = None
    entropy_bits: Optional[float] = None

    def to_row(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "seed": self.seed,
            "n": self.n,
            "k": self.k,
            "d_max": self.d_max,
            "adversary_frac": self.adversary_frac,
            "mode": self.mode,
            "phase1_msgs": self.counts.phase1,
            "phase2_msgs": self.counts.phase2,
            "phase3_msgs": self.counts.phase3,
            "total_msgs": self.counts.total,
            "reach": self.reach,
            "ticks": self.ticks,
            "true_origin": self.true_origin,
            "guess": self.guess,
            "correct": self.correct,
            "anonset": self.anonset,
            "entropy_bits": self.entropy_bits,
        }


class Simulator:
    """Event queue, node states and trace for one run; implements ProtocolContext"""

    def __init__(
        self,
        topology: Topology,
        config: ProtocolConfig,
        membership: MembershipIndex,
        rngs: RngStreams,
        round_interval: int = 4,
        adaptive_interval: bool = False,
        event_cap: Optional[int] = None,
    ):
        self.topology = topology
        self.config = config
        self.membership = membership
        self.rngs = rngs
        self.adaptive_interval = adaptive_interval
        self.event_cap = event_cap or settings.EVENT_CAP
        self.env = simpy.Environment()
        self.nodes = {
            v: NodeState(v, tuple(membership.groups_of(v))) for v in range(topology.n)
        }
        self.clocks = {
            gid: GroupClock(gid, round_interval, round_interval) for gid in membership.groups
        }
        self.trace = Trace(groups=membership.to_dict())
        self.messages: Dict[str, MessageRecord] = {}
        self.events = 0
        self.queued = 0
        self._components: Dict[int, int] = {}

    # ProtocolContext

    @property
    def now(self) -> int:
        return int(self.env.now)

    def neighbors(self, node: int) -> Sequence[int]:
        return self.topology.adjacency[node]

    def rng(self, purpose: Stream) -> np.random.Generator:
        return self.rngs[purpose]

    def set_timer(self, delay: int, timer: Timer) -> None:
        self._at(delay, lambda: self._fire(timer))

    def request_round(self, group_id: int) -> None:
        clock = self.clocks[group_id]
        if not clock.busy:
            self._start_round(clock, self._base_size(), self.config.length_announcement)

    def schedule_round(
        self,
        group_id: int,
        round_id: int,
        size: int,
        announcement: bool,
        outcome: OutcomeKind,
    ) -> None:
        clock = self.clocks[group_id]
        if round_id - 1 <= clock.completed:
            return
        clock.completed = round_id - 1
        MetricsCollector.record_dc_round(outcome.value)
        if self.adaptive_interval:
            if outcome is OutcomeKind.COLLISION:
                clock.interval = min(clock.interval * 2, 8 * clock.base_interval)
            else:
                clock.interval = max(clock.interval // 2, clock.base_interval)

        follow_up = self.config.length_announcement and not announcement

        # every member finishes the round in this tick; the pending check runs
        # once all of them have applied the outcome
        def decide() -> None:
            clock.busy = False
            members = self.membership.groups[group_id].members
            if follow_up or any(self.nodes[m].has_pending(group_id) for m in members):
                self._start_round(clock, size, announcement)

        clock.busy = True
        self._at(0, decide)

    def deliver(
        self,
        node: int,
        message_id: str,
        group_id: Optional[int] = None,
        round_id: Optional[int] = None,
    ) -> None:
        record = self.messages.get(message_id)
        if record is None:
            return
        record.first_arrival.setdefault(node, self.now)
        if group_id is not None:
            record.dc_holders.add(node)
            if record.group_id is None:
                record.group_id = group_id
                record.round_label = f"g{group_id}r{round_id}"

    def coverage_complete(self, message_id: str) -> bool:
        record = self.messages[message_id]
        return len(record.first_arrival) >= self._component_size(record.origin)

    # event plumbing

    def _at(self, delay: int, action: Callable[[], None]) -> None:
        event = self.env.timeout(delay)
        event.callbacks.append(lambda _: self._run_action(action))
        self.queued += 1

    def _run_action(self, action: Callable[[], None]) -> None:
        self.queued -= 1
        action()

    def _send(self, envelopes: Iterable[Envelope]) -> None:
        for env in envelopes:
            self._at(self.config.link_delay, lambda env=env: self._deliver_envelope(env))

    def _deliver_envelope(self, env: Envelope) -> None:
        kind = env.kind.value if isinstance(env.kind, EnvelopeKind) else str(env.kind)
        self.trace.append(
            TraceRecord(self.now, kind, env.src, env.dst, env.message_id, env.size)
        )
        MetricsCollector.record_envelope(kind, env.size)
        logger.trace(f"t={self.now} {env.kind} {env.src}->{env.dst} {env.message_id}")
        self._send(on_envelope(self.nodes[env.dst], env, self))

    def _fire(self, timer: Timer) -> None:
        self._send(on_timer(self.nodes[timer.node], timer, self))

    def _start_round(self, clock: GroupClock, size: int, announcement: bool) -> None:
        round_id = clock.next_round
        clock.next_round += 1
        clock.busy = True
        start = self.now
        if clock.last_start is not None:
            start = max(start, clock.last_start + clock.interval)
        clock.last_start = start

        def begin() -> None:
            members = self.membership.groups[clock.group_id].members
            for member in sorted(members):
                self._fire(
                    Timer(
                        TimerKind.ROUND_START,
                        member,
                        clock.group_id,
                        round_id,
                        size=size,
                        announcement=announcement,
                    )
                )

        self._at(start - self.now, begin)

    def _base_size(self) -> int:
        return BASE_ROUND_SIZE if self.config.length_announcement else self.config.round_size

    def _component_size(self, node: int) -> int:
        if node not in self._components:
            component = self.topology.component_of(node)
            for member in component:
                self._components[member] = len(component)
        return self._components[node]

    # driving

    def originate(self, node: int, message: bytes) -> str:
        mid = message_id(message)
        self.messages[mid] = MessageRecord(mid, node, self.now)
        logger.debug(f"t={self.now} node {node} originates message {mid}")
        self._send(originate(self.nodes[node], message, self))
        return mid

    def schedule_origin(self, tick: int, node: int, message: bytes) -> None:
        self._at(tick, lambda: self.originate(node, message))

    def run(self) -> Trace:
        while self.env.peek() != Infinity:
            if self.events >= self.event_cap:
                raise NonTermination(self.events, self.now, self.queued)
            self.env.step()
            self.events += 1
        return self.trace.freeze()

    def reach_of(self, message_id: str) -> float:
        record = self.messages[message_id]
        holders = record.dc_holders | {record.origin}
        return flood.reach(self.trace, self.topology, message_id, holders)

    @property
    def dropped(self) -> int:
        return sum(state.dropped for state in self.nodes.values())


def resolve_d_max(config: ExperimentConfig, topology: Topology) -> Optional[int]:
    """Numeric d_max for the run; None means diffusion runs until coverage"""
    if config.d_max_value is not None:
        return config.d_max_value
    if config.mode is Mode.DIFFUSION_ONLY:
        return None
    return auto_d_max(topology)


def protocol_config(config: ExperimentConfig, topology: Topology, d_max: Optional[int]) -> ProtocolConfig:
    schedule = config.alpha_schedule
    degree = topology.nominal_degree
    if schedule is AlphaSchedule.DP and (degree is None or degree < 2):
        logger.warning("DP alpha schedule needs a regular topology, using the fallback schedule")
        schedule = AlphaSchedule.FALLBACK
    return ProtocolConfig(
        mode=config.mode,
        d_max=d_max,
        degree=degree or 3,
        alpha_schedule=schedule,
        link_delay=config.link_delay,
        length_announcement=config.length_announcement,
        round_size=max(config.message_size + FRAME_OVERHEAD, BASE_ROUND_SIZE),
    )


def default_schedule(
    config: ExperimentConfig, honest: Sequence[int], rngs: RngStreams
) -> List[Tuple[int, int, bytes]]:
    """`messages` origins drawn uniformly from honest nodes, `message_spacing` ticks apart"""
    if not honest:
        return []
    schedule = []
    for i in range(config.messages):
        origin = int(honest[int(rngs[Stream.ORIGIN].integers(len(honest)))])
        payload = rngs[Stream.PAYLOAD].bytes(config.message_size)
        schedule.append((i * config.message_spacing, origin, payload))
    return schedule


def run(
    config: ExperimentConfig,
    seed: int,
    schedule: Optional[Schedule] = None,
    run_id: int = 0,
    topology: Optional[Topology] = None,
) -> Tuple[Trace, RunReport]:
    """One simulation: identical (Trace, RunReport) for identical (config, seed)"""
    from src.services.adversary import select_adversaries

    rngs = RngStreams(seed)
    if topology is None:
        topology = generate_topology(config.topology, config.seed if config.fixed_topology else seed)
    d_max = resolve_d_max(config, topology)

    if config.mode in (Mode.FULL, Mode.DC_ONLY):
        membership = bootstrap(
            range(topology.n), config.k, rngs[Stream.GROUPS], config.overlap, config.overlap_policy
        )
    else:
        membership = MembershipIndex(k=config.k or 2)

    adversaries = select_adversaries(topology, config.adversary_fraction, rngs[Stream.ADVERSARY])
    honest = [v for v in range(topology.n) if v not in adversaries.nodes]
    if schedule is None:
        schedule = default_schedule(config, honest, rngs)

    sim = Simulator(
        topology,
        protocol_config(config, topology, d_max),
        membership,
        rngs,
        round_interval=config.round_interval,
        adaptive_interval=config.adaptive_interval,
        event_cap=config.event_cap,
    )
    for tick, node, message in schedule:
        sim.schedule_origin(tick, node, message)

    logger.info(
        f"Run {run_id}: mode={config.mode.value} n={topology.n} seed={seed} "
        f"d_max={d_max} messages={len(schedule)}"
    )
    try:
        trace = sim.run()
    except NonTermination:
        MetricsCollector.record_run(config.mode.value, "aborted")
        raise

    records = list(sim.messages.values())
    reach = float(np.mean([sim.reach_of(r.message_id) for r in records])) if records else 0.0
    report = RunReport(
        run_id=run_id,
        seed=seed,
        n=topology.n,
        k=config.k,
        d_max=d_max,
        adversary_frac=config.adversary_fraction,
        mode=config.mode.value,
        counts=count_messages(trace),
        reach=reach,
        ticks=sim.now,
        events=sim.events,
        messages=records,
        adversaries=sorted(adversaries.nodes),
        dropped=sim.dropped,
        true_origin=records[0].origin if records else None,
    )
    MetricsCollector.record_run(config.mode.value, "ok", sim.now)
    logger.info(
        f"Run {run_id} done: {report.counts.total} messages, reach={reach:.3f}, ticks={sim.now}"
    )
    return trace, report
