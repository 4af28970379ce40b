"""
Per-node state machine for the three broadcast phases.

A message enters through originate(): DC-net rounds in one of the origin's
groups publish it anonymously, the group member whose identity hash is
closest to the message hash becomes the initial virtual source, adaptive
diffusion grows the infected ball for d_max rounds and the final frontier
switches to flood and prune.

Nodes never touch the event queue directly; everything they need from the
simulator goes through a ProtocolContext.
"""
import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from src.core.dcnet import (
    BASE_ROUND_SIZE,
    FRAME_OVERHEAD,
    MAX_ROUND_SIZE,
    OutcomeKind,
    Payload,
    RoundState,
    RoundStep,
    announce_length,
    encode_announcement,
    frame,
    schedule_backoff,
)
from src.core.diffusion import (
    AlphaSchedule,
    DiffusionState,
    VirtualSourceToken,
    finalize,
    pass_or_keep,
    relay_targets,
)
from src.core.exceptions import (
    MissingShare,
    NetworkTooSmall,
    NotAMember,
    OversizeMessage,
    UnknownKind,
)
from src.core.flood import SeenSet, on_flood_receive
from src.core.groups import GroupView, MembershipIndex, select_group
from src.models.schemas import Mode
from src.utils.rng import Stream

HEADER_BYTES = 16
CONTROL_BYTES = 16


class EnvelopeKind(str, Enum):
    DC_SHARE = "DcShare"
    DC_ACCUM_S = "DcAccumS"
    DC_ACCUM_T = "DcAccumT"
    TOKEN_PASS = "TokenPass"
    DIFFUSION_SPREAD = "DiffusionSpread"
    FINAL_SWITCH = "FinalSwitch"
    FLOOD = "Flood"

    @property
    def phase(self) -> int:
        return PHASE_OF[self]


PHASE_OF = {
    EnvelopeKind.DC_SHARE: 1,
    EnvelopeKind.DC_ACCUM_S: 1,
    EnvelopeKind.DC_ACCUM_T: 1,
    EnvelopeKind.TOKEN_PASS: 2,
    EnvelopeKind.DIFFUSION_SPREAD: 2,
    EnvelopeKind.FINAL_SWITCH: 2,
    EnvelopeKind.FLOOD: 3,
}

STEP_KIND = {
    RoundStep.SHARES_OUT: EnvelopeKind.DC_SHARE,
    RoundStep.S_COLLECTED: EnvelopeKind.DC_ACCUM_S,
    RoundStep.T_COLLECTED: EnvelopeKind.DC_ACCUM_T,
}


@dataclass(frozen=True)
class Envelope:
    """
    Phase-tagged simulated wire message. DC envelopes carry a round label
    (`g<group>r<round>`) as message_id since the message is not known yet.
    """

    kind: str
    message_id: str
    src: int
    dst: int
    payload: bytes = b""
    group_id: Optional[int] = None
    round_id: Optional[int] = None
    token: Optional[VirtualSourceToken] = None
    hops: int = 0
    step: int = 0

    @property
    def phase(self) -> int:
        return PHASE_OF.get(self.kind, 0)  # type: ignore[call-overload]

    @property
    def size(self) -> int:
        """Header plus payload bytes as accounted by the traffic counters"""
        if self.kind == EnvelopeKind.FINAL_SWITCH:
            return HEADER_BYTES + CONTROL_BYTES
        if self.kind == EnvelopeKind.TOKEN_PASS:
            # the token may reach a node that does not hold the message yet
            return HEADER_BYTES + CONTROL_BYTES + len(self.payload)
        return HEADER_BYTES + len(self.payload)


def round_label(group_id: int, round_id: int) -> str:
    return f"g{group_id}r{round_id}"


def message_id(message: bytes) -> str:
    return hashlib.sha256(message).hexdigest()[:16]


def identity_digest(node_id: int) -> int:
    """SHA-256 of the node's public identifier as a 256-bit integer"""
    return int.from_bytes(hashlib.sha256(f"node-{node_id}".encode()).digest(), "big")


def message_digest(message: bytes) -> int:
    return int.from_bytes(hashlib.sha256(message).digest(), "big")


def elect_initial_vs(group: Union[GroupView, Sequence[int]], message: Union[Payload, bytes]) -> int:
    """Member whose identity digest is XOR-closest to the message digest"""
    members = group.members if isinstance(group, GroupView) else list(group)
    data = message.message if isinstance(message, Payload) else bytes(message)
    target = message_digest(data)
    return min(members, key=lambda m: (identity_digest(m) ^ target, m))


class TimerKind(str, Enum):
    ROUND_START = "round_start"
    ROUND_DEADLINE = "round_deadline"
    VS_TICK = "vs_tick"


@dataclass(frozen=True)
class Timer:
    kind: TimerKind
    node: int
    group_id: Optional[int] = None
    round_id: Optional[int] = None
    size: int = BASE_ROUND_SIZE
    announcement: bool = True
    message_id: Optional[str] = None


@dataclass(frozen=True)
class ProtocolConfig:
    mode: Mode = Mode.FULL
    d_max: Optional[int] = None
    degree: int = 3
    alpha_schedule: AlphaSchedule = AlphaSchedule.DP
    link_delay: int = 1
    length_announcement: bool = True
    round_size: int = BASE_ROUND_SIZE
    max_round_size: int = MAX_ROUND_SIZE


class ProtocolContext(Protocol):
    """What a node may ask of the simulator"""

    config: ProtocolConfig
    membership: MembershipIndex

    @property
    def now(self) -> int:
        ...

    def neighbors(self, node: int) -> Sequence[int]:
        ...

    def rng(self, purpose: Stream) -> np.random.Generator:
        ...

    def set_timer(self, delay: int, timer: Timer) -> None:
        ...

    def request_round(self, group_id: int) -> None:
        ...

    def schedule_round(
        self,
        group_id: int,
        round_id: int,
        size: int,
        announcement: bool,
        outcome: OutcomeKind,
    ) -> None:
        ...

    def deliver(
        self,
        node: int,
        message_id: str,
        group_id: Optional[int] = None,
        round_id: Optional[int] = None,
    ) -> None:
        ...

    def coverage_complete(self, message_id: str) -> bool:
        ...


@dataclass
class PendingMessage:
    message_id: str
    message: bytes
    group_id: int
    attempt: int = 0
    backoff_until: int = 0
    created_at: int = 0


@dataclass
class NodeState:
    node_id: int
    groups: Tuple[int, ...] = ()
    identity_digest: int = field(init=False)
    messages: Dict[str, bytes] = field(default_factory=dict)
    diffusion: Dict[str, DiffusionState] = field(default_factory=dict)
    seen: SeenSet = field(default_factory=SeenSet)
    pending: List[PendingMessage] = field(default_factory=list)
    rounds: Dict[Tuple[int, int], RoundState] = field(default_factory=dict)
    contenders: Dict[Tuple[int, int], str] = field(default_factory=dict)
    early: Dict[Tuple[int, int], List[Envelope]] = field(default_factory=dict)
    dropped: int = 0

    def __post_init__(self):
        self.identity_digest = identity_digest(self.node_id)

    def has_pending(self, group_id: int) -> bool:
        return any(p.group_id == group_id for p in self.pending)

    def pending_for(self, message_id: str) -> Optional[PendingMessage]:
        return next((p for p in self.pending if p.message_id == message_id), None)


# phase 1


def originate(state: NodeState, message: bytes, ctx: ProtocolContext) -> List[Envelope]:
    """
    Enter a new message. In the DC modes this only queues it and wakes the
    group clock; the shares go out when the next round starts.
    """
    cfg = ctx.config
    mid = message_id(message)
    state.messages[mid] = message
    ctx.deliver(state.node_id, mid)

    if cfg.mode is Mode.FLOOD_ONLY:
        return _flood_from(state, mid, message, None, ctx)
    if cfg.mode is Mode.DIFFUSION_ONLY:
        return _become_initial_vs(state, mid, ctx)

    framed = len(message) + FRAME_OVERHEAD
    limit = cfg.max_round_size if cfg.length_announcement else cfg.round_size
    if framed > limit:
        raise OversizeMessage(f"message of {len(message)} bytes exceeds the {limit}-byte round")
    try:
        group_id = select_group(state.node_id, ctx.membership, ctx.rng(Stream.GROUPS))
    except NotAMember as e:
        raise NetworkTooSmall(f"node {state.node_id} has no DC-net group yet") from e
    state.pending.append(PendingMessage(mid, message, group_id, created_at=ctx.now))
    logger.debug(f"Node {state.node_id} queued message {mid} for group {group_id}")
    ctx.request_round(group_id)
    return []


def _contend(
    state: NodeState, group_id: int, round_id: int, size: int, announcement: bool
) -> Tuple[bytes, Optional[str]]:
    for pending in state.pending:
        if pending.group_id != group_id or pending.backoff_until > round_id:
            continue
        framed = len(pending.message) + FRAME_OVERHEAD
        if announcement:
            return encode_announcement(framed).raw, pending.message_id
        if framed <= size:
            return frame(pending.message, size).raw, pending.message_id
    return b"", None


def begin_round(
    state: NodeState,
    group_id: int,
    round_id: int,
    size: int,
    announcement: bool,
    ctx: ProtocolContext,
) -> List[Envelope]:
    """Start this member's side of a round: shares to every peer"""
    group = ctx.membership.groups[group_id]
    key = (group_id, round_id)
    own, contender = _contend(state, group_id, round_id, size, announcement)
    rs = RoundState(
        group_id=group_id,
        round_id=round_id,
        peers=tuple(sorted(m for m in group.members if m != state.node_id)),
        payload_size=size,
        own_input=own,
        announcement=announcement,
        started_at=ctx.now,
    )
    state.rounds[key] = rs
    if contender is not None:
        state.contenders[key] = contender
    ctx.set_timer(
        3 * ctx.config.link_delay + 1,
        Timer(TimerKind.ROUND_DEADLINE, state.node_id, group_id, round_id),
    )
    out = _emit(state, rs, rs.start(ctx.rng(Stream.SHARES)))
    for env in state.early.pop(key, []):
        out.extend(_on_dc(state, env, ctx))
    return out


def _emit(state: NodeState, rs: RoundState, steps) -> List[Envelope]:
    label = round_label(rs.group_id, rs.round_id)
    return [
        Envelope(
            kind=STEP_KIND[step],
            message_id=label,
            src=state.node_id,
            dst=peer,
            payload=values[peer],
            group_id=rs.group_id,
            round_id=rs.round_id,
        )
        for step, values in steps
        for peer in sorted(values)
    ]


def _on_dc(state: NodeState, env: Envelope, ctx: ProtocolContext) -> List[Envelope]:
    key = (env.group_id, env.round_id)
    rs = state.rounds.get(key)
    if rs is None:
        state.early.setdefault(key, []).append(env)
        return []
    if env.kind == EnvelopeKind.DC_SHARE:
        steps = rs.receive_share(env.src, env.payload)
    elif env.kind == EnvelopeKind.DC_ACCUM_S:
        steps = rs.receive_accumulation(env.src, env.payload)
    else:
        steps = rs.receive_final(env.src)
    out = _emit(state, rs, steps)
    if rs.outcome is not None:
        out.extend(_complete_round(state, rs, ctx))
    return out


def _back_off(state: NodeState, mid: str, round_id: int, ctx: ProtocolContext) -> None:
    pending = state.pending_for(mid)
    if pending is None:
        return
    pending.attempt += 1
    pending.backoff_until = schedule_backoff(round_id, pending.attempt, ctx.rng(Stream.BACKOFF))
    logger.debug(
        f"Node {state.node_id} backs off message {mid} until round "
        f"{pending.backoff_until} (attempt {pending.attempt})"
    )


def _complete_round(state: NodeState, rs: RoundState, ctx: ProtocolContext) -> List[Envelope]:
    cfg = ctx.config
    key = (rs.group_id, rs.round_id)
    state.rounds.pop(key, None)
    contender = state.contenders.pop(key, None)
    outcome = rs.outcome
    next_round = rs.round_id + 1
    base_size = BASE_ROUND_SIZE if cfg.length_announcement else cfg.round_size

    if rs.announcement:
        decision = announce_length(outcome, cfg.max_round_size)
        if contender is not None and (decision.backoff or not outcome.own):
            _back_off(state, contender, rs.round_id, ctx)
        if decision.follow_up:
            ctx.schedule_round(rs.group_id, next_round, decision.payload_size, False, outcome.kind)
        else:
            ctx.schedule_round(
                rs.group_id, next_round, base_size, cfg.length_announcement, outcome.kind
            )
        return []

    out: List[Envelope] = []
    if outcome.kind is OutcomeKind.MESSAGE:
        message = outcome.payload.message
        mid = message_id(message)
        if contender == mid:
            state.pending = [p for p in state.pending if p.message_id != mid]
        elif contender is not None:
            _back_off(state, contender, rs.round_id, ctx)
        first = mid not in state.diffusion and mid not in state.seen
        state.messages[mid] = message
        ctx.deliver(state.node_id, mid, rs.group_id, rs.round_id)
        group = ctx.membership.groups[rs.group_id]
        if (
            cfg.mode is Mode.FULL
            and first
            and elect_initial_vs(group, message) == state.node_id
        ):
            out = _become_initial_vs(state, mid, ctx)
    elif outcome.kind is OutcomeKind.COLLISION and contender is not None:
        _back_off(state, contender, rs.round_id, ctx)
    ctx.schedule_round(rs.group_id, next_round, base_size, cfg.length_announcement, outcome.kind)
    return out


# phase 2


def _become_initial_vs(state: NodeState, mid: str, ctx: ProtocolContext) -> List[Envelope]:
    ds = state.diffusion.setdefault(mid, DiffusionState())
    ds.infect(None)
    ds.is_virtual_source = True
    ds.token = VirtualSourceToken(mid, d_max=ctx.config.d_max)
    logger.debug(f"Node {state.node_id} is the initial virtual source of {mid}")
    return _vs_tick(state, mid, ctx)


def _vs_tick(state: NodeState, mid: str, ctx: ProtocolContext) -> List[Envelope]:
    cfg = ctx.config
    ds = state.diffusion.get(mid)
    if ds is None or not ds.is_virtual_source or ds.token is None:
        return []
    token = ds.token
    message = state.messages[mid]
    neighbors = ctx.neighbors(state.node_id)

    if cfg.mode is Mode.DIFFUSION_ONLY and ctx.coverage_complete(mid):
        finalize(token, ds)
        return []
    if token.exhausted:
        hops = finalize(token, ds)
        if cfg.mode is Mode.DIFFUSION_ONLY:
            return []
        if token.radius == 0:
            return _flood_from(state, mid, message, None, ctx)
        ds.final_seen = True
        return [
            Envelope(EnvelopeKind.FINAL_SWITCH, mid, state.node_id, n, hops=hops)
            for n in neighbors
        ]

    decision = pass_or_keep(
        token, ctx.rng(Stream.TOKEN), neighbors, cfg.degree, cfg.alpha_schedule
    )
    if decision.passed:
        ds.is_virtual_source = False
        ds.token = None
        return [
            Envelope(
                EnvelopeKind.TOKEN_PASS,
                mid,
                state.node_id,
                decision.target,
                payload=message,
                token=token.advanced(True, sender=state.node_id),
            )
        ]
    ds.token = token.advanced(False)
    return _spread_from(state, mid, ds.token, None, ctx)


def _spread_from(
    state: NodeState,
    mid: str,
    token: VirtualSourceToken,
    exclude: Optional[int],
    ctx: ProtocolContext,
) -> List[Envelope]:
    """Grow the ball to token.radius around this holder, then tick again"""
    ds = state.diffusion[mid]
    ds.spread_rounds.add(token.t)
    ctx.set_timer(
        (token.radius + 1) * ctx.config.link_delay,
        Timer(TimerKind.VS_TICK, state.node_id, message_id=mid),
    )
    return [
        Envelope(
            EnvelopeKind.DIFFUSION_SPREAD,
            mid,
            state.node_id,
            n,
            payload=state.messages[mid],
            hops=token.radius - 1,
            step=token.t,
        )
        for n in relay_targets(ctx.neighbors(state.node_id), exclude)
    ]


def _receive_message(state: NodeState, env: Envelope, ctx: ProtocolContext) -> DiffusionState:
    ds = state.diffusion.setdefault(env.message_id, DiffusionState())
    ds.infect(env.src)
    if env.payload:
        state.messages.setdefault(env.message_id, env.payload)
    if env.message_id in state.messages:
        ctx.deliver(state.node_id, env.message_id)
    return ds


def _on_token_pass(state: NodeState, env: Envelope, ctx: ProtocolContext) -> List[Envelope]:
    ds = _receive_message(state, env, ctx)
    ds.is_virtual_source = True
    ds.token = env.token
    return _spread_from(state, env.message_id, env.token, env.src, ctx)


def _on_spread(state: NodeState, env: Envelope, ctx: ProtocolContext) -> List[Envelope]:
    ds = _receive_message(state, env, ctx)
    if env.step in ds.spread_rounds:
        return []
    ds.spread_rounds.add(env.step)
    if env.hops <= 0:
        return []
    return [
        Envelope(
            EnvelopeKind.DIFFUSION_SPREAD,
            env.message_id,
            state.node_id,
            n,
            payload=env.payload,
            hops=env.hops - 1,
            step=env.step,
        )
        for n in relay_targets(ctx.neighbors(state.node_id), env.src)
    ]


def _on_final_switch(state: NodeState, env: Envelope, ctx: ProtocolContext) -> List[Envelope]:
    mid = env.message_id
    ds = _receive_message(state, env, ctx)
    if ds.final_seen or mid in state.seen:
        return []
    ds.final_seen = True
    if env.hops > 0:
        return [
            Envelope(EnvelopeKind.FINAL_SWITCH, mid, state.node_id, n, hops=env.hops - 1)
            for n in relay_targets(ctx.neighbors(state.node_id), env.src)
        ]
    message = state.messages.get(mid)
    if message is None:
        logger.warning(f"Node {state.node_id} reached by the switch for {mid} without the message")
        return []
    return _flood_from(state, mid, message, env.src, ctx)


# phase 3


def _flood_from(
    state: NodeState,
    mid: str,
    message: bytes,
    sender: Optional[int],
    ctx: ProtocolContext,
) -> List[Envelope]:
    targets = on_flood_receive(state.seen, mid, ctx.neighbors(state.node_id), sender)
    return [Envelope(EnvelopeKind.FLOOD, mid, state.node_id, n, payload=message) for n in targets]


def _on_flood(state: NodeState, env: Envelope, ctx: ProtocolContext) -> List[Envelope]:
    mid = env.message_id
    state.messages.setdefault(mid, env.payload)
    ctx.deliver(state.node_id, mid)
    ds = state.diffusion.get(mid)
    if ds is not None and ds.infected:
        # inside the diffusion ball; the frontier already floods outward
        state.seen.mark(mid)
        return []
    return _flood_from(state, mid, env.payload, env.src, ctx)


_HANDLERS: Dict[EnvelopeKind, Callable[[NodeState, Envelope, ProtocolContext], List[Envelope]]] = {
    EnvelopeKind.DC_SHARE: _on_dc,
    EnvelopeKind.DC_ACCUM_S: _on_dc,
    EnvelopeKind.DC_ACCUM_T: _on_dc,
    EnvelopeKind.TOKEN_PASS: _on_token_pass,
    EnvelopeKind.DIFFUSION_SPREAD: _on_spread,
    EnvelopeKind.FINAL_SWITCH: _on_final_switch,
    EnvelopeKind.FLOOD: _on_flood,
}


def _kind_of(env: Envelope) -> EnvelopeKind:
    try:
        return EnvelopeKind(env.kind)
    except ValueError:
        raise UnknownKind(f"unknown envelope kind {env.kind!r} from node {env.src}") from None


def on_envelope(state: NodeState, env: Envelope, ctx: ProtocolContext) -> List[Envelope]:
    """Dispatch a delivered envelope; unknown kinds are counted and dropped"""
    try:
        kind = _kind_of(env)
    except UnknownKind as e:
        state.dropped += 1
        logger.warning(f"Node {state.node_id} dropped envelope: {e}")
        return []
    return _HANDLERS[kind](state, env, ctx)


def on_timer(state: NodeState, timer: Timer, ctx: ProtocolContext) -> List[Envelope]:
    if timer.kind is TimerKind.ROUND_START:
        return begin_round(
            state, timer.group_id, timer.round_id, timer.size, timer.announcement, ctx
        )
    if timer.kind is TimerKind.ROUND_DEADLINE:
        key = (timer.group_id, timer.round_id)
        rs = state.rounds.get(key)
        if rs is None:
            return []
        try:
            rs.check_deadline()
        except MissingShare as e:
            logger.warning(f"Node {state.node_id}: {e}")
            state.rounds.pop(key, None)
            state.contenders.pop(key, None)
            ctx.request_round(timer.group_id)
        return []
    return _vs_tick(state, timer.message_id, ctx)
