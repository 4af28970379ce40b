"""
One DC-net round: share generation, the two accumulation exchanges,
recovery, CRC collision detection, backoff and the length announcement.

Group notation: a round runs in a group of size g = k + 1, i.e. every member
talks to k peers. `RoundState.peers` holds those k peers.
"""
import hashlib
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from loguru import logger

from src.core.exceptions import MissingShare, OversizeMessage

LENGTH_BYTES = 4
CRC_BYTES = 4
FRAME_OVERHEAD = LENGTH_BYTES + CRC_BYTES
BASE_ROUND_SIZE = 8
MAX_ROUND_SIZE = 1 << 20
MAX_BACKOFF_EXPONENT = 6


def checksum(data: bytes) -> int:
    """CRC-32 of data as an unsigned 32-bit integer"""
    return zlib.crc32(data) & 0xFFFFFFFF


def frame_check(body: bytes) -> int:
    """
    Check value carried by frames and announcements: CRC-32 over the SHA-256
    of the body. A plain CRC is affine, so the XOR of an odd number of
    equal-length frames would carry a valid one.
    """
    return checksum(hashlib.sha256(body).digest())


def xor_all(chunks: Sequence[bytes], size: int) -> bytes:
    """Bitwise XOR of equally sized byte strings (all-zero when empty)"""
    if not chunks:
        return bytes(size)
    stacked = np.frombuffer(b"".join(chunks), dtype=np.uint8).reshape(len(chunks), size)
    return np.bitwise_xor.reduce(stacked, axis=0).tobytes()


def is_zero(data: bytes) -> bool:
    return not data.strip(b"\x00")


@dataclass(frozen=True)
class Payload:
    """A fixed-size round payload; `valid` is False when the checksum does not hold"""

    raw: bytes
    message: bytes
    crc: int
    valid: bool = True

    @property
    def size(self) -> int:
        return len(self.raw)


def frame(message: bytes, n: int) -> Payload:
    """Length prefix + message + check value, zero padded to n bytes"""
    if len(message) + FRAME_OVERHEAD > n:
        raise OversizeMessage(
            f"message of {len(message)} bytes does not fit a {n}-byte frame"
        )
    body = len(message).to_bytes(LENGTH_BYTES, "big") + message
    crc = frame_check(body)
    raw = body + crc.to_bytes(CRC_BYTES, "big")
    return Payload(raw=raw + bytes(n - len(raw)), message=message, crc=crc)


def unframe(raw: bytes) -> Payload:
    """Inverse of frame(); never raises, flags damaged input as invalid"""
    if len(raw) < FRAME_OVERHEAD:
        return Payload(raw=raw, message=b"", crc=0, valid=False)
    length = int.from_bytes(raw[:LENGTH_BYTES], "big")
    end = LENGTH_BYTES + length
    if end + CRC_BYTES > len(raw):
        return Payload(raw=raw, message=b"", crc=0, valid=False)
    crc = int.from_bytes(raw[end : end + CRC_BYTES], "big")
    valid = crc == frame_check(raw[:end]) and is_zero(raw[end + CRC_BYTES :])
    message = raw[LENGTH_BYTES:end] if valid else b""
    return Payload(raw=raw, message=message, crc=crc, valid=valid)


def encode_announcement(length: int) -> Payload:
    """8-byte announcement record: 32-bit length followed by its check value"""
    if not 0 <= length < (1 << 32):
        raise OversizeMessage(f"announced length {length} does not fit 32 bits")
    body = length.to_bytes(LENGTH_BYTES, "big")
    crc = frame_check(body)
    return Payload(raw=body + crc.to_bytes(CRC_BYTES, "big"), message=body, crc=crc)


def decode_announcement(raw: bytes) -> Payload:
    if len(raw) != BASE_ROUND_SIZE:
        return Payload(raw=raw, message=b"", crc=0, valid=False)
    body = raw[:LENGTH_BYTES]
    crc = int.from_bytes(raw[LENGTH_BYTES:], "big")
    valid = crc == frame_check(body)
    return Payload(raw=raw, message=body if valid else b"", crc=crc, valid=valid)


@dataclass(frozen=True)
class ShareVector:
    shares: Tuple[bytes, ...]

    def combined(self) -> bytes:
        return xor_all(self.shares, len(self.shares[0]))


def split_shares(payload, k: int, rng: np.random.Generator) -> ShareVector:
    """k shares whose XOR is the payload; the first k-1 are uniform random"""
    if k < 1:
        raise ValueError("k must be at least 1")
    data = payload.raw if isinstance(payload, Payload) else bytes(payload)
    randoms = [rng.bytes(len(data)) for _ in range(k - 1)]
    last = xor_all([data, *randoms], len(data))
    return ShareVector(shares=tuple(randoms) + (last,))


def accumulate_s(
    received: Mapping[int, bytes],
    expected: Optional[Iterable[int]] = None,
    size: Optional[int] = None,
) -> Tuple[bytes, Dict[int, bytes]]:
    """
    Returns (S, replies) where S is the XOR of all received values and the
    reply to member i is S with i's own contribution removed.

    Steps 7-8 of the round are the same computation over the t values.
    """
    if expected is not None:
        missing = sorted(set(expected) - set(received))
        if missing:
            raise MissingShare(f"no value received from members {missing}")
    if size is None:
        size = len(next(iter(received.values())))
    members = sorted(received)
    total = xor_all([received[m] for m in members], size)
    replies = {m: xor_all([total, received[m]], size) for m in members}
    return total, replies


class OutcomeKind(str, Enum):
    SILENCE = "silence"
    MESSAGE = "message"
    COLLISION = "collision"


@dataclass(frozen=True)
class RecoveryOutcome:
    kind: OutcomeKind
    payload: Optional[Payload] = None
    own: bool = False


def recover(
    T: bytes, S: bytes, own_input: bytes, announcement: bool = False
) -> RecoveryOutcome:
    """
    T xor S at member c equals M xor m_c, so M is rebuilt by folding the own
    input back in. Zero means silence, a valid checksum a message and
    anything else a collision.
    """
    combined = xor_all([T, S, own_input], len(T))
    if is_zero(combined):
        return RecoveryOutcome(OutcomeKind.SILENCE)
    payload = decode_announcement(combined) if announcement else unframe(combined)
    if not payload.valid:
        return RecoveryOutcome(OutcomeKind.COLLISION, payload)
    return RecoveryOutcome(OutcomeKind.MESSAGE, payload, own=combined == own_input)


def schedule_backoff(round_id: int, attempt: int, rng: np.random.Generator) -> int:
    """Round of the next attempt after `attempt` consecutive collisions"""
    exponent = min(max(attempt, 1), MAX_BACKOFF_EXPONENT)
    low = 1 if attempt <= 1 else 2
    return round_id + int(rng.integers(low, 2**exponent + 1))


@dataclass(frozen=True)
class ScheduleDecision:
    payload_size: int
    follow_up: bool = False
    backoff: bool = False


def announce_length(
    outcome: RecoveryOutcome, max_size: int = MAX_ROUND_SIZE
) -> ScheduleDecision:
    """Turn the outcome of an announcement round into the next round's plan"""
    if outcome.kind is OutcomeKind.COLLISION:
        return ScheduleDecision(BASE_ROUND_SIZE, backoff=True)
    if outcome.kind is OutcomeKind.SILENCE:
        return ScheduleDecision(BASE_ROUND_SIZE)
    length = int.from_bytes(outcome.payload.message, "big")
    if length == 0:
        return ScheduleDecision(BASE_ROUND_SIZE)
    # a length outside the frame range can only come from a damaged round
    if length < FRAME_OVERHEAD or length > max_size:
        logger.warning(f"Implausible announced length {length}, treating as collision")
        return ScheduleDecision(BASE_ROUND_SIZE, backoff=True)
    return ScheduleDecision(length, follow_up=True)


class RoundStep(str, Enum):
    SHARES_OUT = "shares_out"
    S_COLLECTED = "s_collected"
    T_COLLECTED = "t_collected"
    DONE = "done"


@dataclass
class RoundState:
    """One member's view of one round"""

    group_id: int
    round_id: int
    peers: Tuple[int, ...]
    payload_size: int
    own_input: bytes
    announcement: bool = True
    started_at: int = 0
    backoff_until: int = 0
    phase_step: RoundStep = RoundStep.SHARES_OUT
    received_s: Dict[int, bytes] = field(default_factory=dict)
    received_t: Dict[int, bytes] = field(default_factory=dict)
    final_acks: Set[int] = field(default_factory=set)
    S: Optional[bytes] = None
    T: Optional[bytes] = None
    outcome: Optional[RecoveryOutcome] = None

    def __post_init__(self):
        if not self.own_input:
            self.own_input = bytes(self.payload_size)
        if len(self.own_input) != self.payload_size:
            raise ValueError(
                f"input of {len(self.own_input)} bytes for a {self.payload_size}-byte round"
            )

    @property
    def sending(self) -> bool:
        return not is_zero(self.own_input)

    def start(self, rng: np.random.Generator) -> List[Tuple[RoundStep, Dict[int, bytes]]]:
        """Step 1-2: shares for every peer, in ascending peer order"""
        out: List[Tuple[RoundStep, Dict[int, bytes]]] = []
        if self.peers:
            vector = split_shares(self.own_input, len(self.peers), rng)
            out.append((RoundStep.SHARES_OUT, dict(zip(self.peers, vector.shares))))
        out.extend(self._advance())
        return out

    def receive_share(self, src: int, value: bytes) -> List[Tuple[RoundStep, Dict[int, bytes]]]:
        self.received_s.setdefault(src, value)
        return self._advance()

    def receive_accumulation(
        self, src: int, value: bytes
    ) -> List[Tuple[RoundStep, Dict[int, bytes]]]:
        self.received_t.setdefault(src, value)
        return self._advance()

    def receive_final(self, src: int) -> List[Tuple[RoundStep, Dict[int, bytes]]]:
        self.final_acks.add(src)
        return self._advance()

    def missing(self) -> List[int]:
        if self.phase_step is RoundStep.SHARES_OUT:
            seen = set(self.received_s)
        elif self.phase_step is RoundStep.S_COLLECTED:
            seen = set(self.received_t)
        else:
            seen = self.final_acks
        return sorted(set(self.peers) - seen)

    def check_deadline(self) -> None:
        """Raise MissingShare when the round is still incomplete at its deadline"""
        if self.phase_step is not RoundStep.DONE:
            raise MissingShare(
                f"round {self.round_id} of group {self.group_id} stuck at "
                f"{self.phase_step.value}, missing {self.missing()}"
            )

    def _advance(self) -> List[Tuple[RoundStep, Dict[int, bytes]]]:
        out: List[Tuple[RoundStep, Dict[int, bytes]]] = []
        if self.phase_step is RoundStep.SHARES_OUT and len(self.received_s) == len(self.peers):
            self.S, replies = accumulate_s(self.received_s, self.peers, self.payload_size)
            self.phase_step = RoundStep.S_COLLECTED
            out.append((RoundStep.S_COLLECTED, replies))
        if self.phase_step is RoundStep.S_COLLECTED and len(self.received_t) == len(self.peers):
            self.T, replies = accumulate_s(self.received_t, self.peers, self.payload_size)
            self.phase_step = RoundStep.T_COLLECTED
            out.append((RoundStep.T_COLLECTED, replies))
        if self.phase_step is RoundStep.T_COLLECTED and len(self.final_acks) == len(self.peers):
            self.outcome = recover(self.T, self.S, self.own_input, self.announcement)
            self.phase_step = RoundStep.DONE
        return out
