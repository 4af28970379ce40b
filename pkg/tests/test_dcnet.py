from collections import deque

import numpy as np
import pytest
from scipy.stats import chi2_contingency, chisquare

from src.core.dcnet import (
    BASE_ROUND_SIZE,
    FRAME_OVERHEAD,
    OutcomeKind,
    RecoveryOutcome,
    RoundState,
    RoundStep,
    accumulate_s,
    announce_length,
    decode_announcement,
    encode_announcement,
    frame,
    recover,
    schedule_backoff,
    split_shares,
    unframe,
    xor_all,
)
from src.core.exceptions import MissingShare, OversizeMessage


def run_round(inputs, size, rng, announcement=False):
    """Drive one round between RoundStates, delivering values in FIFO order"""
    members = sorted(inputs)
    states = {
        m: RoundState(
            group_id=0,
            round_id=0,
            peers=tuple(p for p in members if p != m),
            payload_size=size,
            own_input=inputs[m],
            announcement=announcement,
        )
        for m in members
    }
    queue = deque()
    sent = 0

    def enqueue(src, steps):
        nonlocal sent
        for step, values in steps:
            for dst, value in sorted(values.items()):
                queue.append((step, src, dst, value))
                sent += 1

    for m in members:
        enqueue(m, states[m].start(rng))
    while queue:
        step, src, dst, value = queue.popleft()
        rs = states[dst]
        if step is RoundStep.SHARES_OUT:
            enqueue(dst, rs.receive_share(src, value))
        elif step is RoundStep.S_COLLECTED:
            enqueue(dst, rs.receive_accumulation(src, value))
        else:
            enqueue(dst, rs.receive_final(src))
    return states, sent


def test_frame_and_unframe():
    payload = frame(b"hello", 32)
    assert payload.size == 32
    decoded = unframe(payload.raw)
    assert decoded.valid
    assert decoded.message == b"hello"


def test_frame_rejects_oversize_message():
    frame(b"x" * 24, 32)
    with pytest.raises(OversizeMessage):
        frame(b"x" * 25, 32)


def test_unframe_flags_damage():
    raw = bytearray(frame(b"payload", 24).raw)
    raw[6] ^= 0x01
    assert not unframe(bytes(raw)).valid
    # non-zero padding
    raw = bytearray(frame(b"payload", 24).raw)
    raw[-1] = 1
    assert not unframe(bytes(raw)).valid
    assert not unframe(b"\x00\x00\x00\xff" + bytes(8)).valid


def test_announcement_record():
    record = encode_announcement(73)
    assert record.size == BASE_ROUND_SIZE
    decoded = decode_announcement(record.raw)
    assert decoded.valid
    assert int.from_bytes(decoded.message, "big") == 73
    assert not decode_announcement(record.raw[:4] + bytes(4)).valid


def test_split_shares_xor_to_payload(rng):
    payload = frame(b"secret", 16)
    for k in (1, 2, 5):
        vector = split_shares(payload, k, rng)
        assert len(vector.shares) == k
        assert vector.combined() == payload.raw


def test_accumulate_s_replies_exclude_own_value():
    received = {1: b"\x01\x00", 2: b"\x02\x00", 3: b"\x04\x01"}
    total, replies = accumulate_s(received, expected=[1, 2, 3])
    assert total == b"\x07\x01"
    assert replies[1] == b"\x06\x01"
    assert replies[3] == b"\x03\x00"


def test_accumulate_s_missing_share():
    with pytest.raises(MissingShare):
        accumulate_s({1: b"\x00"}, expected=[1, 2])


@pytest.mark.parametrize("group_size", [3, 4])
def test_recovery_contract_exhaustive(group_size):
    rng = np.random.default_rng(group_size)
    size = 1 + FRAME_OVERHEAD
    sender = 0
    for value in range(256):
        message = bytes([value])
        inputs = {m: bytes(size) for m in range(group_size)}
        inputs[sender] = frame(message, size).raw
        states, sent = run_round(inputs, size, rng)
        assert sent == 3 * group_size * (group_size - 1)
        published = xor_all(list(inputs.values()), size)
        for member, rs in states.items():
            assert rs.phase_step is RoundStep.DONE
            assert xor_all([rs.T, rs.S], size) == xor_all([published, inputs[member]], size)
            assert rs.outcome.kind is OutcomeKind.MESSAGE
            assert rs.outcome.payload.message == message
            assert rs.outcome.own == (member == sender)


def test_silent_round(rng):
    inputs = {m: b"" for m in range(4)}
    states, _ = run_round(inputs, 16, rng)
    assert all(rs.outcome.kind is OutcomeKind.SILENCE for rs in states.values())


def test_two_senders_collide(rng):
    inputs = {m: b"" for m in range(5)}
    inputs[1] = frame(b"first", 24).raw
    inputs[3] = frame(b"second", 24).raw
    states, _ = run_round(inputs, 24, rng)
    assert {rs.outcome.kind for rs in states.values()} == {OutcomeKind.COLLISION}


def test_collision_detection_rate(rng):
    size = 32
    detected = 0
    trials = 10_000
    for _ in range(trials):
        a = rng.bytes(int(rng.integers(1, 21)))
        b = rng.bytes(int(rng.integers(1, 21)))
        combined = xor_all([frame(a, size).raw, frame(b, size).raw], size)
        outcome = recover(combined, bytes(size), bytes(size))
        detected += outcome.kind is OutcomeKind.COLLISION
    assert detected / trials > 0.999


def test_announcement_round(rng):
    length = 20 + FRAME_OVERHEAD
    inputs = {m: b"" for m in range(4)}
    inputs[2] = encode_announcement(length).raw
    states, _ = run_round(inputs, BASE_ROUND_SIZE, rng, announcement=True)
    for rs in states.values():
        decision = announce_length(rs.outcome)
        assert decision.follow_up
        assert decision.payload_size == length


def test_announce_length_decisions():
    assert announce_length(RecoveryOutcome(OutcomeKind.COLLISION)).backoff
    silence = announce_length(RecoveryOutcome(OutcomeKind.SILENCE))
    assert not silence.follow_up
    assert silence.payload_size == BASE_ROUND_SIZE
    bogus = RecoveryOutcome(OutcomeKind.MESSAGE, encode_announcement(3))
    assert announce_length(bogus).backoff


def test_backoff_windows(rng):
    first = {schedule_backoff(10, 1, rng) for _ in range(500)}
    assert first == {11, 12}
    third = [schedule_backoff(10, 3, rng) for _ in range(500)]
    assert min(third) >= 12 and max(third) <= 18
    capped = [schedule_backoff(0, 20, rng) for _ in range(2000)]
    assert min(capped) >= 2 and max(capped) <= 64


def test_round_deadline_reports_missing_peers(rng):
    rs = RoundState(group_id=3, round_id=7, peers=(1, 2), payload_size=8, own_input=b"")
    rs.start(rng)
    rs.receive_share(1, bytes(8))
    assert rs.missing() == [2]
    with pytest.raises(MissingShare):
        rs.check_deadline()


def test_share_sum_over_group_sizes():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        k = int(rng.integers(1, 33))
        payload = rng.bytes(int(rng.integers(1, 65)))
        vector = split_shares(payload, k, rng)
        assert len(vector.shares) == k
        assert all(len(share) == len(payload) for share in vector.shares)
        assert vector.combined() == payload


@pytest.mark.parametrize("group_size", [5, 6, 7, 8])
def test_recovery_identity_in_larger_groups(group_size):
    rng = np.random.default_rng(100 + group_size)
    size = 1 + FRAME_OVERHEAD
    for _ in range(30):
        senders = rng.choice(group_size, size=int(rng.integers(0, 3)), replace=False)
        inputs = {m: bytes(size) for m in range(group_size)}
        for sender in senders:
            inputs[int(sender)] = frame(bytes([int(rng.integers(256))]), size).raw
        states, sent = run_round(inputs, size, rng)
        assert sent == 3 * group_size * (group_size - 1)
        published = xor_all(list(inputs.values()), size)
        for member, rs in states.items():
            assert xor_all([rs.T, rs.S], size) == xor_all([published, inputs[member]], size)


@pytest.mark.parametrize("senders", [3, 5])
def test_odd_collisions_of_equal_length_frames_are_detected(senders):
    rng = np.random.default_rng(senders)
    size = 32
    for _ in range(1000):
        frames = [frame(rng.bytes(10), size).raw for _ in range(senders)]
        combined = xor_all(frames, size)
        outcome = recover(combined, bytes(size), bytes(size))
        assert outcome.kind is OutcomeKind.COLLISION


def test_three_senders_collide_in_a_round(rng):
    inputs = {m: b"" for m in range(5)}
    for sender in (0, 2, 4):
        inputs[sender] = frame(rng.bytes(10), 32).raw
    states, _ = run_round(inputs, 32, rng)
    assert {rs.outcome.kind for rs in states.values()} == {OutcomeKind.COLLISION}


def test_observer_view_does_not_depend_on_the_sender():
    # group {0, 1, 2, 3}, member 3 observes; one of 0..2 sends a 1-bit message
    rng = np.random.default_rng(4242)
    size = 1 + FRAME_OVERHEAD
    position = 4  # first message byte after the length prefix
    rounds = 50_000
    shares_seen = np.zeros((3, 256))
    replies_seen = np.zeros((3, 256))
    for _ in range(rounds):
        sender = int(rng.integers(3))
        inputs = {m: bytes(size) for m in range(4)}
        inputs[sender] = frame(bytes([int(rng.integers(2))]), size).raw
        sent = {}
        for m in range(4):
            peers = [p for p in range(4) if p != m]
            sent[m] = dict(zip(peers, split_shares(inputs[m], 3, rng).shares))
        # step 2: the share member 0 sends to 3
        shares_seen[sender, sent[0][3][position]] += 1
        # step 3: member 0's accumulation reply to 3
        _, replies = accumulate_s({p: sent[p][0] for p in (1, 2, 3)}, size=size)
        replies_seen[sender, replies[3][position]] += 1

    for table in (shares_seen, replies_seen):
        assert chisquare(table.sum(axis=0)).pvalue > 0.01
        by_nibble = table.reshape(3, 16, 16).sum(axis=2)
        assert chi2_contingency(by_nibble)[1] > 0.01


def test_backoff_rarely_recollides():
    first, second = np.random.default_rng(1), np.random.default_rng(2)
    retries = recollisions = 0
    later_retries = later_recollisions = 0
    for _ in range(10_000):
        attempt, round_id = 1, 0
        while True:
            a = schedule_backoff(round_id, attempt, first)
            b = schedule_backoff(round_id, attempt, second)
            retries += 1
            if attempt > 1:
                later_retries += 1
            if a != b:
                break
            recollisions += 1
            if attempt > 1:
                later_recollisions += 1
            attempt, round_id = attempt + 1, a
    assert recollisions / retries < 0.5
    assert later_recollisions / later_retries < 0.5
