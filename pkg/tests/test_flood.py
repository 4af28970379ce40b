from src.core.flood import SeenSet, expected_flood_messages, on_flood_receive, reach
from src.services.simnet import TraceRecord
from src.services.topology import Topology


def test_first_receipt_forwards_to_all_but_sender():
    seen = SeenSet()
    assert on_flood_receive(seen, "m1", [1, 2, 3], sender=2) == [1, 3]
    assert "m1" in seen


def test_duplicate_is_dropped_silently():
    seen = SeenSet()
    on_flood_receive(seen, "m1", [1, 2, 3], sender=2)
    assert on_flood_receive(seen, "m1", [1, 2, 3], sender=1) == []
    assert on_flood_receive(seen, "m2", [1, 2, 3], sender=None) == [1, 2, 3]


def test_expected_flood_messages():
    assert expected_flood_messages([8] * 1000) == 7001
    # path of 4 nodes: 3 edges, 2*3 - 4 + 1
    assert expected_flood_messages([1, 2, 2, 1]) == 3


def test_reach_counts_carrying_kinds_and_holders():
    topology = Topology.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    trace = [
        TraceRecord(1, "Flood", 0, 1, "m", 20),
        TraceRecord(2, "FinalSwitch", 1, 2, "m", 32),
        TraceRecord(2, "Flood", 1, 2, "other", 20),
    ]
    assert reach(trace, topology, "m") == 1 / 5
    assert reach(trace, topology, "m", holders=[0, 4]) == 3 / 5
