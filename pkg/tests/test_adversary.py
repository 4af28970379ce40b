import math

import numpy as np
import pytest

from src.core.exceptions import AllCorrupt
from src.models.schemas import Estimator
from src.services.adversary import (
    AdversarySet,
    dc_group_estimate,
    evaluate,
    first_timestamp_estimate,
    select_adversaries,
    uniform_estimate,
)
from src.services.simnet import Trace, TraceRecord, run
from src.services.topology import Topology, generate_topology


def adversaries(*nodes) -> AdversarySet:
    return AdversarySet(frozenset(nodes), 0.0)


def test_select_adversaries_sizes(rng):
    topology = Topology.from_edges(1000, [])
    assert len(select_adversaries(topology, 0.0, rng)) == 0
    assert len(select_adversaries(topology, 0.2, rng)) == 200
    with pytest.raises(ValueError):
        select_adversaries(topology, 1.0, rng)


def test_select_adversaries_is_seeded():
    topology = Topology.from_edges(100, [])
    first = select_adversaries(topology, 0.3, np.random.default_rng(4))
    second = select_adversaries(topology, 0.3, np.random.default_rng(4))
    assert first == second


def test_flood_origin_found_when_its_neighbours_spy(make_config):
    config = make_config(n=50, topology="regular:4", fixed_topology=True)
    topology = generate_topology(config.topology, config.seed)
    trace, report = run(config, seed=0, schedule=[(0, 7, b"spy me")], topology=topology)
    spies = adversaries(*topology.neighbors(7))
    estimate = first_timestamp_estimate(trace, spies, topology, report.messages[0].message_id)
    assert estimate.guess == 7
    assert estimate.observed
    assert sum(estimate.posterior.values()) == pytest.approx(1.0)


def test_single_spy_on_a_line_points_at_its_upstream_neighbour(make_config):
    config = make_config(n=11, topology="line")
    trace, report = run(config, seed=0, schedule=[(0, 0, b"walk the line")])
    topology = generate_topology(config.topology, 0)
    estimate = first_timestamp_estimate(
        trace, adversaries(5), topology, report.messages[0].message_id
    )
    assert estimate.guess == 4
    assert estimate.posterior == {4: 1.0}


def test_no_observation_gives_uniform_posterior(make_config):
    config = make_config(n=64, topology="regular:4")
    trace, report = run(config, seed=1)
    topology = generate_topology(config.topology, 1)
    estimate = first_timestamp_estimate(trace, adversaries(), topology)
    assert not estimate.observed
    assert estimate.entropy_bits == pytest.approx(math.log2(64))
    assert estimate.anonymity_set_size == 64


def test_estimator_only_reads_adversary_inboxes():
    trace = Trace()
    trace.append(TraceRecord(1, "Flood", 0, 1, "m", 20))
    trace.append(TraceRecord(3, "Flood", 7, 9, "m", 20))
    trace.append(TraceRecord(4, "Flood", 8, 9, "m", 20))
    estimate = first_timestamp_estimate(trace, adversaries(9), Topology.from_edges(10, []), "m")
    assert estimate.guess == 7
    assert set(estimate.posterior) == {7, 8}
    assert estimate.posterior[7] > estimate.posterior[8]


def test_dc_group_estimate_is_uniform_over_honest_members():
    estimate = dc_group_estimate(Trace(), adversaries(3, 4), [0, 1, 2, 3, 4], sender=1)
    assert estimate.posterior == pytest.approx({0: 1 / 3, 1: 1 / 3, 2: 1 / 3})
    assert estimate.entropy_bits == pytest.approx(math.log2(3))
    assert estimate.anonymity_set_size == 3


def test_dc_group_estimate_corrupt_sender():
    estimate = dc_group_estimate(Trace(), adversaries(3, 4), [0, 1, 2, 3, 4], sender=4)
    assert estimate.posterior == {4: 1.0}
    assert estimate.entropy_bits == 0.0


def test_dc_group_estimate_all_corrupt():
    with pytest.raises(AllCorrupt):
        dc_group_estimate(Trace(), adversaries(3, 4), [3, 4], sender=9)


def test_l_anonymity_floor(rng):
    members = [0, 1, 2, 3, 4]
    spies = adversaries(3, 4)
    honest = [0, 1, 2]
    runs = 10_000
    hits = 0
    for _ in range(runs):
        sender = honest[int(rng.integers(3))]
        hits += dc_group_estimate(Trace(), spies, members, sender).guess == sender
    p = 1 / 3
    assert hits / runs <= p + 3 * math.sqrt(p * (1 - p) / runs)


def test_uniform_estimate(rng):
    topology = Topology.from_edges(20, [])
    estimate = uniform_estimate(topology, adversaries(0, 1), rng)
    assert estimate.guess not in (0, 1)
    assert len(estimate.posterior) == 18
    assert estimate.entropy_bits == pytest.approx(math.log2(18))


def test_evaluate_fills_report_columns(make_config):
    config = make_config(n=60, topology="regular:4", adversary_fraction=0.2)
    runs = [run(config, seed=s, run_id=s) for s in range(4)]
    summary = evaluate(runs)
    assert summary.runs == 4
    assert 0.0 <= summary.precision <= 1.0
    assert set(summary.first_phase) <= {"phase3", "none"}
    assert summary.group_recovery_rate is None
    for _, report in runs:
        assert report.guess is not None
        assert report.correct == (report.guess == report.true_origin)


def test_evaluate_dc_group_on_full_runs(make_config):
    config = make_config(n=40, topology="regular:4", k=3, mode="full", adversary_fraction=0.25)
    runs = [run(config, seed=s, run_id=s) for s in range(3)]
    summary = evaluate(runs, Estimator.DC_GROUP)
    assert summary.runs == 3
    assert summary.group_recovery_rate == 1.0


def test_evaluate_requires_runs():
    with pytest.raises(ValueError):
        evaluate([])


def test_precision_grows_with_adversary_fraction(make_config):
    precisions = []
    for fraction in (0.05, 0.1, 0.2, 0.35):
        config = make_config(n=200, topology="regular:8", adversary_fraction=fraction)
        runs = [run(config, seed=s, run_id=s) for s in range(40)]
        precisions.append(evaluate(runs).precision)
    assert precisions[-1] > precisions[0]


@pytest.mark.slow
def test_flooding_leaks_the_origin_far_more_than_the_full_protocol(make_config):
    flood = make_config(n=1000, topology="regular:8", adversary_fraction=0.2)
    full = make_config(
        n=1000, topology="regular:8", adversary_fraction=0.2, mode="full", k=4
    )
    seeds = range(40)
    flood_precision = evaluate([run(flood, seed=s) for s in seeds]).precision
    full_precision = evaluate([run(full, seed=s) for s in seeds]).precision
    assert flood_precision >= 5 * full_precision
    # no better than guessing inside a four-member group
    assert full_precision <= 1 / 4 + 0.05
    assert flood_precision > 0.5
