"""
Honest-but-curious observers and origin estimators.

Estimators only look at trace records whose destination is an adversary
node (pooled inboxes) plus the global topology and group assignment.
"""
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.core.exceptions import AllCorrupt
from src.models.schemas import Estimator


@dataclass(frozen=True)
class AdversarySet:
    nodes: FrozenSet[int]
    fraction: float

    def __contains__(self, node: int) -> bool:
        return node in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)


def select_adversaries(topology, fraction: float, rng: np.random.Generator) -> AdversarySet:
    """Uniform subset of round(fraction * n) nodes"""
    if not 0 <= fraction < 1:
        raise ValueError(f"adversary fraction must be in [0, 1), got {fraction}")
    size = int(round(fraction * topology.n))
    chosen = rng.choice(topology.n, size=size, replace=False) if size else []
    return AdversarySet(frozenset(int(v) for v in chosen), fraction)


@dataclass
class EstimateReport:
    guess: int
    posterior: Dict[int, float]
    anonymity_set_size: int
    entropy_bits: float
    observed: bool = True
    first_phase: Optional[int] = None


def _report(posterior: Dict[int, float], observed: bool = True, guess: Optional[int] = None) -> EstimateReport:
    total = sum(posterior.values())
    posterior = {node: p / total for node, p in sorted(posterior.items())}
    probs = np.fromiter(posterior.values(), dtype=float)
    top = probs.max()
    if guess is None:
        # max over sorted keys keeps the lowest id on ties
        guess = next(node for node, p in posterior.items() if p == top)
    nonzero = probs[probs > 0]
    return EstimateReport(
        guess=guess,
        posterior=posterior,
        anonymity_set_size=int(np.sum(probs >= top / math.e)),
        entropy_bits=float(-np.sum(nonzero * np.log2(nonzero))),
        observed=observed,
    )


def _honest(n: int, adversaries: AdversarySet) -> List[int]:
    return [v for v in range(n) if v not in adversaries]


def _visible(trace: Iterable, adversaries: AdversarySet) -> List:
    return [r for r in trace if r.dst in adversaries]


def first_observation_phase(
    trace: Iterable, adversaries: AdversarySet, labels: Sequence[str], prefixes: Sequence[str] = ()
) -> Optional[int]:
    """Phase of the earliest record an adversary received for the given ids"""
    for record in _visible(trace, adversaries):
        if record.mid in labels or any(record.mid.startswith(p) for p in prefixes):
            return record.phase
    return None


def first_timestamp_estimate(
    trace: Iterable,
    adversaries: AdversarySet,
    topology,
    message_id: Optional[str] = None,
    scale: float = 1.0,
) -> EstimateReport:
    """
    Weight every honest node seen relaying into an adversary inbox by
    exp(-(t_u - t_min) / scale), t_u being its earliest observed relay.
    Without observations the posterior is uniform over honest nodes.
    """
    earliest: Dict[int, int] = {}
    for record in _visible(trace, adversaries):
        if message_id is not None and record.mid != message_id:
            continue
        if record.src in adversaries:
            continue
        if record.src not in earliest or record.t < earliest[record.src]:
            earliest[record.src] = record.t

    if not earliest:
        logger.debug("No adversary observation, falling back to a uniform posterior")
        honest = _honest(topology.n, adversaries)
        return _report({v: 1.0 for v in honest}, observed=False)

    t_min = min(earliest.values())
    return _report({v: math.exp(-(t - t_min) / scale) for v, t in earliest.items()})


def dc_group_estimate(
    trace: Iterable,
    adversaries: AdversarySet,
    group: Sequence[int],
    sender: int,
    group_id: Optional[int] = None,
) -> EstimateReport:
    """
    Uniform over the honest members of the group the message emerged from;
    a point mass when the sender is itself corrupt.
    """
    members = sorted(group)
    if sender in adversaries:
        return _report({sender: 1.0})
    honest = [m for m in members if m not in adversaries]
    if not honest:
        raise AllCorrupt(f"every member of group {group_id} is an adversary")
    if group_id is not None:
        prefix = f"g{group_id}r"
        if not any(r.mid.startswith(prefix) for r in _visible(trace, adversaries)):
            logger.debug(f"No adversary inside group {group_id}")
    return _report({m: 1.0 for m in honest})


def uniform_estimate(
    topology, adversaries: AdversarySet, rng: np.random.Generator
) -> EstimateReport:
    """Chance baseline: uniform posterior, uniformly drawn guess"""
    honest = _honest(topology.n, adversaries)
    guess = honest[int(rng.integers(len(honest)))]
    return _report({v: 1.0 for v in honest}, guess=guess)


@dataclass
class PrecisionReport:
    runs: int
    precision: float
    mean_anonset: float
    mean_entropy_bits: float
    first_phase: Dict[str, float] = field(default_factory=dict)
    group_recovery_rate: Optional[float] = None
    observed_runs: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class _Topo:
    n: int


def estimate_run(
    trace, report, estimator: Estimator, rng: Optional[np.random.Generator] = None
) -> Optional[EstimateReport]:
    """Estimate the origin of the run's first message and fill the report's columns"""
    if not report.messages:
        return None
    truth = report.messages[0]
    adversaries = AdversarySet(frozenset(report.adversaries), report.adversary_frac)
    topology = _Topo(report.n)

    if estimator is Estimator.UNIFORM:
        estimate = uniform_estimate(topology, adversaries, rng or np.random.default_rng(report.seed))
    elif estimator is Estimator.DC_GROUP and truth.group_id is not None:
        members = trace.groups.get(str(truth.group_id), [])
        try:
            estimate = dc_group_estimate(trace, adversaries, members, truth.origin, truth.group_id)
        except AllCorrupt:
            estimate = _report({truth.origin: 1.0})
    else:
        estimate = first_timestamp_estimate(trace, adversaries, topology, truth.message_id)

    prefixes = (f"g{truth.group_id}r",) if truth.group_id is not None else ()
    estimate.first_phase = first_observation_phase(
        trace, adversaries, (truth.message_id,), prefixes
    )
    report.guess = estimate.guess
    report.correct = estimate.guess == truth.origin
    report.anonset = estimate.anonymity_set_size
    report.entropy_bits = estimate.entropy_bits
    return estimate


def _shares_group(groups: Dict[str, List[int]], a: int, b: int) -> bool:
    return any(a in members and b in members for members in groups.values())


def evaluate(
    runs: Sequence[Tuple],
    estimator: Estimator = Estimator.FIRST_TIMESTAMP,
    rng: Optional[np.random.Generator] = None,
) -> PrecisionReport:
    """Precision and anonymity metrics over (Trace, RunReport) pairs"""
    if not runs:
        raise ValueError("evaluate needs at least one run")
    correct, anonsets, entropies, recovered = [], [], [], []
    phases: Dict[str, int] = {}
    observed = 0
    for trace, report in runs:
        estimate = estimate_run(trace, report, estimator, rng)
        if estimate is None:
            continue
        correct.append(bool(report.correct))
        anonsets.append(estimate.anonymity_set_size)
        entropies.append(estimate.entropy_bits)
        observed += int(estimate.observed)
        key = "none" if estimate.first_phase is None else f"phase{estimate.first_phase}"
        phases[key] = phases.get(key, 0) + 1
        if trace.groups:
            recovered.append(_shares_group(trace.groups, estimate.guess, report.true_origin))

    scored = len(correct)
    if not scored:
        return PrecisionReport(runs=0, precision=0.0, mean_anonset=0.0, mean_entropy_bits=0.0)
    return PrecisionReport(
        runs=scored,
        precision=float(np.mean(correct)),
        mean_anonset=float(np.mean(anonsets)),
        mean_entropy_bits=float(np.mean(entropies)),
        first_phase={k: v / scored for k, v in sorted(phases.items())},
        group_recovery_rate=float(np.mean(recovered)) if recovered else None,
        observed_runs=observed,
    )
