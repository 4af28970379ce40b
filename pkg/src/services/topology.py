from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, List, Optional, Set, Tuple

import networkx as nx
from loguru import logger
from tenacity import retry, retry_if_exception_type, stop_after_attempt

from src.core.exceptions import InfeasibleSpec
from src.models.schemas import TopologyKind, TopologySpec
from src.utils.rng import Stream, stream

MAX_ATTEMPTS = 100


@dataclass
class Topology:
    """Undirected overlay with nodes 0..n-1 and sorted neighbour lists"""

    n: int
    adjacency: List[List[int]]
    kind: TopologyKind = TopologyKind.REGULAR
    spec: Optional[TopologySpec] = None
    nominal_degree: Optional[int] = field(default=None)

    @classmethod
    def from_graph(cls, graph: nx.Graph, spec: Optional[TopologySpec] = None) -> "Topology":
        graph = nx.convert_node_labels_to_integers(graph, ordering="sorted")
        adjacency = [sorted(graph.neighbors(v)) for v in range(graph.number_of_nodes())]
        kind = spec.kind if spec else TopologyKind.REGULAR
        topo = cls(
            n=len(adjacency),
            adjacency=adjacency,
            kind=kind,
            spec=spec,
            nominal_degree=spec.nominal_degree if spec else None,
        )
        topo.__dict__["graph"] = graph
        return topo

    @classmethod
    def from_edges(
        cls, n: int, edges: Iterable[Tuple[int, int]], spec: Optional[TopologySpec] = None
    ) -> "Topology":
        graph = nx.Graph()
        graph.add_nodes_from(range(n))
        graph.add_edges_from(edges)
        return cls.from_graph(graph, spec)

    @cached_property
    def graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from((u, v) for u, nbrs in enumerate(self.adjacency) for v in nbrs)
        return graph

    @property
    def edge_count(self) -> int:
        return sum(len(nbrs) for nbrs in self.adjacency) // 2

    def degrees(self) -> List[int]:
        return [len(nbrs) for nbrs in self.adjacency]

    def neighbors(self, node: int) -> List[int]:
        return self.adjacency[node]

    @cached_property
    def connected(self) -> bool:
        return self.n > 0 and nx.is_connected(self.graph)

    @cached_property
    def diameter(self) -> int:
        """Hop diameter; the largest component diameter on disconnected graphs"""
        if self.n <= 1:
            return 0
        if self.connected:
            return nx.diameter(self.graph)
        return max(
            nx.diameter(self.graph.subgraph(c)) for c in nx.connected_components(self.graph)
        )

    def component_of(self, node: int) -> Set[int]:
        return nx.node_connected_component(self.graph, node)

    def check(self) -> List[str]:
        """Symmetry and self-loop violations (empty when sound)"""
        problems = []
        for u, nbrs in enumerate(self.adjacency):
            if u in nbrs:
                problems.append(f"self-loop at {u}")
            for v in nbrs:
                if u not in self.adjacency[v]:
                    problems.append(f"edge {u}-{v} missing its reverse")
        return problems


def tree_size(degree: int, depth: int) -> int:
    """Nodes of a tree whose internal nodes all have `degree` neighbours"""
    if degree == 2:
        return 1 + 2 * depth
    return 1 + degree * ((degree - 1) ** depth - 1) // (degree - 2)


def regular_tree(degree: int, depth: int) -> nx.Graph:
    graph = nx.Graph()
    graph.add_node(0)
    frontier, next_id = [0], 1
    for level in range(depth):
        children = degree if level == 0 else degree - 1
        grown = []
        for parent in frontier:
            for _ in range(children):
                graph.add_edge(parent, next_id)
                grown.append(next_id)
                next_id += 1
        frontier = grown
    return graph


class _Disconnected(Exception):
    pass


def _connected(sample: Callable[[], nx.Graph], spec: TopologySpec) -> nx.Graph:
    @retry(
        stop=stop_after_attempt(MAX_ATTEMPTS),
        retry=retry_if_exception_type(_Disconnected),
        reraise=True,
    )
    def attempt() -> nx.Graph:
        graph = sample()
        if not nx.is_connected(graph):
            raise _Disconnected(spec.label())
        return graph

    try:
        return attempt()
    except _Disconnected:
        raise InfeasibleSpec(
            f"{spec.label()} with n={spec.n} stayed disconnected after {MAX_ATTEMPTS} attempts"
        ) from None


def generate_topology(spec: TopologySpec, seed: int) -> Topology:
    """Seeded graph from the given family; random families retry until connected"""
    rng = stream(seed, Stream.TOPOLOGY)

    def next_seed() -> int:
        return int(rng.integers(0, 2**32))

    if spec.kind is TopologyKind.TREE:
        graph = regular_tree(spec.degree, spec.depth)
    elif spec.kind is TopologyKind.LINE:
        graph = nx.path_graph(spec.n)
    elif spec.kind is TopologyKind.REGULAR:
        n, d = spec.n, spec.degree
        if (n * d) % 2:
            raise InfeasibleSpec(f"n*d must be even, got n={n} d={d}")
        if d >= n:
            raise InfeasibleSpec(f"degree {d} needs more than {n} nodes")
        graph = _connected(lambda: nx.random_regular_graph(d, n, seed=next_seed()), spec)
    else:
        graph = _connected(lambda: nx.fast_gnp_random_graph(spec.n, spec.p, seed=next_seed()), spec)

    topology = Topology.from_graph(graph, spec)
    if spec.kind is TopologyKind.TREE:
        topology.spec = spec.model_copy(update={"n": topology.n})
    logger.debug(f"Generated {spec.label()} topology: n={topology.n}, |E|={topology.edge_count}")
    return topology


def auto_d_max(topology: Topology) -> int:
    """ceil(diameter / 2)"""
    return -(-topology.diameter // 2)
