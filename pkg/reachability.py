"""
Exact verification on small populations.

Builds the explicit graph of configurations reachable from a root, computes
Q-stable and stable-leader sets, checks stable leader election, and solves
first-step linear systems for expected hitting times and reach probabilities.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import factorized

from config import get_config
from protocol import (
    Configuration,
    Protocol,
    Transition,
    apply,
    enabled_transitions,
    enumerate_configurations,
    leader_count,
    pair_probability,
)

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-9
_REFINEMENT_STEPS = 3


class ReachabilityError(Exception):
    """Base exception for reachability and verification errors"""
    pass


class NodeCapExceededError(ReachabilityError):
    """Raised when exploration would exceed the node cap"""

    def __init__(self, message: str, node_cap: int):
        self.node_cap = node_cap
        super().__init__(message)


@dataclass
class ReachabilityGraph:
    """
    Every configuration reachable from ``root`` under non-null transitions

    ``edges[i]`` lists (transition, successor index, probability) and
    ``self_loop_prob[i]`` is the probability that an interaction at node i
    is null. Nodes are indexed in breadth-first order, root first.
    """
    protocol: Protocol
    root: Configuration
    nodes: List[Configuration] = field(default_factory=list)
    index: Dict[Tuple[int, ...], int] = field(default_factory=dict)
    edges: List[List[Tuple[Transition, int, float]]] = field(default_factory=list)
    self_loop_prob: List[float] = field(default_factory=list)
    _predecessors: Optional[List[List[int]]] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def n(self) -> int:
        return self.root.n

    def node_index(self, c: Configuration) -> int:
        try:
            return self.index[c.counts]
        except KeyError:
            raise ReachabilityError(f"{c.format(self.protocol.states)} is not reachable from the root") from None

    def predecessors(self) -> List[List[int]]:
        if self._predecessors is None:
            predecessors: List[List[int]] = [[] for _ in self.nodes]
            for source, out in enumerate(self.edges):
                for _, successor, _ in out:
                    predecessors[successor].append(source)
            self._predecessors = predecessors
        return self._predecessors

    def indices_of(self, configurations: Iterable[Configuration]) -> Set[int]:
        return {self.node_index(c) for c in configurations}

    def configurations_of(self, indices: Iterable[int]) -> FrozenSet[Configuration]:
        return frozenset(self.nodes[i] for i in indices)


@dataclass
class StabilityVerdict:
    """Outcome of the stable leader election check on one graph."""
    q_stable_nodes: FrozenSet[Configuration]
    stable_leader_nodes: FrozenSet[Configuration]
    def2_holds: bool
    witness: Optional[Configuration] = None
    n: int = 0
    failing_nodes: int = 0


def explore(p: Protocol, root: Configuration, node_cap: Optional[int] = None) -> ReachabilityGraph:
    """
    Breadth-first closure of root under the non-null transitions of p

    Args:
        p: Protocol
        root: Start configuration
        node_cap: Largest graph accepted (defaults to POPKIT_NODE_CAP)

    Returns:
        ReachabilityGraph: The complete graph

    Raises:
        ReachabilityError: If node_cap is not positive
        NodeCapExceededError: If more than node_cap configurations are reachable
    """
    if node_cap is None:
        node_cap = get_config().NODE_CAP
    if node_cap < 1:
        raise ReachabilityError(f"node cap must be positive, got {node_cap}")

    graph = ReachabilityGraph(protocol=p, root=root)
    graph.nodes.append(root)
    graph.index[root.counts] = 0
    queue = deque([0])
    interacting = root.n >= 2

    while queue:
        current = queue.popleft()
        c = graph.nodes[current]
        out = []
        for t in enabled_transitions(c, p) if interacting else []:
            successor = apply(c, t)
            target = graph.index.get(successor.counts)
            if target is None:
                if len(graph.nodes) >= node_cap:
                    logger.error(f"Exploring {p.name} from {root.format(p.states)} "
                                 f"exceeded the node cap of {node_cap}")
                    raise NodeCapExceededError(
                        f"more than {node_cap} configurations reachable from "
                        f"{root.format(p.states)}; exact verification is infeasible at n={root.n}",
                        node_cap)
                target = len(graph.nodes)
                graph.nodes.append(successor)
                graph.index[successor.counts] = target
                queue.append(target)
            out.append((t, target, pair_probability(c, t)))
        graph.edges.append(out)
        graph.self_loop_prob.append(max(0.0, 1.0 - sum(prob for _, _, prob in out)))

    logger.info(f"Explored {p.name} from {root.format(p.states)}: {len(graph)} configurations")
    return graph


def _backward_closure(g: ReachabilityGraph, seeds: Iterable[int],
                      blocked: FrozenSet[int] = frozenset()) -> Set[int]:
    """Nodes that can reach a seed; paths may not pass through blocked nodes."""
    predecessors = g.predecessors()
    reached = set(seeds)
    queue = deque(reached)
    while queue:
        node = queue.popleft()
        for source in predecessors[node]:
            if source not in reached and source not in blocked:
                reached.add(source)
                queue.append(source)
    return reached


def _q_stable_indices(g: ReachabilityGraph, q: Optional[FrozenSet[Transition]] = None) -> Set[int]:
    q = g.protocol.q_set if q is None else q
    violating = [i for i, out in enumerate(g.edges) if any(t in q for t, _, _ in out)]
    unstable = _backward_closure(g, violating)
    return set(range(len(g))) - unstable


def q_stable_set(g: ReachabilityGraph, q: Optional[Iterable[Transition]] = None) -> FrozenSet[Configuration]:
    """
    Nodes from which no configuration enabling a transition of Q is reachable

    Args:
        g: Complete reachability graph
        q: Transition subset (defaults to the protocol's Q)
    """
    q = None if q is None else frozenset(q)
    return g.configurations_of(_q_stable_indices(g, q))


def stable_leader_set(g: ReachabilityGraph) -> FrozenSet[Configuration]:
    """Q-stable nodes with exactly one agent in a leader state."""
    p = g.protocol
    return g.configurations_of(
        i for i in _q_stable_indices(g) if leader_count(p, g.nodes[i]) == 1)


def check_stable_election(g: ReachabilityGraph, p: Optional[Protocol] = None) -> StabilityVerdict:
    """
    Check that every reachable configuration can still reach a stable leader

    Args:
        g: Complete reachability graph rooted at the initial configuration
        p: Protocol (defaults to the graph's)

    Returns:
        StabilityVerdict: On failure, ``witness`` is the failing node explored last
    """
    p = p or g.protocol
    q_stable = _q_stable_indices(g, p.q_set)
    stable_leaders = {i for i in q_stable if leader_count(p, g.nodes[i]) == 1}
    good = _backward_closure(g, stable_leaders)
    failing = sorted(set(range(len(g))) - good)

    witness = g.nodes[failing[-1]] if failing else None
    verdict = StabilityVerdict(
        q_stable_nodes=g.configurations_of(q_stable),
        stable_leader_nodes=g.configurations_of(stable_leaders),
        def2_holds=not failing,
        witness=witness,
        n=g.n,
        failing_nodes=len(failing),
    )
    if failing:
        logger.info(f"{p.name} from {g.root.format(p.states)}: {len(failing)} configurations "
                    f"cannot reach a stable leader, e.g. {witness.format(p.states)}")
    else:
        logger.info(f"{p.name} from {g.root.format(p.states)}: stable leader reachable everywhere")
    return verdict


def _solve(g: ReachabilityGraph, unknowns: List[int], rhs: np.ndarray) -> np.ndarray:
    """
    Solve (1 - s_v) x_v - sum_{u in unknowns} P(v, u) x_u = rhs_v over the unknowns

    Dense LU with iterative refinement up to POPKIT_DENSE_LIMIT unknowns,
    sparse LU beyond.
    """
    size = len(unknowns)
    if size == 0:
        return np.zeros(0)
    position = {node: k for k, node in enumerate(unknowns)}
    rows, cols, values = [], [], []
    for k, node in enumerate(unknowns):
        rows.append(k)
        cols.append(k)
        values.append(1.0 - g.self_loop_prob[node])
        for _, successor, prob in g.edges[node]:
            target = position.get(successor)
            if target is not None:
                rows.append(k)
                cols.append(target)
                values.append(-prob)
    matrix = sparse.csc_matrix((values, (rows, cols)), shape=(size, size))

    if size <= get_config().DENSE_LIMIT:
        dense = matrix.toarray()
        factors = linalg.lu_factor(dense)
        solve = lambda b: linalg.lu_solve(factors, b)
    else:
        logger.debug(f"Using sparse LU for {size} unknowns")
        solve = factorized(matrix)

    solution = solve(rhs)
    scale = max(np.abs(rhs).max(), 1e-300)
    for _ in range(_REFINEMENT_STEPS):
        residual = rhs - matrix @ solution
        if np.abs(residual).max() <= RESIDUAL_TOLERANCE * scale:
            break
        solution = solution + solve(residual)
    relative = np.abs(rhs - matrix @ solution).max() / scale
    if relative > RESIDUAL_TOLERANCE:
        logger.warning(f"Linear solve over {size} unknowns left relative residual {relative:.3e}")
    return solution


def exact_expected_time(g: ReachabilityGraph, target: Iterable[Configuration]) -> np.ndarray:
    """
    Expected parallel time from every node to the target set

    Nodes that can miss the target forever (they can reach a node with no path
    to the target without passing through it) get ``inf``.

    Args:
        g: Complete reachability graph
        target: Target configurations (must be nodes of g)

    Returns:
        np.ndarray: Expected interactions divided by n, indexed like g.nodes
    """
    targets = g.indices_of(target)
    times = np.full(len(g), np.inf)
    for node in targets:
        times[node] = 0.0
    if not targets:
        return times

    reaching = _backward_closure(g, targets)
    doomed = set(range(len(g))) - reaching
    risky = _backward_closure(g, doomed, blocked=frozenset(targets)) if doomed else set()
    unknowns = sorted(reaching - targets - risky)

    interactions = _solve(g, unknowns, np.ones(len(unknowns)))
    n = max(g.n, 1)
    for k, node in enumerate(unknowns):
        times[node] = interactions[k] / n
    logger.debug(f"Expected time to {len(targets)} target nodes: "
                 f"{len(unknowns)} finite, {len(g) - len(unknowns) - len(targets)} infinite")
    return times


def reach_probability(g: ReachabilityGraph, target: Iterable[Configuration]) -> np.ndarray:
    """Probability of ever reaching the target set, per node."""
    targets = g.indices_of(target)
    probabilities = np.zeros(len(g))
    for node in targets:
        probabilities[node] = 1.0
    reaching = _backward_closure(g, targets)
    unknowns = sorted(reaching - targets)
    rhs = np.array([
        sum(prob for _, successor, prob in g.edges[node] if successor in targets)
        for node in unknowns
    ])
    solution = _solve(g, unknowns, rhs)
    for k, node in enumerate(unknowns):
        probabilities[node] = min(1.0, max(0.0, solution[k]))
    return probabilities


def is_q_stable(p: Protocol, c: Configuration, q: Optional[Iterable[Transition]] = None,
                node_cap: Optional[int] = None) -> bool:
    """Whether no transition of Q can ever become enabled from c."""
    g = explore(p, c, node_cap=node_cap)
    q = None if q is None else frozenset(q)
    return 0 in _q_stable_indices(g, q)


def _level_stable_leaders(p: Protocol, total: int) -> Set[Tuple[int, ...]]:
    """Stable-leader configurations among all configurations of the given total."""
    configurations = list(enumerate_configurations(p.state_count, total))
    position = {c.counts: k for k, c in enumerate(configurations)}
    predecessors: List[List[int]] = [[] for _ in configurations]
    violating = []
    for k, c in enumerate(configurations):
        enabled = enabled_transitions(c, p) if total >= 2 else []
        if any(t in p.q_set for t in enabled):
            violating.append(k)
        for t in enabled:
            predecessors[position[apply(c, t).counts]].append(k)

    unstable = set(violating)
    queue = deque(violating)
    while queue:
        node = queue.popleft()
        for source in predecessors[node]:
            if source not in unstable:
                unstable.add(source)
                queue.append(source)
    return {
        c.counts for k, c in enumerate(configurations)
        if k not in unstable and leader_count(p, c) == 1
    }


def validate_predicate(p: Protocol, predicate, max_n: int) -> List[Tuple[Configuration, bool, bool]]:
    """
    Compare an analytic stability predicate with the exact stable-leader set

    Args:
        p: Protocol
        predicate: Object with ``holds(protocol, configuration)``
        max_n: Largest total count checked

    Returns:
        List of (configuration, predicate value, exact value) for every
        configuration of total count at most max_n where the two disagree
    """
    mismatches = []
    for total in range(max_n + 1):
        exact = _level_stable_leaders(p, total)
        for c in enumerate_configurations(p.state_count, total):
            claimed = bool(predicate.holds(p, c))
            actual = c.counts in exact
            if claimed != actual:
                mismatches.append((c, claimed, actual))
    if mismatches:
        logger.warning(f"Predicate {getattr(predicate, 'name', predicate)} disagrees with the "
                       f"exact stable-leader set on {len(mismatches)} configurations of {p.name}")
    return mismatches


def export_graph(g: ReachabilityGraph) -> str:
    """Adjacency list, one node per line: ``index | {config} | (transition -> index, prob)*``."""
    p = g.protocol
    lines = []
    for i, c in enumerate(g.nodes):
        out = ' '.join(f"({t.label(p.states)} -> {succ}, {prob:.12g})" for t, succ, prob in g.edges[i])
        lines.append(f"{i} | {c.format(p.states)} | {out}".rstrip())
    return '\n'.join(lines) + '\n'
