"""
Population protocols: states, a symmetric deterministic transition table,
configurations as count vectors and the arithmetic of applying transitions.
"""
import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from utils.protocol_format import (
    InitExpression,
    ProtocolFormatError,
    format_configuration,
    parse_configuration_entries,
    parse_source,
    split_transition,
)

logger = logging.getLogger(__name__)


class ProtocolError(Exception):
    """Base exception for protocol definition and arithmetic errors"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        super().__init__(message)


class ProtocolSyntaxError(ProtocolError):
    """Raised when protocol text does not follow the grammar"""
    pass


class UnknownStateError(ProtocolError):
    """Raised when a declaration names a state missing from 'states'"""
    pass


class ConflictingTransitionError(ProtocolError):
    """Raised when one state pair is given two different outcomes"""
    pass


class InitExpressionError(ProtocolError):
    """Raised when the initial configuration cannot be built for n"""
    pass


class InapplicableTransitionError(ProtocolError):
    """Raised when a transition is applied without enough input agents"""
    pass


@dataclass(frozen=True, eq=False)
class Transition:
    """
    A 4-tuple r1, r2 -> p1, p2 over state indices.

    Two transitions are equal when they have the same input multiset and the
    same output multiset, so the orientation of a transition does not matter
    for lookups, sets or counting.
    """
    r1: int
    r2: int
    p1: int
    p2: int

    @property
    def key(self) -> Tuple[int, int, int, int]:
        a, b = sorted((self.r1, self.r2))
        c, d = sorted((self.p1, self.p2))
        return a, b, c, d

    @property
    def inputs(self) -> Tuple[int, int]:
        return self.r1, self.r2

    @property
    def outputs(self) -> Tuple[int, int]:
        return self.p1, self.p2

    @property
    def is_null(self) -> bool:
        return sorted((self.r1, self.r2)) == sorted((self.p1, self.p2))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Transition):
            return NotImplemented
        return self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def oriented(self, state: int) -> 'Transition':
        """Same transition written with ``state`` as its first input."""
        if self.r1 == state:
            return self
        if self.r2 == state:
            return Transition(self.r2, self.r1, self.p1, self.p2)
        raise ValueError(f"state {state} is not an input of this transition")

    def net_change(self, state: int) -> int:
        """Signed change of the count of ``state`` when applied."""
        produced = (self.p1 == state) + (self.p2 == state)
        consumed = (self.r1 == state) + (self.r2 == state)
        return produced - consumed

    def consumes(self, state: int) -> bool:
        return self.net_change(state) < 0

    def effect(self, state_count: int) -> Tuple[int, ...]:
        return tuple(self.net_change(s) for s in range(state_count))

    def label(self, states: Sequence[str]) -> str:
        return f"{states[self.r1]} {states[self.r2]} -> {states[self.p1]} {states[self.p2]}"


@dataclass(frozen=True)
class Configuration:
    """A count vector over the states of a protocol."""
    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError(f"negative count in configuration {counts}")
        object.__setattr__(self, 'counts', counts)

    @classmethod
    def zeros(cls, state_count: int) -> 'Configuration':
        return cls((0,) * state_count)

    @property
    def n(self) -> int:
        return sum(self.counts)

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, state: int) -> int:
        return self.counts[state]

    def __iter__(self) -> Iterator[int]:
        return iter(self.counts)

    def __add__(self, other: 'Configuration') -> 'Configuration':
        return Configuration(tuple(a + b for a, b in zip(self.counts, other.counts)))

    def __sub__(self, other: 'Configuration') -> 'Configuration':
        return Configuration(tuple(a - b for a, b in zip(self.counts, other.counts)))

    def __le__(self, other: 'Configuration') -> bool:
        return all(a <= b for a, b in zip(self.counts, other.counts))

    def __ge__(self, other: 'Configuration') -> bool:
        return other <= self

    def scaled(self, factor: int) -> 'Configuration':
        return Configuration(tuple(factor * c for c in self.counts))

    @property
    def support(self) -> FrozenSet[int]:
        return frozenset(s for s, c in enumerate(self.counts) if c)

    def with_count(self, state: int, count: int) -> 'Configuration':
        counts = list(self.counts)
        counts[state] = count
        return Configuration(tuple(counts))

    def format(self, states: Sequence[str]) -> str:
        return format_configuration(states, self.counts)


@dataclass(frozen=True, eq=False)
class Protocol:
    """
    A population protocol (states, transitions, initial expression, leaders, Q)

    ``transitions`` holds the non-null transitions in declaration order; every
    unordered pair not covered by one of them interacts as a null transition.
    """
    name: str
    states: Tuple[str, ...]
    transitions: Tuple[Transition, ...]
    init_expr: Tuple[Tuple[str, InitExpression], ...] = ()
    leader_set: FrozenSet[int] = frozenset()
    q_set: FrozenSet[Transition] = frozenset()
    _index: Dict[str, int] = field(init=False, repr=False)
    _table: Dict[Tuple[int, int], Transition] = field(init=False, repr=False)
    _order: Dict[Transition, int] = field(init=False, repr=False)

    def __post_init__(self):
        index = {state: i for i, state in enumerate(self.states)}
        table = {}
        for t in self.transitions:
            table[tuple(sorted(t.inputs))] = t
        object.__setattr__(self, '_index', index)
        object.__setattr__(self, '_table', table)
        object.__setattr__(self, '_order', {t: i for i, t in enumerate(self.transitions)})

    @property
    def state_count(self) -> int:
        return len(self.states)

    @property
    def first_inputs(self) -> np.ndarray:
        return np.array([t.r1 for t in self.transitions], dtype=np.int64)

    @property
    def second_inputs(self) -> np.ndarray:
        return np.array([t.r2 for t in self.transitions], dtype=np.int64)

    @property
    def effects(self) -> np.ndarray:
        """Matrix of net count changes, one row per non-null transition."""
        if not self.transitions:
            return np.zeros((0, self.state_count), dtype=np.int64)
        return np.array([t.effect(self.state_count) for t in self.transitions], dtype=np.int64)

    def state_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownStateError(f"unknown state {name!r} in protocol {self.name}") from None

    def lookup(self, a: int, b: int) -> Transition:
        """Outcome of an interaction between states a and b (null if unmapped)."""
        found = self._table.get((min(a, b), max(a, b)))
        if found is None:
            return Transition(a, b, a, b)
        return found

    def declaration_order(self, t: Transition) -> int:
        return self._order[t]

    def transition(self, text: str) -> Transition:
        """
        Look up a transition written as ``a b -> c d``

        The returned transition is oriented as written.

        Raises:
            ProtocolError: If the text does not describe this protocol's outcome
                for that pair
        """
        try:
            names = split_transition(text)
        except ProtocolFormatError as e:
            raise ProtocolSyntaxError(str(e)) from e
        r1, r2, p1, p2 = (self.state_index(name) for name in names)
        written = Transition(r1, r2, p1, p2)
        actual = self.lookup(r1, r2)
        if written != actual:
            raise ProtocolError(
                f"{text.strip()!r} is not a transition of {self.name}; "
                f"the pair interacts as {actual.label(self.states)}")
        return written

    def configuration(self, counts: Mapping[str, int]) -> Configuration:
        """Build a configuration from a state-name to count mapping."""
        vector = [0] * self.state_count
        for name, count in counts.items():
            vector[self.state_index(name)] += count
        return Configuration(tuple(vector))

    def format(self, c: Configuration) -> str:
        return c.format(self.states)

    def label(self, t: Transition) -> str:
        return t.label(self.states)


def parse_protocol(text: str, name: str = 'protocol') -> Protocol:
    """
    Parse protocol source into a Protocol

    Args:
        text: Protocol source in the line-oriented format
        name: Name used in logs and messages

    Returns:
        Protocol: Parsed protocol; Q defaults to the leader-changing transitions

    Raises:
        ProtocolSyntaxError: If the text does not follow the grammar
        UnknownStateError: If a declaration names an undeclared state
        ConflictingTransitionError: If a pair has two different outcomes
    """
    try:
        source = parse_source(text)
    except ProtocolFormatError as e:
        logger.error(f"Syntax error in protocol {name}: {e}")
        raise ProtocolSyntaxError(str(e), e.line_number) from e

    index = {state: i for i, state in enumerate(source.states)}

    def resolve(state: str, line_number: int) -> int:
        if state not in index:
            raise UnknownStateError(f"line {line_number}: unknown state {state!r}", line_number)
        return index[state]

    transitions: List[Transition] = []
    outcomes: Dict[Tuple[int, int], Tuple[Transition, int]] = {}
    for names, line_number in source.transitions:
        t = Transition(*(resolve(state, line_number) for state in names))
        pair = tuple(sorted(t.inputs))
        if pair in outcomes:
            previous, previous_line = outcomes[pair]
            if previous != t:
                raise ConflictingTransitionError(
                    f"line {line_number}: pair {names[0]},{names[1]} already mapped on line "
                    f"{previous_line} to a different outcome", line_number)
            logger.debug(f"Duplicate transition on line {line_number} ignored")
            continue
        outcomes[pair] = (t, line_number)
        if not t.is_null:
            transitions.append(t)

    init: List[Tuple[str, InitExpression]] = []
    seen_init: Dict[str, int] = {}
    rest_line = None
    for state, expression, line_number in source.init:
        resolve(state, line_number)
        if state in seen_init:
            raise ProtocolSyntaxError(
                f"line {line_number}: init for {state!r} already given on line {seen_init[state]}",
                line_number)
        if expression.is_rest:
            if rest_line is not None:
                raise ProtocolSyntaxError(
                    f"line {line_number}: only one state may take 'rest' (see line {rest_line})",
                    line_number)
            rest_line = line_number
        seen_init[state] = line_number
        init.append((state, expression))

    if not source.leaders:
        raise ProtocolSyntaxError("missing 'leader' declaration")
    leader_set = frozenset(resolve(state, line_number) for state, line_number in source.leaders)

    protocol = Protocol(
        name=name,
        states=tuple(source.states),
        transitions=tuple(transitions),
        init_expr=tuple(init),
        leader_set=leader_set,
    )

    if source.q:
        q_set = set()
        for names, line_number in source.q:
            t = Transition(*(resolve(state, line_number) for state in names))
            if t.is_null or protocol.lookup(t.r1, t.r2) != t:
                raise ProtocolSyntaxError(
                    f"line {line_number}: q entry {' '.join(names[:2])} -> {' '.join(names[2:])} "
                    f"is not a non-null transition of the protocol", line_number)
            q_set.add(protocol.lookup(t.r1, t.r2))
        protocol = replace(protocol, q_set=frozenset(q_set))
    else:
        protocol = replace(protocol, q_set=derive_leader_q(protocol))

    logger.debug(f"Parsed protocol {name}: {protocol.state_count} states, "
                 f"{len(protocol.transitions)} transitions, |Q|={len(protocol.q_set)}")
    return protocol


def load_protocol(path: Union[str, Path]) -> Protocol:
    """Read and parse a protocol file; the protocol is named after the file stem."""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        logger.error(f"Cannot read protocol file {path}: {e}")
        raise ProtocolError(f"cannot read protocol file {path}: {e.strerror or e}") from e
    return parse_protocol(text, name=path.stem)


def eval_init(p: Protocol, n: int) -> Configuration:
    """
    Evaluate the initial configuration for population size n

    Args:
        p: Protocol
        n: Population size, at least 1

    Returns:
        Configuration: Initial configuration with total count exactly n

    Raises:
        InitExpressionError: If the expressions do not yield a valid split of n
    """
    if n < 1:
        raise InitExpressionError(f"population size must be positive, got {n}")

    counts = [0] * p.state_count
    rest_state = None
    for state, expression in p.init_expr:
        if expression.is_rest:
            rest_state = p.state_index(state)
            continue
        value = expression.evaluate(n)
        if value < 0:
            raise InitExpressionError(f"init for {state!r} is {value} at n={n}")
        counts[p.state_index(state)] = value

    assigned = sum(counts)
    if assigned > n:
        raise InitExpressionError(f"init expressions of {p.name} sum to {assigned} > n={n}")
    if rest_state is not None:
        counts[rest_state] = n - assigned
    elif assigned != n:
        raise InitExpressionError(f"init expressions of {p.name} sum to {assigned}, not n={n}")
    return Configuration(tuple(counts))


def is_applicable(c: Configuration, t: Transition) -> bool:
    if t.r1 == t.r2:
        return c[t.r1] >= 2
    return c[t.r1] >= 1 and c[t.r2] >= 1


def apply(c: Configuration, t: Transition) -> Configuration:
    """
    Apply t to c: c - {r1, r2} + {p1, p2}

    Raises:
        InapplicableTransitionError: If c lacks the input agents of t
    """
    if t.is_null:
        return c
    if not is_applicable(c, t):
        raise InapplicableTransitionError(f"transition {t.inputs}->{t.outputs} not applicable to {c.counts}")
    counts = list(c.counts)
    counts[t.r1] -= 1
    counts[t.r2] -= 1
    counts[t.p1] += 1
    counts[t.p2] += 1
    return Configuration(tuple(counts))


def enabled_transitions(c: Configuration, p: Protocol) -> List[Transition]:
    """Non-null transitions of p applicable in c, in declaration order."""
    return [t for t in p.transitions if is_applicable(c, t)]


def pair_probability(c: Configuration, t: Transition) -> float:
    """
    Probability that the next interaction in c is between the inputs of t

    Raises:
        ProtocolError: If c has fewer than two agents
    """
    n = c.n
    if n < 2:
        raise ProtocolError(f"pair probability needs at least two agents, got n={n}")
    if t.r1 == t.r2:
        return c[t.r1] * (c[t.r1] - 1) / (n * (n - 1))
    return 2 * c[t.r1] * c[t.r2] / (n * (n - 1))


def leader_count(p: Protocol, c: Configuration) -> int:
    return sum(c[s] for s in p.leader_set)


def derive_leader_q(p: Protocol) -> FrozenSet[Transition]:
    """Transitions whose application changes the total count of leader states."""
    return frozenset(
        t for t in p.transitions
        if sum(t.net_change(s) for s in p.leader_set) != 0
    )


def enumerate_configurations(state_count: int, n: int) -> Iterator[Configuration]:
    """All configurations with the given number of states and total n, lexicographically."""
    if state_count < 1:
        return
    for bars in itertools.combinations(range(n + state_count - 1), state_count - 1):
        counts = []
        previous = -1
        for bar in bars:
            counts.append(bar - previous - 1)
            previous = bar
        counts.append(n + state_count - 2 - previous)
        yield Configuration(tuple(counts))


def parse_configuration(p: Protocol, text: str) -> Configuration:
    """
    Parse ``{count state, ...}`` over the states of p

    Raises:
        ProtocolSyntaxError: On a malformed entry
        UnknownStateError: On a state p does not declare
    """
    try:
        entries = parse_configuration_entries(text)
    except ProtocolFormatError as e:
        raise ProtocolSyntaxError(str(e)) from e
    counts = [0] * p.state_count
    for name, count in entries:
        counts[p.state_index(name)] += count
    return Configuration(tuple(counts))
