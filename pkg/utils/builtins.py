"""Built-in protocol library and analytic stability predicates."""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from config import PROTOCOL_DIR
from protocol import (
    Configuration,
    InitExpressionError,
    Protocol,
    ProtocolError,
    Transition,
    eval_init,
    load_protocol,
)

logger = logging.getLogger(__name__)

BUILTIN_PREFIX = 'builtin:'
_MIN_N_SEARCH = 1000


@dataclass(frozen=True)
class StatePredicate:
    """
    Conjunction of count bounds, e.g. l = 1 and r <= 1

    ``bounds`` holds (state, low, high) with ``high=None`` meaning unbounded.
    Plain data so that it can be shipped to worker processes.
    """
    name: str
    bounds: Tuple[Tuple[str, int, Optional[int]], ...]

    def resolve(self, p: Protocol) -> Tuple[Tuple[int, int, Optional[int]], ...]:
        """Bounds with state names replaced by indices of p."""
        return tuple((p.state_index(state), low, high) for state, low, high in self.bounds)

    def holds(self, p: Protocol, c: Configuration) -> bool:
        for state, low, high in self.resolve(p):
            if c[state] < low or (high is not None and c[state] > high):
                return False
        return True

    def describe(self) -> str:
        parts = []
        for state, low, high in self.bounds:
            if high == low:
                parts.append(f"{state}={low}")
            elif high is None:
                parts.append(f"{state}>={low}")
            elif low == 0:
                parts.append(f"{state}<={high}")
            else:
                parts.append(f"{low}<={state}<={high}")
        return ' and '.join(parts) or 'true'


@dataclass(frozen=True)
class BuiltinProtocol:
    """A shipped protocol file with its stability predicate and metadata."""
    name: str
    filename: str
    predicate: Optional[StatePredicate] = None
    # Least counts the init expression is meant to produce
    minimums: Dict[str, int] = field(default_factory=dict)
    # Transition whose repeated firing is a speed fault
    speed_fault: Optional[str] = None
    description: str = ''

    @property
    def path(self) -> Path:
        return PROTOCOL_DIR / self.filename


BUILTINS: Dict[str, BuiltinProtocol] = {
    'simple': BuiltinProtocol(
        name='simple',
        filename='simple.pp',
        predicate=StatePredicate('simple', (('l', 1, 1),)),
        description='linear-time election, l l -> l f',
    ),
    'broken': BuiltinProtocol(
        name='broken',
        filename='broken.pp',
        predicate=StatePredicate('broken', (('l', 1, 1),)),
        description='leaders annihilate in pairs; fails for even n',
    ),
    'example1': BuiltinProtocol(
        name='example1',
        filename='example1.pp',
        predicate=StatePredicate('example1', (('l', 1, 1), ('r', 0, 1))),
        speed_fault='r r -> l k',
        description='n^(1/4) candidates, killer epidemic',
    ),
    'example2': BuiltinProtocol(
        name='example2',
        filename='example2.pp',
        predicate=StatePredicate('example2', (('l', 1, 1), ('r', 0, 0), ("l'", 0, 1))),
        minimums={'l': 2, 'r': 1},
        description='two dormant leaders, sqrt(n) candidates',
    ),
    'surgery': BuiltinProtocol(
        name='surgery',
        filename='surgery.pp',
        description='five-transition protocol for path surgery',
    ),
}


def get_builtin(name: str) -> BuiltinProtocol:
    """
    Look up a built-in protocol by name

    Raises:
        ProtocolError: If no built-in has that name
    """
    try:
        return BUILTINS[name]
    except KeyError:
        known = ', '.join(sorted(BUILTINS))
        raise ProtocolError(f"unknown built-in protocol {name!r}; choose one of {known}") from None


@lru_cache(maxsize=None)
def load_builtin(name: str) -> Protocol:
    """Parse a built-in protocol (cached)."""
    builtin = get_builtin(name)
    protocol = load_protocol(builtin.path)
    logger.debug(f"Loaded built-in protocol {name} from {builtin.path}")
    return protocol


def resolve_protocol(reference: Union[str, Path]) -> Tuple[Protocol, Optional[BuiltinProtocol]]:
    """
    Load ``builtin:NAME`` or a protocol file path

    Returns:
        Tuple of the protocol and its built-in record (None for files)
    """
    reference = str(reference)
    if reference.startswith(BUILTIN_PREFIX):
        name = reference[len(BUILTIN_PREFIX):]
        return load_builtin(name), get_builtin(name)
    return load_protocol(reference), None


def predicate_for(name: str) -> StatePredicate:
    """
    Analytic stability predicate of a built-in protocol

    Raises:
        ProtocolError: If the built-in has no predicate
    """
    builtin = get_builtin(name)
    if builtin.predicate is None:
        raise ProtocolError(f"built-in protocol {name!r} has no stability predicate")
    return builtin.predicate


def speed_fault_transition(name: str) -> Optional[Transition]:
    builtin = get_builtin(name)
    if builtin.speed_fault is None:
        return None
    return load_builtin(name).transition(builtin.speed_fault)


def meets_minimums(p: Protocol, c: Configuration, minimums: Dict[str, int]) -> bool:
    return all(c[p.state_index(state)] >= least for state, least in minimums.items())


def minimum_n(p: Protocol, minimums: Optional[Dict[str, int]] = None) -> int:
    """
    Least n whose initial configuration exists and meets the intended minimums

    Raises:
        InitExpressionError: If no n up to the search limit qualifies
    """
    minimums = minimums or {}
    for n in range(1, _MIN_N_SEARCH + 1):
        try:
            initial = eval_init(p, n)
        except InitExpressionError:
            continue
        if meets_minimums(p, initial, minimums):
            return n
    raise InitExpressionError(f"no legal population size up to {_MIN_N_SEARCH} for {p.name}")
