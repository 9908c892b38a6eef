"""
Text formats for protocols, initial-configuration expressions, configurations
and recorded transition paths.

The protocol grammar is line oriented (``#`` starts a comment):

    states: s1 s2 ...
    init: s1 = <expr>; s2 = rest
    leader: s1 [s2 ...]
    transition: a b -> c d
    q: a b -> c d

where ``<expr>`` is built from integers, ``n``, ``floor(n^(a/b))`` and
``+``/``-``.
"""
import logging
import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

STATE_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_']*$")
REST = 'rest'

_KEYS = ('states', 'init', 'leader', 'transition', 'q')
_TERM = re.compile(
    r"\s*(?:(?P<int>\d+)"
    r"|(?P<floor>floor\(\s*n\s*\^\s*(?:\(\s*(?P<num>\d+)\s*(?:/\s*(?P<den>\d+)\s*)?\)|(?P<exp>\d+))\s*\))"
    r"|(?P<n>n))\s*"
)
_CONFIG_ENTRY = re.compile(r"^\s*(\d+)\s+(\S+)\s*$")
_REPEAT = re.compile(r"^\s*(\d+)\s*\*\s*(.+)$")


class ProtocolFormatError(Exception):
    """Raised when protocol, configuration or path text is malformed"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


def integer_root(value: int, degree: int) -> int:
    """Largest m with m**degree <= value, computed exactly."""
    if value < 0 or degree < 1:
        raise ValueError("integer_root needs value >= 0 and degree >= 1")
    if value < 2 or degree == 1:
        return value
    guess = int(round(value ** (1.0 / degree)))
    while guess ** degree > value:
        guess -= 1
    while (guess + 1) ** degree <= value:
        guess += 1
    return guess


@dataclass(frozen=True)
class Term:
    """One signed term: a literal, ``n`` or ``floor(n^(num/den))``."""
    sign: int
    kind: str
    value: int = 0
    num: int = 1
    den: int = 1

    def evaluate(self, n: int) -> int:
        if self.kind == 'int':
            magnitude = self.value
        elif self.kind == 'n':
            magnitude = n
        else:
            magnitude = integer_root(n ** self.num, self.den)
        return self.sign * magnitude

    def is_exact(self, n: int) -> bool:
        """False when the root term is truncated by the floor at n."""
        if self.kind != 'floor':
            return True
        return integer_root(n ** self.num, self.den) ** self.den == n ** self.num


@dataclass(frozen=True)
class InitExpression:
    """An integer expression in the population size n, or the balance term."""
    terms: Tuple[Term, ...] = ()
    is_rest: bool = False
    text: str = ''

    def evaluate(self, n: int) -> int:
        if self.is_rest:
            raise ValueError("the balance term has no value of its own")
        return sum(term.evaluate(n) for term in self.terms)

    def rounds_at(self, n: int) -> bool:
        return not all(term.is_exact(n) for term in self.terms)

    def __str__(self) -> str:
        return self.text


def parse_init_expression(text: str, line_number: Optional[int] = None) -> InitExpression:
    """
    Parse the right-hand side of one init assignment

    Args:
        text: Expression text, e.g. ``floor(n^(1/4))`` or ``rest``
        line_number: Source line used in error messages

    Returns:
        InitExpression: Parsed expression

    Raises:
        ProtocolFormatError: If the text is not a valid expression
    """
    stripped = text.strip()
    if stripped == REST:
        return InitExpression(is_rest=True, text=REST)
    if not stripped:
        raise ProtocolFormatError("empty init expression", line_number)

    terms = []
    position = 0
    sign = 1
    while True:
        match = _TERM.match(stripped, position)
        if not match or match.end() == position:
            raise ProtocolFormatError(f"cannot parse init expression {stripped!r}", line_number)
        if match.group('int') is not None:
            terms.append(Term(sign, 'int', value=int(match.group('int'))))
        elif match.group('floor') is not None:
            if match.group('exp') is not None:
                num, den = int(match.group('exp')), 1
            else:
                num, den = int(match.group('num')), int(match.group('den') or 1)
            if den == 0:
                raise ProtocolFormatError("zero denominator in exponent", line_number)
            terms.append(Term(sign, 'floor', num=num, den=den))
        else:
            terms.append(Term(sign, 'n'))
        position = match.end()
        if position == len(stripped):
            break
        operator = stripped[position]
        if operator not in '+-':
            raise ProtocolFormatError(f"unexpected {operator!r} in init expression", line_number)
        sign = 1 if operator == '+' else -1
        position += 1

    return InitExpression(terms=tuple(terms), text=stripped)


def split_transition(text: str, line_number: Optional[int] = None) -> Tuple[str, str, str, str]:
    """Split ``a b -> c d`` (commas allowed) into four state names."""
    if '->' not in text:
        raise ProtocolFormatError(f"transition {text.strip()!r} has no '->'", line_number)
    left, _, right = text.partition('->')
    inputs = left.replace(',', ' ').split()
    outputs = right.replace(',', ' ').split()
    if len(inputs) != 2 or len(outputs) != 2:
        raise ProtocolFormatError(
            f"transition {text.strip()!r} must have two inputs and two outputs", line_number)
    for name in inputs + outputs:
        if not STATE_NAME.match(name):
            raise ProtocolFormatError(f"invalid state name {name!r}", line_number)
    return inputs[0], inputs[1], outputs[0], outputs[1]


@dataclass
class ProtocolSource:
    """Declarations read from a protocol file, before semantic checks."""
    states: List[str] = field(default_factory=list)
    states_line: Optional[int] = None
    init: List[Tuple[str, InitExpression, int]] = field(default_factory=list)
    leaders: List[Tuple[str, int]] = field(default_factory=list)
    transitions: List[Tuple[Tuple[str, str, str, str], int]] = field(default_factory=list)
    q: List[Tuple[Tuple[str, str, str, str], int]] = field(default_factory=list)


def parse_source(text: str) -> ProtocolSource:
    """
    Read the declarations of a protocol file

    Args:
        text: Protocol source

    Returns:
        ProtocolSource: Declarations in file order

    Raises:
        ProtocolFormatError: On any syntax error, with its line number
    """
    source = ProtocolSource()
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split('#', 1)[0].strip()
        if not line:
            continue
        key, colon, body = line.partition(':')
        key = key.strip().lower()
        if not colon or key not in _KEYS:
            raise ProtocolFormatError(f"expected one of {', '.join(_KEYS)} followed by ':'", line_number)

        if key == 'states':
            if source.states_line is not None:
                raise ProtocolFormatError(
                    f"'states' already declared on line {source.states_line}", line_number)
            names = body.replace(',', ' ').split()
            if not names:
                raise ProtocolFormatError("'states' needs at least one state", line_number)
            for name in names:
                if not STATE_NAME.match(name):
                    raise ProtocolFormatError(f"invalid state name {name!r}", line_number)
            if len(set(names)) != len(names):
                raise ProtocolFormatError("duplicate state in 'states'", line_number)
            source.states = names
            source.states_line = line_number
        elif key == 'init':
            for assignment in body.split(';'):
                if not assignment.strip():
                    continue
                name, equals, expression = assignment.partition('=')
                name = name.strip()
                if not equals or not STATE_NAME.match(name):
                    raise ProtocolFormatError(f"malformed init assignment {assignment.strip()!r}", line_number)
                source.init.append((name, parse_init_expression(expression, line_number), line_number))
        elif key == 'leader':
            names = body.replace(',', ' ').split()
            if not names:
                raise ProtocolFormatError("'leader' needs at least one state", line_number)
            source.leaders.extend((name, line_number) for name in names)
        elif key == 'transition':
            source.transitions.append((split_transition(body, line_number), line_number))
        else:
            source.q.append((split_transition(body, line_number), line_number))

    if source.states_line is None:
        raise ProtocolFormatError("missing 'states' declaration")
    logger.debug(f"Read protocol source with {len(source.states)} states "
                 f"and {len(source.transitions)} transition lines")
    return source


def format_configuration(states: Sequence[str], counts: Sequence[int]) -> str:
    """Render counts as ``{count state, ...}`` in declaration order, zeros omitted."""
    entries = [f"{count} {state}" for state, count in zip(states, counts) if count]
    return '{' + ', '.join(entries) + '}'


def parse_configuration_entries(text: str) -> List[Tuple[str, int]]:
    """
    Split ``{count state, ...}`` into (state, count) entries

    Braces are optional. State names are not checked here.

    Raises:
        ProtocolFormatError: On malformed entries
    """
    body = text.strip()
    if body.startswith('{') and body.endswith('}'):
        body = body[1:-1]
    entries = []
    for entry in body.split(','):
        if not entry.strip():
            continue
        match = _CONFIG_ENTRY.match(entry)
        if not match:
            raise ProtocolFormatError(f"malformed configuration entry {entry.strip()!r}")
        entries.append((match.group(2), int(match.group(1))))
    return entries


@dataclass
class PathSource:
    """A recorded path: a start configuration and transition lines."""
    start: str
    steps: List[Tuple[Tuple[str, str, str, str], int]]


def parse_path_text(text: str) -> PathSource:
    """
    Read a path file

    The first non-comment line is ``start: {…}``; every further line is a
    transition, optionally prefixed by a repetition count ``k *``.

    Raises:
        ProtocolFormatError: On malformed lines
    """
    start = None
    steps = []
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split('#', 1)[0].strip()
        if not line:
            continue
        if start is None:
            key, colon, body = line.partition(':')
            if not colon or key.strip().lower() != 'start':
                raise ProtocolFormatError("path must begin with 'start: {...}'", line_number)
            start = body.strip()
            continue
        repeat = 1
        match = _REPEAT.match(line)
        if match:
            repeat = int(match.group(1))
            line = match.group(2)
        steps.append((split_transition(line, line_number), repeat))
    if start is None:
        raise ProtocolFormatError("empty path file")
    return PathSource(start=start, steps=steps)
