"""
Combinatorics of recorded transition paths.

A path window is a start configuration plus a finite sequence of non-null
transitions. On a window this module finds b-bottleneck steps, orders the
states whose counts collapse along the path (from >= b2 down to <= b1) so
that each one is drained by a transition that touches no earlier state,
and performs path surgery: appending transitions to drain those states, or
adding and removing transition instances to hit a requested count.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from protocol import (
    Configuration,
    Protocol,
    ProtocolError,
    Transition,
    is_applicable,
    parse_configuration,
)
from utils.protocol_format import ProtocolFormatError, parse_path_text

logger = logging.getLogger(__name__)


class PathAnalysisError(Exception):
    """Base exception for path analysis errors"""
    pass


class PreconditionError(PathAnalysisError):
    """Raised when a window or threshold pair does not meet the ordering preconditions"""

    def __init__(self, message: str, bottlenecks: Optional[List[Tuple[int, Transition]]] = None):
        self.bottlenecks = bottlenecks or []
        super().__init__(message)


class OrderingError(PathAnalysisError):
    """Raised when no draining transition exists for a state; indicates a bug"""
    pass


class SurgeryError(PathAnalysisError):
    """Raised when a surgery cannot be carried out on the window"""

    def __init__(self, message: str, sufficient_b2: Optional[int] = None):
        self.sufficient_b2 = sufficient_b2
        super().__init__(message)


@dataclass
class PathValidation:
    """Result of replaying a transition sequence."""
    ok: bool
    position: Optional[int]
    final: Configuration


def validate_path(start: Configuration, transitions: Sequence[Transition]) -> PathValidation:
    """
    Replay transitions from start

    Returns:
        PathValidation: ``ok`` with the final configuration, or the first
            position whose inputs are missing together with the configuration
            reached just before it
    """
    counts = list(start.counts)
    for position, t in enumerate(transitions):
        if t.is_null:
            continue
        if not is_applicable(counts, t):
            return PathValidation(ok=False, position=position, final=Configuration(tuple(counts)))
        counts[t.r1] -= 1
        counts[t.r2] -= 1
        counts[t.p1] += 1
        counts[t.p2] += 1
    return PathValidation(ok=True, position=None, final=Configuration(tuple(counts)))


@dataclass(frozen=True, eq=False)
class PathWindow:
    """A valid finite path: start, non-null transitions, end."""
    protocol: Protocol
    start: Configuration
    transitions: Tuple[Transition, ...]
    end: Configuration = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, 'transitions', tuple(self.transitions))
        for position, t in enumerate(self.transitions):
            if t.is_null:
                raise PathAnalysisError(f"path step {position} is a null transition")
        result = validate_path(self.start, self.transitions)
        if not result.ok:
            t = self.transitions[result.position]
            raise PathAnalysisError(
                f"path is not valid: step {result.position} ({t.label(self.protocol.states)}) "
                f"lacks inputs in {result.final.format(self.protocol.states)}")
        object.__setattr__(self, 'end', result.final)

    def __len__(self) -> int:
        return len(self.transitions)

    def configurations(self) -> List[Tuple[int, ...]]:
        """Count vectors before each step, followed by the end."""
        walk = [self.start.counts]
        counts = list(self.start.counts)
        for t in self.transitions:
            counts[t.r1] -= 1
            counts[t.r2] -= 1
            counts[t.p1] += 1
            counts[t.p2] += 1
            walk.append(tuple(counts))
        return walk


@dataclass(frozen=True)
class ThresholdParams:
    """Small-count threshold b1 and large-count threshold b2."""
    b1: int
    b2: int

    def validate(self, state_count: int) -> None:
        if self.b1 < 0:
            raise PreconditionError(f"b1 must be nonnegative, got {self.b1}")
        if self.b2 <= state_count * self.b1:
            raise PreconditionError(
                f"b2={self.b2} must exceed |states| * b1 = {state_count * self.b1}")

    def occurrence_bound(self, state_count: int) -> float:
        """Least number of times every ordering transition must occur."""
        return (self.b2 - state_count * self.b1) / state_count ** 2


@dataclass
class OrderingResult:
    """
    Ordered collapsing states d1..dk with their draining transitions.

    ``alphas[i]`` is written with ``delta[i]`` as first input; its second
    input and both outputs avoid ``delta[:i + 1]``. ``occurrence_counts``
    counts each alpha over the whole window, ``suffix_counts`` over the part
    of the window where it was selected.
    """
    delta: Tuple[int, ...]
    gamma: Tuple[int, ...]
    alphas: Tuple[Transition, ...]
    occurrence_counts: Tuple[int, ...]
    suffix_counts: Tuple[int, ...]
    thresholds: ThresholdParams

    def __len__(self) -> int:
        return len(self.delta)

    def format(self, states: Sequence[str]) -> str:
        lines = [
            f"delta: {' '.join(states[d] for d in self.delta)}",
            f"gamma: {' '.join(states[s] for s in self.gamma)}",
        ]
        for i, alpha in enumerate(self.alphas, start=1):
            lines.append(f"alpha[{i}]: {alpha.label(states)}  occurrences {self.occurrence_counts[i - 1]}"
                         f"  in-suffix {self.suffix_counts[i - 1]}")
        return '\n'.join(lines) + '\n'


@dataclass
class SurgeryPlan:
    """
    A modified path and the configurations it connects.

    ``reps`` holds execution counts c_i (append) or signed adjustments
    delta_i (adjust: positive removes, negative appends). ``extra`` is the
    added input vector e; ``padding`` the context agents p. The plan's
    ``transitions`` validate from ``start`` and end at ``final``.
    """
    kind: str
    protocol: Protocol
    ordering: OrderingResult
    reps: Tuple[int, ...]
    extra: Configuration
    padding: Configuration
    result_gamma: Configuration
    start: Configuration
    transitions: Tuple[Transition, ...]
    final: Configuration
    parts: Tuple['SurgeryPlan', ...] = ()

    def format(self) -> str:
        states = self.protocol.states
        lines = [
            f"kind: {self.kind}",
            f"ordering: {' '.join(states[d] for d in self.ordering.delta)}",
        ]
        if self.kind == 'double':
            for part in self.parts:
                lines.extend('  ' + line for line in part.format().splitlines())
        else:
            for i, (alpha, rep) in enumerate(zip(self.ordering.alphas, self.reps), start=1):
                if self.kind == 'append':
                    action = f"execute {rep}"
                elif rep > 0:
                    action = f"remove {rep}"
                elif rep < 0:
                    action = f"add {-rep}"
                else:
                    action = "keep"
                lines.append(f"alpha[{i}]: {alpha.label(states)}  {action}")
        lines.extend([
            f"e: {self.extra.format(states)}",
            f"p: {self.padding.format(states)}",
            f"result_gamma: {self.result_gamma.format(states)}",
            f"start: {self.start.format(states)}",
            f"final: {self.final.format(states)}",
            f"length: {len(self.transitions)}",
        ])
        return '\n'.join(lines) + '\n'


def load_path(p: Protocol, source: Union[str, Path]) -> PathWindow:
    """
    Read a path file (or path text) for protocol p

    Raises:
        ProtocolError: On malformed text, unknown states or foreign transitions
        PathAnalysisError: If the path is not valid from its start
    """
    if isinstance(source, Path) or (isinstance(source, str) and '\n' not in source
                                    and Path(source).suffix == '.path'):
        try:
            text = Path(source).read_text(encoding='utf-8')
        except OSError as e:
            logger.error(f"Cannot read path file {source}: {e}")
            raise ProtocolError(f"cannot read path file {source}: {e.strerror or e}") from e
    else:
        text = str(source)
    try:
        parsed = parse_path_text(text)
    except ProtocolFormatError as e:
        raise ProtocolError(str(e), e.line_number) from e
    start = parse_configuration(p, parsed.start)
    transitions = []
    for names, repeat in parsed.steps:
        t = p.transition(f"{names[0]} {names[1]} -> {names[2]} {names[3]}")
        transitions.extend([t] * repeat)
    return PathWindow(p, start, tuple(transitions))


def find_bottlenecks(w: PathWindow, b: int) -> List[Tuple[int, Transition]]:
    """Positions whose transition is applied while both its input counts are <= b."""
    found = []
    for position, (counts, t) in enumerate(zip(w.configurations(), w.transitions)):
        if counts[t.r1] <= b and counts[t.r2] <= b:
            found.append((position, t))
    return found


def bottleneck_lower_bound(b: int, state_count: int, n: int) -> float:
    """
    Lower bound on the expected parallel time of any path forced through a b-bottleneck

    Raises:
        PathAnalysisError: If b < 1 or n < 2
    """
    if b < 1 or n < 2:
        raise PathAnalysisError(f"bound needs b >= 1 and n >= 2, got b={b}, n={n}")
    return (n - 1) / (2 * (b * state_count) ** 2)


def collapsing_states(w: PathWindow, t: ThresholdParams) -> Tuple[List[int], List[int]]:
    """States going from >= b2 at the start to <= b1 at the end, and the rest."""
    delta = [s for s in range(w.protocol.state_count) if w.start[s] >= t.b2 and w.end[s] <= t.b1]
    gamma = [s for s in range(w.protocol.state_count) if s not in delta]
    return delta, gamma


def _drains(t: Transition, remaining: set) -> Optional[int]:
    """The state of ``remaining`` that t removes without touching any other, if any."""
    first_in, second_in = t.r1 in remaining, t.r2 in remaining
    if first_in == second_in:
        return None
    if t.p1 in remaining or t.p2 in remaining:
        return None
    return t.r1 if first_in else t.r2


def transition_ordering(w: PathWindow, t: ThresholdParams) -> OrderingResult:
    """
    Order the collapsing states so that each is drained by a transition avoiding earlier ones

    Works backwards: for the still-unordered set D the potential is the total
    count on D, and the suffix starts at the last configuration where that
    total is still >= b2. A transition in the suffix with exactly one input in
    D and no output in D drains that input, which becomes the last unordered
    state. Among the candidates the one occurring most often over the whole
    window is chosen (ties broken by declaration order).

    Args:
        w: Path window free of b2-bottlenecks
        t: Thresholds with b2 > |states| * b1

    Returns:
        OrderingResult: The ordering and its draining transitions

    Raises:
        PreconditionError: If the thresholds are inconsistent or the window has
            b2-bottleneck steps (these are attached to the error)
        OrderingError: If some step finds no draining transition
    """
    p = w.protocol
    t.validate(p.state_count)
    bottlenecks = find_bottlenecks(w, t.b2)
    if bottlenecks:
        position, step = bottlenecks[0]
        logger.error(f"Window has {len(bottlenecks)} {t.b2}-bottleneck steps, first at {position}")
        raise PreconditionError(
            f"{len(bottlenecks)} steps are {t.b2}-bottlenecks, first at position {position} "
            f"({step.label(p.states)})", bottlenecks)

    delta, gamma = collapsing_states(w, t)
    walk = w.configurations()
    whole = Counter(w.transitions)
    remaining = set(delta)
    ordered: List[Tuple[int, Transition, int]] = []

    while remaining:
        potential = [sum(counts[d] for d in remaining) for counts in walk]
        last_high = max(k for k, value in enumerate(potential) if value >= t.b2)
        suffix: Counter = Counter()
        drained: Dict[Transition, int] = {}
        for step in w.transitions[last_high:]:
            state = _drains(step, remaining)
            if state is not None:
                suffix[step] += 1
                drained[step] = state
        if not suffix:
            names = ', '.join(p.states[d] for d in sorted(remaining))
            logger.error(f"No draining transition for {{{names}}} after position {last_high}")
            raise OrderingError(f"no transition drains any of {{{names}}} after position {last_high}")

        best = max(suffix, key=lambda step: (whole[step], -p.declaration_order(step)))
        state = drained[best]
        ordered.append((state, best.oriented(state), suffix[best]))
        remaining.discard(state)

    ordered.reverse()
    result = OrderingResult(
        delta=tuple(state for state, _, _ in ordered),
        gamma=tuple(gamma),
        alphas=tuple(alpha for _, alpha, _ in ordered),
        occurrence_counts=tuple(whole[alpha] for _, alpha, _ in ordered),
        suffix_counts=tuple(count for _, _, count in ordered),
        thresholds=t,
    )

    bound = t.occurrence_bound(p.state_count)
    for d, count in zip(result.delta, result.occurrence_counts):
        if count < bound:
            raise OrderingError(f"transition draining {p.states[d]} occurs {count} < {bound:.3f} times")
    logger.debug(f"Ordering over {len(result)} states: {' '.join(p.states[d] for d in result.delta)}")
    return result


def _replay_deficit(start: Sequence[int], transitions: Sequence[Transition]) -> Tuple[List[int], List[int]]:
    """Replay with signed counts; return final counts and per-state largest shortfall."""
    counts = list(start)
    deficit = [0] * len(counts)
    for t in transitions:
        counts[t.r1] -= 1
        counts[t.r2] -= 1
        for s in (t.r1, t.r2):
            if -counts[s] > deficit[s]:
                deficit[s] = -counts[s]
        counts[t.p1] += 1
        counts[t.p2] += 1
    return counts, deficit


def _checked_final(plan_kind: str, p: Protocol, start: Configuration,
                   transitions: Sequence[Transition]) -> Configuration:
    result = validate_path(start, transitions)
    if not result.ok:
        logger.error(f"{plan_kind} surgery produced a path failing at step {result.position}")
        raise SurgeryError(f"{plan_kind} surgery produced a path that fails at step {result.position} "
                           f"from {start.format(p.states)}")
    return result.final


def append_surgery(w: PathWindow, o: OrderingResult) -> SurgeryPlan:
    """
    Append transitions that drain every collapsing state to zero

    Executes alpha_i c_i times, where c_i is the end count of d_i plus what
    the earlier appended executions produce in d_i; the second inputs are
    supplied up front as e = sum of {c_i s_i}.

    Returns:
        SurgeryPlan: Plan from start + e whose final configuration has no
            agent in a collapsing state

    Raises:
        SurgeryError: If the appended path does not validate
    """
    p = w.protocol
    size = p.state_count
    produced = [0] * size
    extra = [0] * size
    reps = []
    appended: List[Transition] = []
    for d, alpha in zip(o.delta, o.alphas):
        executions = w.end[d] + produced[d]
        reps.append(executions)
        extra[alpha.r2] += executions
        produced[alpha.p1] += executions
        produced[alpha.p2] += executions
        appended.extend([alpha] * executions)

    extra_config = Configuration(tuple(extra))
    start = w.start + extra_config
    transitions = w.transitions + tuple(appended)
    final = _checked_final('append', p, start, transitions)
    leftover = [p.states[d] for d in o.delta if final[d]]
    if leftover:
        raise SurgeryError(f"append surgery left agents in {', '.join(leftover)}")

    logger.info(f"Append surgery: executions {tuple(reps)}, e = {extra_config.format(p.states)}")
    return SurgeryPlan(
        kind='append',
        protocol=p,
        ordering=o,
        reps=tuple(reps),
        extra=extra_config,
        padding=Configuration.zeros(size),
        result_gamma=final,
        start=start,
        transitions=transitions,
        final=final,
    )


def _target_vector(p: Protocol, target: Union[Configuration, Mapping]) -> List[int]:
    vector = [0] * p.state_count
    items = enumerate(target.counts) if isinstance(target, Configuration) else target.items()
    for state, count in items:
        index = p.state_index(state) if isinstance(state, str) else int(state)
        if count < 0:
            raise SurgeryError(f"target count for {p.states[index]} is negative")
        vector[index] = int(count)
    return vector


def adjust_surgery(w: PathWindow, o: OrderingResult,
                   target: Union[Configuration, Mapping]) -> SurgeryPlan:
    """
    Add and remove instances of the ordering transitions to hit target counts

    For d_1..d_k in order, delta_i = target(d_i) - current(d_i); a negative
    delta_i appends |delta_i| copies of alpha_i, a positive one removes the
    latest delta_i occurrences of alpha_i. Counts requested on non-collapsing
    states are taken out of the final configuration. The padding p is the
    largest shortfall per state when the modified path is replayed from the
    window start.

    Args:
        w: Path window
        o: Ordering of w
        target: Requested counts (state index or name to count, or a
            Configuration); collapsing states missing from it mean 0

    Returns:
        SurgeryPlan: Plan from start + p; final - p equals result_gamma + e

    Raises:
        SurgeryError: If a removal needs more occurrences than the window has
            (``sufficient_b2`` estimates a threshold that would suffice), or if
            the remaining non-collapsing counts go negative
    """
    p = w.protocol
    size = p.state_count
    requested = _target_vector(p, target)
    current = list(w.end.counts)
    removed: set = set()
    appended: List[Transition] = []
    reps = []
    spread = max((abs(w.end[d] - requested[d]) for d in o.delta), default=0)

    for i, (d, alpha) in enumerate(zip(o.delta, o.alphas)):
        change = requested[d] - current[d]
        if change < 0:
            appended.extend([alpha] * -change)
        elif change > 0:
            positions = [k for k, step in enumerate(w.transitions) if step == alpha and k not in removed]
            if len(positions) < change:
                k = len(o.delta)
                sufficient = k * o.thresholds.b1 + 3 ** (k - 1) * spread * size ** 2
                logger.error(f"Need to remove {change} of {alpha.label(p.states)}, "
                             f"window has {len(positions)}")
                raise SurgeryError(
                    f"cannot remove {change} occurrences of {alpha.label(p.states)}: only "
                    f"{len(positions)} left; b2 >= {sufficient} suffices for this target",
                    sufficient_b2=sufficient)
            removed.update(positions[-change:])
        for s in range(size):
            current[s] -= change * alpha.net_change(s)
        reps.append(change)

    transitions = tuple(step for k, step in enumerate(w.transitions) if k not in removed) + tuple(appended)
    unpadded, deficit = _replay_deficit(w.start.counts, transitions)
    padding = Configuration(tuple(deficit))
    start = w.start + padding
    final = _checked_final('adjust', p, start, transitions)

    delta_set = set(o.delta)
    gamma = [0] * size
    for s in range(size):
        if s in delta_set:
            if unpadded[s] != requested[s]:
                raise SurgeryError(f"adjust surgery reached {unpadded[s]} {p.states[s]}, "
                                   f"wanted {requested[s]}")
            continue
        gamma[s] = unpadded[s] - requested[s]
        if gamma[s] < 0:
            raise SurgeryError(f"cannot take {requested[s]} {p.states[s]} out of the final "
                               f"configuration: only {unpadded[s]} remain")

    extra = Configuration(tuple(requested))
    logger.info(f"Adjust surgery: changes {tuple(reps)}, p = {padding.format(p.states)}")
    return SurgeryPlan(
        kind='adjust',
        protocol=p,
        ordering=o,
        reps=tuple(reps),
        extra=extra,
        padding=padding,
        result_gamma=Configuration(tuple(gamma)),
        start=start,
        transitions=transitions,
        final=final,
    )


def double_surgery(w: PathWindow, o: OrderingResult) -> SurgeryPlan:
    """
    Compose both surgeries on two copies of the window start

    One copy runs the adjusted path producing the vector e the append surgery
    needs, with the other copy as context; the other copy then runs the
    window followed by the appended draining transitions.

    Raises:
        SurgeryError: If the padding exceeds the start or the composition fails
    """
    p = w.protocol
    appended = append_surgery(w, o)
    adjusted = adjust_surgery(w, o, appended.extra)
    if not adjusted.padding <= w.start:
        raise SurgeryError(f"padding {adjusted.padding.format(p.states)} exceeds the window start")

    start = w.start.scaled(2)
    transitions = adjusted.transitions + appended.transitions
    final = _checked_final('double', p, start, transitions)
    leftover = [p.states[d] for d in o.delta if final[d]]
    if leftover:
        raise SurgeryError(f"composed path left agents in {', '.join(leftover)}")

    logger.info(f"Composed surgery from {start.format(p.states)} ends at {final.format(p.states)}")
    return SurgeryPlan(
        kind='double',
        protocol=p,
        ordering=o,
        reps=(),
        extra=appended.extra,
        padding=adjusted.padding,
        result_gamma=final,
        start=start,
        transitions=transitions,
        final=final,
        parts=(adjusted, appended),
    )


def all_paths_bottlenecked(g, target, b: int) -> bool:
    """
    Whether every root-to-target path of a reachability graph has a b-bottleneck step

    Holds vacuously when no target is reachable; callers wanting a time bound
    check the target set first.

    Args:
        g: Complete ReachabilityGraph
        target: Target configurations
        b: Bottleneck parameter
    """
    targets = g.indices_of(target)
    if 0 in targets:
        return False
    seen = {0}
    stack = [0]
    while stack:
        node = stack.pop()
        counts = g.nodes[node]
        for t, successor, _ in g.edges[node]:
            if counts[t.r1] <= b and counts[t.r2] <= b:
                continue
            if successor in targets:
                return False
            if successor not in seen:
                seen.add(successor)
                stack.append(successor)
    return True


def window_from_trace(tr, start: int = 0, end: Optional[int] = None) -> PathWindow:
    """
    Cut a simulation trace into a window

    Args:
        tr: Trace
        start: Interaction index of the window start
        end: Last interaction index included (defaults to the end of the trace)
    """
    end = tr.interactions_total if end is None else end
    if not 0 <= start <= end:
        raise PathAnalysisError(f"window bounds must satisfy 0 <= start <= end, got {start}, {end}")
    transitions = tuple(
        tr.protocol.transitions[position]
        for index, position in zip(tr.indices, tr.transitions)
        if start < index <= end
    )
    return PathWindow(tr.protocol, tr.configuration_at(start), transitions)
