"""
Uniform random pairwise scheduler: single interactions, recorded trials,
time estimates over seeded batches, and trace measurements (convergence,
density).
"""
import bisect
import logging
import math
import multiprocessing
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from config import get_config
from protocol import (
    Configuration,
    Protocol,
    Transition,
    apply,
    eval_init,
    leader_count,
)
from utils.rng import trial_rng

logger = logging.getLogger(__name__)

# Uniform draws fetched from the generator at a time
_BLOCK = 4096


class SchedulerError(Exception):
    """Base exception for scheduling and trial errors"""
    pass


class PopulationTooSmallError(SchedulerError):
    """Raised when an interaction is requested with fewer than two agents"""
    pass


class StopConditionError(SchedulerError):
    """Raised when a stop condition is malformed or does not match the trial"""
    pass


@dataclass(frozen=True)
class StopCondition:
    """
    When a trial ends.

    Kinds:
        predicate   ``predicate.holds(protocol, configuration)`` is true
        membership  configuration is one of ``nodes`` (taken from ``graph``)
        density     every state has count >= beta * n
        cap         never; the trial runs to its interaction budget
    """
    kind: str
    predicate: Any = None
    nodes: FrozenSet[Tuple[int, ...]] = frozenset()
    graph: Any = None
    beta: float = 0.0

    KINDS = ('predicate', 'membership', 'density', 'cap')

    @classmethod
    def on_predicate(cls, predicate) -> 'StopCondition':
        return cls(kind='predicate', predicate=predicate)

    @classmethod
    def on_membership(cls, graph, nodes: Iterable[Configuration]) -> 'StopCondition':
        return cls(kind='membership', graph=graph, nodes=frozenset(c.counts for c in nodes))

    @classmethod
    def on_density(cls, beta: float) -> 'StopCondition':
        return cls(kind='density', beta=beta)

    @classmethod
    def at_cap(cls) -> 'StopCondition':
        return cls(kind='cap')

    @property
    def label(self) -> str:
        if self.kind == 'predicate':
            return f"predicate:{getattr(self.predicate, 'name', 'custom')}"
        if self.kind == 'density':
            return f"density:{self.beta:g}"
        return self.kind

    def validate(self, p: Protocol, n: int) -> None:
        """
        Check the condition can be used for a trial of p at population n

        Raises:
            StopConditionError: On an unknown kind, a missing predicate, an
                out-of-range beta or a graph built for another protocol or n
        """
        if self.kind not in self.KINDS:
            raise StopConditionError(f"unknown stop kind {self.kind!r}")
        if self.kind == 'predicate' and self.predicate is None:
            raise StopConditionError("predicate stop needs a predicate")
        if self.kind == 'density' and not 0 < self.beta <= 1:
            raise StopConditionError(f"density threshold must be in (0, 1], got {self.beta}")
        if self.kind == 'membership':
            if self.graph is None:
                raise StopConditionError("membership stop needs the reachability graph it was computed on")
            graph_protocol = self.graph.protocol
            if graph_protocol is not p and (graph_protocol.states != p.states
                                            or set(graph_protocol.transitions) != set(p.transitions)):
                raise StopConditionError(
                    f"membership set was computed for protocol {graph_protocol.name}, not {p.name}")
            if self.graph.root.n != n:
                raise StopConditionError(
                    f"membership set was computed for n={self.graph.root.n}, trial has n={n}")

    def checker(self, p: Protocol, n: int) -> Callable[[List[int]], bool]:
        """Test on a raw count vector, resolved once per trial."""
        if self.kind == 'predicate':
            if hasattr(self.predicate, 'resolve'):
                bounds = self.predicate.resolve(p)
                return lambda counts: all(
                    low <= counts[s] and (high is None or counts[s] <= high)
                    for s, low, high in bounds)
            predicate = self.predicate
            return lambda counts: bool(predicate.holds(p, Configuration(tuple(counts))))
        if self.kind == 'membership':
            nodes = self.nodes
            return lambda counts: tuple(counts) in nodes
        if self.kind == 'density':
            threshold = self.beta * n
            return lambda counts: min(counts) >= threshold
        return lambda counts: False

    def satisfied(self, p: Protocol, c: Configuration) -> bool:
        return self.checker(p, c.n)(list(c.counts))


@dataclass
class Trace:
    """
    An executed interaction sequence.

    Only non-null interactions are stored: ``indices[k]`` is the (1-based)
    interaction index at which ``protocol.transitions[transitions[k]]`` was
    applied, and null interactions are the gaps between indices.
    ``snapshots`` holds (steps applied, configuration) at the first step at or
    after every multiple of n interactions, starting with (0, initial).
    """
    protocol: Protocol
    initial: Configuration
    indices: List[int] = field(default_factory=list)
    transitions: List[int] = field(default_factory=list)
    interactions_total: int = 0
    snapshots: List[Tuple[int, Configuration]] = field(default_factory=list)
    timed_out: bool = False
    stop_kind: str = 'cap'
    stopped: bool = False

    @property
    def n(self) -> int:
        return self.initial.n

    @property
    def parallel_time(self) -> float:
        return self.interactions_total / self.n if self.n else 0.0

    def __len__(self) -> int:
        return len(self.indices)

    def steps(self) -> Iterator[Tuple[int, Transition, Tuple[int, ...]]]:
        """Yield (interaction index, transition, count deltas) per recorded step."""
        effects = [t.effect(self.protocol.state_count) for t in self.protocol.transitions]
        for index, position in zip(self.indices, self.transitions):
            yield index, self.protocol.transitions[position], effects[position]

    def configurations(self) -> Iterator[Tuple[int, Configuration]]:
        """Replay the trace: (0, initial) then (index, configuration) per step."""
        current = self.initial
        yield 0, current
        for index, position in zip(self.indices, self.transitions):
            current = apply(current, self.protocol.transitions[position])
            yield index, current

    def configuration_at(self, index: int) -> Configuration:
        """Configuration after ``index`` interactions (nulls included)."""
        if index < 0:
            raise ValueError(f"interaction index must be nonnegative, got {index}")
        applied = bisect.bisect_right(self.indices, index)
        start_steps, current = 0, self.initial
        for steps_done, snapshot in self.snapshots:
            if steps_done > applied:
                break
            start_steps, current = steps_done, snapshot
        for position in self.transitions[start_steps:applied]:
            current = apply(current, self.protocol.transitions[position])
        return current

    @property
    def final(self) -> Configuration:
        return self.configuration_at(self.interactions_total)

    def count_firings(self, t: Transition) -> int:
        """Number of recorded applications of t."""
        try:
            position = self.protocol.transitions.index(t)
        except ValueError:
            return 0
        return sum(1 for recorded in self.transitions if recorded == position)


@dataclass
class TrialResult:
    """Per-trial summary; one CSV row."""
    protocol: str
    n: int
    seed: int
    trial: int
    stop_kind: str
    interactions: int
    parallel_time: float
    converged_at: Optional[int]
    timed_out: bool
    firings: int = 0
    max_density: float = 0.0

    @property
    def speed_fault(self) -> bool:
        return self.firings > 1

    def to_row(self) -> Dict[str, Any]:
        return {
            'protocol': self.protocol,
            'n': self.n,
            'seed': self.seed,
            'trial': self.trial,
            'stop_kind': self.stop_kind,
            'interactions': self.interactions,
            'parallel_time': self.parallel_time,
            'converged_at': '' if self.converged_at is None else self.converged_at,
            'timed_out': self.timed_out,
        }


@dataclass
class TimeEstimate:
    """Mean parallel time over the trials that did not time out."""
    trials: int
    mean_parallel_time: float
    std_error: float
    per_trial_times: List[float]
    timeouts: int
    results: List[TrialResult] = field(default_factory=list)

    @property
    def timeout_rate(self) -> float:
        return self.timeouts / self.trials if self.trials else 0.0


class _Uniforms:
    """Buffered uniform draws from a generator."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._buffer = rng.random(_BLOCK)
        self._next = 0

    def draw(self) -> float:
        if self._next == _BLOCK:
            self._buffer = self._rng.random(_BLOCK)
            self._next = 0
        value = self._buffer[self._next]
        self._next += 1
        return float(value)


def _pair_weights(p: Protocol, counts: List[int]) -> List[int]:
    """Ordered-pair counts enabling each non-null transition."""
    weights = []
    for t in p.transitions:
        if t.r1 == t.r2:
            c = counts[t.r1]
            weights.append(c * (c - 1))
        else:
            weights.append(2 * counts[t.r1] * counts[t.r2])
    return weights


def step(c: Configuration, p: Protocol, rng: np.random.Generator) -> Tuple[Configuration, Transition]:
    """
    Run a single interaction between two distinct agents chosen uniformly

    Args:
        c: Current configuration
        p: Protocol
        rng: Random generator

    Returns:
        Tuple of the next configuration and the transition applied (a null
        transition when the pair has no rule)

    Raises:
        PopulationTooSmallError: If c has fewer than two agents
    """
    n = c.n
    if n < 2:
        raise PopulationTooSmallError(f"an interaction needs two agents, got n={n}")
    cumulative = np.cumsum(c.counts)
    first = int(rng.integers(n))
    second = int(rng.integers(n - 1))
    if second >= first:
        second += 1
    a = int(np.searchsorted(cumulative, first, side='right'))
    b = int(np.searchsorted(cumulative, second, side='right'))
    t = p.lookup(a, b)
    return apply(c, t), t


def run_trial(p: Protocol, n: int, stop: StopCondition, rng: np.random.Generator,
              cap: Optional[int] = None, initial: Optional[Configuration] = None) -> Trace:
    """
    Simulate from the initial configuration until stop holds or the budget runs out

    The number of interactions up to the next non-null one is drawn from a
    geometric law with the total non-null pair probability, then the
    transition is drawn proportionally to its pair probability.

    Args:
        p: Protocol
        n: Population size
        stop: Stop condition, validated against p and n
        rng: Random generator owned by this trial
        cap: Interaction budget (defaults to CAP_FACTOR * n^2)
        initial: Start here instead of the protocol's initial configuration

    Returns:
        Trace: Recorded trial; ``timed_out`` is set when the budget ran out
            before the stop condition held

    Raises:
        StopConditionError: If stop does not fit p and n
        SchedulerError: If cap is negative
    """
    if cap is None:
        cap = get_config().default_cap(n)
    if cap < 0:
        raise SchedulerError(f"interaction budget must be nonnegative, got {cap}")
    stop.validate(p, n)
    if initial is None:
        initial = eval_init(p, n)
    elif initial.n != n:
        raise SchedulerError(f"initial configuration has {initial.n} agents, expected {n}")

    trace = Trace(protocol=p, initial=initial, stop_kind=stop.label)
    trace.snapshots.append((0, initial))
    counts = list(initial.counts)
    ordered_pairs = n * (n - 1)
    satisfied = stop.checker(p, n)
    transitions = p.transitions
    uniforms = _Uniforms(rng)
    interactions = 0
    next_snapshot = n

    while True:
        if satisfied(counts):
            trace.stopped = True
            break
        weights = _pair_weights(p, counts) if ordered_pairs else []
        total_weight = sum(weights)
        if total_weight == 0:
            interactions = cap
            trace.timed_out = stop.kind != 'cap'
            break

        success = total_weight / ordered_pairs
        if success >= 1.0:
            gap = 1
        else:
            gap = 1 + int(math.log(1.0 - uniforms.draw()) / math.log1p(-success))
        if interactions + gap > cap:
            interactions = cap
            trace.timed_out = stop.kind != 'cap'
            break
        interactions += gap

        target = uniforms.draw() * total_weight
        chosen = 0
        running = weights[0]
        while running <= target and chosen < len(weights) - 1:
            chosen += 1
            running += weights[chosen]
        while weights[chosen] == 0:
            chosen -= 1
        t = transitions[chosen]
        counts[t.r1] -= 1
        counts[t.r2] -= 1
        counts[t.p1] += 1
        counts[t.p2] += 1
        trace.indices.append(interactions)
        trace.transitions.append(chosen)

        if interactions >= next_snapshot:
            trace.snapshots.append((len(trace.indices), Configuration(tuple(counts))))
            next_snapshot = (interactions // n + 1) * n

    trace.interactions_total = interactions
    if trace.timed_out:
        logger.warning(f"Trial of {p.name} at n={n} hit the budget of {cap} interactions")
    return trace


def convergence_point(tr: Trace) -> Optional[int]:
    """
    Interaction index after which the leader count never changes in the trace

    Returns 0 for a constant leader count, and None when the last change is at
    the very end of a trace that was cut off rather than stopped.
    A stopped trace may converge on its final interaction.
    """
    p = tr.protocol
    current = leader_count(p, tr.initial)
    last_change = 0
    for index, t, _ in tr.steps():
        change = sum(t.net_change(s) for s in p.leader_set)
        if change:
            current += change
            last_change = index
    if last_change and last_change == tr.interactions_total and not tr.stopped:
        return None
    return last_change


def density_hit(tr: Trace, beta: float) -> Optional[int]:
    """First interaction index at which every state has count >= beta * n, else None."""
    if not 0 < beta <= 1:
        raise SchedulerError(f"density threshold must be in (0, 1], got {beta}")
    threshold = beta * tr.n
    for index, c in tr.configurations():
        if min(c.counts) >= threshold:
            return index
    return None


def density_profile(tr: Trace) -> float:
    """Largest beta such that some configuration of the trace is beta-dense."""
    if tr.n == 0:
        return 0.0
    counts = np.array(tr.initial.counts, dtype=np.int64)
    best = counts.min()
    if tr.transitions:
        effects = tr.protocol.effects[np.array(tr.transitions)]
        walk = counts + np.cumsum(effects, axis=0)
        best = max(best, walk.min(axis=1).max())
    return float(best) / tr.n


def summarize_trial(tr: Trace, seed: int, trial: int,
                    speed_fault: Optional[Transition] = None,
                    measure_density: bool = False) -> TrialResult:
    """Reduce a trace to its CSV row."""
    return TrialResult(
        protocol=tr.protocol.name,
        n=tr.n,
        seed=seed,
        trial=trial,
        stop_kind=tr.stop_kind,
        interactions=tr.interactions_total,
        parallel_time=tr.parallel_time,
        converged_at=convergence_point(tr),
        timed_out=tr.timed_out,
        firings=tr.count_firings(speed_fault) if speed_fault is not None else 0,
        max_density=density_profile(tr) if measure_density else 0.0,
    )


def _trial_worker(args: Dict[str, Any]) -> TrialResult:
    """Module-level worker so trials can run in a process pool."""
    rng = trial_rng(args['seed'], args['trial'])
    trace = run_trial(args['protocol'], args['n'], args['stop'], rng, cap=args['cap'])
    result = summarize_trial(trace, args['seed'], args['trial'],
                             speed_fault=args['speed_fault'],
                             measure_density=args['measure_density'])
    logger.debug(f"Trial {args['trial']}: {result.interactions} interactions, "
                 f"timed_out={result.timed_out}")
    return result


def run_trials(p: Protocol, n: int, trials: int, stop: StopCondition, seed: int,
               cap: Optional[int] = None, threads: Optional[int] = None,
               speed_fault: Optional[Transition] = None,
               measure_density: bool = False) -> List[TrialResult]:
    """
    Run seeded independent trials, sequentially or in a process pool

    Results are ordered by trial index and do not depend on ``threads``.
    """
    if trials < 1:
        raise SchedulerError(f"need at least one trial, got {trials}")
    stop.validate(p, n)
    if cap is None:
        cap = get_config().default_cap(n)
    threads = threads or get_config().THREADS

    worker_args = [
        {
            'protocol': p, 'n': n, 'stop': stop, 'cap': cap, 'seed': seed, 'trial': trial,
            'speed_fault': speed_fault, 'measure_density': measure_density,
        }
        for trial in range(trials)
    ]
    if threads > 1 and trials > 1:
        logger.info(f"Running {trials} trials of {p.name} at n={n} on {threads} workers")
        with multiprocessing.Pool(min(threads, trials)) as pool:
            return pool.map(_trial_worker, worker_args)
    logger.info(f"Running {trials} trials of {p.name} at n={n}")
    return [_trial_worker(args) for args in worker_args]


def aggregate(results: List[TrialResult]) -> TimeEstimate:
    """Fold trial results into a TimeEstimate (timeouts excluded from the mean)."""
    times = [r.parallel_time for r in results if not r.timed_out]
    timeouts = len(results) - len(times)
    if times:
        mean = float(np.mean(times))
        std_error = float(np.std(times, ddof=1) / math.sqrt(len(times))) if len(times) > 1 else 0.0
    else:
        mean, std_error = float('nan'), float('nan')
    return TimeEstimate(
        trials=len(results),
        mean_parallel_time=mean,
        std_error=std_error,
        per_trial_times=times,
        timeouts=timeouts,
        results=results,
    )


def estimate_time(p: Protocol, n: int, trials: int, stop: StopCondition, seed: int,
                  cap: Optional[int] = None, threads: Optional[int] = None,
                  speed_fault: Optional[Transition] = None) -> TimeEstimate:
    """
    Estimate the expected parallel time to reach the stop condition

    Args:
        p: Protocol
        n: Population size
        trials: Number of independent trials, at least 1
        stop: Stop condition
        seed: Batch seed; trial i uses substream (seed, i)
        cap: Interaction budget per trial
        threads: Worker processes (defaults to POPKIT_THREADS)
        speed_fault: Transition whose firings are counted per trial

    Returns:
        TimeEstimate: Mean, standard error and timeout count
    """
    results = run_trials(p, n, trials, stop, seed, cap=cap, threads=threads, speed_fault=speed_fault)
    estimate = aggregate(results)
    logger.info(f"{p.name} n={n}: mean parallel time {estimate.mean_parallel_time:.4f} "
                f"+/- {estimate.std_error:.4f} over {trials} trials ({estimate.timeouts} timeouts)")
    return estimate
