"""
Shared option parsing and error handling for the command families.
"""
import functools
import logging
import re
from typing import Callable, List, Optional, Tuple

import click

from experiments import ExperimentError
from path_analysis import PathAnalysisError
from protocol import Configuration, Protocol, ProtocolError, eval_init, parse_configuration
from reachability import ReachabilityError, explore, stable_leader_set
from scheduler import SchedulerError, StopCondition
from utils.builtins import BuiltinProtocol, minimum_n, predicate_for, resolve_protocol
from utils.csv_utils import CSVError
from utils.rng import MAX_SEED

logger = logging.getLogger(__name__)

_N_VALUE = re.compile(r"^\d+$")
_N_RANGE = re.compile(r"^(\d+)\.\.(\d+)(?::(\d+)|:?x(\d+))?$")

# Errors in what the user handed us: exit status 2
INPUT_ERRORS = (ProtocolError, CSVError, OSError)
# Errors raised while doing the work: exit status 1
RUN_ERRORS = (SchedulerError, ReachabilityError, PathAnalysisError, ExperimentError)


def parse_n_grid(text: str) -> List[int]:
    """
    Parse a population size or a range of them

    Accepted forms: ``N``, ``A..B`` (step 1), ``A..B:STEP`` and ``A..BxK``
    (geometric, also written ``A..B:xK``). Ranges include both ends when the
    progression lands on B.

    Raises:
        ValueError: On malformed text, an empty range or a size below 1
    """
    text = text.strip()
    if _N_VALUE.match(text):
        values = [int(text)]
    else:
        match = _N_RANGE.match(text)
        if match is None:
            raise ValueError(f"expected N, A..B, A..B:STEP or A..BxK, got {text!r}")
        low, high = int(match.group(1)), int(match.group(2))
        if low > high:
            raise ValueError(f"empty range {text!r}")
        if match.group(4) is not None:
            factor = int(match.group(4))
            if factor < 2:
                raise ValueError(f"range factor must be at least 2, got {factor}")
            if low < 1:
                raise ValueError("a geometric range must start at 1 or more")
            values = []
            value = low
            while value <= high:
                values.append(value)
                value *= factor
        else:
            step = int(match.group(3) or 1)
            if step < 1:
                raise ValueError(f"range step must be at least 1, got {step}")
            values = list(range(low, high + 1, step))
    if min(values) < 1:
        raise ValueError("population sizes must be at least 1")
    return values


class NGridType(click.ParamType):
    """click type for ``--n``."""
    name = 'n'

    def convert(self, value, param, ctx):
        if isinstance(value, list):
            return value
        try:
            return parse_n_grid(str(value))
        except ValueError as e:
            self.fail(str(e), param, ctx)


N_GRID = NGridType()


def protocol_option(f: Callable) -> Callable:
    return click.option('--protocol', 'protocol_ref', required=True, metavar='builtin:NAME|PATH',
                        help='Built-in protocol name or protocol file')(f)


def n_option(required: bool = True) -> Callable:
    return click.option('--n', 'n_values', type=N_GRID, required=required,
                        help='Population size: N, A..B, A..B:STEP or A..BxK')


def seed_option(f: Callable) -> Callable:
    return click.option('--seed', type=click.IntRange(0, MAX_SEED), default=0, show_default=True,
                        help='Batch seed; trial i uses substream (seed, i)')(f)


def trials_option(f: Callable) -> Callable:
    return click.option('--trials', type=click.IntRange(min=1), default=100, show_default=True,
                        help='Independent trials per population size')(f)


def stop_option(f: Callable) -> Callable:
    return click.option('--stop', 'stop_text', default=None,
                        metavar='predicate[:NAME]|membership|density:BETA|cap',
                        help='When a trial ends (default: the built-in predicate, else membership)')(f)


def cap_option(f: Callable) -> Callable:
    return click.option('--cap', type=click.IntRange(min=0), default=None,
                        help='Interaction budget per trial (default CAP_FACTOR * n^2)')(f)


def threads_option(f: Callable) -> Callable:
    return click.option('--threads', type=click.IntRange(min=1), default=None,
                        help='Worker processes (default POPKIT_THREADS)')(f)


def out_option(help_text: str) -> Callable:
    return click.option('--out', type=click.Path(dir_okay=False, writable=True), default=None,
                        help=help_text)


def node_cap_option(f: Callable) -> Callable:
    return click.option('--node-cap', type=click.IntRange(min=1), default=None,
                        help='Largest reachability graph explored (default POPKIT_NODE_CAP)')(f)


def load_protocol_ref(reference: str) -> Tuple[Protocol, Optional[BuiltinProtocol]]:
    protocol, builtin = resolve_protocol(reference)
    logger.debug(f"Resolved {reference} to {protocol.name} with {protocol.state_count} states")
    return protocol, builtin


def check_population(p: Protocol, builtin: Optional[BuiltinProtocol], n: int, interacting: bool = True) -> None:
    """
    Reject population sizes the protocol's initial configuration cannot serve

    Raises:
        click.UsageError: If n is below 2 for a run that needs interactions,
            or below the least n meeting the built-in's intended minimums
    """
    if interacting and n < 2:
        raise click.UsageError(f"population size must be at least 2, got {n}")
    if builtin is not None and builtin.minimums:
        least = minimum_n(p, builtin.minimums)
        if n < least:
            wanted = ', '.join(f"{state} >= {count}" for state, count in builtin.minimums.items())
            raise click.UsageError(f"{p.name} needs n >= {least} so that {wanted}; got n={n}")
    eval_init(p, n)


def initial_configuration(p: Protocol, builtin: Optional[BuiltinProtocol], n: Optional[int],
                          root_text: Optional[str]) -> Configuration:
    """The root given by ``--root``, or the protocol's initial configuration at n."""
    if root_text is not None:
        root = parse_configuration(p, root_text)
        if n is not None and root.n != n:
            raise click.UsageError(f"--root has {root.n} agents but --n is {n}")
        return root
    if n is None:
        raise click.UsageError("give --n or --root")
    check_population(p, builtin, n, interacting=False)
    return eval_init(p, n)


def parse_stop(text: Optional[str], p: Protocol, builtin: Optional[BuiltinProtocol],
               n: Optional[int] = None, node_cap: Optional[int] = None) -> StopCondition:
    """
    Build the stop condition named on the command line

    ``membership`` explores the reachability graph of the initial
    configuration at n and stops on its stable-leader configurations.

    Raises:
        click.UsageError: On malformed text or a condition the run cannot use
    """
    if text is None:
        text = 'predicate' if builtin is not None and builtin.predicate is not None else 'membership'
    kind, _, argument = text.partition(':')
    if kind == 'predicate':
        name = argument or (builtin.name if builtin is not None else '')
        if not name:
            raise click.UsageError("a protocol file needs --stop predicate:NAME naming a built-in predicate")
        predicate = predicate_for(name)
        predicate.resolve(p)
        return StopCondition.on_predicate(predicate)
    if kind == 'density':
        try:
            beta = float(argument)
        except ValueError:
            raise click.UsageError(f"density threshold must be a number, got {argument!r}")
        if not 0 < beta <= 1:
            raise click.UsageError(f"density threshold must be in (0, 1], got {beta}")
        return StopCondition.on_density(beta)
    if kind == 'cap' and not argument:
        return StopCondition.at_cap()
    if kind == 'membership' and not argument:
        if n is None:
            raise click.UsageError("membership stop needs a single population size")
        graph = explore(p, eval_init(p, n), node_cap=node_cap)
        target = stable_leader_set(graph)
        logger.info(f"Membership stop: {len(target)} of {len(graph)} configurations at n={n}")
        return StopCondition.on_membership(graph, target)
    raise click.UsageError(f"unknown stop condition {text!r}")


def report(message: str, to_stderr: bool) -> None:
    """Human summary; kept off stdout while stdout carries data."""
    click.echo(message, err=to_stderr)


def handle_errors(f: Callable) -> Callable:
    """
    Map module errors onto exit statuses

    Input and parse errors exit 2, run errors exit 1; both print the message.
    """
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except click.ClickException:
            raise
        except INPUT_ERRORS as e:
            logger.error(f"{f.__name__}: {str(e)}")
            raise click.UsageError(str(e))
        except RUN_ERRORS as e:
            logger.error(f"{f.__name__}: {str(e)}")
            raise click.ClickException(str(e))
    return wrapper
