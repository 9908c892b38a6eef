"""
exact and verify: computations on the complete reachability graph.
"""
import logging
import math
from pathlib import Path

import click

from reachability import (
    check_stable_election, exact_expected_time, explore, export_graph, reach_probability,
    stable_leader_set,
)
from tools.cli_utils import (
    N_GRID, handle_errors, initial_configuration, load_protocol_ref, node_cap_option,
    protocol_option, report,
)

logger = logging.getLogger(__name__)


def _describe_range(values):
    if len(values) > 1 and values == list(range(values[0], values[-1] + 1)):
        return f"{values[0]}..{values[-1]}"
    return ', '.join(str(n) for n in values)


@click.command()
@protocol_option
@click.option('--n', type=click.IntRange(min=1), default=None, help='Population size')
@click.option('--root', 'root_text', default=None, metavar='{COUNT STATE, ...}',
              help='Start configuration instead of the initial one')
@node_cap_option
@click.option('--export', 'export_path', type=click.Path(dir_okay=False, writable=True), default=None,
              help='Write the reachability graph as adjacency text')
@handle_errors
def exact(protocol_ref, n, root_text, node_cap, export_path):
    """Print the exact expected parallel time to a stable leader."""
    p, builtin = load_protocol_ref(protocol_ref)
    root = initial_configuration(p, builtin, n, root_text)
    graph = explore(p, root, node_cap=node_cap)
    target = stable_leader_set(graph)
    times = exact_expected_time(graph, target)
    value = float(times[graph.node_index(root)])

    if export_path is not None:
        Path(export_path).write_text(export_graph(graph), encoding='utf-8')
        logger.info(f"Wrote reachability graph to {export_path}")

    click.echo('inf' if math.isinf(value) else f"{value:.6f}")
    report(f"{p.name} from {root.format(p.states)}: {len(graph)} configurations, "
           f"{len(target)} with a stable leader", to_stderr=True)
    if math.isinf(value):
        logger.warning(f"{p.name} from {root.format(p.states)} can fail to reach a stable leader")


@click.command()
@protocol_option
@click.option('--n', 'n_values', type=N_GRID, default=None, help='Population size: N, A..B, A..B:STEP or A..BxK')
@click.option('--root', 'root_text', default=None, metavar='{COUNT STATE, ...}',
              help='Verify from this configuration only')
@node_cap_option
@handle_errors
def verify(protocol_ref, n_values, root_text, node_cap):
    """Check that a stable leader stays reachable; exit 1 with a witness if not."""
    p, builtin = load_protocol_ref(protocol_ref)
    if root_text is not None and n_values is not None and len(n_values) > 1:
        raise click.UsageError("--root takes a single --n")
    sizes = n_values if n_values is not None else [None]

    verified = []
    failed = False
    for n in sizes:
        root = initial_configuration(p, builtin, n, root_text)
        graph = explore(p, root, node_cap=node_cap)
        verdict = check_stable_election(graph, p)
        line = (f"n={verdict.n} root={root.format(p.states)} nodes={len(graph)} "
                f"def2_holds={'true' if verdict.def2_holds else 'false'}")
        if not verdict.def2_holds:
            success = reach_probability(graph, verdict.stable_leader_nodes)[graph.node_index(root)]
            line += (f" failing={verdict.failing_nodes} witness={verdict.witness.format(p.states)}"
                     f" stable_leader_probability={success:.6f}")
            failed = True
        else:
            verified.append(verdict.n)
        click.echo(line)

    if verified:
        click.echo(f"verified n: {_describe_range(verified)}")
    if failed:
        report(f"{p.name}: stable leader election fails", to_stderr=True)
        click.get_current_context().exit(1)
