"""
bottleneck, order and surgery: analyses of recorded or hand-written paths.
"""
import logging
from pathlib import Path

import click
import pandas as pd

from path_analysis import (
    PathAnalysisError, ThresholdParams, adjust_surgery, all_paths_bottlenecked,
    append_surgery, bottleneck_lower_bound, double_surgery, find_bottlenecks, load_path,
    transition_ordering,
)
from protocol import parse_configuration
from reachability import explore, stable_leader_set
from tools.cli_utils import (
    handle_errors, initial_configuration, load_protocol_ref, node_cap_option, out_option,
    protocol_option, report,
)
from utils.csv_utils import write_frame

logger = logging.getLogger(__name__)

SURGERY_KINDS = ('append', 'adjust', 'double')


def _load_window(p, path):
    # An invalid path is a bad input file, not a failed analysis
    try:
        return load_path(p, Path(path))
    except PathAnalysisError as e:
        raise click.UsageError(f"{path}: {str(e)}")


def _emit_text(text: str, out) -> None:
    if out is None:
        click.echo(text, nl=False)
        return
    Path(out).write_text(text, encoding='utf-8')
    logger.info(f"Wrote {out}")


def threshold_options(f):
    f = click.option('--b2', type=click.IntRange(min=1), required=True,
                     help='Count every collapsing state starts at or above')(f)
    return click.option('--b1', type=click.IntRange(min=0), required=True,
                        help='Count every collapsing state ends at or below')(f)


@click.command()
@protocol_option
@click.option('--path', 'path_file', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Path file to scan')
@click.option('--n', type=click.IntRange(min=2), default=None,
              help='Check every path from the initial configuration instead')
@click.option('--b', type=click.IntRange(min=1), required=True, help='Bottleneck count')
@node_cap_option
@out_option('Bottleneck CSV (default stdout)')
@handle_errors
def bottleneck(protocol_ref, path_file, n, b, node_cap, out):
    """List b-bottleneck steps of a path, or check all paths to a stable leader."""
    p, builtin = load_protocol_ref(protocol_ref)
    if (path_file is None) == (n is None):
        raise click.UsageError("give exactly one of --path and --n")

    if n is not None:
        root = initial_configuration(p, builtin, n, None)
        graph = explore(p, root, node_cap=node_cap)
        target = stable_leader_set(graph)
        if not target:
            message = f"no stable leader configuration reachable from {root.format(p.states)}"
            logger.error(message)
            raise click.ClickException(message)
        forced = all_paths_bottlenecked(graph, target, b)
        click.echo(f"all_paths_bottlenecked={'true' if forced else 'false'}")
        if forced:
            report(f"every path to a stable leader at n={n} takes at least "
                   f"{bottleneck_lower_bound(b, p.state_count, n):.6g} expected parallel time",
                   to_stderr=True)
        return

    window = _load_window(p, path_file)
    found = find_bottlenecks(window, b)
    configurations = window.configurations()
    df = pd.DataFrame(
        [{'position': position,
          'transition': t.label(p.states),
          'count_first': configurations[position][t.r1],
          'count_second': configurations[position][t.r2]}
         for position, t in found],
        columns=['position', 'transition', 'count_first', 'count_second'],
    )
    write_frame(df, out)
    summary = f"{len(found)} {b}-bottleneck steps in {len(window)} transitions"
    if found:
        summary += (f"; a path through one takes at least "
                    f"{bottleneck_lower_bound(b, p.state_count, window.start.n):.6g} expected parallel time")
    report(summary, to_stderr=out is None)


@click.command()
@protocol_option
@click.option('--path', 'path_file', type=click.Path(exists=True, dir_okay=False), required=True)
@threshold_options
@out_option('Ordering text (default stdout)')
@handle_errors
def order(protocol_ref, path_file, b1, b2, out):
    """Order the collapsing states of a path with their draining transitions."""
    p, _ = load_protocol_ref(protocol_ref)
    window = _load_window(p, path_file)
    ordering = transition_ordering(window, ThresholdParams(b1, b2))
    _emit_text(ordering.format(p.states), out)
    report(f"{len(ordering)} collapsing states; every ordering transition occurs at least "
           f"{ordering.thresholds.occurrence_bound(p.state_count):.4g} times", to_stderr=out is None)


@click.command()
@protocol_option
@click.option('--path', 'path_file', type=click.Path(exists=True, dir_okay=False), required=True)
@threshold_options
@click.option('--kind', type=click.Choice(SURGERY_KINDS), default='append', show_default=True)
@click.option('--target', 'target_text', default=None, metavar='{COUNT STATE, ...}',
              help='Counts to leave behind (adjust only)')
@out_option('Plan text (default stdout)')
@handle_errors
def surgery(protocol_ref, path_file, b1, b2, kind, target_text, out):
    """Build an append, adjust or double surgery plan for a path."""
    p, _ = load_protocol_ref(protocol_ref)
    if (kind == 'adjust') != (target_text is not None):
        raise click.UsageError("--target is required with --kind adjust and only allowed there")
    window = _load_window(p, path_file)
    ordering = transition_ordering(window, ThresholdParams(b1, b2))
    if kind == 'append':
        plan = append_surgery(window, ordering)
    elif kind == 'adjust':
        plan = adjust_surgery(window, ordering, parse_configuration(p, target_text))
    else:
        plan = double_surgery(window, ordering)
    _emit_text(plan.format(), out)
    report(f"{kind} surgery: {len(plan.transitions)} transitions from {plan.start.format(p.states)} "
           f"to {plan.final.format(p.states)}", to_stderr=out is None)
