"""
simulate, experiment and fit: Monte-Carlo runs and scaling experiments.
"""
import logging
from pathlib import Path

import click
import pandas as pd

from experiments import ExperimentError, ExperimentSpec, fit_trials, gnuplot_script, run_experiment
from scheduler import estimate_time
from tools.cli_utils import (
    cap_option, check_population, handle_errors, load_protocol_ref, n_option, out_option,
    parse_stop, protocol_option, report, seed_option, stop_option, threads_option, trials_option,
)
from utils.builtins import speed_fault_transition
from utils.csv_utils import read_results, trial_frame, write_frame

logger = logging.getLogger(__name__)


@click.command()
@protocol_option
@n_option()
@trials_option
@seed_option
@stop_option
@cap_option
@threads_option
@out_option('Per-trial CSV (default stdout)')
@handle_errors
def simulate(protocol_ref, n_values, trials, seed, stop_text, cap, threads, out):
    """Run seeded trials and write one CSV row per trial."""
    p, builtin = load_protocol_ref(protocol_ref)
    speed_fault = speed_fault_transition(builtin.name) if builtin is not None else None
    for n in n_values:
        check_population(p, builtin, n)

    frames = []
    summaries = []
    for n in n_values:
        stop = parse_stop(stop_text, p, builtin, n)
        estimate = estimate_time(p, n, trials, stop, seed, cap=cap, threads=threads, speed_fault=speed_fault)
        frames.append(trial_frame(estimate.results))
        summary = (f"{p.name} n={n} stop={stop.label}: mean parallel time "
                   f"{estimate.mean_parallel_time:.6f} +/- {estimate.std_error:.6f} "
                   f"over {estimate.trials} trials, {estimate.timeouts} timeouts")
        if speed_fault is not None:
            faults = sum(r.speed_fault for r in estimate.results)
            summary += f", {faults} speed faults"
        summaries.append(summary)

    write_frame(pd.concat(frames, ignore_index=True), out)
    for summary in summaries:
        report(summary, to_stderr=out is None)


@click.command()
@protocol_option
@n_option()
@trials_option
@seed_option
@stop_option
@cap_option
@threads_option
@click.option('--density', 'measure_density', is_flag=True,
              help='Record the largest fraction every state held at once')
@out_option('Summary CSV; a gnuplot script is written next to it as <out>.gp')
@handle_errors
def experiment(protocol_ref, n_values, trials, seed, stop_text, cap, threads, measure_density, out):
    """Estimate time over a grid of n and fit the log-log slope."""
    p, builtin = load_protocol_ref(protocol_ref)
    for n in n_values:
        check_population(p, builtin, n)
    single_n = n_values[0] if len(n_values) == 1 else None
    stop = parse_stop(stop_text, p, builtin, single_n)

    spec = ExperimentSpec(
        protocol=p,
        n_values=n_values,
        trials=trials,
        seed=seed,
        stop=stop,
        cap=cap,
        threads=threads,
        speed_fault=speed_fault_transition(builtin.name) if builtin is not None else None,
        measure_density=measure_density,
    )
    try:
        result = run_experiment(spec)
    except ExperimentError as e:
        if e.report is not None:
            write_frame(e.report, out)
        raise

    write_frame(result.to_frame(), out)
    to_stderr = out is None
    if out is not None:
        script = Path(f"{out}.gp")
        script.write_text(gnuplot_script(result, Path(out).name), encoding='utf-8')
        logger.info(f"Wrote gnuplot script {script}")

    for n in result.n_values:
        estimate = result.estimates[n]
        report(f"n={n}: {estimate.mean_parallel_time:.6f} +/- {estimate.std_error:.6f}", to_stderr)
    if result.fit is not None:
        line = result.fit
        report(f"slope {line.slope:.4f} (95% CI {line.slope_low:.4f} .. {line.slope_high:.4f}), "
               f"residual {line.residual:.3g}", to_stderr)
    ratios = result.growth_ratios()
    if ratios:
        report("growth ratios: " + ' '.join(f"{ratio:.3f}" for ratio in ratios), to_stderr)
    for n, rate in result.speed_fault_rates.items():
        report(f"n={n}: speed-fault rate {rate:.4f}", to_stderr)
    if result.rounded_n:
        report("init expressions round down at n = " + ', '.join(map(str, result.rounded_n)), to_stderr)


@click.command()
@click.argument('trial_files', nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@out_option('Per-n summary CSV (default stdout)')
@handle_errors
def fit(trial_files, out):
    """Refit the log-log slope from per-trial CSV files written by simulate."""
    frame = pd.concat([read_results(path) for path in trial_files], ignore_index=True)
    summary, scaling = fit_trials(frame)
    write_frame(summary, out)

    to_stderr = out is None
    if scaling is None:
        report(f"{len(summary)} population sizes; a slope needs at least 3", to_stderr)
        return
    report(f"slope {scaling.slope:.4f} (95% CI {scaling.slope_low:.4f} .. {scaling.slope_high:.4f}), "
           f"residual {scaling.residual:.3g}", to_stderr)
