"""
Scaling experiments: time estimates over a grid of population sizes,
log-log fits, speed-fault frequencies and convergence/stabilization gaps.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from protocol import Protocol, Transition
from scheduler import StopCondition, TimeEstimate, aggregate, run_trials
from utils.csv_utils import FIT_COLUMNS, require_columns

logger = logging.getLogger(__name__)

# Largest tolerated share of trials hitting the budget at any n
MAX_TIMEOUT_RATE = 0.01


class ExperimentError(Exception):
    """Raised when an experiment cannot produce trustworthy results"""

    def __init__(self, message: str, report: Optional[pd.DataFrame] = None):
        self.report = report
        super().__init__(message)


@dataclass
class ScalingFit:
    """Least-squares line through (log n, log time)."""
    slope: float
    intercept: float
    residual: float
    slope_low: float
    slope_high: float
    points: List[Tuple[float, float]] = field(default_factory=list)

    def predict(self, n: float) -> float:
        return math.exp(self.intercept) * n ** self.slope


@dataclass
class ExperimentSpec:
    """What to run: protocol, n grid, trials per n, seed and stop condition."""
    protocol: Protocol
    n_values: Sequence[int]
    trials: int
    seed: int
    stop: StopCondition
    cap: Optional[int] = None
    threads: Optional[int] = None
    speed_fault: Optional[Transition] = None
    measure_density: bool = False


@dataclass
class GapStats:
    """How often convergence strictly precedes stabilization, and by how much."""
    trials: int = 0
    strictly_before: int = 0
    mean_gap: float = float('nan')

    @property
    def fraction(self) -> float:
        return self.strictly_before / self.trials if self.trials else float('nan')


@dataclass
class ExperimentResult:
    """Per-n estimates with their fit; the raw data is always kept with the slope."""
    protocol: str
    n_values: List[int]
    estimates: Dict[int, TimeEstimate]
    fit: Optional[ScalingFit]
    speed_fault_rates: Dict[int, float] = field(default_factory=dict)
    gaps: Dict[int, GapStats] = field(default_factory=dict)
    densities: Dict[int, float] = field(default_factory=dict)
    # Grid points where a floor(n^(a/b)) init term is truncated
    rounded_n: List[int] = field(default_factory=list)

    def growth_ratios(self) -> List[float]:
        """time(n_{j+1}) / time(n_j) over consecutive grid points."""
        times = [self.estimates[n].mean_parallel_time for n in self.n_values]
        return [later / earlier for earlier, later in zip(times, times[1:])]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for n in self.n_values:
            estimate = self.estimates[n]
            gap = self.gaps.get(n, GapStats())
            rows.append({
                'protocol': self.protocol,
                'n': n,
                'trials': estimate.trials,
                'mean_parallel_time': estimate.mean_parallel_time,
                'std_error': estimate.std_error,
                'timeouts': estimate.timeouts,
                'speed_fault_rate': self.speed_fault_rates.get(n, float('nan')),
                'converged_before_stable': gap.fraction,
                'mean_gap': gap.mean_gap,
                'max_density': self.densities.get(n, float('nan')),
            })
        return pd.DataFrame(rows)


def scaling_fit(points: Sequence[Tuple[float, float]]) -> ScalingFit:
    """
    Fit log(time) = slope * log(n) + intercept by ordinary least squares

    Args:
        points: (n, time) pairs, at least three with distinct n

    Returns:
        ScalingFit: Slope, intercept, residual sum of squares and a 95%
            confidence interval for the slope

    Raises:
        ExperimentError: On fewer than three points, repeated n or
            nonpositive values
    """
    if len(points) < 3:
        raise ExperimentError(f"scaling fit needs at least 3 points, got {len(points)}")
    ns = [n for n, _ in points]
    if len(set(ns)) != len(ns):
        raise ExperimentError("scaling fit needs distinct n values")
    if any(n <= 0 or time <= 0 or not math.isfinite(time) for n, time in points):
        raise ExperimentError("scaling fit needs positive finite n and time values")

    x = np.log(np.array(ns, dtype=float))
    y = np.log(np.array([time for _, time in points], dtype=float))
    line = stats.linregress(x, y)
    residual = float(np.sum((y - (line.slope * x + line.intercept)) ** 2))
    spread = stats.t.ppf(0.975, len(points) - 2) * line.stderr
    return ScalingFit(
        slope=float(line.slope),
        intercept=float(line.intercept),
        residual=residual,
        slope_low=float(line.slope - spread),
        slope_high=float(line.slope + spread),
        points=[(float(n), float(time)) for n, time in points],
    )


def fit_trials(frame: pd.DataFrame) -> Tuple[pd.DataFrame, Optional[ScalingFit]]:
    """
    Summarize saved per-trial rows by n and refit the scaling line

    Timed-out trials are counted but left out of the means.

    Args:
        frame: Rows in the per-trial CSV layout, possibly from several files

    Returns:
        Tuple of the per-n summary (FIT_COLUMNS) and the fit, None when
        fewer than three population sizes are present

    Raises:
        CSVError: If required columns are missing
        ExperimentError: On rows from several protocols or an n without a
            finished trial
    """
    require_columns(frame, ['protocol', 'n', 'parallel_time', 'timed_out'])
    if frame.empty:
        raise ExperimentError("no trial rows to fit")
    protocols = sorted(frame['protocol'].astype(str).unique())
    if len(protocols) != 1:
        raise ExperimentError(f"trial rows mix protocols: {', '.join(protocols)}")

    timed_out = frame['timed_out'].astype(str).str.lower() == 'true'
    finished = frame.loc[~timed_out]
    times = finished.groupby('n')['parallel_time']
    n_values = sorted(int(n) for n in frame['n'].unique())
    summary = pd.DataFrame({
        'trials': times.count(),
        'mean_parallel_time': times.mean(),
        'std_error': times.sem(),
        'timeouts': timed_out.groupby(frame['n']).sum(),
    }).reindex(n_values)

    empty = [n for n, count in summary['trials'].fillna(0).items() if count == 0]
    if empty:
        raise ExperimentError(f"no finished trials at n={', '.join(str(n) for n in empty)}")
    summary['trials'] = summary['trials'].astype(int)
    summary['timeouts'] = summary['timeouts'].astype(int)
    summary = summary.rename_axis('n').reset_index()
    summary.insert(0, 'protocol', protocols[0])

    fit = None
    if len(summary) >= 3:
        fit = scaling_fit(list(zip(summary['n'], summary['mean_parallel_time'])))
        logger.info(f"Refit {protocols[0]} over {len(summary)} sizes: slope {fit.slope:.4f}")
    return summary[FIT_COLUMNS], fit


def _gap_stats(estimate: TimeEstimate) -> GapStats:
    gaps = []
    before = 0
    for r in estimate.results:
        if r.timed_out or r.speed_fault or r.converged_at is None:
            continue
        gaps.append((r.interactions - r.converged_at) / r.n)
        if r.converged_at < r.interactions:
            before += 1
    return GapStats(
        trials=len(gaps),
        strictly_before=before,
        mean_gap=float(np.mean(gaps)) if gaps else float('nan'),
    )


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """
    Run estimate batches over the n grid and fit the scaling exponent

    Every n uses the same batch seed; trial i at each n draws from substream
    (seed, i).

    Raises:
        ExperimentError: If any n times out in more than 1% of its trials
    """
    p = spec.protocol
    estimates: Dict[int, TimeEstimate] = {}
    speed_faults: Dict[int, float] = {}
    gaps: Dict[int, GapStats] = {}
    densities: Dict[int, float] = {}

    rounded = [n for n in spec.n_values if any(e.rounds_at(n) for _, e in p.init_expr if not e.is_rest)]
    if rounded:
        logger.warning(f"{p.name}: init expressions round down at n = {rounded}; "
                       f"exact powers keep the candidate count on its curve")

    for n in spec.n_values:
        results = run_trials(p, n, spec.trials, spec.stop, spec.seed, cap=spec.cap, threads=spec.threads,
                             speed_fault=spec.speed_fault, measure_density=spec.measure_density)
        estimate = aggregate(results)
        estimates[n] = estimate
        gaps[n] = _gap_stats(estimate)
        if spec.speed_fault is not None:
            speed_faults[n] = sum(r.speed_fault for r in results) / len(results)
        if spec.measure_density:
            densities[n] = float(np.mean([r.max_density for r in results]))
        logger.info(f"{p.name} n={n}: time {estimate.mean_parallel_time:.4f} "
                    f"+/- {estimate.std_error:.4f}, {estimate.timeouts} timeouts")

    result = ExperimentResult(
        protocol=p.name,
        n_values=list(spec.n_values),
        estimates=estimates,
        fit=None,
        speed_fault_rates=speed_faults,
        gaps=gaps,
        densities=densities,
        rounded_n=rounded,
    )

    failing = [n for n in spec.n_values if estimates[n].timeout_rate > MAX_TIMEOUT_RATE]
    if failing:
        report = result.to_frame()
        logger.error(f"Timeout rate above {MAX_TIMEOUT_RATE:.0%} at n = {failing}")
        raise ExperimentError(
            f"timeout rate above {MAX_TIMEOUT_RATE:.0%} at n = {', '.join(map(str, failing))}", report)

    if len(spec.n_values) >= 3:
        result.fit = scaling_fit([(n, estimates[n].mean_parallel_time) for n in spec.n_values])
        logger.info(f"{p.name}: log-log slope {result.fit.slope:.4f} "
                    f"[{result.fit.slope_low:.4f}, {result.fit.slope_high:.4f}]")
    else:
        logger.info(f"{p.name}: fewer than 3 grid points, no slope fitted")
    return result


def gnuplot_script(result: ExperimentResult, csv_name: str) -> str:
    """gnuplot commands plotting mean time against n on log-log axes."""
    lines = [
        f"# {result.protocol}: mean parallel time against population size",
        "set datafile separator ','",
        "set logscale xy",
        "set xlabel 'n'",
        "set ylabel 'parallel time'",
        "set key top left",
    ]
    plot = (f"plot '{csv_name}' using 2:4:5 skip 1 with yerrorbars title '{result.protocol}'")
    if result.fit is not None:
        lines.append(f"fit_line(x) = exp({result.fit.intercept!r}) * x**{result.fit.slope!r}")
        plot += f", fit_line(x) title 'slope {result.fit.slope:.3f}'"
    lines.append(plot)
    return '\n'.join(lines) + '\n'
