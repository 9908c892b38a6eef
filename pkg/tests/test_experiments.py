"""
Tests for scaling fits and experiment orchestration
"""
import math

import pandas as pd
import pytest

from experiments import (
    ExperimentError, ExperimentSpec, fit_trials, gnuplot_script, run_experiment, scaling_fit,
)
from scheduler import StopCondition
from utils.builtins import predicate_for, speed_fault_transition
from utils.csv_utils import EXPERIMENT_COLUMNS, FIT_COLUMNS, CSVError


def simple_spec(p, n_values, trials=50, **kwargs):
    return ExperimentSpec(protocol=p, n_values=n_values, trials=trials, seed=3,
                          stop=StopCondition.on_predicate(predicate_for('simple')), **kwargs)


@pytest.mark.parametrize('exponent', [1.0, 0.5])
def test_fit_exact_power_law(exponent):
    """Test that exact power laws give their exponent."""
    points = [(n, n ** exponent) for n in (16, 64, 256, 1024)]
    fit = scaling_fit(points)
    assert fit.slope == pytest.approx(exponent, abs=1e-9)
    assert fit.residual == pytest.approx(0.0, abs=1e-18)
    assert fit.predict(4096) == pytest.approx(4096 ** exponent)


def test_fit_log_factor():
    """Test that a sqrt(n) ln n law fits a slope between 0.55 and 0.65."""
    points = [(2 ** k, math.sqrt(2 ** k) * math.log(2 ** k)) for k in range(12, 17)]
    fit = scaling_fit(points)
    assert 0.55 <= fit.slope <= 0.65
    assert fit.slope_low <= fit.slope <= fit.slope_high
    assert fit.residual > 0


@pytest.mark.parametrize('points', [
    [(16, 1.0), (64, 2.0)],
    [(16, 1.0), (16, 2.0), (64, 3.0)],
    [(16, 1.0), (64, 0.0), (256, 3.0)],
    [(16, 1.0), (64, float('nan')), (256, 3.0)],
])
def test_fit_rejects_bad_points(points):
    with pytest.raises(ExperimentError):
        scaling_fit(points)


def test_run_experiment_simple(simple):
    """Test a small simple experiment: fit, raw data and growth ratios."""
    result = run_experiment(simple_spec(simple, [8, 16, 32]))
    assert result.fit is not None
    assert 0.8 <= result.fit.slope <= 1.5
    assert len(result.fit.points) == 3
    assert all(result.estimates[n].trials == 50 for n in (8, 16, 32))
    assert all(ratio > 1 for ratio in result.growth_ratios())
    frame = result.to_frame()
    assert list(frame.columns) == EXPERIMENT_COLUMNS
    assert list(frame['n']) == [8, 16, 32]
    assert math.isnan(frame['speed_fault_rate'][0])


def test_run_experiment_two_points(simple):
    result = run_experiment(simple_spec(simple, [8, 16]))
    assert result.fit is None
    assert len(result.growth_ratios()) == 1


def test_experiment_fails_on_timeouts(simple):
    """Test that budget exhaustion fails the experiment with a report attached."""
    with pytest.raises(ExperimentError) as exc_info:
        run_experiment(simple_spec(simple, [8, 64], trials=10, cap=100))
    report = exc_info.value.report
    assert report is not None
    assert list(report['n']) == [8, 64]
    assert report['timeouts'][1] == 10


def test_speed_faults_and_gaps(example1):
    """Test speed-fault rates and convergence/stabilization gaps for example1."""
    spec = ExperimentSpec(
        protocol=example1, n_values=[256], trials=30, seed=4,
        stop=StopCondition.on_predicate(predicate_for('example1')),
        speed_fault=speed_fault_transition('example1'),
    )
    result = run_experiment(spec)
    rate = result.speed_fault_rates[256]
    assert 0 <= rate <= 1
    gap = result.gaps[256]
    assert gap.trials == round(30 * (1 - rate))
    assert gap.strictly_before == gap.trials
    assert gap.mean_gap > 0


def test_density_measurement(dense):
    spec = ExperimentSpec(protocol=dense, n_values=[40], trials=5, seed=1,
                          stop=StopCondition.on_density(0.2), measure_density=True)
    result = run_experiment(spec)
    assert result.densities[40] >= 0.2


def test_gnuplot_script(simple):
    result = run_experiment(simple_spec(simple, [8, 16, 32], trials=20))
    script = gnuplot_script(result, 'simple.csv')
    assert "set logscale xy" in script
    assert "plot 'simple.csv' using 2:4:5" in script
    assert "fit_line(x)" in script


@pytest.mark.slow
def test_simple_scales_linearly(simple):
    result = run_experiment(simple_spec(simple, [2 ** k for k in range(7, 13)], trials=500))
    assert 0.9 <= result.fit.slope <= 1.1


@pytest.mark.slow
def test_example1_scales_sublinearly(example1):
    """Test slope and growth ratios of example1 over n = 2^12, 2^14, 2^16."""
    spec = ExperimentSpec(
        protocol=example1, n_values=[2 ** 12, 2 ** 14, 2 ** 16], trials=300, seed=7,
        stop=StopCondition.on_predicate(predicate_for('example1')),
    )
    result = run_experiment(spec)
    assert 0.45 <= result.fit.slope <= 0.7
    assert all(ratio < 4 for ratio in result.growth_ratios())


@pytest.mark.slow
def test_example1_speed_faults_decay(example1):
    spec = ExperimentSpec(
        protocol=example1, n_values=[2 ** 12, 2 ** 14, 2 ** 16], trials=1000, seed=11,
        stop=StopCondition.on_predicate(predicate_for('example1')),
        speed_fault=speed_fault_transition('example1'),
    )
    result = run_experiment(spec)
    rates = [result.speed_fault_rates[n] for n in spec.n_values]
    assert rates[0] > rates[1] > rates[2]
    assert rates[2] <= 0.05


@pytest.mark.slow
def test_example1_converges_before_stabilizing(example1):
    """Test that fault-free example1 runs at n = 2^14 converge strictly before they stabilize."""
    n = 2 ** 14
    spec = ExperimentSpec(
        protocol=example1, n_values=[n], trials=200, seed=13,
        stop=StopCondition.on_predicate(predicate_for('example1')),
        speed_fault=speed_fault_transition('example1'),
    )
    gap = run_experiment(spec).gaps[n]
    assert gap.trials > 0
    assert gap.fraction >= 0.99
    assert gap.mean_gap > 0


def trial_rows(rows):
    return pd.DataFrame(
        [{'protocol': protocol, 'n': n, 'parallel_time': time, 'timed_out': timed_out}
         for protocol, n, time, timed_out in rows])


def test_fit_trials():
    """Test the per-n summary and the refit from saved trial rows."""
    frame = trial_rows([
        ('simple', 8, 7.0, False), ('simple', 8, 9.0, False),
        ('simple', 16, 15.0, False), ('simple', 16, 17.0, False),
        ('simple', 32, 31.0, False), ('simple', 32, 33.0, False), ('simple', 32, 100.0, True),
    ])
    summary, fit = fit_trials(frame)
    assert list(summary.columns) == FIT_COLUMNS
    assert list(summary['n']) == [8, 16, 32]
    assert list(summary['trials']) == [2, 2, 2]
    assert list(summary['timeouts']) == [0, 0, 1]
    assert list(summary['mean_parallel_time']) == [8.0, 16.0, 32.0]
    assert summary['std_error'][0] == pytest.approx(1.0)
    assert fit.slope == pytest.approx(1.0)


def test_fit_trials_two_sizes():
    summary, fit = fit_trials(trial_rows([('simple', 8, 7.0, False), ('simple', 16, 15.0, False)]))
    assert len(summary) == 2
    assert fit is None


@pytest.mark.parametrize('rows', [
    [],
    [('simple', 8, 7.0, False), ('broken', 16, 15.0, False)],
    [('simple', 8, 7.0, False), ('simple', 16, 200.0, True)],
])
def test_fit_trials_rejects(rows):
    frame = trial_rows(rows) if rows else pd.DataFrame(columns=['protocol', 'n', 'parallel_time', 'timed_out'])
    with pytest.raises(ExperimentError):
        fit_trials(frame)


def test_fit_trials_missing_columns():
    with pytest.raises(CSVError) as exc_info:
        fit_trials(pd.DataFrame({'n': [8], 'parallel_time': [7.0]}))
    assert "protocol" in str(exc_info.value)


def test_experiment_notes_rounded_grid_points(example1):
    """Test that grid points off the fourth powers are reported."""
    spec = ExperimentSpec(protocol=example1, n_values=[16, 100], trials=5, seed=1,
                          stop=StopCondition.on_predicate(predicate_for('example1')))
    assert run_experiment(spec).rounded_n == [100]
