"""
Tests for the scheduler: single steps, null-batched trials and trial batches
"""
import math

import numpy as np
import pytest

from protocol import Configuration, eval_init, parse_protocol
from reachability import exact_expected_time, explore, stable_leader_set
from scheduler import (
    PopulationTooSmallError, SchedulerError, StopCondition, StopConditionError, aggregate,
    convergence_point, density_hit, density_profile, estimate_time, run_trial, run_trials, step,
)
from utils.builtins import predicate_for, speed_fault_transition
from utils.rng import make_rng, trial_rng


@pytest.fixture
def leader_stop():
    return StopCondition.on_predicate(predicate_for('simple'))


def test_step_single_pair(simple):
    """Test that {2 l} always moves to {1 l, 1 f}."""
    rng = make_rng(1)
    for _ in range(20):
        after, t = step(Configuration((2, 0)), simple, rng)
        assert after == Configuration((1, 1))
        assert not t.is_null


def test_step_null_interaction(simple):
    """Test that a configuration without enabled transitions stays put."""
    c = Configuration((1, 1))
    after, t = step(c, simple, make_rng(2))
    assert after == c
    assert t.is_null


def test_step_needs_two_agents(simple):
    with pytest.raises(PopulationTooSmallError):
        step(Configuration((1, 0)), simple, make_rng(0))


def test_step_pair_frequencies():
    """Test that a,b -> b,b fires with probability 2*3*2/(5*4) from {3 a, 2 b}."""
    p = parse_protocol("states: a b\ninit: a = rest\nleader: a\ntransition: a b -> b b\n")
    rng = make_rng(12345)
    start = Configuration((3, 2))
    draws = 20000
    fired = sum(not step(start, p, rng)[1].is_null for _ in range(draws))
    expected = 0.6
    sigma = math.sqrt(expected * (1 - expected) / draws)
    assert abs(fired / draws - expected) <= 3 * sigma


def test_two_agents_take_one_interaction(simple, leader_stop):
    """Test the one-interaction chain at n=2."""
    trace = run_trial(simple, 2, leader_stop, make_rng(0))
    assert trace.interactions_total == 1
    assert trace.parallel_time == 0.5
    assert not trace.timed_out
    assert trace.final == Configuration((1, 1))


def test_zero_budget_times_out(simple, leader_stop):
    trace = run_trial(simple, 2, leader_stop, make_rng(0), cap=0)
    assert trace.timed_out
    assert trace.interactions_total == 0


def test_negative_budget_rejected(simple, leader_stop):
    with pytest.raises(SchedulerError):
        run_trial(simple, 4, leader_stop, make_rng(0), cap=-1)


def test_cap_stop_is_not_a_timeout(simple):
    """Test that running to the budget on purpose is not flagged."""
    trace = run_trial(simple, 10, StopCondition.at_cap(), make_rng(3), cap=5000)
    assert trace.interactions_total == 5000
    assert not trace.timed_out
    assert trace.final == Configuration((1, 9))


def test_stuck_configuration_times_out(broken):
    """Test that a configuration without enabled transitions uses up the budget."""
    stop = StopCondition.on_predicate(predicate_for('broken'))
    trace = run_trial(broken, 4, stop, make_rng(5), cap=1000)
    assert trace.timed_out
    assert trace.interactions_total == 1000
    assert trace.final == Configuration((0, 4))


def test_default_budget_from_config(simple, testing_config):
    trace = run_trial(simple, 2, StopCondition.at_cap(), make_rng(0))
    assert trace.interactions_total == testing_config.default_cap(2)


def test_explicit_initial_configuration(simple, leader_stop):
    trace = run_trial(simple, 5, leader_stop, make_rng(0), initial=Configuration((2, 3)))
    assert trace.initial == Configuration((2, 3))
    assert trace.final == Configuration((1, 4))
    with pytest.raises(SchedulerError):
        run_trial(simple, 6, leader_stop, make_rng(0), initial=Configuration((2, 3)))


def test_trace_replay_matches_snapshots(example1):
    """Test that configuration_at agrees with a full replay of the trace."""
    trace = run_trial(example1, 256, StopCondition.at_cap(), make_rng(7), cap=20000)
    replay = list(trace.configurations())
    assert len(trace.snapshots) > 1
    for (index, c), (next_index, _) in zip(replay, replay[1:] + [(trace.interactions_total + 1, None)]):
        assert trace.configuration_at(index) == c
        assert trace.configuration_at(next_index - 1) == c
    assert trace.final.n == 256


def test_convergence_point_simple(simple, leader_stop):
    """Test that the last leader change of a stopped simple trial is its last step."""
    trace = run_trial(simple, 20, leader_stop, make_rng(11))
    assert convergence_point(trace) == trace.indices[-1] == trace.interactions_total


def test_convergence_point_constant_leaders(simple):
    trace = run_trial(simple, 5, StopCondition.at_cap(), make_rng(0), cap=100,
                      initial=Configuration((1, 4)))
    assert convergence_point(trace) == 0


def test_convergence_point_cut_off(simple, leader_stop):
    """Test that a leader change on the last step of a cut-off trace leaves convergence open."""
    cut = run_trial(simple, 2, StopCondition.at_cap(), make_rng(0), cap=1)
    assert cut.interactions_total == 1
    assert not cut.stopped
    assert convergence_point(cut) is None
    stopped = run_trial(simple, 2, leader_stop, make_rng(0))
    assert stopped.stopped
    assert convergence_point(stopped) == 1


def test_convergence_before_stabilization(example1):
    """Test that a fault-free example1 run converges at its unique candidate pairing."""
    stop = StopCondition.on_predicate(predicate_for('example1'))
    pairing = speed_fault_transition('example1')
    for trial in range(20):
        trace = run_trial(example1, 1296, stop, trial_rng(21, trial))
        if trace.count_firings(pairing) != 1:
            continue
        fired_at = next(index for index, t, _ in trace.steps() if t == pairing)
        assert convergence_point(trace) == fired_at
        assert fired_at < trace.interactions_total
        return
    pytest.fail("no fault-free trial in 20 attempts")


def test_membership_stop(simple):
    """Test stopping on the stable-leader nodes of a reachability graph."""
    graph = explore(simple, eval_init(simple, 5))
    stop = StopCondition.on_membership(graph, stable_leader_set(graph))
    trace = run_trial(simple, 5, stop, make_rng(4))
    assert trace.final == Configuration((1, 4))
    assert trace.stop_kind == 'membership'
    with pytest.raises(StopConditionError):
        run_trial(simple, 6, stop, make_rng(4))


def test_membership_stop_rejects_other_protocol(simple, broken):
    graph = explore(broken, eval_init(broken, 5))
    stop = StopCondition.on_membership(graph, stable_leader_set(graph))
    with pytest.raises(StopConditionError) as exc_info:
        run_trial(simple, 5, stop, make_rng(0))
    assert "computed for protocol broken" in str(exc_info.value)


@pytest.mark.parametrize('stop', [
    StopCondition(kind='sometimes'),
    StopCondition(kind='predicate'),
    StopCondition.on_density(0.0),
    StopCondition.on_density(1.5),
])
def test_invalid_stop_conditions(simple, stop):
    with pytest.raises(StopConditionError):
        run_trial(simple, 4, stop, make_rng(0))


def test_density_stop(dense):
    """Test that a density stop ends on a configuration meeting the threshold."""
    trace = run_trial(dense, 30, StopCondition.on_density(0.2), make_rng(9))
    assert not trace.timed_out
    assert min(trace.final.counts) >= 6
    assert density_hit(trace, 0.2) == trace.interactions_total
    assert density_profile(trace) >= 0.2


def test_density_hit_simple(simple, leader_stop):
    """Test that a simple run from n leaders passes through a 0.1-dense configuration."""
    trace = run_trial(simple, 100, leader_stop, make_rng(13))
    hit = density_hit(trace, 0.1)
    assert hit is not None
    c = trace.configuration_at(hit)
    assert min(c.counts) >= 10
    with pytest.raises(SchedulerError):
        density_hit(trace, 0)


def test_density_single_state():
    p = parse_protocol("states: a\ninit: a = n\nleader: a\n")
    trace = run_trial(p, 3, StopCondition.at_cap(), make_rng(0), cap=10)
    assert density_hit(trace, 1.0) == 0
    assert density_profile(trace) == 1.0


def test_speed_fault_counting(example1):
    """Test that recorded firings of the pairing transition match the trace."""
    stop = StopCondition.on_predicate(predicate_for('example1'))
    pairing = speed_fault_transition('example1')
    results = run_trials(example1, 256, 10, stop, seed=2, speed_fault=pairing)
    for result in results:
        trace = run_trial(example1, 256, stop, trial_rng(2, result.trial))
        assert result.firings == trace.count_firings(pairing)
        assert result.speed_fault == (result.firings > 1)
        assert result.firings >= 1


def test_trials_are_reproducible(example1):
    """Test that a batch depends only on (seed, trial) and not on worker count."""
    stop = StopCondition.on_predicate(predicate_for('example1'))
    first = run_trials(example1, 256, 6, stop, seed=99, threads=1)
    again = run_trials(example1, 256, 6, stop, seed=99, threads=1)
    pooled = run_trials(example1, 256, 6, stop, seed=99, threads=2)
    assert [r.to_row() for r in first] == [r.to_row() for r in again] == [r.to_row() for r in pooled]
    other = run_trials(example1, 256, 6, stop, seed=100, threads=1)
    assert [r.interactions for r in other] != [r.interactions for r in first]


def test_trial_rng_rejects_bad_input():
    with pytest.raises(ValueError):
        trial_rng(-1, 0)
    with pytest.raises(ValueError):
        trial_rng(0, -1)


def test_estimate_two_agents(simple, leader_stop):
    """Test the deterministic one-interaction estimate."""
    estimate = estimate_time(simple, 2, 25, leader_stop, seed=0)
    assert estimate.mean_parallel_time == 0.5
    assert estimate.std_error == 0.0
    assert estimate.timeouts == 0


def test_timeouts_excluded_from_mean(simple, leader_stop):
    estimate = estimate_time(simple, 50, 5, leader_stop, seed=0, cap=10)
    assert estimate.timeouts == 5
    assert estimate.timeout_rate == 1.0
    assert math.isnan(estimate.mean_parallel_time)
    assert estimate.per_trial_times == []


def test_trial_row_format(simple, leader_stop):
    result = run_trials(simple, 50, 1, leader_stop, seed=0, cap=10)[0]
    row = result.to_row()
    assert row['converged_at'] == ''
    assert row['timed_out'] is True
    assert row['stop_kind'] == 'predicate:simple'


def test_no_trials_rejected(simple, leader_stop):
    with pytest.raises(SchedulerError):
        run_trials(simple, 4, 0, leader_stop, seed=0)


def test_simple_agrees_with_exact_time(simple):
    """Test the Monte-Carlo mean against the exact hitting time at n=6."""
    graph = explore(simple, eval_init(simple, 6))
    target = stable_leader_set(graph)
    exact = exact_expected_time(graph, target)[0]
    stop = StopCondition.on_membership(graph, target)
    estimate = estimate_time(simple, 6, 4000, stop, seed=17)
    assert abs(estimate.mean_parallel_time - exact) <= 4 * estimate.std_error


def test_simple_mean_at_hundred(simple, leader_stop):
    """Test the n=100 mean against (n-1)^2/n = 98.01."""
    estimate = estimate_time(simple, 100, 2000, leader_stop, seed=2024)
    assert abs(estimate.mean_parallel_time - 98.01) <= 3 * estimate.std_error
    assert abs(estimate.mean_parallel_time - 98.01) <= 0.05 * 98.01


def test_stepwise_and_batched_agree(simple):
    """Test that naive stepping and null batching estimate the same time."""
    rng = make_rng(31)
    times = []
    for _ in range(3000):
        c = Configuration((6, 0))
        interactions = 0
        while c[0] > 1:
            c, _ = step(c, simple, rng)
            interactions += 1
        times.append(interactions / 6)
    stepwise = np.mean(times)
    stepwise_error = np.std(times, ddof=1) / math.sqrt(len(times))
    assert abs(stepwise - 25 / 6) <= 4 * stepwise_error


def test_aggregate_empty_times():
    estimate = aggregate([])
    assert estimate.trials == 0
    assert math.isnan(estimate.mean_parallel_time)


@pytest.mark.slow
def test_example1_median_envelope(example1):
    """Test the example1 median time at n=4096 against sqrt(n)/4 .. 4 sqrt(n) ln n."""
    stop = StopCondition.on_predicate(predicate_for('example1'))
    estimate = estimate_time(example1, 4096, 100, stop, seed=5)
    assert estimate.timeouts == 0
    median = float(np.median(estimate.per_trial_times))
    assert math.sqrt(4096) / 4 <= median <= 4 * math.sqrt(4096) * math.log(4096)
