"""
Tests for the built-in protocol library and its stability predicates
"""
import pytest

from protocol import ProtocolError, eval_init
from reachability import validate_predicate
from utils.builtins import (
    BUILTINS, get_builtin, load_builtin, meets_minimums, minimum_n, predicate_for, resolve_protocol,
    speed_fault_transition,
)


def transition_set(p, *texts):
    return {p.transition(text) for text in texts}


@pytest.mark.parametrize('name, states, transitions', [
    ('simple', ('l', 'f'), ['l l -> l f']),
    ('broken', ('l', 'f'), ['l l -> f f']),
    ('example1', ('r', 'x', 'l', 'k'), ['r r -> l k', 'r k -> k k', 'x k -> k k', 'l l -> l k']),
    ('example2', ('l', "l'", 'r', 'x', 'k'),
     ['r l -> r l\'', "l' x -> l' k", 'k x -> k k', 'k r -> k k', "l' l' -> l k"]),
])
def test_builtin_transition_sets(name, states, transitions):
    """Test that every built-in parses to exactly its documented transitions."""
    p = load_builtin(name)
    assert p.states == states
    assert set(p.transitions) == transition_set(p, *transitions)
    assert len(p.transitions) == len(transitions)
    assert p.leader_set == frozenset({p.state_index('l')})


def test_builtin_init_expressions(example1, example2):
    assert eval_init(example1, 81)[example1.state_index('r')] == 3
    assert eval_init(example2, 100)[example2.state_index('r')] == 10
    assert eval_init(example2, 100)[example2.state_index('x')] == 88


def test_example1_q_set(example1):
    """Test that Q holds the leader-creating and leader-removing transitions."""
    assert example1.q_set == transition_set(example1, 'r r -> l k', 'l l -> l k')


@pytest.mark.parametrize('name', ['simple', 'broken', 'example1', 'example2'])
def test_predicates_match_exact_stability(name):
    """Test each analytic predicate against the exact stable-leader sets up to n=8."""
    p = load_builtin(name)
    assert validate_predicate(p, predicate_for(name), 8) == []


def test_predicate_descriptions():
    assert predicate_for('simple').describe() == 'l=1'
    assert predicate_for('example1').describe() == 'l=1 and r<=1'
    assert predicate_for('example2').describe() == "l=1 and r=0 and l'<=1"


def test_surgery_has_no_predicate():
    with pytest.raises(ProtocolError):
        predicate_for('surgery')


def test_unknown_builtin():
    with pytest.raises(ProtocolError) as exc_info:
        get_builtin('example3')
    assert 'example3' in str(exc_info.value)


def test_resolve_protocol(tmp_path):
    """Test built-in references and file paths."""
    p, builtin = resolve_protocol('builtin:simple')
    assert builtin is BUILTINS['simple']
    assert p is load_builtin('simple')
    path = tmp_path / 'copy.pp'
    path.write_text(BUILTINS['broken'].path.read_text())
    p, builtin = resolve_protocol(str(path))
    assert builtin is None
    assert p.name == 'copy'


def test_speed_fault_transition(example1):
    assert speed_fault_transition('example1') == example1.transition('r r -> l k')
    assert speed_fault_transition('simple') is None


def test_example2_minimum_population(example2):
    """Test the least n giving two leaders and a candidate."""
    minimums = get_builtin('example2').minimums
    assert minimum_n(example2, minimums) == 3
    assert meets_minimums(example2, eval_init(example2, 3), minimums)
    assert minimum_n(example2) == 3


def test_minimum_population_without_minimums(simple):
    assert minimum_n(simple) == 1
