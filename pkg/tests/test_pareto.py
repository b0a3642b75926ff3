import pytest

from loopstage.agents import (
    ParetoEntry,
    ParetoFront,
    SearchBudgetExceeded,
    dominates,
    enumerate_pareto_front,
    replay_witness,
    scalarize,
    select_by_utility,
)
from loopstage.envs import DeepSeaTreasure, GridMaze


@pytest.fixture(scope="module")
def default_front():
    return enumerate_pareto_front(DeepSeaTreasure(), horizon=25)


def test_dominance_definition():
    assert dominates((2.0, 0.0), (1.0, 0.0))
    assert not dominates((1.0, 0.0), (1.0, 0.0))
    assert not dominates((2.0, -1.0), (1.0, 0.0))


def test_front_constructor_rejects_dominated_entries():
    with pytest.raises(ValueError):
        ParetoFront(entries=(ParetoEntry((1.0, 0.0), (0,)),
                             ParetoEntry((2.0, 0.0), (1,))), objective_dims=2)
    with pytest.raises(ValueError):
        ParetoFront(entries=(), objective_dims=1)


def test_from_candidates_filters_and_sorts():
    front = ParetoFront.from_candidates(
        [((1.0, -1.0), (0,)), ((2.0, -3.0), (1, 1)), ((0.5, -2.0), (2,)),
         ((1.0, -1.0), (3,))], objective_dims=2)
    assert [e.returns for e in front.entries] == [(1.0, -1.0), (2.0, -3.0)]
    assert front.entries[0].actions == (0,)  # first witness kept


def test_single_treasure_degenerate_front(tmp_path):
    fixture = tmp_path / "one.txt"
    fixture.write_text("dst v1\n0 2 7.0\n")
    front = enumerate_pareto_front(DeepSeaTreasure(fixture=fixture), horizon=10)
    assert len(front.entries) == 1
    assert front.entries[0].returns == (7.0, -2.0)


def test_default_front_is_dominance_free(default_front):
    entries = default_front.entries
    assert len(entries) == 10
    for i, a in enumerate(entries):
        for j, b in enumerate(entries):
            if i != j:
                assert not dominates(a.returns, b.returns)


def test_witnesses_replay_to_exact_returns(default_front):
    env = DeepSeaTreasure()
    for entry in default_front.entries:
        assert replay_witness(env, entry, seed=0) == entry.returns


def test_select_extremes(default_front):
    best_treasure = select_by_utility(default_front, (1.0, 0.0))
    assert best_treasure.returns[0] == max(e.returns[0] for e in default_front.entries)
    best_time = select_by_utility(default_front, (0.0, 1.0))
    assert best_time.returns[1] == max(e.returns[1] for e in default_front.entries)


def test_scalarize_examples_and_preconditions():
    assert scalarize((1.0, 0.0), (3.0, 9.0)) == 3.0
    assert scalarize((0.5, 0.5), (4.0, -2.0)) == 1.0
    with pytest.raises(ValueError):
        scalarize((1.0,), (1.0, 2.0))
    with pytest.raises(ValueError):
        scalarize((-0.5, 0.5), (1.0, 2.0))


def test_select_tie_breaks_lex_first(default_front):
    entry = select_by_utility(default_front, (0.0, 0.0))
    assert entry is default_front.entries[0]


def test_singleton_front_selection():
    front = ParetoFront(entries=(ParetoEntry((5.0, -1.0), (1, 2)),), objective_dims=2)
    assert select_by_utility(front, (0.3, 0.7)) is front.entries[0]


def test_budget_guard():
    with pytest.raises(SearchBudgetExceeded):
        enumerate_pareto_front(DeepSeaTreasure(), horizon=25, budget=50)


def test_single_objective_env_rejected():
    with pytest.raises(ValueError):
        enumerate_pareto_front(GridMaze(3, 3, 0), horizon=5)
