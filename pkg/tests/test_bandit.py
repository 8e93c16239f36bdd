import json
import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bds.bandit import BanditState, Pull, best_arm, replay, select_arm, ucb_scores, update_reward
from bds.errors import ArmOutOfRange, NoArms
from bds.evaluation import MatchOutcome


def test_fresh_state_picks_arm_zero():
    assert select_arm(BanditState.fresh(3)) == 0


def test_unpulled_arm_has_priority():
    state = BanditState((5.0, 0.0, 0.0), (1, 0, 0))
    assert select_arm(state) == 1


def test_mean_mode_example():
    state = BanditState((2.0, 1.0), (3, 1), C=0.1, mode="mean")
    expected = [2 / 3 + 0.1 * math.sqrt(math.log(4) / 3), 1 + 0.1 * math.sqrt(math.log(4))]
    assert ucb_scores(state) == pytest.approx(expected)
    assert ucb_scores(state) == pytest.approx([0.7347, 1.1177], abs=1e-4)
    assert select_arm(state) == 1


def test_cumulative_mode_example():
    state = BanditState((2.0, 1.0), (3, 1), C=0.1, mode="cumulative")
    assert ucb_scores(state) == pytest.approx([2.0680, 1.1177], abs=1e-4)
    assert select_arm(state) == 0


def test_ucb_ties_to_lowest_index():
    assert select_arm(BanditState((1.0, 1.0, 1.0), (2, 2, 2))) == 0


@pytest.mark.parametrize("b, g, d, delta", [(3, 5, 4, 0), (7, 7, 7, 7), (0, 2, 3, -5)])
def test_update_examples(b, g, d, delta):
    state = update_reward(BanditState.fresh(2), 1, MatchOutcome(g, d, b))
    assert state.Q == (0.0, float(delta))
    assert state.N == (0, 1)


def test_update_does_not_mutate():
    fresh = BanditState.fresh(2)
    update_reward(fresh, 0, MatchOutcome(1, 1, 1))
    assert fresh.Q == (0.0, 0.0) and fresh.N == (0, 0)


def test_update_out_of_range():
    with pytest.raises(ArmOutOfRange):
        update_reward(BanditState.fresh(2), 2, MatchOutcome(1, 1, 1))


def test_no_arms():
    with pytest.raises(NoArms):
        BanditState.fresh(0)
    with pytest.raises(NoArms):
        select_arm(BanditState((), ()))


@pytest.mark.parametrize("Q, arm", [((0.0, 5.0, -2.0), 1), ((3.0, 3.0), 0)])
def test_best_arm(Q, arm):
    assert best_arm(BanditState(Q, (1,) * len(Q))) == arm


def test_best_arm_ignores_mode():
    # mean mode would favour arm 1 (1/1 > 2/3) but the winner is the cumulative argmax
    assert best_arm(BanditState((2.0, 1.0), (3, 1), mode="mean")) == 0


@pytest.mark.parametrize("n", [1, 2, 7, 16])
def test_coverage(n):
    state = BanditState.fresh(n)
    rnd = random.Random(n)
    for _ in range(n):
        g = rnd.randint(0, 5)
        state = update_reward(state, select_arm(state), MatchOutcome(g, g, rnd.randint(0, g)))
    assert state.N == (1,) * n


@given(
    st.lists(st.tuples(st.integers(-50, 50), st.integers(1, 30)), min_size=1, max_size=10),
    st.integers(-1000, 1000),
)
def test_cumulative_argmax_shift_invariant(arms, shift):
    Q = tuple(float(q) for q, _ in arms)
    N = tuple(n for _, n in arms)
    base = BanditState(Q, N, mode="cumulative")
    shifted = BanditState(tuple(q + shift for q in Q), N, mode="cumulative")
    assert select_arm(base) == select_arm(shifted)
    assert select_arm(base) == select_arm(base)


def test_ledger_matches_replay():
    rnd = random.Random(4)
    state = BanditState.fresh(5)
    events = []
    for _ in range(500):
        arm = select_arm(state)
        g, d = rnd.randint(0, 6), rnd.randint(0, 6)
        b = rnd.randint(0, min(g, d))
        state = update_reward(state, arm, MatchOutcome(g, d, b))
        events.append((arm, 3 * b - g - d))
    for a in range(5):
        assert state.Q[a] == sum(r for arm, r in events if arm == a)
    assert replay(5, state.pull_log) == state


def test_snapshot_round_trip():
    state = BanditState.fresh(3, C=0.3, mode="cumulative")
    state = update_reward(state, 0, MatchOutcome(3, 2, 1))
    doc = json.loads(json.dumps(state.to_dict()))
    assert doc["pullLog"] == [[1, 0, 1, 3, 2]]
    assert BanditState.from_dict(doc) == state
    assert Pull(*doc["pullLog"][0]).reward == -2
