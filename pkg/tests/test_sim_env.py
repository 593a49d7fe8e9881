import itertools

import numpy as np
import pytest
from scipy import stats

from dialpol import sim_env
from dialpol.errors import ContractError, ValidationError
from dialpol.rewards import table_iq_estimator
from dialpol.sim_env import (CONFIRMED, FILLED, UNKNOWN, DialogueEnv, HandcraftedExpert, Slot,
                             SlotDomain, SystemAction, handcrafted_policy, reset, step)


def scripted(d):
    return ([SystemAction("request", i) for i in range(d)]
            + [SystemAction("confirm", i) for i in range(d)] + [SystemAction("bye")])


def play(state, actions, ser, rng):
    for a in actions:
        _, state, done = step(state, a, ser, rng)
        if done:
            break
    return state


def test_script_succeeds_for_every_goal_without_noise():
    dom = SlotDomain((Slot("a", 2), Slot("b", 2)))
    for goal in itertools.product(range(2), range(2)):
        st = sim_env.EnvState(dom, goal, [UNKNOWN] * 2, [None] * 2)
        st = play(st, scripted(2), 0.0, np.random.default_rng(0))
        assert st.done and st.success and st.turns == 5


def test_full_noise_makes_success_impossible():
    dom = SlotDomain((Slot("a", 2), Slot("b", 2)))
    rng = np.random.default_rng(1)
    for _ in range(50):
        st = reset(dom, rng)
        informed = [step(st, SystemAction("request", i), 1.0, rng)[0] for i in range(2)]
        assert all(u[2] != st.goal[u[1]] for u in informed)
        st = play(st, scripted(2)[2:], 1.0, rng)
        assert st.done and not st.success


def test_truncation_and_contract():
    dom = SlotDomain.uniform(2, 3, max_turns=4)
    st = reset(dom, 0)
    st = play(st, [SystemAction("inform_results")] * 10, 0.0, np.random.default_rng(0))
    assert st.done and not st.success and st.turns == 4
    with pytest.raises(ContractError):
        step(st, SystemAction("bye"), 0.0, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        step(reset(dom, 0), SystemAction("request", 5), 0.0, np.random.default_rng(0))


def test_confirm_negation_resets_slot():
    dom = SlotDomain.uniform(1, 4)
    st = sim_env.EnvState(dom, (2,), [FILLED], [1])
    user, st, _ = step(st, SystemAction("confirm", 0), 0.0, np.random.default_rng(0))
    assert user == ("negate", 0) and st.status == [UNKNOWN]


def test_reset_goals():
    dom = SlotDomain.uniform(3, 4)
    assert reset(dom, 42).goal == reset(dom, 42).goal
    rng = np.random.default_rng(3)
    goals = np.array([reset(dom, rng).goal for _ in range(10_000)])
    assert goals.min() >= 0 and goals.max() < 4
    for i in range(3):
        assert stats.chisquare(np.bincount(goals[:, i], minlength=4)).pvalue > 0.01


def test_corruption_frequency():
    dom = SlotDomain.uniform(1, 4)
    rng = np.random.default_rng(5)
    n = 100_000
    wrong = 0
    for _ in range(n):
        st = sim_env.EnvState(dom, (1,), [UNKNOWN], [None])
        user, _, _ = step(st, SystemAction("request", 0), 0.3, rng)
        wrong += user[2] != 1
    se = np.sqrt(0.3 * 0.7 / n)
    assert abs(wrong / n - 0.3) <= 3 * se


def test_handcrafted_rule_table():
    table = {
        (UNKNOWN, UNKNOWN, UNKNOWN): SystemAction("request", 0),
        (CONFIRMED, UNKNOWN, FILLED): SystemAction("request", 1),
        (FILLED, CONFIRMED, FILLED): SystemAction("confirm", 0),
        (CONFIRMED, CONFIRMED, FILLED): SystemAction("confirm", 2),
        (CONFIRMED, CONFIRMED, CONFIRMED): SystemAction("bye"),
    }
    for status, action in table.items():
        assert handcrafted_policy(list(status)) == action


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_handcrafted_takes_two_d_plus_one_turns(d):
    env = DialogueEnv(SlotDomain.uniform(d, 3))
    stats_ = sim_env.evaluate(env, HandcraftedExpert(env).table, 30, 0)
    assert stats_ == {"success_rate": 1.0, "avg_turns": 2 * d + 1,
                      "avg_reward": 20.0 - (2 * d + 1)}


def test_env_ids_and_returns():
    env = DialogueEnv(SlotDomain.uniform(3, 4))
    assert env.n_states == 27 and env.n_actions == 8
    for sid in range(27):
        assert env.state_id(env.status_of(sid)) == sid
    est = table_iq_estimator({"buckets": [1, 1, 1, 1, 5]})
    iq_env = DialogueEnv(SlotDomain.uniform(3, 4), reward="iq", iq_estimator=est)
    res = sim_env.evaluate(iq_env, HandcraftedExpert(iq_env).table, 5, 0)
    assert res["avg_reward"] == -7 + 20
    with pytest.raises(ValidationError):
        DialogueEnv(SlotDomain.uniform(), reward="iq")


def test_random_policy_is_worse_than_expert():
    env = DialogueEnv(SlotDomain.uniform(3, 4))
    rng = np.random.default_rng(0)
    rand = lambda s: int(rng.integers(env.n_actions))
    assert (sim_env.evaluate(env, rand, 200, 1)["success_rate"]
            < sim_env.evaluate(env, HandcraftedExpert(env).table, 200, 1)["success_rate"])


def test_benchmark_deterministic_and_monotone():
    dom = SlotDomain.uniform()
    env = DialogueEnv(dom)
    pol = HandcraftedExpert(env).table
    a = sim_env.run_benchmark(pol, dom, n=300, seed=3)
    assert a == sim_env.run_benchmark(pol, dom, n=300, seed=3)
    assert a[0]["success_rate"] == 1.0
    rates = [r["success_rate"] for r in a]
    assert rates == sorted(rates, reverse=True)
    assert all(r["avg_turns"] <= dom.max_turns for r in a)


def test_domain_validation():
    with pytest.raises(ValidationError):
        SlotDomain(())
    with pytest.raises(ValidationError):
        SlotDomain((Slot("a", 1),))
    d = SlotDomain.uniform(2, 5, 9)
    assert SlotDomain.from_dict(d.to_dict()) == d
