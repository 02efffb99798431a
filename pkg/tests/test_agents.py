import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsrlab.agents import (
    AGENT_KINDS,
    AgentConfig,
    Decision,
    EmptyTrace,
    TSRAgent,
    UnknownAgent,
    greedy_option,
    make_agent,
    q_update,
    select_random_skip,
    skip_q_update,
    sr_q_values,
    sr_update,
    tsr_select,
    tsr_update,
)
from tsrlab.experiment import run_episode
from tsrlab.gridworld import EAST, Gridworld, RepeatOutcome, StepOutcome, load_layout, parse_layout
from tsrlab.sr_analytic import TransitionModel, analytic_sr, analytic_tsr, model_from_env, open_grid
from tsrlab.tabular import ShapeMismatch, make_rng, q_table, skip_q_table

CFG = AgentConfig()


def trace(*steps):
    return RepeatOutcome([StepOutcome(s, float(r), t, False) for s, r, t in steps])


# -- q_update ---------------------------------------------------------------

def test_q_update_terminal_target_is_reward():
    Q = q_table(3)
    q_update(Q, 0, 1, 1.0, 2, True, CFG)
    assert Q[0, 1] == 1.0


def test_q_update_bootstraps_on_max():
    Q = q_table(3)
    Q[1, 3] = 1.0
    q_update(Q, 0, 2, 0.0, 1, False, CFG)
    assert Q[0, 2] == pytest.approx(0.99)


def test_q_update_tiny_alpha_barely_moves():
    # alpha must be positive, so the identity case is approached from above
    Q = q_table(3)
    q_update(Q, 0, 0, 1.0, 1, True, AgentConfig(alpha=1e-12))
    assert Q[0, 0] == pytest.approx(0.0, abs=1e-11)


# -- skip_q_update ----------------------------------------------------------

@pytest.mark.parametrize("sub_repeats", [False, True])
def test_skip_q_single_step_matches_q_update(sub_repeats):
    cfg = AgentConfig(alpha=0.5, sub_repeats=sub_repeats)
    rng = np.random.default_rng(0)
    Q0 = rng.normal(size=(4, 4))
    SQ, Q = skip_q_table(4), Q0.copy()
    SQ[..., 0] = Q0
    reference = Q0.copy()
    q_update(reference, 0, 2, 0.5, 3, False, cfg)
    skip_q_update(SQ, Q, trace((3, 0.5, False)), 0, 2, 1, cfg)
    assert SQ[0, 2, 0] == reference[0, 2]
    assert np.array_equal(Q, reference)


@pytest.mark.parametrize("sub_repeats", [False, True])
def test_skip_q_two_step_goal(sub_repeats):
    cfg = AgentConfig(sub_repeats=sub_repeats)
    SQ, Q = skip_q_table(3), q_table(3)
    skip_q_update(SQ, Q, trace((1, 0, False), (2, 1, True)), 0, EAST, 2, cfg)
    assert SQ[0, EAST, 1] == pytest.approx(0.99)


@pytest.mark.parametrize("sub_repeats", [False, True])
def test_skip_q_truncated_by_lava(sub_repeats):
    cfg = AgentConfig(sub_repeats=sub_repeats)
    SQ, Q = skip_q_table(3), q_table(3)
    skip_q_update(SQ, Q, trace((1, -1, True)), 0, EAST, 3, cfg)
    assert SQ[0, EAST, 2] == -1.0
    assert Q[0, EAST] == -1.0


def test_skip_q_sub_repeats_fill_contained_segments():
    SQ, Q = skip_q_table(4), q_table(4)
    skip_q_update(SQ, Q, trace((1, 0, False), (2, 0, False), (3, 1, True)), 0, EAST, 3, CFG)
    g = CFG.gamma
    assert SQ[2, EAST, 0] == 1.0
    assert SQ[1, EAST, 1] == pytest.approx(g)
    assert SQ[0, EAST, 2] == pytest.approx(g**2)
    # ending on the terminal also answers every longer repeat
    assert np.allclose(SQ[0, EAST, 3:], g**2)
    assert np.allclose(SQ[2, EAST, 1:], 1.0)


def test_skip_q_empty_trace():
    with pytest.raises(EmptyTrace):
        skip_q_update(skip_q_table(2), q_table(2), RepeatOutcome([]), 0, 0, 1, CFG)


# -- sr_update / tsr_update -------------------------------------------------

def test_sr_update_zero_bootstrap_gives_self_occupancy():
    M, W = np.zeros((3, 4, 3)), np.zeros(3)
    sr_update(M, W, 0, 1, 0.0, 1, False, CFG)
    assert np.array_equal(M[0, 1], [1.0, 0.0, 0.0])


def test_sr_update_overwrites_reward():
    M, W = np.zeros((3, 4, 3)), np.zeros(3)
    sr_update(M, W, 0, 1, 1.0, 2, True, CFG)
    assert W[2] == 1.0
    assert np.allclose(M[0, 1], [1.0, 0.0, 0.99])
    assert sr_q_values(M, W, 0)[1] == pytest.approx(0.99)


def test_sr_update_w_change_leaves_m_untouched():
    M, W = np.zeros((3, 4, 3)), np.zeros(3)
    M[2] = 7.0
    sr_update(M, W, 0, 0, 1.0, 1, False, CFG)
    assert np.all(M[2] == 7.0)


@pytest.mark.parametrize("sub_repeats", [False, True])
def test_tsr_two_step_zero_bootstrap(sub_repeats):
    cfg = AgentConfig(sub_repeats=sub_repeats)
    M, W = np.zeros((3, 4, 7, 3)), np.zeros(3)
    tsr_update(M, W, trace((1, 0, False), (2, 0, False)), 0, EAST, 2, cfg)
    assert np.allclose(M[0, EAST, 1], [1.0, 0.99, 0.0])


def test_tsr_single_step_matches_sr_update():
    rng = np.random.default_rng(1)
    cfg = AgentConfig(alpha=0.3, j_max=1)
    M0 = rng.random((4, 4, 4))
    W0 = rng.random(4)
    M_sr, W_sr = M0.copy(), W0.copy()
    M_t, W_t = M0[:, :, None, :].copy(), W0.copy()
    sr_update(M_sr, W_sr, 0, 2, 0.5, 3, False, cfg)
    tsr_update(M_t, W_t, trace((3, 0.5, False)), 0, 2, 1, cfg)
    assert np.array_equal(M_t[:, :, 0, :], M_sr)
    assert np.array_equal(W_t, W_sr)


def test_tsr_empty_trace():
    with pytest.raises(EmptyTrace):
        tsr_update(np.zeros((2, 4, 7, 2)), np.zeros(2), RepeatOutcome([]), 0, 0, 1, CFG)


def test_sr_td_converges_to_closed_form():
    model, _ = open_grid(5, 5)
    gamma = 0.9
    cfg = AgentConfig(alpha=0.1, gamma=gamma)
    nxt = model.T.argmax(axis=2)
    pi = np.full(4, 0.25)
    M, W = np.zeros((25, 4, 25)), np.zeros(25)
    rng = np.random.default_rng(0)
    s = 0
    for a in rng.integers(4, size=100_000):
        s_next = int(nxt[a, s])
        sr_update(M, W, s, int(a), 0.0, s_next, False, cfg, next_policy=pi)
        s = s_next
    assert np.abs(M.mean(axis=1) - analytic_sr(model, gamma)).max() < 0.1


def test_tsr_td_converges_to_corrected_closed_form():
    model, _ = open_grid(4, 4)
    gamma, j_max = 0.9, 3
    cfg = AgentConfig(alpha=0.1, gamma=gamma, j_max=j_max)
    nxt = model.T.argmax(axis=2)
    follow = np.zeros((4, j_max))
    follow[:, 0] = 0.25  # continue with one-step uniform choices
    M, W = np.zeros((16, 4, j_max, 16)), np.zeros(16)
    rng = np.random.default_rng(1)
    s = 0
    for _ in range(40_000):
        a, j = int(rng.integers(4)), int(rng.integers(1, j_max + 1))
        steps, x = [], s
        for _ in range(j):
            x = int(nxt[a, x])
            steps.append((x, 0, False))
        tsr_update(M, W, trace(*steps), s, a, j, cfg, next_policy=follow)
        s = x
    for j in range(1, j_max + 1):
        oracle = analytic_tsr(model, gamma, j).transpose(1, 0, 2)
        assert np.abs(M[:, :, j - 1] - oracle).max() < 0.05


# -- values and selection ---------------------------------------------------

def test_sr_q_values_basics():
    M = np.zeros((3, 4, 3))
    W = np.array([0.5, -1.0, 2.0])
    assert not sr_q_values(M, np.zeros(3), 0).any()
    M[1, :, 1] = 1.0
    assert np.array_equal(sr_q_values(M, W, 1), np.full(4, -1.0))
    with pytest.raises(ShapeMismatch):
        sr_q_values(M, np.zeros(4), 0)


def test_sr_q_values_chain_matches_discounted_return():
    # 3-state row walked east; the bump at the goal keeps it there
    env = Gridworld(parse_layout("S.G\nG##"))
    T, _ = env.export_dynamics(absorbing=False)
    pi = np.zeros((env.n_states, 4))
    pi[:, 1] = 1.0
    gamma = 0.5
    model = TransitionModel(T, pi)
    M = analytic_tsr(model, gamma, 1).transpose(1, 0, 2)
    goal = env.goal_states[0]
    W = np.zeros(env.n_states)
    W[goal] = 1.0
    q = sr_q_values(M, W, env.start)
    # brute force: walk east, then keep following the east policy
    s, ret = env.start, 0.0
    for t in range(200):
        ret += gamma**t * W[s]
        s = env.next_table[s][1]
    assert q[1] == pytest.approx(ret, abs=1e-12)


def test_tsr_select_unique_maximum():
    M = np.zeros((1, 4, 7, 1))
    M[0, 2, 4, 0] = 1.0
    assert tsr_select(M, np.ones(1), 0, 0.0, make_rng(0)) == Decision(2, 5)


def test_tsr_select_all_zero_picks_first_action():
    # ties in the repeat go to the longest commitment (see the module docstring)
    d = tsr_select(np.zeros((1, 4, 7, 1)), np.zeros(1), 0, 0.0, make_rng(0))
    assert d.action == 0
    assert d == Decision(0, 7)


def test_tsr_select_corridor_goal_five_ahead():
    env = Gridworld(parse_layout("S....G\n.....G"))
    model = model_from_env(env, absorbing=True)
    gamma = 0.9
    M = np.stack([analytic_tsr(model, gamma, j) for j in range(1, 8)], axis=2).transpose(1, 0, 2, 3)
    W = np.zeros(env.n_states)
    W[env.goal_states[0]] = 1.0
    values = sr_q_values(M, W, env.start)
    best = np.flatnonzero(values[EAST] >= values.max() - 1e-9) + 1
    assert best.min() == 5  # the oracle's shortest optimal commitment
    assert values.max(axis=1).argmax() == EAST
    d = tsr_select(M, W, env.start, 0.0, make_rng(0), tol=1e-9)
    assert d.action == EAST and d.repeat in best


def test_greedy_option_prefers_first_action_then_longest_repeat():
    values = np.array([[0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    assert greedy_option(values) == (0, 2)


def test_random_skip_epsilon_zero():
    rng = make_rng(0)
    assert all(select_random_skip(np.array([0.0, 1, 0, 0]), 0.0, rng, 7).repeat == 1 for _ in range(500))


def test_random_skip_epsilon_one_uniform():
    rng = make_rng(1)
    reps = np.array([select_random_skip(np.zeros(4), 1.0, rng, 7).repeat for _ in range(100_000)])
    freq = np.bincount(reps, minlength=8)[1:] / len(reps)
    assert np.allclose(freq, 1 / 7, atol=0.01)


def test_random_skip_evaluation_mode():
    rng = make_rng(2)
    assert select_random_skip(np.array([0.0, 3, 1, 0]), 1.0, rng, 7, evaluation=True) == Decision(1, 1)


# -- agents -----------------------------------------------------------------

def test_make_agent_rejects_unknown_kind():
    with pytest.raises(UnknownAgent) as info:
        make_agent("dqn", 4, CFG)
    for kind in AGENT_KINDS:
        assert kind in str(info.value)


@pytest.mark.parametrize(
    "kwargs", [{"alpha": 0}, {"alpha": 1.5}, {"alpha_r": 0}, {"gamma": 1.0}, {"epsilon": 2}, {"j_max": 0}, {"tie_break": "x"}]
)
def test_agent_config_validation(kwargs):
    with pytest.raises(ValueError):
        AgentConfig(**kwargs)


def trajectory(kind, cfg, env, seed, episodes):
    agent = make_agent(kind, env.n_states, cfg)
    rng = make_rng(seed, 1)
    log = []
    for _ in range(episodes):
        s, steps = env.start, 0
        while True:
            d = agent.act(s, rng)
            out = env.execute_repeat(s, d.action, d.repeat, steps)
            agent.learn(s, d, out)
            log.append((s, d, tuple(out.transitions)))
            steps += out.executed
            if out.final.terminal or out.final.truncated:
                break
            s = out.final.next_state
    return agent, log


@pytest.mark.parametrize("tie_break", ["random", "first"])
def test_tsr_with_single_repeat_is_sr(tie_break):
    env = Gridworld(load_layout("junction"))
    cfg = AgentConfig(j_max=1, tie_break=tie_break)
    sr, sr_log = trajectory("sr", cfg, env, 3, 60)
    tsr, tsr_log = trajectory("tsr", cfg, env, 3, 60)
    assert sr_log == tsr_log
    assert np.array_equal(tsr.M[:, :, 0, :], sr.M)
    assert np.array_equal(tsr.W, sr.W)


def test_skip_q_with_single_repeat_is_q():
    env = Gridworld(load_layout("junction"))
    cfg = AgentConfig(j_max=1)
    q, q_log = trajectory("q", cfg, env, 5, 200)
    sq, sq_log = trajectory("skip_q", cfg, env, 5, 200)
    assert q_log == sq_log
    assert np.array_equal(q.Q, sq.Q)
    states = range(env.n_states)
    assert q.greedy_policy(states) == sq.greedy_policy(states)


@pytest.mark.parametrize("kind", ["sr", "sr_random_skip", "tsr"])
def test_successor_entries_stay_bounded(kind):
    env = Gridworld(load_layout("junction"))
    agent, _ = trajectory(kind, CFG, env, 0, 100)
    assert agent.M.min() >= 0.0
    assert agent.M.max() <= 1.0 / (1.0 - CFG.gamma) + 1e-9


@pytest.mark.parametrize("kind", AGENT_KINDS)
def test_vectorised_greedy_policy_matches_per_state(kind):
    env = Gridworld(load_layout("junction"))
    agent, _ = trajectory(kind, CFG, env, 1, 80)
    states = np.arange(env.n_states)
    fast = agent.greedy_policy(states)
    slow = type(agent).__mro__[-2].greedy_policy(agent, states)
    assert fast == slow


def test_reward_vector_learns_each_entered_state_once():
    env = Gridworld(load_layout("junction"))
    agent = TSRAgent(env.n_states, CFG)
    rng = make_rng(0)
    for _ in range(30):
        run_episode(agent, env, rng)
    seen = np.flatnonzero(agent.W != 0)
    for s in seen:
        assert agent.W[s] in (-1.0, 1.0)
        assert s in env.lava_states or s == env.goal_states[0]


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(AGENT_KINDS), st.integers(0, 10_000))
def test_same_seed_same_tables(kind, seed):
    env = Gridworld(load_layout("junction"))
    a1, log1 = trajectory(kind, CFG, env, seed, 3)
    a2, log2 = trajectory(kind, CFG, env, seed, 3)
    assert log1 == log2
    assert a1.fingerprint() == a2.fingerprint()


@pytest.mark.parametrize("kind", ["skip_q", "tsr"])
def test_repeat_agents_choose_repeats(kind):
    env = Gridworld(load_layout("junction"))
    _, log = trajectory(kind, CFG, env, 2, 30)
    assert any(d.repeat > 1 for _, d, _ in log)
    assert all(1 <= d.repeat <= CFG.j_max for _, d, _ in log)


def reference_tsr_update(M, W, steps, s, a, j_requested, cfg):
    # plain re-statement of the update: every segment recomputes its greedy bootstrap
    from tsrlab.agents import _occupancy_target, _segments

    for step in steps:
        W[step.next_state] += cfg.alpha_r * (step.reward - W[step.next_state])
    states = [s] + [t.next_state for t in steps]
    terminal = steps[-1].terminal
    for i, length, j in _segments(len(steps), terminal, j_requested, M.shape[2], cfg.sub_repeats):
        end = i + length
        end_terminal = terminal and end == len(steps)
        if end_terminal:
            boot = M[states[end], 0, 0]
        else:
            a_star, j_star = greedy_option(sr_q_values(M, W, states[end]), cfg.tie_tol)
            boot = M[states[end], a_star, j_star]
        target = _occupancy_target(boot, states[i:end], states[end], end_terminal, cfg.gamma)
        M[states[i], a, j - 1] += cfg.alpha * (target - M[states[i], a, j - 1])


@pytest.mark.parametrize("alpha", [1.0, 0.3])
def test_tsr_update_matches_reference(alpha):
    env = Gridworld(load_layout("junction"))
    cfg = AgentConfig(alpha=alpha)
    agent = TSRAgent(env.n_states, cfg)
    M_ref, W_ref = agent.M.copy(), agent.W.copy()
    rng = make_rng(9)
    for _ in range(40):
        s, steps = env.start, 0
        while True:
            d = agent.act(s, rng)
            out = env.execute_repeat(s, d.action, d.repeat, steps)
            reference_tsr_update(M_ref, W_ref, out.transitions, s, d.action, d.repeat, cfg)
            agent.learn(s, d, out)
            assert np.array_equal(agent.M, M_ref) and np.array_equal(agent.W, W_ref)
            steps += out.executed
            if out.final.terminal or out.final.truncated:
                break
            s = out.final.next_state
