import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from vecoffload import lyapunov
from vecoffload.compute import TaskOutcome
from vecoffload.config import ScenarioConfig
from vecoffload.lyapunov import SlotFlows
from vecoffload.queues import QueueState

RAW = ScenarioConfig(num_cvs=1, num_rsus=1, queue_unit_cycles=1.0)


def outcome(latency, energy):
    z = np.zeros(1)
    return TaskOutcome(latency, z, z, np.zeros(1, dtype=int), latency, energy, z, z, z, energy, latency <= 2.0, True)


def state(cfg, loc, rsu, v=0.0):
    z = QueueState.initial(cfg, loc, rsu)
    return QueueState(z.local_backlog, z.rsu_backlog, v, z.local_history, z.rsu_history)


def flows(local_in, local_service, rsu_in=0.0, rsu_service=0.0, e_total=None, cfg=RAW):
    e = cfg.energy_budget_w if e_total is None else e_total
    return SlotFlows(np.array([local_in]), np.array([local_service]), np.array([[rsu_in]]), np.array([rsu_service]), e)


def test_cost_examples():
    cfg = ScenarioConfig(alpha=1.0)
    assert lyapunov.slot_cost([outcome(0.8, 145.0), outcome(0.3, 10.0)], cfg) == 1.1
    assert math.isclose(lyapunov.slot_cost([outcome(0.8, 145.0)], RAW), 58.48, rel_tol=1e-9)
    assert math.isclose(lyapunov.slot_cost([outcome(0.8, 145.0)] * 3, RAW), 3 * 58.48, rel_tol=1e-9)


def test_lyapunov_value_examples():
    assert lyapunov.lyapunov_value(state(RAW, [0.0], [0.0]), RAW) == 0.0
    assert lyapunov.lyapunov_value(state(RAW, [3.0], [4.0]), RAW) == 12.5
    assert lyapunov.lyapunov_value(state(RAW, [6.0], [8.0]), RAW) == 4 * 12.5


def test_lyapunov_value_uses_queue_unit():
    cfg = ScenarioConfig(num_cvs=1, num_rsus=1)
    assert lyapunov.lyapunov_value(state(cfg, [3e9], [4e9]), cfg) == 12.5


def test_virtual_queue_counts_once_per_cv():
    cfg = ScenarioConfig(num_cvs=3, num_rsus=1, queue_unit_cycles=1.0)
    assert lyapunov.lyapunov_value(state(cfg, [0, 0, 0], [0], v=2.0), cfg) == 6.0


def test_drift_terms_zero_backlog():
    d = lyapunov.drift_bound_terms(state(RAW, [0.0], [0.0]), flows(3.0, 1.0), RAW)
    assert d.total == 0.0 and d.bound_constant == 2.0


def test_drift_hand_example():
    z = state(RAW, [2.0], [0.0])
    f = flows(3.0, 1.0)
    d = lyapunov.drift_bound_terms(z, f, RAW)
    assert d.local_terms.tolist() == [4.0] and d.b_local == 2.0
    z_next = z.step([3.0], [1.0], np.array([[0.0]]), [0.0], f.e_total, RAW)
    realized, bound, tol = lyapunov.lemma_slack(z, z_next, f, RAW)
    assert realized == 6.0 and bound == 6.0 and realized <= bound + tol


def test_drift_clamp_example():
    z = state(RAW, [1.0], [0.0])
    f = flows(0.0, 5.0)
    d = lyapunov.drift_bound_terms(z, f, RAW)
    assert d.local_terms.tolist() == [-5.0] and d.b_local == 12.5
    z_next = z.step([0.0], [5.0], np.array([[0.0]]), [0.0], f.e_total, RAW)
    assert z_next.local_backlog.tolist() == [0.0]
    realized, bound, _ = lyapunov.lemma_slack(z, z_next, f, RAW)
    assert realized == -0.5 and bound == 7.5


def test_p2_and_reward_examples():
    z = state(RAW, [2.0], [0.0])
    out = [outcome(0.8, 145.0)]
    f = flows(3.0, 1.0)
    assert math.isclose(lyapunov.p2_objective(z, out, f, RAW), 296.4, rel_tol=1e-9)
    assert math.isclose(lyapunov.slot_reward(z, out, f, RAW), -296.4, rel_tol=1e-9)
    obj = lyapunov.evaluate_slot(z, out, f, RAW)
    assert obj.reward == -obj.p2_value and obj.deadline_penalty == 0.0
    assert math.isclose(obj.penalty_weighted_cost, 5 * 58.48, rel_tol=1e-9)
    zero = state(RAW, [0.0], [0.0])
    assert math.isclose(lyapunov.p2_objective(zero, out, f, RAW), 5 * 58.48, rel_tol=1e-9)


def test_p2_monotone_in_v():
    out = [outcome(0.8, 145.0)]
    z = state(RAW, [2.0], [0.0])
    values = [lyapunov.p2_objective(z, out, flows(3.0, 1.0), RAW.replace(lyapunov_v=v)) for v in (1, 5, 50)]
    assert values == sorted(values)


def test_deadline_penalty_is_soft_excess():
    cfg = RAW.replace(deadline_penalty=10.0, t_max_s=2.0)
    z = state(cfg, [0.0], [0.0])
    obj = lyapunov.evaluate_slot(z, [outcome(2.5, 0.0)], flows(0.0, 1.0, cfg=cfg), cfg)
    assert math.isclose(obj.deadline_penalty, 5.0) and math.isclose(obj.reward, -obj.p2_value - 5.0)


def test_lower_backlog_at_equal_cost_raises_reward():
    out = [outcome(0.8, 145.0)]
    f = flows(3.0, 1.0)
    hi = lyapunov.slot_reward(state(RAW, [5.0], [0.0]), out, f, RAW)
    lo = lyapunov.slot_reward(state(RAW, [2.0], [0.0]), out, f, RAW)
    assert lo > hi


backlog = st.floats(0, 1e12)
flow = st.floats(0, 1e12)


@given(
    st.lists(backlog, min_size=2, max_size=2), st.lists(backlog, min_size=2, max_size=2), st.floats(0, 1e5),
    st.lists(flow, min_size=2, max_size=2), st.lists(flow, min_size=2, max_size=2),
    st.lists(flow, min_size=4, max_size=4), st.lists(flow, min_size=2, max_size=2), st.floats(0, 1e5),
    st.sampled_from([1.0, 1e9]),
)
def test_drift_bound_holds_for_any_state(loc, rsu, v, a_loc, s_loc, a_rsu, s_rsu, e, unit):
    cfg = ScenarioConfig(num_cvs=2, num_rsus=2, queue_unit_cycles=unit)
    z = state(cfg, loc, rsu, v)
    a_rsu = np.reshape(a_rsu, (2, 2))
    f = SlotFlows(np.array(a_loc), np.array(s_loc), a_rsu, np.array(s_rsu), e)
    z_next = z.step(a_loc, s_loc, a_rsu, s_rsu, e, cfg)
    realized, bound, tol = lyapunov.lemma_slack(z, z_next, f, cfg)
    assert realized <= bound + tol


@given(st.lists(st.tuples(st.floats(0, 5), st.floats(0, 500), st.floats(0, 10)), min_size=2, max_size=12))
def test_argmin_p2_equals_argmax_reward(candidates):
    z = state(RAW, [2.0], [1.0], v=3.0)
    p2 = [lyapunov.p2_objective(z, [outcome(t, e)], flows(a, 1.0), RAW) for t, e, a in candidates]
    rewards = [lyapunov.slot_reward(z, [outcome(t, e)], flows(a, 1.0), RAW) for t, e, a in candidates]
    # candidates within the deadline are ranked identically
    keep = [i for i, (t, _, _) in enumerate(candidates) if t <= RAW.t_max_s]
    if keep:
        assert min(keep, key=lambda i: p2[i]) == max(keep, key=lambda i: rewards[i])


@given(st.lists(st.floats(0, 2000), min_size=1, max_size=100), st.floats(1, 1000))
def test_energy_chain_on_any_trajectory(energies, budget):
    cfg = ScenarioConfig(energy_budget_w=budget)
    z = QueueState.initial(cfg)
    for e in energies:
        z = z.step(np.zeros(5), np.ones(5), np.zeros((5, 3)), np.ones(3), e, cfg)
    lhs, rhs = lyapunov.energy_chain(energies, z.virtual_energy, cfg)
    assert lhs <= rhs + 1e-9 * max(1.0, abs(lhs), budget)


def test_slot_row_columns():
    z = state(RAW, [2.0], [0.0])
    row = lyapunov.slot_row(3, lyapunov.evaluate_slot(z, [outcome(0.8, 145.0)], flows(3.0, 1.0), RAW))
    assert tuple(row) == lyapunov.SLOT_COLUMNS
    assert row["drift"] == 4.0 and row["bound_b"] == 2.0 and row["lyapunov"] == 2.0
