import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecoffload.config import ScenarioConfig
from vecoffload.env import VecEnv
from vecoffload.marl import checkpoint, ppo
from vecoffload.marl.nets import Adam, GaussianPolicy, Mlp, clip_by_norm
from vecoffload.marl.trainer import MappoTrainer, PolicyParams, TrainedPolicy, TrainerConfig, TrainingDivergence

H = 1e-5


def central_diff(f, x):
    g = np.zeros_like(x)
    for j in range(len(x)):
        up, down = x.copy(), x.copy()
        up[j] += H
        down[j] -= H
        g[j] = (f(up) - f(down)) / (2 * H)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def random_net(rng):
    depth = int(rng.integers(1, 4))
    return Mlp(tuple(int(s) for s in rng.integers(1, 9, size=depth + 1)))


def test_param_count():
    assert Mlp((3, 5, 2)).num_params == 3 * 5 + 5 + 5 * 2 + 2


def test_zero_weights_output_final_bias():
    net = Mlp((4, 3, 2))
    params = np.zeros(net.num_params)
    params[-2:] = [0.5, -1.5]
    out = net.forward(params, np.random.default_rng(0).normal(size=(6, 4)))
    assert np.array_equal(out, np.tile([0.5, -1.5], (6, 1)))


def test_batched_forward_equals_per_sample():
    rng = np.random.default_rng(0)
    net = Mlp((5, 8, 8, 3))
    params = net.init(rng, out_scale=1.0)
    x = rng.normal(size=(10, 5))
    batched = net.forward(params, x)
    single = np.vstack([net.forward(params, row[None, :]) for row in x])
    assert np.allclose(batched, single, rtol=1e-14, atol=1e-15)


def test_forward_rejects_bad_input():
    with pytest.raises(ValueError):
        Mlp((3, 2)).forward(np.zeros(8), np.zeros((1, 4)))
    with pytest.raises(ValueError):
        Mlp((3,))


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(20):
        net = random_net(rng)
        params = net.init(rng, out_scale=1.0) + rng.normal(0, 0.1, net.num_params)
        x = rng.normal(size=(4, net.sizes[0]))
        g_out = rng.normal(size=(4, net.sizes[-1]))
        _, acts = net.forward(params, x, keep=True)
        analytic = net.backward(params, acts, g_out)
        numeric = central_diff(lambda p: float((net.forward(p, x) * g_out).sum()), params)
        assert rel_err(analytic, numeric) < 1e-4


def test_policy_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pol = GaussianPolicy(random_net(rng))
        theta = pol.init(rng, log_std=float(rng.uniform(-1, 0.5)))
        theta[: pol.mlp.num_params] += rng.normal(0, 0.3, pol.mlp.num_params)
        obs = rng.normal(size=(5, pol.mlp.sizes[0]))
        act = rng.normal(size=(5, pol.act_dim))
        dlogp = rng.normal(size=5)
        dent = float(rng.normal())
        _, analytic = pol.log_prob_and_grad(theta, obs, act, dlogp, dent)

        def f(t):
            return float((dlogp * pol.log_prob(t, obs, act)).sum()) + dent * pol.entropy(t)

        assert rel_err(analytic, central_diff(f, theta)) < 1e-4


def test_critic_loss_gradient():
    pred = np.array([0.0, 0.0])
    loss, grad = ppo.critic_loss(pred, [1.0, 3.0])
    assert loss == 5.0 and grad.tolist() == [-1.0, -3.0]
    assert ppo.critic_loss([2.0, 2.0], [2.0, 2.0])[0] == 0.0
    rng = np.random.default_rng(0)
    p, r = rng.normal(size=7), rng.normal(size=7)
    numeric = central_diff(lambda x: ppo.critic_loss(x, r)[0], p)
    assert rel_err(ppo.critic_loss(p, r)[1], numeric) < 1e-6


def test_policy_sampling_limits():
    rng = np.random.default_rng(0)
    pol = GaussianPolicy(Mlp((3, 4, 2)))
    theta = pol.init(rng, log_std=-60.0)
    obs = rng.normal(size=(1, 3))
    action, _ = pol.sample(theta, obs, rng)
    assert np.allclose(action, pol.mean(theta, obs), rtol=0, atol=1e-20)
    theta = pol.init(rng, log_std=-0.3)
    mu = pol.mean(theta, obs)
    expected = -2 * -0.3 - 0.5 * 2 * math.log(2 * math.pi)
    assert math.isclose(float(pol.log_prob(theta, obs, mu)[0]), expected, rel_tol=1e-12)


def test_policy_sample_mean_monte_carlo():
    rng = np.random.default_rng(3)
    pol = GaussianPolicy(Mlp((3, 4, 2)))
    theta = pol.init(rng, log_std=0.2)
    obs = rng.normal(size=(1, 3))
    n = 100_000
    actions, logps = pol.sample(theta, np.repeat(obs, n, axis=0), rng)
    assert np.all(np.isfinite(logps))
    assert np.all(np.abs(actions.mean(axis=0) - pol.mean(theta, obs)[0]) <= 3 * math.exp(0.2) / math.sqrt(n))


def test_adam_matches_reference_update():
    opt = Adam(2, lr=0.1)
    p = np.array([1.0, -2.0])
    g = np.array([0.5, -0.25])
    p1 = opt.step(p, g)
    # first bias-corrected step moves every coordinate by lr * sign(g)
    assert np.allclose(p1, p - 0.1 * np.sign(g), rtol=1e-7)
    x = np.array([3.0, -4.0])
    opt = Adam(2, lr=0.05)
    for _ in range(2000):
        x = opt.step(x, 2 * x)
    assert np.linalg.norm(x) < 1e-2


def test_clip_by_norm():
    g, norm = clip_by_norm(np.array([3.0, 4.0]), 1.0)
    assert norm == 5.0 and np.allclose(g, [0.6, 0.8])
    g, _ = clip_by_norm(np.array([0.3, 0.4]), 1.0)
    assert g.tolist() == [0.3, 0.4]


def brute_gae(r, v, dones, gamma, lam, last=0.0):
    n = len(r)
    nxt = np.append(v[1:], last)
    delta = [r[t] + gamma * nxt[t] * (1 - dones[t]) - v[t] for t in range(n)]
    adv = []
    for t in range(n):
        total, weight = 0.0, 1.0
        for k in range(t, n):
            total += weight * delta[k]
            if dones[k]:
                break
            weight *= gamma * lam
        adv.append(total)
    return np.array(adv)


def test_gae_single_terminal_step():
    adv, ret = ppo.compute_gae([2.0], [0.5], [1.0], 0.99, 0.95)
    assert adv.tolist() == [1.5] and ret.tolist() == [2.0]


def test_gae_lambda_zero_is_td_error():
    r, v = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.1, 0.2])
    adv, _ = ppo.compute_gae(r, v, [0, 0, 1], 0.9, 0.0)
    assert np.allclose(adv, [1.0 + 0.9 * 0.1 - 0.5, 2.0 + 0.9 * 0.2 - 0.1, 3.0 - 0.2], rtol=0, atol=1e-15)


def test_gae_length_three_hand_unrolled():
    g, lam = 0.99, 0.95
    r, v = np.array([1.0, -2.0, 0.5]), np.array([0.3, -0.1, 0.7])
    d0 = r[0] + g * v[1] - v[0]
    d1 = r[1] + g * v[2] - v[1]
    d2 = r[2] - v[2]
    hand = [d0 + g * lam * d1 + (g * lam) ** 2 * d2, d1 + g * lam * d2, d2]
    adv, _ = ppo.compute_gae(r, v, [0, 0, 1], g, lam)
    assert np.max(np.abs(adv - hand)) <= 1e-12
    assert np.max(np.abs(adv - brute_gae(r, v, [0, 0, 1], g, lam))) <= 1e-12


@settings(max_examples=200)
@given(
    st.integers(1, 30).flatmap(lambda n: st.tuples(
        st.lists(st.floats(-100, 100), min_size=n, max_size=n),
        st.lists(st.floats(-100, 100), min_size=n, max_size=n),
        st.lists(st.booleans(), min_size=n, max_size=n),
    )),
    st.floats(0, 1), st.floats(0, 1), st.floats(-100, 100),
)
def test_gae_equals_brute_force(data, gamma, lam, last):
    r, v, d = (np.array(x, dtype=float) for x in data)
    adv, ret = ppo.compute_gae(r, v, d, gamma, lam, last)
    expected = brute_gae(r, v, d, gamma, lam, last)
    assert np.allclose(adv, expected, rtol=1e-9, atol=1e-9)
    assert np.allclose(ret, adv + v)


def test_ppo_clip_examples():
    assert ppo.clipped_objective([1.5], [1.0], 0.2).tolist() == [1.2]
    assert ppo.clipped_objective([0.5], [-1.0], 0.2).tolist() == [-0.8]
    adv = np.array([0.3, -1.0, 2.0])
    loss, grad, frac = ppo.ppo_actor_loss(np.zeros(3), np.zeros(3), adv, 0.2)
    assert math.isclose(-loss, adv.mean()) and frac == 0.0
    assert np.allclose(grad, -adv / 3)


def test_ppo_gradient_vanishes_where_clipped():
    logp_new = np.log([1.5, 0.5, 1.1])
    _, grad, frac = ppo.ppo_actor_loss(logp_new, np.zeros(3), [1.0, -1.0, 1.0], 0.2)
    assert grad[0] == 0.0 and grad[1] == 0.0 and grad[2] != 0.0
    assert math.isclose(frac, 2 / 3)


@given(st.lists(st.tuples(st.floats(0.01, 10), st.floats(-10, 10)), min_size=1, max_size=20), st.floats(0.01, 0.9))
def test_clipped_objective_below_unclipped(samples, eps):
    ratio, adv = (np.array(x) for x in zip(*samples))
    assert np.all(ppo.clipped_objective(ratio, adv, eps) <= ratio * adv + 1e-12)


def test_ppo_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    logp_old = rng.normal(size=9)
    logp_new = logp_old + rng.normal(0, 0.5, size=9)
    adv = rng.normal(size=9)
    _, grad, _ = ppo.ppo_actor_loss(logp_new, logp_old, adv, 0.2)
    numeric = central_diff(lambda x: ppo.ppo_actor_loss(x, logp_old, adv, 0.2)[0], logp_new)
    assert rel_err(grad, numeric) < 1e-6


# ---------------------------------------------------------------- trainer

SMALL = ScenarioConfig(num_cvs=2, num_rsus=1, episode_slots=6)


def small_trainer(**kw):
    base = dict(hidden=(8, 8), epochs=2, batch_size=8, episodes_per_update=2, learning_rate=1e-3, seed=4)
    base.update(kw)
    return MappoTrainer(TrainerConfig(**base), VecEnv(SMALL, seed=9))


def test_zero_learning_rate_keeps_parameters():
    trainer = small_trainer(learning_rate=0.0)
    before = trainer.params.copy()
    trainer.train(4)
    assert all(np.array_equal(a, b) for a, b in zip(before.actor_params, trainer.params.actor_params))
    assert np.array_equal(before.critic_params, trainer.params.critic_params)


def test_training_log_is_deterministic():
    a = small_trainer().train(4).rows
    b = small_trainer().train(4).rows
    assert a == b and len(a) == 4


def test_training_changes_parameters():
    trainer = small_trainer()
    before = trainer.params.copy()
    trainer.train(2)
    assert not np.array_equal(before.actor_params[0], trainer.params.actor_params[0])


def test_ratio_at_collection_is_one():
    from vecoffload.marl.trainer import _Batch

    trainer = small_trainer()
    batch = _Batch()
    trainer.collect_episode(batch)
    obs, actions, logp_old, *_ = batch.arrays()
    for i in range(SMALL.num_cvs):
        logp = trainer.params.actor.log_prob(trainer.params.actor_params[i], obs[:, i], actions[:, i])
        assert np.max(np.abs(np.exp(logp - logp_old[:, i]) - 1.0)) <= 1e-12


def test_nonfinite_training_aborts():
    trainer = small_trainer()
    trainer.params.critic_params[:] = np.nan
    with pytest.raises(TrainingDivergence):
        trainer.train(2)


def test_execution_needs_no_critic():
    rng = np.random.default_rng(0)
    actor = GaussianPolicy.build(5, 4, (8,))
    params = PolicyParams(actor, None, [actor.init(rng), actor.init(rng)], None)
    actions, logps = TrainedPolicy(params).sample(rng.normal(size=(2, 5)), rng)
    assert actions.shape == (2, 4) and np.all(np.isfinite(logps))
    det, _ = TrainedPolicy(params, deterministic=True).sample(np.ones((2, 5)), rng)
    assert np.array_equal(det[0], actor.mean(params.actor_params[0], np.ones(5))[0])


def test_shared_actor_option():
    trainer = small_trainer(share_actor=True)
    assert len(trainer.params.actor_params) == 1
    trainer.train(2)


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(clip_eps=0.0)
    with pytest.raises(ValueError):
        TrainerConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainerConfig(epochs=0)


def test_checkpoint_round_trip(tmp_path):
    trainer = small_trainer()
    path = checkpoint.save_checkpoint(tmp_path / "p.npz", trainer.params, {"seed": 4})
    params, meta = checkpoint.load_checkpoint(path)
    assert meta == {"seed": 4}
    assert params.actor == trainer.params.actor and params.critic == trainer.params.critic
    assert all(np.array_equal(a, b) for a, b in zip(params.actor_params, trainer.params.actor_params))
    assert np.array_equal(params.critic_params, trainer.params.critic_params)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, header=np.array('{"format": "other"}'))
    with pytest.raises(ValueError):
        checkpoint.load_checkpoint(path)
