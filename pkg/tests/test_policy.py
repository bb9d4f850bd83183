import warnings

import numpy as np
import pytest
import torch

from lcmopg.envs import make_env
from lcmopg.errors import CheckpointError, ContractViolation
from lcmopg.neural import AdamOptimizer, categorical_probs, categorical_sample_rows
from lcmopg.policy import (
    LatentConditionedPolicy,
    PolicyConfig,
    Trajectory,
    act_deterministic,
    act_stochastic,
    check_policy_matches_env,
    episode_rngs,
    latent_rng,
    load_policy,
    policy_loss_and_grad,
    rollout,
    rollout_batch,
    sample_latent,
    sample_latents,
    save_policy,
)

DOWN = 1


def _dst_policy(**kwargs):
    env = make_env("dst-convex")
    config = PolicyConfig.for_env(env.descriptor, d_lat=3, width=12, depth=3, **kwargs)
    return env, LatentConditionedPolicy(config)


def _always(policy, action):
    last = policy.trunk.net[-2]
    with torch.no_grad():
        last.weight.zero_()
        last.bias.fill_(-20.0)
        last.bias[action] = 20.0
    return policy


def test_sample_latent():
    c = sample_latent(np.random.default_rng(0), 3)
    assert c.shape == (3,)
    assert np.all((c >= 0) & (c <= 1))
    np.testing.assert_array_equal(c, sample_latent(np.random.default_rng(0), 3))


def test_latent_moments():
    draws = sample_latents(np.random.default_rng(1), 100_000, 2)
    np.testing.assert_allclose(draws.mean(axis=0), 0.5, atol=0.005)


def test_rng_streams_are_distinct():
    a = latent_rng(0, 0, 3).random()
    b = latent_rng(0, 1, 3).random()
    c = episode_rngs(0, 0, 3, 1)[0].random()
    assert len({a, b, c}) == 3


def test_policy_config_validation():
    env = make_env("lqg2d")
    config = PolicyConfig.for_env(env.descriptor, d_lat=2, width=8, depth=2)
    assert config.head == "beta"
    assert config.box.lower == -15.0
    with pytest.raises(ContractViolation):
        PolicyConfig.for_env(env.descriptor, d_lat=2, width=8, depth=2, state_embedding=(5, 5))
    with pytest.raises(ValueError):
        PolicyConfig(state_dim=2, head="categorical", action_dim=4, d_lat=3, width=8, depth=2, state_embedding=(5,))


def test_policy_rejects_wrong_widths():
    _, policy = _dst_policy()
    with pytest.raises(ContractViolation):
        policy([0.0, 0.0, 0.0], [0.5, 0.5, 0.5])
    with pytest.raises(ContractViolation):
        policy([0.0, 0.0], [0.5, 0.5])


def test_state_embedding_widths():
    _, policy = _dst_policy(state_embedding=(4, 6))
    assert policy.state_tower.in_features == 10
    logits = policy([[0.1, 0.2]], [[0.3, 0.4, 0.5]])
    assert logits.shape == (1, 4)


def test_act_stochastic_is_reproducible():
    env, policy = _dst_policy()
    observation = env.observe(env.reset(np.random.default_rng(0)))
    latent = np.array([0.2, 0.5, 0.9])
    first = act_stochastic(policy, observation, latent, np.random.default_rng(7))
    second = act_stochastic(policy, observation, latent, np.random.default_rng(7))
    assert first == second
    assert first[0] in range(4)
    assert first[1] <= 0.0


def test_samples_follow_policy_probabilities():
    env, policy = _dst_policy()
    state = env.observe(env.reset(np.random.default_rng(0)))
    head = policy.head(np.repeat(state[None, :], 10_000, axis=0), np.tile([0.3, 0.6, 0.1], (10_000, 1)))
    probs = categorical_probs(head)[0].detach().numpy()
    rngs = [np.random.default_rng(i) for i in range(10_000)]
    freq = np.bincount(categorical_sample_rows(head, rngs), minlength=4) / 10_000
    sigma = np.sqrt(probs * (1 - probs) / 10_000)
    assert np.all(np.abs(freq - probs) <= 4 * sigma + 1e-12)


def test_fresh_policy_does_not_collapse():
    env, policy = _dst_policy()
    state = env.observe(env.reset(np.random.default_rng(0)))
    latents = sample_latents(np.random.default_rng(2), 2000, 3)
    head = policy.head(np.repeat(state[None, :], 2000, axis=0), latents)
    marginal = categorical_probs(head).detach().numpy().mean(axis=0)
    assert np.all((marginal > 0.05) & (marginal < 0.6))


def test_fresh_beta_policy_spans_the_box():
    env = make_env("lqg2d")
    policy = LatentConditionedPolicy(PolicyConfig.for_env(env.descriptor, d_lat=2, width=8, depth=3))
    rng = np.random.default_rng(0)
    actions = np.array([act_stochastic(policy, [10.0, 10.0], [0.5, 0.5], rng)[0] for _ in range(500)])
    assert np.all(np.abs(actions) <= 15.0)
    assert actions.min() < -5.0 and actions.max() > 5.0


def test_act_deterministic():
    policy = _always(_dst_policy()[1], 2)
    assert act_deterministic(policy, [0.0, 0.0], [0.1, 0.1, 0.1]) == 2
    env = make_env("lqg2d")
    beta_policy = LatentConditionedPolicy(PolicyConfig.for_env(env.descriptor, d_lat=2, width=8, depth=2))
    last = beta_policy.trunk.net[-2]
    with torch.no_grad():
        last.weight.zero_()
        last.bias.zero_()
    # equal alpha and beta: mean 0.5 maps to the box center
    np.testing.assert_allclose(act_deterministic(beta_policy, [1.0, 1.0], [0.5, 0.5]), [0.0, 0.0], atol=1e-12)


def test_one_step_down_reaches_first_treasure():
    env, policy = _dst_policy()
    policy = _always(policy, DOWN)
    traj = rollout(policy, env, [0.5, 0.5, 0.5], 0.99, 50, np.random.default_rng(0), mode="deterministic")
    assert traj.length == 1
    np.testing.assert_allclose(traj.return_, [0.7, -1.0])
    stochastic = rollout(policy, env, [0.5, 0.5, 0.5], 0.99, 50, np.random.default_rng(0))
    np.testing.assert_allclose(stochastic.return_, [0.7, -1.0])


def test_zero_steps_gives_empty_trajectory():
    env, policy = _dst_policy()
    traj = rollout(policy, env, [0.5, 0.5, 0.5], 0.99, 0, np.random.default_rng(0))
    assert traj.length == 0
    np.testing.assert_array_equal(traj.return_, [0.0, 0.0])
    np.testing.assert_array_equal(traj.discounted_return(), [0.0, 0.0])


def test_return_matches_discounted_rewards():
    env, policy = _dst_policy()
    traj = rollout(policy, env, [0.1, 0.7, 0.3], 0.9, 50, np.random.default_rng(3))
    np.testing.assert_allclose(traj.return_, traj.discounted_return())
    assert len(traj.transitions) == traj.length


def test_rollout_batch_independent_of_workers():
    env, policy = _dst_policy()
    latents = sample_latents(np.random.default_rng(4), 8, 3)
    serial = rollout_batch(policy, env, latents, 0.99, 50, episode_rngs(0, 0, 0, 8))
    threaded = rollout_batch(policy, env, latents, 0.99, 50, episode_rngs(0, 0, 0, 8), workers=2)
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.return_, b.return_)


def test_rollout_batch_matches_single_rollouts():
    env, policy = _dst_policy()
    latents = sample_latents(np.random.default_rng(5), 3, 3)
    batch = rollout_batch(policy, env, latents, 0.99, 50, episode_rngs(1, 0, 0, 3))
    for latent, rng, traj in zip(latents, episode_rngs(1, 0, 0, 3), batch):
        single = rollout(policy, env, latent, 0.99, 50, rng)
        np.testing.assert_array_equal(single.actions, traj.actions)


def test_rollout_batch_contract():
    env, policy = _dst_policy()
    with pytest.raises(ContractViolation):
        rollout_batch(policy, env, np.zeros((2, 3)), 0.99, 5, episode_rngs(0, 0, 0, 1))
    with pytest.raises(ContractViolation):
        rollout_batch(policy, env, np.zeros((1, 3)), 0.0, 5, episode_rngs(0, 0, 0, 1))


def test_zero_weights_give_zero_loss():
    env, policy = _dst_policy()
    trajs = rollout_batch(policy, env, sample_latents(np.random.default_rng(0), 4, 3), 0.99, 20, episode_rngs(0, 0, 0, 4))
    loss, grads = policy_loss_and_grad(policy, trajs, np.zeros(4))
    assert loss == 0.0
    assert all(torch.count_nonzero(g) == 0 for g in grads)


def _loss(policy, traj, weight):
    with torch.no_grad():
        logp = policy.log_prob(traj.observations, np.repeat(traj.latent[None, :], traj.length, axis=0), traj.actions)
    return -float(weight * logp.sum())


@pytest.mark.parametrize("env_id", ["dst-convex", "lqg2d"])
def test_gradient_matches_finite_differences(env_id):
    env = make_env(env_id)
    policy = LatentConditionedPolicy(PolicyConfig.for_env(env.descriptor, d_lat=2, width=6, depth=2))
    traj = rollout(policy, env, [0.3, 0.8], 0.9, 5, np.random.default_rng(0))
    loss, grads = policy_loss_and_grad(policy, [traj], [1.0])
    assert loss == pytest.approx(_loss(policy, traj, 1.0))
    h = 1e-6
    for param, grad in zip(policy.parameters(), grads):
        flat = param.data.view(-1)
        for idx in range(min(3, flat.numel())):
            orig = flat[idx].item()
            flat[idx] = orig + h
            plus = _loss(policy, traj, 1.0)
            flat[idx] = orig - h
            minus = _loss(policy, traj, 1.0)
            flat[idx] = orig
            assert grad.view(-1)[idx].item() == pytest.approx((plus - minus) / (2 * h), rel=1e-4, abs=1e-6)


def test_per_transition_weights():
    env, policy = _dst_policy()
    traj = rollout(policy, env, [0.3, 0.8, 0.1], 0.9, 5, np.random.default_rng(0))
    scalar, _ = policy_loss_and_grad(policy, [traj], [2.0])
    per_step, _ = policy_loss_and_grad(policy, [traj], [np.full(traj.length, 2.0)])
    assert scalar == pytest.approx(per_step)
    with pytest.raises(ContractViolation):
        policy_loss_and_grad(policy, [traj], [np.ones(traj.length + 1)])


def test_trajectory_length_property():
    traj = Trajectory(latent=np.zeros(2), observations=np.zeros((0, 2)), actions=np.zeros(0), rewards=np.zeros((0, 2)),
                      return_=np.zeros(2), gamma=0.9)
    assert traj.length == 0


def test_policy_checkpoint_round_trip(tmp_path):
    env, policy = _dst_policy(state_embedding=(3, 3))
    path = save_policy(tmp_path / "p.pt", policy, {"gamma": 0.99})
    loaded, meta = load_policy(path)
    assert meta == {"gamma": 0.99}
    assert loaded.config == policy.config
    obs, lat = [[0.1, 0.2]], [[0.3, 0.4, 0.5]]
    torch.testing.assert_close(loaded(obs, lat), policy(obs, lat), rtol=0, atol=0)
    check_policy_matches_env(loaded, env.descriptor)
    with pytest.raises(CheckpointError):
        check_policy_matches_env(loaded, make_env("ftn5").descriptor)


def _dst_batch(policy, env, n=6):
    return rollout_batch(policy, env, sample_latents(np.random.default_rng(8), n, 3), 0.99, 30, episode_rngs(2, 0, 0, n))


def test_doubling_weights_doubles_loss_and_gradient():
    env, policy = _dst_policy()
    trajs = _dst_batch(policy, env)
    weights = np.linspace(0.5, 1.5, len(trajs))
    loss, grads = policy_loss_and_grad(policy, trajs, weights)
    loss2, grads2 = policy_loss_and_grad(policy, trajs, 2 * weights)
    assert loss2 == pytest.approx(2 * loss, rel=1e-12)
    for g, g2 in zip(grads, grads2):
        torch.testing.assert_close(g2, 2 * g, rtol=1e-12, atol=1e-14)


def test_small_adam_step_lowers_the_loss():
    env, policy = _dst_policy()
    trajs = _dst_batch(policy, env)
    weights = np.ones(len(trajs))
    before, grads = policy_loss_and_grad(policy, trajs, weights)
    AdamOptimizer(policy.parameters(), lr=1e-4).step(grads)
    after, _ = policy_loss_and_grad(policy, trajs, weights)
    assert after < before


def test_loss_evaluation_emits_no_warnings():
    env, policy = _dst_policy()
    trajs = _dst_batch(policy, env, n=2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        loss, _ = policy_loss_and_grad(policy, trajs, [1.0, 0.5])
    assert isinstance(loss, float)


def test_act_functions_take_observation_keyword():
    policy = _always(_dst_policy()[1], 2)
    latent = [0.1, 0.1, 0.1]
    assert act_deterministic(policy, observation=[0.0, 0.0], latent=latent) == 2
    action, _ = act_stochastic(policy, observation=[0.0, 0.0], latent=latent, rng=np.random.default_rng(0))
    assert action == 2
