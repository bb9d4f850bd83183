import numpy as np
import pytest
import torch
from pydantic import ValidationError

from lcmopg import trainer
from lcmopg.envs import make_env
from lcmopg.errors import ContractViolation, DivergenceError, NonFiniteError
from lcmopg.harness.presets import PUBLISHED
from lcmopg.harness.spec import DEFAULT_HV_DIVISORS, DEFAULT_REFS
from lcmopg.neural import make_generator
from lcmopg.policy import (
    LatentConditionedPolicy,
    PolicyConfig,
    episode_rngs,
    load_policy,
    rollout_batch,
    sample_latents,
)
from lcmopg.trainer import (
    GeneralizedValueNets,
    RolloutBuffer,
    TrainConfig,
    evaluate,
    final_evaluation,
    train_lcmopg,
    train_lcmopg_v,
)

DST_REF = (0.0, -19.0)


def _small(**overrides):
    values = dict(d_lat=2, n_lat_train=12, n_lat_test=8, k=3, width=8, depth=2, iterations=2,
                  max_episode_len_train=20, max_episode_len_test=20, workers=1, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


def _dst():
    return make_env("dst-convex")


def _trajectories(policy, env, n=6, seed=0):
    return rollout_batch(policy, env, sample_latents(np.random.default_rng(seed), n, policy.config.d_lat), 0.99, 20,
                         episode_rngs(seed, 0, 0, n))


def _policy(env, d_lat=2):
    return LatentConditionedPolicy(PolicyConfig.for_env(env.descriptor, d_lat=d_lat, width=8, depth=2))


def test_config_rules():
    assert TrainConfig().clip_scores
    assert not TrainConfig(variant="pg-v").clip_scores
    assert TrainConfig(variant="pg-v", clip=True).clip_scores
    with pytest.raises(ValidationError):
        TrainConfig(n_lat_train=10, k=10)
    with pytest.raises(ValidationError):
        TrainConfig(gamma=0.0)


def test_variant_guards():
    with pytest.raises(ContractViolation):
        train_lcmopg(_small(variant="pg-v"), _dst, DST_REF)
    with pytest.raises(ContractViolation):
        train_lcmopg_v(_small(), _dst, DST_REF)


def test_zero_iterations_returns_initial_policy():
    config = _small(iterations=0)
    policy, history = train_lcmopg(config, _dst, DST_REF)
    assert history.rows == []
    assert history.best_iteration is None
    fresh = LatentConditionedPolicy(policy.config, make_generator(config.seed))
    for a, b in zip(policy.parameters(), fresh.parameters()):
        torch.testing.assert_close(a, b, rtol=0, atol=0)


def test_training_is_reproducible():
    runs = [train_lcmopg(_small(), _dst, DST_REF) for _ in range(2)]
    (pa, ha), (pb, hb) = runs
    for ra, rb in zip(ha.rows, hb.rows):
        assert (ra.iteration, ra.test_hv, ra.loss, ra.mean_abs_F) == (rb.iteration, rb.test_hv, rb.loss, rb.mean_abs_F)
    for a, b in zip(pa.parameters(), pb.parameters()):
        torch.testing.assert_close(a, b, rtol=0, atol=0)


def test_training_updates_parameters_and_history(tmp_path):
    seen = []
    config = _small(iterations=3, record_better_half=True)
    policy, history = train_lcmopg(config, _dst, DST_REF, run_dir=tmp_path, on_iteration=seen.append)
    assert [r.iteration for r in history.rows] == [1, 2, 3] == [r.iteration for r in seen]
    assert all(r.mean_abs_F >= 0 for r in history.rows)
    assert all(r.max_episode_length <= 20 for r in history.rows)
    assert history.best_hv == max(r.test_hv for r in history.rows)
    assert [it for it, _ in history.better_half] == [1, 2, 3]
    assert (tmp_path / "best_policy.pt").is_file()
    _, meta = load_policy(tmp_path / "best_policy.pt")
    assert meta["env"] == "dst-convex"
    assert meta["gamma"] == config.gamma
    assert meta["iteration"] == history.best_iteration


def test_eval_interval_skips_monitoring():
    _, history = train_lcmopg(_small(iterations=3, eval_interval=2), _dst, DST_REF)
    hvs = [r.test_hv for r in history.rows]
    assert np.isnan(hvs[0])
    assert not np.isnan(hvs[1]) and not np.isnan(hvs[2])


def test_lcmopg_v_runs():
    policy, history = train_lcmopg_v(_small(variant="pg-v"), _dst, DST_REF)
    assert len(history.rows) == 2
    assert all(np.isfinite(r.loss) for r in history.rows)


def test_lcmopg_v_on_continuous_actions():
    config = _small(variant="pg-v", max_episode_len_train=5, max_episode_len_test=5, normalization="robust")
    _, history = train_lcmopg_v(config, lambda: make_env("lqg2d"), (-310.0, -310.0), hv_divisor=160.0**2)
    assert len(history.rows) == 2


def test_divergence_restores_last_finite_parameters(tmp_path, monkeypatch):
    real = trainer.policy_loss_and_grad
    calls = {"n": 0}

    def flaky(policy, batch, weights):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NonFiniteError("Non-finite policy loss", {"loss": float("nan")})
        return real(policy, batch, weights)

    monkeypatch.setattr(trainer, "policy_loss_and_grad", flaky)
    with pytest.raises(DivergenceError) as e:
        train_lcmopg(_small(iterations=4), _dst, DST_REF, run_dir=tmp_path)
    assert e.value.iteration == 2
    assert e.value.checkpoint_path == tmp_path / "last_finite.pt"
    restored, meta = load_policy(tmp_path / "last_finite.pt")
    assert meta["iteration"] == 1
    assert all(torch.all(torch.isfinite(p)) for p in restored.parameters())


def test_rollout_buffer():
    env = _dst()
    trajs = _trajectories(_policy(env), env, n=4)
    buffer = RolloutBuffer()
    buffer.add(trajs, np.array([1.0, 2.0, 3.0, 4.0]), iteration=5)
    total = sum(t.length for t in trajs)
    assert len(buffer) == total
    assert buffer.observations.shape == (total, 2)
    for i, t in enumerate(trajs):
        np.testing.assert_array_equal(buffer.scores[buffer.trajectory_ids == i], i + 1.0)
    assert np.all(buffer.iterations == 5)
    batches = list(buffer.minibatches(3, np.random.default_rng(0)))
    np.testing.assert_array_equal(np.sort(np.concatenate(batches)), np.arange(total))
    buffer.clear()
    assert len(buffer) == 0
    with pytest.raises(ContractViolation):
        buffer.add(trajs, np.zeros(3), iteration=0)


def test_value_nets_on_constant_scores_give_zero_advantage():
    env = _dst()
    policy = _policy(env)
    trajs = _trajectories(policy, env, n=10)
    buffer = RolloutBuffer()
    buffer.add(trajs, np.full(10, 3.0), iteration=1)
    nets = GeneralizedValueNets(policy.config, width=8, depth=2, lr=1e-2)
    rng = np.random.default_rng(0)
    nets.fit(buffer, epochs=400, batch_size=32, rng=rng)
    for t in trajs:
        assert np.max(np.abs(nets.corrected_scores(t))) < 0.1


def test_value_fit_on_empty_buffer():
    nets = GeneralizedValueNets(_policy(_dst()).config, width=4, depth=1)
    assert nets.fit(RolloutBuffer(), 1, 8, np.random.default_rng(0)) == (0.0, 0.0)


def test_evaluate_deterministic_env_ignores_episode_count():
    env = _dst()
    policy = _policy(env)
    one = evaluate(policy, lambda: env, 20, 1, 0.99, DST_REF, np.random.default_rng(0), max_steps=20)
    five = evaluate(policy, lambda: env, 20, 5, 0.99, DST_REF, np.random.default_rng(0), max_steps=20)
    np.testing.assert_array_equal(one[0].points, five[0].points)
    assert one[1] == five[1]
    single, _ = evaluate(policy, lambda: env, 1, 1, 0.99, DST_REF, np.random.default_rng(0), max_steps=20)
    assert len(single) == 1
    assert single.payloads[0].shape == (2,)


def test_evaluate_noisy_env_averages_episodes():
    env = make_env("lqg2d-noisy", max_episode_len=5)
    policy = _policy(env)
    archive, hv = evaluate(policy, lambda: env, 4, 3, 0.9, (-310.0, -310.0), np.random.default_rng(0), hv_divisor=160.0**2)
    assert 1 <= len(archive) <= 4
    assert hv >= 0.0
    with pytest.raises(ContractViolation):
        evaluate(policy, lambda: env, 0, 1, 0.9, (-310.0, -310.0), np.random.default_rng(0))


def test_final_evaluation_uses_test_population():
    config = _small(iterations=0, n_lat_test=5)
    policy, _ = train_lcmopg(config, _dst, DST_REF)
    archive, hv = final_evaluation(policy, config, _dst, DST_REF)
    assert 1 <= len(archive) <= 5
    again, hv_again = final_evaluation(policy, config, _dst, DST_REF)
    np.testing.assert_array_equal(archive.points, again.points)
    assert hv == hv_again


def test_explicit_zero_episode_cap_is_kept():
    config = _small(iterations=1, max_episode_len_train=0, max_episode_len_test=0)
    _, history = train_lcmopg(config, _dst, DST_REF)
    assert history.rows[0].max_episode_length == 0
    assert history.rows[0].test_hv == 0.0
    archive, hv = final_evaluation(_policy(_dst()), _small(d_lat=2, max_episode_len_test=0), _dst, DST_REF)
    assert hv == 0.0
    assert np.all(archive.points == 0.0)


@pytest.mark.slow
def test_unclipped_lqg2d_training_stays_bounded(tmp_path):
    values = {key: v for key, v in PUBLISHED["lqg2d"].items() if not key.startswith("value_")}
    config = TrainConfig(**{**values, "iterations": 100, "clip": False, "workers": 1})
    try:
        _, history = train_lcmopg(config, lambda: make_env("lqg2d"), DEFAULT_REFS["lqg2d"],
                                  hv_divisor=DEFAULT_HV_DIVISORS["lqg2d"], run_dir=tmp_path)
    except DivergenceError as e:
        restored, _ = load_policy(e.checkpoint_path)
        assert all(torch.all(torch.isfinite(p)) for p in restored.parameters())
        return
    hvs = np.array([r.test_hv for r in history.rows])
    assert np.all(np.isfinite(hvs))
    # a learned front cannot beat the Riccati-optimal one
    assert np.all((hvs >= 0.0) & (hvs <= 1.1646 * 1.01))
