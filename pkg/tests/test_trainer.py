import numpy as np
import pytest

from bikedqn.neural import MLPSpec
from bikedqn.trainer import (
    MetricsWriter,
    ReplayBuffer,
    TrainerConfig,
    epsilon_at,
    masked_argmax,
    select_action,
    td_targets,
    train,
)

from chain_mdp import ChainEnv


def test_epsilon_schedule():
    cfg = TrainerConfig(total_steps=1000)
    assert epsilon_at(0, cfg) == 1.0
    assert epsilon_at(250, cfg) == pytest.approx(0.525)
    assert epsilon_at(500, cfg) == 0.05
    assert epsilon_at(999, cfg) == 0.05


@pytest.mark.parametrize("kw", [{"gamma": 1.5}, {"epsilon_end": -0.1}, {"target_sync": 0},
                                {"batch_size": 64, "buffer_size": 32}])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        TrainerConfig(**kw)


def test_masked_argmax_ignores_illegal_maximum():
    q = np.array([1.0, 9.0, 3.0])
    assert masked_argmax(q, np.array([True, False, True])) == 2


def test_select_action_never_illegal():
    rng = np.random.default_rng(0)
    mask = np.array([False, True, False, True, False])
    q = np.array([100.0, 0.0, 100.0, 1.0, 100.0])
    picks = {select_action(q, mask, 0.5, rng) for _ in range(500)}
    assert picks <= {1, 3} and picks == {1, 3}


def test_select_action_greedy_when_epsilon_zero():
    rng = np.random.default_rng(0)
    assert select_action(np.array([0.0, 2.0, 1.0]), np.ones(3, dtype=bool), 0.0, rng) == 1


def _identity_target(outputs):
    # one hidden unit passes the first input through; output j = values[j] * x0
    spec = MLPSpec(1, len(outputs), (1,))
    params = {"W0": np.array([[1.0]]), "b0": np.zeros(1),
              "W1": np.array([outputs], dtype=float), "b1": np.zeros(len(outputs))}
    return spec, params


def test_td_target_uses_legal_max():
    spec, params = _identity_target([2.0, 5.0, 50.0])
    batch = {"rewards": np.array([0.0]), "dones": np.array([False]),
             "next_obs": np.array([[1.0]]), "next_mask": np.array([[True, True, False]])}
    assert td_targets(batch, spec, params, 0.99)[0] == pytest.approx(4.95)


def test_td_target_terminal_and_myopic():
    spec, params = _identity_target([2.0, 5.0])
    batch = {"rewards": np.array([-3.0, 1.5]), "dones": np.array([True, False]),
             "next_obs": np.ones((2, 1)), "next_mask": np.ones((2, 2), dtype=bool)}
    np.testing.assert_allclose(td_targets(batch, spec, params, 0.9), [-3.0, 1.5 + 4.5])
    np.testing.assert_allclose(td_targets(batch, spec, params, 0.0), [-3.0, 1.5])


def test_replay_buffer_ring_and_sampling():
    buf = ReplayBuffer(3, 2, 2)
    for i in range(5):
        buf.add(np.full(2, i), i % 2, float(i), np.full(2, i + 1), np.ones(2, bool), i == 4)
    assert len(buf) == 3
    assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]
    batch = buf.sample(3, np.random.default_rng(0))
    assert set(batch["rewards"].tolist()) <= {2.0, 3.0, 4.0}
    with pytest.raises(ValueError):
        ReplayBuffer(3, 2, 2).sample(1, np.random.default_rng(0))


def _tiny_config(**kw):
    base = dict(total_steps=600, hidden=(8,), batch_size=16, buffer_size=200, learning_starts=50,
                target_sync=20, learning_rate=1e-3, gamma=0.9, seed=4)
    return TrainerConfig(**{**base, **kw})


def test_training_is_deterministic():
    a = train(ChainEnv(), [0, 1], _tiny_config())
    b = train(ChainEnv(), [0, 1], _tiny_config())
    assert [repr(m) for m in a.metrics] == [repr(m) for m in b.metrics]
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_metrics_writer(tmp_path):
    path = tmp_path / "metrics.csv"
    w = MetricsWriter(path)
    res = train(ChainEnv(), [3], _tiny_config(total_steps=100, learning_starts=1000), on_episode=w)
    w.close()
    lines = path.read_text().splitlines()
    assert lines[0] == "global_step,episode,episodic_return,episodic_length,td_loss,mean_q,epsilon"
    assert len(lines) == len(res.metrics) + 1
    # no learner steps yet
    assert lines[1].split(",")[4] == "nan"


def test_reward_scale_keeps_logged_return_unscaled():
    res = train(ChainEnv(), [3], _tiny_config(total_steps=50, reward_scale=0.1))
    assert all(m.episodic_return == 10.0 - (m.episodic_length - 1) for m in res.metrics)


def test_checkpoints_written(tmp_path):
    train(ChainEnv(), [0], _tiny_config(total_steps=200, checkpoint_every=100), checkpoint_dir=tmp_path,
          checkpoint_metadata={"policy": "chain"})
    assert sorted(p.name for p in tmp_path.iterdir()) == ["step_00000100.ckpt", "step_00000200.ckpt"]


def test_td_target_time_discount():
    spec, params = _identity_target([2.0, 5.0])
    batch = {"rewards": np.zeros(2), "dones": np.array([False, False]), "durations": np.array([0.0, 8.0]),
             "next_obs": np.ones((2, 1)), "next_mask": np.ones((2, 2), dtype=bool)}
    np.testing.assert_allclose(td_targets(batch, spec, params, 0.9, time_unit=4.0), [5.0, 5.0 * 0.81])
