"""Deep Q-learning: replay buffer, epsilon-greedy behaviour, target network."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .neural import Adam, MLPSpec, backward, copy_params, forward, init_params, save_checkpoint

LOG = logging.getLogger(__name__)

METRIC_COLUMNS = ("global_step", "episode", "episodic_return", "episodic_length", "td_loss", "mean_q", "epsilon")


@dataclass(frozen=True)
class TrainerConfig:
    total_steps: int = 3_000_000
    learning_rate: float = 2.5e-4
    gamma: float = 0.99
    batch_size: int = 256
    buffer_size: int = 10_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    exploration_fraction: float = 0.5
    target_sync: int = 1_000
    learning_starts: int = 1_000
    train_freq: int = 4
    hidden: tuple[int, ...] = (1024, 512)
    output_activation: str = "none"
    dtype: str = "float64"
    reward_scale: float = 1.0
    # 0 discounts once per decision epoch; >0 discounts by gamma per this many time units
    discount_time_unit: float = 0.0
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        for name in ("epsilon_start", "epsilon_end", "exploration_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("total_steps", "batch_size", "buffer_size", "target_sync", "train_freq"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.discount_time_unit < 0:
            raise ValueError("discount_time_unit must be nonnegative")
        if self.learning_starts < 0 or self.checkpoint_every < 0:
            raise ValueError("learning_starts and checkpoint_every must be nonnegative")
        if self.batch_size > self.buffer_size:
            raise ValueError("batch_size cannot exceed buffer_size")


def epsilon_at(step: int, config: TrainerConfig) -> float:
    """Linear anneal from epsilon_start to epsilon_end over exploration_fraction of the run."""
    span = config.exploration_fraction * config.total_steps
    if span <= 0 or step >= span:
        return config.epsilon_end
    frac = step / span
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> int:
    """Index of the largest legal Q-value; lowest index wins ties."""
    if not mask.any():
        raise ValueError("no legal action")
    return int(np.argmax(np.where(mask, q, -np.inf)))


def select_action(q_values: np.ndarray | None, mask: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over legal actions.

    ``q_values`` may be a zero-argument callable so the forward pass is skipped
    on exploratory steps; the RNG is consumed identically either way.
    """
    legal = np.flatnonzero(mask)
    if legal.size == 0:
        raise ValueError("no legal action")
    if rng.random() < epsilon:
        return int(legal[rng.integers(legal.size)])
    q = q_values() if callable(q_values) else q_values
    return masked_argmax(np.asarray(q), mask)


class ReplayBuffer:
    """Fixed-size ring buffer of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_size: int, n_actions: int, dtype="float64"):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_size), dtype=dtype)
        self.next_obs = np.zeros((capacity, obs_size), dtype=dtype)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_mask = np.zeros((capacity, n_actions), dtype=bool)
        self.dones = np.zeros(capacity, dtype=bool)
        self.durations = np.ones(capacity, dtype=np.float64)
        self.pos = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward, next_obs, next_mask, done, duration: float = 1.0) -> None:
        i = self.pos
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.next_mask[i] = next_mask
        self.dones[i] = done
        self.durations[i] = duration
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "next_mask": self.next_mask[idx],
            "dones": self.dones[idx],
            "durations": self.durations[idx],
        }


def td_targets(
    batch: dict[str, np.ndarray],
    spec: MLPSpec,
    target_params: dict[str, np.ndarray],
    gamma: float,
    time_unit: float = 0.0,
) -> np.ndarray:
    """r + discount * max over next-step legal actions of the target network; r at terminals.

    The discount is ``gamma`` per transition, or ``gamma ** (duration / time_unit)``
    when ``time_unit`` is positive.
    """
    rewards = batch["rewards"]
    dones = batch["dones"]
    y = rewards.astype(np.float64).copy()
    live = ~dones
    if (gamma == 0.0 and time_unit <= 0) or not live.any():
        return y
    q_next = forward(spec, target_params, batch["next_obs"][live])
    mask = batch["next_mask"][live]
    best = np.where(mask, q_next, -np.inf).max(axis=1)
    if time_unit > 0:
        discount = gamma ** (batch["durations"][live] / time_unit)
    else:
        discount = gamma
    y[live] += discount * best
    return y


class Environment(Protocol):
    n_actions: int
    obs_size: int

    def reset(self, scenario): ...

    def step(self, action): ...


@dataclass
class EpisodeMetrics:
    global_step: int
    episode: int
    episodic_return: float
    episodic_length: int
    td_loss: float
    mean_q: float
    epsilon: float


@dataclass
class TrainResult:
    spec: MLPSpec
    params: dict[str, np.ndarray]
    optimizer: Adam
    metrics: list[EpisodeMetrics] = field(default_factory=list)
    learner_steps: int = 0


class MetricsWriter:
    """Append-only CSV stream of per-episode training metrics."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(METRIC_COLUMNS)

    def __call__(self, m: EpisodeMetrics) -> None:
        self._w.writerow([_fmt(getattr(m, c)) for c in METRIC_COLUMNS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return x


def train(
    env: Environment,
    scenarios: Sequence,
    config: TrainerConfig,
    on_episode: Callable[[EpisodeMetrics], None] | None = None,
    checkpoint_dir: str | Path | None = None,
    checkpoint_metadata: dict | None = None,
) -> TrainResult:
    """Run DQN for ``config.total_steps`` environment decision epochs.

    Each episode replays one scenario (a training day) drawn uniformly with
    replacement. Rewards are multiplied by ``reward_scale`` before storage;
    logged episodic returns are unscaled and undiscounted.
    """
    if not scenarios:
        raise ValueError("need at least one training scenario")
    rng = np.random.default_rng(config.seed)
    spec = MLPSpec(env.obs_size, env.n_actions, config.hidden, config.output_activation, config.dtype)
    params = init_params(spec, config.seed)
    target = copy_params(params)
    opt = Adam(lr=config.learning_rate)
    buffer = ReplayBuffer(config.buffer_size, env.obs_size, env.n_actions, config.dtype)
    result = TrainResult(spec, params, opt)

    obs, mask, _ = env.reset(scenarios[rng.integers(len(scenarios))])
    episode = 0
    ep_return = 0.0
    ep_len = 0
    losses: list[float] = []
    qs: list[float] = []
    for step in range(config.total_steps):
        eps = epsilon_at(step, config)
        action = select_action(lambda: forward(spec, params, obs)[0], mask, eps, rng)
        res = env.step(action)
        buffer.add(obs, action, res.reward * config.reward_scale, res.observation, res.mask, res.done,
                   getattr(res, "duration", 1.0))
        ep_return += res.reward
        ep_len += 1
        obs, mask = res.observation, res.mask

        if step >= config.learning_starts and step % config.train_freq == 0 and len(buffer) >= config.batch_size:
            batch = buffer.sample(config.batch_size, rng)
            y = td_targets(batch, spec, target, config.gamma, config.discount_time_unit)
            grads, loss, q_sel = backward(spec, params, batch["obs"], batch["actions"], y, return_q=True)
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite TD loss at step {step} (learner step {result.learner_steps}); "
                    f"target range [{y.min()}, {y.max()}]"
                )
            opt.step(params, grads)
            result.learner_steps += 1
            losses.append(loss)
            qs.append(float(q_sel.mean()))
            if result.learner_steps % config.target_sync == 0:
                target = copy_params(params)

        if config.checkpoint_every and checkpoint_dir and (step + 1) % config.checkpoint_every == 0:
            save_checkpoint(
                Path(checkpoint_dir) / f"step_{step + 1:08d}.ckpt", spec, params, opt,
                {**(checkpoint_metadata or {}), "global_step": step + 1},
            )

        if res.done:
            m = EpisodeMetrics(
                global_step=step + 1,
                episode=episode,
                episodic_return=ep_return,
                episodic_length=ep_len,
                td_loss=float(np.mean(losses)) if losses else float("nan"),
                mean_q=float(np.mean(qs)) if qs else float("nan"),
                epsilon=eps,
            )
            result.metrics.append(m)
            if on_episode:
                on_episode(m)
            episode += 1
            ep_return, ep_len = 0.0, 0
            losses, qs = [], []
            obs, mask, _ = env.reset(scenarios[rng.integers(len(scenarios))])
    return result


@dataclass
class DayResult:
    day: int
    episode: int
    lost_rentals: int
    lost_returns: int
    episodic_length: int

    @property
    def lost_demand(self) -> int:
        return self.lost_rentals + self.lost_returns


@dataclass
class EvalResult:
    epsilon: float
    days: list[DayResult]

    def per_day_lost(self) -> np.ndarray:
        """Mean lost demand per test day (averaged over episodes of that day)."""
        n_days = max(d.day for d in self.days) + 1
        tot = np.zeros(n_days)
        cnt = np.zeros(n_days)
        for d in self.days:
            tot[d.day] += d.lost_demand
            cnt[d.day] += 1
        return tot / cnt

    @property
    def mean_lost(self) -> float:
        return float(np.mean([d.lost_demand for d in self.days]))

    @property
    def std_lost(self) -> float:
        return float(np.std([d.lost_demand for d in self.days]))

    @property
    def mean_length(self) -> float:
        return float(np.mean([d.episodic_length for d in self.days]))

    @property
    def mean_lost_rentals(self) -> float:
        return float(np.mean([d.lost_rentals for d in self.days]))

    @property
    def mean_lost_returns(self) -> float:
        return float(np.mean([d.lost_returns for d in self.days]))


def run_policy(env, scenarios: Sequence, choose, episodes_per_day: int = 1, epsilon: float = 0.0) -> EvalResult:
    """Roll out ``choose(obs, mask, env) -> action`` once per episode on every scenario."""
    days = []
    for i, sc in enumerate(scenarios):
        for e in range(episodes_per_day):
            obs, mask, _ = env.reset(sc)
            done = False
            while not done:
                res = env.step(choose(obs, mask, env))
                obs, mask, done = res.observation, res.mask, res.done
            days.append(DayResult(i, e, env.lost_rentals, env.lost_returns, env.steps))
    return EvalResult(epsilon, days)


def greedy_chooser(spec: MLPSpec, params: dict[str, np.ndarray], epsilon: float = 0.0, seed: int = 0):
    rng = np.random.default_rng(seed)

    def choose(obs, mask, env):
        return select_action(lambda: forward(spec, params, obs)[0], mask, epsilon, rng)

    return choose


def evaluate(
    env, spec: MLPSpec, params: dict[str, np.ndarray], scenarios: Sequence,
    epsilon: float = 0.0, episodes_per_day: int = 1, seed: int = 0,
) -> EvalResult:
    return run_policy(env, scenarios, greedy_chooser(spec, params, epsilon, seed), episodes_per_day, epsilon)


def config_dict(config: TrainerConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
