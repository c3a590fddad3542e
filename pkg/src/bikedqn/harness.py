"""Experiment pipeline behind the CLI: generate, train, evaluate, report."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import PolicyKind, make_router, no_rebalance_chooser, static_initial_inventory
from .config import RunConfig
from .demand import generate_dataset, generate_network
from .domain import FillLevels, NetworkInstance, read_instance, read_trips, write_instance, write_trips
from .env import BikeEnv
from .neural import CheckpointError, load_checkpoint, save_checkpoint
from .trainer import EvalResult, MetricsWriter, TrainResult, evaluate, run_policy, train

LOG = logging.getLogger(__name__)

MANIFEST = "manifest.json"
INSTANCE = "instance.json"
RESULT_COLUMNS = ("dataset", "model", "policy", "epsilon", "day", "episode",
                  "lost_rentals", "lost_returns", "lost_demand", "episodic_length")
SUMMARY_COLUMNS = ("dataset", "model", "policy", "epsilon", "days", "mean_lost", "std_lost",
                   "mean_lost_rentals", "mean_lost_returns", "mean_length")

MU_SWEEP = {"mu_0_50_100": (0.0, 0.5, 1.0), "mu_10_50_90": (0.10, 0.50, 0.90), "mu_15_50_85": (0.15, 0.50, 0.85)}
ACTIVATION_SWEEP = ("none", "leaky_relu", "prelu", "elu")
ROUTING_SWEEP = ("full_dqn", "heuristic_routing", "random_routing")


@dataclass
class Dataset:
    instance: NetworkInstance
    train: list
    test: list
    manifest: dict


def cmd_generate(config: RunConfig) -> Path:
    """Write the instance, one trip file per day, and the manifest into ``config.data_dir``."""
    out = Path(config.data_dir)
    (out / "days").mkdir(parents=True, exist_ok=True)
    if config.instance_path:
        instance = read_instance(config.instance_path)
    else:
        instance = generate_network(config.layout, config.network_seed)
    split = generate_dataset(instance, config.demand, config.day_count, config.train_fraction, config.seed)
    if config.static_inventory:
        instance = instance.with_initial_inventory(static_initial_inventory(instance, split.train))
    write_instance(instance, out / INSTANCE)
    entries = []
    days = [("train", d, s) for d, s in zip(split.train, split.train_seeds)]
    days += [("test", d, s) for d, s in zip(split.test, split.test_seeds)]
    for i, (part, trips, seed) in enumerate(days):
        rel = f"days/day_{i:03d}.csv"
        write_trips(trips, out / rel)
        entries.append({"day": i, "file": rel, "seed": seed, "split": part, "trips": len(trips)})
    manifest = {
        "dataset": config.name,
        "seed": config.seed,
        "day_count": config.day_count,
        "train_days": len(split.train),
        "test_days": len(split.test),
        "static_inventory": config.static_inventory,
        "days": entries,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    config.save(out / "config.json")
    return out


def load_dataset(data_dir: str | Path) -> Dataset:
    root = Path(data_dir)
    manifest_path = root / MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path} not found; run `generate` first")
    manifest = json.loads(manifest_path.read_text())
    instance = read_instance(root / INSTANCE)
    train_days, test_days = [], []
    for e in manifest["days"]:
        (train_days if e["split"] == "train" else test_days).append(read_trips(root / e["file"]))
    if (len(train_days), len(test_days)) != (manifest["train_days"], manifest["test_days"]):
        raise ValueError(f"{manifest_path}: split counts inconsistent with day entries")
    return Dataset(instance, train_days, test_days, manifest)


def make_env(instance: NetworkInstance, policy: str, fill: FillLevels, seed: int = 0) -> BikeEnv:
    return BikeEnv(instance, fill, router=make_router(policy, instance, seed))


def _model_metadata(config: RunConfig, policy: str, fill: tuple, variant: str) -> dict:
    return {"policy": policy, "fill_levels": list(fill), "dataset": config.name, "variant": variant}


def train_one(config: RunConfig, data: Dataset, out_dir: Path, variant: str = "") -> TrainResult:
    policy = PolicyKind(config.policy)
    if policy is PolicyKind.NO_REBALANCE:
        raise ValueError("no_rebalance has nothing to train")
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.json")
    env = make_env(data.instance, policy.value, config.fill, config.trainer.seed)
    meta = _model_metadata(config, policy.value, config.fill_levels, variant or config.name)
    ckpt_dir = out_dir / "checkpoints"
    if config.trainer.checkpoint_every:
        ckpt_dir.mkdir(exist_ok=True)
    writer = MetricsWriter(out_dir / "metrics.csv")
    try:
        result = train(env, data.train, config.trainer, on_episode=writer,
                       checkpoint_dir=ckpt_dir, checkpoint_metadata=meta)
    finally:
        writer.close()
    save_checkpoint(out_dir / "final.ckpt", result.spec, result.params, result.optimizer,
                    {**meta, "global_step": config.trainer.total_steps})
    return result


def sweep_configs(config: RunConfig, sweep: str | None) -> list[tuple[str, RunConfig]]:
    if not sweep:
        return [("", config)]
    if sweep == "mu":
        return [(k, replace(config, fill_levels=v)) for k, v in MU_SWEEP.items()]
    if sweep == "activation":
        return [(a, replace(config, trainer=replace(config.trainer, output_activation=a))) for a in ACTIVATION_SWEEP]
    if sweep == "routing":
        return [(p, replace(config, policy=p)) for p in ROUTING_SWEEP]
    raise ValueError(f"unknown sweep {sweep!r}; choose mu, activation or routing")


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if window <= 1 or v.size == 0:
        return v.copy()
    out = np.empty_like(v)
    csum = np.concatenate([[0.0], np.nancumsum(v)])
    cnt = np.concatenate([[0], np.cumsum(~np.isnan(v))])
    for i in range(v.size):
        lo = max(0, i - window + 1)
        n = cnt[i + 1] - cnt[lo]
        out[i] = (csum[i + 1] - csum[lo]) / n if n else np.nan
    return out


def cmd_train(config: RunConfig, sweep: str | None = None) -> list[tuple[str, Path, TrainResult]]:
    data = load_dataset(config.data_dir)
    runs = []
    for variant, cfg in sweep_configs(config, sweep):
        out_dir = Path(cfg.output_dir) / variant if variant else Path(cfg.output_dir)
        LOG.info("training %s into %s", variant or cfg.policy, out_dir)
        result = train_one(cfg, data, out_dir, variant)
        runs.append((variant or cfg.policy, out_dir, result))
    return runs


def train_summary(result: TrainResult, window: int = 100) -> dict:
    rets = [m.episodic_return for m in result.metrics]
    losses = [m.td_loss for m in result.metrics]
    return {
        "episodes": len(rets),
        "final_return_ma": float(moving_average(rets, window)[-1]) if rets else float("nan"),
        "final_td_loss_ma": float(moving_average(losses, window)[-1]) if losses else float("nan"),
    }


def evaluate_model(
    data: Dataset, model: str, checkpoint: str | None, epsilons: Sequence[float],
    episodes_per_day: int = 1, seed: int = 0, policy: str | None = None,
) -> list[EvalResult]:
    if checkpoint is None:
        if (policy or "no_rebalance") != "no_rebalance":
            raise ValueError(f"model {model!r} needs a checkpoint")
        env = make_env(data.instance, "no_rebalance", FillLevels())
        res = run_policy(env, data.test, no_rebalance_chooser, episodes_per_day, 0.0)
        return [res]
    env_probe = BikeEnv(data.instance)
    ck = load_checkpoint(checkpoint, expect_input_dim=env_probe.obs_size)
    kind = ck.metadata.get("policy", "full_dqn")
    fill = FillLevels(tuple(ck.metadata.get("fill_levels", (0.1, 0.5, 0.9))))
    results = []
    for eps in epsilons:
        env = make_env(data.instance, kind, fill, seed)
        if ck.spec.output_dim != env.n_actions:
            raise CheckpointError(f"{checkpoint}: output_dim {ck.spec.output_dim} != {env.n_actions} actions")
        results.append(evaluate(env, ck.spec, ck.params, data.test, eps, episodes_per_day, seed))
    return results


def cmd_eval(
    config: RunConfig,
    models: Sequence[tuple[str, str | None]],
    out_dir: str | Path,
    include_baselines: bool = True,
) -> Path:
    """Evaluate checkpoints (and the no-rebalance baseline) on the test days.

    Writes ``results.csv`` (one row per day/episode) and ``summary.csv`` (one
    row per model and epsilon).
    """
    data = load_dataset(config.data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, summary = [], []
    todo = list(models)
    if include_baselines and not any(m == "no_rebalance" for m, _ in todo):
        todo.insert(0, ("no_rebalance", None))
    dataset = data.manifest.get("dataset", config.name)
    for model, ckpt in todo:
        policy = "no_rebalance"
        if ckpt is not None:
            policy = load_checkpoint(ckpt).metadata.get("policy", "full_dqn")
        for res in evaluate_model(data, model, ckpt, config.eval_epsilons, config.episodes_per_day, config.seed):
            for d in res.days:
                rows.append([dataset, model, policy, res.epsilon, d.day, d.episode,
                             d.lost_rentals, d.lost_returns, d.lost_demand, d.episodic_length])
            summary.append([dataset, model, policy, res.epsilon, len(data.test), res.mean_lost, res.std_lost,
                            res.mean_lost_rentals, res.mean_lost_returns, res.mean_length])
    _write_csv(out / "results.csv", RESULT_COLUMNS, rows)
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    return out


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(x) for x in r])


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
