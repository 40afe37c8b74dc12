"""Domain-incremental learning across hazard-type tasks.

Tasks share the performance-level label space but differ in input
distribution; task identity is never given at evaluation. Three sequential
strategies are compared against per-task baselines: plain fine-tuning,
rehearsal of stored examples, and a quadratic penalty anchored at the
previous task's weights scaled by the empirical Fisher diagonal. Setting
the penalty strength or the rehearsal mix to zero reproduces plain
fine-tuning bit for bit under equal seeds.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn

STRATEGIES = ("naive", "rehearsal", "ewc")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ContinualConfig:
    lam: float = 100.0
    buffer_capacity: int = 200
    mix_ratio: float = 0.25
    n_runs: int = 3
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigError("need at least one run")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ConfigError("mix_ratio must lie in [0, 1]")
        if self.buffer_capacity < 0:
            raise ConfigError("buffer capacity cannot be negative")
        if self.lam < 0:
            raise ConfigError("penalty strength cannot be negative")


@dataclass
class TaskData:
    tag: str
    train: nn.LabeledDataset
    test: nn.LabeledDataset


@dataclass
class TaskSequence:
    """Ordered tasks with one shared label space."""

    tasks: tuple

    def __post_init__(self):
        tags = [t.tag for t in self.tasks]
        if len(set(tags)) != len(tags):
            raise ValueError("task tags must be unique")
        class_sets = {tuple(sorted(np.unique(t.train.labels))) for t in self.tasks}
        if len(class_sets) > 1:
            raise ValueError("tasks must share one class set")

    def __iter__(self):
        return iter(self.tasks)

    def __len__(self):
        return len(self.tasks)

    def tags(self):
        return [t.tag for t in self.tasks]


@dataclass
class FisherAnchor:
    """Parameter importance and reference point from a finished task."""

    fisher: np.ndarray
    anchor: np.ndarray
    lam: float

    def __post_init__(self):
        if self.fisher.shape != self.anchor.shape:
            raise ValueError("fisher and anchor must align")
        if np.any(self.fisher < 0):
            raise ValueError("fisher entries must be nonnegative")


@dataclass
class RehearsalBuffer:
    """Stored stem features + labels sampled uniformly from finished tasks."""

    features: np.ndarray
    labels: np.ndarray
    capacity: int
    source_tags: list

    def __post_init__(self):
        if len(self.labels) > self.capacity:
            raise ValueError("buffer over capacity")

    def __len__(self):
        return int(self.labels.size)

    @classmethod
    def from_dataset(cls, stem, dataset: nn.LabeledDataset, capacity: int, rng, features=None):
        feats = stem.forward(dataset.images) if features is None else np.asarray(features)
        n = len(dataset)
        take = min(n, capacity)
        idx = rng.choice(n, size=take, replace=False)
        idx.sort()
        return cls(
            features=feats[idx].copy(),
            labels=dataset.labels[idx].copy(),
            capacity=capacity,
            source_tags=[dataset.task_tag] * take,
        )


def fisher_diag(stem, dataset: nn.LabeledDataset, params, rng, features=None) -> np.ndarray:
    """Empirical Fisher diagonal with model-sampled labels.

    For each example a label is drawn from the model's own predictive
    distribution and the squared per-example gradient of its log-likelihood
    is averaged. The two-layer head factorizes per example into outer
    products, so the squares vectorize exactly.
    """
    feats = stem.forward(dataset.images) if features is None else np.asarray(features)
    n = feats.shape[0]
    v = nn.head_views(np.asarray(params, dtype=float))
    pre = feats @ v["dense_w"] + v["dense_b"]
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ v["out_w"] + v["out_b"]
    shift = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shift)
    p /= p.sum(axis=1, keepdims=True)

    cdf = np.cumsum(p, axis=1)
    u = rng.random((n, 1))
    sampled = (u > cdf).sum(axis=1)

    dlogits = p.copy()
    dlogits[np.arange(n), sampled] -= 1.0
    dhidden = (dlogits @ v["out_w"].T) * (pre > 0.0)

    fisher = np.zeros(nn.N_HEAD_PARAMS)
    f = nn.head_views(fisher)
    f["out_w"][:] = (hidden**2).T @ (dlogits**2) / n
    f["out_b"][:] = (dlogits**2).sum(axis=0) / n
    f["dense_w"][:] = (feats**2).T @ (dhidden**2) / n
    f["dense_b"][:] = (dhidden**2).sum(axis=0) / n
    return fisher


def ewc_loss(features, labels, params, anchor: FisherAnchor):
    """Batch NLL plus (lam/2) * sum_i F_i (theta_i - anchor_i)^2."""
    loss, grad = nn.nll_loss_and_grad(features, labels, params)
    delta = params - anchor.anchor
    loss = loss + 0.5 * anchor.lam * float(np.sum(anchor.fisher * delta * delta))
    grad = grad + anchor.lam * anchor.fisher * delta
    return loss, grad


def rehearsal_batch(buffer: RehearsalBuffer, feats_b, labels_b, mix_ratio: float, rng):
    """Append ceil(mix_ratio * batch) uniformly drawn buffer items."""
    k = math.ceil(mix_ratio * feats_b.shape[0])
    if k == 0:
        return feats_b, labels_b
    if len(buffer) == 0:
        warnings.warn("rehearsal buffer is empty; batch unchanged")
        return feats_b, labels_b
    idx = rng.integers(0, len(buffer), k)
    return (
        np.concatenate([feats_b, buffer.features[idx]]),
        np.concatenate([labels_b, buffer.labels[idx]]),
    )


@dataclass
class SequentialResult:
    """Accuracies from one strategy's sequential runs."""

    strategy: str
    task_tags: list
    baseline_acc: dict  # tag -> list over runs
    pair_acc_current: dict  # (X, Y) -> list over runs, accuracy on Y
    pair_acc_first: dict  # (X, Y) -> list over runs, accuracy on X
    seeds: tuple
    config: ContinualConfig

    def baseline_mean(self, tag):
        return float(np.mean(self.baseline_acc[tag]))

    def current_mean(self, pair):
        return float(np.mean(self.pair_acc_current[pair]))

    def first_mean(self, pair):
        return float(np.mean(self.pair_acc_first[pair]))


def _derive_seed(*path) -> int:
    return int(np.random.SeedSequence(list(path)).generate_state(1)[0])


def _train_cfg(base: nn.TrainConfig, seed: int) -> nn.TrainConfig:
    return nn.TrainConfig(
        learning_rate=base.learning_rate,
        batch_size=base.batch_size,
        max_epochs=base.max_epochs,
        patience=base.patience,
        val_fraction=base.val_fraction,
        seed=seed,
    )


def run_sequential(
    stem: nn.FrozenStem,
    tasks: TaskSequence,
    strategy: str,
    config: ContinualConfig,
    seeds=None,
) -> SequentialResult:
    """Per-task baselines plus every ordered task pair under one strategy.

    For each pair (X, Y): the head trained on X continues training on Y
    with the chosen strategy, then is evaluated on both test sets (no task
    identity passed). Training seeds depend only on (run seed, task/pair),
    never on the strategy, so zero-strength strategies replay the naive
    trajectory exactly.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if len(tasks) < 2:
        raise ValueError("need at least two tasks")
    if strategy == "ewc" and config.lam is None:
        raise ConfigError("ewc requires a penalty strength")
    if seeds is None:
        seeds = tuple(range(config.n_runs))
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) != config.n_runs:
        raise ConfigError("need exactly one seed per run")

    feats_train = {t.tag: stem.forward(t.train.images) for t in tasks}
    feats_test = {t.tag: stem.forward(t.test.images) for t in tasks}
    by_tag = {t.tag: t for t in tasks}
    tags = tasks.tags()

    baseline_acc = {tag: [] for tag in tags}
    pairs = [(x, y) for x in tags for y in tags if x != y]
    pair_acc_current = {p: [] for p in pairs}
    pair_acc_first = {p: [] for p in pairs}

    for seed in seeds:
        task_params = {}
        for i, tag in enumerate(tags):
            cfg = _train_cfg(config.train, _derive_seed(seed, i, 0))
            params, _ = nn.train_with_early_stopping(
                stem, by_tag[tag].train, cfg, features=feats_train[tag]
            )
            task_params[tag] = params
            baseline_acc[tag].append(
                nn.evaluate(stem, by_tag[tag].test, params, features=feats_test[tag])
            )

        for j, (x, y) in enumerate(pairs):
            cfg = _train_cfg(config.train, _derive_seed(seed, j, 1))
            penalty = None
            batch_augment = None
            if strategy == "ewc":
                fisher_rng = np.random.default_rng(
                    np.random.SeedSequence([seed, j, 2])
                )
                anchor = FisherAnchor(
                    fisher=fisher_diag(
                        stem,
                        by_tag[x].train,
                        task_params[x],
                        fisher_rng,
                        features=feats_train[x],
                    ),
                    anchor=task_params[x].copy(),
                    lam=config.lam,
                )

                def penalty(params, _anchor=anchor):
                    delta = params - _anchor.anchor
                    return (
                        0.5 * _anchor.lam * float(np.sum(_anchor.fisher * delta * delta)),
                        _anchor.lam * _anchor.fisher * delta,
                    )

            elif strategy == "rehearsal":
                buffer_rng = np.random.default_rng(
                    np.random.SeedSequence([seed, j, 3])
                )
                buffer = RehearsalBuffer.from_dataset(
                    stem,
                    by_tag[x].train,
                    config.buffer_capacity,
                    buffer_rng,
                    features=feats_train[x],
                )

                def batch_augment(rng, fb, yb, _buffer=buffer):
                    return rehearsal_batch(_buffer, fb, yb, config.mix_ratio, rng)

            params_y, _ = nn.train_with_early_stopping(
                stem,
                by_tag[y].train,
                cfg,
                params0=task_params[x],
                features=feats_train[y],
                penalty=penalty,
                batch_augment=batch_augment,
            )
            pair_acc_current[(x, y)].append(
                nn.evaluate(stem, by_tag[y].test, params_y, features=feats_test[y])
            )
            pair_acc_first[(x, y)].append(
                nn.evaluate(stem, by_tag[x].test, params_y, features=feats_test[x])
            )

    return SequentialResult(
        strategy=strategy,
        task_tags=tags,
        baseline_acc=baseline_acc,
        pair_acc_current=pair_acc_current,
        pair_acc_first=pair_acc_first,
        seeds=seeds,
        config=config,
    )


def forgetting_metrics(result: SequentialResult) -> dict:
    """Per ordered pair: forgetting on the first task and transfer on the
    second, both relative to the per-task baselines."""
    out = {}
    for (x, y), _ in result.pair_acc_current.items():
        out[(x, y)] = {
            "forgetting": result.baseline_mean(x) - result.first_mean((x, y)),
            "transfer": result.current_mean((x, y)) - result.baseline_mean(y),
        }
    return out


def mean_forgetting(result: SequentialResult) -> float:
    metrics = forgetting_metrics(result)
    return float(np.mean([m["forgetting"] for m in metrics.values()]))


def accuracy_table_rows(results_by_strategy: dict) -> list:
    """CSV rows shaped like the published accuracy table: one per-task
    baseline row, then one row per strategy over the six ordered pairs
    (cells are mean accuracy on the pair's second task)."""
    strategies = [s for s in STRATEGIES if s in results_by_strategy]
    if not strategies:
        raise ValueError("no results to tabulate")
    first = results_by_strategy[strategies[0]]
    tags = first.task_tags
    pairs = [(x, y) for x in tags for y in tags if x != y]
    rows = [["per_task"] + tags]
    rows.append(["baseline"] + [repr(first.baseline_mean(t)) for t in tags])
    rows.append(["sequential"] + [f"{x}->{y}" for x, y in pairs])
    for strat in strategies:
        res = results_by_strategy[strat]
        rows.append([strat] + [repr(res.current_mean(p)) for p in pairs])
    return rows


def write_accuracy_table(results_by_strategy: dict, path):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(accuracy_table_rows(results_by_strategy))


def write_run_manifest(results_by_strategy: dict, path):
    payload = {}
    for strat, res in results_by_strategy.items():
        payload[strat] = {
            "seeds": list(res.seeds),
            "config": {
                "lam": res.config.lam,
                "buffer_capacity": res.config.buffer_capacity,
                "mix_ratio": res.config.mix_ratio,
                "n_runs": res.config.n_runs,
                "train": asdict(res.config.train),
            },
            "baseline_acc": {t: list(map(float, a)) for t, a in res.baseline_acc.items()},
            "pair_acc_current": {
                f"{x}->{y}": list(map(float, a))
                for (x, y), a in res.pair_acc_current.items()
            },
            "pair_acc_first": {
                f"{x}->{y}": list(map(float, a))
                for (x, y), a in res.pair_acc_first.items()
            },
        }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
