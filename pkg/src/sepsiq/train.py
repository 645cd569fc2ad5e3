"""Offline training loop: batches, the conservative loss, Adam, target syncs.

The trainer touches nothing but the fixed dataset it was handed — there is
no environment, rollout, or callback surface here. Fixed (seed, dataset,
config) reproduce bit-identical parameters on the same platform.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .clinical import DoseBinners, RewardParams
from .cql import total_loss
from .data import N_FEATURES, NormStats, OfflineDataset, SplitSpec, sample_minibatch
from .errors import ConfigError, DomainError, NumericError
from .kvconfig import format_kv, parse_kv_text
from .mlp import AdamState, adam_step, init_adam_state
from .qnet import (
    DuelingQNet,
    TargetNet,
    build_qnet,
    make_target,
    net_from_layers,
    q_values,
    sync_target,
)


def identity_norm_stats() -> NormStats:
    """Stats that leave features untouched, for pre-normalized inputs."""
    return NormStats(means=np.zeros(N_FEATURES), stds=np.ones(N_FEATURES))


@dataclass
class TrainConfig:
    """All run hyperparameters, serializable as flat ``key = value`` text."""

    gamma: float = 0.99
    alpha: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 32
    total_steps: int = 20000
    target_sync_period: int = 1000
    seed: int = 0
    log_every: int = 500
    checkpoint_every: int = 0  # 0 = final checkpoint only
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    reward: RewardParams = field(default_factory=RewardParams)
    split: SplitSpec = field(default_factory=SplitSpec)

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.alpha < 0.0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 0:
            raise ConfigError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.target_sync_period < 1:
            raise ConfigError(
                f"target_sync_period must be >= 1, got {self.target_sync_period}"
            )
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.log_every < 0 or self.checkpoint_every < 0:
            raise ConfigError("log_every and checkpoint_every must be >= 0")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must be in [0, 1)")
        if self.adam_epsilon <= 0.0:
            raise ConfigError("adam_epsilon must be positive")

    def to_text(self) -> str:
        pairs = [
            ("gamma", repr(self.gamma)),
            ("alpha", repr(self.alpha)),
            ("learning_rate", repr(self.learning_rate)),
            ("batch_size", str(self.batch_size)),
            ("total_steps", str(self.total_steps)),
            ("target_sync_period", str(self.target_sync_period)),
            ("seed", str(self.seed)),
            ("log_every", str(self.log_every)),
            ("checkpoint_every", str(self.checkpoint_every)),
            ("adam_beta1", repr(self.adam_beta1)),
            ("adam_beta2", repr(self.adam_beta2)),
            ("adam_epsilon", repr(self.adam_epsilon)),
            ("terminal_survive", repr(self.reward.terminal_survive)),
            ("terminal_death", repr(self.reward.terminal_death)),
            ("reward_c0", repr(self.reward.c0)),
            ("reward_c1", repr(self.reward.c1)),
            ("reward_c2", repr(self.reward.c2)),
            ("train_fraction", repr(self.split.train_fraction)),
            ("validation_fraction", repr(self.split.validation_fraction)),
            ("test_fraction", repr(self.split.test_fraction)),
            ("split_seed", str(self.split.seed)),
        ]
        return format_kv(pairs)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        pairs = parse_kv_text(text)
        float_keys = {
            "gamma",
            "alpha",
            "learning_rate",
            "adam_beta1",
            "adam_beta2",
            "adam_epsilon",
            "terminal_survive",
            "terminal_death",
            "reward_c0",
            "reward_c1",
            "reward_c2",
            "train_fraction",
            "validation_fraction",
            "test_fraction",
        }
        int_keys = {
            "batch_size",
            "total_steps",
            "target_sync_period",
            "seed",
            "log_every",
            "checkpoint_every",
            "split_seed",
        }
        unknown = sorted(set(pairs) - float_keys - int_keys)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        values = {}
        for key, raw in pairs.items():
            try:
                values[key] = float(raw) if key in float_keys else int(raw)
            except ValueError:
                raise ConfigError(f"{key}: could not parse {raw!r}") from None

        defaults = cls()
        reward = RewardParams(
            terminal_survive=values.get("terminal_survive", defaults.reward.terminal_survive),
            terminal_death=values.get("terminal_death", defaults.reward.terminal_death),
            c0=values.get("reward_c0", defaults.reward.c0),
            c1=values.get("reward_c1", defaults.reward.c1),
            c2=values.get("reward_c2", defaults.reward.c2),
        )
        split = SplitSpec(
            train_fraction=values.get("train_fraction", defaults.split.train_fraction),
            validation_fraction=values.get(
                "validation_fraction", defaults.split.validation_fraction
            ),
            test_fraction=values.get("test_fraction", defaults.split.test_fraction),
            seed=values.get("split_seed", defaults.split.seed),
        )
        config = cls(
            gamma=values.get("gamma", defaults.gamma),
            alpha=values.get("alpha", defaults.alpha),
            learning_rate=values.get("learning_rate", defaults.learning_rate),
            batch_size=values.get("batch_size", defaults.batch_size),
            total_steps=values.get("total_steps", defaults.total_steps),
            target_sync_period=values.get("target_sync_period", defaults.target_sync_period),
            seed=values.get("seed", defaults.seed),
            log_every=values.get("log_every", defaults.log_every),
            checkpoint_every=values.get("checkpoint_every", defaults.checkpoint_every),
            adam_beta1=values.get("adam_beta1", defaults.adam_beta1),
            adam_beta2=values.get("adam_beta2", defaults.adam_beta2),
            adam_epsilon=values.get("adam_epsilon", defaults.adam_epsilon),
            reward=reward,
            split=split,
        )
        config.validate()
        return config


@dataclass
class MetricsRow:
    step: int
    total_loss: float
    bellman_loss: float
    cql_penalty_mean: float
    validation_loss: float | None = None
    validation_mean_max_q: float | None = None


@dataclass
class MetricsLog:
    """Per-interval training metrics; steps strictly increase."""

    rows: list = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.step <= self.rows[-1].step:
            raise DomainError("metrics steps must strictly increase")
        for value in (row.total_loss, row.bellman_loss, row.cql_penalty_mean):
            if not np.isfinite(value):
                raise NumericError(f"non-finite metric at step {row.step}")
        self.rows.append(row)

    def to_csv(self, path) -> None:
        lines = ["step,total_loss,bellman_loss,cql_penalty_mean,validation_loss,validation_mean_max_q"]
        for r in self.rows:
            val_loss = "" if r.validation_loss is None else repr(float(r.validation_loss))
            val_q = (
                ""
                if r.validation_mean_max_q is None
                else repr(float(r.validation_mean_max_q))
            )
            lines.append(
                f"{r.step},{repr(float(r.total_loss))},{repr(float(r.bellman_loss))},"
                f"{repr(float(r.cql_penalty_mean))},{val_loss},{val_q}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class TrainResult:
    net: DuelingQNet
    target: TargetNet
    adam: AdamState
    metrics: MetricsLog


def _batch_fingerprint(indices: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(indices).tobytes()).hexdigest()[:12]


def validation_metrics(
    net: DuelingQNet,
    dataset: OfflineDataset,
    config: TrainConfig,
    target: TargetNet | None = None,
) -> tuple:
    """Full-set loss and mean max-Q; deterministic, no sampling.

    Without an explicit target net the current net doubles as its own
    target (equivalent to evaluating right after a sync).
    """
    if len(dataset) == 0:
        raise DomainError("validation set is empty")
    tgt = target if target is not None else make_target(net)
    batch = dataset.as_batch()
    breakdown, _ = total_loss(net, tgt, batch, config.gamma, config.alpha)
    mean_max_q = float(q_values(net, dataset.states).max(axis=1).mean())
    return breakdown.total, mean_max_q


def train_offline(
    dataset: OfflineDataset,
    config: TrainConfig,
    *,
    validation: OfflineDataset | None = None,
    net: DuelingQNet | None = None,
    norm_stats: NormStats | None = None,
    binners: DoseBinners | None = None,
    out_dir=None,
) -> TrainResult:
    """Run exactly ``total_steps`` Adam updates of the conservative loss.

    ``dataset`` must already be normalized. Pass ``net`` to train a custom
    architecture (e.g. a reduced action head for tabular fixtures);
    otherwise the standard 48->128->128->(1, 25) network is built from the
    config seed. With ``out_dir`` set, checkpoints are written there at the
    configured cadence plus a ``final.ckpt``, each carrying the
    normalization stats and dose binners so evaluation is self-contained.
    """
    config.validate()
    if len(dataset) == 0:
        raise DomainError("training dataset is empty")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    if net is None:
        net = build_qnet(rng)
    target = make_target(net)
    adam = init_adam_state(
        net.layers(),
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        epsilon=config.adam_epsilon,
    )
    metrics = MetricsLog()
    stats = norm_stats if norm_stats is not None else identity_norm_stats()

    def write_checkpoint(name: str) -> None:
        save_checkpoint(
            Path(out_dir) / name,
            Checkpoint(
                net=net,
                target=target,
                adam=adam,
                norm_stats=stats,
                binners=binners,
                config_text=config.to_text(),
            ),
        )

    for step in range(config.total_steps):
        batch = sample_minibatch(dataset, config.batch_size, step, config.seed)
        try:
            breakdown, grads = total_loss(net, target, batch, config.gamma, config.alpha)
        except NumericError as exc:
            raise NumericError(
                f"non-finite loss at step {step} "
                f"(batch fingerprint {_batch_fingerprint(batch.indices)}): {exc}"
            ) from exc
        layers, adam = adam_step(net.layers(), grads, adam, config.learning_rate)
        net = net_from_layers(layers)
        done = step + 1
        if done % config.target_sync_period == 0:
            target = sync_target(net, target)
        if config.log_every > 0 and (done % config.log_every == 0 or done == config.total_steps):
            row = MetricsRow(
                step=done,
                total_loss=breakdown.total,
                bellman_loss=breakdown.bellman_loss,
                cql_penalty_mean=breakdown.cql_penalty_mean,
            )
            if validation is not None and len(validation) > 0:
                row.validation_loss, row.validation_mean_max_q = validation_metrics(
                    net, validation, config, target
                )
            metrics.append(row)
        if out_dir is not None and config.checkpoint_every > 0 and done % config.checkpoint_every == 0:
            write_checkpoint(f"step_{done:07d}.ckpt")

    if out_dir is not None:
        write_checkpoint("final.ckpt")
        metrics.to_csv(Path(out_dir) / "metrics.csv")
    return TrainResult(net=net, target=target, adam=adam, metrics=metrics)
