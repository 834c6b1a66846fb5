"""Adversarial training and evaluation of discrete networks.

Training runs PGD against the current weights every batch and steps on
the adversarial cross-entropy. Evaluation reports natural accuracy plus
accuracy under each configured attack generated against the evaluated
model (white-box); transfer evaluation generates against a source model
and scores a target. White-box and transfer paths share one helper with
one seed derivation, so transfer with source == target reproduces the
white-box number exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import torch

from .attacks import AttackConfig, attack_batch
from .network import cross_entropy_loss
from .rng import derive_seed, torch_generator
from .stats import model_stats

EVAL_ATTACKS_DEFAULT = (
    AttackConfig(epsilon=8 / 255, step_size=8 / 255, steps=1, random_start=False),  # fgsm
    AttackConfig(epsilon=8 / 255, step_size=0.01, steps=20),
    AttackConfig(epsilon=8 / 255, step_size=0.01, steps=100),
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 0.1  # use 0.01 for digit-archive style data
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_epochs: tuple[int, ...] = (100, 150)
    decay_factor: float = 0.1
    batch_size: int = 32
    attack: AttackConfig = AttackConfig(epsilon=8 / 255, step_size=0.01, steps=7)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ValueError("decay_epochs must be strictly increasing")
        if any(d >= self.epochs for d in self.decay_epochs):
            raise ValueError("decay epochs must be smaller than total epochs")

    def lr_at(self, epoch: int) -> float:
        passed = sum(1 for d in self.decay_epochs if epoch >= d)
        return self.lr * self.decay_factor**passed


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    lr: float
    train_adv_loss: float
    val_nat_acc: float
    val_adv_acc: float


TRAIN_LOG_COLUMNS = ("epoch", "lr", "train_adv_loss", "val_nat_acc", "val_adv_acc")


def train_log_csv(logs) -> str:
    lines = [",".join(TRAIN_LOG_COLUMNS)]
    for r in logs:
        lines.append(
            f"{r.epoch},{float(r.lr)!r},{float(r.train_adv_loss)!r},"
            f"{float(r.val_nat_acc)!r},{float(r.val_adv_acc)!r}"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EvalReport:
    natural_acc: float
    attack_accs: dict[str, float]
    params: int
    flops: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        accs = [self.natural_acc, *self.attack_accs.values()]
        if any(not 0.0 <= a <= 1.0 for a in accs):
            raise ValueError("accuracies must lie in [0, 1]")


def eval_report_json(report: EvalReport) -> str:
    doc = {
        "natural_acc": report.natural_acc,
        "attack_accs": report.attack_accs,
        "params": report.params,
        "flops": report.flops,
        "metadata": report.metadata,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _trainable_parameters(net):
    if hasattr(net, "weight_parameters"):
        return net.weight_parameters()
    return list(net.parameters())


@torch.no_grad()
def _count_correct(model, x, y) -> int:
    was_training = model.training
    model.eval()
    try:
        return int((model(x).argmax(dim=1) == y).sum())
    finally:
        model.train(was_training)


def natural_accuracy(model, stream, batch_size: int = 32) -> float:
    correct = 0
    for x, y in stream.eval_batches(batch_size):
        correct += _count_correct(model, x, y)
    return correct / len(stream)


def _attacked_accuracy(gen_model, eval_model, stream, attack: AttackConfig,
                       batch_size: int, seed: int) -> float:
    """Accuracy of eval_model on examples crafted against gen_model.

    The seed derivation is the single source of attack randomness for both
    white-box and transfer evaluation.
    """
    correct = 0
    for i, (x, y) in enumerate(stream.eval_batches(batch_size)):
        x_adv = attack_batch(
            gen_model, x, y, attack, torch_generator(derive_seed(seed, "attack-batch", i))
        )
        correct += _count_correct(eval_model, x_adv, y)
    return correct / len(stream)


def adversarial_train(net, data, cfg: TrainConfig) -> list[EpochLog]:
    """PGD adversarial training in place; returns the per-epoch log."""
    train_stream, val_stream = data
    opt = torch.optim.SGD(
        _trainable_parameters(net), lr=cfg.lr,
        momentum=cfg.momentum, weight_decay=cfg.weight_decay,
    )
    logs: list[EpochLog] = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        net.train()
        total_loss, seen = 0.0, 0
        for step, (x, y) in enumerate(train_stream.batches(cfg.batch_size, epoch=epoch)):
            x_adv = attack_batch(
                net, x, y, cfg.attack,
                torch_generator(derive_seed(cfg.seed, "train-attack", epoch, step)),
            )
            loss = cross_entropy_loss(net(x_adv), y)
            if not bool(torch.isfinite(loss)):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch} step {step}: "
                    f"{float(loss.detach())}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += float(loss.detach()) * len(y)
            seen += len(y)
        logs.append(
            EpochLog(
                epoch=epoch,
                lr=lr,
                train_adv_loss=total_loss / max(seen, 1),
                val_nat_acc=natural_accuracy(net, val_stream, cfg.batch_size),
                val_adv_acc=_attacked_accuracy(
                    net, net, val_stream, cfg.attack, cfg.batch_size,
                    derive_seed(cfg.seed, "val-attack", epoch),
                ),
            )
        )
    return logs


def evaluate(model, stream, attacks, batch_size: int = 32, seed: int = 0,
             metadata: dict | None = None) -> EvalReport:
    """Natural accuracy plus white-box accuracy under each attack."""
    attack_accs: dict[str, float] = {}
    for attack in attacks:
        label = attack.label()
        if label in attack_accs:
            raise ValueError(f"duplicate attack label {label!r}; configs must be distinct")
        attack_accs[label] = _attacked_accuracy(
            model, model, stream, attack, batch_size, derive_seed(seed, "eval", label)
        )
    params, flops = model_stats(model)
    meta = {"eval_samples": len(stream), "batch_size": batch_size, "seed": seed}
    if metadata:
        meta.update(metadata)
    return EvalReport(
        natural_acc=natural_accuracy(model, stream, batch_size),
        attack_accs=attack_accs,
        params=params,
        flops=flops,
        metadata=meta,
    )


def transfer_evaluate(source_model, target_model, stream, attack: AttackConfig,
                      batch_size: int = 32, seed: int = 0) -> float:
    """Score target_model on adversarial examples crafted against
    source_model. With source == target this is the white-box number."""
    if tuple(source_model.plan.input_shape) != tuple(target_model.plan.input_shape):
        raise ValueError(
            "source and target input shapes differ: "
            f"{tuple(source_model.plan.input_shape)} vs {tuple(target_model.plan.input_shape)}"
        )
    return _attacked_accuracy(
        source_model, target_model, stream, attack, batch_size,
        derive_seed(seed, "eval", attack.label()),
    )
