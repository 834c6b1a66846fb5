"""Alternating bilevel architecture search under adversarial training.

Each outer step computes two architecture gradients at one-step-unrolled
weights: the natural validation gradient and the lambda-scaled adversarial
validation gradient. Their min-norm convex combination (see mgda) drives
the architecture optimizer; the inner step then updates the weights on the
adversarial training loss. Both gradients share one set of train-batch
adversarial examples, one set of val-batch adversarial examples, and one
unrolled-weight computation per outer step.

Gradient flattening order is fixed: accurate block, then robust, then
reduction, each row-major.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .attacks import AttackConfig, pgd
from .mgda import min_norm_direction
from .network import Supernet, cross_entropy_loss, init_supernet
from .rng import derive_seed, torch_generator
from .search_space import (
    ArchParams,
    CellTopology,
    Genotype,
    MacroConfig,
    ROLE_ORDER,
    discretize,
)

logger = logging.getLogger(__name__)

MIN_NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SearchConfig:
    epochs: int = 50
    batch_size: int = 64
    lam: float = 0.1
    attack: AttackConfig = AttackConfig(epsilon=8 / 255, step_size=2 / 255, steps=7)
    weight_lr: float = 0.025
    weight_momentum: float = 0.9
    weight_decay: float = 3e-4
    arch_lr: float = 3e-4
    arch_betas: tuple[float, float] = (0.5, 0.999)
    arch_weight_decay: float = 1e-3
    xi: float | None = None  # None: use the current (annealed) weight lr
    fd_scale: float = 0.01
    seed: int = 0
    # test knobs: "natural" drives alpha by the natural validation gradient
    # alone (no min-norm combination); "sgd" swaps the adaptive arch
    # optimizer for plain gradient descent
    arch_update: str = "mgda"
    arch_optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        for name in ("weight_lr", "arch_lr", "fd_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.xi is not None and self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if self.arch_update not in ("mgda", "natural"):
            raise ValueError(f"unknown arch_update {self.arch_update!r}")
        if self.arch_optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown arch_optimizer {self.arch_optimizer!r}")


@dataclass(frozen=True)
class HistoryRecord:
    epoch: int
    step: int
    nat_val_loss: float
    adv_val_loss: float
    gamma_star: float
    grad_norm_theta: float
    grad_norm_theta_bar: float


HISTORY_COLUMNS = (
    "epoch",
    "step",
    "nat_val_loss",
    "adv_val_loss",
    "gamma_star",
    "grad_norm_theta",
    "grad_norm_theta_bar",
)


def history_csv(records) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for r in records:
        lines.append(
            f"{r.epoch},{r.step},{float(r.nat_val_loss)!r},{float(r.adv_val_loss)!r},"
            f"{float(r.gamma_star)!r},{float(r.grad_norm_theta)!r},"
            f"{float(r.grad_norm_theta_bar)!r}"
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------- generic unroll core


@dataclass
class UnrollState:
    """Saved weight values: the originals and the one-step-unrolled ones."""

    original: list[torch.Tensor]
    unrolled: list[torch.Tensor]


def _grads(loss, params, create_graph=False):
    grads = torch.autograd.grad(loss, params, create_graph=create_graph, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for g, p in zip(grads, params)]


def _set_values(params, values):
    with torch.no_grad():
        for p, v in zip(params, values):
            p.copy_(v)


def compute_unrolled(weights, train_loss_fn, xi: float) -> UnrollState:
    """One virtual SGD step on the training loss: w' = w - xi * grad."""
    original = [p.detach().clone() for p in weights]
    if xi == 0:
        return UnrollState(original, original)
    gw = _grads(train_loss_fn(), weights)
    unrolled = [w - xi * g for w, g in zip(original, gw)]
    return UnrollState(original, unrolled)


def second_order_gradient(
    weights, alphas, train_loss_fn, val_loss_fn, xi: float, fd_scale: float,
    unroll: UnrollState | None = None,
):
    """Architecture gradient of the validation loss through the unroll.

    Returns d/dalpha [ val(w - xi * grad_w train(w)) ], approximating the
    second-order term by central differences of the training-loss
    architecture gradient at w +- h * grad_w' val, h = fd_scale / ||grad_w'
    val||. xi = 0 skips the unroll entirely and a zero validation weight
    gradient skips the correction. Weight values are restored on exit.
    """
    if xi == 0:
        return _grads(val_loss_fn(), alphas)
    if unroll is None:
        unroll = compute_unrolled(weights, train_loss_fn, xi)
    try:
        _set_values(weights, unroll.unrolled)
        val_loss = val_loss_fn()
        joint = _grads(val_loss, list(alphas) + list(weights))
        dalpha, dweights = joint[: len(alphas)], joint[len(alphas):]
        vnorm = math.sqrt(sum(float((g.double() ** 2).sum()) for g in dweights))
        if vnorm == 0.0:
            return dalpha
        h = fd_scale / vnorm
        _set_values(weights, [w + h * g for w, g in zip(unroll.original, dweights)])
        plus = _grads(train_loss_fn(), alphas)
        _set_values(weights, [w - h * g for w, g in zip(unroll.original, dweights)])
        minus = _grads(train_loss_fn(), alphas)
        return [
            a - xi * (p - m) / (2 * h) for a, p, m in zip(dalpha, plus, minus)
        ]
    finally:
        _set_values(weights, unroll.original)


# ------------------------------------------------------------- supernet layer


@dataclass
class StepCache:
    """Per-outer-step shared state: adversarial batches, the unrolled
    weights, and instrumentation counters."""

    x_adv_train: torch.Tensor | None = None
    x_adv_val: torch.Tensor | None = None
    unroll: UnrollState | None = None
    nat_val_loss: float = float("nan")
    adv_val_loss: float = float("nan")
    counters: dict = field(default_factory=lambda: {
        "pgd_train_generations": 0,
        "pgd_val_generations": 0,
        "unroll_computations": 0,
    })


def _check_finite_alpha_grads(grads, what: str) -> None:
    for role, g in zip(ROLE_ORDER, grads):
        if not bool(torch.isfinite(g).all()):
            raise RuntimeError(
                f"non-finite {what} architecture gradient in the {role.value} alpha block"
            )


def _flatten(grads) -> np.ndarray:
    return np.concatenate(
        [g.detach().cpu().numpy().astype(np.float64).ravel() for g in grads]
    )


def arch_gradient_second_order(
    net: Supernet,
    train_batch,
    val_batch,
    loss_kind: str,
    cfg: SearchConfig,
    cache: StepCache | None = None,
    xi: float | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Flat architecture gradient of the natural ("std") or lambda-scaled
    adversarial ("adv") validation loss at the unrolled weights.

    Passing one cache across the std and adv calls of an outer step shares
    the train/val adversarial examples and the unrolled weights between
    them. Train examples are generated against the pre-unroll weights
    (they define the unroll); val examples against the unrolled weights.
    """
    if loss_kind not in ("std", "adv"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if cache is None:
        cache = StepCache()
    if xi is None:
        xi = cfg.xi if cfg.xi is not None else cfg.weight_lr
    xt, yt = train_batch
    xv, yv = val_batch
    weights = net.weight_parameters()
    alphas = net.arch_parameters()

    def train_loss():
        return cross_entropy_loss(net(cache.x_adv_train), yt)

    if xi != 0:
        if cache.x_adv_train is None:
            cache.x_adv_train = pgd(
                net, xt, yt, cfg.attack, torch_generator(derive_seed(seed, "pgd-train"))
            )
            cache.counters["pgd_train_generations"] += 1
        if cache.unroll is None:
            cache.unroll = compute_unrolled(weights, train_loss, xi)
            cache.counters["unroll_computations"] += 1
        current = cache.unroll
    else:
        current = UnrollState([p.detach().clone() for p in weights], [])
        current.unrolled = current.original

    if loss_kind == "std":
        def val_loss():
            loss = cross_entropy_loss(net(xv), yv)
            cache.nat_val_loss = float(loss.detach())
            return loss
    else:
        if cache.x_adv_val is None:
            _set_values(weights, current.unrolled)
            try:
                cache.x_adv_val = pgd(
                    net, xv, yv, cfg.attack, torch_generator(derive_seed(seed, "pgd-val"))
                )
                cache.counters["pgd_val_generations"] += 1
            finally:
                _set_values(weights, current.original)

        def val_loss():
            raw = cross_entropy_loss(net(cache.x_adv_val), yv)
            cache.adv_val_loss = float(raw.detach())
            return cfg.lam * raw

    grads = second_order_gradient(
        weights, alphas, train_loss, val_loss, xi, cfg.fd_scale, unroll=cache.unroll
    )
    kind_name = "natural" if loss_kind == "std" else "adversarial"
    _check_finite_alpha_grads(grads, kind_name)
    return _flatten(grads)


def _assert_min_norm(d: np.ndarray, theta: np.ndarray, theta_bar: np.ndarray) -> None:
    dd = float(d @ d)
    tol = MIN_NORM_TOLERANCE * max(1.0, dd)
    if float(d @ theta) < dd - tol or float(d @ theta_bar) < dd - tol:
        raise AssertionError("combined direction violates the min-norm property")


def _apply_arch_gradient(net: Supernet, arch_opt, flat: np.ndarray) -> None:
    offset = 0
    for p in net.arch_parameters():
        n = p.numel()
        block = flat[offset : offset + n].reshape(p.shape)
        p.grad = torch.as_tensor(block, dtype=p.dtype)
        offset += n
    arch_opt.step()
    for p in net.arch_parameters():
        p.grad = None


def outer_arch_step(
    net: Supernet,
    train_batch,
    val_batch,
    cfg: SearchConfig,
    arch_opt,
    xi: float | None = None,
    seed: int = 0,
    epoch: int = 0,
    step: int = 0,
) -> HistoryRecord:
    cache = StepCache()
    theta = arch_gradient_second_order(
        net, train_batch, val_batch, "std", cfg, cache, xi=xi, seed=seed
    )
    if cfg.arch_update == "natural":
        d, gamma, theta_bar_norm = theta, 1.0, 0.0
    else:
        theta_bar = arch_gradient_second_order(
            net, train_batch, val_batch, "adv", cfg, cache, xi=xi, seed=seed
        )
        d, gamma = min_norm_direction(theta, theta_bar)
        _assert_min_norm(d, theta, theta_bar)
        theta_bar_norm = float(np.linalg.norm(theta_bar))
        if not np.any(d):
            logger.warning(
                "zero combined architecture direction (lambda=%g); update stalls",
                cfg.lam,
            )
    _apply_arch_gradient(net, arch_opt, d)
    return HistoryRecord(
        epoch=epoch,
        step=step,
        nat_val_loss=cache.nat_val_loss,
        adv_val_loss=cache.adv_val_loss,
        gamma_star=float(gamma),
        grad_norm_theta=float(np.linalg.norm(theta)),
        grad_norm_theta_bar=theta_bar_norm,
    )


def inner_weight_step(net: Supernet, train_batch, cfg: SearchConfig, weight_opt, seed: int = 0):
    """One adversarial-training step on the weights; alpha untouched."""
    x, y = train_batch
    x_adv = pgd(net, x, y, cfg.attack, torch_generator(derive_seed(seed, "pgd-inner")))
    loss = cross_entropy_loss(net(x_adv), y)
    weights = net.weight_parameters()
    for p, g in zip(weights, _grads(loss, weights)):
        p.grad = g
    weight_opt.step()
    for p in weights:
        p.grad = None
    return float(loss.detach())


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    return 0.5 * base_lr * (1 + math.cos(math.pi * epoch / total_epochs))


def make_optimizers(net: Supernet, cfg: SearchConfig):
    weight_opt = torch.optim.SGD(
        net.weight_parameters(),
        lr=cfg.weight_lr,
        momentum=cfg.weight_momentum,
        weight_decay=cfg.weight_decay,
    )
    if cfg.arch_optimizer == "adam":
        arch_opt = torch.optim.Adam(
            net.arch_parameters(),
            lr=cfg.arch_lr,
            betas=cfg.arch_betas,
            weight_decay=cfg.arch_weight_decay,
        )
    else:
        arch_opt = torch.optim.SGD(net.arch_parameters(), lr=cfg.arch_lr)
    return weight_opt, arch_opt


@dataclass
class SearchResult:
    net: Supernet
    genotype: Genotype
    history: tuple[HistoryRecord, ...]


def search(
    cfg: SearchConfig,
    macro: MacroConfig,
    data,
    topo: CellTopology | None = None,
    norm: str = "batch",
) -> SearchResult:
    """Run the full alternating search and discretize the final alpha.

    data is a (train_stream, val_stream) pair. Per epoch, every training
    batch drives one outer architecture step (against the next validation
    batch, cycled) followed by one inner weight step. The weight lr is
    cosine-annealed per epoch and xi follows it unless pinned in cfg.
    """
    train_stream, val_stream = data
    topo = topo if topo is not None else CellTopology()
    net = init_supernet(macro, topo, seed=cfg.seed, norm=norm)
    net.set_input_normalization(train_stream.mean, train_stream.std)
    weight_opt, arch_opt = make_optimizers(net, cfg)
    history: list[HistoryRecord] = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.weight_lr, epoch, cfg.epochs)
        for group in weight_opt.param_groups:
            group["lr"] = lr
        xi = cfg.xi if cfg.xi is not None else lr
        val_batches = list(val_stream.batches(cfg.batch_size, epoch=epoch))
        val_cycle = itertools.cycle(val_batches)
        for step, (xt, yt) in enumerate(train_stream.batches(cfg.batch_size, epoch=epoch)):
            xv, yv = next(val_cycle)
            record = outer_arch_step(
                net, (xt, yt), (xv, yv), cfg, arch_opt,
                xi=xi, seed=derive_seed(cfg.seed, "outer", epoch, step),
                epoch=epoch, step=step,
            )
            history.append(record)
            inner_weight_step(
                net, (xt, yt), cfg, weight_opt,
                seed=derive_seed(cfg.seed, "inner", epoch, step),
            )
    alpha = net.alpha_numpy()
    genotype = discretize(
        ArchParams(*(alpha[role.value] for role in ROLE_ORDER)), topo
    )
    return SearchResult(net=net, genotype=genotype, history=tuple(history))
