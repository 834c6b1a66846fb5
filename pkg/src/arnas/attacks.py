"""l-infinity bounded white-box attacks: FGSM and k-step PGD.

Attacks work in raw [0,1] pixel space; dataset normalization lives inside
the model. Both attacks snapshot the model's training mode, run in eval
mode, and restore it, and neither touches model parameters or their grads.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .network import cross_entropy_loss


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    step_size: float
    steps: int
    random_start: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.step_size < 0:
            raise ValueError("step_size must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")

    def label(self) -> str:
        """Short name used in reports: 'fgsm' when the config reduces to
        it, otherwise 'pgd<steps>'."""
        if self.steps == 1 and not self.random_start and self.step_size == self.epsilon:
            return "fgsm"
        return f"pgd{self.steps}"


def _input_gradient(model, x, y):
    x = x.detach().clone().requires_grad_(True)
    loss = cross_entropy_loss(model(x), y)
    (grad,) = torch.autograd.grad(loss, [x])
    return grad


def fgsm(model, x, y, epsilon: float) -> torch.Tensor:
    """Single-step sign attack: clip(x + eps*sign(grad_x loss), 0, 1).

    The step lands exactly on the ball surface in exact arithmetic, so the
    result is clamped to correctly rounded ball bounds rather than the raw
    float sum, which can overshoot eps by an ulp."""
    if epsilon == 0:
        return x.detach().clone()
    was_training = model.training
    model.eval()
    try:
        x0 = x.detach()
        lo, hi = _ball_bounds(x0, epsilon)
        grad = _input_gradient(model, x0, y)
        x_adv = torch.min(torch.max(x0 + epsilon * torch.sign(grad), lo), hi)
    finally:
        model.train(was_training)
    return x_adv


def pgd(model, x, y, cfg: AttackConfig, gen: torch.Generator | None = None) -> torch.Tensor:
    """Projected gradient descent in the l-inf ball of radius cfg.epsilon.

    Each step moves by step_size along the loss gradient sign, clamps back
    into the ball around the clean input, then into [0,1]. random_start
    draws the initial point uniformly from the ball (clamped to [0,1]).
    The returned deviation from x never exceeds epsilon in exact (float64)
    arithmetic.
    """
    if cfg.epsilon == 0:
        return x.detach().clone()
    was_training = model.training
    model.eval()
    try:
        x0 = x.detach()
        lo, hi = _ball_bounds(x0, cfg.epsilon)
        if cfg.random_start:
            noise = torch.empty_like(x0)
            if gen is None:
                noise.uniform_(-cfg.epsilon, cfg.epsilon)
            else:
                noise.uniform_(-cfg.epsilon, cfg.epsilon, generator=gen)
            x_adv = torch.min(torch.max(x0 + noise, lo), hi)
        else:
            x_adv = x0.clone()
        for _ in range(cfg.steps):
            grad = _input_gradient(model, x_adv, y)
            x_adv = x_adv + cfg.step_size * torch.sign(grad)
            x_adv = torch.min(torch.max(x_adv, lo), hi)
    finally:
        model.train(was_training)
    return x_adv.detach()


def _ball_bounds(x0: torch.Tensor, epsilon: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-pixel clamp bounds: the ball [x0-eps, x0+eps] intersected with
    [0,1], with each bound rounded toward x0 where the cast to the working
    precision landed outside the true ball. Clamping to these bounds keeps
    the exact (float64) deviation within eps."""
    x64 = x0.double()
    hi = (x64 + epsilon).to(x0.dtype)
    hi = torch.where(hi.double() > x64 + epsilon, torch.nextafter(hi, x0), hi)
    lo = (x64 - epsilon).to(x0.dtype)
    lo = torch.where(lo.double() < x64 - epsilon, torch.nextafter(lo, x0), lo)
    return lo.clamp_(0.0, 1.0), hi.clamp_(0.0, 1.0)


def attack_batch(
    model, x, y, cfg: AttackConfig, gen: torch.Generator | None = None
) -> torch.Tensor:
    """Dispatch on the config: FGSM-shaped configs take the closed single
    step, everything else runs the PGD loop."""
    if cfg.label() == "fgsm":
        return fgsm(model, x, y, cfg.epsilon)
    return pgd(model, x, y, cfg, gen=gen)
