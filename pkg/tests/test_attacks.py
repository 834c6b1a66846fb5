import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from arnas.attacks import AttackConfig, _ball_bounds, attack_batch, fgsm, pgd
from arnas.network import cross_entropy_loss
from arnas.rng import torch_generator


class TinyLinear(nn.Module):
    """Flatten + linear: input gradient has the closed form
    W^T (softmax(Wx+b) - onehot(y)) / batch."""

    def __init__(self, in_dim=12, classes=3, seed=0):
        super().__init__()
        gen = torch_generator(seed)
        self.linear = nn.Linear(in_dim, classes)
        with torch.no_grad():
            self.linear.weight.copy_(torch.randn(classes, in_dim, generator=gen))
            self.linear.bias.copy_(torch.randn(classes, generator=gen))

    def forward(self, x):
        return self.linear(x.flatten(1))


class TinyConv(nn.Module):
    def __init__(self, seed=0):
        super().__init__()
        gen = torch_generator(seed)
        self.conv = nn.Conv2d(1, 4, 3, padding=1)
        self.head = nn.Linear(4, 3)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.5)

    def forward(self, x):
        h = torch.relu(self.conv(x))
        return self.head(h.mean(dim=(2, 3)))


def make_batch(shape=(4, 1, 2, 6), classes=3, seed=1):
    gen = torch_generator(seed)
    x = torch.rand(*shape, generator=gen)
    y = torch.randint(0, classes, (shape[0],), generator=gen)
    return x, y


def analytic_linear_input_grad(model, x, y):
    w = model.linear.weight.detach()
    logits = model(x).detach()
    probs = torch.softmax(logits, dim=1)
    onehot = torch.zeros_like(probs)
    onehot[torch.arange(len(y)), y] = 1.0
    flat_grad = (probs - onehot) @ w / len(y)
    return flat_grad.reshape(x.shape)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(epsilon=-0.1, step_size=0.01, steps=7)
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.1, step_size=-0.01, steps=7)
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.1, step_size=0.01, steps=-1)


def test_config_labels():
    assert AttackConfig(8 / 255, 8 / 255, 1, random_start=False).label() == "fgsm"
    assert AttackConfig(8 / 255, 2 / 255, 7).label() == "pgd7"
    assert AttackConfig(8 / 255, 2 / 255, 20, random_start=True).label() == "pgd20"


def test_zero_epsilon_is_identity():
    model = TinyLinear()
    x, y = make_batch()
    assert torch.equal(fgsm(model, x, y, 0.0), x)
    cfg = AttackConfig(epsilon=0.0, step_size=0.1, steps=5, random_start=True)
    assert torch.equal(pgd(model, x, y, cfg), x)


def test_fgsm_matches_analytic_linear_gradient():
    model = TinyLinear(seed=3)
    gen = torch_generator(2)
    # inputs away from the pixel-range boundary so clipping stays inactive
    x = 0.3 + 0.4 * torch.rand(5, 1, 2, 6, generator=gen)
    y = torch.randint(0, 3, (5,), generator=gen)
    eps = 8 / 255
    # push along the analytic gradient signs through the same ball-surface
    # arithmetic the attack uses
    lo, hi = _ball_bounds(x, eps)
    step = eps * torch.sign(analytic_linear_input_grad(model, x, y))
    expected = torch.min(torch.max(x + step, lo), hi)
    assert torch.equal(fgsm(model, x, y, eps), expected)
    # every pixel moved, and the true perturbation magnitude is eps up to
    # one float32 lattice spacing
    deviation = (fgsm(model, x, y, eps).double() - x.double()).abs()
    assert deviation.min().item() > eps - 1e-7
    assert deviation.max().item() <= eps


def test_pgd_single_step_reduces_to_fgsm():
    for seed in range(3):
        model = TinyConv(seed=seed)
        x, y = make_batch(shape=(3, 1, 4, 4), seed=seed + 10)
        eps = 8 / 255
        cfg = AttackConfig(epsilon=eps, step_size=eps, steps=1, random_start=False)
        assert torch.equal(pgd(model, x, y, cfg), fgsm(model, x, y, eps))
        assert torch.equal(attack_batch(model, x, y, cfg), fgsm(model, x, y, eps))


def test_ball_and_range_invariants_random_models():
    for trial in range(12):
        model = TinyConv(seed=trial)
        x, y = make_batch(shape=(3, 1, 4, 4), seed=trial)
        gen = torch_generator(trial)
        eps = float(torch.rand(1, generator=gen)) * 0.3
        steps = int(torch.randint(0, 9, (1,), generator=gen))
        step = float(torch.rand(1, generator=gen)) * 0.2
        cfg = AttackConfig(epsilon=eps, step_size=step, steps=steps, random_start=trial % 2 == 0)
        x_adv = pgd(model, x, y, cfg, gen=gen)
        # the true deviation, free of single-precision subtraction noise
        deviation = (x_adv.double() - x.double()).abs().max().item()
        assert deviation <= eps + 1e-9
        assert x_adv.min().item() >= 0.0 and x_adv.max().item() <= 1.0


@given(
    st.floats(min_value=0.0, max_value=0.5),
    st.floats(min_value=0.0, max_value=0.3),
    st.integers(min_value=0, max_value=6),
    st.booleans(),
)
@settings(max_examples=30, deadline=None)
def test_ball_and_range_invariants_config_sweep(eps, step, steps, random_start):
    model = TinyLinear(seed=5)
    x, y = make_batch(seed=8)
    cfg = AttackConfig(epsilon=eps, step_size=step, steps=steps, random_start=random_start)
    x_adv = pgd(model, x, y, cfg, gen=torch_generator(0))
    deviation = (x_adv.double() - x.double()).abs().max().item()
    assert deviation <= eps + 1e-9
    assert x_adv.min().item() >= 0.0 and x_adv.max().item() <= 1.0


def test_pgd_does_not_decrease_loss_without_random_start():
    for trial in range(8):
        model = TinyConv(seed=trial + 20)
        x, y = make_batch(shape=(4, 1, 4, 4), seed=trial)
        cfg = AttackConfig(epsilon=0.05, step_size=0.02, steps=5, random_start=False)
        x_adv = pgd(model, x, y, cfg)
        with torch.no_grad():
            clean = cross_entropy_loss(model(x), y).item()
            attacked = cross_entropy_loss(model(x_adv), y).item()
        assert attacked >= clean - 1e-6


def test_pgd_determinism_and_seed_sensitivity():
    model = TinyConv(seed=1)
    x, y = make_batch(shape=(4, 1, 4, 4), seed=2)
    cfg = AttackConfig(epsilon=0.1, step_size=0.03, steps=4, random_start=True)
    a = pgd(model, x, y, cfg, gen=torch_generator(77))
    b = pgd(model, x, y, cfg, gen=torch_generator(77))
    c = pgd(model, x, y, cfg, gen=torch_generator(78))
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_attack_restores_model_mode():
    model = TinyConv(seed=0)
    x, y = make_batch(shape=(2, 1, 4, 4))
    cfg = AttackConfig(epsilon=0.03, step_size=0.01, steps=2)
    model.train()
    pgd(model, x, y, cfg, gen=torch_generator(0))
    assert model.training
    model.eval()
    fgsm(model, x, y, 0.01)
    assert not model.training


def test_attack_leaves_parameters_untouched():
    model = TinyConv(seed=4)
    before = [p.detach().clone() for p in model.parameters()]
    x, y = make_batch(shape=(2, 1, 4, 4), seed=6)
    pgd(model, x, y, AttackConfig(0.1, 0.05, 3), gen=torch_generator(1))
    for p, b in zip(model.parameters(), before):
        assert torch.equal(p.detach(), b)
        assert p.grad is None
