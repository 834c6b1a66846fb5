import itertools
import math

import numpy as np
import pytest
import torch
from torch import nn

from arnas.attacks import AttackConfig, pgd
from arnas.bilevel import (
    HISTORY_COLUMNS,
    SearchConfig,
    StepCache,
    arch_gradient_second_order,
    compute_unrolled,
    cosine_lr,
    history_csv,
    inner_weight_step,
    make_optimizers,
    outer_arch_step,
    search,
    second_order_gradient,
)
from arnas.data import DatasetSpec, load
from arnas.network import Supernet, cross_entropy_loss, init_supernet
from arnas.rng import derive_seed, torch_generator
from arnas.search_space import (
    ArchParams,
    CellRole,
    CellSlot,
    CellTopology,
    LayoutPlan,
    MacroConfig,
    ROLE_ORDER,
    discretize,
    serialize_genotype,
)

TINY_TOPO = CellTopology(2)

FAST_ATTACK = AttackConfig(epsilon=2 / 255, step_size=1 / 255, steps=2)

CLEAN_ATTACK = AttackConfig(epsilon=0.0, step_size=1 / 255, steps=1, random_start=False)


def tiny_plan():
    return LayoutPlan(
        slots=(
            CellSlot(CellRole.ACCURATE, 4, 1),
            CellSlot(CellRole.REDUCTION, 4, 2),
            CellSlot(CellRole.ROBUST, 4, 1),
        ),
        stem_channels=4,
        num_classes=3,
        input_shape=(3, 8, 8),
    )


def tiny_net(seed=0):
    return Supernet(tiny_plan(), TINY_TOPO, seed=seed)


def tiny_batches(seed=0, n=16):
    gen = torch_generator(seed)
    x = torch.rand(n, 3, 8, 8, generator=gen)
    y = torch.randint(0, 3, (n,), generator=gen)
    return x, y


def fast_cfg(**kw):
    defaults = dict(attack=FAST_ATTACK, batch_size=16, epochs=2, seed=5)
    defaults.update(kw)
    return SearchConfig(**defaults)


def blob_streams(per_class=8, seed=3):
    spec = DatasetSpec(
        source="synthetic://blobs", num_classes=3, per_class_limit=per_class,
        image_size=8, seed=seed,
    )
    train, val, _ = load(spec)
    return train, val


# -------------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(epochs=-1)
    with pytest.raises(ValueError):
        SearchConfig(lam=-0.1)
    with pytest.raises(ValueError):
        SearchConfig(weight_lr=0)
    with pytest.raises(ValueError):
        SearchConfig(arch_update="banana")
    with pytest.raises(ValueError):
        SearchConfig(arch_optimizer="lbfgs")
    assert SearchConfig().xi is None
    assert SearchConfig(xi=0.0).xi == 0.0


# ------------------------------------------------------------- quadratic toy


def test_quadratic_toy_matches_analytic_unrolled_gradient():
    c, t, b, xi, fd = 1.3, 0.4, 0.9, 0.05, 0.01
    w0, a0 = 0.7, -0.3
    w = nn.Parameter(torch.tensor(w0, dtype=torch.float64))
    a = nn.Parameter(torch.tensor(a0, dtype=torch.float64))

    def train_loss():
        return (w - c * a) ** 2 / 2

    def val_loss():
        return (w - t) ** 2 / 2 + b * a**2 / 2

    (g,) = second_order_gradient([w], [a], train_loss, val_loss, xi, fd)
    w_unrolled = w0 - xi * (w0 - c * a0)
    expected = b * a0 + xi * c * (w_unrolled - t)
    assert abs(g.item() - expected) <= 1e-6
    # weight values restored exactly
    assert w.item() == w0 and a.item() == a0


def test_quadratic_toy_xi_zero_is_plain_gradient():
    w = nn.Parameter(torch.tensor(0.7, dtype=torch.float64))
    a = nn.Parameter(torch.tensor(-0.3, dtype=torch.float64))
    (g,) = second_order_gradient(
        [w], [a], lambda: (w - a) ** 2 / 2, lambda: (w - 0.4) ** 2 / 2 + 0.9 * a**2 / 2,
        xi=0.0, fd_scale=0.01,
    )
    assert g.item() == 0.9 * -0.3


def test_zero_val_weight_gradient_skips_correction():
    w = nn.Parameter(torch.tensor(0.5, dtype=torch.float64))
    a = nn.Parameter(torch.tensor(0.2, dtype=torch.float64))
    # validation loss independent of w: correction must be skipped
    (g,) = second_order_gradient(
        [w], [a], lambda: (w - a) ** 2 / 2, lambda: a**2 / 2, xi=0.1, fd_scale=0.01
    )
    assert g.item() == pytest.approx(0.2, abs=1e-12)
    assert w.item() == 0.5


def test_compute_unrolled_values():
    w = nn.Parameter(torch.tensor(2.0, dtype=torch.float64))
    state = compute_unrolled([w], lambda: (w - 1.0) ** 2 / 2, xi=0.5)
    assert state.original[0].item() == 2.0
    assert state.unrolled[0].item() == 2.0 - 0.5 * (2.0 - 1.0)
    same = compute_unrolled([w], lambda: (w - 1.0) ** 2 / 2, xi=0.0)
    assert same.unrolled is same.original


# ------------------------------------------------ supernet-level arch gradient


def test_xi_zero_reduces_to_plain_alpha_gradient():
    net = tiny_net(1)
    xt, yt = tiny_batches(1)
    xv, yv = tiny_batches(2)
    cfg = fast_cfg(xi=0.0)
    flat = arch_gradient_second_order(net, (xt, yt), (xv, yv), "std", cfg, seed=0)
    loss = cross_entropy_loss(net(xv), yv)
    direct = torch.autograd.grad(loss, net.arch_parameters())
    expected = np.concatenate([g.numpy().astype(np.float64).ravel() for g in direct])
    assert np.max(np.abs(flat - expected)) <= 1e-9


def test_cache_counters_one_generation_per_batch_one_unroll():
    net = tiny_net(2)
    xt, yt = tiny_batches(3)
    xv, yv = tiny_batches(4)
    cfg = fast_cfg(xi=0.01)
    cache = StepCache()
    theta = arch_gradient_second_order(net, (xt, yt), (xv, yv), "std", cfg, cache, seed=0)
    theta_bar = arch_gradient_second_order(net, (xt, yt), (xv, yv), "adv", cfg, cache, seed=0)
    assert cache.counters == {
        "pgd_train_generations": 1,
        "pgd_val_generations": 1,
        "unroll_computations": 1,
    }
    assert theta.shape == theta_bar.shape == (3 * TINY_TOPO.num_edges * 8,)
    # a further call keeps reusing the cache
    arch_gradient_second_order(net, (xt, yt), (xv, yv), "adv", cfg, cache, seed=0)
    assert cache.counters["pgd_val_generations"] == 1
    assert cache.counters["unroll_computations"] == 1


def test_arch_gradient_restores_weights_and_rejects_bad_kind():
    net = tiny_net(3)
    before = [p.detach().clone() for p in net.weight_parameters()]
    cfg = fast_cfg(xi=0.01)
    arch_gradient_second_order(net, tiny_batches(1), tiny_batches(2), "std", cfg, seed=1)
    assert all(torch.equal(a, b) for a, b in zip(before, net.weight_parameters()))
    with pytest.raises(ValueError, match="loss kind"):
        arch_gradient_second_order(net, tiny_batches(1), tiny_batches(2), "nat", cfg)


def test_non_finite_gradient_names_alpha_block():
    net = tiny_net(4)
    with torch.no_grad():
        net.classifier.weight.fill_(float("nan"))
    cfg = fast_cfg(xi=0.0)
    with pytest.raises(RuntimeError, match="accurate alpha block"):
        arch_gradient_second_order(net, tiny_batches(1), tiny_batches(2), "std", cfg)


# ----------------------------------------------------------------- outer step


def test_outer_step_records_and_weight_purity():
    net = tiny_net(5)
    cfg = fast_cfg(xi=0.01)
    _, arch_opt = make_optimizers(net, cfg)
    w_before = [p.detach().clone() for p in net.weight_parameters()]
    a_before = [p.detach().clone() for p in net.arch_parameters()]
    rec = outer_arch_step(
        net, tiny_batches(6), tiny_batches(7), cfg, arch_opt, seed=2, epoch=1, step=3
    )
    assert (rec.epoch, rec.step) == (1, 3)
    assert 0.0 <= rec.gamma_star <= 1.0
    assert math.isfinite(rec.nat_val_loss) and rec.nat_val_loss > 0
    assert math.isfinite(rec.adv_val_loss) and rec.adv_val_loss > 0
    assert rec.grad_norm_theta > 0
    # weights untouched, alpha moved
    assert all(torch.equal(a, b) for a, b in zip(w_before, net.weight_parameters()))
    assert any(not torch.equal(a, b) for a, b in zip(a_before, net.arch_parameters()))
    assert all(p.grad is None for p in net.arch_parameters())


def test_lambda_zero_stalls_with_warning(caplog):
    net = tiny_net(6)
    cfg = fast_cfg(lam=0.0, arch_optimizer="sgd", xi=0.01)
    _, arch_opt = make_optimizers(net, cfg)
    a_before = [p.detach().clone() for p in net.arch_parameters()]
    with caplog.at_level("WARNING", logger="arnas.bilevel"):
        rec = outer_arch_step(net, tiny_batches(8), tiny_batches(9), cfg, arch_opt, seed=3)
    assert rec.gamma_star == 0.0
    assert rec.grad_norm_theta_bar == 0.0
    assert all(torch.equal(a, b) for a, b in zip(a_before, net.arch_parameters()))
    assert any("stalls" in m for m in caplog.messages)


def test_natural_mode_records():
    net = tiny_net(7)
    cfg = fast_cfg(arch_update="natural", arch_optimizer="sgd", xi=0.0)
    _, arch_opt = make_optimizers(net, cfg)
    rec = outer_arch_step(net, tiny_batches(1), tiny_batches(2), cfg, arch_opt, seed=4)
    assert rec.gamma_star == 1.0
    assert math.isnan(rec.adv_val_loss)
    assert rec.grad_norm_theta_bar == 0.0


# ----------------------------------------------------------------- inner step


def test_inner_step_lr_zero_keeps_weights():
    net = tiny_net(8)
    cfg = fast_cfg()
    weight_opt = torch.optim.SGD(net.weight_parameters(), lr=0.0, momentum=0.9)
    before = [p.detach().clone() for p in net.parameters()]
    inner_weight_step(net, tiny_batches(1), cfg, weight_opt, seed=0)
    assert all(torch.equal(a, b) for a, b in zip(before, net.parameters()))


def test_inner_step_decreases_same_batch_adversarial_loss():
    net = tiny_net(9)
    cfg = fast_cfg()
    x, y = tiny_batches(10)
    seed = 77
    x_adv = pgd(net, x, y, cfg.attack, torch_generator(derive_seed(seed, "pgd-inner")))
    before = float(cross_entropy_loss(net(x_adv), y).detach())
    weight_opt = torch.optim.SGD(net.weight_parameters(), lr=0.01, momentum=0.9)
    reported = inner_weight_step(net, (x, y), cfg, weight_opt, seed=seed)
    assert reported == pytest.approx(before, abs=1e-6)
    after = float(cross_entropy_loss(net(x_adv), y).detach())
    assert after <= before + 1e-6
    assert after < before


def test_inner_step_epsilon_zero_equals_standard_step():
    net_a = tiny_net(11)
    net_b = tiny_net(11)
    x, y = tiny_batches(12)
    cfg = fast_cfg(attack=CLEAN_ATTACK)
    opt_a = torch.optim.SGD(net_a.weight_parameters(), lr=0.05, momentum=0.9,
                            weight_decay=3e-4)
    opt_b = torch.optim.SGD(net_b.weight_parameters(), lr=0.05, momentum=0.9,
                            weight_decay=3e-4)
    inner_weight_step(net_a, (x, y), cfg, opt_a, seed=0)
    loss = cross_entropy_loss(net_b(x), y)
    opt_b.zero_grad()
    loss.backward()
    opt_b.step()
    assert all(
        torch.equal(a, b)
        for a, b in zip(net_a.weight_parameters(), net_b.weight_parameters())
    )


# --------------------------------------------------------------- full search


def test_search_smoke_and_determinism():
    macro = MacroConfig(num_cells=3, init_channels=4, num_classes=3, input_shape=(3, 8, 8))
    cfg = fast_cfg(epochs=2, batch_size=16, xi=0.01)
    streams = blob_streams()
    result = search(cfg, macro, streams, topo=TINY_TOPO)
    result.genotype.validate()
    steps_per_epoch = math.ceil(len(streams[0]) / cfg.batch_size)
    assert len(result.history) == cfg.epochs * steps_per_epoch
    assert all(0.0 <= r.gamma_star <= 1.0 for r in result.history)
    assert all(math.isfinite(r.nat_val_loss) for r in result.history)
    assert all(math.isfinite(r.adv_val_loss) for r in result.history)
    again = search(cfg, macro, blob_streams(), topo=TINY_TOPO)
    assert serialize_genotype(again.genotype) == serialize_genotype(result.genotype)
    assert again.history == result.history


def test_search_epochs_zero_discretizes_init_alpha():
    macro = MacroConfig(num_cells=3, init_channels=4, num_classes=3, input_shape=(3, 8, 8))
    cfg = fast_cfg(epochs=0)
    result = search(cfg, macro, blob_streams(), topo=TINY_TOPO)
    assert result.history == ()
    reference = init_supernet(macro, TINY_TOPO, seed=cfg.seed)
    alpha = reference.alpha_numpy()
    expected = discretize(
        ArchParams(*(alpha[r.value] for r in ROLE_ORDER)), TINY_TOPO
    )
    assert serialize_genotype(result.genotype) == serialize_genotype(expected)


def test_search_trajectory_matches_first_order_darts_oracle():
    # natural update, plain GD on alpha, no unroll, no attack: the loop must
    # replay an independently written first-order trajectory exactly
    macro = MacroConfig(num_cells=3, init_channels=4, num_classes=3, input_shape=(3, 8, 8))
    cfg = fast_cfg(
        epochs=3, batch_size=8, lam=0.0, xi=0.0, attack=CLEAN_ATTACK,
        arch_update="natural", arch_optimizer="sgd",
    )
    train, val = blob_streams()
    result = search(cfg, macro, (train, val), topo=TINY_TOPO)
    assert len(result.history) >= 5

    net = init_supernet(macro, TINY_TOPO, seed=cfg.seed)
    net.set_input_normalization(train.mean, train.std)
    weight_opt = torch.optim.SGD(
        net.weight_parameters(), lr=cfg.weight_lr, momentum=cfg.weight_momentum,
        weight_decay=cfg.weight_decay,
    )
    arch_opt = torch.optim.SGD(net.arch_parameters(), lr=cfg.arch_lr)
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.weight_lr, epoch, cfg.epochs)
        for group in weight_opt.param_groups:
            group["lr"] = lr
        val_cycle = itertools.cycle(list(val.batches(cfg.batch_size, epoch=epoch)))
        for xt, yt in train.batches(cfg.batch_size, epoch=epoch):
            xv, yv = next(val_cycle)
            arch_opt.zero_grad()
            cross_entropy_loss(net(xv), yv).backward()
            for p in net.weight_parameters():
                p.grad = None
            arch_opt.step()
            weight_opt.zero_grad()
            cross_entropy_loss(net(xt), yt).backward()
            for p in net.arch_parameters():
                p.grad = None
            weight_opt.step()
    for ours, ref in zip(result.net.arch_parameters(), net.arch_parameters()):
        assert torch.allclose(ours, ref, atol=1e-6, rtol=0)
    for ours, ref in zip(result.net.weight_parameters(), net.weight_parameters()):
        assert torch.allclose(ours, ref, atol=1e-6, rtol=0)


# -------------------------------------------------------------------- history


def test_history_csv_format():
    macro = MacroConfig(num_cells=3, init_channels=4, num_classes=3, input_shape=(3, 8, 8))
    cfg = fast_cfg(epochs=1, batch_size=16, xi=0.01)
    result = search(cfg, macro, blob_streams(), topo=TINY_TOPO)
    text = history_csv(result.history)
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(HISTORY_COLUMNS)
    assert len(lines) == 1 + len(result.history)
    first = lines[1].split(",")
    assert int(first[0]) == 0 and int(first[1]) == 0
    assert float(first[4]) == result.history[0].gamma_star


def test_cosine_schedule_endpoints():
    assert cosine_lr(0.1, 0, 10) == pytest.approx(0.1)
    assert cosine_lr(0.1, 5, 10) == pytest.approx(0.05)
    assert cosine_lr(0.1, 10, 10) == pytest.approx(0.0, abs=1e-12)
