"""Relaxed search network and genotype-instantiated discrete network.

The supernet mixes all candidate ops per edge with softmax(alpha) weights;
cells of the same role share one alpha block, so there are always exactly
three blocks regardless of the layout. The discrete net materializes only
genotype-selected ops. Both apply input normalization internally (mean/std
buffers), so callers, attacks included, always work in raw [0,1] pixel
space.
"""

from __future__ import annotations

import math
from typing import Literal

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .ops import FactorizedReduce, ReLUConvBN, build_op, make_norm
from .rng import derive_seed, torch_generator
from .search_space import (
    CellRole,
    CellTopology,
    Genotype,
    LayoutPlan,
    MacroConfig,
    OpKind,
    ROLE_ORDER,
    build_macro_layout,
)

WrtGroup = Literal["weights", "alpha", "input"]


class MixedOp(nn.Module):
    def __init__(self, channels, stride, norm):
        super().__init__()
        self._ops = nn.ModuleList(
            build_op(op, channels, stride, affine=False, norm=norm) for op in OpKind
        )

    def forward(self, x, weights):
        # exact one-hot weights propagate exactly: 0*op(x) == 0, 1*op(x) == op(x)
        return sum(w * op(x) for w, op in zip(weights, self._ops))


class SearchCell(nn.Module):
    def __init__(self, topo: CellTopology, c_pp, c_p, channels, role, reduction_prev, norm):
        super().__init__()
        self.role = role
        self.num_nodes = topo.num_intermediate_nodes
        if reduction_prev:
            self.preprocess0 = FactorizedReduce(c_pp, channels, affine=False, norm=norm)
        else:
            self.preprocess0 = ReLUConvBN(c_pp, channels, 1, 1, 0, affine=False, norm=norm)
        self.preprocess1 = ReLUConvBN(c_p, channels, 1, 1, 0, affine=False, norm=norm)
        is_reduction = role is CellRole.REDUCTION
        self._ops = nn.ModuleList()
        for src, _dst in topo.edges():
            stride = 2 if is_reduction and src < 2 else 1
            self._ops.append(MixedOp(channels, stride, norm))

    def forward(self, s0, s1, weights):
        states = [self.preprocess0(s0), self.preprocess1(s1)]
        offset = 0
        for _ in range(self.num_nodes):
            s = sum(
                self._ops[offset + k](states[k], weights[offset + k])
                for k in range(len(states))
            )
            offset += len(states)
            states.append(s)
        return torch.cat(states[2:], dim=1)


class DiscreteCell(nn.Module):
    def __init__(self, genotype: Genotype, c_pp, c_p, channels, role, reduction_prev, norm):
        super().__init__()
        self.role = role
        self.num_nodes = genotype.num_intermediate_nodes
        if reduction_prev:
            self.preprocess0 = FactorizedReduce(c_pp, channels, affine=True, norm=norm)
        else:
            self.preprocess0 = ReLUConvBN(c_pp, channels, 1, 1, 0, affine=True, norm=norm)
        self.preprocess1 = ReLUConvBN(c_p, channels, 1, 1, 0, affine=True, norm=norm)
        is_reduction = role is CellRole.REDUCTION
        cell_role = CellRole.REDUCTION if is_reduction else role
        edges = genotype.by_role(cell_role)
        self._sources = [e.src for e in edges]
        self._ops = nn.ModuleList()
        for e in edges:
            stride = 2 if is_reduction and e.src < 2 else 1
            self._ops.append(build_op(e.op, channels, stride, affine=True, norm=norm))

    def forward(self, s0, s1):
        states = [self.preprocess0(s0), self.preprocess1(s1)]
        for j in range(self.num_nodes):
            a, b = 2 * j, 2 * j + 1
            s = self._ops[a](states[self._sources[a]]) + self._ops[b](states[self._sources[b]])
            states.append(s)
        return torch.cat(states[2:], dim=1)


def _validate_plan_for_net(plan: LayoutPlan) -> None:
    _, h, w = plan.input_shape
    if h % 4 or w % 4:
        raise ValueError(f"input height/width must be divisible by 4, got {h}x{w}")


def _init_net_weights(net: nn.Module, gen: torch.Generator) -> None:
    """Deterministic fan-in-scaled init, walking modules in registration order."""
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            # conv weight shape is (out, in/groups, kh, kw), so this is the
            # true per-output fan-in for grouped convs too
            fan_in = m.weight.shape[1:].numel() if isinstance(m, nn.Conv2d) else m.in_features
            std = math.sqrt(2.0 / fan_in)
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.BatchNorm2d, nn.GroupNorm)):
            if m.weight is not None:
                with torch.no_grad():
                    m.weight.fill_(1.0)
                    m.bias.zero_()


class _NetBase(nn.Module):
    """Shared stem/head/plumbing for both network variants."""

    def __init__(self, plan: LayoutPlan, norm: str):
        super().__init__()
        _validate_plan_for_net(plan)
        self.plan = plan
        self.norm_kind = norm
        c_in = plan.input_shape[0]
        self.stem = nn.Sequential(
            nn.Conv2d(c_in, plan.stem_channels, 3, padding=1, bias=False),
            make_norm(norm, plan.stem_channels, affine=True),
        )
        self.global_pool = nn.AdaptiveAvgPool2d(1)
        self.register_buffer("input_mean", torch.zeros(1, c_in, 1, 1))
        self.register_buffer("input_std", torch.ones(1, c_in, 1, 1))

    def set_input_normalization(self, mean, std) -> None:
        mean = torch.as_tensor(mean, dtype=self.input_mean.dtype).reshape(1, -1, 1, 1)
        std = torch.as_tensor(std, dtype=self.input_std.dtype).reshape(1, -1, 1, 1)
        if mean.shape != self.input_mean.shape or std.shape != self.input_std.shape:
            raise ValueError("normalization stats must have one entry per input channel")
        if not bool((std > 0).all()):
            raise ValueError("normalization std must be positive")
        with torch.no_grad():
            self.input_mean.copy_(mean)
            self.input_std.copy_(std)

    def _check_batch(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or tuple(x.shape[1:]) != tuple(self.plan.input_shape):
            raise ValueError(
                f"batch shape {tuple(x.shape)} does not match input shape "
                f"{tuple(self.plan.input_shape)}"
            )

    def _run_cells(self, x, cell_forward):
        x = (x - self.input_mean) / self.input_std
        s0 = s1 = self.stem(x)
        for cell in self.cells:
            s0, s1 = s1, cell_forward(cell, s0, s1)
        out = self.global_pool(s1).flatten(1)
        return self.classifier(out)


class Supernet(_NetBase):
    def __init__(self, plan: LayoutPlan, topo: CellTopology, seed: int, norm: str = "batch"):
        super().__init__(plan, norm)
        self.topo = topo
        self.seed = seed
        self.cells = nn.ModuleList()
        c_pp = c_p = plan.stem_channels
        reduction_prev = False
        for slot in plan.slots:
            cell = SearchCell(topo, c_pp, c_p, slot.channels, slot.role, reduction_prev, norm)
            self.cells.append(cell)
            reduction_prev = slot.role is CellRole.REDUCTION
            c_pp, c_p = c_p, topo.num_intermediate_nodes * slot.channels
        self.classifier = nn.Linear(c_p, plan.num_classes)
        gen = torch_generator(derive_seed(seed, "supernet-init"))
        # all three alpha blocks always exist so the flattened gradient
        # layout is independent of which roles the layout uses
        self.alpha = nn.ParameterDict(
            {
                role.value: nn.Parameter(
                    1e-3 * torch.randn(topo.num_edges, len(OpKind), generator=gen)
                )
                for role in ROLE_ORDER
            }
        )
        _init_net_weights(self, gen)

    def mixing_weights(self) -> dict[str, torch.Tensor]:
        return {name: F.softmax(p, dim=-1) for name, p in self.alpha.items()}

    def forward(self, x):
        self._check_batch(x)
        weights = self.mixing_weights()
        return self._run_cells(x, lambda cell, s0, s1: cell(s0, s1, weights[cell.role.value]))

    def arch_parameters(self) -> list[nn.Parameter]:
        return [self.alpha[role.value] for role in ROLE_ORDER]

    def weight_parameters(self) -> list[nn.Parameter]:
        arch = {id(p) for p in self.arch_parameters()}
        return [p for p in self.parameters() if id(p) not in arch]

    def alpha_numpy(self) -> dict[str, np.ndarray]:
        return {name: p.detach().cpu().numpy().copy() for name, p in self.alpha.items()}


class DiscreteNet(_NetBase):
    def __init__(self, plan: LayoutPlan, genotype: Genotype, seed: int, norm: str = "batch"):
        super().__init__(plan, norm)
        genotype.validate()
        self.genotype = genotype
        self.seed = seed
        self.cells = nn.ModuleList()
        c_pp = c_p = plan.stem_channels
        reduction_prev = False
        for slot in plan.slots:
            cell = DiscreteCell(genotype, c_pp, c_p, slot.channels, slot.role, reduction_prev, norm)
            self.cells.append(cell)
            reduction_prev = slot.role is CellRole.REDUCTION
            c_pp, c_p = c_p, genotype.num_intermediate_nodes * slot.channels
        self.classifier = nn.Linear(c_p, plan.num_classes)
        _init_net_weights(self, torch_generator(derive_seed(seed, "discrete-init")))

    def forward(self, x):
        self._check_batch(x)
        return self._run_cells(x, lambda cell, s0, s1: cell(s0, s1))

    def weight_parameters(self) -> list[nn.Parameter]:
        return list(self.parameters())


def init_supernet(cfg: MacroConfig, topo: CellTopology, seed: int, norm: str = "batch") -> Supernet:
    return Supernet(build_macro_layout(cfg), topo, seed, norm=norm)


def instantiate_discrete(
    genotype: Genotype, cfg: MacroConfig, seed: int, norm: str = "batch"
) -> DiscreteNet:
    return DiscreteNet(build_macro_layout(cfg), genotype, seed, norm=norm)


def cross_entropy_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if logits.dim() != 2:
        raise ValueError(f"logits must be 2d (batch, classes), got {tuple(logits.shape)}")
    if labels.dim() != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError("labels must be 1d and match the batch size")
    k = logits.shape[1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= k):
        raise ValueError(f"label out of range for {k} classes")
    return F.cross_entropy(logits, labels)


def gradients(net: nn.Module, x: torch.Tensor, y: torch.Tensor, wrt: WrtGroup):
    """Exact reverse-mode gradients of the mean cross-entropy.

    Returns a list of tensors matching the parameter group (zeros for
    parameters with no influence), or a single tensor for wrt='input'.
    """
    if wrt == "input":
        x = x.detach().clone().requires_grad_(True)
        loss = cross_entropy_loss(net(x), y)
        (grad,) = torch.autograd.grad(loss, [x])
        return grad
    if wrt == "weights":
        params = net.weight_parameters()
    elif wrt == "alpha":
        if not isinstance(net, Supernet):
            raise ValueError("alpha gradients are only defined for a supernet")
        params = net.arch_parameters()
    else:
        raise ValueError(f"unknown gradient group {wrt!r}")
    loss = cross_entropy_loss(net(x), y)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def set_alpha_from_genotype(net: Supernet, genotype: Genotype) -> None:
    """Drive the supernet to the genotype's corner of the relaxation:
    exact one-hot rows (logit 0 for the kept op, -inf elsewhere) on selected
    edges, one-hot on the zero op everywhere else."""
    edges = net.topo.edges()
    index = {e: i for i, e in enumerate(edges)}
    with torch.no_grad():
        for role in ROLE_ORDER:
            block = net.alpha[role.value]
            block.fill_(float("-inf"))
            chosen = {}
            for e in genotype.by_role(role):
                chosen[index[(e.src, e.dst)]] = int(e.op)
            for row in range(block.shape[0]):
                block[row, chosen.get(row, int(OpKind.ZERO))] = 0.0


def set_alpha_single_op(net: Supernet, op: OpKind) -> None:
    """One-hot every alpha row on the same op (exact softmax one-hot)."""
    with torch.no_grad():
        for role in ROLE_ORDER:
            block = net.alpha[role.value]
            block.fill_(float("-inf"))
            block[:, int(op)] = 0.0


def transfer_weights(supernet: Supernet, dnet: DiscreteNet) -> None:
    """Copy stem/head/preprocess/op weights from a supernet into a discrete
    net built from the same layout and a genotype of the supernet's topology,
    so the two compute the same function when the supernet's alpha is one-hot
    on that genotype."""
    if len(supernet.cells) != len(dnet.cells):
        raise ValueError("cell count mismatch between supernet and discrete net")
    edge_index = {e: i for i, e in enumerate(supernet.topo.edges())}
    src_state = supernet.state_dict()
    dst_state = dnet.state_dict()
    mapped: dict[str, torch.Tensor] = {}
    for name in dst_state:
        if name.startswith("cells.") and "._ops." in name:
            head, rest = name.split("._ops.", 1)
            pos_str, param_path = rest.split(".", 1)
            cell_idx = int(head.split(".")[1])
            cell = dnet.cells[cell_idx]
            role = CellRole.REDUCTION if cell.role is CellRole.REDUCTION else cell.role
            edge = dnet.genotype.by_role(role)[int(pos_str)]
            row = edge_index[(edge.src, edge.dst)]
            src_name = f"{head}._ops.{row}._ops.{int(edge.op)}.{param_path}"
            if src_name in src_state:
                mapped[name] = src_state[src_name]
        elif name in src_state and src_state[name].shape == dst_state[name].shape:
            mapped[name] = src_state[name]
    # affine norm params have no supernet counterpart (affine off there);
    # their fresh (1, 0) init already matches the identity the supernet
    # computes, so only non-norm leftovers signal a real mismatch
    leftover = [n for n in dst_state if n not in mapped and not _is_norm_param(dnet, n)]
    if leftover:
        raise ValueError(f"could not map discrete parameters: {leftover[:5]}")
    dst_state.update(mapped)
    dnet.load_state_dict(dst_state)


def _is_norm_param(net: nn.Module, name: str) -> bool:
    mod_path = name.rsplit(".", 1)[0]
    mod = net
    for part in mod_path.split("."):
        mod = getattr(mod, part) if not part.isdigit() else mod[int(part)]
    return isinstance(mod, (nn.BatchNorm2d, nn.GroupNorm))
