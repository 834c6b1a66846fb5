"""Model accounting and genotype statistics.

Parameter counts are exact learnable scalar counts. FLOPs are computed at
a configured input shape under a fixed convention so that tests can be
exact: convolutions and linear layers contribute 2 FLOPs per
multiply-accumulate (bias adds ignored), pooling contributes
window_size ops per output element, and normalization layers contribute
2 ops per element. Activations and elementwise adds are not counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .search_space import Genotype, OP_NAMES, ROLE_ORDER


@dataclass(frozen=True)
class ModuleCount:
    """One counted module invocation (per sample, batch divided out)."""

    path: str
    kind: str  # conv | linear | pool | norm
    macs: int  # multiply-accumulates; 0 for pool/norm
    ops: int  # non-MAC ops; 0 for conv/linear

    @property
    def flops(self) -> int:
        return 2 * self.macs + self.ops


@dataclass(frozen=True)
class FlopsBreakdown:
    entries: tuple[ModuleCount, ...]

    @property
    def conv_macs(self) -> int:
        return sum(e.macs for e in self.entries if e.kind == "conv")

    @property
    def linear_macs(self) -> int:
        return sum(e.macs for e in self.entries if e.kind == "linear")

    @property
    def pool_ops(self) -> int:
        return sum(e.ops for e in self.entries if e.kind == "pool")

    @property
    def norm_ops(self) -> int:
        return sum(e.ops for e in self.entries if e.kind == "norm")

    @property
    def flops(self) -> int:
        return sum(e.flops for e in self.entries)

    def flops_under(self, path_prefix: str) -> int:
        return sum(e.flops for e in self.entries if e.path.startswith(path_prefix))


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def _pair(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


def _count_call(path: str, module: nn.Module, x: torch.Tensor, out: torch.Tensor) -> ModuleCount:
    batch = out.shape[0]
    out_elems = out.numel() // batch
    if isinstance(module, nn.Conv2d):
        return ModuleCount(path, "conv", out_elems * module.weight.shape[1:].numel(), 0)
    if isinstance(module, nn.Linear):
        return ModuleCount(path, "linear", out_elems * module.in_features, 0)
    if isinstance(module, (nn.MaxPool2d, nn.AvgPool2d)):
        kh, kw = _pair(module.kernel_size)
        return ModuleCount(path, "pool", 0, out_elems * kh * kw)
    if isinstance(module, nn.AdaptiveAvgPool2d):
        # each output cell averages its input window; windows tile the input
        in_elems = x.numel() // batch
        return ModuleCount(path, "pool", 0, in_elems)
    if isinstance(module, (nn.BatchNorm2d, nn.GroupNorm)):
        return ModuleCount(path, "norm", 0, 2 * out_elems)
    raise TypeError(f"uncounted module type {type(module).__name__}")


_COUNTED = (
    nn.Conv2d,
    nn.Linear,
    nn.MaxPool2d,
    nn.AvgPool2d,
    nn.AdaptiveAvgPool2d,
    nn.BatchNorm2d,
    nn.GroupNorm,
)


def flops_breakdown(module: nn.Module, example: torch.Tensor | None = None) -> FlopsBreakdown:
    """Run one forward pass and record per-module counts.

    Modules invoked several times are counted per invocation. `example`
    defaults to a zero batch shaped by the module's layout plan.
    """
    if example is None:
        if not hasattr(module, "plan"):
            raise ValueError("module has no layout plan; pass an example input")
        example = torch.zeros(1, *module.plan.input_shape)
    entries: list[ModuleCount] = []
    handles = []

    def attach(path, m):
        def hook(mod, inputs, output):
            entries.append(_count_call(path, mod, inputs[0], output))

        handles.append(m.register_forward_hook(hook))

    for path, m in module.named_modules():
        if isinstance(m, _COUNTED):
            attach(path, m)
    was_training = module.training
    module.eval()
    try:
        with torch.no_grad():
            module(example)
    finally:
        module.train(was_training)
        for h in handles:
            h.remove()
    return FlopsBreakdown(tuple(entries))


def model_stats(net: nn.Module, example: torch.Tensor | None = None) -> tuple[int, int]:
    """(learnable parameter count, FLOPs for one sample)."""
    return count_params(net), flops_breakdown(net, example).flops


def op_frequency(genotypes: list[Genotype]) -> dict[tuple[str, str], int]:
    """Selection counts per (role, op name) across a genotype corpus.

    Every (role, op) key is present, zero included, so emitted tables have
    a fixed schema; per-role counts sum to files * 2 * intermediate nodes.
    """
    if not genotypes:
        raise ValueError("need at least one genotype")
    counts = {(role.value, name): 0 for role in ROLE_ORDER for name in OP_NAMES}
    for g in genotypes:
        g.validate()
        for role in ROLE_ORDER:
            for edge in g.by_role(role):
                counts[(role.value, edge.op.canonical_name)] += 1
    return counts


def frequency_rows(counts: dict[tuple[str, str], int]) -> list[tuple[str, str, int]]:
    """Rows for the role,op,count table in fixed role-then-op order."""
    return [
        (role.value, name, counts[(role.value, name)])
        for role in ROLE_ORDER
        for name in OP_NAMES
    ]
