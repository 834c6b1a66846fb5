"""Tri-cell search space: candidate ops, cell topology, macro layout, genotypes.

Everything in this module is pure and torch-free: layout construction,
the top-2/argmax discretization rule, and genotype (de)serialization all
operate on plain numpy arrays and dataclasses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Mapping

import numpy as np

GENOTYPE_VERSION = 1


class OpKind(IntEnum):
    """The 8 candidate operations. Integer values fix the alpha column
    order and are the first-level tie-break everywhere."""

    ZERO = 0
    SKIP_CONNECT = 1
    MAX_POOL_3X3 = 2
    AVG_POOL_3X3 = 3
    SEP_CONV_3X3 = 4
    SEP_CONV_5X5 = 5
    DIL_CONV_3X3 = 6
    DIL_CONV_5X5 = 7

    @property
    def canonical_name(self) -> str:
        return self.name.lower()


OP_NAMES: tuple[str, ...] = tuple(op.canonical_name for op in OpKind)
NUM_OPS = len(OpKind)

_OP_BY_NAME = {op.canonical_name: op for op in OpKind}


def op_from_name(name: str) -> OpKind:
    try:
        return _OP_BY_NAME[name]
    except KeyError:
        raise ValueError(
            f"unknown operation name {name!r}; expected one of {sorted(_OP_BY_NAME)}"
        ) from None


class CellRole(Enum):
    ACCURATE = "accurate"
    ROBUST = "robust"
    REDUCTION = "reduction"


# Fixed role order used for alpha blocks, gradient flattening and reports.
ROLE_ORDER: tuple[CellRole, ...] = (CellRole.ACCURATE, CellRole.ROBUST, CellRole.REDUCTION)


@dataclass(frozen=True)
class CellTopology:
    """DAG skeleton of a cell: 2 input nodes, then intermediate nodes each
    consuming the 2 inputs and all earlier intermediates.

    Node indexing: inputs are nodes 0 and 1; intermediate j lives at index
    j + 2. Edge i of the edge list corresponds to alpha row i.
    """

    num_intermediate_nodes: int = 4

    def __post_init__(self):
        if self.num_intermediate_nodes < 1:
            raise ValueError("need at least one intermediate node")

    @property
    def num_edges(self) -> int:
        n = self.num_intermediate_nodes
        return sum(j + 2 for j in range(n))

    def edges(self) -> tuple[tuple[int, int], ...]:
        """All (source, destination) pairs, sorted by (destination, source)."""
        out = []
        for j in range(self.num_intermediate_nodes):
            dst = j + 2
            for src in range(dst):
                out.append((src, dst))
        return tuple(out)

    def incoming_edge_rows(self, dst: int) -> list[int]:
        return [i for i, (_, d) in enumerate(self.edges()) if d == dst]


@dataclass(frozen=True)
class ArchParams:
    """Continuous architecture parameters: one (num_edges x 8) logits
    matrix per cell role."""

    accurate: np.ndarray
    robust: np.ndarray
    reduction: np.ndarray

    def by_role(self, role: CellRole) -> np.ndarray:
        return getattr(self, role.value)

    def blocks(self) -> tuple[np.ndarray, ...]:
        return tuple(self.by_role(r) for r in ROLE_ORDER)

    def validate(self, topo: CellTopology) -> None:
        for role in ROLE_ORDER:
            block = np.asarray(self.by_role(role))
            if block.shape != (topo.num_edges, NUM_OPS):
                raise ValueError(
                    f"alpha block {role.value!r} has shape {block.shape}, "
                    f"expected {(topo.num_edges, NUM_OPS)}"
                )
            if not np.all(np.isfinite(block)):
                raise ValueError(f"alpha block {role.value!r} contains non-finite entries")


@dataclass(frozen=True)
class GenotypeEdge:
    src: int
    dst: int
    op: OpKind


@dataclass(frozen=True)
class Genotype:
    """Discrete architecture: per role, 2 selected (edge, op) pairs per
    intermediate node. Selected edges never carry the zero op."""

    accurate: tuple[GenotypeEdge, ...]
    robust: tuple[GenotypeEdge, ...]
    reduction: tuple[GenotypeEdge, ...]
    num_intermediate_nodes: int = 4
    version: int = GENOTYPE_VERSION

    def by_role(self, role: CellRole) -> tuple[GenotypeEdge, ...]:
        return getattr(self, role.value)

    def validate(self) -> None:
        for role in ROLE_ORDER:
            edges = self.by_role(role)
            seen = set()
            per_node: dict[int, int] = {}
            for e in edges:
                if e.op == OpKind.ZERO:
                    raise ValueError(f"{role.value} cell selects the zero op on edge {e.src}->{e.dst}")
                if not (0 <= e.src < e.dst):
                    raise ValueError(f"{role.value} cell edge {e.src}->{e.dst} must have src < dst")
                if e.dst < 2 or e.dst >= self.num_intermediate_nodes + 2:
                    raise ValueError(f"{role.value} cell edge targets non-intermediate node {e.dst}")
                if (e.src, e.dst) in seen:
                    raise ValueError(f"{role.value} cell selects edge {e.src}->{e.dst} twice")
                seen.add((e.src, e.dst))
                per_node[e.dst] = per_node.get(e.dst, 0) + 1
            for j in range(self.num_intermediate_nodes):
                got = per_node.get(j + 2, 0)
                if got != 2:
                    raise ValueError(
                        f"{role.value} cell node {j + 2} has {got} selected inputs, expected 2"
                    )


@dataclass(frozen=True)
class MacroConfig:
    """Macro-architecture description: how many cells, their placement
    pattern over the three stages, and the stage filter multipliers."""

    num_cells: int = 8
    init_channels: int = 24
    placement: tuple[CellRole, CellRole, CellRole] = (
        CellRole.ACCURATE,
        CellRole.ACCURATE,
        CellRole.ROBUST,
    )
    filter_setting: tuple[int, int, int] = (1, 2, 2)
    num_classes: int = 10
    input_shape: tuple[int, int, int] = (3, 32, 32)


@dataclass(frozen=True)
class CellSlot:
    role: CellRole
    channels: int
    stride: int


@dataclass(frozen=True)
class LayoutPlan:
    """Resolved per-cell plan plus stem / classifier-head descriptions."""

    slots: tuple[CellSlot, ...]
    stem_channels: int
    num_classes: int
    input_shape: tuple[int, int, int]


def reduction_indices(num_cells: int) -> tuple[int, int]:
    return num_cells // 3, (2 * num_cells) // 3


def build_macro_layout(cfg: MacroConfig) -> LayoutPlan:
    """Expand a MacroConfig into the ordered cell-slot plan.

    Reduction slots sit at floor(N/3) and floor(2N/3) (0-based) with
    stride 2; they take the channel count of the stage they open. All
    other slots take the placement role of their stage at stride 1.
    """
    if cfg.num_cells < 3:
        raise ValueError(f"num_cells must be >= 3, got {cfg.num_cells}")
    if cfg.init_channels < 1:
        raise ValueError("init_channels must be positive")
    if len(cfg.placement) != 3 or len(cfg.filter_setting) != 3:
        raise ValueError("placement and filter_setting must have exactly 3 entries")
    for role in cfg.placement:
        if role == CellRole.REDUCTION:
            raise ValueError("placement assigns the reduction role to a non-reduction stage")
    if any(f < 1 for f in cfg.filter_setting):
        raise ValueError("filter_setting entries must be positive")
    if cfg.num_classes < 1:
        raise ValueError("num_classes must be positive")

    r1, r2 = reduction_indices(cfg.num_cells)
    if not (1 <= r1 < r2 <= cfg.num_cells - 1):
        raise ValueError(f"reduction positions {r1}, {r2} are not distinct interior slots")

    stage_channels = tuple(cfg.init_channels * f for f in cfg.filter_setting)
    slots = []
    for i in range(cfg.num_cells):
        if i == r1:
            slots.append(CellSlot(CellRole.REDUCTION, stage_channels[1], 2))
        elif i == r2:
            slots.append(CellSlot(CellRole.REDUCTION, stage_channels[2], 2))
        else:
            stage = 0 if i < r1 else (1 if i < r2 else 2)
            slots.append(CellSlot(cfg.placement[stage], stage_channels[stage], 1))
    return LayoutPlan(
        slots=tuple(slots),
        stem_channels=cfg.init_channels,
        num_classes=cfg.num_classes,
        input_shape=tuple(cfg.input_shape),
    )


def _softmax_rows(block: np.ndarray) -> np.ndarray:
    z = block - block.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def discretize(alpha: ArchParams, topo: CellTopology) -> Genotype:
    """Extract the discrete architecture from alpha.

    Per role and intermediate node: rank incoming edges by the max
    softmax weight over non-zero ops, keep the top 2, and put the argmax
    non-zero op on each kept edge. Ties break toward the lower op index,
    then the lower edge index.
    """
    alpha.validate(topo)
    edges = topo.edges()
    selected: dict[CellRole, tuple[GenotypeEdge, ...]] = {}
    for role in ROLE_ORDER:
        probs = _softmax_rows(np.asarray(alpha.by_role(role), dtype=np.float64))
        chosen: list[GenotypeEdge] = []
        for j in range(topo.num_intermediate_nodes):
            rows = topo.incoming_edge_rows(j + 2)
            ranked = []
            for pos, row in enumerate(rows):
                nonzero = probs[row, 1:]
                best_op = int(np.argmax(nonzero)) + 1  # argmax takes the lowest index on ties
                ranked.append((-nonzero[best_op - 1], best_op, pos, row))
            ranked.sort()
            for _, best_op, _, row in ranked[:2]:
                src, dst = edges[row]
                chosen.append(GenotypeEdge(src, dst, OpKind(best_op)))
        chosen.sort(key=lambda e: (e.dst, e.src))
        selected[role] = tuple(chosen)
    geno = Genotype(
        accurate=selected[CellRole.ACCURATE],
        robust=selected[CellRole.ROBUST],
        reduction=selected[CellRole.REDUCTION],
        num_intermediate_nodes=topo.num_intermediate_nodes,
    )
    geno.validate()
    return geno


def serialize_genotype(g: Genotype) -> str:
    """Render a genotype as its canonical JSON document (sorted keys,
    edges ordered by (to, from)), suitable for byte-stable artifacts."""
    g.validate()
    doc = {
        "version": g.version,
        "num_intermediate_nodes": g.num_intermediate_nodes,
        "cells": {
            role.value: [
                {"from": e.src, "to": e.dst, "op": e.op.canonical_name}
                for e in sorted(g.by_role(role), key=lambda e: (e.dst, e.src))
            ]
            for role in ROLE_ORDER
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def parse_genotype(text: str) -> Genotype:
    """Parse and validate a genotype document produced by serialize_genotype."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"genotype document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("genotype document must be a JSON object")
    version = doc.get("version")
    if version != GENOTYPE_VERSION:
        raise ValueError(f"unsupported genotype version {version!r}")
    n = doc.get("num_intermediate_nodes")
    if not isinstance(n, int) or n < 1:
        raise ValueError(f"invalid num_intermediate_nodes {n!r}")
    cells = doc.get("cells")
    if not isinstance(cells, dict) or set(cells) != {r.value for r in ROLE_ORDER}:
        raise ValueError("genotype 'cells' must map exactly accurate/robust/reduction")
    parsed: dict[str, tuple[GenotypeEdge, ...]] = {}
    for role in ROLE_ORDER:
        entries = cells[role.value]
        if not isinstance(entries, list):
            raise ValueError(f"cell {role.value!r} must be a list of edges")
        edges = []
        for entry in entries:
            if not isinstance(entry, dict) or set(entry) != {"from", "to", "op"}:
                raise ValueError(f"malformed edge entry {entry!r} in {role.value} cell")
            op = op_from_name(entry["op"])
            edges.append(GenotypeEdge(int(entry["from"]), int(entry["to"]), op))
        parsed[role.value] = tuple(sorted(edges, key=lambda e: (e.dst, e.src)))
    geno = Genotype(
        accurate=parsed["accurate"],
        robust=parsed["robust"],
        reduction=parsed["reduction"],
        num_intermediate_nodes=n,
        version=version,
    )
    geno.validate()
    return geno


def load_genotype(path) -> Genotype:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_genotype(fh.read())


def save_genotype(g: Genotype, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_genotype(g))


def parse_placement(text: str) -> tuple[CellRole, CellRole, CellRole]:
    """Parse a placement string like 'A-A-R' (A=accurate, R=robust)."""
    letters = text.strip().upper().split("-")
    if len(letters) != 3 or any(l not in ("A", "R") for l in letters):
        raise ValueError(f"invalid placement {text!r}; expected e.g. 'A-A-R'")
    m = {"A": CellRole.ACCURATE, "R": CellRole.ROBUST}
    return tuple(m[l] for l in letters)  # type: ignore[return-value]


def format_placement(placement: Iterable[CellRole]) -> str:
    m = {CellRole.ACCURATE: "A", CellRole.ROBUST: "R"}
    return "-".join(m[r] for r in placement)
