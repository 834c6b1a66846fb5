"""Versioned model checkpoints.

Layout: an uncompressed .npz archive with one JSON document under "meta"
and one array per state-dict entry under "state::<name>". The meta block
holds everything needed to rebuild the module before loading values: the
container version, the network kind, the macro layout fields, the norm
kind, the init seed, the genotype (discrete nets) or the intermediate
node count (supernets, whose alpha blocks live in the state arrays), and
a free-form "extra" dict. Round trips are bit-exact: arrays are written
and restored without dtype or value changes.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import torch

from .network import DiscreteNet, Supernet, init_supernet, instantiate_discrete
from .search_space import (
    CellTopology,
    MacroConfig,
    format_placement,
    parse_genotype,
    parse_placement,
    serialize_genotype,
)

CHECKPOINT_VERSION = 1

_STATE_PREFIX = "state::"


def _macro_doc(cfg: MacroConfig) -> dict:
    return {
        "num_cells": cfg.num_cells,
        "init_channels": cfg.init_channels,
        "placement": format_placement(cfg.placement),
        "filter_setting": list(cfg.filter_setting),
        "num_classes": cfg.num_classes,
        "input_shape": list(cfg.input_shape),
    }


def _macro_from_doc(doc: dict) -> MacroConfig:
    return MacroConfig(
        num_cells=doc["num_cells"],
        init_channels=doc["init_channels"],
        placement=parse_placement(doc["placement"]),
        filter_setting=tuple(doc["filter_setting"]),
        num_classes=doc["num_classes"],
        input_shape=tuple(doc["input_shape"]),
    )


def save_checkpoint(path, net, macro: MacroConfig, extra: dict | None = None) -> None:
    if isinstance(net, DiscreteNet):
        kind, payload = "discrete", {"genotype": json.loads(serialize_genotype(net.genotype))}
    elif isinstance(net, Supernet):
        kind, payload = "supernet", {"num_intermediate_nodes": net.topo.num_intermediate_nodes}
    else:
        raise TypeError(f"cannot checkpoint a {type(net).__name__}")
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "macro": _macro_doc(macro),
        "norm": net.norm_kind,
        "seed": net.seed,
        "extra": extra or {},
        **payload,
    }
    arrays = {
        _STATE_PREFIX + name: tensor.detach().cpu().numpy()
        for name, tensor in net.state_dict().items()
    }
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Rebuild the network a checkpoint describes and restore its state.

    Returns (net, meta). Raises ValueError on version or kind mismatches
    and propagates strict state-dict errors on missing/extra entries.
    """
    with np.load(Path(path), allow_pickle=False) as archive:
        if "meta" not in archive:
            raise ValueError(f"{path} is not a checkpoint: no meta entry")
        meta = json.loads(bytes(archive["meta"]).decode())
        state = {
            name[len(_STATE_PREFIX):]: torch.from_numpy(archive[name].copy())
            for name in archive.files
            if name.startswith(_STATE_PREFIX)
        }
    version = meta.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    macro = _macro_from_doc(meta["macro"])
    if meta["kind"] == "discrete":
        genotype = parse_genotype(json.dumps(meta["genotype"]))
        net = instantiate_discrete(genotype, macro, seed=meta["seed"], norm=meta["norm"])
    elif meta["kind"] == "supernet":
        topo = CellTopology(meta["num_intermediate_nodes"])
        net = init_supernet(macro, topo, seed=meta["seed"], norm=meta["norm"])
    else:
        raise ValueError(f"unknown checkpoint kind {meta['kind']!r}")
    net.load_state_dict(state, strict=True)
    return net, meta
