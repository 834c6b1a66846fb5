"""Tri-cell robust architecture search toolkit.

Searchable supernet with accurate, robust, and reduction cells; min-norm
two-objective architecture updates under adversarial training; attack
evaluation; and the `arnas` command line on top.
"""

from .attacks import AttackConfig, attack_batch, fgsm, pgd
from .bilevel import SearchConfig, SearchResult, search
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetSpec, load, synth_blobs
from .mgda import combine, gamma_star, min_norm_direction
from .network import DiscreteNet, Supernet, init_supernet, instantiate_discrete
from .search_space import (
    ArchParams,
    CellRole,
    CellTopology,
    Genotype,
    MacroConfig,
    OpKind,
    build_macro_layout,
    discretize,
    load_genotype,
    save_genotype,
)
from .stats import flops_breakdown, model_stats, op_frequency
from .training import TrainConfig, adversarial_train, evaluate, transfer_evaluate

__version__ = "0.1.0"

__all__ = [
    "ArchParams",
    "AttackConfig",
    "CellRole",
    "CellTopology",
    "DatasetSpec",
    "DiscreteNet",
    "Genotype",
    "MacroConfig",
    "OpKind",
    "SearchConfig",
    "SearchResult",
    "Supernet",
    "TrainConfig",
    "adversarial_train",
    "attack_batch",
    "build_macro_layout",
    "combine",
    "discretize",
    "evaluate",
    "fgsm",
    "flops_breakdown",
    "gamma_star",
    "init_supernet",
    "instantiate_discrete",
    "load",
    "load_checkpoint",
    "load_genotype",
    "min_norm_direction",
    "model_stats",
    "op_frequency",
    "pgd",
    "save_checkpoint",
    "save_genotype",
    "search",
    "synth_blobs",
    "transfer_evaluate",
]
