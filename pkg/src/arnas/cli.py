"""Command-line front end: JSON run configs in, artifacts out.

Seven subcommands share one shape: parse a strictly-validated config
(unknown keys are fatal), derive every internal seed from the single run
seed, run the pipeline, and write byte-stable files into the output
directory. Config errors exit with 2, runtime failures with 1.
"""

import argparse
import glob as globmod
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .attacks import AttackConfig
from .bilevel import SearchConfig, history_csv, search
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetSpec, load
from .network import init_supernet, instantiate_discrete
from .rng import derive_seed
from .search_space import (
    CellTopology,
    MacroConfig,
    build_macro_layout,
    format_placement,
    load_genotype,
    parse_placement,
    save_genotype,
)
from .stats import flops_breakdown, frequency_rows, model_stats, op_frequency
from .training import (
    EVAL_ATTACKS_DEFAULT,
    TrainConfig,
    adversarial_train,
    eval_report_json,
    evaluate,
    train_log_csv,
    transfer_evaluate,
)

PGD20 = EVAL_ATTACKS_DEFAULT[1]

# Grid of (placement, filter multipliers) pairs searched by `arnas ablate`
# when the config does not supply its own.
DEFAULT_ABLATION_GRID = (
    ("A-A-R", (1, 2, 2)),
    ("R-A-A", (1, 2, 2)),
    ("A-R-A", (1, 2, 2)),
    ("A-A-R", (1, 2, 3)),
    ("A-A-R", (1, 2, 4)),
    ("A-A-A", (1, 2, 4)),
)

# Ablation legs default to short schedules; full-length search and
# training for every grid row is out of scope for a single workstation.
ABLATE_SEARCH_DEFAULTS = {"epochs": 2}
ABLATE_TRAIN_DEFAULTS = {"epochs": 5, "decay_epochs": ()}

ABLATION_CAVEAT = (
    "# reduced-settings grid on desk-scale data;"
    " row ordering is not a claim about full-scale training"
)


class ConfigError(Exception):
    """Malformed run configuration; the process exits with code 2."""


# ---------------------------------------------------------------------------
# config parsing


def _as_mapping(doc, where: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    return doc


def _check_keys(doc: dict, where: str, allowed) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys: {', '.join(unknown)}")


def _build(factory, where: str, /, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _int_tuple(value, where: str) -> tuple:
    ok = isinstance(value, (list, tuple)) and all(
        isinstance(v, int) and not isinstance(v, bool) for v in value
    )
    if not ok:
        raise ConfigError(f"{where}: expected a list of integers")
    return tuple(value)


def _read_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})")
    return _as_mapping(doc, str(p))


def _resolve_seed(doc: dict, args) -> int:
    env = os.environ.get("ARNAS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"ARNAS_SEED must be an integer, got {env!r}") from None
    if args.seed is not None:
        return args.seed
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed: expected an integer")
    return seed


def _resolve_out(doc: dict, args) -> Path:
    out = args.out if args.out is not None else doc.get("out", ".")
    if not isinstance(out, str):
        raise ConfigError("out: expected a string path")
    return Path(out)


def _input_path(doc: dict, key: str) -> Path:
    if key not in doc:
        raise ConfigError(f"{key} is required")
    value = doc[key]
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string path")
    path = Path(value)
    if not path.is_file():
        raise ConfigError(f"{key}: file not found: {path}")
    return path


_DATASET_KEYS = (
    "source", "num_classes", "per_class_limit", "image_size",
    "random_crop", "random_flip", "noise_std",
)


def _dataset_spec(doc, run_seed: int) -> DatasetSpec:
    doc = _as_mapping(doc, "dataset")
    _check_keys(doc, "dataset", _DATASET_KEYS)
    return _build(DatasetSpec, "dataset", seed=derive_seed(run_seed, "data"), **doc)


_ATTACK_KEYS = ("epsilon", "step_size", "steps", "random_start")


def _attack_config(doc, where: str) -> AttackConfig:
    doc = _as_mapping(doc, where)
    _check_keys(doc, where, _ATTACK_KEYS)
    return _build(AttackConfig, where, **doc)


_MACRO_KEYS = (
    "num_cells", "init_channels", "placement", "filter_setting",
    "num_classes", "input_shape",
)


def _macro_config(doc) -> MacroConfig:
    doc = _as_mapping(doc, "macro")
    _check_keys(doc, "macro", _MACRO_KEYS)
    kwargs = dict(doc)
    if "placement" in kwargs:
        try:
            kwargs["placement"] = parse_placement(kwargs["placement"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"macro.placement: {exc}") from None
    for key in ("filter_setting", "input_shape"):
        if key in kwargs:
            kwargs[key] = _int_tuple(kwargs[key], f"macro.{key}")
    macro = _build(MacroConfig, "macro", **kwargs)
    _build(build_macro_layout, "macro", cfg=macro)  # fail fast on bad geometry
    return macro


_SEARCH_KEYS = (
    "epochs", "batch_size", "lam", "attack", "weight_lr", "weight_momentum",
    "weight_decay", "arch_lr", "arch_betas", "arch_weight_decay", "xi",
    "fd_scale", "arch_update", "arch_optimizer",
)


def _search_config(doc, run_seed: int, epochs_flag=None, defaults=None) -> SearchConfig:
    doc = _as_mapping(doc, "search")
    _check_keys(doc, "search", _SEARCH_KEYS)
    kwargs = dict(defaults or {})
    kwargs.update(doc)
    if isinstance(kwargs.get("attack"), dict):
        kwargs["attack"] = _attack_config(kwargs["attack"], "search.attack")
    if "arch_betas" in kwargs:
        betas = kwargs["arch_betas"]
        if not isinstance(betas, (list, tuple)) or len(betas) != 2:
            raise ConfigError("search.arch_betas: expected two numbers")
        kwargs["arch_betas"] = (float(betas[0]), float(betas[1]))
    if epochs_flag is not None:
        kwargs["epochs"] = epochs_flag
    return _build(SearchConfig, "search", seed=derive_seed(run_seed, "search"), **kwargs)


_TRAIN_KEYS = (
    "epochs", "lr", "momentum", "weight_decay", "decay_epochs",
    "decay_factor", "batch_size", "attack",
)


def _train_config(doc, run_seed: int, epochs_flag=None, defaults=None) -> TrainConfig:
    doc = _as_mapping(doc, "train")
    _check_keys(doc, "train", _TRAIN_KEYS)
    kwargs = dict(defaults or {})
    kwargs.update(doc)
    if isinstance(kwargs.get("attack"), dict):
        kwargs["attack"] = _attack_config(kwargs["attack"], "train.attack")
    if "decay_epochs" in kwargs:
        kwargs["decay_epochs"] = _int_tuple(kwargs["decay_epochs"], "train.decay_epochs")
    if epochs_flag is not None:
        kwargs["epochs"] = epochs_flag
    return _build(TrainConfig, "train", seed=derive_seed(run_seed, "train"), **kwargs)


def _topology(doc: dict) -> CellTopology:
    nodes = doc.get("num_intermediate_nodes", 4)
    if not isinstance(nodes, int) or isinstance(nodes, bool):
        raise ConfigError("num_intermediate_nodes: expected an integer")
    return _build(CellTopology, "num_intermediate_nodes", num_intermediate_nodes=nodes)


def _norm_kind(doc: dict) -> str:
    norm = doc.get("norm", "batch")
    if norm not in ("batch", "group"):
        raise ConfigError(f"norm: expected 'batch' or 'group', got {norm!r}")
    return norm


def _batch_size(doc: dict, key: str, default: int = 32) -> int:
    value = doc.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{key}: expected a positive integer")
    return value


# ---------------------------------------------------------------------------
# subcommand pipelines


@dataclass
class SearchRun:
    out: Path
    seed: int
    dataset: DatasetSpec
    macro: MacroConfig
    cfg: SearchConfig
    topo: CellTopology
    norm: str


def _parse_search(doc: dict, args) -> SearchRun:
    _check_keys(doc, "config", ("seed", "out", "dataset", "macro", "search",
                                "num_intermediate_nodes", "norm"))
    seed = _resolve_seed(doc, args)
    return SearchRun(
        out=_resolve_out(doc, args),
        seed=seed,
        dataset=_dataset_spec(doc.get("dataset", {}), seed),
        macro=_macro_config(doc.get("macro", {})),
        cfg=_search_config(doc.get("search", {}), seed, epochs_flag=args.epochs),
        topo=_topology(doc),
        norm=_norm_kind(doc),
    )


def _run_search(run: SearchRun) -> None:
    train_stream, val_stream, _ = load(run.dataset)
    result = search(run.cfg, run.macro, (train_stream, val_stream),
                    topo=run.topo, norm=run.norm)
    # Artifacts are written only after the search completes, so a failed
    # run never leaves a genotype behind.
    run.out.mkdir(parents=True, exist_ok=True)
    save_genotype(result.genotype, run.out / "genotype.json")
    save_checkpoint(run.out / "supernet.npz", result.net, run.macro,
                    extra={"stage": "search"})
    (run.out / "search_history.csv").write_text(history_csv(result.history))
    print(f"wrote {run.out / 'genotype.json'}")


@dataclass
class TrainRun:
    out: Path
    seed: int
    dataset: DatasetSpec
    macro: MacroConfig
    cfg: TrainConfig
    genotype_path: Path
    norm: str


def _parse_train(doc: dict, args) -> TrainRun:
    _check_keys(doc, "config", ("seed", "out", "dataset", "macro", "train",
                                "genotype", "norm"))
    seed = _resolve_seed(doc, args)
    return TrainRun(
        out=_resolve_out(doc, args),
        seed=seed,
        dataset=_dataset_spec(doc.get("dataset", {}), seed),
        macro=_macro_config(doc.get("macro", {})),
        cfg=_train_config(doc.get("train", {}), seed, epochs_flag=args.epochs),
        genotype_path=_input_path(doc, "genotype"),
        norm=_norm_kind(doc),
    )


def _run_train(run: TrainRun) -> None:
    genotype = load_genotype(run.genotype_path)
    train_stream, val_stream, _ = load(run.dataset)
    net = instantiate_discrete(genotype, run.macro,
                               seed=derive_seed(run.seed, "model-init"),
                               norm=run.norm)
    net.set_input_normalization(train_stream.mean, train_stream.std)
    logs = adversarial_train(net, (train_stream, val_stream), run.cfg)
    run.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(run.out / "model.npz", net, run.macro,
                    extra={"stage": "train", "epochs": run.cfg.epochs})
    (run.out / "train_log.csv").write_text(train_log_csv(logs))
    print(f"wrote {run.out / 'model.npz'}")


@dataclass
class EvalRun:
    out: Path
    seed: int
    dataset: DatasetSpec
    checkpoint: Path
    attacks: tuple
    batch_size: int


def _parse_eval(doc: dict, args) -> EvalRun:
    _check_keys(doc, "config", ("seed", "out", "dataset", "checkpoint",
                                "attacks", "batch_size"))
    seed = _resolve_seed(doc, args)
    attacks_doc = doc.get("attacks")
    if attacks_doc is None:
        attacks = EVAL_ATTACKS_DEFAULT
    else:
        if not isinstance(attacks_doc, list) or not attacks_doc:
            raise ConfigError("attacks: expected a non-empty list of attack objects")
        attacks = tuple(_attack_config(entry, f"attacks[{i}]")
                        for i, entry in enumerate(attacks_doc))
    return EvalRun(
        out=_resolve_out(doc, args),
        seed=seed,
        dataset=_dataset_spec(doc.get("dataset", {}), seed),
        checkpoint=_input_path(doc, "checkpoint"),
        attacks=attacks,
        batch_size=_batch_size(doc, "batch_size"),
    )


def _run_eval(run: EvalRun) -> None:
    net, meta = load_checkpoint(run.checkpoint)
    _, _, test_stream = load(run.dataset)
    report = evaluate(
        net, test_stream, run.attacks,
        batch_size=run.batch_size,
        seed=derive_seed(run.seed, "eval"),
        metadata={"dataset": run.dataset.source, "checkpoint_kind": meta["kind"]},
    )
    run.out.mkdir(parents=True, exist_ok=True)
    (run.out / "eval_report.json").write_text(eval_report_json(report))
    accs = " ".join(f"{label} {acc:.4f}" for label, acc in report.attack_accs.items())
    print(f"natural {report.natural_acc:.4f} {accs}")


@dataclass
class TransferRun:
    out: Path
    seed: int
    dataset: DatasetSpec
    source: Path
    target: Path
    attack: AttackConfig
    batch_size: int


def _parse_transfer(doc: dict, args) -> TransferRun:
    _check_keys(doc, "config", ("seed", "out", "dataset", "source_checkpoint",
                                "target_checkpoint", "attack", "batch_size"))
    seed = _resolve_seed(doc, args)
    attack = PGD20 if "attack" not in doc else _attack_config(doc["attack"], "attack")
    return TransferRun(
        out=_resolve_out(doc, args),
        seed=seed,
        dataset=_dataset_spec(doc.get("dataset", {}), seed),
        source=_input_path(doc, "source_checkpoint"),
        target=_input_path(doc, "target_checkpoint"),
        attack=attack,
        batch_size=_batch_size(doc, "batch_size"),
    )


def _run_transfer(run: TransferRun) -> None:
    source, source_meta = load_checkpoint(run.source)
    target, target_meta = load_checkpoint(run.target)
    _, _, test_stream = load(run.dataset)
    # The eval-derived seed keeps source == target an exact collapse onto
    # the white-box number cmd_eval reports for the same attack.
    acc = transfer_evaluate(source, target, test_stream, run.attack,
                            batch_size=run.batch_size,
                            seed=derive_seed(run.seed, "eval"))
    doc = {
        "attack": run.attack.label(),
        "batch_size": run.batch_size,
        "dataset": run.dataset.source,
        "epsilon": run.attack.epsilon,
        "seed": run.seed,
        "source_kind": source_meta["kind"],
        "target_kind": target_meta["kind"],
        "transfer_acc": acc,
    }
    run.out.mkdir(parents=True, exist_ok=True)
    (run.out / "transfer_report.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"transfer {run.attack.label()} {acc:.4f}")


@dataclass
class AblateRun:
    out: Path
    seed: int
    dataset: DatasetSpec
    macro: MacroConfig
    search_cfg: SearchConfig
    train_cfg: TrainConfig
    grid: tuple
    topo: CellTopology
    norm: str
    eval_batch_size: int
    eval_attack: AttackConfig = field(default=PGD20)


def _parse_grid(doc) -> tuple:
    if doc is None:
        rows = DEFAULT_ABLATION_GRID
    else:
        if not isinstance(doc, list) or not doc:
            raise ConfigError("grid: expected a non-empty list of rows")
        rows = []
        for i, entry in enumerate(doc):
            entry = _as_mapping(entry, f"grid[{i}]")
            _check_keys(entry, f"grid[{i}]", ("placement", "filter_setting"))
            if "placement" not in entry or "filter_setting" not in entry:
                raise ConfigError(f"grid[{i}]: needs placement and filter_setting")
            rows.append((entry["placement"], entry["filter_setting"]))
    grid = []
    for i, (placement, filters) in enumerate(rows):
        try:
            parsed = parse_placement(placement)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"grid[{i}].placement: {exc}") from None
        filters = _int_tuple(filters, f"grid[{i}].filter_setting")
        if len(filters) != 3:
            raise ConfigError(f"grid[{i}].filter_setting: expected 3 multipliers")
        grid.append((parsed, filters))
    return tuple(grid)


def _parse_ablate(doc: dict, args) -> AblateRun:
    _check_keys(doc, "config", ("seed", "out", "dataset", "macro", "search",
                                "train", "grid", "num_intermediate_nodes",
                                "norm", "eval_batch_size"))
    seed = _resolve_seed(doc, args)
    return AblateRun(
        out=_resolve_out(doc, args),
        seed=seed,
        dataset=_dataset_spec(doc.get("dataset", {}), seed),
        macro=_macro_config(doc.get("macro", {})),
        search_cfg=_search_config(doc.get("search", {}), seed,
                                  defaults=ABLATE_SEARCH_DEFAULTS),
        train_cfg=_train_config(doc.get("train", {}), seed,
                                defaults=ABLATE_TRAIN_DEFAULTS),
        grid=_parse_grid(doc.get("grid")),
        topo=_topology(doc),
        norm=_norm_kind(doc),
        eval_batch_size=_batch_size(doc, "eval_batch_size"),
    )


def _ablate_leg(run: AblateRun, placement, filters, leg_seed: int, leg_dir: Path,
                search_data, test_stream):
    macro = replace(run.macro, placement=placement, filter_setting=filters)
    cfg = replace(run.search_cfg, seed=derive_seed(leg_seed, "search"))
    result = search(cfg, macro, search_data, topo=run.topo, norm=run.norm)
    leg_dir.mkdir(parents=True, exist_ok=True)
    save_genotype(result.genotype, leg_dir / "genotype.json")
    net = instantiate_discrete(result.genotype, macro,
                               seed=derive_seed(leg_seed, "model-init"),
                               norm=run.norm)
    net.set_input_normalization(search_data[0].mean, search_data[0].std)
    adversarial_train(net, search_data,
                      replace(run.train_cfg, seed=derive_seed(leg_seed, "train")))
    report = evaluate(net, test_stream, (run.eval_attack,),
                      batch_size=run.eval_batch_size,
                      seed=derive_seed(leg_seed, "eval"))
    return report.natural_acc, report.attack_accs[run.eval_attack.label()]


def _run_ablate(run: AblateRun) -> None:
    train_stream, val_stream, test_stream = load(run.dataset)
    run.out.mkdir(parents=True, exist_ok=True)
    lines = [ABLATION_CAVEAT, "placement,filters,natural_acc,pgd20_acc,status"]
    for placement, filters in run.grid:
        name = f"{format_placement(placement)}_{'-'.join(map(str, filters))}"
        try:
            natural, robust = _ablate_leg(
                run, placement, filters,
                derive_seed(run.seed, "ablate", name),
                run.out / "legs" / name,
                (train_stream, val_stream), test_stream,
            )
        except Exception as exc:  # a broken leg must not sink the grid
            print(f"leg {name} failed: {exc}", file=sys.stderr)
            cells = ("", "", "failed")
        else:
            cells = (repr(float(natural)), repr(float(robust)), "ok")
        lines.append(",".join((format_placement(placement),
                               "-".join(map(str, filters))) + cells))
        print(f"leg {name}: {cells[-1]}")
    (run.out / "ablation.csv").write_text("\n".join(lines) + "\n")


@dataclass
class StatsRun:
    out: Path
    files: tuple


def _parse_stats(doc: dict, args) -> StatsRun:
    _check_keys(doc, "config", ("seed", "out", "genotype_files", "genotype_glob"))
    files = []
    if "genotype_files" in doc:
        value = doc["genotype_files"]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError("genotype_files: expected a list of paths")
        for entry in value:
            path = Path(entry)
            if not path.is_file():
                raise ConfigError(f"genotype_files: file not found: {path}")
            files.append(path)
    if "genotype_glob" in doc:
        pattern = doc["genotype_glob"]
        if not isinstance(pattern, str):
            raise ConfigError("genotype_glob: expected a glob pattern string")
        files.extend(Path(p) for p in sorted(globmod.glob(pattern)))
    if not files:
        raise ConfigError(
            "stats needs genotype_files or a genotype_glob matching at least one file")
    return StatsRun(out=_resolve_out(doc, args), files=tuple(files))


def _run_stats(run: StatsRun) -> None:
    genotypes = []
    for path in run.files:
        try:
            genotypes.append(load_genotype(path))
        except Exception as exc:
            print(f"skipping {path}: {exc}", file=sys.stderr)
    if not genotypes:
        raise RuntimeError("no valid genotype files")
    rows = frequency_rows(op_frequency(genotypes))
    lines = ["role,op,count"] + [f"{role},{op},{count}" for role, op, count in rows]
    run.out.mkdir(parents=True, exist_ok=True)
    (run.out / "op_frequency.csv").write_text("\n".join(lines) + "\n")
    print(f"counted {len(genotypes)} genotypes into {run.out / 'op_frequency.csv'}")


@dataclass
class FlopsRun:
    out: Path
    seed: int
    macro: MacroConfig
    genotype_path: Path | None
    topo: CellTopology
    norm: str


def _parse_flops(doc: dict, args) -> FlopsRun:
    _check_keys(doc, "config", ("seed", "out", "genotype", "macro",
                                "num_intermediate_nodes", "norm"))
    return FlopsRun(
        out=_resolve_out(doc, args),
        seed=_resolve_seed(doc, args),
        macro=_macro_config(doc.get("macro", {})),
        genotype_path=_input_path(doc, "genotype") if "genotype" in doc else None,
        topo=_topology(doc),
        norm=_norm_kind(doc),
    )


def _run_flops(run: FlopsRun) -> None:
    init_seed = derive_seed(run.seed, "model-init")
    if run.genotype_path is not None:
        net = instantiate_discrete(load_genotype(run.genotype_path), run.macro,
                                   seed=init_seed, norm=run.norm)
        kind = "discrete"
    else:
        net = init_supernet(run.macro, run.topo, seed=init_seed, norm=run.norm)
        kind = "supernet"
    params, flops = model_stats(net)
    breakdown = flops_breakdown(net)
    doc = {
        "conv_macs": breakdown.conv_macs,
        "flops": flops,
        "kind": kind,
        "linear_macs": breakdown.linear_macs,
        "norm_ops": breakdown.norm_ops,
        "params": params,
        "pool_ops": breakdown.pool_ops,
    }
    run.out.mkdir(parents=True, exist_ok=True)
    (run.out / "model_stats.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"params {params} flops {flops}")


# ---------------------------------------------------------------------------
# entry point

_PIPELINES = {
    "search": (_parse_search, _run_search),
    "train": (_parse_train, _run_train),
    "eval": (_parse_eval, _run_eval),
    "transfer": (_parse_transfer, _run_transfer),
    "ablate": (_parse_ablate, _run_ablate),
    "stats": (_parse_stats, _run_stats),
    "flops": (_parse_flops, _run_flops),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arnas",
        description="Tri-cell robust architecture search toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "search": "bilevel architecture search; writes genotype, supernet snapshot, history CSV",
        "train": "adversarially train a discretized genotype; writes checkpoint and log",
        "eval": "evaluate a checkpoint on natural and attacked inputs",
        "transfer": "score a target checkpoint on examples crafted against a source",
        "ablate": "placement/filter grid: search, train, evaluate each pair",
        "stats": "operation-selection frequencies over a genotype corpus",
        "flops": "parameter and FLOP counts for a genotype or supernet",
    }
    for name, help_text in helps.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="run configuration JSON")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="override the output directory")
        if name in ("search", "train"):
            sp.add_argument("--epochs", type=int, help="override the epoch count")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    parse, run = _PIPELINES[args.command]
    try:
        plan = parse(_read_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        run(plan)
    except Exception as exc:
        if os.environ.get("ARNAS_DEBUG"):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
