import json

import numpy as np
import pytest
import torch

from arnas.checkpoint import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint
from arnas.network import init_supernet, instantiate_discrete
from arnas.rng import numpy_generator
from arnas.search_space import (
    ArchParams,
    CellRole,
    CellTopology,
    MacroConfig,
    OpKind,
    discretize,
    serialize_genotype,
)

MACRO = MacroConfig(num_cells=3, init_channels=4, num_classes=3, input_shape=(3, 8, 8))


def make_discrete(seed=0):
    topo = CellTopology(2)
    rng = numpy_generator(seed)
    blocks = [rng.normal(size=(topo.num_edges, len(OpKind))) for _ in range(3)]
    geno = discretize(ArchParams(*blocks), topo)
    return instantiate_discrete(geno, MACRO, seed=seed, norm="group")


def test_discrete_round_trip_bit_exact(tmp_path):
    net = make_discrete(1)
    net.set_input_normalization([0.4, 0.5, 0.6], [0.2, 0.2, 0.3])
    path = tmp_path / "model.npz"
    save_checkpoint(path, net, MACRO, extra={"note": "trained 0 epochs"})
    loaded, meta = load_checkpoint(path)
    assert meta["kind"] == "discrete"
    assert meta["extra"] == {"note": "trained 0 epochs"}
    src, dst = net.state_dict(), loaded.state_dict()
    assert set(src) == set(dst)
    for name in src:
        assert torch.equal(src[name], dst[name]), name
        assert src[name].dtype == dst[name].dtype
    assert serialize_genotype(loaded.genotype) == serialize_genotype(net.genotype)
    x = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(0))
    assert torch.equal(net(x), loaded(x))


def test_supernet_round_trip_preserves_alpha(tmp_path):
    topo = CellTopology(2)
    net = init_supernet(MACRO, topo, seed=7)
    with torch.no_grad():
        net.alpha["robust"].add_(0.25)
    path = tmp_path / "super.npz"
    save_checkpoint(path, net, MACRO)
    loaded, meta = load_checkpoint(path)
    assert meta["kind"] == "supernet"
    assert loaded.topo.num_intermediate_nodes == 2
    for role in ("accurate", "robust", "reduction"):
        assert torch.equal(loaded.alpha[role], net.alpha[role])


def test_checkpoint_is_byte_stable(tmp_path):
    net = make_discrete(2)
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    save_checkpoint(a, net, MACRO)
    save_checkpoint(b, net, MACRO)
    assert a.read_bytes() == b.read_bytes()


def test_version_and_kind_rejected(tmp_path):
    net = make_discrete(3)
    path = tmp_path / "model.npz"
    save_checkpoint(path, net, MACRO)
    with np.load(path) as archive:
        arrays = {name: archive[name] for name in archive.files}
    meta = json.loads(bytes(arrays["meta"]).decode())
    meta["version"] = CHECKPOINT_VERSION + 1
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    bad = tmp_path / "bad.npz"
    np.savez(bad, **arrays)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(bad)
    np.savez(tmp_path / "empty.npz", other=np.zeros(1))
    with pytest.raises(ValueError, match="no meta"):
        load_checkpoint(tmp_path / "empty.npz")


def test_macro_round_trip_via_checkpoint(tmp_path):
    macro = MacroConfig(
        num_cells=3,
        init_channels=4,
        placement=(CellRole.ROBUST, CellRole.ACCURATE, CellRole.ACCURATE),
        filter_setting=(1, 2, 4),
        num_classes=5,
        input_shape=(3, 8, 8),
    )
    topo = CellTopology(2)
    net = init_supernet(macro, topo, seed=1)
    path = tmp_path / "m.npz"
    save_checkpoint(path, net, macro)
    loaded, meta = load_checkpoint(path)
    assert meta["macro"]["placement"] == "R-A-A"
    assert tuple(meta["macro"]["filter_setting"]) == (1, 2, 4)
    assert loaded.plan.num_classes == 5
    assert [slot.channels for slot in loaded.plan.slots] == [
        slot.channels for slot in net.plan.slots
    ]


def test_missing_state_entry_fails_strict(tmp_path):
    net = make_discrete(4)
    path = tmp_path / "model.npz"
    save_checkpoint(path, net, MACRO)
    with np.load(path) as archive:
        arrays = {name: archive[name] for name in archive.files}
    removed = next(n for n in arrays if n.startswith("state::cells"))
    del arrays[removed]
    crippled = tmp_path / "crippled.npz"
    np.savez(crippled, **arrays)
    with pytest.raises(RuntimeError):
        load_checkpoint(crippled)
