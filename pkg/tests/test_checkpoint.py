import struct

import numpy as np
import pytest
import torch

from dacal.checkpoint import EnhancerCheckpoint, load_checkpoint, load_module, module_blocks, save_checkpoint
from dacal.enhancer import Enhancer, EnhancerSpec
from dacal.errors import CheckpointCorruptError, CheckpointShapeError, CheckpointVersionError

SPEC = EnhancerSpec(depth=2, base_channels=4, global_channels=4, head_channels=4, refine_channels=4)


def make_ckpt():
    torch.manual_seed(0)
    E, E_hat = Enhancer(SPEC), Enhancer(SPEC)
    blocks = {**module_blocks(E), **module_blocks(E_hat, "hat.")}
    blocks["netS1"] = np.random.default_rng(0).normal(size=(8, 4))
    return EnhancerCheckpoint(blocks=blocks, specs={"E": SPEC.to_dict()},
                              penalty_states={"C": {"lam": 10.0, "avg": 0.0}},
                              train_config={"mode": "supervised"}, iteration=17, stage=2), E, E_hat


def test_round_trip_byte_identical(tmp_path):
    ckpt, _, _ = make_ckpt()
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(ckpt, a)
    loaded = load_checkpoint(a)
    save_checkpoint(loaded, b)
    assert a.read_bytes() == b.read_bytes()
    assert loaded.iteration == 17 and loaded.stage == 2
    for k, v in ckpt.blocks.items():
        assert loaded.blocks[k].dtype == v.dtype
        np.testing.assert_array_equal(loaded.blocks[k], v)


def test_state_dict_prefixes(tmp_path):
    ckpt, E, E_hat = make_ckpt()
    save_checkpoint(ckpt, tmp_path / "c.ckpt")
    loaded = load_checkpoint(tmp_path / "c.ckpt")
    fwd = loaded.state_dict()
    assert "netS1" in fwd and not any(k.startswith("hat.") for k in fwd)
    fresh = Enhancer(SPEC)
    load_module(fresh, {k: v for k, v in fwd.items() if k.startswith("netG")})
    for k, v in E.state_dict().items():
        assert torch.equal(fresh.state_dict()[k], v)
    hat = loaded.state_dict("hat.")
    assert torch.equal(hat["netG3.scale.0.weight"], E_hat.state_dict()["netG3.scale.0.weight"])


def test_truncated(tmp_path):
    ckpt, _, _ = make_ckpt()
    path = save_checkpoint(ckpt, tmp_path / "c.ckpt")
    raw = path.read_bytes()
    for cut in (4, 30, len(raw) - 1):
        path.write_bytes(raw[:cut])
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(path)


def test_flipped_byte(tmp_path):
    ckpt, _, _ = make_ckpt()
    path = save_checkpoint(ckpt, tmp_path / "c.ckpt")
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"hello world, definitely not a checkpoint")
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_version_mismatch(tmp_path):
    ckpt, _, _ = make_ckpt()
    path = save_checkpoint(ckpt, tmp_path / "c.ckpt")
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 8, 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_shape_mismatch():
    state = Enhancer(SPEC).state_dict()
    other = Enhancer(EnhancerSpec(depth=2, base_channels=8, global_channels=4, head_channels=4,
                                  refine_channels=4))
    with pytest.raises(CheckpointShapeError):
        load_module(other, state)
    state.pop("netG3.scale.0.weight")
    with pytest.raises(CheckpointShapeError):
        load_module(Enhancer(SPEC), state)


def test_atomic_no_temp_left(tmp_path):
    ckpt, _, _ = make_ckpt()
    save_checkpoint(ckpt, tmp_path / "sub" / "c.ckpt")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["c.ckpt"]
