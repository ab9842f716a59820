import numpy as np
import pytest
import torch

from mvkt.checkpoint import (
    Checkpoint,
    CheckpointError,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from mvkt.memory_bank import bank_init
from mvkt.models import BackboneConfig, build_backbone


def make_ckpt():
    model = build_backbone(BackboneConfig(in_leads=1, stem_channels=8, n_blocks=3), seed=2)
    model.buffers["stem.bn.running_mean"] += torch.linspace(-1, 1, 8)
    return Checkpoint(
        model,
        train_config={"epochs": 3, "alpha": 1.0},
        epoch=2,
        meta={"label_names": ["a", "b", "c", "d"], "stage": "distill", "lead": 0},
        banks={"student": bank_init(10, 0), "teacher": bank_init(10, 1)},
    )


def test_round_trip_bit_exact(tmp_path):
    ckpt = make_ckpt()
    save_checkpoint(ckpt, tmp_path / "c.ckpt")
    back = load_checkpoint(tmp_path / "c.ckpt")
    assert back.model.digest() == ckpt.model.digest()
    assert set(back.model.buffers) == set(ckpt.model.buffers)
    for name, value in ckpt.model.named_tensors():
        got = {**back.model.params, **back.model.buffers}[name]
        assert got.numpy().tobytes() == value.detach().numpy().tobytes()
    assert back.train_config == ckpt.train_config and back.epoch == 2
    assert back.meta == ckpt.meta and back.label_names == ["a", "b", "c", "d"]
    for role in ("student", "teacher"):
        assert np.array_equal(back.banks[role].rows, ckpt.banks[role].rows)
        assert back.banks[role].momentum == ckpt.banks[role].momentum
    assert (tmp_path / "c.ckpt").read_bytes() == to_bytes(back)


def test_corrupt_inputs(tmp_path):
    raw = to_bytes(make_ckpt())
    with pytest.raises(CheckpointError, match="magic"):
        from_bytes(b"X" + raw[1:])
    with pytest.raises(CheckpointError, match="truncated"):
        from_bytes(raw[:-4])
    with pytest.raises(CheckpointError, match="trailing"):
        from_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_digest_tracks_content():
    a, b = make_ckpt(), make_ckpt()
    assert a.digest() == b.digest()
    b.epoch = 3
    assert a.digest() != b.digest()
