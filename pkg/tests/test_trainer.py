import numpy as np
import pytest
import torch
from conftest import TINY_BACKBONE, tiny_train_config

from mvkt import losses, models, trainer
from mvkt.checkpoint import save_checkpoint, to_bytes
from mvkt.signal import Dataset
from mvkt.synth import SynthConfig, synth_generate
from mvkt.trainer import TrainConfig, adam_step, distill_student, train_supervised, train_teacher


@pytest.fixture(scope="module")
def teacher(tiny_dataset):
    return train_teacher(tiny_dataset, tiny_train_config(), TINY_BACKBONE, log=lambda r: None)


def test_adam_zero_gradient_is_noop():
    p = {"w": torch.tensor([1.0, -2.0])}
    adam_step(p, {"w": torch.zeros(2)}, {}, 0.1, 0.9, 0.999, 1e-8, 1)
    assert torch.equal(p["w"], torch.tensor([1.0, -2.0]))


def test_adam_first_step():
    p = {"w": torch.tensor([0.0], dtype=torch.float64)}
    adam_step(p, {"w": torch.tensor([1.0], dtype=torch.float64)}, {}, 0.1, 0.9, 0.999, 1e-8, 1)
    assert float(p["w"][0]) == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-12)

    g = torch.tensor([3.0, -0.5, 0.01])
    q = {"w": torch.zeros(3)}
    adam_step(q, {"w": g}, {}, 0.01, 0.9, 0.999, 1e-8, 1)
    assert torch.equal(torch.sign(q["w"]), -torch.sign(g))


def test_adam_rejects_bad_step():
    with pytest.raises(ValueError):
        adam_step({}, {}, {}, 0.1, 0.9, 0.999, 1e-8, 0)


def test_train_config_validation_and_json():
    cfg = TrainConfig(epochs=3, alpha=0.5)
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    assert cfg.replace(seed=4).seed == 4
    with pytest.raises(ValueError):
        TrainConfig(beta=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_zero_epochs_returns_initialization(tiny_dataset):
    cfg = tiny_train_config(epochs=0)
    ckpt = train_teacher(tiny_dataset, cfg, TINY_BACKBONE, log=lambda r: None)
    init = models.build_backbone(TINY_BACKBONE, trainer._streams(cfg.seed).init_seed)
    assert ckpt.epoch == 0
    assert ckpt.model.digest() == init.digest()


def _train_bce(model, x, y):
    with torch.no_grad():
        probs = models.forward(model.clone(), torch.from_numpy(x), "train")[1]
    return float(losses.bce_loss(probs, torch.from_numpy(y)))


def test_one_epoch_reduces_bce():
    manifest, records = synth_generate(SynthConfig(n_records=64, length=200))
    ds = Dataset(manifest, records)
    cfg = tiny_train_config(epochs=1, batch_size=8, learning_rate=3e-3)
    idx = ds.fold_indices(trainer.TRAIN_FOLDS)
    x, y = trainer._inputs(ds, idx, None), ds.labels(idx)
    init = models.build_backbone(TINY_BACKBONE, trainer._streams(cfg.seed).init_seed)
    ckpt = train_teacher(ds, cfg, TINY_BACKBONE, log=lambda r: None)
    assert _train_bce(ckpt.model, x, y) < _train_bce(init, x, y)


def test_teacher_log_records(tiny_dataset):
    records = []
    ckpt = train_teacher(tiny_dataset, tiny_train_config(epochs=2), TINY_BACKBONE, log=records.append)
    assert [r["epoch"] for r in records] == [1, 2]
    assert all(r["stage"] == "teacher" and set(r["components"]) == {"bce", "mkd", "clt"} for r in records)
    best = max(records, key=lambda r: r["val_auc"])
    assert ckpt.epoch == best["epoch"]
    assert ckpt.meta["val_auc"] == pytest.approx(best["val_auc"])


def test_teacher_deterministic(tiny_dataset, teacher):
    again = train_teacher(tiny_dataset, tiny_train_config(), TINY_BACKBONE, log=lambda r: None)
    assert to_bytes(again) == to_bytes(teacher)


def test_teacher_needs_twelve_leads(tiny_dataset):
    one_lead = Dataset(
        tiny_dataset.manifest.__class__(**{**tiny_dataset.manifest.__dict__, "n_leads": 1}),
        tiny_dataset.records,
    )
    with pytest.raises(ValueError, match="12-lead"):
        train_teacher(one_lead, tiny_train_config(), TINY_BACKBONE)


def test_distill_zero_weights_matches_plain_student(tiny_dataset, teacher):
    cfg = tiny_train_config(alpha=0.0, beta=0.0, student_lead=3)
    plain_log, distill_log = [], []
    plain = train_supervised(tiny_dataset, cfg, TINY_BACKBONE, lead=3, log=plain_log.append)
    student = distill_student(tiny_dataset, teacher, cfg, TINY_BACKBONE, log=distill_log.append)
    assert student.model.digest() == plain.model.digest()
    assert [r["train_loss"] for r in distill_log] == [r["components"]["bce"] for r in plain_log]
    assert [r["val_auc"] for r in distill_log] == [r["val_auc"] for r in plain_log]


def test_distill_keeps_teacher_frozen(tiny_dataset, teacher):
    before = teacher.model.digest()
    student = distill_student(tiny_dataset, teacher, tiny_train_config(), TINY_BACKBONE, log=lambda r: None)
    assert teacher.model.digest() == before
    assert student.meta["teacher_digest"] == before
    assert student.backbone.in_leads == 1
    assert set(student.banks) == {"student", "teacher"}
    for bank in student.banks.values():
        np.testing.assert_allclose(np.linalg.norm(bank.rows, axis=1), 1.0, atol=1e-5)


def test_distill_deterministic(tiny_dataset, teacher):
    cfg = tiny_train_config(epochs=1)
    a = distill_student(tiny_dataset, teacher, cfg, TINY_BACKBONE, log=lambda r: None)
    b = distill_student(tiny_dataset, teacher, cfg, TINY_BACKBONE, log=lambda r: None)
    assert to_bytes(a) == to_bytes(b)


def test_distill_errors(tiny_dataset, teacher):
    with pytest.raises(IndexError):
        distill_student(tiny_dataset, teacher, tiny_train_config(student_lead=12), TINY_BACKBONE)
    other = teacher.meta | {"label_names": ["w", "x", "y", "z"]}
    bad = teacher.__class__(teacher.model, teacher.train_config, teacher.epoch, other)
    with pytest.raises(ValueError, match="label-space"):
        distill_student(tiny_dataset, bad, tiny_train_config(), TINY_BACKBONE)


def test_init_checkpoint_hook(tmp_path, tiny_dataset, teacher):
    pre = train_supervised(tiny_dataset, tiny_train_config(epochs=1, seed=5), TINY_BACKBONE, lead=0,
                           log=lambda r: None)
    save_checkpoint(pre, tmp_path / "init.ckpt")
    cfg = tiny_train_config(epochs=0, init_checkpoint=str(tmp_path / "init.ckpt"))
    start = trainer.initial_student(tiny_dataset, cfg, TINY_BACKBONE)
    assert start.digest() == pre.model.digest()
    out = distill_student(tiny_dataset, teacher, cfg, TINY_BACKBONE, log=lambda r: None)
    assert out.model.digest() == pre.model.digest()
