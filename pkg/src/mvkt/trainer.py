"""Two-stage training: a 12-lead teacher on BCE, then a distilled 1-lead student."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np
import torch

from . import diff, losses, models
from .checkpoint import Checkpoint, load_checkpoint
from .memory_bank import MemoryBank, bank_init, bank_update
from .metrics import macro_auc
from .models import BackboneConfig, ModelParams
from .signal import Dataset

logger = logging.getLogger(__name__)

TRAIN_FOLDS = tuple(range(1, 9))
VAL_FOLD = 9
TEST_FOLD = 10
EVAL_CHUNK = 250


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 1.0
    beta: float = 1.0
    tau: float = 0.07
    tau_kd: float = 1.5
    negatives: int = 1024
    student_lead: int = 0
    seed: int = 0
    bank_momentum: float = 0.5
    init_checkpoint: str | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.negatives < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and negatives >= 1 required")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.bank_momentum <= 1.0:
            raise ValueError("bank_momentum must lie in [0, 1]")
        self.weights  # validates alpha, beta, tau, tau_kd

    @property
    def weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.alpha, self.beta, self.tau, self.tau_kd)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


class NonFiniteLossError(FloatingPointError):
    pass


# -- optimizer ---------------------------------------------------------------


def adam_step(params: dict, grads: dict, state: dict, lr, beta1, beta2, eps, t: int) -> None:
    """In-place Adam update with bias correction.

    ``state`` maps parameter name -> (m, v), created zero-filled on first use.
    Parameters whose gradient is None are left untouched.
    """
    if t < 1:
        raise ValueError("adam step index t must be >= 1")
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if name not in state:
                state[name] = (torch.zeros_like(p), torch.zeros_like(p))
            m, v = state[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + eps))


# -- helpers -----------------------------------------------------------------


@dataclass
class _Streams:
    init_seed: int
    shuffle: np.random.Generator
    negatives: np.random.Generator
    student_bank_seed: int
    teacher_bank_seed: int


def _streams(seed: int) -> _Streams:
    init, shuffle, neg, sb, tb = np.random.SeedSequence(seed).spawn(5)
    return _Streams(
        int(init.generate_state(1)[0]),
        np.random.default_rng(shuffle),
        np.random.default_rng(neg),
        int(sb.generate_state(1)[0]),
        int(tb.generate_state(1)[0]),
    )


def _inputs(dataset: Dataset, indices, lead: int | None) -> np.ndarray:
    x = dataset.signals(indices)
    if lead is not None:
        x = x[:, lead : lead + 1]
    return np.ascontiguousarray(x, dtype=np.float32)


def predict(model: ModelParams, x: np.ndarray, with_embeddings: bool = False):
    """Eval-mode probabilities (and projections) in fixed-size chunks."""
    probs, embs = [], []
    with torch.no_grad():
        for s in range(0, len(x), EVAL_CHUNK):
            rep, p = models.forward(model, torch.from_numpy(x[s : s + EVAL_CHUNK]), "eval")
            probs.append(p.numpy())
            if with_embeddings:
                embs.append(models.project(model, rep).numpy())
    c = model.config.n_classes
    P = np.concatenate(probs) if probs else np.zeros((0, c), np.float32)
    if not with_embeddings:
        return P
    E = np.concatenate(embs) if embs else np.zeros((0, model.config.proj_dim), np.float32)
    return P, E


def _default_log(record: dict) -> None:
    logger.info(json.dumps(record, sort_keys=True))


def _check_finite(stage: str, epoch: int, components: dict) -> None:
    for name, value in components.items():
        if not math.isfinite(value):
            raise NonFiniteLossError(
                f"{stage}: non-finite {name} loss ({value}) at epoch {epoch}"
            )


def _fit(
    dataset: Dataset,
    model: ModelParams,
    config: TrainConfig,
    streams: _Streams,
    *,
    stage: str,
    lead: int | None,
    batch_objective: Callable,
    after_step: Callable | None = None,
    snapshot: Callable | None = None,
    log: Callable[[dict], None] | None = None,
):
    """Shared epoch loop; returns (best model, best epoch, best val auc, extras)."""
    log = log or _default_log
    train_idx = dataset.fold_indices(TRAIN_FOLDS)
    val_idx = dataset.fold_indices(VAL_FOLD)
    X = _inputs(dataset, train_idx, lead)
    Y = dataset.labels(train_idx)
    X_val = _inputs(dataset, val_idx, lead)
    Y_val = dataset.labels(val_idx)

    model.requires_grad_(True)
    state: dict = {}
    step = 0
    best = (model.clone(), 0, float("nan"), snapshot() if snapshot else None)
    n = len(train_idx)
    for epoch in range(1, config.epochs + 1):
        order = streams.shuffle.permutation(n)
        totals = {"loss": 0.0, "bce": 0.0, "mkd": 0.0, "clt": 0.0}
        for s in range(0, n, config.batch_size):
            pos = order[s : s + config.batch_size]
            model.zero_grad()
            loss, comps = batch_objective(
                pos, torch.from_numpy(X[pos]), torch.from_numpy(Y[pos])
            )
            values = {"loss": float(loss.detach()), **{k: float(v) for k, v in comps.items()}}
            _check_finite(stage, epoch, values)
            diff.backward(loss)
            step += 1
            grads = {k: p.grad for k, p in model.params.items()}
            adam_step(
                model.params, grads, state, config.learning_rate,
                config.adam_beta1, config.adam_beta2, config.adam_eps, step,
            )
            if after_step is not None:
                after_step(pos)
            for k, v in values.items():
                totals[k] += v * len(pos)
        means = {k: v / n for k, v in totals.items()}
        val_auc = macro_auc(predict(model, X_val), Y_val) if len(val_idx) else float("nan")
        log(
            {
                "stage": stage,
                "epoch": epoch,
                "train_loss": means["loss"],
                "components": {k: means[k] for k in ("bce", "mkd", "clt")},
                "val_auc": None if math.isnan(val_auc) else val_auc,
            }
        )
        if epoch == 1 or val_auc > best[2]:
            best = (model.clone(), epoch, val_auc, snapshot() if snapshot else None)
    best_model = best[0].requires_grad_(False)
    return best_model, best[1], best[2], best[3]


def _meta(dataset: Dataset, stage: str, lead, val_auc) -> dict:
    return {
        "stage": stage,
        "lead": lead,
        "label_names": list(dataset.manifest.label_names),
        "val_auc": None if math.isnan(val_auc) else float(val_auc),
    }


# -- stage 1 -----------------------------------------------------------------


def train_supervised(
    dataset: Dataset,
    config: TrainConfig,
    backbone_config: BackboneConfig,
    lead: int | None = None,
    log=None,
    stage: str = "supervised",
) -> Checkpoint:
    """Plain BCE training on all leads (``lead=None``) or on one selected lead."""
    in_leads = dataset.manifest.n_leads if lead is None else 1
    bcfg = backbone_config.with_leads(in_leads)
    if bcfg.n_classes != dataset.manifest.n_classes:
        bcfg = BackboneConfig(in_leads, bcfg.stem_channels, bcfg.n_blocks, dataset.manifest.n_classes, bcfg.proj_dim)
    streams = _streams(config.seed)
    model = models.build_backbone(bcfg, streams.init_seed)

    def objective(pos, xb, yb):
        _, probs = models.forward(model, xb, "train")
        bce = losses.bce_loss(probs, yb)
        return bce, {"bce": bce.detach(), "mkd": 0.0, "clt": 0.0}

    best, epoch, val_auc, _ = _fit(
        dataset, model, config, streams, stage=stage, lead=lead,
        batch_objective=objective, log=log,
    )
    return Checkpoint(best, config.to_json(), epoch, _meta(dataset, stage, lead, val_auc))


def train_teacher(dataset: Dataset, config: TrainConfig, backbone_config: BackboneConfig, log=None) -> Checkpoint:
    """Stage 1: 12-lead teacher on folds 1-8, best epoch by fold-9 macro-AUC."""
    if dataset.manifest.n_leads != 12:
        raise ValueError(f"teacher training needs 12-lead data, got {dataset.manifest.n_leads}")
    return train_supervised(dataset, config, backbone_config, None, log, stage="teacher")


# -- stage 2 -----------------------------------------------------------------


def initial_student(dataset: Dataset, config: TrainConfig, backbone_config: BackboneConfig) -> ModelParams:
    """Student parameters before stage 2: fresh from the seed, or an external checkpoint."""
    bcfg = BackboneConfig(1, backbone_config.stem_channels, backbone_config.n_blocks,
                          dataset.manifest.n_classes, backbone_config.proj_dim)
    if config.init_checkpoint:
        init = load_checkpoint(config.init_checkpoint).model
        if init.config != bcfg:
            raise ValueError(
                f"init checkpoint backbone {init.config} does not match student {bcfg}"
            )
        return init.clone()
    return models.build_backbone(bcfg, _streams(config.seed).init_seed)


def distill_student(
    dataset: Dataset,
    teacher: Checkpoint,
    config: TrainConfig,
    backbone_config: BackboneConfig,
    log=None,
) -> Checkpoint:
    """Stage 2: single-lead student trained on BCE + alpha*MKD + beta*CLT."""
    man = dataset.manifest
    if man.n_leads != 12:
        raise ValueError("distillation needs 12-lead data for the teacher")
    if teacher.backbone.in_leads != 12:
        raise ValueError("teacher must be a 12-lead model")
    if teacher.backbone.n_classes != man.n_classes or (
        teacher.label_names is not None and list(teacher.label_names) != list(man.label_names)
    ):
        raise ValueError(
            f"label-space mismatch: teacher {teacher.label_names} vs dataset {man.label_names}"
        )
    lead = config.student_lead
    if not 0 <= lead < man.n_leads:
        raise IndexError(f"student_lead {lead} out of range for {man.n_leads} leads")

    if backbone_config.proj_dim != teacher.backbone.proj_dim:
        raise ValueError("student and teacher projection widths differ")
    streams = _streams(config.seed)
    student = initial_student(dataset, config, backbone_config)
    bcfg = student.config

    # Frozen teacher: eval mode is a pure function, so its outputs are computed once.
    train_idx = dataset.fold_indices(TRAIN_FOLDS)
    t_probs, t_emb = predict(teacher.model, _inputs(dataset, train_idx, None), with_embeddings=True)
    t_probs = torch.from_numpy(t_probs)
    t_emb = torch.from_numpy(t_emb)

    n_train = len(train_idx)
    n_neg = min(config.negatives, n_train - config.batch_size)
    if n_neg < 1:
        raise ValueError(f"training set of {n_train} records is too small for negatives")
    student_bank = bank_init(n_train, streams.student_bank_seed, bcfg.proj_dim, config.bank_momentum)
    teacher_bank = bank_init(n_train, streams.teacher_bank_seed, bcfg.proj_dim, config.bank_momentum)
    weights = config.weights
    last_student_emb: dict = {}

    def objective(pos, xb, yb):
        rep, probs = models.forward(student, xb, "train")
        s_emb = models.project(student, rep)
        bce = losses.bce_loss(probs, yb)
        mkd = losses.mkd_loss(t_probs[pos], probs, weights.tau_kd)
        clt = losses.clt_loss(
            s_emb, t_emb[pos], student_bank, teacher_bank, pos, n_neg, weights.tau, streams.negatives
        )
        last_student_emb["value"] = s_emb.detach().numpy().copy()
        total = losses.mvkt_loss(bce, mkd, clt, weights)
        return total, {"bce": bce.detach(), "mkd": mkd.detach(), "clt": clt.detach()}

    def after_step(pos):
        bank_update(student_bank, pos, last_student_emb["value"])
        bank_update(teacher_bank, pos, t_emb[pos].numpy())

    def snapshot():
        return {
            "student": MemoryBank(student_bank.rows.copy(), student_bank.momentum),
            "teacher": MemoryBank(teacher_bank.rows.copy(), teacher_bank.momentum),
        }

    best, epoch, val_auc, banks = _fit(
        dataset, student, config, streams, stage="distill", lead=lead,
        batch_objective=objective, after_step=after_step, snapshot=snapshot, log=log,
    )
    meta = _meta(dataset, "distill", lead, val_auc)
    meta["teacher_digest"] = teacher.model.digest()
    return Checkpoint(best, config.to_json(), epoch, meta, banks or {})
