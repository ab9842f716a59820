"""Training objectives: BCE, multi-label KD (MKD), contrastive transfer (CLT)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from . import diff
from .diff import Tensor
from .memory_bank import MemoryBank, bank_sample

PROB_CLAMP = 1e-7
UNIT_NORM_TOL = 1e-3


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    tau: float = 0.07
    tau_kd: float = 1.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.tau <= 0 or self.tau_kd <= 0:
            raise ValueError("temperatures must be > 0")

    def to_json(self) -> dict:
        return asdict(self)


def _check_shapes(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise diff.ShapeError(f"{name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _clamp(p: Tensor) -> Tensor:
    return p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)


def bce_loss(probs: Tensor, labels: Tensor) -> Tensor:
    """Mean over batch and classes of the binary cross entropy."""
    _check_shapes("bce_loss", probs, labels)
    p = _clamp(probs)
    labels = labels.to(p.dtype)
    return -(labels * diff.log(p) + (1.0 - labels) * diff.log(1.0 - p)).mean()


def mkd_q(p, tau_kd: float):
    """Two-way temperature softmax over (p, 1 - p); equals sigmoid((2p - 1) / tau_kd)."""
    if isinstance(p, Tensor):
        return diff.sigmoid((2.0 * p - 1.0) / tau_kd)
    return 1.0 / (1.0 + np.exp(-(2.0 * np.asarray(p, dtype=np.float64) - 1.0) / tau_kd))


def mkd_loss(p_teacher: Tensor, p_student: Tensor, tau_kd: float) -> Tensor:
    """tau_kd^2 * batch mean of the per-label Bernoulli KL(q_T || q_S), summed over labels."""
    _check_shapes("mkd_loss", p_teacher, p_student)
    q_t = mkd_q(_clamp(p_teacher.detach()), tau_kd)
    # log q_S and log(1 - q_S) via logsigmoid for stability
    z_s = (2.0 * _clamp(p_student) - 1.0) / tau_kd
    log_qs = torch.nn.functional.logsigmoid(z_s)
    log_1mqs = torch.nn.functional.logsigmoid(-z_s)
    kl = q_t * (diff.log(q_t) - log_qs) + (1.0 - q_t) * (diff.log(1.0 - q_t) - log_1mqs)
    return tau_kd**2 * kl.sum(dim=1).mean()


def _check_unit(name: str, x: Tensor) -> None:
    norms = torch.sqrt((x.detach() * x.detach()).sum(dim=-1))
    bad = (norms - 1.0).abs() > UNIT_NORM_TOL
    if bool(bad.any()):
        row = int(torch.nonzero(bad)[0])
        raise ValueError(f"{name}: row {row} has norm {float(norms[row]):.6f}, expected unit rows")


def clt_infonce(anchors: Tensor, positives: Tensor, negatives: Tensor, tau: float) -> Tensor:
    """One-directional InfoNCE; negatives are treated as constants."""
    _check_shapes("clt_infonce", anchors, positives)
    if negatives.dim() != 2 or negatives.shape[0] == 0:
        raise ValueError("clt_infonce: need at least one negative")
    if negatives.shape[1] != anchors.shape[1]:
        raise diff.ShapeError(
            f"clt_infonce: shape mismatch {tuple(anchors.shape)} vs {tuple(negatives.shape)}"
        )
    for name, x in (("anchors", anchors), ("positives", positives), ("negatives", negatives)):
        _check_unit(f"clt_infonce {name}", x)
    negatives = negatives.detach().to(anchors.dtype)
    pos = (anchors * positives).sum(dim=1, keepdim=True) / tau
    neg = diff.matmul(anchors, negatives.T) / tau
    logits = diff.concat([pos, neg], axis=1)
    return (diff.logsumexp(logits, axis=1) - pos.squeeze(1)).mean()


def clt_loss(
    student_emb: Tensor,
    teacher_emb: Tensor,
    student_bank: MemoryBank,
    teacher_bank: MemoryBank,
    batch_indices,
    n_negatives: int,
    tau: float,
    rng: np.random.Generator,
) -> Tensor:
    """Symmetric CLT: average of student-anchored and teacher-anchored InfoNCE.

    Student anchors contrast against teacher-bank negatives and vice versa;
    both negative sets exclude the current batch. The teacher side is frozen.
    """
    teacher_emb = teacher_emb.detach()
    exclude = set(int(i) for i in batch_indices)
    neg_t = torch.from_numpy(bank_sample(teacher_bank, n_negatives, exclude, rng))
    neg_s = torch.from_numpy(bank_sample(student_bank, n_negatives, exclude, rng))
    s_anchor = clt_infonce(student_emb, teacher_emb, neg_t, tau)
    t_anchor = clt_infonce(teacher_emb, student_emb, neg_s, tau)
    return 0.5 * (s_anchor + t_anchor)


def mvkt_loss(bce: Tensor, mkd: Tensor, clt: Tensor, weights: LossWeights) -> Tensor:
    for name, v in (("bce", bce), ("mkd", mkd), ("clt", clt)):
        value = float(v.detach()) if isinstance(v, Tensor) else float(v)
        if not math.isfinite(value):
            raise FloatingPointError(f"mvkt_loss: non-finite {name} term ({value})")
    return bce + weights.alpha * mkd + weights.beta * clt
