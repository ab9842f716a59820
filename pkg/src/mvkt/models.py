"""Residual 1-D CNN backbones with projection and classifier heads.

Models are plain dictionaries of named tensors driven by functional
``forward``/``project``; there is no module object. Layout:

    stem:   conv(k=7, stride 2) - BN - ReLU - maxpool(3, stride 2)
    blocks: [conv - BN - ReLU - conv - BN] + skip, ReLU
            block i (1-based) doubles channels with stride 2 when i is odd
            and i > 1; the skip is then a 1x1 strided projection
    rep:    global average pool -> [B, D]
    head:   affine D -> C, sigmoid
    proj:   affine D -> proj_dim, L2 normalize
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import diff
from .diff import Tensor

STEM_KERNEL = 7
BLOCK_KERNEL = 5


@dataclass(frozen=True)
class BackboneConfig:
    in_leads: int = 12
    stem_channels: int = 32
    n_blocks: int = 4
    n_classes: int = 4
    proj_dim: int = 128

    def __post_init__(self):
        if self.in_leads not in (1, 12):
            raise ValueError("in_leads must be 1 or 12")
        if self.stem_channels < 1 or self.n_blocks < 0 or self.n_classes < 1 or self.proj_dim < 1:
            raise ValueError(f"invalid backbone config {self}")

    @property
    def rep_dim(self) -> int:
        return block_channels(self)[-1][1] if self.n_blocks else self.stem_channels

    def with_leads(self, in_leads: int) -> "BackboneConfig":
        return BackboneConfig(in_leads, self.stem_channels, self.n_blocks, self.n_classes, self.proj_dim)

    def to_json(self) -> dict:
        return asdict(self)


def block_channels(config: BackboneConfig) -> list[tuple[int, int, int]]:
    """(in_channels, out_channels, stride) for each residual block."""
    out = []
    ch = config.stem_channels
    for i in range(1, config.n_blocks + 1):
        if i > 1 and i % 2 == 1:
            out.append((ch, 2 * ch, 2))
            ch *= 2
        else:
            out.append((ch, ch, 1))
    return out


@dataclass
class ModelParams:
    """Trainable tensors plus batch-norm running statistics."""

    config: BackboneConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, Tensor] = field(default_factory=dict)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return sorted([*self.params.items(), *self.buffers.items()])

    def trainable(self, prefixes=None) -> dict[str, Tensor]:
        if prefixes is None:
            return dict(self.params)
        return {k: v for k, v in self.params.items() if k.startswith(tuple(prefixes))}

    def num_parameters(self) -> int:
        return sum(int(t.numel()) for t in self.params.values())

    def requires_grad_(self, flag: bool) -> "ModelParams":
        for t in self.params.values():
            t.requires_grad_(flag)
        return self

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def clone(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.detach().clone().requires_grad_(v.requires_grad) for k, v in self.params.items()},
            {k: v.detach().clone() for k, v in self.buffers.items()},
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, t in self.named_tensors():
            h.update(name.encode())
            h.update(str(tuple(t.shape)).encode())
            h.update(t.detach().numpy().astype("<f4").tobytes())
        return h.hexdigest()


def _uniform(gen: torch.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return (torch.rand(shape, generator=gen, dtype=torch.float32) * 2.0 - 1.0) * bound


def _add_bn(p: ModelParams, name: str, ch: int) -> None:
    p.params[f"{name}.weight"] = torch.ones(ch)
    p.params[f"{name}.bias"] = torch.zeros(ch)
    p.buffers[f"{name}.running_mean"] = torch.zeros(ch)
    p.buffers[f"{name}.running_var"] = torch.ones(ch)


def _add_conv(p: ModelParams, gen, name: str, c_out: int, c_in: int, k: int) -> None:
    p.params[f"{name}.weight"] = _uniform(gen, (c_out, c_in, k), c_in * k)


def _add_affine(p: ModelParams, gen, name: str, d_out: int, d_in: int) -> None:
    p.params[f"{name}.weight"] = _uniform(gen, (d_out, d_in), d_in)
    p.params[f"{name}.bias"] = _uniform(gen, (d_out,), d_in)


def build_backbone(config: BackboneConfig, seed: int) -> ModelParams:
    """Deterministic init: conv/affine weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    The stem kernel is drawn last, so 1-lead and 12-lead builds from one seed
    share every other tensor bit for bit.
    """
    gen = torch.Generator().manual_seed(int(seed))
    p = ModelParams(config)
    c = config.stem_channels
    for i, (c_in, c_out, stride) in enumerate(block_channels(config), start=1):
        _add_conv(p, gen, f"block{i}.conv1", c_out, c_in, BLOCK_KERNEL)
        _add_bn(p, f"block{i}.bn1", c_out)
        _add_conv(p, gen, f"block{i}.conv2", c_out, c_out, BLOCK_KERNEL)
        _add_bn(p, f"block{i}.bn2", c_out)
        if stride != 1 or c_in != c_out:
            _add_conv(p, gen, f"block{i}.skip", c_out, c_in, 1)
            _add_bn(p, f"block{i}.skip_bn", c_out)
    d = config.rep_dim
    _add_affine(p, gen, "head", config.n_classes, d)
    _add_affine(p, gen, "proj", config.proj_dim, d)
    _add_conv(p, gen, "stem.conv", c, config.in_leads, STEM_KERNEL)
    _add_bn(p, "stem.bn", c)
    return p


def _bn(p: ModelParams, name: str, x: Tensor, training: bool) -> Tensor:
    return diff.batch_norm(
        x,
        p.params[f"{name}.weight"],
        p.params[f"{name}.bias"],
        p.buffers[f"{name}.running_mean"],
        p.buffers[f"{name}.running_var"],
        training,
    )


def represent(p: ModelParams, batch: Tensor, mode: str = "train") -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = p.config
    if batch.dim() != 3 or batch.shape[1] != cfg.in_leads:
        raise diff.ShapeError(
            f"forward: shape mismatch {tuple(batch.shape)} vs [B, {cfg.in_leads}, L]"
        )
    training = mode == "train"
    x = diff.conv1d(batch, p.params["stem.conv.weight"], stride=2, padding=STEM_KERNEL // 2)
    x = diff.relu(_bn(p, "stem.bn", x, training))
    x = diff.max_pool1d(x, 3, stride=2, padding=1)
    pad = BLOCK_KERNEL // 2
    for i, (c_in, c_out, stride) in enumerate(block_channels(cfg), start=1):
        h = diff.conv1d(x, p.params[f"block{i}.conv1.weight"], stride=stride, padding=pad)
        h = diff.relu(_bn(p, f"block{i}.bn1", h, training))
        h = diff.conv1d(h, p.params[f"block{i}.conv2.weight"], padding=pad)
        h = _bn(p, f"block{i}.bn2", h, training)
        if f"block{i}.skip.weight" in p.params:
            s = diff.conv1d(x, p.params[f"block{i}.skip.weight"], stride=stride)
            s = _bn(p, f"block{i}.skip_bn", s, training)
        else:
            s = x
        x = diff.relu(diff.add(h, s))
    return diff.global_avg_pool(x)


def classify(p: ModelParams, rep: Tensor) -> Tensor:
    return diff.sigmoid(diff.affine(rep, p.params["head.weight"], p.params["head.bias"]))


def forward(p: ModelParams, batch: Tensor, mode: str = "train") -> tuple[Tensor, Tensor]:
    """Returns (rep [B, D], probs [B, C])."""
    rep = represent(p, batch, mode)
    return rep, classify(p, rep)


def project(p: ModelParams, rep: Tensor) -> Tensor:
    """Affine D -> proj_dim followed by row-wise L2 normalization."""
    if rep.dim() != 2 or rep.shape[1] != p.config.rep_dim:
        raise diff.ShapeError(
            f"project: shape mismatch {tuple(rep.shape)} vs [B, {p.config.rep_dim}]"
        )
    return diff.l2_normalize(diff.affine(rep, p.params["proj.weight"], p.params["proj.bias"]))
