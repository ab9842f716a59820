"""Differentiable compute core.

Tensors are ``torch.Tensor`` objects and the tape is torch's autograd graph.
Every op here is a thin, shape-checked wrapper so that model and loss code
only ever touches this surface. ``finite_diff_check`` is the independent
float64 central-difference oracle used to certify gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

Tensor = torch.Tensor

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class BackwardError(RuntimeError):
    pass


def configure_determinism(threads: int = 1) -> None:
    """Pin the numeric core to a single thread with deterministic kernels."""
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def tensor(data, requires_grad: bool = False, dtype=torch.float32) -> Tensor:
    t = torch.as_tensor(np.asarray(data), dtype=dtype).clone()
    t.requires_grad_(requires_grad)
    return t


def _same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _broadcastable(name: str, a: Tensor, b: Tensor) -> None:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(
            f"{name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}"
        ) from None


# -- elementwise -------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcastable("add", a, b)
    return a + b


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _broadcastable("multiply", a, b)
    return a * b


def relu(x: Tensor) -> Tensor:
    return torch.relu(x)


def sigmoid(x: Tensor) -> Tensor:
    return torch.sigmoid(x)


def log(x: Tensor) -> Tensor:
    if bool((x.detach() <= 0).any()):
        raise DomainError("log: input contains non-positive values")
    return torch.log(x)


def exp(x: Tensor) -> Tensor:
    return torch.exp(x)


# -- reductions --------------------------------------------------------------


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    return x.sum() if axis is None else x.sum(dim=axis)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    return x.mean() if axis is None else x.mean(dim=axis)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    # max shift keeps exp() finite for |x| up to float range
    shift = x.detach().amax(dim=axis, keepdim=True)
    return (torch.log(torch.exp(x - shift).sum(dim=axis, keepdim=True)) + shift).squeeze(axis)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    ref = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(ref) or any(
            i != axis % len(ref) and p != q for i, (p, q) in enumerate(zip(ref, other))
        ):
            raise ShapeError(f"concat: shape mismatch {tuple(ref)} vs {tuple(other)}")
    return torch.cat(list(xs), dim=axis)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale rows to unit L2 norm along the last axis; ``eps`` guards zero rows."""
    norm = torch.sqrt((x * x).sum(dim=-1, keepdim=True))
    return x / (norm + eps)


# -- linear algebra and layers -----------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return a @ b


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight shaped [out, in]."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"affine: shape mismatch {tuple(x.shape)} vs {tuple(weight.shape)}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"affine: shape mismatch {tuple(bias.shape)} vs {tuple(weight.shape)}")
    return F.linear(x, weight, bias)


def conv1d(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """x: [B, C_in, L]; weight: [C_out, C_in, K]."""
    if x.dim() != 3 or weight.dim() != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d: shape mismatch {tuple(x.shape)} vs {tuple(weight.shape)}")
    return F.conv1d(x, weight, bias, stride=stride, padding=padding)


def max_pool1d(x: Tensor, kernel: int, stride: int | None = None, padding: int = 0) -> Tensor:
    if x.dim() != 3:
        raise ShapeError(f"max_pool1d: expected [B, C, L], got {tuple(x.shape)}")
    return F.max_pool1d(x, kernel, stride=stride or kernel, padding=padding)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B, C, L] -> [B, C]."""
    if x.dim() != 3:
        raise ShapeError(f"global_avg_pool: expected [B, C, L], got {tuple(x.shape)}")
    return x.mean(dim=2)


def batch_norm(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Normalize over batch (and time) per channel.

    ``momentum`` is the weight kept on the running statistic:
    ``running <- momentum * running + (1 - momentum) * batch``.
    Running statistics are updated in place only when ``training``.
    """
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"batch_norm: shape mismatch {tuple(x.shape)} vs {tuple(weight.shape)}")
    return F.batch_norm(
        x, running_mean, running_var, weight, bias,
        training=training, momentum=1.0 - momentum, eps=eps,
    )


# -- reverse mode ------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf."""
    if loss.numel() != 1:
        raise BackwardError(f"backward: loss must be scalar, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise BackwardError("backward: loss is detached from the graph")
    if getattr(loss, "_mvkt_backward_done", False):
        raise BackwardError("backward: already called on this loss")
    loss.backward()
    loss._mvkt_backward_done = True


def finite_diff_check(
    f: Callable[[Tensor], Tensor], x, eps: float = 1e-3
) -> float:
    """Max relative error between autograd and a central-difference oracle.

    The analytic gradient runs in float32 (the production dtype); the oracle
    re-evaluates ``f`` in float64. Error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    x0 = np.asarray(x.detach().cpu().numpy() if isinstance(x, Tensor) else x, dtype=np.float64)

    xa = torch.tensor(x0, dtype=torch.float32, requires_grad=True)
    out = f(xa)
    backward(out)
    analytic = xa.grad.detach().double().numpy().ravel()

    numeric = np.empty(x0.size)
    flat = x0.ravel()
    with torch.no_grad():
        for i in range(flat.size):
            plus, minus = flat.copy(), flat.copy()
            plus[i] += eps
            minus[i] -= eps
            fp = float(f(torch.tensor(plus.reshape(x0.shape), dtype=torch.float64)))
            fm = float(f(torch.tensor(minus.reshape(x0.shape), dtype=torch.float64)))
            numeric[i] = (fp - fm) / (2.0 * eps)

    if flat.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
