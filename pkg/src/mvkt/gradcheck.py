"""Finite-difference certification of every differentiable op and loss.

Each case maps a seeded random draw to a scalar function of one tensor plus
the point to check it at. Fixed operands are built in the dtype of the
argument so the same closure serves the float32 analytic pass and the
float64 oracle pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from . import diff, losses
from .diff import Tensor, finite_diff_check
from .memory_bank import MemoryBank

TOLERANCE = 1e-3
N_INPUTS = 10


@dataclass
class CaseResult:
    name: str
    max_error: float
    passed: bool


def _c(a: np.ndarray, like: Tensor) -> Tensor:
    return torch.as_tensor(a, dtype=like.dtype)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    """Random linear read-out so every output coordinate matters."""
    return (out * _c(w, out)).sum()


def _units(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _probs(rng, shape):
    return 1.0 / (1.0 + np.exp(-rng.uniform(-2, 2, shape)))


# Each factory: rng -> (f, x0)
def _case_add(rng):
    b, w = rng.uniform(-2, 2, (3, 4)), rng.standard_normal((3, 4))
    return (lambda x: _weighted(diff.add(x, _c(b, x)), w)), rng.uniform(-2, 2, (3, 4))


def _case_multiply(rng):
    b, w = rng.uniform(-2, 2, (3, 4)), rng.standard_normal((3, 4))
    return (lambda x: _weighted(diff.multiply(x, _c(b, x)), w)), rng.uniform(-2, 2, (3, 4))


def _case_matmul_left(rng):
    b, w = rng.uniform(-2, 2, (4, 5)), rng.standard_normal((3, 5))
    return (lambda x: _weighted(diff.matmul(x, _c(b, x)), w)), rng.uniform(-2, 2, (3, 4))


def _case_matmul_right(rng):
    a, w = rng.uniform(-2, 2, (3, 4)), rng.standard_normal((3, 5))
    return (lambda x: _weighted(diff.matmul(_c(a, x), x), w)), rng.uniform(-2, 2, (4, 5))


def _case_conv_input(rng):
    k, w = rng.uniform(-1, 1, (4, 3, 3)), rng.standard_normal((2, 4, 5))
    return (lambda x: _weighted(diff.conv1d(x, _c(k, x), stride=2, padding=1), w)), rng.uniform(-2, 2, (2, 3, 9))


def _case_conv_weight(rng):
    inp, w = rng.uniform(-2, 2, (2, 3, 9)), rng.standard_normal((2, 4, 5))
    return (lambda x: _weighted(diff.conv1d(_c(inp, x), x, stride=2, padding=1), w)), rng.uniform(-1, 1, (4, 3, 3))


def _case_max_pool(rng):
    w = rng.standard_normal((2, 3, 4))
    return (lambda x: _weighted(diff.max_pool1d(x, 3, stride=2, padding=1), w)), rng.uniform(-2, 2, (2, 3, 8))


def _case_global_avg_pool(rng):
    w = rng.standard_normal((2, 3))
    return (lambda x: _weighted(diff.global_avg_pool(x), w)), rng.uniform(-2, 2, (2, 3, 6))


def _case_relu(rng):
    w = rng.standard_normal((4, 5))
    x0 = rng.uniform(-2, 2, (4, 5))
    x0[np.abs(x0) < 0.01] = 0.5  # keep the kink out of the difference stencil
    return (lambda x: _weighted(diff.relu(x), w)), x0


def _case_sigmoid(rng):
    w = rng.standard_normal((4, 5))
    return (lambda x: _weighted(diff.sigmoid(x), w)), rng.uniform(-2, 2, (4, 5))


def _case_log(rng):
    w = rng.standard_normal((4, 5))
    return (lambda x: _weighted(diff.log(x), w)), rng.uniform(0.5, 2, (4, 5))


def _case_exp(rng):
    w = rng.standard_normal((4, 5))
    return (lambda x: _weighted(diff.exp(x), w)), rng.uniform(-2, 2, (4, 5))


def _case_sum(rng):
    w = rng.standard_normal(5)
    return (lambda x: _weighted(diff.reduce_sum(x, axis=0), w)), rng.uniform(-2, 2, (4, 5))


def _case_mean(rng):
    w = rng.standard_normal(4)
    return (lambda x: _weighted(diff.reduce_mean(x, axis=1), w)), rng.uniform(-2, 2, (4, 5))


def _case_concat(rng):
    b, w = rng.uniform(-2, 2, (2, 5)), rng.standard_normal((5, 5))
    return (lambda x: _weighted(diff.concat([x, _c(b, x)], axis=0), w)), rng.uniform(-2, 2, (3, 5))


def _case_l2_normalize(rng):
    w = rng.standard_normal((3, 4))
    return (lambda x: _weighted(diff.l2_normalize(x), w)), rng.uniform(-2, 2, (3, 4))


def _case_logsumexp(rng):
    w = rng.standard_normal(3)
    return (lambda x: _weighted(diff.logsumexp(x, axis=1), w)), rng.uniform(-2, 2, (3, 6))


def _case_affine_input(rng):
    W, b, w = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, 3), rng.standard_normal((2, 3))
    return (lambda x: _weighted(diff.affine(x, _c(W, x), _c(b, x)), w)), rng.uniform(-2, 2, (2, 4))


def _case_affine_weight(rng):
    inp, b, w = rng.uniform(-2, 2, (2, 4)), rng.uniform(-1, 1, 3), rng.standard_normal((2, 3))
    return (lambda x: _weighted(diff.affine(_c(inp, x), x, _c(b, x)), w)), rng.uniform(-1, 1, (3, 4))


def _case_batch_norm_train(rng):
    g, b, w = rng.uniform(0.5, 1.5, 3), rng.uniform(-1, 1, 3), rng.standard_normal((4, 3, 5))

    def f(x):
        rm, rv = torch.zeros(3, dtype=x.dtype), torch.ones(3, dtype=x.dtype)
        return _weighted(diff.batch_norm(x, _c(g, x), _c(b, x), rm, rv, training=True), w)

    return f, rng.uniform(-2, 2, (4, 3, 5))


def _case_batch_norm_weight(rng):
    inp, b, w = rng.uniform(-2, 2, (4, 3, 5)), rng.uniform(-1, 1, 3), rng.standard_normal((4, 3, 5))

    def f(x):
        rm, rv = torch.zeros(3, dtype=x.dtype), torch.ones(3, dtype=x.dtype)
        return _weighted(diff.batch_norm(_c(inp, x), x, _c(b, x), rm, rv, training=True), w)

    return f, rng.uniform(0.5, 1.5, 3)


def _case_batch_norm_eval(rng):
    g, b, w = rng.uniform(0.5, 1.5, 3), rng.uniform(-1, 1, 3), rng.standard_normal((2, 3, 5))
    rm, rv = rng.uniform(-1, 1, 3), rng.uniform(0.5, 2, 3)

    def f(x):
        return _weighted(
            diff.batch_norm(x, _c(g, x), _c(b, x), _c(rm, x), _c(rv, x), training=False), w
        )

    return f, rng.uniform(-2, 2, (2, 3, 5))


def _case_composite(rng):
    """conv -> batch norm -> relu -> pool -> affine -> sigmoid."""
    k = rng.uniform(-1, 1, (4, 2, 3))
    W, b = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, 3)
    w = rng.standard_normal((3, 3))

    def f(x):
        h = diff.conv1d(x, _c(k, x), padding=1)
        rm, rv = torch.zeros(4, dtype=x.dtype), torch.ones(4, dtype=x.dtype)
        h = diff.relu(diff.batch_norm(h, torch.ones(4, dtype=x.dtype), torch.zeros(4, dtype=x.dtype), rm, rv, True))
        return _weighted(diff.sigmoid(diff.affine(diff.global_avg_pool(h), _c(W, x), _c(b, x))), w)

    return f, rng.uniform(-2, 2, (3, 2, 8))


# -- losses ------------------------------------------------------------------


def _case_bce(rng):
    y = (rng.uniform(size=(4, 3)) < 0.5).astype(float)
    return (lambda x: losses.bce_loss(x, _c(y, x))), _probs(rng, (4, 3))


def _case_mkd(rng):
    pt = _probs(rng, (4, 3))
    return (lambda x: losses.mkd_loss(_c(pt, x), x, 1.5)), _probs(rng, (4, 3))


def _case_infonce_anchor(rng):
    pos, neg = _units(rng, 3, 8), _units(rng, 6, 8)
    tau = 0.07

    def f(x):
        return losses.clt_infonce(diff.l2_normalize(x), _c(pos, x), _c(neg, x), tau)

    return f, rng.uniform(-2, 2, (3, 8))


def _case_infonce_positive(rng):
    anc, neg = _units(rng, 3, 8), _units(rng, 6, 8)

    def f(x):
        return losses.clt_infonce(_c(anc, x), diff.l2_normalize(x), _c(neg, x), 0.5)

    return f, rng.uniform(-2, 2, (3, 8))


def _case_clt(rng):
    teacher = _units(rng, 3, 8)
    s_bank = MemoryBank(_units(rng, 12, 8).astype(np.float32))
    t_bank = MemoryBank(_units(rng, 12, 8).astype(np.float32))
    idx = np.array([0, 4, 7])
    seed = int(rng.integers(1 << 31))

    def f(x):
        return losses.clt_loss(
            diff.l2_normalize(x), _c(teacher, x), s_bank, t_bank, idx, 5, 0.07,
            np.random.default_rng(seed),
        )

    return f, rng.uniform(-2, 2, (3, 8))


def _case_mvkt(rng):
    y = (rng.uniform(size=(3, 4)) < 0.5).astype(float)
    pt = _probs(rng, (3, 4))
    teacher = _units(rng, 3, 4)
    s_bank = MemoryBank(_units(rng, 10, 4).astype(np.float32))
    t_bank = MemoryBank(_units(rng, 10, 4).astype(np.float32))
    idx = np.array([1, 2, 3])
    seed = int(rng.integers(1 << 31))
    weights = losses.LossWeights(alpha=0.7, beta=0.3, tau=0.5, tau_kd=1.5)

    def f(x):
        # x holds student logits; its probs feed BCE/MKD and it doubles as the embedding
        probs = diff.sigmoid(x)
        emb = diff.l2_normalize(x)
        bce = losses.bce_loss(probs, _c(y, x))
        mkd = losses.mkd_loss(_c(pt, x), probs, weights.tau_kd)
        clt = losses.clt_loss(emb, _c(teacher, x), s_bank, t_bank, idx, 4, weights.tau, np.random.default_rng(seed))
        return losses.mvkt_loss(bce, mkd, clt, weights)

    return f, rng.uniform(-2, 2, (3, 4))


OP_CASES: dict[str, Callable] = {
    "add": _case_add,
    "multiply": _case_multiply,
    "matmul[left]": _case_matmul_left,
    "matmul[right]": _case_matmul_right,
    "conv1d[input]": _case_conv_input,
    "conv1d[weight]": _case_conv_weight,
    "max_pool1d": _case_max_pool,
    "global_avg_pool": _case_global_avg_pool,
    "relu": _case_relu,
    "sigmoid": _case_sigmoid,
    "log": _case_log,
    "exp": _case_exp,
    "reduce_sum": _case_sum,
    "reduce_mean": _case_mean,
    "concat": _case_concat,
    "l2_normalize": _case_l2_normalize,
    "logsumexp": _case_logsumexp,
    "affine[input]": _case_affine_input,
    "affine[weight]": _case_affine_weight,
    "batch_norm[train]": _case_batch_norm_train,
    "batch_norm[weight]": _case_batch_norm_weight,
    "batch_norm[eval]": _case_batch_norm_eval,
    "composite": _case_composite,
}

LOSS_CASES: dict[str, Callable] = {
    "bce_loss": _case_bce,
    "mkd_loss": _case_mkd,
    "clt_infonce[anchor]": _case_infonce_anchor,
    "clt_infonce[positive]": _case_infonce_positive,
    "clt_loss": _case_clt,
    "mvkt_loss": _case_mvkt,
}


def check_case(name: str, factory: Callable, n_inputs: int = N_INPUTS, seed: int = 0,
               tol: float = TOLERANCE) -> CaseResult:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    worst = 0.0
    for _ in range(n_inputs):
        f, x0 = factory(rng)
        worst = max(worst, finite_diff_check(f, x0))
    return CaseResult(name, worst, worst <= tol)


def run_suite(n_inputs: int = N_INPUTS, seed: int = 0, tol: float = TOLERANCE) -> list[CaseResult]:
    return [
        check_case(name, factory, n_inputs, seed, tol)
        for name, factory in {**OP_CASES, **LOSS_CASES}.items()
    ]


def main(print_fn=print) -> int:
    start = time.perf_counter()
    results = run_suite()
    for r in results:
        print_fn(f"{'PASS' if r.passed else 'FAIL'} {r.name:24s} max_rel_err={r.max_error:.3e}")
    ok = all(r.passed for r in results)
    print_fn(f"{sum(r.passed for r in results)}/{len(results)} passed in {time.perf_counter() - start:.1f}s")
    return 0 if ok else 1
