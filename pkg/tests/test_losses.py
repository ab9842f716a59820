import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mvkt import diff, gradcheck
from mvkt.losses import (
    LossWeights,
    bce_loss,
    clt_infonce,
    clt_loss,
    mkd_loss,
    mkd_q,
    mvkt_loss,
)
from mvkt.memory_bank import MemoryBank

# frozen high-precision values (mpmath, 30 digits)
SIGMOID_0_4 = 0.598687660112452
SIGMOID_1 = 0.731058578630005
KL_EXAMPLE = 0.0441157324611903  # 2.25 * KL(Bern(sigmoid(0.4)) || Bern(0.5))
LN_1025 = 6.932447891572509
LN_2 = 0.693147180559945
LN_1P_EXP_M1 = 0.313261687518223
NEG_LN_0_9 = 0.105360515657826


def t(x, grad=False, dtype=torch.float64):
    return torch.tensor(x, dtype=dtype, requires_grad=grad)


def unit(rng, n, d=16):
    x = rng.standard_normal((n, d))
    return t(x / np.linalg.norm(x, axis=1, keepdims=True))


def test_bce_examples():
    assert float(bce_loss(t([[0.5] * 4] * 3), t([[1, 0, 1, 0]] * 3))) == pytest.approx(LN_2, abs=1e-7)
    assert float(bce_loss(t([0.9]), t([1.0]))) == pytest.approx(NEG_LN_0_9, abs=1e-7)
    assert float(bce_loss(t([[0.9, 0.1]]), t([[1.0, 0.0]]))) == pytest.approx(NEG_LN_0_9, abs=1e-7)


def test_bce_clamps_extremes_and_checks_shape():
    v = float(bce_loss(t([0.0, 1.0]), t([1.0, 0.0])))
    assert math.isfinite(v) and v == pytest.approx(-math.log(1e-7), rel=1e-6)
    with pytest.raises(diff.ShapeError):
        bce_loss(t([0.5, 0.5]), t([1.0]))


def test_mkd_q_examples():
    assert mkd_q(0.5, 0.3) == 0.5
    assert float(mkd_q(0.8, 1.5)) == pytest.approx(SIGMOID_0_4, abs=1e-9)
    assert float(mkd_q(1.0, 1.0)) == pytest.approx(SIGMOID_1, abs=1e-9)
    assert float(mkd_q(t([0.8]), 1.5)[0]) == pytest.approx(SIGMOID_0_4, abs=1e-9)


def test_mkd_q_matches_two_way_softmax():
    p = np.linspace(0.01, 0.99, 21)
    tau = 0.7
    soft = np.exp(p / tau) / (np.exp(p / tau) + np.exp((1 - p) / tau))
    np.testing.assert_allclose(mkd_q(p, tau), soft, atol=1e-12)


@settings(max_examples=50)
@given(p=st.floats(0.0, 1.0), q=st.floats(0.0, 1.0), tau=st.floats(0.1, 5.0))
def test_mkd_q_monotone_and_symmetric(p, q, tau):
    assert float(mkd_q(p, tau) + mkd_q(1 - p, tau)) == pytest.approx(1.0, abs=1e-12)
    if p < q - 1e-9:
        assert mkd_q(p, tau) < mkd_q(q, tau)


def test_mkd_examples():
    p = t([[0.3, 0.8, 0.6]])
    assert float(mkd_loss(p, p.clone(), 1.5)) == pytest.approx(0.0, abs=1e-12)
    assert float(mkd_loss(t([[0.8]]), t([[0.5]]), 1.5)) == pytest.approx(KL_EXAMPLE, abs=1e-9)


def test_mkd_gradient_reaches_student_only():
    pt, ps = t([[0.8, 0.2]], grad=True), t([[0.5, 0.4]], grad=True)
    mkd_loss(pt, ps, 1.5).backward()
    assert pt.grad is None
    assert ps.grad is not None and ps.grad.abs().sum() > 0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), tau=st.floats(0.2, 4.0))
def test_mkd_non_negative(seed, tau):
    rng = np.random.default_rng(seed)
    pt, ps = t(rng.uniform(size=(3, 4))), t(rng.uniform(size=(3, 4)))
    assert float(mkd_loss(pt, ps, tau)) >= -1e-12


def test_infonce_uniform_is_log_n_plus_one():
    v = t(np.eye(1, 128))
    negs = v.repeat(1024, 1)
    out = clt_infonce(v.repeat(4, 1), v.repeat(4, 1), negs, 0.07)
    assert float(out) == pytest.approx(LN_1025, abs=1e-6)


def test_infonce_hand_value():
    a = t([[1.0, 0.0]])
    n = t([[0.0, 1.0]])
    assert float(clt_infonce(a, a.clone(), n, 1.0)) == pytest.approx(LN_1P_EXP_M1, abs=1e-9)


def test_infonce_errors():
    a = t([[1.0, 0.0]])
    with pytest.raises(ValueError, match="negative"):
        clt_infonce(a, a, t(np.zeros((0, 2))), 0.1)
    with pytest.raises(ValueError, match="norm"):
        clt_infonce(t([[2.0, 0.0]]), a, a, 0.1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), tau=st.floats(0.05, 2.0))
def test_infonce_non_negative(seed, tau):
    rng = np.random.default_rng(seed)
    assert float(clt_infonce(unit(rng, 4), unit(rng, 4), unit(rng, 9), tau)) >= 0.0


def test_infonce_increases_as_positive_moves_away():
    rng = np.random.default_rng(0)
    a = t(np.eye(1, 8))
    negs = unit(rng, 5, 8)
    values = []
    for angle in np.linspace(0.0, np.pi, 7):
        p = t([[np.cos(angle), np.sin(angle)] + [0.0] * 6])
        values.append(float(clt_infonce(a, p, negs, 0.5)))
    assert all(x < y for x, y in zip(values, values[1:]))


def test_clt_uniform_banks():
    e = np.eye(1, 128, dtype=np.float32)
    bank = MemoryBank(np.repeat(e, 40, axis=0))
    emb = t(np.repeat(e, 4, axis=0), dtype=torch.float32)
    out = clt_loss(emb, emb.clone(), bank, MemoryBank(bank.rows.copy()), [0, 1, 2, 3], 32, 0.07,
                   np.random.default_rng(0))
    assert float(out) == pytest.approx(math.log(33), abs=1e-5)


def test_clt_gradient_student_only_and_errors():
    rng = np.random.default_rng(1)
    bank_rows = unit(rng, 20, 8).numpy().astype(np.float32)
    s = unit(rng, 3, 8).float().requires_grad_(True)
    tt = unit(rng, 3, 8).float().requires_grad_(True)
    sb, tb = MemoryBank(bank_rows.copy()), MemoryBank(bank_rows.copy())
    clt_loss(s, tt, sb, tb, [0, 1, 2], 10, 0.2, np.random.default_rng(0)).backward()
    assert tt.grad is None and s.grad.abs().sum() > 0
    with pytest.raises(ValueError):
        clt_loss(s, tt, sb, tb, [0, 1, 2], 18, 0.2, np.random.default_rng(0))


def test_mvkt_combination():
    b, m, c = t(0.7), t(0.04), t(6.9)
    assert float(mvkt_loss(b, m, c, LossWeights(1.0, 1.0))) == pytest.approx(7.64, abs=1e-12)
    assert mvkt_loss(b, m, c, LossWeights(0.0, 0.0)).item() == b.item()
    one = float(mvkt_loss(b, m, c, LossWeights(1.0, 0.0))) - 0.7
    two = float(mvkt_loss(b, m, c, LossWeights(2.0, 0.0))) - 0.7
    assert two == pytest.approx(2 * one)


def test_mvkt_beta_zero_blocks_clt_gradient():
    c = t(6.9, grad=True)
    mvkt_loss(t(0.7), t(0.0), c, LossWeights(1.0, 0.0)).backward()
    assert float(c.grad) == 0.0


def test_mvkt_rejects_non_finite_naming_term():
    with pytest.raises(FloatingPointError, match="mkd"):
        mvkt_loss(t(0.7), t(float("nan")), t(1.0), LossWeights())


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(alpha=-1)
    with pytest.raises(ValueError):
        LossWeights(tau=0)


@pytest.mark.parametrize("name", list(gradcheck.LOSS_CASES))
def test_loss_gradcheck(name):
    result = gradcheck.check_case(name, gradcheck.LOSS_CASES[name])
    assert result.passed, f"{name}: {result.max_error:.3e}"
