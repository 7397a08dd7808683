import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mogakit.moga import (
    GateNet,
    MoGAProjection,
    Rank1AdapterBank,
    gate_logits,
    gumbel_noise,
    gumbel_sigmoid,
    inference_gate,
    init_adapter,
    make_projection,
    moga_forward,
    ste_gate,
    temperature_at,
)
from mogakit.numkit import Tape, Tensor, check_grads
from mogakit.numkit import functional as F


def random_bank(rng, D=6, K=5, R=4):
    W0 = Tensor(rng.normal(size=(D, K)))
    return Rank1AdapterBank(W0, Tensor(rng.normal(size=(R, K)), True), Tensor(rng.normal(size=(R, D)), True))


def dense_oracle(x, bank, gates):
    """Eq-by-eq evaluation with each object's delta materialized from outer products."""
    W0 = bank.W0.data
    out = x @ W0.T
    acc = np.zeros_like(out)
    for z in gates:
        dW = np.zeros_like(W0)
        for i in range(bank.rank):
            dW += z[i] * np.outer(bank.B.data[i], bank.A.data[i])
        acc += x @ dW.T
    return out + acc / len(gates)


def test_bank_reconstructs_lora_product():
    rng = np.random.default_rng(0)
    bank = random_bank(rng)
    Bmat = bank.B.data.T  # D x R, columns b_i
    Amat = bank.A.data    # R x K, rows a_i
    assert np.allclose(bank.dense_delta(), Bmat @ Amat, atol=1e-12)


def test_all_gates_off_is_frozen_base():
    rng = np.random.default_rng(1)
    bank = random_bank(rng)
    x = rng.normal(size=(3, 5))
    out = moga_forward(x, bank, [np.zeros(4), np.zeros(4)])
    assert np.array_equal(out.data, F.linear(Tensor(x), bank.W0).data)


def test_single_object_all_on_is_lora():
    rng = np.random.default_rng(2)
    bank = random_bank(rng)
    x = rng.normal(size=(3, 5))
    ref = x @ bank.W0.data.T + x @ (bank.B.data.T @ bank.A.data).T
    assert np.allclose(moga_forward(x, bank, [np.ones(4)]).data, ref, atol=1e-10)


def test_two_objects_half_delta():
    rng = np.random.default_rng(3)
    bank = random_bank(rng)
    x = rng.normal(size=(3, 5))
    got = moga_forward(x, bank, [np.ones(4), np.zeros(4)]).data
    ref = x @ bank.W0.data.T + 0.5 * x @ (bank.B.data.T @ bank.A.data).T
    assert np.allclose(got, ref, atol=1e-10)
    assert np.allclose(got, dense_oracle(x, bank, [np.ones(4), np.zeros(4)]), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), O=st.integers(1, 3))
def test_mixed_gates_match_dense_oracle(seed, O):
    rng = np.random.default_rng(seed)
    bank = random_bank(rng)
    x = rng.normal(size=(4, 5))
    gates = [(rng.random(4) > 0.5).astype(float) for _ in range(O)]
    assert np.allclose(moga_forward(x, bank, gates).data, dense_oracle(x, bank, gates), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), O=st.integers(1, 3), i=st.integers(0, 3))
def test_gate_flip_changes_output_by_one_component(seed, O, i):
    rng = np.random.default_rng(seed)
    bank = random_bank(rng)
    x = rng.normal(size=(2, 5))
    gates = [(rng.random(4) > 0.5).astype(float) for _ in range(O)]
    gates[0][i] = 0.0
    before = moga_forward(x, bank, gates).data
    gates[0][i] = 1.0
    after = moga_forward(x, bank, gates).data
    expected = np.outer(x @ bank.A.data[i], bank.B.data[i]) / O
    assert np.allclose(after - before, expected, atol=1e-12)


def test_moga_forward_requires_objects():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        moga_forward(rng.normal(size=(2, 5)), random_bank(rng), [])


def test_moga_forward_gradcheck():
    rng = np.random.default_rng(5)
    bank = random_bank(rng)
    x = Tensor(rng.normal(size=(3, 5)))
    gates = [np.array([1.0, 0, 1, 1]), np.array([0.0, 1, 1, 0])]
    w = rng.normal(size=(3, 6))
    assert check_grads(lambda: (moga_forward(x, bank, gates) * w).sum(), [x, bank.A, bank.B]) < 1e-6


def test_w0_never_gets_gradient():
    rng = np.random.default_rng(6)
    bank = random_bank(rng)
    with Tape() as tape:
        out = moga_forward(rng.normal(size=(3, 5)), bank, [np.ones(4)]).sum()
    tape.backward(out)
    assert bank.W0.grad is None
    assert bank.B.grad is not None


# ---- init

def test_init_adapter_is_noop():
    rng = np.random.default_rng(7)
    W0 = Tensor(rng.normal(size=(6, 5)))
    bank = init_adapter(6, 5, 4, rng, W0=W0)
    x = rng.normal(size=(3, 5))
    for z in (np.ones(4), np.array([1.0, 0, 1, 0])):
        assert np.array_equal(moga_forward(x, bank, [z]).data, F.linear(Tensor(x), W0).data)
    assert np.std(bank.A.data) == pytest.approx(0.02, rel=0.5)


def test_init_adapter_deterministic():
    a = init_adapter(6, 5, 4, np.random.default_rng(8))
    b = init_adapter(6, 5, 4, np.random.default_rng(8))
    assert np.array_equal(a.A.data, b.A.data) and np.array_equal(a.B.data, b.B.data)


def test_init_adapter_rejects_nonpositive():
    with pytest.raises(ValueError):
        init_adapter(0, 5, 4, np.random.default_rng(0))


def test_one_step_moves_b():
    from mogakit.numkit import AdamW
    rng = np.random.default_rng(9)
    bank = init_adapter(6, 5, 4, rng, W0=Tensor(rng.normal(size=(6, 5))))
    x = rng.normal(size=(3, 5))
    target = rng.normal(size=(3, 6))
    opt = AdamW(bank.parameters(), lr=1e-2, weight_decay=0.0)
    with Tape() as tape:
        diff = moga_forward(x, bank, [np.ones(4)]) - target
        loss = (diff * diff).mean()
    tape.backward(loss)
    opt.step()
    assert np.any(bank.B.data != 0)


# ---- gate network

def test_gate_logits_zero_net():
    rng = np.random.default_rng(10)
    net = GateNet.init(8, 4, rng)
    for W, b in net.layers:
        W.data[:] = 0
        b.data[:] = 0
    assert np.array_equal(gate_logits(np.zeros(8), net).data, np.zeros(4))


def test_gate_logits_pure():
    rng = np.random.default_rng(11)
    net = GateNet.init(8, 4, rng)
    p = rng.normal(size=8)
    assert np.array_equal(gate_logits(p, net).data, gate_logits(p.copy(), net).data)


def test_gate_logits_gradcheck():
    rng = np.random.default_rng(12)
    net = GateNet.init(8, 4, rng)
    p = Tensor(rng.normal(size=8))
    assert check_grads(lambda: gate_logits(p, net).sum(), [p] + net.parameters()) < 1e-5


def test_gate_final_bias_warm_start():
    net = GateNet.init(8, 4, np.random.default_rng(13))
    assert np.all(net.layers[-1][1].data == 1.0)
    assert net.out_dim == 4 and net.in_dim == 8


# ---- Gumbel-sigmoid / STE / inference

def test_gumbel_sigmoid_zero_noise():
    for tau in (0.1, 0.3, 1.0, 5.0):
        assert np.allclose(gumbel_sigmoid(np.zeros(5), tau, noise=np.zeros(5)).data, 0.5)


def test_gumbel_sigmoid_saturates():
    assert gumbel_sigmoid(np.array([3.0]), 0.01, noise=np.zeros(1)).data[0] > 0.999999


def test_gumbel_sigmoid_rejects_bad_tau():
    with pytest.raises(ValueError):
        gumbel_sigmoid(np.zeros(2), 0.0, noise=np.zeros(2))


def test_gumbel_sigmoid_range():
    z = gumbel_sigmoid(np.zeros(10_000), 1.0, np.random.default_rng(14)).data
    assert np.all((z > 0) & (z < 1))


def test_gumbel_sigmoid_mean_matches_quadrature():
    # E[sigma(G)] with G ~ Gumbel(0,1): density exp(-(g + exp(-g)))
    expect, _ = integrate.quad(lambda g: np.exp(-(g + np.exp(-g))) / (1 + np.exp(-g)), -20, 40)
    z = gumbel_sigmoid(np.zeros(100_000), 1.0, np.random.default_rng(15)).data
    assert abs(z.mean() - expect) < 0.01


def test_gumbel_noise_moments():
    g = gumbel_noise(np.random.default_rng(16), 200_000)
    assert g.mean() == pytest.approx(np.euler_gamma, abs=0.01)
    assert g.var() == pytest.approx(np.pi**2 / 6, abs=0.02)


def test_ste_forward_threshold():
    assert np.array_equal(ste_gate(np.array([0.9, 0.1])).data, [1.0, 0.0])
    assert np.array_equal(ste_gate(np.array([0.5])).data, [0.0])


def test_ste_backward_matches_continuous_substitute():
    rng = np.random.default_rng(17)
    soft = Tensor(rng.random(6), requires_grad=True)
    w = rng.normal(size=6)

    def L(z):
        return F.sigmoid(z * w).sum() + (z * z).sum()

    with Tape() as tape:
        loss = L(ste_gate(soft))
    tape.backward(loss)
    hard = Tensor((soft.data > 0.5).astype(float), requires_grad=True)
    with Tape() as tape:
        loss2 = L(hard)
    tape.backward(loss2)
    assert np.allclose(soft.grad, hard.grad, atol=1e-12)


def test_inference_gate_sign_rule():
    assert np.array_equal(inference_gate(np.array([-1.0, 0.0, 1.0])), [0, 0, 1])
    a = np.random.default_rng(18).normal(size=50)
    assert np.array_equal(inference_gate(a), inference_gate(a))
    assert np.array_equal(inference_gate(a), (1 / (1 + np.exp(-a)) > 0.5).astype(float))


def test_inference_gate_is_training_majority():
    rng = np.random.default_rng(19)
    alpha = np.array([-6.0, -3.0, 3.0, 4.5])
    votes = np.zeros(4)
    n = 10_000
    for _ in range(n):
        votes += ste_gate(gumbel_sigmoid(alpha, 0.3, rng)).data
    majority = (votes > n / 2).astype(float)
    assert np.array_equal(majority, inference_gate(alpha))


# ---- projection wrapper

@pytest.mark.parametrize("cond", ["object", "memory", "none"])
def test_parameter_count_independent_of_objects(cond):
    rng = np.random.default_rng(20)
    proj = make_projection(Tensor(rng.normal(size=(6, 8))), 4, 8, rng, conditioning=cond)
    n = sum(p.data.size for p in proj.parameters())
    x = rng.normal(size=(3, 8))
    for O in (1, 2, 3):
        ptrs = [rng.normal(size=8) for _ in range(O)]
        proj(x, ptrs, "inference", 0.3)
        assert sum(p.data.size for p in proj.parameters()) == n
    base = 4 * (6 + 8) + (8 * 8 + 8) * 2 + 8 * 4 + 4
    assert n == base + (8 if cond == "none" else 0)


def test_training_mode_gates_are_binary_and_alpha_gets_gradient():
    rng = np.random.default_rng(21)
    proj = make_projection(Tensor(rng.normal(size=(6, 8))), 4, 8, rng)
    proj.bank.B.data[:] = rng.normal(size=proj.bank.B.shape)
    x = rng.normal(size=(3, 8))
    ptrs = [rng.normal(size=8), rng.normal(size=8)]
    with Tape() as tape:
        out = proj(x, ptrs, "train", 0.5, rng).sum()
    for dec in proj.last:
        assert set(np.unique(dec.hard)) <= {0.0, 1.0}
    tape.backward(out)
    assert np.any(proj.gate.layers[-1][1].grad != 0)


def test_memory_conditioning_shares_gates():
    rng = np.random.default_rng(22)
    proj = make_projection(Tensor(rng.normal(size=(6, 8))), 4, 8, rng, conditioning="memory")
    gates = proj.gates([rng.normal(size=8), rng.normal(size=8)], "inference", 0.3)
    assert np.array_equal(gates[0].data, gates[1].data)


def test_object_gates_are_function_of_pointers():
    rng = np.random.default_rng(23)
    proj = make_projection(Tensor(rng.normal(size=(6, 8))), 16, 8, rng)
    p1, p2 = rng.normal(size=8), rng.normal(size=8)
    ga = proj.gates([p1, p2], "inference", 0.3)
    gb = proj.gates([p2, p1], "inference", 0.3)
    assert np.array_equal(ga[0].data, gb[1].data)
    assert not np.array_equal(gate_logits(p1, proj.gate).data, gate_logits(p2, proj.gate).data)


def test_temperature_schedule():
    total = 100
    taus = [temperature_at(s, total, 0.3) for s in range(total)]
    assert taus[0] == 1.0
    assert taus[-1] == 0.3
    assert taus[50] == 0.3
    assert np.allclose(np.diff(taus[:51]), -0.7 / 50)
    assert temperature_at(0, 1, 0.3) == 0.3
