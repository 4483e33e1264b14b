#!/usr/bin/env python3
"""
Network core tests: layer oracles, gradient checks, losses, optimizer and checkpoints
"""

import math

import numpy as np
import pytest

from nn_core import (
    MLP, Adam, CheckpointError, CrossAttentionBlock, DecoderBlock, DimensionMismatchError, LayerNorm,
    Linear, MultiHeadAttention, NNError, Parameter, SelfAttentionBlock, Tensor, adam_step, concat,
    cross_attention, cross_entropy, dropout, grad_check, load_checkpoint, mlp, mse, save_checkpoint,
    self_attention, softmax, take_rows, warmup_lr,
)


def _rng(seed=0):
    return np.random.default_rng(seed)


def _identity_attention(dim, heads):
    mha = MultiHeadAttention(dim, heads, _rng())
    for proj in (mha.q_proj, mha.k_proj, mha.v_proj, mha.o_proj):
        proj.weight.data = np.eye(dim)
        proj.bias.data = np.zeros(dim)
    return mha


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def test_single_token_attention_returns_value():
    x = Tensor(_rng(1).normal(size=(1, 8)))
    mha = _identity_attention(8, 2)
    assert np.allclose(mha(x, x).data, x.data)


def test_self_attention_block_is_residual():
    x = Tensor(_rng(2).normal(size=(1, 8)))
    block = SelfAttentionBlock(8, 2, _rng())
    block.attn = _identity_attention(8, 2)
    expected = x.data + block.norm(x).data
    assert np.allclose(self_attention(x, block).data, expected)


def test_equal_logits_give_uniform_weights():
    weights = softmax(Tensor(np.zeros((3, 5))), axis=-1)
    assert np.allclose(weights.data, 0.2)


def test_attention_rows_sum_to_one():
    mha = MultiHeadAttention(16, 4, _rng(3))
    mha(Tensor(_rng(4).normal(size=(6, 16))), Tensor(_rng(5).normal(size=(9, 16))))
    assert mha.last_weights.shape == (4, 6, 9)
    assert np.allclose(mha.last_weights.sum(axis=-1), 1.0, atol=1e-9)


def test_cross_attention_ignores_memory_order():
    block = CrossAttentionBlock(8, 2, _rng(6))
    queries = Tensor(_rng(7).normal(size=(4, 8)))
    memory = _rng(8).normal(size=(10, 8))
    perm = _rng(9).permutation(10)
    a = block(queries, Tensor(memory)).data
    b = cross_attention(queries, Tensor(memory[perm]), block).data
    assert np.allclose(a, b, atol=1e-10)


def test_attention_dimension_checks():
    with pytest.raises(DimensionMismatchError):
        MultiHeadAttention(10, 4, _rng())
    mha = MultiHeadAttention(8, 2, _rng())
    with pytest.raises(DimensionMismatchError):
        mha(Tensor(np.zeros((2, 8))), Tensor(np.zeros((3, 6))))


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

def test_zero_mlp_outputs_zero():
    net = MLP([4, 5, 3], _rng(), zero_last=True)
    for layer in net.layers:
        layer.weight.data[:] = 0.0
    assert np.array_equal(net(Tensor(_rng(1).normal(size=(7, 4)))).data, np.zeros((7, 3)))


def test_identity_linear_layer():
    net = MLP([3, 3], _rng())
    net.layers[0].weight.data = np.eye(3)
    x = _rng(2).normal(size=(5, 3))
    assert np.allclose(net(Tensor(x)).data, x)


def test_mlp_matches_matrix_chain():
    net = MLP([6, 10, 8, 4], _rng(3))
    for layer in net.layers:
        layer.bias.data = _rng(4).normal(size=layer.bias.shape)
    x = _rng(5).normal(size=(9, 6))
    h = x
    for i, layer in enumerate(net.layers):
        h = h @ layer.weight.data + layer.bias.data
        if i < 2:
            h = np.maximum(h, 0.0)
    assert np.allclose(mlp(Tensor(x), net).data, h, atol=1e-12, rtol=0)


def test_linear_rejects_wrong_width():
    with pytest.raises(DimensionMismatchError):
        Linear(3, 2, _rng())(Tensor(np.zeros((1, 4))))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def test_cross_entropy_values():
    assert cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3]).data == pytest.approx(math.log(4))
    logits = np.full((2, 5), -50.0)
    logits[0, 2] = logits[1, 4] = 50.0
    assert cross_entropy(Tensor(logits), [2, 4]).data == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_mask_and_range():
    logits = np.zeros((3, 4))
    logits[2] = [100.0, 0.0, 0.0, 0.0]
    masked = cross_entropy(Tensor(logits), [0, 0, 1], mask=[True, True, False])
    assert masked.data == pytest.approx(math.log(4))
    with pytest.raises(NNError):
        cross_entropy(Tensor(logits), [0, 4, 1])


def test_mse():
    x = _rng().normal(size=(4, 3))
    assert mse(Tensor(x), x).data == 0.0
    assert mse(Tensor(np.ones(4)), np.zeros(4), mask=np.array([1, 0, 0, 1])).data == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------

def test_quadratic_grad_check():
    x = Parameter(_rng().normal(size=(3, 4)))
    assert grad_check(lambda: (x * x).sum(), [x]) <= 1e-8


def test_attention_block_grad_check():
    block = SelfAttentionBlock(8, 2, _rng(1))
    x = Tensor(_rng(2).normal(size=(5, 8)))
    err = grad_check(lambda: (block(x) * block(x)).sum(), block.parameters(), n_samples=16, rng=_rng(3))
    assert err <= 1e-4


def test_decoder_block_grad_check():
    block = DecoderBlock(8, 2, 16, _rng(4))
    queries = Parameter(_rng(5).normal(size=(3, 8)))
    memory = Tensor(_rng(6).normal(size=(7, 8)))
    weights = _rng(7).normal(size=(3, 8))
    err = grad_check(lambda: (block(queries, memory) * weights).sum(),
                     [queries] + block.parameters(), n_samples=32, rng=_rng(8))
    assert err <= 1e-4


def test_cross_entropy_mlp_grad_check():
    net = MLP([5, 12, 7], _rng(9))
    x = Tensor(_rng(10).normal(size=(6, 5)))
    targets = [0, 3, 6, 2, 2, 1]
    assert grad_check(lambda: cross_entropy(net(x), targets), net.parameters()) <= 1e-4


def test_shape_ops_grad_check():
    a = Parameter(_rng(11).normal(size=(4, 3)))
    b = Parameter(_rng(12).normal(size=(2, 3)))
    norm = LayerNorm(3)

    def f():
        joined = concat([a, b], axis=0)
        picked = take_rows(norm(joined), [0, 5, 5, 2])
        return (picked.max(axis=0) * picked.mean(axis=0)).sum() + picked.tanh().sum()
    assert grad_check(f, [a, b, norm.gamma, norm.beta]) <= 1e-4


def test_backward_needs_scalar():
    with pytest.raises(NNError):
        (Parameter(np.ones(3)) * 2.0).backward()


def test_dropout_is_identity_in_eval_mode():
    x = Tensor(np.ones((4, 4)))
    assert dropout(x, 0.5, _rng(), training=False) is x
    block = SelfAttentionBlock(8, 2, _rng(), dropout_p=0.1).eval()
    y = Tensor(_rng(1).normal(size=(3, 8)))
    assert np.array_equal(block(y).data, block(y).data)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def test_warmup_schedule():
    assert warmup_lr(1, 0.001, 2000) == pytest.approx(0.001 / 2000)
    assert warmup_lr(2000, 0.001, 2000) == pytest.approx(0.001)
    assert warmup_lr(5000, 0.001, 2000) == pytest.approx(0.001)
    assert warmup_lr(1, 0.001, 0) == 0.001


def test_zero_gradient_leaves_params():
    p = np.array([1.0, -2.0, 3.0])
    adam_step([p], [np.zeros(3)], {}, lr=0.1)
    assert np.array_equal(p, [1.0, -2.0, 3.0])


def test_constant_gradient_moves_against_sign():
    p = np.zeros(3)
    g = np.array([0.5, -2.0, 1e-3])
    state = {}
    for _ in range(200):
        before = p.copy()
        adam_step([p], [g], state, lr=0.01)
    assert np.allclose(p - before, -0.01 * np.sign(g), rtol=1e-3)
    assert state["step"] == 200


def test_adam_minimizes_quadratic():
    x = Parameter(np.array([3.0, -4.0]))
    opt = Adam([x], lr=0.1)
    for _ in range(1000):
        opt.zero_grad()
        (x * x).sum().backward()
        opt.step()
    assert np.abs(x.data).max() < 0.1
    assert opt.step_count == 1000


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = MLP([4, 6, 2], _rng(1))
    bin_path, json_path = save_checkpoint(tmp_path / "ckpt" / "model", net.state_dict(), {"dims": [4, 6, 2]})
    assert bin_path.exists() and json_path.exists()
    state, config = load_checkpoint(tmp_path / "ckpt" / "model")
    assert config == {"dims": [4, 6, 2]}
    other = MLP([4, 6, 2], _rng(2))
    other.load_state_dict(state)
    x = Tensor(_rng(3).normal(size=(3, 4)))
    assert np.array_equal(other(x).data, net(x).data)


def test_checkpoint_mismatch(tmp_path):
    save_checkpoint(tmp_path / "m", MLP([4, 6, 2], _rng()).state_dict(), {})
    state, _ = load_checkpoint(tmp_path / "m.bin")
    with pytest.raises(CheckpointError):
        MLP([4, 5, 2], _rng()).load_state_dict(state)
    with pytest.raises(CheckpointError):
        MLP([4, 6, 2, 1], _rng()).load_state_dict(state)


def test_corrupt_checkpoint(tmp_path):
    bin_path, _ = save_checkpoint(tmp_path / "m", MLP([2, 2], _rng()).state_dict(), {})
    raw = bytearray(bin_path.read_bytes())
    raw[-1] ^= 0xFF
    bin_path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing")
