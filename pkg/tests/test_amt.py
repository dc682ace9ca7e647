import logging

import numpy as np
import pytest

from survtraction import tensor as T
from survtraction.amt import (AMT, MLP_EXPANSION, N_HEADS, N_LAYERS, AMTOutput, MIEstimator,
                              deinterleave, derangement, interleave, interleave_order, mi_loss,
                              mi_pair_terms, mi_pairs, recon_loss)
from survtraction.cohort import MODALITIES
from survtraction.tensor import Tensor


def chains_batch(rng, lengths, d=8, bsz=1):
    return [rng.standard_normal((bsz, n, d)) for n in lengths]


def test_round_robin_example():
    a = np.array([[[1.0], [2.0]]])
    b = np.array([[[10.0], [20.0], [30.0]]])
    seq = interleave([a, b], start=np.array([-1.0]))
    assert seq.tokens.data[0, :, 0].tolist() == [-1.0, 1.0, 10.0, 2.0, 20.0, 30.0]
    assert seq.targets.data[0, :, 0].tolist() == [1.0, 10.0, 2.0, 20.0, 30.0]
    assert seq.index_map[0].tolist() == [[0, 0], [1, 0], [0, 1], [1, 1], [1, 2]]


def test_interleave_order_skips_exhausted():
    assert interleave_order([1, 3]) == [(0, 0), (1, 0), (1, 1), (1, 2)]


def test_full_length_arithmetic():
    rng = np.random.default_rng(0)
    seq = interleave(chains_batch(rng, (6, 8, 16, 1)))
    assert seq.length == 31
    assert seq.tokens.shape == (1, 32, 8)


def test_deinterleave_round_trip_with_padding():
    rng = np.random.default_rng(1)
    chains = chains_batch(rng, (6, 8, 5, 1), bsz=3)
    lengths = [np.array([6, 4, 2]), np.array([8, 8, 3]), np.array([5, 1, 5]), np.array([1, 1, 1])]
    seq = interleave(chains, lengths, chain_ids=list(MODALITIES))
    back = deinterleave(seq.targets, seq)
    for c, m in enumerate(MODALITIES):
        tok, mask = back[m]
        for b in range(3):
            n = lengths[c][b]
            assert mask[b].sum() == n
            assert np.array_equal(tok.data[b, :n], chains[c][b, :n])
    np.testing.assert_array_equal(seq.pad_mask.sum(axis=1), [20, 14, 11])


def test_structure_counts():
    amt = AMT(8, np.random.default_rng(0))
    assert amt.n_layers == N_LAYERS == 2
    assert N_HEADS == 4 and MLP_EXPANSION == 2
    assert mi_pairs(list(MODALITIES)) == [
        ("gene", "meth"), ("gene", "path_local"), ("gene", "path_global"),
        ("meth", "path_local"), ("meth", "path_global"), ("path_local", "path_global"),
    ]


def _perturb_trial(amt, rng, lengths):
    chains = chains_batch(rng, lengths)
    base = amt(amt.interleave(chains)).recon.data
    seq = amt.interleave(chains)
    j = int(rng.integers(0, seq.length))
    c, p = seq.index_map[0, j]
    chains[c] = chains[c].copy()
    chains[c][0, p] += rng.standard_normal(chains[c].shape[-1]) * 10.0
    after = amt(amt.interleave(chains)).recon.data
    return np.array_equal(base[0, : j + 1], after[0, : j + 1]), base, after, j


def test_causal_invariance_sampled():
    rng = np.random.default_rng(2)
    amt = AMT(8, rng, max_len=16)
    for _ in range(50):
        ok, base, after, j = _perturb_trial(amt, rng, (3, 3, 4, 1))
        assert ok
        if j + 1 < base.shape[1]:
            assert not np.array_equal(base[0, j + 1:], after[0, j + 1:])


def test_single_token_sequence():
    rng = np.random.default_rng(3)
    amt = AMT(8, rng)
    seq = amt.interleave([rng.standard_normal((1, 1, 8))])
    out = amt(seq)
    assert out.recon.shape == (1, 1, 8)
    other = amt(amt.interleave([rng.standard_normal((1, 1, 8))]))
    assert np.array_equal(out.recon.data, other.recon.data)  # sees only the start token


def test_padding_does_not_leak():
    rng = np.random.default_rng(4)
    amt = AMT(8, rng, max_len=16)
    chains = chains_batch(rng, (3, 3, 4, 1), bsz=2)
    lengths = [np.array([3, 2]), np.array([3, 1]), np.array([4, 2]), np.array([1, 1])]
    out = amt(amt.interleave(chains, lengths))
    alone = amt(amt.interleave([c[1:2, :n[1]] for c, n in zip(chains, lengths)]))
    np.testing.assert_allclose(out.recon.data[1, :6], alone.recon.data[0], rtol=0, atol=1e-12)


def test_max_len_enforced():
    amt = AMT(8, np.random.default_rng(0), max_len=4)
    with pytest.raises(T.ContractViolation):
        amt(amt.interleave([np.zeros((1, 5, 8))]))


def test_recon_loss_examples():
    rng = np.random.default_rng(5)
    seq = interleave([rng.standard_normal((1, 2, 3))])
    assert recon_loss(AMTOutput(seq.targets), seq).item() == 0.0
    shifted = AMTOutput(Tensor(seq.targets.data + 1.0))
    assert recon_loss(shifted, seq).item() == pytest.approx(1.0, abs=1e-15)
    guess = rng.standard_normal((1, 2, 3))
    expected = sum((guess[0, i, k] - seq.targets.data[0, i, k]) ** 2
                   for i in range(2) for k in range(3)) / 6
    assert recon_loss(AMTOutput(Tensor(guess)), seq).item() == pytest.approx(expected, rel=1e-14)


def test_recon_loss_ignores_pads():
    rng = np.random.default_rng(6)
    seq = interleave(chains_batch(rng, (3, 2), d=4, bsz=2), [np.array([3, 1]), np.array([2, 1])])
    recon = seq.targets.data.copy()
    recon[~seq.pad_mask] = 99.0
    assert recon_loss(AMTOutput(Tensor(recon)), seq).item() == 0.0


def test_recon_grad_check():
    rng = np.random.default_rng(7)
    amt = AMT(8, rng, max_len=8)
    chains = [Tensor(c) for c in chains_batch(rng, (2, 2))]
    err = T.grad_check_params(lambda: recon_loss(amt(amt.interleave(chains)),
                                                 amt.interleave(chains)), amt.parameters())
    assert err < 1e-3


# ---------------------------------------------------------------------------
# mutual-information regularizer


def _amt_out(rng, lengths, bsz=1, d=8):
    amt = AMT(d, rng, max_len=32)
    seq = amt.interleave(chains_batch(rng, lengths, d, bsz),
                         chain_ids=list(MODALITIES)[: len(lengths)])
    return amt(seq)


def test_derangement_has_no_fixed_points():
    rng = np.random.default_rng(0)
    for n in range(2, 12):
        for _ in range(20):
            p = derangement(n, rng)
            assert sorted(p) == list(range(n))
            assert not np.any(p == np.arange(n))
    with pytest.raises(ValueError):
        derangement(1, rng)


def test_six_pair_terms():
    rng = np.random.default_rng(8)
    out = _amt_out(rng, (6, 8, 16, 1), bsz=2)
    terms = mi_pair_terms(out, MIEstimator(8, rng), 0)
    assert len(terms) == 6
    assert all(t.item() > 0 for t in terms.values())


def test_constant_critic_gives_log2():
    rng = np.random.default_rng(9)
    est = MIEstimator(8, rng)
    est.mlp.fc2.weight.data[...] = 0.0
    est.mlp.fc2.bias.data[...] = 1.7
    out = _amt_out(rng, (6, 8, 16, 1), bsz=2)
    for term in mi_pair_terms(out, est, 0).values():
        assert term.item() == pytest.approx(np.log(2.0), abs=1e-15)
    assert mi_loss(out, est, 0).item() == pytest.approx(np.log(2.0), abs=1e-15)


def test_large_margin_limit():
    assert 0.0 < -T.log_sigmoid(Tensor(40.0)).item() < 1e-16


def test_mi_matches_numpy_oracle():
    # With two-token chains the only derangement is the swap, so negatives are fixed.
    rng = np.random.default_rng(10)
    out = _amt_out(rng, (2, 2, 2))
    est = MIEstimator(8, rng)
    mlp = est.mlp

    def f(x, y):
        h = np.maximum(np.concatenate([x, y]) @ mlp.fc1.weight.data + mlp.fc1.bias.data, 0.0)
        return float(h @ mlp.fc2.weight.data[:, 0] + mlp.fc2.bias.data[0])

    terms = mi_pair_terms(out, est, 123)
    for (m1, m2), term in terms.items():
        x1 = out.per_chain_recon[m1].data[0]
        x2 = out.per_chain_recon[m2].data[0]
        vals = [np.log1p(np.exp(-(f(x1[i], x2[i]) - f(x1[i], x2[1 - i])))) for i in range(2)]
        assert term.item() == pytest.approx(np.mean(vals), rel=1e-12)


def test_single_token_pairs_use_batch_negatives():
    rng = np.random.default_rng(11)
    out = _amt_out(rng, (3, 3, 4, 1), bsz=3)
    terms = mi_pair_terms(out, MIEstimator(8, rng), 0)
    assert ("gene", "path_global") in terms and len(terms) == 6


def test_batch_of_one_skips_single_token_pairs(caplog):
    rng = np.random.default_rng(12)
    out = _amt_out(rng, (3, 3, 4, 1), bsz=1)
    with caplog.at_level(logging.WARNING):
        terms = mi_pair_terms(out, MIEstimator(8, rng), 0)
    assert len(terms) == 3
    assert all("path_global" not in pair for pair in terms)
    assert "skipping" in caplog.text


def test_mi_seeded():
    rng = np.random.default_rng(13)
    out = _amt_out(rng, (6, 8, 5, 1), bsz=2)
    est = MIEstimator(8, rng)
    assert mi_loss(out, est, 4).item() == mi_loss(out, est, 4).item()
    assert mi_loss(out, est, 4).item() != mi_loss(out, est, 5).item()


def test_rec_plus_mi_grad_check():
    rng = np.random.default_rng(14)
    amt = AMT(8, rng, max_len=16)
    est = MIEstimator(8, rng)
    chains = [Tensor(c) for c in chains_batch(rng, (3, 3, 4, 1), bsz=2)]
    ids = list(MODALITIES)

    def loss():
        seq = amt.interleave(chains, chain_ids=ids)
        out = amt(seq)
        return T.add(recon_loss(out, seq), T.scale(mi_loss(out, est, 1, ids), 0.3))

    assert T.grad_check_params(loss, amt.parameters() + est.parameters()) < 1e-3
