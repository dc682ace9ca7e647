"""Autoregressive mutual traction over interleaved modality chains.

The chains are merged round-robin into one sequence behind a learnable start
token. A small pre-norm causal transformer regresses each token from the
tokens before it; a pairwise contrastive critic ties reconstructed chains of
different modalities together.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .cohort import stable_seed
from .layers import MLP, LayerNorm, Linear, Module
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)

N_LAYERS = 2
N_HEADS = 4
MLP_EXPANSION = 2


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-sample row gather: ``x`` is (B, M, d), ``idx`` is (B, K) -> (B, K, d)."""
    b, m, d = x.shape
    idx = np.asarray(idx, dtype=np.int64)
    flat = idx + (np.arange(b) * m)[:, None]
    return T.embedding_lookup(T.reshape(x, (b * m, d)), flat)


@dataclass
class InterleavedSequence:
    """Batched interleaved chains.

    ``tokens`` is (B, 1 + L, d) with the start token at position 0 and
    ``targets`` the same minus the start token. ``index_map[b, i]`` holds the
    (chain, position) of slot ``i``; padded slots hold (-1, -1).
    """

    tokens: Tensor
    targets: Tensor
    index_map: np.ndarray
    pad_mask: np.ndarray
    chain_ids: list[str]
    chain_lengths: np.ndarray  # (B, n_chains)
    chain_types: list[int] | None = None  # type-embedding row per chain

    @property
    def length(self) -> int:
        return self.pad_mask.shape[1]

    def slot_of(self, chain: int) -> tuple[np.ndarray, np.ndarray]:
        """Sequence slots of every position of one chain, plus validity mask."""
        lengths = self.chain_lengths[:, chain]
        nmax = int(lengths.max())
        slots = np.zeros((len(lengths), nmax), dtype=np.int64)
        for b in range(len(lengths)):
            hit = np.nonzero(self.index_map[b, :, 0] == chain)[0]
            order = self.index_map[b, hit, 1]
            slots[b, order] = hit
        mask = np.arange(nmax)[None, :] < lengths[:, None]
        return slots, mask


def interleave_order(lengths: Sequence[int]) -> list[tuple[int, int]]:
    """Round-robin (chain, position) order, skipping exhausted chains."""
    out = []
    for pos in range(max(lengths)):
        for c, n in enumerate(lengths):
            if pos < n:
                out.append((c, pos))
    return out


def interleave(chains: Sequence, lengths: Sequence[np.ndarray] | None = None,
               start=None, chain_ids: Sequence[str] | None = None,
               chain_types: Sequence[int] | None = None) -> InterleavedSequence:
    """Interleave batched chains, each (B, n_c, d) and padded to its own max length.

    ``lengths[c]`` gives the true per-sample length of chain ``c`` (defaults to
    the full padded length). ``start`` is the (d,) start token; zeros if omitted.
    """
    chains = [T.as_tensor(c) for c in chains]
    if not chains:
        raise ValueError("interleave: no chains")
    bsz, _, d = chains[0].shape
    for c in chains:
        if c.ndim != 3 or c.shape[0] != bsz or c.shape[2] != d:
            raise T.ContractViolation(f"interleave: chain shapes {[c.shape for c in chains]}")
    if lengths is None:
        lengths = [np.full(bsz, c.shape[1]) for c in chains]
    lens = np.stack([np.asarray(n, dtype=np.int64) for n in lengths], axis=1)
    if np.any(lens < 1):
        raise ValueError("interleave: empty chain")
    if chain_ids is None:
        chain_ids = [str(i) for i in range(len(chains))]

    offsets = np.concatenate([[0], np.cumsum([c.shape[1] for c in chains])[:-1]])
    total = lens.sum(axis=1)
    L = int(total.max())
    index_map = np.full((bsz, L, 2), -1, dtype=np.int64)
    flat = np.zeros((bsz, L), dtype=np.int64)
    for b in range(bsz):
        order = interleave_order(lens[b])
        for i, (c, p) in enumerate(order):
            index_map[b, i] = (c, p)
            flat[b, i] = offsets[c] + p
    pad_mask = np.arange(L)[None, :] < total[:, None]

    merged = T.concat(chains, axis=1)
    targets = take_rows(merged, flat)
    start = T.as_tensor(np.zeros(d) if start is None else start)
    start_rows = T.add(Tensor(np.zeros((bsz, 1, d))), start)
    tokens = T.concat([start_rows, targets], axis=1)
    if chain_types is None:
        chain_types = range(len(chains))
    return InterleavedSequence(tokens, targets, index_map, pad_mask, list(chain_ids), lens,
                               list(chain_types))


def deinterleave(x: Tensor, seq: InterleavedSequence) -> dict[str, tuple[Tensor, np.ndarray]]:
    """Split a (B, L, d) per-slot tensor back into chains: id -> (tensor, mask)."""
    out = {}
    for c, cid in enumerate(seq.chain_ids):
        slots, mask = seq.slot_of(c)
        out[cid] = (take_rows(x, slots), mask)
    return out


@dataclass
class AMTOutput:
    recon: Tensor
    per_chain_recon: dict[str, Tensor] = field(default_factory=dict)
    per_chain_mask: dict[str, np.ndarray] = field(default_factory=dict)


class Attention(Module):
    def __init__(self, d: int, n_heads: int, name: str, rng: np.random.Generator):
        if d % n_heads:
            raise ValueError(f"model width {d} is not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q = Linear(d, d, f"{name}.wq", rng)
        # A key bias shifts every score in a row equally; softmax ignores it.
        self.k = Linear(d, d, f"{name}.wk", rng, bias=False)
        self.v = Linear(d, d, f"{name}.wv", rng)
        self.o = Linear(d, d, f"{name}.wo", rng)

    def _heads(self, x: Tensor) -> Tensor:
        b, l, d = x.shape
        return T.transpose(T.reshape(x, (b, l, self.n_heads, d // self.n_heads)), (0, 2, 1, 3))

    def __call__(self, x: Tensor) -> Tensor:
        b, l, d = x.shape
        q, k, v = self._heads(self.q(x)), self._heads(self.k(x)), self._heads(self.v(x))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d // self.n_heads))
        causal = np.tril(np.ones((l, l), dtype=bool))
        attn = T.softmax_rows(scores, mask=causal)
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, l, d))
        return self.o(ctx)


class Block(Module):
    def __init__(self, d: int, name: str, rng: np.random.Generator):
        self.ln1 = LayerNorm(d, f"{name}.ln1")
        self.attn = Attention(d, N_HEADS, f"{name}.attn", rng)
        self.ln2 = LayerNorm(d, f"{name}.ln2")
        self.mlp = MLP(d, MLP_EXPANSION * d, d, f"{name}.mlp", rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, self.attn(self.ln1(x)))
        return T.add(x, self.mlp(self.ln2(x)))


class AMT(Module):
    """Causal decoder that predicts slot ``i`` from the start token and slots < i."""

    def __init__(self, d: int, rng: np.random.Generator, max_len: int = 64,
                 n_chain_types: int = 4, n_layers: int = N_LAYERS, name: str = "amt"):
        self.d, self.max_len = d, max_len
        self.start_type = n_chain_types
        self.start = Parameter(rng.normal(0.0, 0.02, size=d), f"{name}.start")
        self.pos_emb = Parameter(rng.normal(0.0, 0.02, size=(max_len, d)), f"{name}.pos_emb")
        self.type_emb = Parameter(rng.normal(0.0, 0.02, size=(n_chain_types + 1, d)),
                                  f"{name}.type_emb")
        self.layers = [Block(d, f"{name}.layer{i}", rng) for i in range(n_layers)]
        self.ln_f = LayerNorm(d, f"{name}.ln_f")
        self.head = Linear(d, d, f"{name}.head", rng)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def interleave(self, chains: Sequence, lengths=None, chain_ids=None,
                   chain_types: Sequence[int] | None = None) -> InterleavedSequence:
        return interleave(chains, lengths, self.start, chain_ids, chain_types)

    def __call__(self, seq: InterleavedSequence) -> AMTOutput:
        bsz, L = seq.pad_mask.shape
        if L < 1:
            raise ValueError("amt_forward: empty sequence")
        if L > self.max_len:
            raise T.ContractViolation(f"amt_forward: length {L} exceeds max_len {self.max_len}")
        # Slot i of the input holds the start token (i = 0) or target i - 1.
        inputs = take_rows(seq.tokens, np.tile(np.arange(L), (bsz, 1)))
        slot_type = np.where(seq.index_map[:, :, 0] >= 0,
                             np.asarray(seq.chain_types)[seq.index_map[:, :, 0]], self.start_type)
        in_type = np.concatenate([np.full((bsz, 1), self.start_type), slot_type[:, :-1]], axis=1)
        h = T.add(inputs, T.embedding_lookup(self.pos_emb, np.arange(L)))
        h = T.add(h, T.embedding_lookup(self.type_emb, in_type))
        for block in self.layers:
            h = block(h)
        recon = self.head(self.ln_f(h))
        out = AMTOutput(recon)
        for cid, (tok, mask) in deinterleave(recon, seq).items():
            out.per_chain_recon[cid] = tok
            out.per_chain_mask[cid] = mask
        return out


def amt_forward(seq: InterleavedSequence, amt: AMT) -> AMTOutput:
    return amt(seq)


def recon_loss(out: AMTOutput, seq: InterleavedSequence) -> Tensor:
    """Mean squared error between predictions and targets over real slots."""
    return T.mse(out.recon, seq.targets, weights=seq.pad_mask[:, :, None])


# ---------------------------------------------------------------------------
# mutual-information regularizer


class MIEstimator(Module):
    """Critic scoring a concatenated (token_m1, token_m2) pair."""

    def __init__(self, d: int, rng: np.random.Generator, hidden: int | None = None,
                 name: str = "mi"):
        self.mlp = MLP(2 * d, hidden or d, 1, name, rng)

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        return self.mlp(T.concat_last_axis([a, b]))


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of range(n) with no fixed points (n >= 2)."""
    if n < 2:
        raise ValueError("a derangement needs at least 2 elements")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def mi_pairs(chain_ids: Sequence[str]) -> list[tuple[str, str]]:
    return list(itertools.combinations(chain_ids, 2))


def mi_pair_terms(out: AMTOutput, estimator: MIEstimator, rng_seed: int,
                  chain_ids: Sequence[str] | None = None) -> dict[tuple[str, str], Tensor]:
    """One -log sigmoid(f(pos) - f(neg)) term per unordered chain pair.

    Positives align positions up to the shorter chain. Negatives pair the same
    m1 token with a deranged m2 position of the same sample, or, when either
    chain has a single token, with the m2 token of another sample in the batch.
    """
    chain_ids = list(out.per_chain_recon) if chain_ids is None else list(chain_ids)
    kept, firsts, seconds, negs, valids = [], [], [], [], []
    for m1, m2 in mi_pairs(chain_ids):
        x1, mask1 = out.per_chain_recon[m1], out.per_chain_mask[m1]
        x2, mask2 = out.per_chain_recon[m2], out.per_chain_mask[m2]
        bsz = x1.shape[0]
        n_b = np.minimum(mask1.sum(axis=1), mask2.sum(axis=1))
        nmax = int(n_b.max())
        rng = np.random.default_rng(stable_seed(rng_seed, m1, m2))
        pos_idx = np.tile(np.arange(nmax), (bsz, 1))
        valid = np.arange(nmax)[None, :] < n_b[:, None]
        if np.all(n_b >= 2):
            neg_idx = np.zeros((bsz, nmax), dtype=np.int64)
            for b in range(bsz):
                neg_idx[b, : n_b[b]] = derangement(int(n_b[b]), rng)
            a = take_rows(x1, pos_idx)
            pos = take_rows(x2, pos_idx)
            neg = take_rows(x2, neg_idx)
        else:
            if bsz < 2:
                log.warning("mi_loss: batch of 1, skipping single-token pair (%s, %s)", m1, m2)
                continue
            perm = derangement(bsz, rng)
            valid = np.ones((bsz, 1), dtype=bool)
            first = np.zeros((bsz, 1), dtype=np.int64)
            a = take_rows(x1, first)
            pos = take_rows(x2, first)
            x2_first = T.reshape(pos, (bsz, x2.shape[2]))
            neg = T.reshape(T.embedding_lookup(x2_first, perm), (bsz, 1, x2.shape[2]))
        kept.append((m1, m2))
        firsts.append(a)
        seconds.append(pos)
        negs.append(neg)
        valids.append(valid)
    if not kept:
        return {}

    # All pairs share one critic call: stack along positions, then positives
    # over negatives along the batch axis.
    bsz = firsts[0].shape[0]
    a, pos, neg = (T.concat(xs, axis=1) for xs in (firsts, seconds, negs))
    scores = estimator(T.concat([a, a], axis=0), T.concat([pos, neg], axis=0))
    diff = T.sub(T.slice_axis(scores, 0, 0, bsz), T.slice_axis(scores, 0, bsz, 2 * bsz))
    nll = T.scale(T.log_sigmoid(diff), -1.0)
    width = sum(v.shape[1] for v in valids)
    nll = T.reshape(T.transpose(nll, (1, 0, 2)), (width * bsz, 1))

    # Row p of ``weights`` averages pair p's valid positions.
    weights = np.zeros((len(kept), width, bsz))
    col = 0
    for p, v in enumerate(valids):
        weights[p, col:col + v.shape[1]] = v.T / v.sum()
        col += v.shape[1]
    per_pair = T.matmul(Tensor(weights.reshape(len(kept), -1)), nll)
    return {pair: T.reshape(T.slice_axis(per_pair, 0, p, p + 1), ())
            for p, pair in enumerate(kept)}


def mi_loss(out: AMTOutput, estimator: MIEstimator, rng_seed: int,
            chain_ids: Sequence[str] | None = None) -> Tensor:
    """Mean of the pairwise terms; zero (constant) when no pair can be formed."""
    terms = list(mi_pair_terms(out, estimator, rng_seed, chain_ids).values())
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / len(terms))
