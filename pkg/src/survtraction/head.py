"""Intra/inter token fusion, discrete hazards and the censored likelihood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear, Module, masked_mean_pool
from .tensor import Tensor

N_BINS = 4


@dataclass
class HazardOutput:
    """Batched per-bin hazards ``f`` (B, n_bins) and survival ``S = cumprod(1 - f)``."""

    hazards: Tensor
    survival: Tensor
    logits: Tensor | None = None

    @property
    def n_bins(self) -> int:
        return self.hazards.shape[-1]


def hazards_from_probs(f) -> HazardOutput:
    f = T.as_tensor(f)
    if f.ndim == 1:
        f = T.reshape(f, (1, f.shape[0]))
    return HazardOutput(hazards=f, survival=T.cumprod_last_axis(T.sub(1.0, f)))


def hazards_from_logits(logits: Tensor) -> HazardOutput:
    f = T.sigmoid(logits)
    return HazardOutput(hazards=f, survival=T.cumprod_last_axis(T.sub(1.0, f)), logits=logits)


class IntraBranch(Module):
    """Mean-pool each raw chain, concatenate, project to ``d``."""

    def __init__(self, d: int, n_chains: int, rng: np.random.Generator, name: str = "intra"):
        self.d, self.n_chains = d, n_chains
        self.proj = Linear(n_chains * d, d, f"{name}.proj", rng)

    def __call__(self, chains, masks) -> Tensor:
        if len(chains) != self.n_chains:
            raise T.ContractViolation(f"intra: expected {self.n_chains} chains, got {len(chains)}")
        pooled = []
        for c, m in zip(chains, masks):
            c = T.as_tensor(c)
            if c.shape[-1] != self.d:
                raise T.ContractViolation(f"intra: token dim {c.shape[-1]} != {self.d}")
            pooled.append(masked_mean_pool(c, m))
        return self.proj(T.concat_last_axis(pooled))


class InterBranch(Module):
    """Mean-pool the AMT reconstruction over real slots, project to ``d``."""

    def __init__(self, d: int, rng: np.random.Generator, name: str = "inter"):
        self.proj = Linear(d, d, f"{name}.proj", rng)

    def __call__(self, recon: Tensor, pad_mask: np.ndarray) -> Tensor:
        return self.proj(masked_mean_pool(recon, pad_mask))


class HazardHead(Module):
    def __init__(self, d_in: int, rng: np.random.Generator, n_bins: int = N_BINS,
                 name: str = "classifier"):
        self.n_bins = n_bins
        self.linear = Linear(d_in, n_bins, name, rng)

    def __call__(self, fused: Tensor) -> HazardOutput:
        return hazards_from_logits(self.linear(fused))


def intra_forward(raw_chains, masks, branch: IntraBranch) -> Tensor:
    return branch(raw_chains, masks)


def inter_forward(recon: Tensor, pad_mask: np.ndarray, branch: InterBranch) -> Tensor:
    return branch(recon, pad_mask)


def fuse(intra_token: Tensor, inter_token: Tensor | None) -> Tensor:
    if inter_token is None:
        return intra_token
    return T.concat_last_axis([intra_token, inter_token])


def surv_nll(h: HazardOutput, time_bin, censorship, eq1_literal: bool = False) -> Tensor:
    """Mean discrete-time negative log-likelihood over the batch.

    Censored (c = 1): -log S(bin). Observed (c = 0): -log S(bin - 1) - log f(bin),
    with S(-1) = 1. ``eq1_literal`` keeps only the -c * log S(bin) term.
    """
    time_bin = np.atleast_1d(np.asarray(time_bin, dtype=np.int64))
    c = np.atleast_1d(np.asarray(censorship, dtype=np.float64))
    bsz, n_bins = h.survival.shape
    if time_bin.shape != (bsz,) or c.shape != (bsz,):
        raise T.ContractViolation("surv_nll: label arrays must match the batch size")
    if np.any(time_bin < 0) or np.any(time_bin >= n_bins):
        raise T.ContractViolation(f"surv_nll: time bins must lie in [0, {n_bins - 1}]")
    at_bin = np.eye(n_bins)[time_bin]
    before = np.zeros((bsz, n_bins))
    has_prev = time_bin > 0
    before[has_prev, time_bin[has_prev] - 1] = 1.0

    s_bin = T.sum_axis(T.mul(h.survival, at_bin), -1)
    censored_term = T.mul(T.log(s_bin), c)
    if eq1_literal:
        per_sample = censored_term
    else:
        s_prev = T.add(T.sum_axis(T.mul(h.survival, before), -1), (~has_prev).astype(np.float64))
        f_bin = T.sum_axis(T.mul(h.hazards, at_bin), -1)
        event_term = T.mul(T.add(T.log(s_prev), T.log(f_bin)), 1.0 - c)
        per_sample = T.add(censored_term, event_term)
    return T.scale(T.mean_all(per_sample), -1.0)


def risk_score(h: HazardOutput) -> np.ndarray:
    """Negative summed survival per sample; larger means worse prognosis."""
    return -h.survival.data.sum(axis=-1)


def total_loss(surv, rec, mi, lam: float = 0.3):
    """surv + rec + lam * mi for tensors or plain floats."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if all(not isinstance(x, Tensor) for x in (surv, rec, mi)):
        return float(surv) + float(rec) + lam * float(mi)
    return T.add(T.add(surv, rec), T.scale(mi, lam))
