"""The full survival network: raw-feature branch plus prompted autoregressive branch."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .adapter import (Adapter, PlainProjection, TextEmbedding, build_prompt,
                      load_templates, load_text_embedding, text_embed_stub)
from .amt import AMT, AMTOutput, InterleavedSequence, MIEstimator, mi_loss, mi_pairs, recon_loss
from .cohort import MODALITIES, CohortSample
from .head import HazardHead, HazardOutput, InterBranch, IntraBranch, fuse, surv_nll, total_loss
from .layers import Module
from .tensor import Tensor


@dataclass
class Batch:
    ids: list[str]
    cancer_types: list[str]
    chains: dict[str, np.ndarray]    # modality -> (B, n_max, d), zero padded
    lengths: dict[str, np.ndarray]   # modality -> (B,)
    times: np.ndarray
    censorship: np.ndarray
    time_bins: np.ndarray | None

    def __len__(self) -> int:
        return len(self.ids)

    def mask(self, mod: str) -> np.ndarray:
        n = self.chains[mod].shape[1]
        return np.arange(n)[None, :] < self.lengths[mod][:, None]


def collate(samples: Sequence[CohortSample]) -> Batch:
    chains, lengths = {}, {}
    d = samples[0].chains["gene"].shape[1]
    for mod in MODALITIES:
        lens = np.array([s.chains[mod].shape[0] for s in samples], dtype=np.int64)
        arr = np.zeros((len(samples), int(lens.max()), d))
        for i, s in enumerate(samples):
            arr[i, : lens[i]] = s.chains[mod]
        chains[mod], lengths[mod] = arr, lens
    bins = [s.label.time_bin for s in samples]
    return Batch(
        ids=[s.id for s in samples],
        cancer_types=[s.cancer_type for s in samples],
        chains=chains,
        lengths=lengths,
        times=np.array([s.label.time for s in samples]),
        censorship=np.array([s.label.censorship for s in samples], dtype=np.int64),
        time_bins=None if any(b is None for b in bins) else np.array(bins, dtype=np.int64),
    )


class GuidanceBank:
    """Text embeddings per (modality, cancer type), computed once and cached."""

    def __init__(self, d_text: int, seed: int = 0, vanilla_only: bool = False,
                 templates: str | Path | None = None, embedding_dir: str | Path | None = None):
        self.d_text, self.seed, self.vanilla_only = d_text, seed, vanilla_only
        self.templates = load_templates(templates)
        self.embedding_dir = Path(embedding_dir) if embedding_dir else None
        self._cache: dict[tuple[str, str], TextEmbedding] = {}

    def get(self, modality: str, cancer_type: str) -> TextEmbedding:
        key = (modality, cancer_type)
        if key not in self._cache:
            if self.embedding_dir is not None:
                emb = load_text_embedding(self.embedding_dir / f"{cancer_type}_{modality}.f32t")
            else:
                prompt = build_prompt(modality, cancer_type, self.templates, self.vanilla_only)
                emb = text_embed_stub(prompt.text, self.d_text, self.seed)
            self._cache[key] = emb
        return self._cache[key]

    def batch(self, modality: str, cancer_types: Sequence[str]) -> np.ndarray:
        return np.stack([self.get(modality, c).vector for c in cancer_types])


@dataclass
class ForwardResult:
    hazards: HazardOutput
    seq: InterleavedSequence | None = None
    amt_out: AMTOutput | None = None
    rec: Tensor | None = None
    mi: Tensor | None = None


class SurvivalModel(Module):
    """Intra branch on raw chains; inter branch = adapters -> AMT -> projector;
    the concatenated tokens feed a 4-bin hazard classifier.

    ``inter_modalities`` selects which chains enter the autoregressive branch;
    the intra branch always sees all four raw chains.
    """

    def __init__(self, d: int, seed: int = 0, d_text: int | None = None,
                 use_adapter: bool = True, use_amt: bool = True, use_mi: bool = True,
                 inter_modalities: Sequence[str] = MODALITIES, max_len: int = 64,
                 n_bins: int = 4):
        rng = np.random.default_rng(seed)
        self.d = d
        self.d_text = d if d_text is None else d_text
        self.use_adapter, self.use_amt, self.use_mi = use_adapter, use_amt, use_mi
        unknown = set(inter_modalities) - set(MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")
        # canonical order regardless of how they were listed
        self.inter_modalities = [m for m in MODALITIES if m in inter_modalities]
        if use_amt and not self.inter_modalities:
            raise ValueError("the autoregressive branch needs at least one modality")
        self.intra = IntraBranch(d, len(MODALITIES), rng)
        if use_amt:
            if use_adapter:
                self.adapters = {m: Adapter(m, d, self.d_text, rng) for m in self.inter_modalities}
            else:
                self.adapters = {m: PlainProjection(m, d, rng) for m in self.inter_modalities}
            self.amt = AMT(d, rng, max_len=max_len, n_chain_types=len(MODALITIES))
            self.mi = MIEstimator(d, rng) if use_mi else None
            self.inter = InterBranch(d, rng)
        self.classifier = HazardHead(2 * d if use_amt else d, rng, n_bins=n_bins)

    @property
    def mi_pairs(self) -> list[tuple[str, str]]:
        return mi_pairs(self.inter_modalities) if self.use_amt and self.use_mi else []

    def forward(self, batch: Batch, guidance: GuidanceBank | None = None,
                mi_seed: int = 0, with_aux: bool = True) -> ForwardResult:
        raw = [Tensor(batch.chains[m]) for m in MODALITIES]
        intra_tok = self.intra(raw, [batch.mask(m) for m in MODALITIES])
        if not self.use_amt:
            return ForwardResult(self.classifier(intra_tok))

        adapted = []
        for m in self.inter_modalities:
            g = guidance.batch(m, batch.cancer_types) if self.use_adapter else None
            adapted.append(self.adapters[m](Tensor(batch.chains[m]), g))
        seq = self.amt.interleave(
            adapted,
            lengths=[batch.lengths[m] for m in self.inter_modalities],
            chain_ids=self.inter_modalities,
            chain_types=[MODALITIES.index(m) for m in self.inter_modalities],
        )
        out = self.amt(seq)
        inter_tok = self.inter(out.recon, seq.pad_mask)
        result = ForwardResult(self.classifier(fuse(intra_tok, inter_tok)), seq, out)
        if with_aux:
            result.rec = recon_loss(out, seq)
            if self.use_mi:
                result.mi = mi_loss(out, self.mi, mi_seed, self.inter_modalities)
        return result

    def loss(self, batch: Batch, guidance: GuidanceBank | None, lam: float = 0.3,
             mi_seed: int = 0, eq1_literal: bool = False) -> tuple[Tensor, dict[str, float]]:
        """Total objective ``surv + rec + lam * mi`` and its parts."""
        if batch.time_bins is None:
            raise ValueError("batch labels have no time bins")
        res = self.forward(batch, guidance, mi_seed)
        surv = surv_nll(res.hazards, batch.time_bins, batch.censorship, eq1_literal)
        rec = res.rec if res.rec is not None else Tensor(0.0)
        mi = res.mi if res.mi is not None else Tensor(0.0)
        total = total_loss(surv, rec, mi, lam)
        parts = {"surv": surv.item(), "rec": rec.item(), "mi": mi.item(), "total": total.item()}
        return total, parts
