"""Modality prompts, the stub text embedder and the prompt-conditioned adapter."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import tensor as T
from .cohort import MODALITIES, read_f32t
from .layers import MLP, Linear, Module
from .tensor import Tensor

VANILLA = "An H&E stained image of {cancer}."
N_BUCKETS = 1 << 16
_WORD = re.compile(r"[a-z0-9]+")
_TERM = re.compile(r"\[([^\]]+)\]")


@dataclass
class PromptSpec:
    modality: str
    cancer_type: str
    text: str
    detail_terms: list[str] = field(default_factory=list)


@dataclass
class TextEmbedding:
    vector: np.ndarray
    source: str = "stub"


def load_templates(path: str | Path | None = None) -> dict[str, str]:
    """Parse a ``modality: template`` file; defaults to the packaged one."""
    if path is None:
        text = resources.files("survtraction").joinpath("prompts.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    templates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        mod, sep, tmpl = line.partition(":")
        mod, tmpl = mod.strip(), tmpl.strip()
        if not sep or mod not in MODALITIES:
            raise ValueError(f"template line {lineno}: expected '<modality>: <template>'")
        if not tmpl.startswith(VANILLA):
            raise ValueError(f"template for {mod} must start with {VANILLA!r}")
        templates[mod] = tmpl
    missing = set(MODALITIES) - set(templates)
    if missing:
        raise ValueError(f"templates missing for {sorted(missing)}")
    return templates


def build_prompt(modality: str, cancer_type: str, templates: dict[str, str] | None = None,
                 vanilla_only: bool = False) -> PromptSpec:
    if not cancer_type:
        raise ValueError("cancer_type must be non-empty")
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    if vanilla_only:
        return PromptSpec(modality, cancer_type, VANILLA.format(cancer=cancer_type), [])
    tmpl = (templates or load_templates())[modality]
    terms = _TERM.findall(tmpl)
    text = _TERM.sub(r"\1", tmpl).format(cancer=cancer_type)
    return PromptSpec(modality, cancer_type, text, terms)


def _bucket(word: str) -> int:
    digest = hashlib.blake2b(word.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % N_BUCKETS


def text_embed_stub(text: str, d_text: int, seed: int = 0) -> TextEmbedding:
    """Hashed bag-of-words embedding: each lowercase word maps to a bucket whose
    Gaussian vector is drawn from a generator seeded by (bucket, seed); the
    word vectors are averaged and L2-normalized."""
    if d_text < 8:
        raise ValueError("d_text must be at least 8")
    words = _WORD.findall(text.lower())
    if not words:
        raise ValueError("cannot embed empty text")
    acc = np.zeros(d_text)
    for w in words:
        acc += np.random.default_rng([_bucket(w), seed]).standard_normal(d_text)
    acc /= len(words)
    return TextEmbedding(acc / np.linalg.norm(acc), "stub")


def load_text_embedding(path: str | Path) -> TextEmbedding:
    """Read an externally computed embedding (one-token feature file)."""
    arr = read_f32t(path)
    if arr.shape[0] != 1:
        raise ValueError(f"{path}: expected a single embedding row, got {arr.shape[0]}")
    vec = arr[0]
    return TextEmbedding(vec / np.linalg.norm(vec), "file")


class Adapter(Module):
    """Concatenate the guidance vector to every token, then MLP back to ``d``."""

    def __init__(self, modality: str, d: int, d_text: int, rng: np.random.Generator,
                 prefix: str = "adapter"):
        self.modality = modality
        self.d, self.d_text = d, d_text
        self.mlp = MLP(d + d_text, d, d, f"{prefix}.{modality}", rng)

    def __call__(self, raw: Tensor, guidance) -> Tensor:
        """``guidance`` is one TextEmbedding, or a (B, d_text) array giving one
        vector per sample of a (B, n, d) batch."""
        raw = T.as_tensor(raw)
        if raw.shape[-1] != self.d:
            raise T.ContractViolation(
                f"adapter {self.modality}: token dim {raw.shape[-1]} != {self.d}"
            )
        vec = guidance.vector if isinstance(guidance, TextEmbedding) else np.asarray(guidance)
        if vec.shape[-1] != self.d_text:
            raise T.ContractViolation(
                f"adapter {self.modality}: guidance dim {vec.shape[-1]} != {self.d_text}"
            )
        if vec.ndim == 2:
            if raw.ndim != 3 or vec.shape[0] != raw.shape[0]:
                raise T.ContractViolation("adapter: per-sample guidance needs a (B, n, d) batch")
            vec = vec[:, None, :]
        g = np.broadcast_to(vec, raw.shape[:-1] + (self.d_text,))
        return self.mlp(T.concat_last_axis([raw, Tensor(g)]))


class PlainProjection(Module):
    """Prompt-free stand-in used when the adapter is ablated: a linear map d->d."""

    def __init__(self, modality: str, d: int, rng: np.random.Generator, prefix: str = "adapter"):
        self.modality = modality
        self.proj = Linear(d, d, f"{prefix}.{modality}.proj", rng)

    def __call__(self, raw: Tensor, guidance: TextEmbedding | None = None) -> Tensor:
        return self.proj(T.as_tensor(raw))


def adapter_forward(raw, guidance: TextEmbedding, adapter: Adapter) -> Tensor:
    return adapter(raw, guidance)
