"""Cohort storage, time binning and cross-validation splits.

Censorship convention: ``censorship == 1`` means the event was NOT observed
(the patient is censored); ``censorship == 0`` means death was observed.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MODALITIES = ("gene", "meth", "path_local", "path_global")
MAGIC = b"F32T"
MANIFEST_COLUMNS = (
    "id", "cancer_type", "time", "censorship",
    "gene_file", "meth_file", "path_local_file", "path_global_file",
)
N_GENE = 6
N_METH = 8


class CohortError(ValueError):
    """Invalid cohort data or manifest."""


@dataclass
class SurvivalLabel:
    time: float
    censorship: int
    time_bin: int | None = None

    def __post_init__(self):
        if not self.time > 0:
            raise CohortError(f"survival time must be positive, got {self.time}")
        if self.censorship not in (0, 1):
            raise CohortError(f"censorship must be 0 or 1, got {self.censorship}")


@dataclass
class CohortSample:
    id: str
    cancer_type: str
    chains: dict[str, np.ndarray]
    label: SurvivalLabel


@dataclass
class Cohort:
    samples: list[CohortSample]
    bin_edges: np.ndarray | None = None
    n_gene: int = N_GENE
    n_meth: int = N_METH

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def dim(self) -> int:
        return self.samples[0].chains["gene"].shape[1]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.label.time for s in self.samples], dtype=np.float64)

    @property
    def censorship(self) -> np.ndarray:
        return np.array([s.label.censorship for s in self.samples], dtype=np.int64)

    @property
    def time_bins(self) -> np.ndarray:
        bins = [s.label.time_bin for s in self.samples]
        if any(b is None for b in bins):
            raise CohortError("time bins have not been assigned")
        return np.array(bins, dtype=np.int64)

    def subset(self, indices: Iterable[int]) -> "Cohort":
        return dataclasses.replace(self, samples=[self.samples[i] for i in indices])


@dataclass
class FoldSplit:
    k: int
    seed: int
    assignments: dict[str, int] = field(default_factory=dict)

    def fold_indices(self, ids: Sequence[str], fold: int) -> tuple[list[int], list[int]]:
        """(train, test) positional indices of ``ids`` for one fold."""
        train = [i for i, sid in enumerate(ids) if self.assignments[sid] != fold]
        test = [i for i, sid in enumerate(ids) if self.assignments[sid] == fold]
        return train, test


def validate_sample(sample: CohortSample, n_gene: int = N_GENE, n_meth: int = N_METH,
                    dim: int | None = None) -> int:
    """Check chain invariants; returns the token dimension."""
    sid = sample.id
    missing = [m for m in MODALITIES if m not in sample.chains]
    if missing:
        raise CohortError(f"sample {sid}: missing chains {missing}")
    expected = {"gene": n_gene, "meth": n_meth, "path_global": 1}
    for mod in MODALITIES:
        arr = sample.chains[mod]
        if arr.ndim != 2:
            raise CohortError(f"sample {sid}: {mod} chain must be 2-D, got shape {arr.shape}")
        if mod in expected and arr.shape[0] != expected[mod]:
            raise CohortError(
                f"sample {sid}: {mod} chain has {arr.shape[0]} tokens, expected {expected[mod]}"
            )
        if arr.shape[0] < 1:
            raise CohortError(f"sample {sid}: {mod} chain is empty")
        if dim is None:
            dim = arr.shape[1]
        elif arr.shape[1] != dim:
            raise CohortError(
                f"sample {sid}: {mod} chain has dimension {arr.shape[1]}, expected {dim}"
            )
        if not np.all(np.isfinite(arr)):
            raise CohortError(f"sample {sid}: {mod} chain contains non-finite values")
    return dim


# ---------------------------------------------------------------------------
# binary feature files


def write_f32t(path: str | Path, tokens: np.ndarray) -> None:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise CohortError(f"{path}: feature matrix must be 2-D, got shape {tokens.shape}")
    n, d = tokens.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(np.ascontiguousarray(tokens, dtype="<f4").tobytes())


def read_f32t(path: str | Path) -> np.ndarray:
    """Read a feature file, widening to float64."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CohortError(f"{path}: bad magic bytes")
    n, d = struct.unpack("<II", raw[4:12])
    body = raw[12:]
    if len(body) != 4 * n * d:
        raise CohortError(f"{path}: expected {n}x{d} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(n, d)


# ---------------------------------------------------------------------------
# manifests


def load_cohort(manifest_path: str | Path, n_gene: int = N_GENE, n_meth: int = N_METH) -> Cohort:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise CohortError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        if header and header != MANIFEST_COLUMNS:
            raise CohortError(f"{manifest_path}: header must be {','.join(MANIFEST_COLUMNS)}")
        rows = list(reader)
    if not rows:
        raise CohortError("empty cohort")

    samples = []
    dim = None
    seen = set()
    for row in rows:
        sid = row["id"]
        if sid in seen:
            raise CohortError(f"sample {sid}: duplicate id")
        seen.add(sid)
        chains = {}
        for mod in MODALITIES:
            path = root / row[f"{mod}_file"]
            if not path.exists():
                raise CohortError(f"sample {sid}: missing file {path}")
            try:
                chains[mod] = read_f32t(path)
            except CohortError as exc:
                raise CohortError(f"sample {sid}: {exc}") from None
        try:
            label = SurvivalLabel(time=float(row["time"]), censorship=int(row["censorship"]))
        except (CohortError, ValueError) as exc:
            raise CohortError(f"sample {sid}: {exc}") from None
        sample = CohortSample(id=sid, cancer_type=row["cancer_type"], chains=chains, label=label)
        dim = validate_sample(sample, n_gene, n_meth, dim)
        samples.append(sample)
    return Cohort(samples=samples, n_gene=n_gene, n_meth=n_meth)


def save_cohort(cohort: Cohort, out_dir: str | Path, manifest_name: str = "manifest.csv") -> Path:
    """Write the manifest plus one feature file per (sample, modality)."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / manifest_name
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for s in cohort.samples:
            files = []
            for mod in MODALITIES:
                rel = Path("features") / f"{s.id}_{mod}.f32t"
                write_f32t(out_dir / rel, s.chains[mod])
                files.append(rel.as_posix())
            writer.writerow([s.id, s.cancer_type, repr(float(s.label.time)),
                             s.label.censorship, *files])
    return manifest


# ---------------------------------------------------------------------------
# time bins


def compute_bin_edges(times, censorship, n_bins: int = 4) -> np.ndarray:
    """Quantile edges (``n_bins + 1`` values) of the uncensored event times."""
    if n_bins < 2:
        raise CohortError("n_bins must be at least 2")
    times = np.asarray(times, dtype=np.float64)
    events = times[np.asarray(censorship) == 0]
    if events.size < n_bins:
        raise CohortError(
            f"need at least {n_bins} uncensored samples to form bins, got {events.size}"
        )
    edges = np.quantile(events, np.linspace(0.0, 1.0, n_bins + 1))
    if np.any(np.diff(edges) <= 0):
        raise CohortError("degenerate bin edges")
    return edges


def apply_bins(times, edges: np.ndarray) -> np.ndarray:
    """Bin index per time: half-open ``[e_k, e_{k+1})`` intervals, last bin
    closed; times outside the edge range fall into the first/last bin."""
    inner = np.asarray(edges)[1:-1]
    return np.searchsorted(inner, np.asarray(times, dtype=np.float64), side="right")


def assign_time_bins(cohort: Cohort, n_bins: int = 4, edges: np.ndarray | None = None) -> Cohort:
    """Return a copy of ``cohort`` with ``time_bin`` set on every label.

    Edges default to quantiles of this cohort's uncensored times; pass
    ``edges`` to reuse edges fitted elsewhere (e.g. a training fold).
    """
    if edges is None:
        edges = compute_bin_edges(cohort.times, cohort.censorship, n_bins)
    bins = apply_bins(cohort.times, edges)
    samples = [
        dataclasses.replace(s, label=dataclasses.replace(s.label, time_bin=int(b)))
        for s, b in zip(cohort.samples, bins)
    ]
    return dataclasses.replace(cohort, samples=samples, bin_edges=np.asarray(edges))


def save_bin_edges(edges, path: str | Path) -> None:
    Path(path).write_text(json.dumps([float(e) for e in edges]) + "\n")


# ---------------------------------------------------------------------------
# folds and subsampling


def kfold_split(n: int, k: int = 5, seed: int = 0, ids: Sequence[str] | None = None) -> FoldSplit:
    if k < 2:
        raise CohortError("k must be at least 2")
    if n < k:
        raise CohortError(f"cannot split {n} samples into {k} folds")
    if ids is None:
        ids = [str(i) for i in range(n)]
    if len(ids) != n:
        raise CohortError("ids length does not match n")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    return FoldSplit(k=k, seed=seed, assignments={sid: int(f) for sid, f in zip(ids, folds)})


def stable_seed(*parts) -> int:
    """Process-independent integer seed from arbitrary printable parts."""
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def cap_patches(cohort: Cohort, k: int, seed: int) -> Cohort:
    """Limit every path_local chain to ``k`` tokens by uniform subsampling
    without replacement (order preserved), seeded per sample id."""
    if k < 1:
        raise CohortError("patch cap must be positive")
    samples = []
    for s in cohort.samples:
        local = s.chains["path_local"]
        if local.shape[0] > k:
            rng = np.random.default_rng(stable_seed(seed, s.id, "patches"))
            keep = np.sort(rng.choice(local.shape[0], size=k, replace=False))
            s = dataclasses.replace(s, chains={**s.chains, "path_local": local[keep]})
        samples.append(s)
    return dataclasses.replace(cohort, samples=samples)
