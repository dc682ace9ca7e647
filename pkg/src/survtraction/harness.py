"""Cross-validated training, evaluation and the gradient self-check."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .cohort import (MODALITIES, Cohort, CohortError, CohortSample, SurvivalLabel, apply_bins,
                     assign_time_bins, cap_patches, compute_bin_edges, kfold_split, load_cohort,
                     stable_seed)
from .config import RunConfig
from .metrics import KMCurve, LogRankResult, c_index, km_estimate, log_rank, median_split
from .model import GuidanceBank, SurvivalModel, collate
from .plot import emit_km_svg

log = logging.getLogger(__name__)

GRADCHECK_THRESHOLD = 1e-3
EVAL_BATCH = 64


class TrainingDiverged(T.NumericFault):
    pass


@dataclass
class FoldResult:
    fold: int
    c_index: float
    test_ids: list[str]
    train_ids: list[str]
    risks: np.ndarray
    times: np.ndarray
    censorship: np.ndarray
    bin_edges: np.ndarray
    km_high: KMCurve | None = None
    km_low: KMCurve | None = None
    logrank: LogRankResult | None = None
    losses: list[dict] = field(default_factory=list)
    state: dict[str, np.ndarray] = field(default_factory=dict)

    def summary(self) -> dict:
        high = median_split(self.risks)
        return {
            "fold": self.fold,
            "c_index": self.c_index,
            "n_train": len(self.train_ids),
            "n_test": len(self.test_ids),
            "n_high": int(high.sum()),
            "n_low": int((~high).sum()),
            "logrank_statistic": None if self.logrank is None else self.logrank.statistic,
            "logrank_p": None if self.logrank is None else self.logrank.p_value,
            "bin_edges": [float(e) for e in self.bin_edges],
            "final_epoch_loss": self.losses[-1] if self.losses else None,
        }


@dataclass
class CVReport:
    config: RunConfig
    folds: list[FoldResult]

    @property
    def c_indices(self) -> np.ndarray:
        return np.array([f.c_index for f in self.folds])

    @property
    def mean(self) -> float:
        return float(self.c_indices.mean())

    @property
    def std(self) -> float:
        return float(self.c_indices.std())

    def to_dict(self) -> dict:
        return {
            "c_index_mean": self.mean,
            "c_index_std": self.std,
            "folds": [f.summary() for f in self.folds],
            "config": self.config.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def build_model(cfg: RunConfig, d: int, seed: int, max_len: int = 64) -> SurvivalModel:
    return SurvivalModel(
        d,
        seed=seed,
        d_text=cfg.d_text,
        use_adapter=cfg.use_adapter,
        use_amt=cfg.use_amt,
        use_mi=cfg.use_mi and cfg.lam > 0,
        inter_modalities=cfg.enabled_modalities,
        max_len=max_len,
        n_bins=cfg.n_bins,
    )


def _max_len(cohort: Cohort, cfg: RunConfig) -> int:
    longest = max(sum(s.chains[m].shape[0] for m in cfg.enabled_modalities) for s in cohort)
    return max(64, longest)


def train_model(cfg: RunConfig, train: Cohort, guidance: GuidanceBank, seed: int,
                max_len: int = 64) -> tuple[SurvivalModel, list[dict]]:
    """Fit one model with AdamW on ``train`` (labels must carry time bins)."""
    model = build_model(cfg, train.dim, stable_seed(seed, "init"), max_len)
    params = model.parameters()
    history = []
    n = len(train)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(stable_seed(seed, "shuffle", epoch)).permutation(n)
        sums = {"surv": 0.0, "rec": 0.0, "mi": 0.0, "total": 0.0}
        n_steps = 0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            batch = collate([train.samples[i] for i in order[start:start + cfg.batch_size]])
            T.zero_grad(params)
            loss, parts = model.loss(batch, guidance, cfg.lam,
                                     mi_seed=stable_seed(seed, "mi", epoch, step),
                                     eq1_literal=cfg.eq1_literal)
            if not np.isfinite(parts["total"]):
                raise TrainingDiverged("train", f"non-finite loss at epoch {epoch} step {step}: {parts}")
            if not loss.requires_grad:
                break  # eq1_literal with no censored samples leaves nothing to optimize
            T.backward(loss)
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            T.adamw_step(params, cfg.lr, cfg.weight_decay)
            for k in sums:
                sums[k] += parts[k]
            n_steps += 1
        history.append({k: v / max(n_steps, 1) for k, v in sums.items()})
        log.debug("epoch %d: %s", epoch, history[-1])
    return model, history


def predict_risk(model: SurvivalModel, cohort: Cohort, guidance: GuidanceBank) -> np.ndarray:
    """Risk score (negative summed survival) per sample, in cohort order."""
    out = []
    for start in range(0, len(cohort), EVAL_BATCH):
        batch = collate(cohort.samples[start:start + EVAL_BATCH])
        res = model.forward(batch, guidance, with_aux=False)
        out.append(-res.hazards.survival.data.sum(axis=-1))
    return np.concatenate(out)


def stratify(risks, times, censorship) -> tuple[KMCurve | None, KMCurve | None, LogRankResult | None]:
    """Median split into high/low risk; KM per group and the log-rank test."""
    risks, times, censorship = map(np.asarray, (risks, times, censorship))
    high = median_split(risks)
    if high.all() or (~high).all():
        return None, None, None
    km_high = km_estimate(times[high], censorship[high])
    km_low = km_estimate(times[~high], censorship[~high])
    try:
        lr = log_rank(times[high], censorship[high], times[~high], censorship[~high])
    except ValueError:
        lr = None
    return km_high, km_low, lr


def prepare_cohort(cfg: RunConfig, cohort: Cohort | None = None) -> Cohort:
    if cohort is None:
        if not cfg.cohort:
            raise CohortError("no cohort given")
        cohort = load_cohort(cfg.cohort, cfg.n_gene, cfg.n_meth)
    if len(cohort) == 0:
        raise CohortError("empty cohort")
    if cohort.n_gene != cfg.n_gene or cohort.n_meth != cfg.n_meth:
        raise CohortError(
            f"cohort chain lengths ({cohort.n_gene}, {cohort.n_meth}) "
            f"differ from config ({cfg.n_gene}, {cfg.n_meth})"
        )
    return cap_patches(cohort, cfg.k_patches, cfg.seed)


def run_cv(cfg: RunConfig, cohort: Cohort | None = None, out_dir: str | Path | None = None) -> CVReport:
    """k-fold cross-validation. Bin edges are fitted on each training split only."""
    cfg.validate()
    cohort = prepare_cohort(cfg, cohort)
    split = kfold_split(len(cohort), cfg.folds, cfg.seed, cohort.ids)
    guidance = GuidanceBank(cfg.d_text or cohort.dim, seed=cfg.seed,
                            vanilla_only=cfg.vanilla_prompt_only, templates=cfg.templates,
                            embedding_dir=cfg.text_embedding_dir)
    max_len = _max_len(cohort, cfg)
    folds = []
    for k in range(cfg.folds):
        train_idx, test_idx = split.fold_indices(cohort.ids, k)
        train = cohort.subset(train_idx)
        test = cohort.subset(test_idx)
        edges = compute_bin_edges(train.times, train.censorship, cfg.n_bins)
        train = assign_time_bins(train, edges=edges)
        test = assign_time_bins(test, edges=edges)
        try:
            model, history = train_model(cfg, train, guidance, stable_seed(cfg.seed, "fold", k),
                                         max_len)
        except T.NumericFault as exc:
            raise TrainingDiverged("train", f"fold {k}: {exc}") from exc
        risks = predict_risk(model, test, guidance)
        if not np.all(np.isfinite(risks)):
            raise TrainingDiverged("predict", f"fold {k}: non-finite risk scores")
        km_high, km_low, lr = stratify(risks, test.times, test.censorship)
        folds.append(FoldResult(
            fold=k,
            c_index=c_index(risks, test.times, test.censorship),
            test_ids=test.ids,
            train_ids=train.ids,
            risks=risks,
            times=test.times,
            censorship=test.censorship,
            bin_edges=edges,
            km_high=km_high,
            km_low=km_low,
            logrank=lr,
            losses=history,
            state=model.state_dict(),
        ))
        log.info("fold %d: c-index %.4f", k, folds[-1].c_index)
    report = CVReport(cfg, folds)
    if out_dir is not None:
        write_outputs(report, out_dir)
    return report


def write_fold_csv(fold: FoldResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "risk", "time", "censorship"])
        for row in zip(fold.test_ids, fold.risks, fold.times, fold.censorship):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), int(row[3])])


def read_fold_csv(path: str | Path) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise CohortError(f"{path}: no rows")
    return ([r["id"] for r in rows], np.array([float(r["risk"]) for r in rows]),
            np.array([float(r["time"]) for r in rows]),
            np.array([int(r["censorship"]) for r in rows]))


def write_outputs(report: CVReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    edges = {f"fold_{f.fold}": [float(e) for e in f.bin_edges] for f in report.folds}
    (out / "bin_edges.json").write_text(json.dumps(edges, indent=2, sort_keys=True) + "\n")
    for f in report.folds:
        write_fold_csv(f, out / f"fold_{f.fold}.csv")
        np.savez(out / f"params_fold_{f.fold}.npz", **f.state)
        if f.km_high is not None:
            emit_km_svg({"high": f.km_high, "low": f.km_low},
                        None if f.logrank is None else f.logrank.p_value,
                        out / f"km_fold_{f.fold}.svg", title=f"Fold {f.fold}")


def evaluate_dir(out_dir: str | Path) -> dict:
    """Recompute metrics from the per-fold CSVs of a finished run."""
    out = Path(out_dir)
    paths = sorted(out.glob("fold_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise CohortError(f"no fold_*.csv files in {out}")
    folds = []
    for p in paths:
        _, risks, times, cens = read_fold_csv(p)
        _, _, lr = stratify(risks, times, cens)
        folds.append({
            "fold": int(p.stem.split("_")[1]),
            "c_index": c_index(risks, times, cens),
            "logrank_p": None if lr is None else lr.p_value,
        })
    cis = np.array([f["c_index"] for f in folds])
    return {"c_index_mean": float(cis.mean()), "c_index_std": float(cis.std()), "folds": folds}


# ---------------------------------------------------------------------------
# gradient self-check

TOY_LENGTHS = {"gene": 3, "meth": 3, "path_local": 4, "path_global": 1}


def toy_batch(d: int = 8, n: int = 3, seed: int = 0, lengths: dict[str, int] | None = None):
    """Small random batch with every bin/censoring combination represented."""
    rng = np.random.default_rng(seed)
    lengths = lengths or TOY_LENGTHS
    samples = []
    for i in range(n):
        chains = {m: rng.standard_normal((lengths[m], d)) for m in MODALITIES}
        label = SurvivalLabel(time=1.0 + i, censorship=i % 2, time_bin=i % 4)
        samples.append(CohortSample(f"toy{i}", "BRCA", chains, label))
    return collate(samples)


def gradcheck(seed: int = 0, d: int = 8, lam: float = 0.3, step: float = 1e-5,
              corrupt: float = 0.0) -> float:
    """Max relative error of reverse-mode vs central differences on the full
    objective of a d=8 toy model with every branch and loss enabled."""
    prev = T.CHECK_FINITE
    T.CHECK_FINITE = True
    try:
        batch = toy_batch(d, seed=seed)
        model = SurvivalModel(d, seed=stable_seed(seed, "gradcheck"), max_len=16)
        guidance = GuidanceBank(d, seed=seed)
        mi_seed = stable_seed(seed, "gradcheck-mi")
        return T.grad_check_params(
            lambda: model.loss(batch, guidance, lam, mi_seed=mi_seed)[0],
            model.parameters(), step, corrupt=corrupt,
        )
    finally:
        T.CHECK_FINITE = prev


__all__ = [
    "CVReport", "FoldResult", "TrainingDiverged", "apply_bins", "build_model", "evaluate_dir",
    "gradcheck", "predict_risk", "run_cv", "stratify", "train_model", "write_outputs",
]
