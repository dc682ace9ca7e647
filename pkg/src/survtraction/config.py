"""Run configuration and the flat ``key = value`` config file format.

Example file::

    # lines starting with '#' are comments
    cohort = data/manifest.csv
    lambda = 0.3
    epochs = 20
    enabled_modalities = gene, meth, path_local, path_global
    loss.eq1_literal = false
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .cohort import MODALITIES


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    cohort: str | None = None
    n_gene: int = 6
    n_meth: int = 8
    k_patches: int = 16
    n_bins: int = 4
    lam: float = 0.3
    lr: float = 1e-4
    weight_decay: float = 1e-2
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    folds: int = 5
    use_adapter: bool = True
    use_amt: bool = True
    use_mi: bool = True
    vanilla_prompt_only: bool = False
    enabled_modalities: tuple[str, ...] = MODALITIES
    eq1_literal: bool = False
    d_text: int | None = None
    templates: str | None = None
    text_embedding_dir: str | None = None

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.folds < 2 or self.n_bins < 2:
            raise ConfigError("epochs >= 0, batch_size >= 1, folds >= 2 and n_bins >= 2 required")
        if self.k_patches < 1:
            raise ConfigError("k_patches must be positive")
        bad = set(self.enabled_modalities) - set(MODALITIES)
        if bad:
            raise ConfigError(f"unknown modalities {sorted(bad)}")
        if self.use_amt and not self.enabled_modalities:
            raise ConfigError("enabled_modalities is empty")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["enabled_modalities"] = list(self.enabled_modalities)
        return out


ALIASES = {
    "lambda": "lam",
    "loss.eq1_literal": "eq1_literal",
    "n_g": "n_gene",
    "n_m": "n_meth",
    "k": "folds",
}

# Ablation presets and single toggles, usable as --ablation values.
ABLATIONS = {
    "no_adapter": {"use_adapter": False},
    "no_amt": {"use_amt": False},
    "no_mi": {"use_mi": False},
    "vanilla_prompt": {"vanilla_prompt_only": True},
    "eq1_literal": {"eq1_literal": True},
    "only_intra": {"use_amt": False},
    "basic": {"enabled_modalities": ("path_local", "path_global")},
    "m1": {"enabled_modalities": ("gene", "path_local", "path_global"), "use_adapter": False},
    "m2": {"enabled_modalities": ("gene", "path_local", "path_global")},
    "m3": {"enabled_modalities": ("meth", "path_local", "path_global"), "use_adapter": False},
    "m4": {"enabled_modalities": ("meth", "path_local", "path_global")},
    "m5": {"vanilla_prompt_only": True},
    "full": {},
}


def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(RunConfig)}[name]
    raw = raw.strip()
    try:
        if name == "enabled_modalities":
            return tuple(m.strip() for m in raw.replace("+", ",").split(",") if m.strip())
        if ftype == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "int | None":
            return None if raw.lower() in ("", "none") else int(raw)
        return None if raw.lower() == "none" else raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def override(cfg: RunConfig, key: str, value) -> RunConfig:
    name = ALIASES.get(key, key).replace("-", "_")
    if name not in {f.name for f in fields(RunConfig)}:
        raise ConfigError(f"unknown config key {key!r}")
    if isinstance(value, str):
        value = _coerce(name, value)
    return dataclasses.replace(cfg, **{name: value})


def apply_ablations(cfg: RunConfig, flags: str | list[str]) -> RunConfig:
    if isinstance(flags, str):
        flags = [f for f in flags.split(",") if f.strip()]
    for flag in flags:
        flag = flag.strip()
        if flag not in ABLATIONS:
            raise ConfigError(f"unknown ablation {flag!r}; choose from {sorted(ABLATIONS)}")
        cfg = dataclasses.replace(cfg, **ABLATIONS[flag])
    return cfg


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        cfg = override(cfg, key.strip(), value)
    # relative cohort paths resolve against the config file's directory
    if cfg.cohort and not Path(cfg.cohort).is_absolute():
        cfg = dataclasses.replace(cfg, cohort=str(path.parent / cfg.cohort))
    return cfg


def write_config(cfg: RunConfig, path: str | Path) -> None:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ", ".join(v)
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

