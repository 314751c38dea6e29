"""Flat ``key = value`` run configuration with ``#`` comments."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .gain import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    ground_truth: str | None = None
    missing_token: str = ""
    label_column: str | None = None
    mcar_rate: float = 0.2
    exact_mcar: bool = False
    folds: int = 5
    n_draws: int = 1
    repeats: int = 3
    out_dir: str = "out"
    ridge: float = 0.0
    # Breast-like data is nearly separable; unpenalized weights never settle
    congeniality_ridge: float = 1e-3
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            if f.name == "train":
                continue
            v = getattr(self, f.name)
            out.append(f"{f.name} = {'' if v is None else _fmt(v)}")
        for k, v in self.train.to_dict().items():
            out.append(f"{k} = {'' if v is None else _fmt(v)}")
        return out


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else str(v)


_RUN_TYPES = {f.name: f.type for f in fields(RunConfig) if f.name != "train"}
_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}
KNOWN_KEYS = set(_RUN_TYPES) | set(_TRAIN_TYPES)


def _coerce(key: str, raw: str, typ: str):
    raw = raw.strip()
    try:
        if key == "hidden":
            return None if raw in ("", "auto") else tuple(int(x) for x in raw.split(","))
        if "None" in typ and raw == "":
            return None
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
        if typ.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_pairs(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    unknown = set(pairs) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = base or RunConfig()
    run_kw = {k: getattr(cfg, k) for k in _RUN_TYPES}
    train_kw = cfg.train.to_dict()
    for k, v in pairs.items():
        if k in _RUN_TYPES:
            run_kw[k] = _coerce(k, v, str(_RUN_TYPES[k]))
        else:
            train_kw[k] = _coerce(k, v, str(_TRAIN_TYPES[k]))
    try:
        return RunConfig(**run_kw, train=TrainConfig.from_dict(train_kw))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def read_pairs(text: str, where: str = "<config>") -> dict[str, str]:
    pairs = {}
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{i}: expected key = value")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read ``path`` (if given) and then apply ``overrides``; both are
    validated against the known keys."""
    pairs = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        pairs = read_pairs(text, str(path))
    pairs.update(overrides or {})
    return parse_pairs(pairs)
