"""Imputation and downstream metrics, the mean-imputation baseline, and the
cross-validation / ablation harnesses."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import BINARY, Dataset, DataError, split_folds
from .gain import VARIANTS, TrainConfig, impute_normalized, train
from .nn_core import AdamState, DenseLayer, MLP, adam_step, backward, forward, make_rng, sigmoid

REPORT_FORMAT = "gain-metrics"
REPORT_VERSION = 1


def derive_seed(base: int, *parts: int | str) -> int:
    """Sub-seed for one (variant, fold, ...) cell; identical whether cells run
    serially or in parallel."""
    return int(make_rng(base, "derive", *parts).integers(0, 2**63 - 1))


# -- metrics --------------------------------------------------------------------

def rmse_missing(ground_truth: np.ndarray, imputed: np.ndarray, mask: np.ndarray) -> float | None:
    """RMSE over cells with mask 0; None when nothing is missing."""
    ground_truth, imputed, mask = (np.asarray(a, dtype=np.float64) for a in (ground_truth, imputed, mask))
    if not ground_truth.shape == imputed.shape == mask.shape:
        raise ValueError("shape mismatch")
    miss = mask == 0
    if not miss.any():
        return None
    return float(np.sqrt(np.mean((imputed[miss] - ground_truth[miss]) ** 2)))


def auroc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Probability that a random positive outscores a random negative, ties
    counting one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def congeniality(w_complete: np.ndarray, w_imputed: np.ndarray) -> tuple[float, float]:
    a, b = np.asarray(w_complete, dtype=np.float64), np.asarray(w_imputed, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("weight vectors differ in length")
    diff = a - b
    return float(np.abs(diff).sum()), float(np.sqrt((diff * diff).sum()))


def mean_impute(ds: Dataset, reference: Dataset | None = None) -> Dataset:
    """Fill missing continuous cells with the observed column mean and binary
    cells with the observed majority; statistics come from ``reference``
    (default ``ds`` itself)."""
    ref = reference if reference is not None else ds
    fill = np.zeros(ds.d)
    for j, f in enumerate(ds.features):
        obs = ref.values[ref.mask[:, j] == 1, j]
        if obs.size == 0:
            raise DataError(f"feature {f.name!r} has no observed cells")
        fill[j] = float(obs.mean() >= 0.5) if f.kind == BINARY else obs.mean()
    values = np.where(ds.mask == 1, ds.values, fill)
    return replace(ds, values=values, mask=np.ones_like(ds.mask), ground_truth=None)


# -- logistic regression -------------------------------------------------------------

@dataclass(frozen=True)
class LogisticConfig:
    learning_rate: float = 0.05
    max_iter: int = 3000
    tol: float = 1e-10
    ridge: float = 0.0


@dataclass(frozen=True)
class LogisticFit:
    weights: np.ndarray
    bias: float
    iterations: int

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return sigmoid(np.asarray(features) @ self.weights + self.bias)


def train_logistic(features: np.ndarray, labels: np.ndarray, config: LogisticConfig = LogisticConfig()) -> LogisticFit:
    """Single sigmoid unit fitted by full-batch Adam on mean cross-entropy,
    starting from zero weights; stops when the loss change drops below
    ``config.tol`` or after ``max_iter`` steps."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be (n, d) with one label per row")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    if y.min() == y.max():
        raise ValueError("labels contain a single class")
    n, d = x.shape
    # the unit's logit comes from an identity layer so the gradient is (p - y) / n
    net = MLP((DenseLayer(np.zeros((d, 1)), np.zeros(1), "identity"),))
    state = AdamState.zeros_like(net)
    prev = math.inf
    it = 0
    for it in range(1, config.max_iter + 1):
        trace = forward(net, x)
        p = sigmoid(trace.output)
        pc = np.clip(p, 1e-12, 1 - 1e-12)
        w = net.layers[0].weights
        loss = float(-np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc))) + 0.5 * config.ridge * float((w * w).sum())
        grads, _ = backward(net, trace, (p - y) / n)
        grads[0] = grads[0] + config.ridge * w
        net, state = adam_step(net, grads, state, config.learning_rate)
        if abs(prev - loss) < config.tol:
            break
        prev = loss
    layer = net.layers[0]
    return LogisticFit(layer.weights[:, 0].copy(), float(layer.bias[0]), it)


# -- reports ----------------------------------------------------------------------

@dataclass
class MetricsReport:
    rmse_missing: float | None = None
    rmse_std: float | None = None
    rmse_mean_baseline: float | None = None
    auroc: float | None = None
    auroc_mean_baseline: float | None = None
    congeniality_l1: float | None = None
    congeniality_l2: float | None = None
    congeniality_mean_baseline_l1: float | None = None
    congeniality_mean_baseline_l2: float | None = None
    # variant -> list of per-seed rmse values
    per_variant: dict[str, list[float]] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    _SCALARS = ("rmse_missing", "rmse_std", "rmse_mean_baseline", "auroc", "auroc_mean_baseline",
                "congeniality_l1", "congeniality_l2", "congeniality_mean_baseline_l1",
                "congeniality_mean_baseline_l2")

    def __post_init__(self):
        if self.rmse_missing is not None and self.rmse_missing < 0:
            raise ValueError("rmse must be non-negative")
        for a in (self.auroc, self.auroc_mean_baseline):
            if a is not None and not 0.0 <= a <= 1.0:
                raise ValueError("auroc must lie in [0, 1]")

    def variant_stats(self) -> dict[str, tuple[float, float]]:
        return {v: (float(np.mean(r)), float(np.std(r))) for v, r in self.per_variant.items()}

    def to_text(self) -> str:
        lines = [f"format = {REPORT_FORMAT}", f"version = {REPORT_VERSION}"]
        for key in self._SCALARS:
            val = getattr(self, key)
            lines.append(f"{key} = {'' if val is None else repr(val)}")
        for v, runs in self.per_variant.items():
            mean, std = float(np.mean(runs)), float(np.std(runs))
            lines.append(f"variant.{v}.rmse_mean = {mean!r}")
            lines.append(f"variant.{v}.rmse_std = {std!r}")
            lines.append(f"variant.{v}.rmse_runs = {','.join(repr(float(r)) for r in runs)}")
        for k in sorted(self.metadata):
            lines.append(f"meta.{k} = {self.metadata[k]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        kv = {}
        for line in text.splitlines():
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            k, _, v = line.partition("=")
            kv[k.strip()] = v.strip()
        if kv.get("format") != REPORT_FORMAT or kv.get("version") != str(REPORT_VERSION):
            raise ValueError("not a metrics report (or unsupported version)")
        rep = cls()
        for key in cls._SCALARS:
            if kv.get(key):
                setattr(rep, key, float(kv[key]))
        for k, v in kv.items():
            if k.startswith("variant.") and k.endswith(".rmse_runs"):
                rep.per_variant[k[len("variant."):-len(".rmse_runs")]] = [float(x) for x in v.split(",") if x]
            elif k.startswith("meta."):
                rep.metadata[k[5:]] = v
        return rep

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def table(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.4f}"

        rows = [("metric", "GAIN", "mean-impute")]
        if self.rmse_missing is not None or self.rmse_mean_baseline is not None:
            gain = fmt(self.rmse_missing) + ("" if self.rmse_std is None else f" ± {self.rmse_std:.4f}")
            rows.append(("RMSE (missing cells)", gain, fmt(self.rmse_mean_baseline)))
        if self.auroc is not None:
            rows.append(("AUROC", fmt(self.auroc), fmt(self.auroc_mean_baseline)))
        if self.congeniality_l1 is not None:
            rows.append(("||w - w_hat||_1", fmt(self.congeniality_l1), fmt(self.congeniality_mean_baseline_l1)))
            rows.append(("||w - w_hat||_2", fmt(self.congeniality_l2), fmt(self.congeniality_mean_baseline_l2)))
        for v, (mean, std) in self.variant_stats().items():
            rows.append((f"ablation: {v}", f"{mean:.4f} ± {std:.4f}", ""))
        if len(rows) == 1:
            return "(empty report)"
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


# -- harnesses ----------------------------------------------------------------------

@dataclass
class FoldResult:
    rmse_gain: float | None
    rmse_mean: float | None
    auroc_gain: float | None = None
    auroc_mean: float | None = None


def _need_truth(ds: Dataset) -> None:
    if ds.ground_truth is None:
        raise DataError("evaluation needs ground truth for the masked cells")


def _filled(ds: Dataset, values: np.ndarray) -> np.ndarray:
    # binary columns go to the classifier as hard 0/1 values
    return np.where(ds.binary, (values >= 0.5).astype(np.float64), values)


def cross_validate(ds: Dataset, config: TrainConfig, folds: int = 5, seed: int = 0,
                   labels: np.ndarray | None = None, logistic: LogisticConfig = LogisticConfig(),
                   variant_index: int = 0) -> list[FoldResult]:
    """Train GAIN on each training split, impute the held-out rows (one
    draw), and score RMSE against ground truth. With ``labels`` also fit
    logistic regression on the imputed training rows and report held-out
    AUROC. Mean imputation runs alongside on identical splits."""
    _need_truth(ds)
    splits = split_folds(ds, folds, make_rng(seed, "folds"))
    out = []
    for f, (tr, te) in enumerate(splits):
        train_ds, test_ds = ds.subset(tr), ds.subset(te)
        cfg = replace(config, seed=derive_seed(seed, variant_index, f))
        model = train(train_ds, cfg)
        rng = make_rng(cfg.seed, "impute")
        imp_te = impute_normalized(model, test_ds, rng)
        base_te = mean_impute(test_ds, reference=train_ds).values
        res = FoldResult(rmse_missing(test_ds.ground_truth, imp_te, test_ds.mask),
                         rmse_missing(test_ds.ground_truth, base_te, test_ds.mask))
        if labels is not None:
            y_tr, y_te = labels[tr], labels[te]
            imp_tr = impute_normalized(model, train_ds, rng)
            base_tr = mean_impute(train_ds).values
            fit = train_logistic(_filled(ds, imp_tr), y_tr, logistic)
            res.auroc_gain = auroc(fit.predict_proba(_filled(ds, imp_te)), y_te)
            fit = train_logistic(_filled(ds, base_tr), y_tr, logistic)
            res.auroc_mean = auroc(fit.predict_proba(_filled(ds, base_te)), y_te)
        out.append(res)
    return out


def _mean(xs: Iterable[float | None]) -> float | None:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def _per_seed(ds: Dataset | Sequence[Dataset], seeds: Sequence[int]) -> list[Dataset]:
    datasets = [ds] * len(seeds) if isinstance(ds, Dataset) else list(ds)
    if len(datasets) != len(seeds):
        raise ValueError("need one dataset per seed")
    return datasets


def evaluate(ds: Dataset | Sequence[Dataset], config: TrainConfig, seeds: Sequence[int] = (0,), folds: int = 5,
             labels: np.ndarray | None = None, logistic: LogisticConfig = LogisticConfig(),
             congeniality_logistic: LogisticConfig | None = None) -> MetricsReport:
    """Cross-validated GAIN vs mean imputation averaged over ``seeds``.

    ``ds`` is one masked dataset or one per seed. With ``labels`` the report
    also carries held-out AUROC and, when ``congeniality_logistic`` is set,
    weight-congeniality norms.
    """
    t0 = time.perf_counter()
    datasets = _per_seed(ds, seeds)
    per_seed_rmse, all_folds, cong = [], [], []
    for d_, s in zip(datasets, seeds):
        res = cross_validate(d_, config, folds, s, labels, logistic)
        all_folds += res
        per_seed_rmse.append(_mean(r.rmse_gain for r in res))
        if labels is not None and congeniality_logistic is not None:
            cong.append(congeniality_run(d_, labels, config, s, congeniality_logistic))
    valid = [r for r in per_seed_rmse if r is not None]
    rep = MetricsReport(
        rmse_missing=_mean(valid),
        rmse_std=float(np.std(valid)) if valid else None,
        rmse_mean_baseline=_mean(r.rmse_mean for r in all_folds),
        auroc=_mean(r.auroc_gain for r in all_folds),
        auroc_mean_baseline=_mean(r.auroc_mean for r in all_folds),
    )
    if cong:
        rep.congeniality_l1 = _mean(c.gain[0] for c in cong)
        rep.congeniality_l2 = _mean(c.gain[1] for c in cong)
        rep.congeniality_mean_baseline_l1 = _mean(c.mean[0] for c in cong)
        rep.congeniality_mean_baseline_l2 = _mean(c.mean[1] for c in cong)
    rep.metadata.update(run_metadata(config, seeds, time.perf_counter() - t0, folds=folds))
    return rep


def run_metadata(config: TrainConfig, seeds: Sequence[int], wall: float, **extra) -> dict[str, str]:
    meta = {f"config.{k}": str(v) for k, v in config.to_dict().items()}
    meta["seeds"] = ",".join(str(s) for s in seeds)
    meta["wall_time_s"] = f"{wall:.1f}"
    meta.update({k: str(v) for k, v in extra.items()})
    return meta


def ablation_rmse(ds: Dataset, config: TrainConfig, seed: int, variant: str) -> float:
    """Train one variant on all rows of ``ds`` and score its imputations."""
    _need_truth(ds)
    vi = VARIANTS.index(variant)
    cfg = replace(config, variant=variant, seed=derive_seed(seed, vi, 0))
    model = train(ds, cfg)
    imputed = impute_normalized(model, ds, make_rng(cfg.seed, "impute"))
    return rmse_missing(ds.ground_truth, imputed, ds.mask)


def run_ablation(ds: Dataset | Sequence[Dataset], base_config: TrainConfig, seeds: Sequence[int],
                 variants: Sequence[str] = VARIANTS) -> MetricsReport:
    """RMSE of each ablation variant per seed. ``ds`` may be one masked
    dataset or one per seed (so the mask varies with the seed)."""
    t0 = time.perf_counter()
    datasets = _per_seed(ds, seeds)
    per = {v: [ablation_rmse(d_, base_config, s, v) for d_, s in zip(datasets, seeds)] for v in variants}
    rep = MetricsReport(per_variant=per)
    if "full" in per:
        rep.rmse_missing = float(np.mean(per["full"]))
        rep.rmse_std = float(np.std(per["full"]))
    rep.rmse_mean_baseline = float(np.mean([rmse_missing(d_.ground_truth, mean_impute(d_).values, d_.mask)
                                            for d_ in datasets]))
    rep.metadata.update(run_metadata(base_config, seeds, time.perf_counter() - t0))
    return rep


@dataclass
class CongenialityResult:
    gain: tuple[float, float]
    mean: tuple[float, float]


def congeniality_run(ds: Dataset, labels: np.ndarray, config: TrainConfig, seed: int,
                     logistic: LogisticConfig = LogisticConfig()) -> CongenialityResult:
    """Compare logistic weights fitted on the ground-truth features with
    weights fitted after GAIN and after mean imputation."""
    _need_truth(ds)
    w_true = train_logistic(ds.ground_truth, labels, logistic).weights
    cfg = replace(config, seed=derive_seed(seed, "congeniality"))
    model = train(ds, cfg)
    imp = _filled(ds, impute_normalized(model, ds, make_rng(cfg.seed, "impute")))
    w_gain = train_logistic(imp, labels, logistic).weights
    w_mean = train_logistic(mean_impute(ds).values, labels, logistic).weights
    return CongenialityResult(congeniality(w_true, w_gain), congeniality(w_true, w_mean))
