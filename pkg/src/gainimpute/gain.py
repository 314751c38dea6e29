"""Generative adversarial imputation: samplers, losses, training loop and
imputation front-end.

Row-level functions accept a single row or a batch (rows on axis 0); loss
functions return the total over all rows given.
"""
from __future__ import annotations

import base64
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import BINARY, Dataset, DataError, FeatureSpec, NormalizationParams, denormalize, normalize, raw_values
from .nn_core import MLP, AdamState, DenseLayer, adam_step, backward, build_mlp, forward, make_rng, sgd_step

log = logging.getLogger(__name__)

LOG_LO, LOG_HI = 1e-8, 1.0 - 1e-8
VARIANTS = ("full", "no_LG", "no_LM", "no_hint", "no_hint_no_LM")
MODEL_FORMAT = "gain-model"
MODEL_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, name: str, value: float):
        super().__init__(f"non-finite {name} ({value}) at iteration {iteration}")
        self.iteration = iteration
        self.name = name
        self.value = value


def _clog(p: np.ndarray) -> np.ndarray:
    return np.log(np.clip(p, LOG_LO, LOG_HI))


def _dclog(p: np.ndarray) -> np.ndarray:
    # derivative of the clamped log; zero where the clamp is active
    inside = (p >= LOG_LO) & (p <= LOG_HI)
    return np.where(inside, 1.0 / np.clip(p, LOG_LO, LOG_HI), 0.0)


# -- samplers -----------------------------------------------------------------

def sample_noise(m: np.ndarray, rng: np.random.Generator, noise_high: float = 0.01) -> np.ndarray:
    """(1 - m) * Z with Z ~ Uniform[0, noise_high]."""
    if not 0.0 < noise_high <= 1.0:
        raise ValueError("noise_high must lie in (0, 1]")
    m = np.asarray(m, dtype=np.float64)
    return (1.0 - m) * rng.uniform(0.0, noise_high, size=m.shape)


@dataclass(frozen=True)
class HintDraw:
    b: np.ndarray
    h: np.ndarray


def hint_from(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    return b * m + 0.5 * (1.0 - b)


def sample_hint(m: np.ndarray, rng: np.random.Generator) -> HintDraw:
    """Hide one uniformly chosen mask component per row: b has a single zero
    at that index and h = b*m + 0.5*(1 - b)."""
    m = np.asarray(m, dtype=np.float64)
    d = m.shape[-1]
    if d < 1:
        raise ValueError("need d >= 1")
    rows = m.reshape(-1, d)
    k = rng.integers(0, d, size=rows.shape[0])
    b = np.ones_like(rows)
    b[np.arange(rows.shape[0]), k] = 0.0
    b = b.reshape(m.shape)
    return HintDraw(b, hint_from(m, b))


# -- generator / discriminator --------------------------------------------------

def generator_input(values: np.ndarray, m: np.ndarray, z_masked: np.ndarray) -> np.ndarray:
    values, m, z_masked = (np.asarray(a, dtype=np.float64) for a in (values, m, z_masked))
    if not values.shape == m.shape == z_masked.shape:
        raise ValueError("values, mask and noise must share a shape")
    return np.concatenate([m * values + z_masked, m], axis=-1)


def generate(gen: MLP, values: np.ndarray, m: np.ndarray, z_masked: np.ndarray) -> np.ndarray:
    x = generator_input(values, m, z_masked)
    if x.shape[-1] != gen.in_dim or gen.out_dim * 2 != gen.in_dim:
        raise ValueError(f"generator expects 2d = {gen.in_dim} inputs, got {x.shape[-1]}")
    out = forward(gen, x).output
    return out[0] if x.ndim == 1 else out


def complete(values: np.ndarray, m: np.ndarray, x_bar: np.ndarray) -> np.ndarray:
    return m * values + (1.0 - m) * x_bar


def discriminate(disc: MLP, x_hat: np.ndarray, h: np.ndarray) -> np.ndarray:
    x = np.concatenate([x_hat, h], axis=-1)
    out = forward(disc, x).output
    return out[0] if x.ndim == 1 else out


# -- losses -------------------------------------------------------------------

def loss_d(m: np.ndarray, m_hat: np.ndarray, b: np.ndarray) -> float:
    """Cross-entropy of the discriminator on hidden-hint components only."""
    hidden = 1.0 - b
    return float(-np.sum(hidden * (m * _clog(m_hat) + (1.0 - m) * _clog(1.0 - m_hat))))


def loss_d_grad(m: np.ndarray, m_hat: np.ndarray, b: np.ndarray) -> np.ndarray:
    hidden = 1.0 - b
    return -hidden * (m * _dclog(m_hat) - (1.0 - m) * _dclog(1.0 - m_hat))


def loss_g_adv(m: np.ndarray, m_hat: np.ndarray, b: np.ndarray) -> float:
    return float(-np.sum((1.0 - b) * (1.0 - m) * _clog(m_hat)))


def loss_g_adv_grad(m: np.ndarray, m_hat: np.ndarray, b: np.ndarray) -> np.ndarray:
    return -(1.0 - b) * (1.0 - m) * _dclog(m_hat)


def _binary_flags(features: Sequence[FeatureSpec] | np.ndarray, d: int) -> np.ndarray:
    if isinstance(features, np.ndarray) and features.dtype == bool:
        return features
    flags = np.array([f.kind == BINARY for f in features], dtype=bool)
    if flags.shape != (d,):
        raise ValueError("one feature spec per column required")
    return flags


def loss_m(values: np.ndarray, x_bar: np.ndarray, m: np.ndarray, features) -> float:
    """Reconstruction loss on observed components: squared error for
    continuous features, -x log x' for binary ones."""
    binary = _binary_flags(features, np.shape(values)[-1])
    per = np.where(binary, -values * _clog(x_bar), (x_bar - values) ** 2)
    return float(np.sum(m * per))


def loss_m_grad(values: np.ndarray, x_bar: np.ndarray, m: np.ndarray, features) -> np.ndarray:
    binary = _binary_flags(features, np.shape(values)[-1])
    return m * np.where(binary, -values * _dclog(x_bar), 2.0 * (x_bar - values))


# -- configuration and model ------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    k_d: int = 128
    k_g: int = 128
    alpha: float = 10.0
    iterations: int = 10000
    learning_rate: float = 1e-3
    noise_high: float = 0.01
    hidden: tuple[int, ...] | None = None  # None -> two layers of max(ceil(d/2), 8)
    seed: int = 0
    variant: str = "full"
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.k_d < 1 or self.k_g < 1:
            raise ValueError("k_d and k_g must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.noise_high <= 1.0:
            raise ValueError("noise_high must lie in (0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.hidden is not None:
            object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def hidden_for(self, d: int) -> tuple[int, ...]:
        if self.hidden is not None:
            return self.hidden
        width = max(math.ceil(d / 2), 8)
        return (width, width)

    @property
    def uses_hint(self) -> bool:
        return self.variant not in ("no_hint", "no_hint_no_LM")

    @property
    def uses_lm(self) -> bool:
        return self.variant not in ("no_LM", "no_hint_no_LM")

    @property
    def uses_lg(self) -> bool:
        return self.variant != "no_LG"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = None if self.hidden is None else list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GainModel:
    generator: MLP
    discriminator: MLP
    config: TrainConfig
    features: tuple[FeatureSpec, ...]
    normalization: NormalizationParams
    # columns: d_loss, g_adv_loss, g_recon_loss
    history: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def d(self) -> int:
        return self.generator.out_dim


# -- training -----------------------------------------------------------------

def _step(net: MLP, grads, state: AdamState | None, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return sgd_step(net, grads, cfg.learning_rate), state
    return adam_step(net, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)


class _Streams:
    def __init__(self, seed: int):
        self.init = make_rng(seed, "init")
        self.batch = make_rng(seed, "batch")
        self.noise = make_rng(seed, "noise")
        self.hint = make_rng(seed, "hint")


def init_networks(d: int, config: TrainConfig, rng: np.random.Generator) -> tuple[MLP, MLP]:
    hidden = list(config.hidden_for(d))
    gen = build_mlp([2 * d, *hidden, d], rng)
    disc = build_mlp([2 * d, *hidden, d], rng)
    return gen, disc


def _batch(ds: Dataset, k: int, streams: _Streams, cfg: TrainConfig):
    idx = streams.batch.integers(0, ds.n, size=k)
    x, m = ds.values[idx], ds.mask[idx]
    z = sample_noise(m, streams.noise, cfg.noise_high)
    hint = sample_hint(m, streams.hint)
    if cfg.uses_hint:
        return x, m, z, hint.b, hint.h
    # no hint is B = 0: h is the constant 0.5 vector and every component is scored
    b = np.zeros_like(m)
    return x, m, z, b, hint_from(m, b)


def generator_step_grads(gen: MLP, disc: MLP, x, m, z, b, h, binary: np.ndarray, cfg: TrainConfig):
    """Losses and generator parameter gradients for one G update. Batch
    losses are averaged over rows."""
    k = x.shape[0]
    g_trace = forward(gen, generator_input(x, m, z))
    x_bar = g_trace.output
    x_hat = complete(x, m, x_bar)
    d_trace = forward(disc, np.concatenate([x_hat, h], axis=1))
    m_hat = d_trace.output
    g_adv = loss_g_adv(m, m_hat, b) / k
    g_rec = loss_m(x, x_bar, m, binary) / k
    grad_xbar = np.zeros_like(x_bar)
    if cfg.uses_lg:
        _, grad_in = backward(disc, d_trace, loss_g_adv_grad(m, m_hat, b) / k)
        grad_xbar += (1.0 - m) * grad_in[:, : x.shape[1]]
    if cfg.uses_lm and cfg.alpha > 0:
        grad_xbar += cfg.alpha * loss_m_grad(x, x_bar, m, binary) / k
    grads, _ = backward(gen, g_trace, grad_xbar)
    return g_adv, g_rec, grads


def discriminator_step_grads(gen: MLP, disc: MLP, x, m, z, b, h):
    k = x.shape[0]
    x_hat = complete(x, m, forward(gen, generator_input(x, m, z)).output)
    d_trace = forward(disc, np.concatenate([x_hat, h], axis=1))
    m_hat = d_trace.output
    grads, _ = backward(disc, d_trace, loss_d_grad(m, m_hat, b) / k)
    return loss_d(m, m_hat, b) / k, grads


def train(ds: Dataset, config: TrainConfig = TrainConfig(), log_every: int = 0) -> GainModel:
    """Alternate one discriminator and one generator update per iteration.

    ``ds`` must already be normalized; training is a pure function of
    ``ds`` and ``config`` (including the seed).
    """
    if ds.normalization is None:
        ds = normalize(ds)[0]
    if ds.d < 2:
        raise DataError("need at least two features")
    if not (ds.mask == 0).any() or not (ds.mask == 1).any():
        raise DataError("training data needs at least one missing and one observed cell")
    cfg = config
    streams = _Streams(cfg.seed)
    gen, disc = init_networks(ds.d, cfg, streams.init)
    g_state, d_state = AdamState.zeros_like(gen), AdamState.zeros_like(disc)
    binary = ds.binary
    k_d, k_g = min(cfg.k_d, ds.n), min(cfg.k_g, ds.n)
    history = np.zeros((cfg.iterations, 3))
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        x, m, z, b, h = _batch(ds, k_d, streams, cfg)
        d_loss, d_grads = discriminator_step_grads(gen, disc, x, m, z, b, h)
        disc, d_state = _step(disc, d_grads, d_state, cfg)

        x, m, z, b, h = _batch(ds, k_g, streams, cfg)
        g_adv, g_rec, g_grads = generator_step_grads(gen, disc, x, m, z, b, h, binary, cfg)
        gen, g_state = _step(gen, g_grads, g_state, cfg)

        history[it] = (d_loss, g_adv, g_rec)
        for name, v in zip(("d_loss", "g_adv_loss", "g_recon_loss"), history[it]):
            if not math.isfinite(v):
                raise TrainingDiverged(it, name, v)
        if log_every and (it + 1) % log_every == 0:
            log.info("iter %d  d=%.4f  g_adv=%.4f  g_rec=%.5f  (%.1fs)", it + 1, d_loss, g_adv, g_rec,
                     time.perf_counter() - t0)
    return GainModel(gen, disc, cfg, ds.features, ds.normalization, history)


# -- imputation -----------------------------------------------------------------

def _same_norm(a: NormalizationParams | None, b: NormalizationParams) -> bool:
    return a is not None and np.array_equal(a.mins, b.mins) and np.array_equal(a.maxs, b.maxs) \
        and np.array_equal(a.constant, b.constant)


def _aligned(model: GainModel, ds: Dataset) -> Dataset:
    """``ds`` expressed on the model's normalized scale."""
    if [f.name for f in ds.features] != [f.name for f in model.features]:
        raise DataError("dataset columns do not match the model's features")
    if [f.kind for f in ds.features] != [f.kind for f in model.features]:
        raise DataError("dataset feature kinds do not match the model")
    if _same_norm(ds.normalization, model.normalization):
        return ds
    return normalize(denormalize(ds), model.normalization)[0]


def impute_normalized(model: GainModel, ds: Dataset, rng: np.random.Generator) -> np.ndarray:
    """One completed grid on the model's normalized scale (no thresholding)."""
    ds = _aligned(model, ds)
    z = sample_noise(ds.mask, rng, model.config.noise_high)
    x_bar = forward(model.generator, generator_input(ds.values, ds.mask, z)).output
    return complete(ds.values, ds.mask, x_bar)


def impute(model: GainModel, ds: Dataset, rng: np.random.Generator, n_draws: int = 1) -> list[Dataset]:
    """Multiple imputation: ``n_draws`` completed, denormalized datasets.

    Observed cells are copied verbatim from the input; binary features are
    thresholded at 0.5.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    aligned = _aligned(model, ds)
    observed = raw_values(ds)
    binary = aligned.binary
    out = []
    for _ in range(n_draws):
        filled = model.normalization.invert(impute_normalized(model, aligned, rng))
        filled = np.where(binary, (filled >= 0.5).astype(np.float64), filled)
        values = np.where(ds.mask == 1, observed, filled)
        out.append(Dataset(values, np.ones_like(ds.mask), ds.features, None, None))
    return out


# -- serialization ----------------------------------------------------------------

def _pack(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unpack(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def _pack_mlp(net: MLP) -> list[dict]:
    return [{"in": l.in_dim, "out": l.out_dim, "activation": l.activation,
             "weights": _pack(l.weights), "bias": _pack(l.bias)} for l in net.layers]


def _unpack_mlp(obj: list[dict]) -> MLP:
    return MLP(tuple(DenseLayer(_unpack(l["weights"]), _unpack(l["bias"]), l["activation"]) for l in obj))


def save_model(model: GainModel, path: str | Path) -> None:
    """JSON document with a format/version header; arrays are base64 of
    little-endian float64, so loading reproduces every bit."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": model.config.to_dict(),
        "features": [asdict(f) for f in model.features],
        "normalization": {"mins": _pack(model.normalization.mins), "maxs": _pack(model.normalization.maxs),
                          "constant": [bool(c) for c in model.normalization.constant]},
        "generator": _pack_mlp(model.generator),
        "discriminator": _pack_mlp(model.discriminator),
        "history": _pack(model.history),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> GainModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a model file") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {doc.get('version')}")
    norm = doc["normalization"]
    return GainModel(
        generator=_unpack_mlp(doc["generator"]),
        discriminator=_unpack_mlp(doc["discriminator"]),
        config=TrainConfig.from_dict(doc["config"]),
        features=tuple(FeatureSpec(**f) for f in doc["features"]),
        normalization=NormalizationParams(_unpack(norm["mins"]), _unpack(norm["maxs"]),
                                          np.array(norm["constant"], dtype=bool)),
        history=_unpack(doc["history"]).reshape(-1, 3),
    )


def save_history(model: GainModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,d_loss,g_adv_loss,g_recon_loss\n")
        for i, (a, b, c) in enumerate(model.history, start=1):
            fh.write(f"{i},{float(a)!r},{float(b)!r},{float(c)!r}\n")
