"""Exact optimal-discriminator posteriors for tiny discrete problems.

For a finite joint of data X, mask M (independent of X), a fixed
generator table and the one-hidden-component hint, the best discriminator
outputs P(m_i = 1 | x_hat, h). ``bayes_oracle`` computes that by full
enumeration; ``fit_discriminator`` trains a real network on samples of the
same process so the two can be compared.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .gain import loss_d, loss_d_grad
from .nn_core import MLP, AdamState, adam_step, backward, build_mlp, forward, make_rng

Vec = tuple[float, ...]
# generator table: (x_tilde with None at missing slots, mask) -> {imputation: probability}
GeneratorTable = Callable[[tuple, tuple], Mapping[tuple, float]]


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteToy:
    p_x: Mapping[tuple, float]
    p_m: Mapping[tuple, float]
    generator: GeneratorTable

    @property
    def d(self) -> int:
        return len(next(iter(self.p_x)))

    def validate(self, tol: float = 1e-9) -> None:
        d = self.d
        if d > 3:
            raise OracleError("enumeration is limited to d <= 3")
        for name, dist in (("p_x", self.p_x), ("p_m", self.p_m)):
            if any(len(k) != d for k in dist):
                raise OracleError(f"{name}: inconsistent dimension")
            if any(p < 0 for p in dist.values()) or abs(sum(dist.values()) - 1.0) > tol:
                raise OracleError(f"{name} is not a probability distribution")
        if any(set(m) - {0, 1} for m in self.p_m):
            raise OracleError("masks must be binary")
        for x, m in itertools.product(self.p_x, self.p_m):
            out = self.generator(x_tilde(x, m), m)
            if any(p < 0 for p in out.values()) or abs(sum(out.values()) - 1.0) > tol:
                raise OracleError(f"generator output for {x_tilde(x, m)}, {m} is not normalized")

    def outcomes(self):
        """Yield (x_hat, m, b, h, probability) over every enumerated path."""
        d = self.d
        for x, px in self.p_x.items():
            for m, pm in self.p_m.items():
                if px * pm == 0:
                    continue
                for x_bar, pg in self.generator(x_tilde(x, m), m).items():
                    if pg == 0:
                        continue
                    x_hat = tuple(float(xi) if mi else float(gi) for xi, mi, gi in zip(x, m, x_bar))
                    for k in range(d):
                        b = tuple(0.0 if j == k else 1.0 for j in range(d))
                        h = tuple(bj * mj + 0.5 * (1.0 - bj) for bj, mj in zip(b, m))
                        yield x_hat, tuple(float(v) for v in m), b, h, px * pm * pg / d


def x_tilde(x: tuple, m: tuple) -> tuple:
    return tuple(xi if mi else None for xi, mi in zip(x, m))


@dataclass
class DiscretePosteriorTable:
    """(x_hat, h) -> (joint probability, per-component P(m_i = 1 | x_hat, h))."""

    entries: dict[tuple[Vec, Vec], tuple[float, np.ndarray]]

    def posterior(self, x_hat: Vec, h: Vec) -> np.ndarray:
        return self.entries[(tuple(map(float, x_hat)), tuple(map(float, h)))][1]

    def keys(self):
        return self.entries.keys()

    def endpoint_violations(self) -> list[str]:
        """Entries where h_i in {0, 1} but the posterior is not exactly h_i."""
        bad = []
        for (x_hat, h), (_, post) in self.entries.items():
            for i, hi in enumerate(h):
                if hi in (0.0, 1.0) and post[i] != hi:
                    bad.append(f"x_hat={x_hat} h={h} i={i}: {post[i]}")
        return bad


def bayes_oracle(toy: DiscreteToy) -> DiscretePosteriorTable:
    toy.validate()
    d = toy.d
    joint: dict[tuple[Vec, Vec], float] = {}
    observed: dict[tuple[Vec, Vec], np.ndarray] = {}
    for x_hat, m, _, h, p in toy.outcomes():
        key = (x_hat, h)
        joint[key] = joint.get(key, 0.0) + p
        acc = observed.setdefault(key, np.zeros(d))
        acc += p * np.asarray(m)
    entries = {}
    for key, p in joint.items():
        if p > 0:
            # h_i = 1 makes numerator and denominator the same sum in the same
            # order, and h_i = 0 makes the numerator exactly 0
            entries[key] = (p, observed[key] / p)
    return DiscretePosteriorTable(entries)


def sample_toy(toy: DiscreteToy, n: int, rng: np.random.Generator) -> tuple[np.ndarray, ...]:
    """``n`` i.i.d. draws of (x_hat, m, b, h) from the enumerated process."""
    paths = list(toy.outcomes())
    probs = np.array([p[-1] for p in paths])
    idx = rng.choice(len(paths), size=n, p=probs / probs.sum())
    cols = [np.array([paths[i][c] for i in idx], dtype=np.float64) for c in range(4)]
    return tuple(cols)


def fit_discriminator(toy: DiscreteToy, steps: int = 4000, batch: int = 256, hidden: tuple[int, ...] = (16, 16),
                      lr: float = 3e-3, seed: int = 0) -> MLP:
    """Train D(x_hat, h) on fresh samples each step with the hidden-component
    cross-entropy used by GAIN."""
    d = toy.d
    rng = make_rng(seed, "oracle")
    net = build_mlp([2 * d, *hidden, d], make_rng(seed, "oracle-init"))
    state = AdamState.zeros_like(net)
    paths = list(toy.outcomes())
    probs = np.array([p[-1] for p in paths])
    probs /= probs.sum()
    table = [np.array([p[c] for p in paths], dtype=np.float64) for c in range(4)]
    for _ in range(steps):
        idx = rng.choice(len(paths), size=batch, p=probs)
        x_hat, m, b, h = (t[idx] for t in table)
        trace = forward(net, np.concatenate([x_hat, h], axis=1))
        grads, _ = backward(net, trace, loss_d_grad(m, trace.output, b) / batch)
        net, state = adam_step(net, grads, state, lr)
    return net


def compare_to_oracle(net: MLP, table: DiscretePosteriorTable) -> tuple[float, int]:
    """Mean absolute error between D and the oracle over the hidden
    components (h_i = 0.5) of every supported (x_hat, h)."""
    errs = []
    for (x_hat, h), (_, post) in table.entries.items():
        out = forward(net, np.array(x_hat + h)).output[0]
        for i, hi in enumerate(h):
            if hi == 0.5:
                errs.append(abs(out[i] - post[i]))
    return float(np.mean(errs)), len(errs)


def expected_loss_d(net: MLP, toy: DiscreteToy) -> float:
    total = 0.0
    for x_hat, m, b, h, p in toy.outcomes():
        out = forward(net, np.array(x_hat + h)).output[0]
        total += p * loss_d(np.array(m), out, np.array(b))
    return total


# -- ready-made toys ------------------------------------------------------------------

def _bits(d: int):
    return list(itertools.product((0, 1), repeat=d))


def copy_generator(x_t: tuple, m: tuple) -> dict[tuple, float]:
    """Fill each missing slot with the first observed value (0 if none)."""
    obs = [v for v in x_t if v is not None]
    fill = obs[0] if obs else 0
    return {tuple(fill if v is None else v for v in x_t): 1.0}


def bernoulli_generator(p: float) -> GeneratorTable:
    """Missing slots filled independently with Bernoulli(p) draws."""

    def gen(x_t: tuple, m: tuple) -> dict[tuple, float]:
        missing = [i for i, v in enumerate(x_t) if v is None]
        out = {}
        for fill in itertools.product((0, 1), repeat=len(missing)):
            full = list(x_t)
            prob = 1.0
            for i, f in zip(missing, fill):
                full[i] = f
                prob *= p if f else 1.0 - p
            out[tuple(full)] = out.get(tuple(full), 0.0) + prob
        return out

    return gen


def copy_toy() -> DiscreteToy:
    """X1 ~ Bern(0.7), X2 ~ Bern(0.5) independent; exactly one component
    observed (uniformly); the generator copies the observed value across."""
    p_x = {(a, b): (0.7 if a else 0.3) * 0.5 for a, b in _bits(2)}
    p_m = {(1, 0): 0.5, (0, 1): 0.5}
    return DiscreteToy(p_x, p_m, copy_generator)


def correlated_toy() -> DiscreteToy:
    """X1 ~ Bern(0.7), X2 equals X1 with probability 0.8; components observed
    independently with probability 0.7; missing slots imputed by a fair coin,
    so the imputations are detectable from x_hat."""
    p_x = {}
    for a, b in _bits(2):
        p_x[(a, b)] = (0.7 if a else 0.3) * (0.8 if a == b else 0.2)
    p_m = {(a, b): (0.7 if a else 0.3) * (0.7 if b else 0.3) for a, b in _bits(2)}
    return DiscreteToy(p_x, p_m, bernoulli_generator(0.5))


def marginal_toy(p: float = 0.6) -> DiscreteToy:
    """I.i.d. Bern(p) components, uniform masks, and a generator that draws
    from the exact marginal: x_hat carries no information about m."""
    p_x = {x: float(np.prod([p if v else 1 - p for v in x])) for x in _bits(2)}
    p_m = {m: 0.25 for m in _bits(2)}
    return DiscreteToy(p_x, p_m, bernoulli_generator(p))
