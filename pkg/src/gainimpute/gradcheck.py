"""Finite-difference checks for the network engine and the composite GAIN
generator/discriminator losses. Used by the test suite and ``gain-impute
gradcheck``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gain import (TrainConfig, complete, discriminator_step_grads, generator_input, generator_step_grads,
                   loss_d, loss_g_adv, loss_m, sample_hint, sample_noise)
from .nn_core import (ACTIVATIONS, MLP, DenseLayer, backward, compare_gradients, finite_diff_grad, forward, make_rng,
                      xavier_init)

EPS = 1e-5
TOL = 1e-4


@dataclass
class Check:
    name: str
    max_rel_error: float
    n_checked: int
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: max rel err {self.max_rel_error:.2e} over {self.n_checked} params"


def random_mlp(rng: np.random.Generator, max_layers: int = 3, max_units: int = 16) -> MLP:
    n_layers = int(rng.integers(1, max_layers + 1))
    dims = [int(rng.integers(1, max_units + 1)) for _ in range(n_layers + 1)]
    layers = []
    for a, b in zip(dims, dims[1:]):
        act = ACTIVATIONS[int(rng.integers(0, len(ACTIVATIONS)))]
        w = xavier_init(a, b, rng, act).weights
        layers.append(DenseLayer(w, rng.normal(0, 0.1, b), act))
    return MLP(tuple(layers))


def _corrupt(grads, on: bool):
    if on:
        grads = [g.copy() for g in grads]
        grads[0].flat[0] = grads[0].flat[0] * 1.5 + 1e-3
    return grads


def check_random_mlp(seed: int, corrupt: bool = False) -> Check:
    """Squared-error loss against a random target through a random net."""
    rng = make_rng(seed, "gradcheck")
    net = random_mlp(rng)
    x = rng.normal(size=(int(rng.integers(1, 9)), net.in_dim))
    target = rng.normal(size=(x.shape[0], net.out_dim))

    def loss(n: MLP) -> float:
        return float(np.sum((forward(n, x).output - target) ** 2))

    trace = forward(net, x)
    grads, _ = backward(net, trace, 2.0 * (trace.output - target))
    res = compare_gradients(_corrupt(grads, corrupt), finite_diff_grad(loss, net, EPS), TOL)
    return Check(f"random mlp {net.dims} seed={seed}", res.max_rel_error, res.n_checked, res.passed)


def _gain_case(seed: int, d: int = 3, rows: int = 5):
    rng = make_rng(seed, "gradcheck-gain")
    gen = MLP(tuple(DenseLayer(rng.normal(0, 0.7, (a, b)), rng.normal(0, 0.2, b), act)
                    for a, b, act in ((2 * d, 6, "relu"), (6, d, "sigmoid"))))
    disc = MLP(tuple(DenseLayer(rng.normal(0, 0.7, (a, b)), rng.normal(0, 0.2, b), act)
                     for a, b, act in ((2 * d, 6, "relu"), (6, d, "sigmoid"))))
    x = rng.random((rows, d))
    binary = np.zeros(d, dtype=bool)
    binary[-1] = True
    x[:, -1] = (x[:, -1] > 0.5).astype(float)
    m = (rng.random((rows, d)) < 0.6).astype(float)
    z = sample_noise(m, rng, 0.5)
    hint = sample_hint(m, rng)
    return gen, disc, x, m, z, hint.b, hint.h, binary


def check_generator_loss(seed: int, variant: str = "full", alpha: float = 2.0, corrupt: bool = False) -> Check:
    """Composite G objective: generate -> complete -> discriminate ->
    loss_g_adv + alpha * loss_m, differentiated w.r.t. generator weights."""
    gen, disc, x, m, z, b, h, binary = _gain_case(seed)
    cfg = TrainConfig(alpha=alpha, variant=variant)
    rows = x.shape[0]

    def loss(g: MLP) -> float:
        x_bar = forward(g, generator_input(x, m, z)).output
        m_hat = forward(disc, np.concatenate([complete(x, m, x_bar), h], axis=1)).output
        total = loss_g_adv(m, m_hat, b) if cfg.uses_lg else 0.0
        if cfg.uses_lm:
            total += alpha * loss_m(x, x_bar, m, binary)
        return total / rows

    _, _, grads = generator_step_grads(gen, disc, x, m, z, b, h, binary, cfg)
    res = compare_gradients(_corrupt(grads, corrupt), finite_diff_grad(loss, gen, EPS), TOL)
    return Check(f"generator loss variant={variant} alpha={alpha} seed={seed}", res.max_rel_error, res.n_checked,
                 res.passed)


def check_discriminator_loss(seed: int, corrupt: bool = False) -> Check:
    gen, disc, x, m, z, b, h, _ = _gain_case(seed)
    rows = x.shape[0]
    x_hat = complete(x, m, forward(gen, generator_input(x, m, z)).output)

    def loss(dn: MLP) -> float:
        return loss_d(m, forward(dn, np.concatenate([x_hat, h], axis=1)).output, b) / rows

    _, grads = discriminator_step_grads(gen, disc, x, m, z, b, h)
    res = compare_gradients(_corrupt(grads, corrupt), finite_diff_grad(loss, disc, EPS), TOL)
    return Check(f"discriminator loss seed={seed}", res.max_rel_error, res.n_checked, res.passed)


def run_gradcheck(n_nets: int = 50, seed: int = 0, corrupt: bool = False) -> list[Check]:
    checks = [check_random_mlp(seed * 1000 + i, corrupt) for i in range(n_nets)]
    for i in range(3):
        checks.append(check_generator_loss(seed * 1000 + i, "full", 2.0, corrupt))
        checks.append(check_discriminator_loss(seed * 1000 + i, corrupt))
    checks.append(check_generator_loss(seed * 1000, "no_LM", 0.0, corrupt))
    return checks
