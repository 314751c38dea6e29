import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gainimpute.nn_core import make_rng
from gainimpute.oracle import (DiscreteToy, OracleError, bayes_oracle, bernoulli_generator, compare_to_oracle,
                               copy_generator, copy_toy, correlated_toy, expected_loss_d, fit_discriminator,
                               marginal_toy, sample_toy)

# Worked by hand: with one component observed, every hint reveals the mask
# (h has a 0 or 1 in the visible slot), so the posterior equals m. x_hat is
# (x1, x1) when X2 is missing and (x2, x2) when X1 is missing.
COPY_TOY_TABLE = {
    ((1.0, 1.0), (0.5, 0.0)): (0.5 * 0.7 * 0.5, (1.0, 0.0)),
    ((0.0, 0.0), (0.5, 0.0)): (0.5 * 0.3 * 0.5, (1.0, 0.0)),
    ((1.0, 1.0), (1.0, 0.5)): (0.5 * 0.7 * 0.5, (1.0, 0.0)),
    ((0.0, 0.0), (1.0, 0.5)): (0.5 * 0.3 * 0.5, (1.0, 0.0)),
    ((1.0, 1.0), (0.5, 1.0)): (0.5 * 0.5 * 0.5, (0.0, 1.0)),
    ((0.0, 0.0), (0.5, 1.0)): (0.5 * 0.5 * 0.5, (0.0, 1.0)),
    ((1.0, 1.0), (0.0, 0.5)): (0.5 * 0.5 * 0.5, (0.0, 1.0)),
    ((0.0, 0.0), (0.0, 0.5)): (0.5 * 0.5 * 0.5, (0.0, 1.0)),
}


def test_copy_toy_matches_hand_table():
    table = bayes_oracle(copy_toy())
    assert set(table.keys()) == set(COPY_TOY_TABLE)
    for key, (p, post) in COPY_TOY_TABLE.items():
        got_p, got_post = table.entries[key]
        assert got_p == pytest.approx(p, abs=1e-15)
        np.testing.assert_array_equal(got_post, post)


def test_marginal_toy_posterior_is_mask_marginal():
    # x_hat carries no information, so hidden components sit at P(m_i = 1) = 1/2
    table = bayes_oracle(marginal_toy(0.6))
    for (x_hat, h), (_, post) in table.entries.items():
        for i, hi in enumerate(h):
            if hi == 0.5:
                assert post[i] == pytest.approx(0.5, abs=1e-12)


def _hand_correlated_posterior(x_hat, h):
    """Independent brute force for the correlated toy, written directly from
    the generative story rather than through DiscreteToy.outcomes."""
    num = np.zeros(2)
    den = 0.0
    for x1 in (0, 1):
        for x2 in (0, 1):
            px = (0.7 if x1 else 0.3) * (0.8 if x1 == x2 else 0.2)
            for m1 in (0, 1):
                for m2 in (0, 1):
                    pm = (0.7 if m1 else 0.3) * (0.7 if m2 else 0.3)
                    for g1 in (0, 1):
                        for g2 in (0, 1):
                            pg = (0.5 if not m1 else float(g1 == 0)) * (0.5 if not m2 else float(g2 == 0))
                            xh = (x1 if m1 else g1, x2 if m2 else g2)
                            if xh != x_hat:
                                continue
                            for k in (0, 1):
                                hh = (0.5 if k == 0 else m1, 0.5 if k == 1 else m2)
                                if hh != h:
                                    continue
                                w = px * pm * pg * 0.5
                                den += w
                                num += w * np.array([m1, m2])
    return num / den


def test_correlated_toy_against_independent_enumeration():
    table = bayes_oracle(correlated_toy())
    assert len(table.entries) == 16
    for (x_hat, h), (_, post) in table.entries.items():
        want = _hand_correlated_posterior(tuple(int(v) for v in x_hat), h)
        np.testing.assert_allclose(post, want, atol=1e-14)


def test_oracle_matches_monte_carlo_frequencies():
    toy = correlated_toy()
    table = bayes_oracle(toy)
    x_hat, m, _, h = sample_toy(toy, 200_000, make_rng(0, "mc"))
    keys = [tuple(r) for r in np.concatenate([x_hat, h], axis=1)]
    for (xh, hh), (p, post) in table.entries.items():
        sel = np.array([k == xh + hh for k in keys])
        assert sel.mean() == pytest.approx(p, abs=0.005)
        np.testing.assert_allclose(m[sel].mean(axis=0), post, atol=0.03)


@pytest.mark.parametrize("toy", [copy_toy(), correlated_toy(), marginal_toy(0.6), marginal_toy(0.2)])
def test_posterior_endpoints_hold_exactly(toy):
    table = bayes_oracle(toy)
    assert table.endpoint_violations() == []
    for (_, h), (_, post) in table.entries.items():
        assert np.all((post >= 0) & (post <= 1))


@settings(max_examples=40, deadline=None)
@given(px=st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4),
       pm=st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4).filter(lambda v: sum(v) > 0.05),
       q=st.floats(0.0, 1.0))
def test_random_toys_posteriors_valid(px, pm, q):
    keys = [(0, 0), (0, 1), (1, 0), (1, 1)]
    toy = DiscreteToy({k: v / sum(px) for k, v in zip(keys, px)}, {k: v / sum(pm) for k, v in zip(keys, pm)},
                      bernoulli_generator(q))
    table = bayes_oracle(toy)
    assert table.endpoint_violations() == []
    assert sum(p for p, _ in table.entries.values()) == pytest.approx(1.0)
    for _, post in table.entries.values():
        assert np.all((post >= 0) & (post <= 1))


def test_validation_errors():
    with pytest.raises(OracleError):
        bayes_oracle(DiscreteToy({(0, 0): 0.5}, {(1, 0): 1.0}, copy_generator))
    with pytest.raises(OracleError):
        bayes_oracle(DiscreteToy({(0, 0): 1.0}, {(1, 2): 1.0}, copy_generator))
    with pytest.raises(OracleError):
        bayes_oracle(DiscreteToy({(0, 0): 1.0}, {(1, 0): 1.0}, lambda x, m: {(0, 0): 0.7}))
    with pytest.raises(OracleError):
        bayes_oracle(DiscreteToy({(0,) * 4: 1.0}, {(1,) * 4: 1.0}, copy_generator))


def test_trained_discriminator_approaches_oracle():
    toy = correlated_toy()
    net = fit_discriminator(toy, seed=0)
    mae, n = compare_to_oracle(net, bayes_oracle(toy))
    assert n == 16 and mae < 0.05
    # training lowers the expected hidden-component loss well below chance
    from gainimpute.nn_core import build_mlp

    untrained = build_mlp([4, 16, 16, 2], make_rng(0, "oracle-init"))
    assert expected_loss_d(net, toy) < expected_loss_d(untrained, toy)
