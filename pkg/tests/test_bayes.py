import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcfilter.bayes import (
    GaussianLikelihood,
    Measurement,
    TabularLikelihood,
    TransitionKernel,
    mutual_information_gain,
    predict,
    update_with_exchange,
)
from bcfilter.density import GridDensity, StateGrid, entropy, l1_distance, normalize
from bcfilter.errors import GridMismatch, KernelNotStochastic, TooLarge, ZeroEvidence
from oracles import gaussian_product

LINE = StateGrid.line(-5, 5, 101)
X = LINE.centers[:, 0]


def bump(mu, var, grid=LINE):
    x = grid.centers[:, 0]
    return normalize(np.exp(-0.5 * (x - mu) ** 2 / var), grid)


def test_identity_kernel_leaves_prior():
    p = bump(0.3, 1.0)
    assert np.allclose(predict(p, TransitionKernel.identity(LINE)).values, p.values, rtol=1e-12)


def test_periodic_shift_kernel_rotates_by_one_cell():
    g = StateGrid.line(0, 1, 8)
    shift = np.roll(np.eye(8), 1, axis=0)  # column j sends its mass to j+1 (mod 8)
    p = normalize(np.arange(1, 9, dtype=float), g)
    q = predict(p, TransitionKernel.from_mass_matrix(g, shift))
    assert np.allclose(q.values, np.roll(p.values, 1))


def test_gaussian_kernel_zero_noise_shift_on_circle():
    g = StateGrid.line(0, 2 * math.pi, 16)
    width = 2 * math.pi / 16
    k = TransitionKernel.gaussian(g, lambda x: x + width, [[0.0]], periodic=[True])
    p = normalize(np.arange(1, 17, dtype=float), g)
    assert np.allclose(predict(p, k).values, np.roll(p.values, 1))


def test_diffusion_approaches_uniform_with_rising_entropy():
    g = StateGrid.line(0, 1, 20)
    # doubly stochastic lazy random walk on a cycle
    t = 0.5 * np.eye(20) + 0.25 * np.roll(np.eye(20), 1, 0) + 0.25 * np.roll(np.eye(20), -1, 0)
    k = TransitionKernel.from_mass_matrix(g, t)
    p = normalize(np.r_[np.ones(3), np.full(17, 1e-3)], g)
    hs = [entropy(p)]
    for _ in range(1500):
        p = predict(p, k)
        hs.append(entropy(p))
    assert np.all(np.diff(hs) >= -1e-12)
    assert l1_distance(p, GridDensity.uniform(g)) < 1e-6


def test_kernel_column_check():
    g = StateGrid.line(0, 1, 3)
    bad = np.eye(3) / g.cell_measure
    bad[0, 0] *= 1.01
    with pytest.raises(KernelNotStochastic):
        TransitionKernel(g, bad)
    with pytest.raises(KernelNotStochastic):
        TransitionKernel(g, -np.eye(3))


def test_predict_grid_mismatch():
    with pytest.raises(GridMismatch):
        predict(GridDensity.uniform(StateGrid.line(0, 1, 5)), TransitionKernel.identity(StateGrid.line(0, 2, 5)))


def test_gaussian_kernel_columns_integrate_to_one():
    k = TransitionKernel.gaussian(LINE, lambda x: 0.8 * x, [[0.3]])
    col = k.matrix.sum(axis=0) * LINE.cell_measure
    assert np.allclose(col, 1.0, atol=1e-12)


def test_gaussian_kernel_predict_matches_linear_gaussian_moments():
    p = bump(0.5, 0.4)
    q = predict(p, TransitionKernel.gaussian(LINE, lambda x: 0.9 * x + 0.1, [[0.2]]))
    assert q.mean()[0] == pytest.approx(0.9 * 0.5 + 0.1, abs=1e-3)
    assert q.covariance()[0, 0] == pytest.approx(0.81 * 0.4 + 0.2, rel=2e-2)


def test_monte_carlo_kernel_is_reproducible_and_close_to_exact():
    def step(x, rng):
        return 0.9 * x + rng.normal(0, math.sqrt(0.5), size=x.shape)

    a = TransitionKernel.monte_carlo(LINE, step, n_samples=4000, seed=3)
    b = TransitionKernel.monte_carlo(LINE, step, n_samples=4000, seed=3)
    assert np.array_equal(a.matrix, b.matrix)
    exact = TransitionKernel.gaussian(LINE, lambda x: 0.9 * x, [[0.5]])
    p = bump(0.0, 1.0)
    assert l1_distance(predict(p, a), predict(p, exact)) < 0.05


def test_empty_measurement_set_returns_prior():
    p = bump(0, 1)
    assert update_with_exchange(p, [], {}) is p


def test_flat_prior_gives_normalized_likelihood():
    model = GaussianLikelihood([[0.7]])
    post = update_with_exchange(GridDensity.uniform(LINE), [Measurement(0, 1, np.array([0.4]))], {0: model})
    assert np.allclose(post.values, bump(0.4, 0.7).values, rtol=1e-9)


def test_two_measurements_match_product_oracle():
    m1, m2 = GaussianLikelihood([[0.5]]), GaussianLikelihood([[2.0]])
    ms = [Measurement(0, 3, np.array([0.2])), Measurement(1, 3, np.array([-0.6]))]
    prior = GridDensity.uniform(LINE)
    post = update_with_exchange(prior, ms, {0: m1, 1: m2})
    mu, var = gaussian_product(0.2, 0.5, -0.6, 2.0)
    assert np.allclose(post.values, bump(mu, var).values, rtol=1e-9)
    # single-shot with the product likelihood
    single = normalize(np.exp(m1.log_likelihood(ms[0].value, LINE) + m2.log_likelihood(ms[1].value, LINE)), LINE)
    assert np.allclose(post.values, single.values, rtol=0, atol=1e-12)


def _orders(z1, z2, v1, v2, floor_rel):
    models = {0: GaussianLikelihood([[v1]]), 1: GaussianLikelihood([[v2]])}
    a, b = Measurement(0, 1, np.array([z1])), Measurement(1, 1, np.array([z2]))
    prior = bump(0.5, 2.0)
    joint = update_with_exchange(prior, [a, b], models, floor_rel)
    seqs = [update_with_exchange(update_with_exchange(prior, [f], models, floor_rel), [s], models, floor_rel)
            for f, s in ((a, b), (b, a))]
    return joint, seqs


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 4), st.floats(0.2, 4))
def test_update_order_independence_without_floor(z1, z2, v1, v2):
    joint, seqs = _orders(z1, z2, v1, v2, floor_rel=1e-300)
    for seq in seqs:
        assert np.allclose(joint.values, seq.values, rtol=1e-9, atol=1e-280)


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.5, 4), st.floats(0.5, 4))
def test_update_order_independence_with_default_floor(z1, z2, v1, v2):
    # for compatible measurements the floored tails only matter at the floor level
    joint, seqs = _orders(z1, z2, v1, v2, floor_rel=1e-12)
    for seq in seqs:
        assert l1_distance(joint, seq) <= 1e-9


def test_floor_breaks_order_for_conflicting_measurements():
    # after the first sharp update the far tail sits on the floor; the second
    # measurement, pointing there, then amplifies the floor above the true posterior
    joint, seqs = _orders(-3.0, 3.0, 0.2, 0.2, floor_rel=1e-12)
    assert joint.mean()[0] == pytest.approx(0.25 / 10.5, abs=1e-3)  # prior N(0.5, 2) with both readings
    assert l1_distance(joint, seqs[0]) > 1.0


def test_zero_evidence():
    g = StateGrid.line(0, 1, 2)
    model = TabularLikelihood([[1.0, 0.0], [0.0, 1.0]])
    prior = GridDensity(g, [1.0, 1.0])
    # z=0 is impossible in cell 1, z=1 impossible in cell 0: together nothing survives
    with pytest.raises(ZeroEvidence):
        update_with_exchange(prior, [Measurement(0, 1, 0), Measurement(1, 1, 1)], {0: model, 1: model})


def test_mixed_time_indices_rejected():
    model = GaussianLikelihood([[1.0]])
    with pytest.raises(ValueError):
        update_with_exchange(bump(0, 1), [Measurement(0, 1, np.zeros(1)), Measurement(1, 2, np.zeros(1))],
                             {0: model, 1: model})


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement(0, 0, np.zeros(1))
    with pytest.raises(ValueError):
        Measurement(-1, 1, np.zeros(1))


def test_mutual_information_binary_symmetric_channel():
    g = StateGrid.line(0, 1, 2)
    bsc = TabularLikelihood([[0.9, 0.1], [0.1, 0.9]])
    mi = mutual_information_gain(GridDensity.uniform(g), bsc, [0, 1])
    hb = -(0.1 * math.log(0.1) + 0.9 * math.log(0.9))
    assert mi == pytest.approx(math.log(2) - hb, abs=1e-12)
    assert mi / math.log(2) == pytest.approx(0.531, abs=1e-3)  # in bits


def test_mutual_information_uninformative_and_limits():
    g = StateGrid.line(0, 1, 4)
    flat = TabularLikelihood(np.full((3, 4), 1 / 3))
    assert mutual_information_gain(GridDensity.uniform(g), flat, range(3)) == pytest.approx(0, abs=1e-15)
    with pytest.raises(TooLarge):
        mutual_information_gain(GridDensity.uniform(g), flat, range(10_001))


def test_exchange_reduces_expected_entropy():
    # enumerate a discrete measurement space: own sensor versus own + neighbour
    g = StateGrid.line(0, 1, 4)
    rng = np.random.default_rng(0)
    t1 = rng.dirichlet(np.ones(3), size=4).T
    t2 = rng.dirichlet(np.ones(3), size=4).T
    prior = normalize([1, 2, 3, 4], g)
    pm = prior.masses

    def expected_h(tables):
        total = 0.0
        for zs in np.ndindex(*(t.shape[0] for t in tables)):
            lik = np.prod([t[z] for t, z in zip(tables, zs)], axis=0)
            joint = lik * pm
            pz = joint.sum()
            post = joint / pz
            total += pz * -np.sum(post * np.log(post))
        return total

    assert expected_h([t1, t2]) <= expected_h([t1]) + 1e-12
