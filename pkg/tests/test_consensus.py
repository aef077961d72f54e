import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcfilter.comm import make_corruption_channel
from bcfilter.consensus import (
    ConsensusConfig,
    DisagreementVector,
    Pool,
    brute_force_kl_minimizer,
    consensual_pdf,
    consensual_pdf_linop,
    consensual_pdf_logop,
    consensus_round,
    conservative_gamma,
    disagreement,
    max_sigma_for_n_loop,
    plan_n_loop,
    run_consensus,
    sum_kl,
)
from bcfilter.density import GridDensity, StateGrid, geometric_pool, l1_distance, normalize
from bcfilter.errors import BadWeights, GridMismatch, Infeasible, TooLarge
from bcfilter.network import Digraph, make_balanced_weights, second_largest_singular_value
from oracles import gaussian_product, iterate_pool

G = StateGrid.line(0, 1, 32)


def rand(rng, m, grid=G):
    return [normalize(rng.random(grid.n_cells) + 0.05, grid) for _ in range(m)]


def test_identical_inputs_are_a_fixed_point():
    p = normalize(np.arange(1, 33, dtype=float), G)
    P = make_balanced_weights(Digraph.ring(4))
    for pool in Pool:
        out = consensus_round([p] * 4, P, pool)
        assert all(np.allclose(o.values, p.values, rtol=1e-12) for o in out)


def test_complete_graph_one_round_reaches_geometric_mean():
    rng = np.random.default_rng(1)
    ds = rand(rng, 5)
    P = np.full((5, 5), 0.2)
    out = consensus_round(ds, P, Pool.LOGOP)
    ref = geometric_pool(ds, np.full(5, 0.2))
    assert max(l1_distance(o, ref) for o in out) < 1e-12


def test_single_agent_unchanged():
    p = normalize(np.arange(1, 33, dtype=float), G)
    assert np.allclose(consensus_round([p], np.ones((1, 1)))[0].values, p.values, rtol=1e-14)


def test_round_matches_plain_loop_oracle():
    rng = np.random.default_rng(2)
    ds = rand(rng, 6)
    P = make_balanced_weights(Digraph.circulant(6, [1, 2]))
    for pool, log in ((Pool.LINOP, False), (Pool.LOGOP, True)):
        got = np.stack([d.values for d in run_consensus(ds, P, 7, pool).final])
        ref = iterate_pool(np.stack([d.values for d in ds]), P.matrix, 7, log=log, cell=G.cell_measure)
        assert np.allclose(got, ref, rtol=1e-10)


def test_round_errors():
    p = GridDensity.uniform(G)
    with pytest.raises(BadWeights):
        consensus_round([p, p], np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(BadWeights):
        consensus_round([p, p], np.eye(3))
    with pytest.raises(GridMismatch):
        consensus_round([p, GridDensity.uniform(StateGrid.line(0, 2, 32))], np.full((2, 2), 0.5))


def test_linop_limit_on_ring_example():
    rng = np.random.default_rng(3)
    ds = rand(rng, 3)
    P = np.array([[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]])
    final = run_consensus(ds, P, 1000, Pool.LINOP, keep_history=False).final
    ref = consensual_pdf_linop(ds, np.full(3, 1 / 3))
    assert max(l1_distance(f, ref) for f in final) < 1e-6


def test_linop_limit_with_non_uniform_pi():
    rng = np.random.default_rng(4)
    ds = rand(rng, 2)
    P = np.array([[0.5, 0.5], [0.2, 0.8]])
    pi = np.array([2 / 7, 5 / 7])
    final = run_consensus(ds, P, 500, Pool.LINOP, keep_history=False).final
    assert max(l1_distance(f, consensual_pdf_linop(ds, pi)) for f in final) < 1e-9
    final = run_consensus(ds, P, 500, Pool.LOGOP, keep_history=False).final
    assert max(l1_distance(f, consensual_pdf_logop(ds, pi)) for f in final) < 1e-9


def test_logop_limit_after_200_rounds():
    rng = np.random.default_rng(5)
    ds = rand(rng, 8)
    P = make_balanced_weights(Digraph.circulant(8, [1, 3]))
    final = run_consensus(ds, P, 200, Pool.LOGOP, keep_history=False).final
    ref = consensual_pdf(ds, np.full(8, 1 / 8), Pool.LOGOP)
    assert max(l1_distance(f, ref) for f in final) < 1e-8


def test_logop_of_two_gaussians_matches_product_identity():
    g = StateGrid.line(-8, 8, 801)
    x = g.centers[:, 0]
    a = normalize(np.exp(-0.5 * (x - 1) ** 2 / 0.5), g)
    b = normalize(np.exp(-0.5 * (x + 1) ** 2 / 2.0), g)
    # geometric mean with weights 1/2 is the product of N(1, 2*0.5) and N(-1, 2*2)
    mu, var = gaussian_product(1, 1.0, -1, 4.0)
    ref = normalize(np.exp(-0.5 * (x - mu) ** 2 / var), g)
    assert l1_distance(consensual_pdf_logop([a, b], [0.5, 0.5]), ref) < 1e-6


def test_doubly_stochastic_linop_is_plain_average():
    rng = np.random.default_rng(6)
    ds = rand(rng, 4)
    avg = normalize(np.mean([d.values for d in ds], axis=0), G)
    assert l1_distance(consensual_pdf_linop(ds, np.full(4, 0.25)), avg) < 1e-14


def test_disagreement_examples():
    assert DisagreementVector(np.array([0.3, 0.4])).norm == pytest.approx(0.5)
    p = GridDensity.uniform(G)
    assert disagreement([p, p], p).norm == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 1000))
def test_disagreement_bounded(m, seed):
    rng = np.random.default_rng(seed)
    ds = rand(rng, m)
    th = disagreement(ds, rand(rng, 1)[0])
    assert np.all((0 <= th.theta) & (th.theta <= 2))
    assert th.norm <= 2 * math.sqrt(m)


def test_log_domain_disagreement_contracts_at_sigma():
    # the l2 norm over agents of centred log-densities shrinks by at least sigma per round
    rng = np.random.default_rng(7)
    for m in (3, 6, 11):
        P = make_balanced_weights(Digraph.random_geometric(m, 0.6, rng))
        sigma = second_largest_singular_value(P)
        ds = [normalize(rng.random(32) ** 3 + 1e-3, G) for _ in range(m)]
        hist = run_consensus(ds, P, 30, Pool.LOGOP).history

        def spread(h):
            L = np.log(np.stack([d.values for d in h]))
            L -= L.mean(axis=1, keepdims=True)
            return np.linalg.norm(L - L.mean(axis=0))

        s0 = spread(hist[0])
        for nu, h in enumerate(hist):
            assert spread(h) <= sigma ** nu * s0 * (1 + 1e-9) + 1e-12


# --- planning ---------------------------------------------------------------

def test_plan_examples():
    assert plan_n_loop(0.5, 4, 0.01, 0, 4) == 9
    assert plan_n_loop(0.0, 2.0, 0.1, 0.01, 4) == 1
    with pytest.raises(Infeasible):
        plan_n_loop(0.5, 2.0, 0.1, 0.05, 4)  # 2 * 0.05 * 2 = 0.2 >= 0.1


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.05, 1.0), st.floats(1e-4, 0.5), st.integers(2, 50))
def test_plan_closed_form(sigma, gfrac, eps, m):
    gamma = gfrac * conservative_gamma(m)
    n = plan_n_loop(sigma, gamma, eps, 0.0, m)
    assert sigma ** n * gamma <= eps * (1 + 1e-12)
    assert n == 1 or sigma ** (n - 1) * gamma > eps


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.05, 1.0), st.floats(1e-3, 0.5), st.floats(0.0, 2.0), st.integers(2, 50))
def test_plan_with_comm_error_is_minimal(sigma, gfrac, eps_cons, ratio, m):
    gamma = gfrac * conservative_gamma(m)
    eps_comm = ratio * eps_cons / (2 * math.sqrt(m) * 10)
    lhs = lambda n: sigma ** n * gamma + 2 * n * eps_comm * math.sqrt(m)  # noqa: E731
    try:
        n = plan_n_loop(sigma, gamma, eps_cons, eps_comm, m)
    except Infeasible:
        assert min(lhs(n) for n in range(1, 20_000)) > eps_cons
        return
    assert lhs(n) <= eps_cons
    assert n == 1 or lhs(n - 1) > eps_cons


def test_plan_argument_checks():
    with pytest.raises(ValueError):
        plan_n_loop(1.0, 1, 0.1, 0, 4)
    with pytest.raises(ValueError):
        plan_n_loop(0.5, 10, 0.1, 0, 4)


def test_max_sigma_examples():
    assert max_sigma_for_n_loop(1, 2.0, 0.5, 0.0, 4) == pytest.approx(0.25)
    assert max_sigma_for_n_loop(1, 2.0, 0.5, 0.05, 4) == pytest.approx((0.5 - 0.2) / 2)
    assert max_sigma_for_n_loop(3, 1.0, 1.0 + 2 * 3 * 0.01 * 2, 0.01, 4) == pytest.approx(1.0)
    assert max_sigma_for_n_loop(10, 2.0, 0.1, 0, 4) > max_sigma_for_n_loop(5, 2.0, 0.1, 0, 4)
    with pytest.raises(Infeasible):
        max_sigma_for_n_loop(5, 2.0, 0.1, 0.01, 4)


def test_config_budget():
    cfg = ConsensusConfig(Pool.LOGOP, n_loop=10, eps_cons=0.05, eps_comm=0.01)
    with pytest.raises(Infeasible):
        cfg.check_budget(4)
    assert ConsensusConfig(Pool.LOGOP, 10, 0.05).gamma(9) == pytest.approx(6.0)
    capped = ConsensusConfig(Pool.LOGOP, 10, 0.05, gamma_fn=lambda m, prev: 100.0)
    assert capped.gamma(4) == pytest.approx(4.0)


def test_planned_loops_meet_target_end_to_end():
    rng = np.random.default_rng(8)
    for m in (4, 9):
        P = make_balanced_weights(Digraph.random_geometric(m, 0.6, rng))
        sigma = second_largest_singular_value(P)
        eps_cons = 0.05
        n = plan_n_loop(sigma, conservative_gamma(m), eps_cons, 0.0, m)
        ds = [normalize(rng.random(32) ** 3 + 1e-3, G) for _ in range(m)]
        star = consensual_pdf(ds, np.full(m, 1 / m), Pool.LOGOP)
        final = run_consensus(ds, P, n, Pool.LOGOP).final
        assert disagreement(final, star).norm <= eps_cons


# --- communication error ----------------------------------------------------

@pytest.mark.parametrize("adversarial", [False, True])
def test_linop_deviation_grows_at_most_linearly(adversarial):
    rng = np.random.default_rng(9)
    ds = rand(rng, 6)
    P = make_balanced_weights(Digraph.ring(6))
    eps = 5e-3
    exact = run_consensus(ds, P, 20, Pool.LINOP)
    noisy = run_consensus(ds, P, 20, Pool.LINOP, channel=make_corruption_channel(eps, adversarial), rng=rng)
    for nu in range(1, 21):
        measured = max(e.max() for e in noisy.channel_errors[:nu])
        dev = max(l1_distance(a, b) for a, b in zip(exact.history[nu], noisy.history[nu]))
        assert dev <= nu * measured * (1 + 1e-9)


# --- KL optimality ----------------------------------------------------------

def test_kl_minimizer_examples():
    g2 = StateGrid.line(0, 1, 2)
    fs = [normalize(v, g2) for v in ([0.9, 0.1], [0.5, 0.5], [0.2, 0.8])]
    best = brute_force_kl_minimizer(fs)
    geo = geometric_pool(fs, np.full(3, 1 / 3))
    assert l1_distance(best, geo) <= 1e-3
    same = [fs[0]] * 3
    assert l1_distance(brute_force_kl_minimizer(same), fs[0]) <= 1e-3
    sym = brute_force_kl_minimizer([normalize([0.7, 0.3], g2), normalize([0.3, 0.7], g2)])
    assert sym.masses[0] == pytest.approx(0.5, abs=1e-4)
    assert sum_kl(geo, fs) <= sum_kl(best, fs) + 1e-6


def test_kl_minimizer_size_limit():
    with pytest.raises(TooLarge):
        brute_force_kl_minimizer([GridDensity.uniform(StateGrid.line(0, 1, 4))])
