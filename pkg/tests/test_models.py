import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccpr.errors import DomainError, NumericError
from ccpr.models import (CprSystem, DegreeDistribution, DFold, DFoldMixture, DFoldReceiver, NearFar,
                         NearFarReceiver, SlottedAloha, clamp_probability, eval_degree,
                         induced_success_from_phi, poisson_truncation, success_model_from_dict, success_prob)

D2 = DegreeDistribution({2: 0.5102, 4: 0.4898})


def test_eval_degree_examples():
    d3 = DegreeDistribution.regular(3)
    assert eval_degree(d3, "lambda", 0.5) == pytest.approx(0.25, abs=1e-15)
    assert eval_degree(DegreeDistribution.regular(5), "LambdaPrime", 1.0) == pytest.approx(5.0)
    assert eval_degree(D2, "LambdaPrime", 1.0) == pytest.approx(2.9796, abs=1e-12)
    assert eval_degree(D2, "Lambda", 1.0) == pytest.approx(1.0)


@pytest.mark.parametrize("x", [-0.1, 1.1])
def test_eval_degree_domain(x):
    with pytest.raises(DomainError):
        eval_degree(DegreeDistribution.regular(3), "lambda", x)


@pytest.mark.parametrize("coeffs", [{1: 1.0}, {0: 0.2, 3: 0.8}, {3: 0.5, 4: 0.4}, {3: 1.2, 4: -0.2}])
def test_degree_rejects_bad_coefficients(coeffs):
    with pytest.raises(DomainError):
        DegreeDistribution(coeffs)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=5))
def test_lambda_normalised_and_increasing(ws):
    total = math.fsum(ws)
    dist = DegreeDistribution({d + 2: w / total for d, w in enumerate(ws)})
    x = np.linspace(0, 1, 101)
    assert dist.lam(1.0) == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(dist.lam(x)) > 0)
    # lambda^{-1} round trip
    y = dist.lam(x[1:-1])
    assert np.allclose(dist.lam_inv(y), x[1:-1], atol=1e-10)


def test_success_prob_examples():
    assert success_prob(SlottedAloha(), 0, [0.0]) == 1.0
    assert success_prob(DFold(2), 0, [1.0]) == pytest.approx(2 * math.exp(-1), abs=1e-12)
    mix = DFoldMixture({1: 0.5, 2: 0.5})
    assert success_prob(mix, 0, [1.0]) == pytest.approx(0.5 * math.exp(-1) + math.exp(-1), abs=1e-12)
    with pytest.raises(DomainError):
        success_prob(SlottedAloha(), 0, [-0.1])


def test_mixture_weights_must_sum_to_one():
    with pytest.raises(DomainError):
        DFoldMixture({1: 0.5, 2: 0.4})


MODELS = [SlottedAloha(), DFold(2), DFold(3), DFoldMixture({1: 0.3, 3: 0.7}), NearFar()]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_success_strictly_decreasing_on_grid(model):
    g = np.linspace(0.0, 4.0, 20)
    K = model.n_classes or 2
    for k in range(K):
        for axis in range(K):
            rho = np.full((K, g.size), 0.7)
            rho[axis] = g
            P = model.prob(rho)[k]
            assert P[0] <= 1.0
            assert np.all(np.diff(P) < 0)
    assert np.all(model.prob(np.zeros((K, 1))) == 1.0)


@pytest.mark.parametrize("D", [1, 2, 3])
def test_induced_dfold_matches_closed_form(D):
    rho = np.round(np.arange(0.1, 5.01, 0.1), 10)
    got = np.array([induced_success_from_phi(DFoldReceiver(D), 0, [r]) for r in rho])
    assert np.max(np.abs(got - DFold(D).total_prob(rho))) < 1e-10


def test_induced_dfold_one_class_example():
    assert induced_success_from_phi(DFoldReceiver(1), 0, [0.3]) == pytest.approx(math.exp(-0.3), abs=1e-10)


def test_nearfar_enumeration_oracle():
    # brute force over (n1, n2) with the tagged packet added to class k
    r1, r2 = 0.5, 0.5
    N = 40
    pmf = lambda n, m: math.exp(-m) * m ** n / math.factorial(n)  # noqa: E731
    want = sum(pmf(a, r1) * pmf(b, r2) for a in range(N) for b in range(N) if a + 1 <= 1 and b <= 1)
    assert induced_success_from_phi(NearFarReceiver(), 0, [r1, r2]) == pytest.approx(want, abs=1e-12)
    assert NearFar().prob(np.array([[r1], [r2]]))[0, 0] == pytest.approx(want, abs=1e-12)
    assert induced_success_from_phi(NearFarReceiver(), 1, [0.0, 0.0]) == 1.0


@pytest.mark.parametrize("receiver", [DFoldReceiver(1, 2), DFoldReceiver(2, 2), DFoldReceiver(3, 2),
                                      NearFarReceiver()], ids=lambda r: f"{r.name}{getattr(r, 'D', '')}")
def test_phi_receiver_properties(receiver):
    grid = list(itertools.product(range(7), repeat=2))
    phi_c = {n: tuple(receiver.phi_c(np.array(n))) for n in grid}
    for n in grid:
        phi = receiver.phi(np.array(n))
        assert all(0 <= phi[k] <= n[k] for k in range(2))
        assert all(phi[k] in (0, n[k]) for k in range(2))
        assert tuple(receiver.phi_c(np.array(phi_c[n]))) == phi_c[n]
    for a, b in itertools.product(grid, repeat=2):
        if a[0] <= b[0] and a[1] <= b[1]:
            assert all(x <= y for x, y in zip(phi_c[a], phi_c[b]))


def test_poisson_truncation_tail():
    from scipy import stats

    for mu in (0.1, 1.0, 7.5):
        n = poisson_truncation(mu)
        assert stats.poisson.sf(n, mu) < 1e-12 <= stats.poisson.sf(n - 1, mu)


def test_clamp_guard_band():
    assert clamp_probability(1.0 + 5e-13) == 1.0
    assert clamp_probability(-5e-13) == 0.0
    with pytest.raises(NumericError):
        clamp_probability(1.0 + 1e-9)


def test_cpr_system_validation():
    d3 = DegreeDistribution.regular(3)
    ok = CprSystem(G=(0.2, 0.1), degrees=(d3, D2), routing=((0.5, 0.5), (0.0, 1.0)), partition=(0.5, 0.5),
                   success=(SlottedAloha(), SlottedAloha()))
    assert ok.K == 2 and ok.J == 2
    with pytest.raises(DomainError):
        CprSystem(G=(0.2,), degrees=(d3,), routing=((0.5, 0.4),), partition=(0.5, 0.5),
                  success=(SlottedAloha(), SlottedAloha()))
    with pytest.raises(DomainError):
        CprSystem.single(-0.1, d3, SlottedAloha())
    with pytest.raises(DomainError):
        CprSystem(G=(0.2,), degrees=(d3,), routing=((1.0,),), partition=(0.9,), success=(SlottedAloha(),))


def test_success_model_round_trip():
    for m in MODELS:
        assert success_model_from_dict(m.to_dict()) == m
