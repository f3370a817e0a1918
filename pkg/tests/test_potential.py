import numpy as np
import pytest
from scipy import special

from ccpr.errors import DomainError
from ccpr.models import DegreeDistribution, DFold, DFoldMixture, SlottedAloha
from ccpr.potential import (ScalarSystem, balance_value, energy_gap, k_fh_constant, minimum_unstable_fixed_point,
                            min_potential, potential_report, potential_threshold, potential_upper_bound,
                            potential_value, saturation_window_bound, single_system_threshold)


def irsa(d=3):
    return ScalarSystem(DegreeDistribution.regular(d), SlottedAloha())


def irsa_closed(p, G, d):
    return ((d - 1) * p ** d - d * p ** (d - 1) + (1 - np.exp(-G * d * p ** (d - 1))) / G) / d


P_GRID = np.linspace(0.0, 1.0, 100)
G_GRID = np.linspace(0.1, 3.0, 20)


@pytest.mark.parametrize("d", [3, 4, 5, 6])
def test_irsa_potential_closed_form(d):
    P, G = np.meshgrid(P_GRID, G_GRID)
    assert np.max(np.abs(potential_value(irsa(d), P, G) - irsa_closed(P, G, d))) < 1e-10


@pytest.mark.parametrize("D", [1, 2, 3])
def test_dfold_integral_matches_quadrature(D):
    s = ScalarSystem(DegreeDistribution.regular(4), DFold(D))
    P, G = np.meshgrid(np.linspace(0, 1, 25), np.linspace(0.1, 3.0, 8))
    closed = potential_value(s, P, G, method="closed")
    quad = potential_value(s, P, G, method="quad")
    assert np.max(np.abs(closed - quad)) < 1e-10


def test_dfold_integral_by_parts_identity():
    # sum_t P(t, x) = D - sum_tau (D - tau) e^-x x^tau / tau!
    x = np.linspace(0, 8, 50)
    for D in (1, 2, 3, 4):
        tau = np.arange(D)[:, None]
        alt = D - np.sum((D - tau) * np.exp(-x) * x ** tau / special.factorial(tau), axis=0)
        assert np.max(np.abs(DFold(D).total_integral(x) - alt)) < 1e-12


def test_potential_zero_at_origin_exactly():
    for s in (irsa(3), ScalarSystem(DegreeDistribution.regular(5), DFold(3))):
        for G in (0.0, 0.3, 1.7):
            assert potential_value(s, 0.0, G) == 0.0


def test_zero_load_limit():
    # G -> 0 limit is p lambda(p) - Lambda(p)/Lambda'(1), which is 2p^3/3 for degree 3
    p = np.linspace(0, 1, 11)
    assert np.allclose(potential_value(irsa(3), p, 0.0), 2 * p ** 3 / 3, atol=1e-15)
    assert np.allclose(potential_value(irsa(3), p, 1e-9), 2 * p ** 3 / 3, atol=1e-8)


@pytest.mark.parametrize("system", [irsa(3), irsa(6), ScalarSystem(DegreeDistribution.regular(4), DFold(2)),
                                    ScalarSystem(DegreeDistribution({2: 0.5102, 4: 0.4898}), SlottedAloha())],
                         ids=["irsa3", "irsa6", "dfold2", "irregular"])
def test_balance_matches_finite_differences(system):
    h = 1e-5
    p = np.linspace(h, 1 - h, 100)
    for G in G_GRID:
        fd = (potential_value(system, p + h, G) - potential_value(system, p - h, G)) / (2 * h)
        assert np.max(np.abs(fd - balance_value(system, p, G))) < 1e-6


def test_balance_examples():
    s = irsa(3)
    p = np.linspace(0, 1, 51)
    G = 0.9
    assert np.allclose(balance_value(s, p, G), 2 * p * (p - 1 + np.exp(-3 * G * p ** 2)), atol=1e-15)
    assert balance_value(s, 0.0, G) == 0.0
    assert balance_value(s, 1.0, G) == pytest.approx(2 * np.exp(-3 * G))


def test_potential_decreasing_in_load():
    p = np.linspace(0.05, 1, 20)
    U = np.array([potential_value(irsa(4), p, G) for G in np.linspace(0.1, 2.0, 15)])
    assert np.all(np.diff(U, axis=0) < 0)


def test_domain_errors():
    with pytest.raises(DomainError):
        potential_value(irsa(), 1.2, 0.5)
    with pytest.raises(DomainError):
        balance_value(irsa(), 0.5, -1.0)


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------


def test_example_irsa_triple():
    s = irsa(3)
    assert single_system_threshold(s) == pytest.approx(0.8184, abs=2e-4)
    assert potential_threshold(s) == pytest.approx(0.9179, abs=2e-4)
    assert potential_upper_bound(s) == pytest.approx(0.9405, abs=2e-4)


@pytest.mark.parametrize("model,d,want", [(DFold(2), 3, 1.5528), (DFold(3), 6, 1.3487)])
def test_single_system_threshold_values(model, d, want):
    assert single_system_threshold(ScalarSystem(DegreeDistribution.regular(d), model)) == pytest.approx(want, abs=2e-4)


def test_single_system_threshold_is_balance_sup():
    # oracle: sup{G : U'(p;G) > 0 on (0,1)} by bisection on a dense p grid
    s = irsa(4)
    p = np.linspace(1e-4, 1 - 1e-4, 20001)
    lo, hi = 0.1, 2.0
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if np.all(balance_value(s, p, mid) > 0):
            lo = mid
        else:
            hi = mid
    assert single_system_threshold(s) == pytest.approx(lo, abs=1e-4)


def test_upper_bound_solves_area_equation():
    for s in (irsa(3), ScalarSystem(DegreeDistribution.regular(3), DFold(2))):
        G = potential_upper_bound(s)
        assert abs(potential_value(s, 1.0, G)) < 1e-10
    assert potential_upper_bound(ScalarSystem(DegreeDistribution.regular(3), DFold(2))) == pytest.approx(1.9790, abs=2e-4)
    assert potential_upper_bound(ScalarSystem(DegreeDistribution.regular(5), DFold(3))) == pytest.approx(3.0, abs=2e-4)


def test_potential_threshold_definition():
    s = irsa(3)
    g = potential_threshold(s)
    assert min_potential(s, g - 1e-6)[1] >= -1e-12
    assert min_potential(s, g + 1e-5)[1] < 0


@pytest.mark.parametrize("model", [SlottedAloha(), DFold(2), DFold(3), DFoldMixture({1: 0.5, 2: 0.5})],
                         ids=lambda m: m.name)
def test_threshold_ordering(model):
    for d in (3, 4, 5, 6):
        s = ScalarSystem(DegreeDistribution.regular(d), model)
        g_s, g_up = single_system_threshold(s), potential_upper_bound(s)
        assert g_s < potential_threshold(s, g_s, g_up) < g_up


# ---------------------------------------------------------------------------
# saturation quantities
# ---------------------------------------------------------------------------


def test_unstable_fixed_point_root_oracle():
    s = irsa(3)
    G = 0.9
    p = np.linspace(1e-6, 1, 1_000_001)
    b = p - 1 + np.exp(-3 * G * p ** 2)
    first = p[np.argmax(b < 0)]
    assert minimum_unstable_fixed_point(s, G) == pytest.approx(first, abs=2e-6)


def test_unstable_fixed_point_near_single_threshold():
    s = irsa(3)
    g_s = single_system_threshold(s)
    # argmin of the single-system ratio
    p = np.linspace(1e-4, 1 - 1e-4, 200001)
    p_star = p[np.argmin(-np.log(1 - p) / (3 * p ** 2))]
    assert minimum_unstable_fixed_point(s, g_s + 1e-4) == pytest.approx(p_star, abs=2e-2)
    with pytest.raises(DomainError):
        minimum_unstable_fixed_point(s, g_s - 0.01)


def test_u_and_gap_decrease_in_load():
    s = irsa(3)
    g_s = single_system_threshold(s)
    loads = np.linspace(0.83, 0.915, 8)
    u = [minimum_unstable_fixed_point(s, G, g_s) for G in loads]
    gap = [energy_gap(s, G, g_s) for G in loads]
    assert np.all(np.diff(u) < 0)
    assert np.all(np.diff(gap) < 0)
    assert energy_gap(s, 0.85, g_s) > 0


def test_energy_gap_vanishes_at_potential_threshold():
    s = irsa(3)
    assert abs(energy_gap(s, potential_threshold(s))) < 1e-4


@pytest.mark.parametrize("d,formula", [(3, lambda G: 4 + 12 * G), (4, lambda G: 9 + 36 * G)])
def test_k_fh_analytic_and_grid(d, formula):
    s = irsa(d)
    for G in (0.5, 0.9):
        assert k_fh_constant(s, G) == pytest.approx(formula(G), abs=1e-12)
        assert abs(k_fh_constant(s, G, method="grid") - k_fh_constant(s, G)) < 1e-8


def test_k_fh_dfold_peak():
    s = ScalarSystem(DegreeDistribution.regular(3), DFold(3))
    for G in (0.4, 1.5):
        assert abs(k_fh_constant(s, G, method="grid") - k_fh_constant(s, G)) < 1e-8


def test_window_bound_behaviour():
    s = irsa(3)
    g_s, g_c = single_system_threshold(s), potential_threshold(s)
    loads = np.linspace(0.83, 0.915, 6)
    b = [saturation_window_bound(s, G, g_s, g_c) for G in loads]
    assert all(np.isfinite(b)) and all(x > 0 for x in b)
    assert np.all(np.diff(b) > 0)
    assert saturation_window_bound(s, g_c - 1e-4, g_s, g_c) > 100 * b[0]
    with pytest.raises(DomainError):
        saturation_window_bound(s, 0.95, g_s, g_c)


def test_report_fields():
    r = potential_report(irsa(3), n_samples=4)
    assert r.G_s_star < r.G_conv_star < r.G_up_star
    assert all(e > 0 for e in r.delta_E)
    assert len(r.to_dict()["samples"]) == 4


def test_admissible_system():
    assert irsa(3).check_admissible()
    assert ScalarSystem(DegreeDistribution.regular(4), DFold(2)).check_admissible()
