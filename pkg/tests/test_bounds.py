import math

import numpy as np
import pytest

from ccpr.bounds import (IRSA_TWO_CLASS_ENVELOPES, NEARFAR_ENVELOPES, CapacityEnvelope, all_envelope_bounds,
                         dfold_mixture_bound, dfold_mixture_root, expected_capped, nearfar_bounds,
                         outer_bound_satisfied, policy_bound_curve, two_class_policy_bounds, two_class_system)
from ccpr.errors import DomainError
from ccpr.models import CprSystem, DegreeDistribution, DFold, DFoldReceiver, NearFar, NearFarReceiver
from ccpr.potential import ScalarSystem, potential_upper_bound

D3 = DegreeDistribution.regular(3)
D5 = DegreeDistribution.regular(5)
D2 = DegreeDistribution({2: 0.5102, 4: 0.4898})


def test_expected_capped_against_sum():
    for mu in (0.0, 0.3, 2.0, 7.0):
        for B in (1, 2, 4):
            want = sum(min(n, B) * math.exp(-mu) * mu ** n / math.factorial(n) for n in range(80))
            assert expected_capped(mu, B) == pytest.approx(want, abs=1e-12)


def test_slotted_aloha_example_bound():
    # G <= 1 - exp(-3G) holds at 0.9 and fails at 0.95
    assert dfold_mixture_bound(0.90, D3, {1: 1.0}).holds
    v = dfold_mixture_bound(0.95, D3, {1: 1.0})
    assert not v.holds and v.slack == pytest.approx(1 - math.exp(-2.85) - 0.95, abs=1e-12)


@pytest.mark.parametrize("D", [1, 2, 3])
@pytest.mark.parametrize("d", [3, 4, 5, 6])
def test_dfold_root_equals_potential_upper_bound(D, d):
    dist = DegreeDistribution.regular(d)
    s = ScalarSystem(dist, DFold(D))
    assert dfold_mixture_root(dist, {D: 1.0}) == pytest.approx(potential_upper_bound(s), abs=1e-6)


def test_mixture_root_is_zero_of_slack():
    w = {1: 0.25, 3: 0.75}
    g = dfold_mixture_root(D3, w)
    assert abs(dfold_mixture_bound(g, D3, w).slack) < 1e-10
    assert dfold_mixture_bound(g * 0.99, D3, w).holds
    assert not dfold_mixture_bound(g * 1.01, D3, w).holds


def test_mixture_weights_validation():
    with pytest.raises(DomainError):
        dfold_mixture_bound(0.5, D3, {1: 0.5, 2: 0.4})
    with pytest.raises(DomainError):
        dfold_mixture_bound(-0.1, D3, {1: 1.0})


def test_envelope_validation():
    with pytest.raises(DomainError):
        CapacityEnvelope((1, 2), 1)
    with pytest.raises(DomainError):
        CapacityEnvelope((1, 1), 0)


def test_envelopes_valid_for_receivers():
    for e in NEARFAR_ENVELOPES:
        assert e.is_valid_for(NearFarReceiver())
    for e in IRSA_TWO_CLASS_ENVELOPES:
        assert e.is_valid_for(DFoldReceiver(1, 2))
    assert CapacityEnvelope((1, 1), 2).is_valid_for(DFoldReceiver(2, 2))
    assert not CapacityEnvelope((1, 1), 1).is_valid_for(DFoldReceiver(2, 2))
    assert not CapacityEnvelope((1, 1), 1).is_valid_for(NearFarReceiver())


def test_nearfar_closed_form_matches_generic():
    for G1, G2 in [(0.1, 0.2), (0.4, 0.3), (0.2, 0.6)]:
        sys_ = CprSystem(G=(G1, G2), degrees=(D3, D2), routing=((1.0,), (1.0,)), partition=(1.0,),
                         success=(NearFar(),))
        closed = nearfar_bounds(G1, G2, D3, D2)
        generic = all_envelope_bounds(sys_, NEARFAR_ENVELOPES)
        for a, b in zip(closed, generic):
            assert a.slack == pytest.approx(b.slack, abs=1e-12)


@pytest.mark.parametrize("policy", ["complete-sharing", "reservation"])
def test_policy_closed_forms_match_generic(policy):
    rng = np.random.default_rng(3)
    for G1, G2 in rng.uniform(0, 0.8, size=(20, 2)):
        sys_ = two_class_system(policy, G1, G2, D5, D2)
        closed = two_class_policy_bounds(policy, G1, G2, D5, D2)
        generic = {v.label: v for v in all_envelope_bounds(sys_)}
        assert closed[0].slack == pytest.approx(generic["b=(1, 1),B=1"].slack, abs=1e-12)
        if policy == "reservation":
            assert closed[1].slack == pytest.approx(generic["b=(0, 1),B=1"].slack, abs=1e-12)


def test_reservation_cap_at_zero_class_one_load():
    # G2 <= 1/2 - exp(-2 G2 Lambda2'(1)) / 2 at G1 = 0
    G2 = 0.3
    cap = two_class_policy_bounds("reservation", 0.0, G2, D5, D2)[1]
    assert cap.slack == pytest.approx(0.5 - 0.5 * math.exp(-2 * G2 * D2.mean) - G2, abs=1e-12)
    (g1, top), = policy_bound_curve("reservation", D5, D2, [0.0])
    assert top < 0.5


def test_bound_curve_is_non_increasing():
    curve = policy_bound_curve("complete-sharing", D5, D2, np.linspace(0, 1.0, 21))
    g2 = np.array([g for _, g in curve if not np.isnan(g)])
    assert np.all(np.diff(g2) <= 1e-9)


def test_outer_bound_for_single_class_dfold():
    s = CprSystem.single(1.9, D3, DFold(2))
    v = outer_bound_satisfied(s, CapacityEnvelope((1,), 2))
    assert v.holds
    assert v.slack == pytest.approx(dfold_mixture_bound(1.9, D3, {2: 1.0}).slack, abs=1e-12)


def test_unknown_policy():
    with pytest.raises(DomainError):
        two_class_policy_bounds("greedy", 0.1, 0.1, D5, D2)
