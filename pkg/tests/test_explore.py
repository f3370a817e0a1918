import pytest

from ccpr.errors import DomainError, NumericError
from ccpr.explore import (coupled_factory, find_threshold, grid_floor, parallel_map, region_boundary_2d,
                          threshold_table)
from ccpr.bounds import two_class_policy_bounds
from ccpr.models import DegreeDistribution, DFold, SlottedAloha

D3 = DegreeDistribution.regular(3)
D5 = DegreeDistribution.regular(5)
D2 = DegreeDistribution({2: 0.5102, 4: 0.4898})


def _square(x):
    return x * x


def test_grid_floor():
    assert grid_floor(0.81849, 1e-4) == 0.8184
    assert grid_floor(0.9179, 1e-4) == 0.9179
    assert grid_floor(1.99999999999999, 1e-4) == 2.0


def test_parallel_map_keeps_order():
    assert parallel_map(_square, range(7), workers=2) == [x * x for x in range(7)]
    assert parallel_map(_square, [3]) == [9]


def test_base_threshold_example():
    r = find_threshold(coupled_factory(SlottedAloha(), D5, 1, 40), 0.0, 1.0)
    assert r.G_star == 0.7017
    assert r.G_unstable == pytest.approx(0.7018)


@pytest.mark.parametrize("d,w", [(3, 1), (3, 2), (4, 3)])
def test_modes_agree(d, w):
    f = coupled_factory(SlottedAloha(), DegreeDistribution.regular(d), w, 20)
    got = {m: find_threshold(f, 0.0, 1.2, 1e-3, m).G_star for m in ("scan", "refine", "bisect")}
    assert len(set(got.values())) == 1, got


def test_refine_agrees_for_dfold():
    f = coupled_factory(DFold(2), D3, 2, 20)
    a = find_threshold(f, 0.0, 2.5, 1e-3, "scan")
    b = find_threshold(f, 0.0, 2.5, 1e-3, "refine")
    assert a.G_star == b.G_star


def test_monotone_consistency():
    r = find_threshold(coupled_factory(SlottedAloha(), D3, 2, 20), 0.0, 1.0, 1e-3, "bisect")
    f = coupled_factory(SlottedAloha(), D3, 2, 20)
    from ccpr.evolution import evolve_many

    grid = [round(r.G_star + k * 1e-3, 6) for k in range(-5, 6)]
    verdicts = [t.is_stable() for t in evolve_many([f(g) for g in grid])]
    assert verdicts == [g <= r.G_star + 1e-9 for g in grid]
    assert all(ok == (G <= r.G_star + 1e-9) for G, ok in r.classifications)


def test_saturation_in_chain_length():
    step = 1e-3
    vals = [find_threshold(coupled_factory(SlottedAloha(), D3, 2, L), 0.8, 1.0, step).G_star for L in (10, 20, 40)]
    assert vals[0] + step >= vals[1] - 1e-9 and vals[1] + step >= vals[2] - 1e-9
    base = find_threshold(coupled_factory(SlottedAloha(), D3, 1, 40), 0.0, 1.0, step).G_star
    assert all(v >= base for v in vals)


def test_errors():
    f = coupled_factory(SlottedAloha(), D3, 1, 40)
    with pytest.raises(DomainError):
        find_threshold(f, 0.95, 1.2)
    with pytest.raises(DomainError):
        find_threshold(f, 0.0, 1.0, mode="golden")
    with pytest.raises(NumericError):
        find_threshold(f, 0.0, 0.5, 1e-2)


def test_small_table_is_worker_independent():
    kw = dict(degrees=(3,), windows=(1, 2), L=20, step=1e-3)
    a = threshold_table(SlottedAloha(), workers=1, **kw)
    b = threshold_table(SlottedAloha(), workers=2, **kw)
    assert a == b
    row = a[0]
    assert row["w1"] == 0.818 and row["G_s"] == 0.818
    assert row["G_conv"] == 0.917 and row["G_up"] == 0.94
    assert row["w1"] <= row["w2"] <= row["G_up"]


@pytest.mark.parametrize("policy", ["complete-sharing", "reservation"])
def test_region_coarse(policy):
    one = region_boundary_2d(policy, D5, D2, 1, grid_step=0.05)
    two = region_boundary_2d(policy, D5, D2, 2, L=20, grid_step=0.05)
    b1, b2 = dict(one.points), dict(two.points)
    assert set(b1) <= set(b2)
    assert all(b2[g] >= b1[g] for g in b1)
    for G1, G2 in one.stable_points + two.stable_points:
        assert all(v.holds for v in two_class_policy_bounds(policy, G1, G2, D5, D2))
    assert one.bound_curve


def test_region_bisect_matches_scan():
    a = region_boundary_2d("reservation", D5, D2, 1, grid_step=0.05)
    b = region_boundary_2d("reservation", D5, D2, 1, grid_step=0.05, mode="bisect")
    assert a.points == b.points
