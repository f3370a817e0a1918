"""Outer bounds on stability regions from affine capacity envelopes.

If a receiver never decodes more than ``B`` packets of the classes marked by
``b`` (binary), every stable load satisfies

    sum_k b_k G_k <= sum_j F_j E[min(Poisson(mu_j), B)],
    mu_j = sum_k b_k G_k Lambda_k'(1) r_kj / F_j.

Verdicts carry the signed slack ``rhs - lhs`` so zero contours can be traced.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import optimize, stats

from .errors import DomainError, NumericError
from .models import SUM_TOL, CprSystem, DegreeDistribution, PhiReceiver, SlottedAloha


@dataclass(frozen=True)
class CapacityEnvelope:
    b: tuple
    B: int

    def __post_init__(self):
        b = tuple(int(v) if v in (0, 1) else v for v in self.b)
        if not b or any(v not in (0, 1) for v in b):
            raise DomainError(f"envelope weights must be binary, got {self.b!r}")
        if int(self.B) != self.B or self.B < 1:
            raise DomainError(f"envelope bound must be a positive integer, got {self.B!r}")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "B", int(self.B))

    def is_valid_for(self, receiver: PhiReceiver, n_max: int = 6) -> bool:
        """Brute-force check that ``sum b_k n_k <= B`` on the capacity region ``{n : phi(n) = n}``."""
        K = receiver.n_classes
        if K != len(self.b):
            raise DomainError(f"envelope has {len(self.b)} weights, receiver has {K} classes")
        b = np.array(self.b)
        for n in itertools.product(range(n_max + 1), repeat=K):
            n = np.array(n)
            if np.array_equal(receiver.phi(n), n) and b @ n > self.B:
                return False
        return True


@dataclass(frozen=True)
class BoundVerdict:
    holds: bool
    slack: float
    label: str = ""


def _verdict(lhs, rhs, label=""):
    slack = float(rhs - lhs)
    return BoundVerdict(slack >= 0.0, slack, label)


def expected_capped(mu, B: int) -> float:
    """``E[min(Poisson(mu), B)]``."""
    tau = np.arange(B)
    pmf = stats.poisson.pmf(tau, mu)
    return float(np.sum(tau * pmf) + B * (1.0 - np.sum(pmf)))


def envelope_loads(system: CprSystem, envelope: CapacityEnvelope) -> np.ndarray:
    """``mu_j`` for every receiver class."""
    if len(envelope.b) != system.K:
        raise DomainError(f"envelope has {len(envelope.b)} weights for {system.K} classes")
    b = np.array(envelope.b, dtype=float)
    w = b * system.G_array * system.mean_degrees
    return (w @ system.R) / system.F


def outer_bound_satisfied(system: CprSystem, envelope: CapacityEnvelope) -> BoundVerdict:
    """Check the envelope bound at the loads of ``system``.

    All receiver classes are assumed induced from the same phi-ALOHA family
    that has ``envelope`` as an affine capacity envelope.
    """
    mu = envelope_loads(system, envelope)
    lhs = float(np.dot(envelope.b, system.G_array))
    rhs = sum(F * expected_capped(m, envelope.B) for F, m in zip(system.F, mu))
    return _verdict(lhs, rhs, f"b={envelope.b},B={envelope.B}")


def _mixture_rhs(G, mean, weights):
    x = G * mean
    total = 0.0
    for D, pi in weights:
        tau = np.arange(D)
        total += pi * (D - np.sum((D - tau) * stats.poisson.pmf(tau, x)))
    return float(total)


def _check_weights(weights: Mapping[int, float]):
    items = sorted((int(D), float(p)) for D, p in dict(weights).items())
    if not items or any(D < 1 or p < 0.0 for D, p in items):
        raise DomainError(f"mixture weights need positive D and non-negative probabilities, got {weights!r}")
    if abs(math.fsum(p for _, p in items) - 1.0) > SUM_TOL:
        raise DomainError(f"mixture weights must sum to 1, got {weights!r}")
    return items


def dfold_mixture_bound(G: float, dist: DegreeDistribution, weights: Mapping[int, float]) -> BoundVerdict:
    """``G <= sum_D pi_D (D - sum_{tau<D} (D - tau) Poisson(tau; G Lambda'(1)))``."""
    items = _check_weights(weights)
    if G < 0:
        raise DomainError(f"load must be non-negative, got {G}")
    return _verdict(G, _mixture_rhs(G, dist.mean, items), "dfold-mixture")


def dfold_mixture_root(dist: DegreeDistribution, weights: Mapping[int, float]) -> float:
    """Positive load where the mixture bound holds with equality."""
    items = _check_weights(weights)

    def g(G):
        return _mixture_rhs(G, dist.mean, items) - G

    lo = 1e-3
    while g(lo) <= 0.0:
        lo /= 2.0
        if lo < 1e-12:
            raise NumericError("mixture bound has no positive sign near zero")
    hi = 1.0
    while g(hi) > 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise NumericError("mixture bound did not change sign")
    return float(optimize.brentq(g, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps))


NEARFAR_ENVELOPES = (CapacityEnvelope((1, 0), 1), CapacityEnvelope((0, 1), 1), CapacityEnvelope((1, 1), 2))
IRSA_TWO_CLASS_ENVELOPES = (CapacityEnvelope((1, 0), 1), CapacityEnvelope((0, 1), 1), CapacityEnvelope((1, 1), 1))


def nearfar_bounds(G1: float, G2: float, dist1: DegreeDistribution, dist2: DegreeDistribution) -> tuple:
    """The three near-far envelope bounds with one receiver class, in closed form."""
    m1, m2 = G1 * dist1.mean, G2 * dist2.mean
    m = m1 + m2
    return (
        _verdict(G1, 1.0 - math.exp(-m1), "(1,0),B=1"),
        _verdict(G2, 1.0 - math.exp(-m2), "(0,1),B=1"),
        _verdict(G1 + G2, math.exp(-m) * m + 2.0 * (1.0 - math.exp(-m) * (1.0 + m)), "(1,1),B=2"),
    )


POLICIES = ("complete-sharing", "reservation")


def policy_routing(policy: str) -> tuple:
    if policy == "complete-sharing":
        return ((0.5, 0.5), (0.5, 0.5))
    if policy == "reservation":
        return ((0.5, 0.5), (0.0, 1.0))
    raise DomainError(f"unknown policy {policy!r}; expected one of {POLICIES}")


def two_class_system(policy: str, G1: float, G2: float, dist1: DegreeDistribution,
                     dist2: DegreeDistribution) -> CprSystem:
    """Two user classes, two slotted-ALOHA receiver classes with ``F = (0.5, 0.5)``."""
    return CprSystem(G=(G1, G2), degrees=(dist1, dist2), routing=policy_routing(policy), partition=(0.5, 0.5),
                     success=(SlottedAloha(), SlottedAloha()))


def two_class_policy_bounds(policy: str, G1: float, G2: float, dist1: DegreeDistribution,
                            dist2: DegreeDistribution) -> tuple:
    """Closed-form outer bounds for the two-class IRSA system under a routing policy.

    Complete sharing gives one constraint; receiver reservation gives the
    sum constraint and a cap on ``G2``.
    """
    a1, a2 = G1 * dist1.mean, G2 * dist2.mean
    if policy == "complete-sharing":
        return (_verdict(G1 + G2, 1.0 - math.exp(-a1 - a2), "sum"),)
    if policy == "reservation":
        return (
            _verdict(G1 + G2, 1.0 - 0.5 * math.exp(-a1) - 0.5 * math.exp(-a1 - 2.0 * a2), "sum"),
            _verdict(G2, 0.5 - 0.5 * math.exp(-2.0 * a2), "G2-cap"),
        )
    raise DomainError(f"unknown policy {policy!r}; expected one of {POLICIES}")


def all_envelope_bounds(system: CprSystem, envelopes=IRSA_TWO_CLASS_ENVELOPES) -> tuple:
    """Generic envelope verdicts for every envelope in ``envelopes``."""
    return tuple(outer_bound_satisfied(system, e) for e in envelopes)


def _boundary_along(policy_fn, G1: float, hi: float = 2.0, tol: float = 1e-10) -> float:
    """Largest ``G2`` with every verdict of ``policy_fn(G1, G2)`` holding (bisection on G2)."""

    def ok(G2):
        return all(v.slack >= 0.0 for v in policy_fn(G1, G2))

    if not ok(0.0):
        return float("nan")
    # the feasible G2 set is an interval [0, g*] for these concave-in-load bounds
    lo, top = 0.0, hi
    if ok(top):
        return top
    while top - lo > tol:
        mid = 0.5 * (lo + top)
        if ok(mid):
            lo = mid
        else:
            top = mid
    return lo


def policy_bound_curve(policy: str, dist1: DegreeDistribution, dist2: DegreeDistribution, G1_values) -> list:
    """Samples ``(G1, max G2)`` of the closed-form outer bound region; NaN where no G2 fits."""
    return [(float(g1), _boundary_along(lambda a, b: two_class_policy_bounds(policy, a, b, dist1, dist2), g1))
            for g1 in G1_values]
