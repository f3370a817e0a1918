"""Degree distributions, Poisson receivers and phi-ALOHA receivers.

Everything here is immutable after construction.  Array-valued helpers put
the user-class axis first, so a load tensor ``rho`` of shape ``(K, ...)``
maps to success probabilities of the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import special, stats

from .errors import DomainError, NumericError

PROB_GUARD = 1e-12
SUM_TOL = 1e-12
TAIL_MASS = 1e-12


def clamp_probability(x):
    """Clip rounding noise into [0, 1]; anything beyond the guard band is a bug."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < -PROB_GUARD) or np.any(arr > 1.0 + PROB_GUARD) or np.any(np.isnan(arr)):
        raise NumericError(f"probability outside [0, 1] beyond guard band: {arr}")
    out = np.clip(arr, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _check_unit_interval(x):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(np.isnan(arr)):
        raise DomainError(f"argument must lie in [0, 1], got {x!r}")
    return arr


def _check_nonnegative(rho):
    arr = np.asarray(rho, dtype=float)
    if np.any(arr < 0.0) or np.any(np.isnan(arr)):
        raise DomainError(f"loads must be non-negative, got {rho!r}")
    return arr


def _maybe_scalar(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


# ---------------------------------------------------------------------------
# Degree distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegreeDistribution:
    """Repetition-degree distribution ``Lambda(x) = sum_d Lambda_d x^d``.

    ``coeffs`` accepts a mapping ``{degree: probability}`` or an iterable of
    ``(degree, probability)`` pairs; it is normalised to a sorted tuple of
    pairs with zero entries dropped.
    """

    coeffs: tuple

    def __post_init__(self):
        raw = self.coeffs.items() if isinstance(self.coeffs, Mapping) else self.coeffs
        pairs = {}
        for d, v in raw:
            if int(d) != d or d < 0:
                raise DomainError(f"degree must be a non-negative integer, got {d!r}")
            v = float(v)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"Lambda_{d} = {v} is not a probability")
            if v > 0.0:
                pairs[int(d)] = pairs.get(int(d), 0.0) + v
        if not pairs:
            raise DomainError("degree distribution has no mass")
        total = math.fsum(pairs.values())
        if abs(total - 1.0) > SUM_TOL:
            raise DomainError(f"degree probabilities sum to {total!r}, not 1")
        if 0 in pairs or 1 in pairs:
            raise DomainError("every packet must be sent at least twice (Lambda_0 = Lambda_1 = 0)")
        object.__setattr__(self, "coeffs", tuple(sorted(pairs.items())))

    @classmethod
    def regular(cls, d: int) -> "DegreeDistribution":
        return cls({d: 1.0})

    @cached_property
    def _poly(self):
        c = np.zeros(self.max_degree + 1)
        for d, v in self.coeffs:
            c[d] = v
        return c

    @cached_property
    def _dpoly(self):
        return npoly.polyder(self._poly)

    @cached_property
    def _lam_poly(self):
        return self._dpoly / self.mean

    @cached_property
    def _lam_d1(self):
        return npoly.polyder(self._lam_poly)

    @cached_property
    def _lam_d2(self):
        return npoly.polyder(self._lam_poly, 2)

    @property
    def max_degree(self) -> int:
        return self.coeffs[-1][0]

    @cached_property
    def mean(self) -> float:
        """Mean degree Lambda'(1)."""
        return math.fsum(d * v for d, v in self.coeffs)

    @property
    def is_regular(self) -> bool:
        return len(self.coeffs) == 1

    # Unchecked vectorised evaluators used on hot paths.
    def Lambda(self, x):
        return npoly.polyval(x, self._poly)

    def Lambda_prime(self, x):
        return npoly.polyval(x, self._dpoly)

    def lam(self, x):
        return npoly.polyval(x, self._lam_poly)

    def lam_prime(self, x):
        return npoly.polyval(x, self._lam_d1)

    def lam_second(self, x):
        return npoly.polyval(x, self._lam_d2)

    def lam_inv(self, y, tol: float = 1e-12):
        """Inverse of the excess-degree generating function, by bisection on [0, 1]."""
        y = _check_unit_interval(y)
        lo = np.zeros_like(y)
        hi = np.ones_like(y)
        # lam is strictly increasing on [0, 1] because Lambda_1 = 0.
        while np.max(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            below = self.lam(mid) < y
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return _maybe_scalar(0.5 * (lo + hi))

    def to_list(self) -> list:
        return [[d, v] for d, v in self.coeffs]


def eval_degree(dist: DegreeDistribution, which: str, x):
    """Evaluate ``Lambda``, ``LambdaPrime`` or ``lambda`` at ``x`` in [0, 1]."""
    x = _check_unit_interval(x)
    funcs = {"Lambda": dist.Lambda, "LambdaPrime": dist.Lambda_prime, "lambda": dist.lam}
    try:
        fn = funcs[which]
    except KeyError:
        raise ValueError(f"unknown generating function {which!r}; pick one of {sorted(funcs)}") from None
    return _maybe_scalar(fn(x))


# ---------------------------------------------------------------------------
# Poisson receivers
# ---------------------------------------------------------------------------


class SuccessModel:
    """Success-probability function of a class of Poisson receivers.

    ``n_classes`` is ``None`` for models that only see the total load (any
    number of user classes); otherwise the model needs exactly that many.
    """

    n_classes: int | None = None
    name: str = ""

    def prob(self, rho):
        """Success probability per class for loads ``rho`` of shape ``(K, ...)``."""
        rho = np.asarray(rho, dtype=float)
        p = self.total_prob(rho.sum(axis=0))
        return np.broadcast_to(p, rho.shape)

    # Scalar-load interface; only meaningful for total-load models.
    def total_prob(self, x):
        raise NotImplementedError

    def total_prob_derivative(self, x):
        raise NotImplementedError

    def total_integral(self, x):
        """``int_0^x P_suc(r) dr``; ``None`` when no closed form is known."""
        return None

    def fold_weights(self):
        """``((D, pi_D), ...)`` when the model is a mixture of D-fold slots, else ``None``."""
        return None

    def total_inverse(self, y, tol: float = 1e-12):
        """Load ``x`` with ``P_suc(x) = y``, by bisection (P_suc is strictly decreasing)."""
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0.0) or np.any(y > 1.0):
            raise DomainError(f"inverse needs y in (0, 1], got {y!r}")
        lo = np.zeros_like(y)
        hi = np.ones_like(y)
        while np.any(self.total_prob(hi) > y):
            hi = np.where(self.total_prob(hi) > y, 2.0 * hi, hi)
        while np.max(hi - lo) > tol * np.maximum(1.0, np.max(hi)):
            mid = 0.5 * (lo + hi)
            above = self.total_prob(mid) > y
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        return _maybe_scalar(0.5 * (lo + hi))

    def to_dict(self) -> dict:
        return {"kind": self.name}

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class SlottedAloha(SuccessModel):
    name = "slotted-aloha"

    def total_prob(self, x):
        return np.exp(-np.asarray(x, dtype=float))

    def total_prob_derivative(self, x):
        return -np.exp(-np.asarray(x, dtype=float))

    def total_integral(self, x):
        return -np.expm1(-np.asarray(x, dtype=float))

    def total_inverse(self, y, tol: float = 1e-12):
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0.0) or np.any(y > 1.0):
            raise DomainError(f"inverse needs y in (0, 1], got {y!r}")
        return _maybe_scalar(-np.log(y))

    def fold_weights(self):
        return ((1, 1.0),)


class DFold(SuccessModel):
    """Induced Poisson receiver of a D-fold ALOHA slot: ``P(Poisson(x) <= D-1)``."""

    name = "dfold"

    def __init__(self, D: int):
        if int(D) != D or D < 1:
            raise DomainError(f"D must be a positive integer, got {D!r}")
        self.D = int(D)

    def total_prob(self, x):
        return special.gammaincc(self.D, np.asarray(x, dtype=float))

    def total_prob_derivative(self, x):
        return -stats.poisson.pmf(self.D - 1, np.asarray(x, dtype=float))

    def total_integral(self, x):
        # Integration by parts: sum_{t=1}^{D} P(t, x) with P the regularised lower gamma.
        x = np.asarray(x, dtype=float)
        return sum(special.gammainc(t, x) for t in range(1, self.D + 1))

    def fold_weights(self):
        return ((self.D, 1.0),)

    def to_dict(self):
        return {"kind": self.name, "D": self.D}


class DFoldMixture(SuccessModel):
    """Receiver drawn as a D-fold ALOHA slot with probability ``weights[D]``."""

    name = "dfold-mixture"

    def __init__(self, weights: Mapping[int, float]):
        items = sorted((int(D), float(p)) for D, p in dict(weights).items() if float(p) > 0.0)
        if not items or any(D < 1 for D, _ in items):
            raise DomainError(f"mixture needs positive-integer D values, got {weights!r}")
        if any(p < 0.0 or p > 1.0 for _, p in items):
            raise DomainError(f"mixture weights must be probabilities, got {weights!r}")
        total = math.fsum(p for _, p in items)
        if abs(total - 1.0) > SUM_TOL:
            raise DomainError(f"mixture weights sum to {total!r}, not 1")
        self.weights = tuple(items)
        self._parts = [(p, DFold(D)) for D, p in items]

    def total_prob(self, x):
        return sum(p * m.total_prob(x) for p, m in self._parts)

    def total_prob_derivative(self, x):
        return sum(p * m.total_prob_derivative(x) for p, m in self._parts)

    def total_integral(self, x):
        return sum(p * m.total_integral(x) for p, m in self._parts)

    def fold_weights(self):
        return self.weights

    def to_dict(self):
        return {"kind": self.name, "weights": {str(D): p for D, p in self.weights}}


class NearFar(SuccessModel):
    """Two-class Poisson receiver induced by the near-far SIC slot."""

    name = "near-far"
    n_classes = 2

    def __init__(self):
        self.receiver = NearFarReceiver()

    def prob(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = np.empty_like(rho)
        for k in range(2):
            out[k] = _induced_batch(self.receiver, k, rho.reshape(2, -1), None).reshape(rho.shape[1:])
        return out


def success_prob(model: SuccessModel, k: int, rho):
    """Success probability of a tagged class-``k`` packet under Poisson loads ``rho``."""
    rho = _check_nonnegative(np.atleast_1d(rho))
    if model.n_classes is not None and rho.shape[0] != model.n_classes:
        raise DomainError(f"{model.name} expects {model.n_classes} load components, got {rho.shape[0]}")
    if not 0 <= k < rho.shape[0]:
        raise DomainError(f"class index {k} out of range")
    return clamp_probability(model.prob(rho)[k])


# ---------------------------------------------------------------------------
# phi-ALOHA receivers
# ---------------------------------------------------------------------------


class PhiReceiver:
    """Deterministic slot model mapping packet counts ``n`` to decoded counts.

    Both implemented receivers are all-or-nothing per class, so ``decodes``
    returns a boolean per class and ``phi(n) = n * decodes(n)``.
    """

    n_classes: int | None = None
    name = ""

    def decodes(self, n):
        raise NotImplementedError

    def phi(self, n):
        n = np.asarray(n)
        if np.any(n < 0):
            raise DomainError(f"packet counts must be non-negative, got {n!r}")
        return n * self.decodes(n)

    def phi_c(self, n):
        n = np.asarray(n)
        return n - self.phi(n)


class DFoldReceiver(PhiReceiver):
    """D-fold ALOHA slot: everything decodes iff at most ``D`` packets arrive."""

    name = "dfold"

    def __init__(self, D: int, n_classes: int = 1):
        if int(D) != D or D < 1:
            raise DomainError(f"D must be a positive integer, got {D!r}")
        self.D = int(D)
        self.n_classes = n_classes

    def decodes(self, n):
        n = np.asarray(n)
        ok = n.sum(axis=0) <= self.D
        return np.broadcast_to(ok, n.shape)


class NearFarReceiver(PhiReceiver):
    name = "near-far"
    n_classes = 2

    def decodes(self, n):
        n = np.asarray(n)
        ok = (n[0] <= 1) & (n[1] <= 1)
        return np.broadcast_to(ok, n.shape)


def poisson_truncation(mu: float, tail: float = TAIL_MASS) -> int:
    """Smallest ``N`` with ``P(Poisson(mu) > N) < tail``."""
    if mu <= 0.0:
        return 0
    n = int(stats.poisson.isf(tail, mu))
    while stats.poisson.sf(n, mu) >= tail:
        n += 1
    while n > 0 and stats.poisson.sf(n - 1, mu) < tail:
        n -= 1
    return n


_LETTERS = "abcdefghij"


def _induced_batch(receiver: PhiReceiver, k: int, rho, truncation):
    """Palm-form expectation ``E[phi_k(N + e_k) / (N_k + 1)]`` for each column of ``rho``."""
    K = rho.shape[0]
    if truncation is None:
        caps = [poisson_truncation(float(np.max(rho[c]))) for c in range(K)]
    else:
        caps = [int(truncation)] * K
    idx = np.indices([c + 1 for c in caps])
    bumped = idx.copy()
    bumped[k] += 1
    table = receiver.phi(bumped)[k] / bumped[k]
    pmfs = [stats.poisson.pmf(np.arange(c + 1)[None, :], rho[i][:, None]) for i, c in enumerate(caps)]
    subs = ",".join("z" + _LETTERS[i] for i in range(K)) + "," + _LETTERS[:K] + "->z"
    return np.einsum(subs, *pmfs, table)


def induced_success_from_phi(receiver: PhiReceiver, k: int, rho, truncation: int | None = None):
    """Success probability of the Poisson receiver induced by a phi-ALOHA receiver.

    Equals ``Theta_k / rho_k`` (throughput over load).  It is computed in the
    equivalent Palm form, which stays defined at ``rho_k = 0``.  Poisson
    counts are truncated at ``truncation``; by default each class uses the
    smallest cap whose tail mass is below 1e-12.
    """
    rho = _check_nonnegative(np.atleast_1d(rho)).astype(float)
    if receiver.n_classes is not None and rho.shape[0] != receiver.n_classes:
        raise DomainError(f"{receiver.name} receiver expects {receiver.n_classes} load components")
    if not 0 <= k < rho.shape[0]:
        raise DomainError(f"class index {k} out of range")
    val = _induced_batch(receiver, k, rho.reshape(rho.shape[0], 1), truncation)[0]
    return clamp_probability(val)


# ---------------------------------------------------------------------------
# Coded Poisson receiver systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CprSystem:
    """A coded-Poisson-receiver system with K user classes and J receiver classes.

    ``routing[k][j]`` is the probability a class-k copy goes to a class-j
    receiver and ``partition[j]`` the fraction of receivers in class j.
    """

    G: tuple
    degrees: tuple
    routing: tuple
    partition: tuple
    success: tuple

    def __post_init__(self):
        G = tuple(float(g) for g in np.atleast_1d(self.G))
        degrees = tuple(self.degrees)
        routing = tuple(tuple(float(r) for r in row) for row in self.routing)
        partition = tuple(float(f) for f in self.partition)
        success = tuple(self.success)
        K, J = len(G), len(partition)
        if K == 0 or J == 0:
            raise DomainError("need at least one user class and one receiver class")
        if len(degrees) != K or len(routing) != K:
            raise DomainError(f"G, degrees and routing must all have {K} rows")
        if any(len(row) != J for row in routing) or len(success) != J:
            raise DomainError(f"routing rows and success models must have {J} entries")
        if any(g < 0.0 or math.isnan(g) for g in G):
            raise DomainError(f"offered loads must be non-negative, got {G}")
        for row in routing:
            if any(r < 0.0 for r in row) or abs(math.fsum(row) - 1.0) > SUM_TOL:
                raise DomainError(f"routing row {row} is not a probability vector")
        if any(f <= 0.0 for f in partition) or abs(math.fsum(partition) - 1.0) > SUM_TOL:
            raise DomainError(f"partition {partition} must be positive and sum to 1")
        for m in success:
            if not isinstance(m, SuccessModel):
                raise DomainError(f"{m!r} is not a SuccessModel")
            if m.n_classes is not None and m.n_classes != K:
                raise DomainError(f"{m.name} receivers need exactly {m.n_classes} user classes")
        for d in degrees:
            if not isinstance(d, DegreeDistribution):
                raise DomainError(f"{d!r} is not a DegreeDistribution")
        for name, val in [("G", G), ("degrees", degrees), ("routing", routing),
                          ("partition", partition), ("success", success)]:
            object.__setattr__(self, name, val)

    @classmethod
    def single(cls, G: float, degree: DegreeDistribution, success: SuccessModel) -> "CprSystem":
        """One user class and one receiver class."""
        return cls(G=(G,), degrees=(degree,), routing=((1.0,),), partition=(1.0,), success=(success,))

    @property
    def K(self) -> int:
        return len(self.G)

    @property
    def J(self) -> int:
        return len(self.partition)

    @cached_property
    def G_array(self):
        return np.array(self.G)

    @cached_property
    def R(self):
        return np.array(self.routing)

    @cached_property
    def F(self):
        return np.array(self.partition)

    @cached_property
    def mean_degrees(self):
        return np.array([d.mean for d in self.degrees])

    def with_loads(self, G: Sequence[float] | float) -> "CprSystem":
        return replace(self, G=tuple(np.atleast_1d(G).astype(float)))

    def base_loads(self):
        """Per-receiver-class load vectors ``G o Lambda'(1) o R_j``, shape (K, J)."""
        return (self.G_array * self.mean_degrees)[:, None] * self.R / self.F[None, :]

    def to_dict(self) -> dict:
        return {
            "G": list(self.G),
            "degrees": [d.to_list() for d in self.degrees],
            "routing": [list(r) for r in self.routing],
            "partition": list(self.partition),
            "success": [m.to_dict() for m in self.success],
        }


def success_model_from_dict(data: Mapping) -> SuccessModel:
    kind = data.get("kind")
    if kind == "slotted-aloha":
        return SlottedAloha()
    if kind == "dfold":
        return DFold(int(data["D"]))
    if kind == "dfold-mixture":
        return DFoldMixture({int(D): float(p) for D, p in dict(data["weights"]).items()})
    if kind == "near-far":
        return NearFar()
    raise DomainError(f"unknown success model {kind!r}")
