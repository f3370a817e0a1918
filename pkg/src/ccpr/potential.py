"""Potential-function analysis of single-class coded Poisson receivers.

The scalar system is ``p -> f(h(p); G)`` with ``f(x; G) = 1 - P_suc(x G Lambda'(1))``
and ``h = lambda``.  Its potential

    U(p; G) = lambda(p)(p - 1) - Lambda(p)/Lambda'(1)
              + 1/(G Lambda'(1)) * int_0^{G Lambda'(1) lambda(p)} P_suc

gives three load thresholds: the single-system threshold ``G_s*`` (U' >= 0
everywhere), the potential threshold ``G_conv*`` (min U >= 0) and the
area bound ``G_up*`` (U(1; G) = 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError, NumericError
from .models import CprSystem, DegreeDistribution, DFold, SlottedAloha, SuccessModel

GRID = 10_000
FINE_GRID = 100_000
SUP_GRID = 1_000_000
QUAD_TOL = 1e-10
# min U is compared against zero with this allowance for rounding.
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class ScalarSystem:
    """Single-class CPR reduced to its ``(f, h)`` pair."""

    degree: DegreeDistribution
    success: SuccessModel

    def __post_init__(self):
        if self.success.n_classes is not None:
            raise DomainError(f"{self.success.name} needs {self.success.n_classes} classes; the potential is scalar")

    @classmethod
    def from_cpr(cls, system: CprSystem) -> "ScalarSystem":
        if system.K != 1 or system.J != 1:
            raise DomainError("the scalar potential needs K = J = 1")
        return cls(system.degrees[0], system.success[0])

    @property
    def mean(self) -> float:
        return self.degree.mean

    def f(self, p, G):
        return 1.0 - self.success.total_prob(np.asarray(p, dtype=float) * G * self.mean)

    def h(self, p):
        return self.degree.lam(np.asarray(p, dtype=float))

    def integral(self, x, method: str = "auto"):
        """``int_0^x P_suc``; closed form when the model has one, adaptive quadrature otherwise."""
        x = np.asarray(x, dtype=float)
        if method != "quad":
            closed = self.success.total_integral(x)
            if closed is not None:
                return closed
            if method == "closed":
                raise DomainError(f"{self.success.name} has no closed-form integral")
        vals = [integrate.quad(self.success.total_prob, 0.0, float(v), epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)[0]
                for v in np.ravel(x)]
        out = np.reshape(vals, x.shape)
        return out if out.ndim else float(out)

    def check_admissible(self, p_grid=None, G_grid=None) -> bool:
        """Grid check of ``f(0;G) = f(p;0) = h(0) = 0``, ``f`` increasing in ``p`` and ``G``, ``h' > 0`` on (0, 1]."""
        p = np.linspace(0.0, 1.0, 201) if p_grid is None else np.asarray(p_grid, dtype=float)
        Gs = np.linspace(0.05, 3.0, 60) if G_grid is None else np.asarray(G_grid, dtype=float)
        if self.h(0.0) != 0.0 or np.any(self.degree.lam_prime(p[p > 0]) <= 0):
            return False
        F = self.f(p[None, :], Gs[:, None])
        if np.any(F[:, 0] != 0.0) or np.any(self.f(p, 0.0) != 0.0):
            return False
        return bool(np.all(np.diff(F, axis=1) > 0) and np.all(np.diff(F[:, 1:], axis=0) > 0))


def _as_scalar_system(sys) -> ScalarSystem:
    return sys if isinstance(sys, ScalarSystem) else ScalarSystem.from_cpr(sys)


def _check_p(p):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)):
        raise DomainError(f"p must lie in [0, 1], got {p!r}")
    return p


def _check_G(G):
    if np.any(np.asarray(G) < 0.0):
        raise DomainError(f"load must be non-negative, got {G!r}")


def _out(v):
    v = np.asarray(v, dtype=float)
    return v if v.ndim else float(v)


def potential_value(sys, p, G, method: str = "auto"):
    """``U(p; G)``.  At ``G = 0`` the limit ``p lambda(p) - Lambda(p)/Lambda'(1)`` is returned."""
    s = _as_scalar_system(sys)
    p = _check_p(p)
    _check_G(G)
    G = np.asarray(G, dtype=float)
    lam = s.h(p)
    base = lam * (p - 1.0) - s.degree.Lambda(p) / s.mean
    scale = G * s.mean
    safe = np.where(scale > 0.0, scale, 1.0)
    area = np.where(scale > 0.0, s.integral(safe * lam, method) / safe, lam)
    U = base + area
    # U(0; G) = 0 exactly: every term carries a factor of lambda(0) = Lambda(0) = 0.
    U = np.where(p == 0.0, 0.0, U)
    return _out(U)


def balance_value(sys, p, G):
    """``U'(p; G) = lambda'(p) (p - 1 + P_suc(G Lambda'(p)))``."""
    s = _as_scalar_system(sys)
    p = _check_p(p)
    _check_G(G)
    x = np.asarray(G, dtype=float) * s.mean * s.h(p)
    return _out(s.degree.lam_prime(p) * (p - 1.0 + s.success.total_prob(x)))


def _grid_min(fun, a, b, n):
    """Minimum of ``fun`` on ``[a, b]``: dense grid, then bounded Brent around the best cell."""
    x = np.linspace(a, b, n + 1)
    y = fun(x)
    i = int(np.argmin(y))
    lo, hi = x[max(i - 1, 0)], x[min(i + 1, n)]
    best_x, best_y = x[i], float(y[i])
    if hi > lo:
        res = optimize.minimize_scalar(lambda t: float(fun(np.array(t))), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        if res.fun < best_y:
            best_x, best_y = float(res.x), float(res.fun)
    return float(best_x), best_y


def single_system_threshold(sys) -> float:
    """``G_s* = inf_{0<p<1} P_suc^{-1}(1 - p) / Lambda'(p)``."""
    s = _as_scalar_system(sys)

    def ratio(p):
        p = np.asarray(p, dtype=float)
        return s.success.total_inverse(1.0 - p) / s.degree.Lambda_prime(p)

    p = np.arange(1, GRID) / GRID
    r = ratio(p)
    if not np.all(np.isfinite(r)):
        raise NumericError("single-system ratio is not finite on the search grid")
    i = int(np.argmin(r))
    if i == 0 or i == r.size - 1:
        raise NumericError("single-system infimum sits on the edge of the search grid")
    res = optimize.minimize_scalar(lambda t: float(ratio(t)), bounds=(p[i - 1], p[i + 1]), method="bounded",
                                   options={"xatol": 1e-12})
    return float(min(res.fun, r[i]))


def min_potential(sys, G) -> tuple[float, float]:
    """``(argmin, min)`` of ``U(.; G)`` over ``[0, 1]``."""
    s = _as_scalar_system(sys)
    return _grid_min(lambda p: potential_value(s, p, G), 0.0, 1.0, GRID)


def potential_upper_bound(sys) -> float:
    """``G_up*``: the positive root of ``G = int_0^{G Lambda'(1)} P_suc``."""
    s = _as_scalar_system(sys)

    def g(G):
        return float(s.integral(G * s.mean)) - G

    lo = 1e-3
    while g(lo) <= 0.0:
        lo /= 2.0
        if lo < 1e-12:
            raise NumericError("area equation has no positive sign near zero")
    hi = 1.0
    while g(hi) > 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise NumericError("area equation did not change sign")
    return float(optimize.brentq(g, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps))


def potential_threshold(sys, G_s: float | None = None, G_up: float | None = None, tol: float = 1e-8) -> float:
    """``G_conv* = sup{G : min_p U(p; G) >= 0}`` by bisection between ``G_s*`` and ``G_up*``."""
    s = _as_scalar_system(sys)
    lo = single_system_threshold(s) if G_s is None else G_s
    hi = potential_upper_bound(s) if G_up is None else G_up

    def ok(G):
        return min_potential(s, G)[1] >= -ZERO_TOL

    if not ok(lo):
        raise NumericError(f"potential is already negative at G_s* = {lo}")
    if ok(hi):
        # min U is non-increasing in G; push the upper end out until it fails.
        while ok(hi):
            hi *= 1.01
            if hi > 1e6:
                raise NumericError("potential threshold bracket not found")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return float(lo)


def minimum_unstable_fixed_point(sys, G: float, G_s: float | None = None) -> float:
    """``u(G)``: the first ``p`` where the balance function turns negative."""
    s = _as_scalar_system(sys)
    G_s = single_system_threshold(s) if G_s is None else G_s
    if G <= G_s:
        raise DomainError(f"u(G) is defined for G > G_s* = {G_s:.6f}, got {G}")

    def bracket(p):
        p = np.asarray(p, dtype=float)
        return p - 1.0 + s.success.total_prob(G * s.mean * s.h(p))

    p = np.arange(1, FINE_GRID + 1) / FINE_GRID
    b = bracket(p)
    neg = np.flatnonzero(b < 0.0)
    if neg.size == 0:
        raise NumericError(f"balance function does not turn negative at G = {G}; too close to G_s*")
    i = int(neg[0])
    if i == 0:
        return 0.0
    return float(optimize.brentq(lambda t: float(bracket(t)), p[i - 1], p[i], xtol=1e-14))


def energy_gap(sys, G: float, G_s: float | None = None) -> float:
    """``Delta E(G) = min_{p in [u(G), 1]} U(p; G)``."""
    s = _as_scalar_system(sys)
    u = minimum_unstable_fixed_point(s, G, G_s)
    return _grid_min(lambda p: potential_value(s, p, G), u, 1.0, GRID)[1]


def _sup_abs(fun, a, b, n=SUP_GRID):
    x = np.linspace(a, b, n + 1)
    return float(np.max(np.abs(fun(x))))


def k_fh_constant(sys, G: float, method: str = "auto") -> float:
    """``K_fh = |h'| + |h'|^2 |f'| + |h''|`` with sup norms over [0, 1], ``f'`` taken at load ``G``.

    ``method="grid"`` forces dense-grid sups (used as an oracle).
    """
    s = _as_scalar_system(sys)
    _check_G(G)
    a = G * s.mean
    nonneg = all(c >= 0.0 for _, c in s.degree.coeffs)
    if method == "auto" and nonneg:
        # lambda has non-negative coefficients, so lambda' and lambda'' peak at p = 1.
        h1 = float(s.degree.lam_prime(1.0))
        h2 = float(s.degree.lam_second(1.0))
    else:
        h1 = _sup_abs(s.degree.lam_prime, 0.0, 1.0)
        h2 = _sup_abs(s.degree.lam_second, 0.0, 1.0)
    if method == "auto" and isinstance(s.success, (SlottedAloha, DFold)):
        D = 1 if isinstance(s.success, SlottedAloha) else s.success.D
        # -P_suc' is the Poisson(rho) pmf at D - 1, which peaks at rho = D - 1.
        rho = min(float(D - 1), a)
        f1 = a * float(-s.success.total_prob_derivative(rho))
    else:
        f1 = a * _sup_abs(s.success.total_prob_derivative, 0.0, a) if a > 0 else 0.0
    return h1 + h1 * h1 * f1 + h2


def saturation_window_bound(sys, G: float, G_s: float | None = None, G_conv: float | None = None) -> float:
    """``K_fh / Delta E(G)``: any window above this certifies stability of the coupled system at ``G``."""
    s = _as_scalar_system(sys)
    G_s = single_system_threshold(s) if G_s is None else G_s
    G_conv = potential_threshold(s, G_s=G_s) if G_conv is None else G_conv
    if not G_s < G < G_conv:
        raise DomainError(f"window bound needs G_s* < G < G_conv*, got G = {G} outside ({G_s:.6f}, {G_conv:.6f})")
    gap = energy_gap(s, G, G_s)
    if gap <= 0.0:
        raise NumericError(f"energy gap is not positive at G = {G}")
    return k_fh_constant(s, G) / gap


@dataclass(frozen=True)
class PotentialReport:
    G_s_star: float
    G_conv_star: float
    G_up_star: float
    loads: tuple
    u_of_G: tuple
    delta_E: tuple
    K_fh: tuple
    window_bound: tuple

    def to_dict(self) -> dict:
        return {
            "G_s_star": self.G_s_star,
            "G_conv_star": self.G_conv_star,
            "G_up_star": self.G_up_star,
            "samples": [
                {"G": g, "u": u, "delta_E": e, "K_fh": k, "window_bound": b}
                for g, u, e, k, b in zip(self.loads, self.u_of_G, self.delta_E, self.K_fh, self.window_bound)
            ],
        }


def potential_report(sys, n_samples: int = 8) -> PotentialReport:
    """Thresholds plus ``u``, ``Delta E``, ``K_fh`` and the window bound at interior loads."""
    s = _as_scalar_system(sys)
    G_s = single_system_threshold(s)
    G_up = potential_upper_bound(s)
    G_conv = potential_threshold(s, G_s=G_s, G_up=G_up)
    # stay clear of both ends, where u(G) or Delta E degenerate
    loads = tuple(float(g) for g in np.linspace(G_s, G_conv, n_samples + 2)[1:-1])
    us, gaps, ks, bounds = [], [], [], []
    for G in loads:
        u = minimum_unstable_fixed_point(s, G, G_s)
        gap = _grid_min(lambda p: potential_value(s, p, G), u, 1.0, GRID)[1]
        k = k_fh_constant(s, G)
        us.append(u)
        gaps.append(gap)
        ks.append(k)
        bounds.append(k / gap if gap > 0 else float("inf"))
    return PotentialReport(G_s, G_conv, G_up, loads, tuple(us), tuple(gaps), tuple(ks), tuple(bounds))
