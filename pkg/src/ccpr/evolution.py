"""Density evolution for coded Poisson receivers and their coupled versions.

Iteration runs on the edge-perspective probabilities ``q`` (a copy's user end
is still unresolved).  The matching ``p`` values, ``q = lambda(p)``, come out
of the same update for free: ``p`` is one minus the averaged receiver
success, so no inverse of ``lambda`` is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DomainError
from .models import CprSystem, DegreeDistribution, SlottedAloha, clamp_probability

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000
SWEEP_MAX_ITER = 10_000
STABLE_THRESHOLD = 1e-5
# Batch runs without history go through the compiled loop when every receiver is D-fold based.
USE_COMPILED = True


@dataclass(frozen=True)
class CcprSystem:
    """A base CPR copied over ``L`` stages with receiver ends spread over ``w`` stages.

    ``mode="circular"`` uses ``stage_loads`` (an ``L x K`` table, default the
    base loads at every stage); ``mode="punctured"`` zeroes the loads of the
    last ``w - 1`` stages and keeps those stages in the recursion.
    """

    base: CprSystem
    L: int
    w: int
    mode: str = "punctured"
    stage_loads: tuple | None = None

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise DomainError(f"L must be a positive integer, got {self.L!r}")
        if int(self.w) != self.w or not 1 <= self.w <= self.L:
            raise DomainError(f"window must satisfy 1 <= w <= L, got w={self.w!r}, L={self.L}")
        if self.mode not in ("circular", "punctured"):
            raise DomainError(f"mode must be 'circular' or 'punctured', got {self.mode!r}")
        if self.stage_loads is not None:
            if self.mode == "punctured":
                raise DomainError("punctured systems derive their stage loads from the base loads")
            table = np.asarray(self.stage_loads, dtype=float)
            if table.shape != (self.L, self.base.K) or np.any(table < 0.0):
                raise DomainError(f"stage_loads must be a non-negative {self.L}x{self.base.K} table")
            object.__setattr__(self, "stage_loads", tuple(map(tuple, table)))

    @classmethod
    def circular(cls, base: CprSystem, L: int, w: int, stage_loads=None) -> "CcprSystem":
        return cls(base=base, L=L, w=w, mode="circular", stage_loads=stage_loads)

    @classmethod
    def punctured(cls, base: CprSystem, L: int, w: int) -> "CcprSystem":
        return cls(base=base, L=L, w=w, mode="punctured")

    @property
    def active_stages(self) -> int:
        """Number of leading stages that carry users (``L - w + 1`` when punctured)."""
        return self.L - self.w + 1 if self.mode == "punctured" else self.L

    @cached_property
    def loads(self):
        """Per-stage offered loads, shape ``(K, L)``."""
        if self.stage_loads is not None:
            return np.asarray(self.stage_loads, dtype=float).T.copy()
        out = np.repeat(self.base.G_array[:, None], self.L, axis=1)
        if self.mode == "punctured":
            out[:, self.active_stages:] = 0.0
        return out

    def with_loads(self, G) -> "CcprSystem":
        return replace(self, base=self.base.with_loads(G), stage_loads=None)

    def to_dict(self) -> dict:
        out = {"base": self.base.to_dict(), "L": self.L, "w": self.w, "mode": self.mode}
        if self.stage_loads is not None:
            out["stage_loads"] = [list(r) for r in self.stage_loads]
        return out


@dataclass(frozen=True)
class EvolutionTrace:
    """Outcome of one density-evolution run.

    Arrays are indexed ``[class, stage]``; a base CPR has a single stage.
    ``q_history``/``p_history`` hold every iterate (starting from the all-ones
    state) when the run was asked to keep them.
    """

    q: np.ndarray
    p: np.ndarray
    converged: bool
    iterations: int
    final_success: np.ndarray
    loads: np.ndarray | None = None
    q_history: np.ndarray | None = None
    p_history: np.ndarray | None = None

    @property
    def iterates(self):
        return self.q_history

    def is_stable(self, threshold: float = STABLE_THRESHOLD, stage: int | None = None, on: str = "p") -> bool:
        """Stable iff every final ``p`` (or ``q``) value, or those of one probe stage, is below ``threshold``."""
        vals = self.p if on == "p" else self.q
        if stage is not None:
            vals = vals[:, stage]
        return bool(np.all(vals < threshold))


# ---------------------------------------------------------------------------
# Base CPR
# ---------------------------------------------------------------------------


def _validate_controls(max_iter, tol):
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol!r}")
    if max_iter < 1:
        raise DomainError(f"max_iter must be at least 1, got {max_iter!r}")


def _lam_all(degrees, p):
    return np.stack([d.lam(p[k]) for k, d in enumerate(degrees)])


def _Lambda_all(degrees, p):
    return np.stack([d.Lambda(p[k]) for k, d in enumerate(degrees)])


def cpr_evolve(system: CprSystem, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
               keep_history: bool = True) -> EvolutionTrace:
    """Iterate the multi-class density-evolution map of a base CPR from ``q = 1``.

    Stops when the max-norm change of ``q`` drops below ``tol`` or after
    ``max_iter`` updates; non-convergence is reported, not raised.
    """
    _validate_controls(max_iter, tol)
    K, J = system.K, system.J
    R = system.R
    base = system.base_loads()  # rho~_j as columns, shape (K, J)
    q = np.ones(K)
    p = np.ones(K)
    qs, ps = [q.copy()], [p.copy()]

    def receiver_success(q):
        x = np.zeros(K)
        for j, model in enumerate(system.success):
            x += R[:, j] * model.prob(q * base[:, j])
        return x

    converged = False
    it = 0
    while it < max_iter:
        p_new = clamp_probability(1.0 - receiver_success(q))
        q_new = clamp_probability(np.array([d.lam(p_new[k]) for k, d in enumerate(system.degrees)]))
        it += 1
        delta = np.max(np.abs(q_new - q))
        q, p = q_new, p_new
        if keep_history:
            qs.append(q.copy())
            ps.append(p.copy())
        if delta < tol:
            converged = True
            break

    x = receiver_success(q)
    final = clamp_probability(1.0 - np.array([d.Lambda(1.0 - x[k]) for k, d in enumerate(system.degrees)]))
    loads = q[:, None] * base
    return EvolutionTrace(
        q=q[:, None], p=p[:, None], converged=converged, iterations=it,
        final_success=np.atleast_1d(final)[:, None], loads=loads[:, :, None],
        q_history=np.array(qs)[:, :, None] if keep_history else None,
        p_history=np.array(ps)[:, :, None] if keep_history else None,
    )


# ---------------------------------------------------------------------------
# Coupled CPR (circular indices, batched over load configurations)
# ---------------------------------------------------------------------------


def _back_window(a, w):
    """``out[..., l] = sum_{s<w} a[..., (l - s) mod L]``."""
    out = a.copy()
    for s in range(1, w):
        out += np.roll(a, s, axis=-1)
    return out


def _fwd_window(a, w):
    """``out[..., l] = sum_{s<w} a[..., (l + s) mod L]``."""
    out = a.copy()
    for s in range(1, w):
        out += np.roll(a, -s, axis=-1)
    return out


class _CoupledKernel:
    """One coupled density-evolution update for a batch of load tables.

    State arrays have shape ``(K, B, L)``.
    """

    def __init__(self, base: CprSystem, w: int):
        self.base = base
        self.w = w
        self.K, self.J = base.K, base.J
        self.mean = base.mean_degrees[:, None, None]
        # r_kj / (w F_j) and r_kj / w per receiver class.
        self.load_scale = [(base.R[:, j] / (w * base.F[j]))[:, None, None] for j in range(self.J)]
        self.succ_scale = [(base.R[:, j] / w)[:, None, None] for j in range(self.J)]

    def compiled_args(self):
        """Arguments for the compiled loop, or ``None`` when a receiver is not D-fold based."""
        folds = [m.fold_weights() for m in self.base.success]
        if any(f is None for f in folds):
            return None
        n = max(len(f) for f in folds)
        D = np.ones((self.J, n), dtype=np.int64)
        W = np.zeros((self.J, n))
        for j, f in enumerate(folds):
            D[j, :len(f)] = [d for d, _ in f]
            W[j, :len(f)] = [p for _, p in f]
        width = max(len(d._lam_poly) for d in self.base.degrees)
        C = np.zeros((self.K, width))
        for k, d in enumerate(self.base.degrees):
            C[k, :len(d._lam_poly)] = d._lam_poly
        return (
            self.base.mean_degrees.astype(float),
            np.array([c[:, 0, 0] for c in self.load_scale]),
            np.array([c[:, 0, 0] for c in self.succ_scale]),
            D, W, np.array([len(f) for f in folds], dtype=np.int64), C, self.w,
        )

    def receiver_loads(self, q, G):
        S = _back_window(q * G * self.mean, self.w)
        return [S * c for c in self.load_scale]

    def averaged_success(self, q, G):
        T = np.zeros_like(q)
        for j, rho in enumerate(self.receiver_loads(q, G)):
            T += self.succ_scale[j] * self.base.success[j].prob(rho)
        return _fwd_window(T, self.w)

    def step(self, q, G):
        p = clamp_probability(1.0 - self.averaged_success(q, G))
        q_new = clamp_probability(_lam_all(self.base.degrees, p))
        return q_new, p

    def final_success(self, q, G):
        x = self.averaged_success(q, G)
        return clamp_probability(1.0 - _Lambda_all(self.base.degrees, 1.0 - x))


def _run_kernel(kernel: _CoupledKernel, G, max_iter, tol, keep_history=False):
    """Iterate ``kernel`` on load tables ``G`` of shape ``(K, B, L)`` from all-ones.

    Batch members that meet the tolerance are frozen and dropped from the
    active set, so the cost tracks the slowest member only.
    """
    K, B, L = G.shape
    args = kernel.compiled_args() if USE_COMPILED and not keep_history else None
    if args is not None:
        from ._kernels import run_batch

        mean, ls, ss, D, W, n, C, w = args
        q, p, conv, iters = run_batch(np.ascontiguousarray(G.transpose(1, 0, 2)), mean, ls, ss, D, W, n, C,
                                      w, int(max_iter), float(tol))
        return q.transpose(1, 0, 2), p.transpose(1, 0, 2), conv, iters, (None, None)
    q_out = np.ones((K, B, L))
    p_out = np.ones((K, B, L))
    iters = np.full(B, max_iter, dtype=int)
    conv = np.zeros(B, dtype=bool)
    active = np.arange(B)
    q = q_out.copy()
    Ga = G
    hist_q, hist_p = ([q[:, 0].copy()], [q[:, 0].copy()]) if keep_history else (None, None)
    it = 0
    while it < max_iter and active.size:
        q_new, p_new = kernel.step(q, Ga)
        it += 1
        if keep_history:
            hist_q.append(q_new[:, 0].copy())
            hist_p.append(p_new[:, 0].copy())
        done = np.max(np.abs(q_new - q), axis=(0, 2)) < tol
        q = q_new
        if done.any():
            idx = active[done]
            q_out[:, idx] = q[:, done]
            p_out[:, idx] = p_new[:, done]
            iters[idx] = it
            conv[idx] = True
            keep = ~done
            active, q, p_new, Ga = active[keep], q[:, keep], p_new[:, keep], Ga[:, keep]
        if it == max_iter and active.size:
            q_out[:, active] = q
            p_out[:, active] = p_new
    hist = (np.array(hist_q), np.array(hist_p)) if keep_history else (None, None)
    return q_out, p_out, conv, iters, hist


def _coupled_trace(kernel, G, q, p, converged, iterations, hist=(None, None)):
    G1 = G[:, None, :]
    q1 = q[:, None, :]
    loads = np.stack([r[:, 0] for r in kernel.receiver_loads(q1, G1)], axis=1)
    return EvolutionTrace(
        q=q, p=p, converged=bool(converged), iterations=int(iterations),
        final_success=kernel.final_success(q1, G1)[:, 0], loads=loads,
        q_history=hist[0], p_history=hist[1],
    )


def ccpr_evolve(system: CcprSystem, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                keep_history: bool = True) -> EvolutionTrace:
    """Iterate the coupled recursion over all ``K`` classes and ``L`` stages from all-ones.

    Indices wrap circularly; punctured stages stay in the recursion with zero load.
    """
    _validate_controls(max_iter, tol)
    kernel = _CoupledKernel(system.base, system.w)
    G = system.loads[:, None, :]
    q, p, conv, iters, hist = _run_kernel(kernel, G, max_iter, tol, keep_history)
    return _coupled_trace(kernel, system.loads, q[:, 0], p[:, 0], conv[0], iters[0], hist)


def _structure_key(system):
    if isinstance(system, CcprSystem):
        b = system.base
        return ("ccpr", system.L, system.w, b.degrees, b.routing, b.partition, b.success)
    return ("cpr", system.degrees, system.routing, system.partition, system.success)


def evolve_many(systems: Sequence, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> list:
    """Run density evolution for many systems that differ only in their loads.

    Base CPRs are run as one-stage, window-one coupled systems (the same
    recursion).  Histories are not kept.
    """
    _validate_controls(max_iter, tol)
    systems = list(systems)
    if not systems:
        return []
    key = _structure_key(systems[0])
    if any(_structure_key(s) != key for s in systems[1:]):
        raise DomainError("evolve_many needs systems that differ only in their offered loads")
    if isinstance(systems[0], CcprSystem):
        base, w = systems[0].base, systems[0].w
        tables = [s.loads for s in systems]
    else:
        base, w = systems[0], 1
        tables = [s.G_array[:, None] for s in systems]
    kernel = _CoupledKernel(base, w)
    G = np.stack(tables, axis=1)
    q, p, conv, iters, _ = _run_kernel(kernel, G, max_iter, tol)
    return [_coupled_trace(kernel, G[:, b], q[:, b], p[:, b], conv[b], iters[b]) for b in range(len(systems))]


# ---------------------------------------------------------------------------
# Single-class punctured recursion with clamped windows
# ---------------------------------------------------------------------------


def _scalar_model(system: CprSystem):
    if system.K != 1 or system.J != 1:
        raise DomainError("this recursion is defined for one user class and one receiver class")
    model = system.success[0]
    if model.n_classes is not None:
        raise DomainError(f"{model.name} is not a single-class success model")
    return model


def punctured_scalar_evolve(system: CcprSystem, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                            keep_history: bool = True) -> EvolutionTrace:
    """Single-class punctured recursion written with clamped (non-circular) windows.

    Only the ``L - w + 1`` loaded stages are carried, so the trace has that
    many columns; it must agree with :func:`ccpr_evolve` on those stages.
    """
    _validate_controls(max_iter, tol)
    if system.mode != "punctured":
        raise DomainError("clamped windows describe the punctured system only")
    model = _scalar_model(system.base)
    deg = system.base.degrees[0]
    w = system.w
    n = system.active_stages
    G = system.base.G[0]
    inv_w = 1.0 / w

    def success(q):
        # Receiver stage l (0 .. n+w-2) sees users of stages max(0, l-w+1) .. min(n-1, l).
        # Sums run in the same order as the circular kernel so both agree to rounding.
        a = np.zeros(n + w - 1)
        a[:n] = q * G * deg.mean
        S = a.copy()
        for s in range(1, w):
            S[s:] += a[:-s]
        P = inv_w * model.total_prob(S * inv_w)
        X = P[:n].copy()
        for s in range(1, w):
            X += P[s:s + n]
        return X

    q = np.ones(n)
    p = np.ones(n)
    qs, ps = [q.copy()], [p.copy()]
    converged = False
    it = 0
    while it < max_iter:
        p_new = clamp_probability(1.0 - success(q))
        q_new = clamp_probability(deg.lam(p_new))
        it += 1
        delta = np.max(np.abs(q_new - q))
        q, p = q_new, p_new
        if keep_history:
            qs.append(q.copy())
            ps.append(p.copy())
        if delta < tol:
            converged = True
            break
    final = clamp_probability(1.0 - deg.Lambda(1.0 - success(q)))
    return EvolutionTrace(
        q=q[None, :], p=p[None, :], converged=converged, iterations=it,
        final_success=np.atleast_1d(final)[None, :],
        q_history=np.array(qs)[:, None, :] if keep_history else None,
        p_history=np.array(ps)[:, None, :] if keep_history else None,
    )


def convolutional_irsa_evolve(G: float, d: int, w: int, L: int, max_iter: int = DEFAULT_MAX_ITER,
                              tol: float = DEFAULT_TOL, keep_history: bool = True) -> EvolutionTrace:
    """Punctured coupled IRSA with every packet sent ``d`` times (slotted ALOHA slots)."""
    if d < 2:
        raise DomainError(f"degree must be at least 2, got {d}")
    base = CprSystem.single(G, DegreeDistribution.regular(d), SlottedAloha())
    return punctured_scalar_evolve(CcprSystem.punctured(base, L, w), max_iter, tol, keep_history)


# ---------------------------------------------------------------------------
# One-sided auxiliary system
# ---------------------------------------------------------------------------


def one_sided_evolve(system: CcprSystem, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                     keep_history: bool = True) -> EvolutionTrace:
    """Iterate the one-sided coupled recursion of a single-class system.

    Uses ``f(x) = 1 - P_suc(x G Lambda'(1))`` and ``h = lambda`` with the
    forward window truncated at ``L`` and the backward window at stage 1.
    After each update every stage from ``L - w + 1`` on is reset to the value
    of stage ``L - w + 1``.  State is ``p``; ``q = h(p)``.
    """
    _validate_controls(max_iter, tol)
    base = system.base
    model = _scalar_model(base)
    deg = base.degrees[0]
    L, w = system.L, system.w
    anchor = L - w  # 0-based index of stage L - w + 1
    a = base.G[0] * deg.mean

    def step(p):
        h = deg.lam(p)
        fwd = np.convolve(h, np.ones(w))[w - 1:] / w  # stage l sums h over l .. min(l+w-1, L)
        g = 1.0 - model.total_prob(a * fwd)
        back = np.convolve(g, np.ones(w))[:L] / w  # stage l sums g over max(1, l-w+1) .. l
        back[anchor:] = back[anchor]
        return clamp_probability(back)

    p = np.ones(L)
    ps = [p.copy()]
    converged = False
    it = 0
    while it < max_iter:
        p_new = step(p)
        it += 1
        delta = np.max(np.abs(deg.lam(p_new) - deg.lam(p)))
        p = p_new
        if keep_history:
            ps.append(p.copy())
        if delta < tol:
            converged = True
            break
    P = np.array(ps)
    return EvolutionTrace(
        q=deg.lam(p)[None, :], p=p[None, :], converged=converged, iterations=it,
        final_success=clamp_probability(1.0 - deg.Lambda(p))[None, :],
        q_history=deg.lam(P)[:, None, :] if keep_history else None,
        p_history=P[:, None, :] if keep_history else None,
    )


def one_sided_bound(one_sided: EvolutionTrace, w: int) -> np.ndarray:
    """Upper bound on each loaded stage of the punctured system from a one-sided run.

    Undoing the index reversal, loaded stage ``m`` (1-based) is bounded by
    one-sided stage ``m + w - 1``.
    """
    L = one_sided.p.shape[1]
    return one_sided.p[0, w - 1:L]
