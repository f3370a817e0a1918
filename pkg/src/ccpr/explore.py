"""Threshold searches and two-class region sweeps driven by density evolution.

Searches work on an integer grid ``G = i * step`` so that every mode visits
the same points.  ``scan`` walks the grid upwards until the first unstable
point.  ``refine`` does the same walk at 100x and 10x the step before the
final pass.  ``bisect`` halves the bracket.  For a stability set that is an
interval starting at zero, all three return the same grid point.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .bounds import policy_bound_curve, two_class_system
from .errors import DomainError, NumericError
from .evolution import (DEFAULT_MAX_ITER, DEFAULT_TOL, STABLE_THRESHOLD, SWEEP_MAX_ITER, CcprSystem,
                        evolve_many)
from .models import CprSystem, DegreeDistribution, SuccessModel
from .potential import ScalarSystem, potential_threshold, potential_upper_bound, single_system_threshold

DEFAULT_STEP = 1e-4
MODES = ("scan", "refine", "bisect")
_CHUNK = 64


def parallel_map(fn: Callable, items: Iterable, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally across processes; output order follows input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def grid_floor(x: float, step: float = DEFAULT_STEP) -> float:
    """Largest multiple of ``step`` not above ``x`` (rounded to the step's decimals)."""
    digits = max(0, -int(math.floor(math.log10(step))))
    return round(math.floor(x / step + 1e-9) * step, digits)


class _Classifier:
    """Stability verdicts for grid indices, cached."""

    def __init__(self, factory, step, max_iter, tol, threshold, stage):
        self.factory = factory
        self.step = step
        self.max_iter = max_iter
        self.tol = tol
        self.threshold = threshold
        self.stage = stage
        self.cache: dict[int, bool] = {}

    def load(self, i: int) -> float:
        return round(i * self.step, 12)

    def __call__(self, indices: Sequence[int]) -> list[bool]:
        todo = [i for i in dict.fromkeys(indices) if i not in self.cache]
        if todo:
            traces = evolve_many([self.factory(self.load(i)) for i in todo], self.max_iter, self.tol)
            for i, t in zip(todo, traces):
                self.cache[i] = t.is_stable(self.threshold, self.stage)
        return [self.cache[i] for i in indices]


def _first_unstable(classify: _Classifier, start: int, stop: int, stride: int = 1) -> int | None:
    """First index in ``start, start+stride, ... <= stop`` classified unstable."""
    i = start
    while i <= stop:
        batch = list(range(i, min(stop, i + stride * (_CHUNK - 1)) + 1, stride))
        for j, ok in zip(batch, classify(batch)):
            if not ok:
                return j
        i = batch[-1] + stride
    return None


@dataclass(frozen=True)
class ThresholdResult:
    """Last stable grid load ``G_star`` and the first unstable one above it."""

    G_star: float
    G_unstable: float
    step: float
    mode: str
    label: dict = field(default_factory=dict)
    classifications: tuple = ()

    def to_dict(self) -> dict:
        return {"G_star": self.G_star, "G_unstable": self.G_unstable, "step": self.step, "mode": self.mode,
                **self.label}


def find_threshold(system_factory: Callable[[float], object], G_lo: float, G_hi: float,
                   step: float = DEFAULT_STEP, mode: str = "scan", max_iter: int = DEFAULT_MAX_ITER,
                   tol: float = DEFAULT_TOL, threshold: float = STABLE_THRESHOLD, stage: int | None = None,
                   label: dict | None = None) -> ThresholdResult:
    """Locate the first unstable load above ``G_lo`` on the grid of spacing ``step``.

    ``system_factory`` maps a load to a system; all its outputs must differ
    only in loads so they can be iterated as one batch.
    """
    if step <= 0:
        raise DomainError(f"step must be positive, got {step}")
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    if G_hi <= G_lo:
        raise DomainError(f"empty search range [{G_lo}, {G_hi}]")
    classify = _Classifier(system_factory, step, max_iter, tol, threshold, stage)
    lo = int(math.ceil(G_lo / step - 1e-9))
    hi = int(math.floor(G_hi / step + 1e-9))
    if not classify([lo])[0]:
        raise DomainError(f"search must start from a stable load; G = {classify.load(lo)} is unstable")

    if mode == "scan":
        bad = _first_unstable(classify, lo + 1, hi)
    elif mode == "refine":
        # a: known stable index, bad: known unstable index (None until one is seen)
        a, bad = lo, None
        for stride in (100, 10, 1):
            stop = hi if bad is None else bad - 1
            first = (a // stride + 1) * stride
            found = _first_unstable(classify, first, stop, stride)
            if found is not None:
                bad = found
                a = max(a, found - stride)
            else:
                a = max(a, stop - (stop - first) % stride if stop >= first else a)
    else:
        if classify([hi])[0]:
            bad = None
        else:
            a, b = lo, hi
            while b - a > 1:
                m = (a + b) // 2
                if classify([m])[0]:
                    a = m
                else:
                    b = m
            bad = b
    if bad is None:
        raise NumericError(f"no unstable load found up to G = {classify.load(hi)}")
    evaluated = tuple(sorted((classify.load(i), ok) for i, ok in classify.cache.items()))
    return ThresholdResult(classify.load(bad - 1), classify.load(bad), step, mode, dict(label or {}), evaluated)


# ---------------------------------------------------------------------------
# Single-class tables
# ---------------------------------------------------------------------------


def coupled_factory(success: SuccessModel, degree: DegreeDistribution, w: int, L: int):
    """Load -> system: the base CPR for ``w = 1``, else the punctured coupled system."""
    base = CprSystem.single(0.0, degree, success)
    if w == 1:
        return base.with_loads
    coupled = CcprSystem.punctured(base, L, w)
    return coupled.with_loads


@dataclass(frozen=True)
class _Cell:
    success: SuccessModel
    d: int
    w: int
    L: int
    step: float
    mode: str
    max_iter: int
    tol: float
    G_lo: float
    G_hi: float


def _run_cell(cell: _Cell) -> ThresholdResult:
    factory = coupled_factory(cell.success, DegreeDistribution.regular(cell.d), cell.w, cell.L)
    return find_threshold(factory, cell.G_lo, cell.G_hi, cell.step, cell.mode, cell.max_iter, cell.tol,
                          label={"d": cell.d, "w": cell.w, "L": cell.L})


def _capacity(success: SuccessModel) -> float:
    folds = success.fold_weights()
    return float(max(D for D, _ in folds)) if folds else 3.0


def threshold_table(success: SuccessModel, degrees: Sequence[int] = (3, 4, 5, 6),
                    windows: Sequence[int] = (1, 2, 3, 4), L: int = 40, step: float = DEFAULT_STEP,
                    mode: str = "scan", max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                    workers: int = 1, G_lo: float = 0.0, G_hi: float | None = None) -> list[dict]:
    """Rows ``{d, w1.., G_s, G_conv, G_up}`` for regular degrees ``d``.

    Coupled columns are last-stable grid loads; ``G_s`` and ``G_conv`` are
    floored to the grid the same way, ``G_up`` is rounded.  Full-precision
    potential values are kept under ``raw``.
    """
    if G_hi is None:
        G_hi = 1.2 * _capacity(success) + 0.1
    cells = [_Cell(success, d, w, L, step, mode, max_iter, tol, G_lo, G_hi) for d in degrees for w in windows]
    results = parallel_map(_run_cell, cells, workers)
    digits = max(0, -int(math.floor(math.log10(step))))
    rows = []
    for d in degrees:
        s = ScalarSystem(DegreeDistribution.regular(d), success)
        g_s = single_system_threshold(s)
        g_up = potential_upper_bound(s)
        g_conv = potential_threshold(s, G_s=g_s, G_up=g_up)
        row = {"d": d}
        for c, r in zip(cells, results):
            if c.d == d:
                row[f"w{c.w}"] = r.G_star
        row.update(G_s=grid_floor(g_s, step), G_conv=grid_floor(g_conv, step), G_up=round(g_up, digits),
                   raw={"G_s": g_s, "G_conv": g_conv, "G_up": g_up})
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Two-class region sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegionBoundary:
    """Per-column maximal stable ``G2`` and the policy's outer-bound curve.

    ``points`` holds ``(G1, G2_max)`` for every grid column whose ``G2 = 0``
    point is stable.  ``stable_points`` lists every evaluated stable load.
    """

    policy: str
    w: int
    L: int
    grid_step: float
    points: tuple
    bound_curve: tuple
    stable_points: tuple = ()

    def to_dict(self) -> dict:
        return {"policy": self.policy, "w": self.w, "L": self.L, "grid_step": self.grid_step,
                "points": [list(p) for p in self.points], "bound_curve": [list(p) for p in self.bound_curve]}


def _region_classifier(policy, dist1, dist2, w, L, max_iter, tol, threshold):
    base = two_class_system(policy, 0.0, 0.0, dist1, dist2)
    if w == 1:
        make, stage = base.with_loads, 0
    else:
        coupled = CcprSystem.punctured(base, L, w)
        make, stage = coupled.with_loads, L // 2 - 1

    def classify(pairs):
        if not pairs:
            return []
        traces = evolve_many([make(p) for p in pairs], max_iter, tol)
        return [t.is_stable(threshold, stage) for t in traces]

    return classify


def region_boundary_2d(policy: str, dist1: DegreeDistribution, dist2: DegreeDistribution, w: int, L: int = 40,
                       grid_step: float = 0.01, max_iter: int = SWEEP_MAX_ITER, tol: float = DEFAULT_TOL,
                       threshold: float = STABLE_THRESHOLD, mode: str = "scan", G_max: float = 2.0) -> RegionBoundary:
    """Boundary of the two-class stability region on a square grid.

    Columns are ``G1 = i * grid_step``.  ``scan`` raises ``G2`` in lockstep
    across all live columns and drops a column at its first unstable point;
    ``bisect`` halves each column's bracket instead.  Stability is judged at
    stage ``L/2`` for coupled systems.
    """
    if mode not in ("scan", "bisect"):
        raise DomainError(f"mode must be 'scan' or 'bisect', got {mode!r}")
    classify = _region_classifier(policy, dist1, dist2, w, L, max_iter, tol, threshold)
    n_max = int(round(G_max / grid_step))
    load = lambda i: round(i * grid_step, 12)  # noqa: E731
    stable_pts = []

    # columns: G1 values whose G2 = 0 point is stable (the set is an interval from 0)
    cols = []
    i = 0
    while i <= n_max:
        batch = list(range(i, min(n_max, i + _CHUNK - 1) + 1))
        verdicts = classify([(load(j), 0.0) for j in batch])
        stop = False
        for j, ok in zip(batch, verdicts):
            if not ok:
                stop = True
                break
            cols.append(j)
        if stop:
            break
        i = batch[-1] + 1
    best = {c: 0 for c in cols}
    for c in cols:
        stable_pts.append((load(c), 0.0))

    if mode == "scan":
        live = list(cols)
        level = 1
        while live and level <= n_max:
            verdicts = classify([(load(c), load(level)) for c in live])
            nxt = []
            for c, ok in zip(live, verdicts):
                if ok:
                    best[c] = level
                    stable_pts.append((load(c), load(level)))
                    nxt.append(c)
            live = nxt
            level += 1
    else:
        lo = {c: 0 for c in cols}
        hi = {c: n_max + 1 for c in cols}
        while True:
            live = [c for c in cols if hi[c] - lo[c] > 1]
            if not live:
                break
            mids = {c: (lo[c] + hi[c]) // 2 for c in live}
            verdicts = classify([(load(c), load(mids[c])) for c in live])
            for c, ok in zip(live, verdicts):
                if ok:
                    lo[c] = mids[c]
                    stable_pts.append((load(c), load(mids[c])))
                else:
                    hi[c] = mids[c]
        best = lo

    points = tuple((load(c), load(best[c])) for c in cols)
    g1_curve = [load(j) for j in range(0, n_max + 1)]
    curve = tuple((g1, g2) for g1, g2 in policy_bound_curve(policy, dist1, dist2, g1_curve) if not np.isnan(g2))
    return RegionBoundary(policy, w, L, grid_step, points, curve, tuple(stable_pts))
