"""Finite-size Monte Carlo of coded Poisson receivers with SIC peeling.

Each stage has ``T`` receivers, split among receiver classes in proportion
to ``F``.  Class-``k`` users per stage are Poisson(``G_k T``); every user
draws a degree and sends that many copies, each to a receiver class chosen
by the routing row and a receiver drawn uniformly in that class.  Coupled
systems pick the receiver stage uniformly in ``l .. l + w - 1`` (mod L).

Receivers apply their phi-ALOHA rule to the packets still undecoded; a
decoded user has every copy cancelled.  Random streams are Philox keyed by
``(seed, round)`` so results do not depend on how rounds are distributed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .evolution import CcprSystem
from .explore import parallel_map
from .models import (CprSystem, DFold, DFoldMixture, DFoldReceiver, NearFar, NearFarReceiver, PhiReceiver,
                     SlottedAloha, SuccessModel)

NEAR_FAR = -1  # receiver capacity code for the near-far slot


def _receiver_codes(model: SuccessModel, count: int, rng) -> np.ndarray:
    """Per-receiver decode rule: a D-fold capacity, or ``NEAR_FAR``."""
    if isinstance(model, SlottedAloha):
        return np.ones(count, dtype=np.int64)
    if isinstance(model, DFold):
        return np.full(count, model.D, dtype=np.int64)
    if isinstance(model, DFoldMixture):
        Ds = np.array([D for D, _ in model.weights])
        cdf = np.cumsum([p for _, p in model.weights])
        return Ds[np.minimum(np.searchsorted(cdf, rng.random(count), side="right"), Ds.size - 1)]
    if isinstance(model, NearFar):
        return np.full(count, NEAR_FAR, dtype=np.int64)
    raise DomainError(f"no phi-ALOHA receiver behind success model {model.name}")


def receiver_for_code(code: int, n_classes: int) -> PhiReceiver:
    return NearFarReceiver() if code == NEAR_FAR else DFoldReceiver(int(code), n_classes)


def _class_counts(F, T):
    """Integer receiver counts per class summing to ``T`` (largest remainder)."""
    raw = np.asarray(F) * T
    counts = np.floor(raw).astype(int)
    short = T - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


@dataclass
class PeelingInstance:
    """One sampled bipartite graph and, once peeled, its decoding record.

    Edges are packet copies: ``edge_user[e]`` sent a copy to receiver
    ``edge_receiver[e]``.  ``receiver_decoded[r, k]`` counts class-``k``
    packets decoded by receiver ``r`` itself.
    """

    T: int
    K: int
    seed: tuple
    user_class: np.ndarray
    user_stage: np.ndarray
    user_degree: np.ndarray
    edge_user: np.ndarray
    edge_receiver: np.ndarray
    receiver_code: np.ndarray
    user_decoded: np.ndarray | None = None
    receiver_decoded: np.ndarray | None = None
    peel_rounds: int = 0

    @property
    def n_receivers(self) -> int:
        return self.receiver_code.size

    @property
    def edge_class(self) -> np.ndarray:
        return self.user_class[self.edge_user]


def _stage_loads(system) -> tuple[CprSystem, np.ndarray, int, int]:
    if isinstance(system, CcprSystem):
        return system.base, system.loads, system.L, system.w
    return system, system.G_array[:, None], 1, 1


def sample_instance(system, T: int, seed: int, rnd: int = 0) -> PeelingInstance:
    """Draw one graph for ``system`` with ``T`` receivers per stage."""
    if int(T) != T or T < 1:
        raise DomainError(f"T must be a positive integer, got {T!r}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rnd)])))
    base, loads, L, w = _stage_loads(system)
    K, J = base.K, base.J
    per_class = _class_counts(base.F, T)
    offsets = np.concatenate([[0], np.cumsum(per_class)[:-1]])

    counts = rng.poisson(loads * T)  # (K, L)
    user_class = np.repeat(np.repeat(np.arange(K), L), counts.ravel())
    user_stage = np.repeat(np.tile(np.arange(L), K), counts.ravel())
    degree = np.empty(user_class.size, dtype=np.int64)
    for k, dist in enumerate(base.degrees):
        mask = user_class == k
        ds = np.array([d for d, _ in dist.coeffs])
        cdf = np.cumsum([c for _, c in dist.coeffs])
        pick = np.searchsorted(cdf, rng.random(int(mask.sum())), side="right")
        degree[mask] = ds[np.minimum(pick, ds.size - 1)]

    edge_user = np.repeat(np.arange(user_class.size), degree)
    ek = user_class[edge_user]
    route_cdf = np.cumsum(base.R, axis=1)
    j = np.minimum((rng.random(edge_user.size)[:, None] >= route_cdf[ek]).sum(axis=1), J - 1)
    stage = (user_stage[edge_user] + rng.integers(0, w, edge_user.size)) % L
    slot = np.floor(rng.random(edge_user.size) * per_class[j]).astype(np.int64)
    edge_receiver = stage * T + offsets[j] + slot

    codes = np.empty(L * T, dtype=np.int64)
    for jj, model in enumerate(base.success):
        idx = (np.arange(L)[:, None] * T + offsets[jj] + np.arange(per_class[jj])[None, :]).ravel()
        codes[idx] = _receiver_codes(model, idx.size, rng)
    return PeelingInstance(T, K, (int(seed), int(rnd)), user_class, user_stage, degree, edge_user, edge_receiver,
                           codes)


def _decodes(codes, n):
    """All-or-nothing verdict per receiver for count matrix ``n`` of shape ``(R, K)``."""
    near = codes == NEAR_FAR
    ok = n.sum(axis=1) <= codes
    if near.any():
        nf = np.all(n[:, :2] <= 1, axis=1)
        ok = np.where(near, nf, ok)
    return ok


def peel(inst: PeelingInstance) -> PeelingInstance:
    """Synchronous peeling: every receiver decodes on the same snapshot, then cancellations apply."""
    R, K = inst.n_receivers, inst.K
    ec = inst.edge_class
    alive = np.ones(inst.edge_user.size, dtype=bool)
    decoded = np.zeros(inst.user_class.size, dtype=bool)
    Y = np.zeros((R, K), dtype=np.int64)
    rounds = 0
    while True:
        key = inst.edge_receiver[alive] * K + ec[alive]
        n = np.bincount(key, minlength=R * K).reshape(R, K)
        ok = _decodes(inst.receiver_code, n) & (n.sum(axis=1) > 0)
        if not ok.any():
            break
        rounds += 1
        Y[ok] += n[ok]
        hit = alive & ok[inst.edge_receiver]
        decoded[inst.edge_user[hit]] = True
        alive &= ~decoded[inst.edge_user]
    inst.user_decoded = decoded
    inst.receiver_decoded = Y
    inst.peel_rounds = rounds
    return inst


def peel_sequential(inst: PeelingInstance, order=None) -> np.ndarray:
    """Receiver-by-receiver peeling in ``order``, repeated until a full pass changes nothing.

    Returns the decoded-user mask; it should not depend on ``order``.
    """
    R, K = inst.n_receivers, inst.K
    order = np.arange(R) if order is None else np.asarray(order)
    by_recv = np.argsort(inst.edge_receiver, kind="stable")
    starts = np.searchsorted(inst.edge_receiver[by_recv], np.arange(R + 1))
    edges_of_user = np.split(np.argsort(inst.edge_user, kind="stable"),
                             np.cumsum(inst.user_degree)[:-1]) if inst.user_degree.size else []
    ec = inst.edge_class
    alive = np.ones(inst.edge_user.size, dtype=bool)
    decoded = np.zeros(inst.user_class.size, dtype=bool)
    changed = True
    while changed:
        changed = False
        for r in order:
            es = by_recv[starts[r]:starts[r + 1]]
            es = es[alive[es]]
            if es.size == 0:
                continue
            n = np.bincount(ec[es], minlength=K)[None, :]
            if _decodes(inst.receiver_code[r:r + 1], n)[0]:
                for u in np.unique(inst.edge_user[es]):
                    decoded[u] = True
                    alive[edges_of_user[u]] = False
                changed = True
    return decoded


@dataclass(frozen=True)
class CapacityVerdict:
    holds: bool
    receiver: int | None = None
    decoded: tuple | None = None


def check_decoded_in_capacity(inst: PeelingInstance) -> CapacityVerdict:
    """Every receiver's decoded vector ``y`` must satisfy ``phi(y) = y``."""
    if inst.receiver_decoded is None:
        raise DomainError("instance has not been peeled")
    Y = inst.receiver_decoded
    for code in np.unique(inst.receiver_code):
        idx = np.flatnonzero(inst.receiver_code == code)
        y = Y[idx].T  # class-first for the receiver's phi
        bad = np.flatnonzero(np.any(receiver_for_code(int(code), inst.K).phi(y) != y, axis=0))
        if bad.size:
            r = int(idx[bad[0]])
            return CapacityVerdict(False, r, tuple(int(v) for v in Y[r]))
    return CapacityVerdict(True)


@dataclass(frozen=True)
class SimulationResult:
    """Per-class success rates over all rounds with binomial standard errors."""

    success_rate: tuple
    std_error: tuple
    users: tuple
    T: int
    rounds: int
    seed: int
    capacity_ok: bool

    def to_dict(self) -> dict:
        return {"success_rate": list(self.success_rate), "std_error": list(self.std_error),
                "users": list(self.users), "T": self.T, "rounds": self.rounds, "seed": self.seed,
                "capacity_ok": self.capacity_ok}


def _one_round(args):
    system, T, seed, rnd = args
    inst = peel(sample_instance(system, T, seed, rnd))
    K = inst.K
    ok = np.bincount(inst.user_class[inst.user_decoded], minlength=K)
    n = np.bincount(inst.user_class, minlength=K)
    return ok, n, check_decoded_in_capacity(inst).holds


def simulate(system, T: int = 10_000, rounds: int = 20, seed: int = 0, workers: int = 1) -> SimulationResult:
    """Pool ``rounds`` independent instances; an empty class reports rate 1 with zero error."""
    if rounds < 1:
        raise DomainError(f"rounds must be positive, got {rounds}")
    out = parallel_map(_one_round, [(system, T, seed, r) for r in range(rounds)], workers)
    ok = np.sum([o[0] for o in out], axis=0)
    n = np.sum([o[1] for o in out], axis=0)
    rate = np.where(n > 0, ok / np.maximum(n, 1), 1.0)
    se = np.where(n > 0, np.sqrt(rate * (1.0 - rate) / np.maximum(n, 1)), 0.0)
    return SimulationResult(tuple(map(float, rate)), tuple(map(float, se)), tuple(map(int, n)), int(T), int(rounds),
                            int(seed), all(o[2] for o in out))
