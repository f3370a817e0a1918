"""Command-line front end.

    ccpr threshold --config table1.toml --out results/
    ccpr potential --set system.degrees=[{4=1.0}]
    ccpr region --config region.toml --threads 4

Every run writes ``config.resolved.json`` next to its outputs; feeding it
back with ``--config`` repeats the run.  CSV files start with ``#`` lines
carrying the version and resolved config, then a header row.
Exit codes: 0 ok, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from scipy import optimize

from . import __version__
from .bounds import (IRSA_TWO_CLASS_ENVELOPES, NEARFAR_ENVELOPES, CapacityEnvelope, dfold_mixture_bound,
                     outer_bound_satisfied)
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DomainError, NumericError
from .evolution import DEFAULT_MAX_ITER, SWEEP_MAX_ITER, CcprSystem, ccpr_evolve, cpr_evolve
from .explore import grid_floor, parallel_map, region_boundary_2d, threshold_table
from .mcsim import simulate
from .models import (CprSystem, DegreeDistribution, DFold, DFoldMixture, NearFar, SlottedAloha,
                     success_model_from_dict)
from .potential import ScalarSystem, balance_value, potential_report, potential_value

COMMANDS = {
    "threshold": "threshold-table",
    "potential": "potential-report",
    "region": "region-2d",
    "bounds": "bounds-check",
    "simulate": "simulate",
    "evolve": "evolve",
}


# ---------------------------------------------------------------------------
# config -> library objects
# ---------------------------------------------------------------------------


def build_system(cfg: ExperimentConfig, need_loads: bool = False) -> CprSystem:
    s = cfg.system
    K, J = len(s.degrees), len(s.success)
    if need_loads and s.loads is None:
        raise ConfigError("system.loads is required for this experiment")
    loads = s.loads if s.loads is not None else [0.0] * K
    if len(loads) != K:
        raise ConfigError(f"system.loads has {len(loads)} entries for {K} user classes")
    routing = s.routing if s.routing is not None else ([[1.0]] * K if J == 1 else None)
    partition = s.partition if s.partition is not None else ([1.0] if J == 1 else None)
    if routing is None or partition is None:
        raise ConfigError("system.routing and system.partition are required with several receiver classes")
    try:
        return CprSystem(
            G=tuple(loads),
            degrees=tuple(DegreeDistribution(d) for d in s.degrees),
            routing=tuple(map(tuple, routing)),
            partition=tuple(partition),
            success=tuple(success_model_from_dict(m) for m in s.success),
        )
    except (DomainError, KeyError, TypeError) as exc:
        raise ConfigError(f"system: {exc}") from exc


def _coupled(cfg: ExperimentConfig, base: CprSystem):
    w = cfg.coupling.w[0]
    if len(cfg.coupling.w) != 1:
        raise ConfigError("this experiment takes a single coupling.w")
    if w == 1 and cfg.coupling.mode == "circular":
        return base
    try:
        return CcprSystem(base=base, L=cfg.coupling.L, w=w, mode=cfg.coupling.mode)
    except DomainError as exc:
        raise ConfigError(f"coupling: {exc}") from exc


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else f"{v:.4f}"
    return v


class _Writer:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dir = Path(cfg.output.dir)
        self.meta = {"version": __version__, "config": cfg.resolved()}
        self.written: list[Path] = []

    def start(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / "config.resolved.json"
        path.write_text(json.dumps(self.meta["config"], indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.written.append(path)

    def table(self, name: str, columns: list[str], rows: list[dict]):
        if self.cfg.output.format == "json":
            self.json(name, {"columns": columns, "rows": rows})
            return
        path = self.dir / f"{name}.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(f"# ccpr {__version__}\n")
            fh.write(f"# config {json.dumps(self.meta['config'], sort_keys=True)}\n")
            w = csv.writer(fh)
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(r.get(c)) for c in columns])
        self.written.append(path)

    def json(self, name: str, payload: dict):
        path = self.dir / f"{name}.json"
        body = {**self.meta, **payload}
        path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
        self.written.append(path)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def run_threshold(cfg: ExperimentConfig, out: _Writer, workers: int):
    if len(cfg.system.success) != 1:
        raise ConfigError("threshold tables need exactly one receiver class")
    success = build_system(cfg).success[0]
    n = cfg.numeric
    rows = threshold_table(success, cfg.table.degrees, cfg.coupling.w, cfg.coupling.L, n.step, n.search,
                           n.max_iter or DEFAULT_MAX_ITER, n.tol, workers, n.G_lo, n.G_hi)
    cols = ["d"] + [f"w{w}" for w in cfg.coupling.w] + ["G_s", "G_conv", "G_up"]
    if cfg.output.format == "json":
        out.json("threshold-table", {"columns": cols, "rows": rows})
    else:
        out.table("threshold-table", cols, rows)


def emit_potential_profile(sys_, loads, p_points: int = 201) -> list[dict]:
    """``(G, p, U, U')`` samples on an even ``p`` grid, plus interpolated zero crossings of ``U``.

    Crossing rows carry ``zero_crossing = 1`` and ``U = 0``.
    """
    s = sys_ if isinstance(sys_, ScalarSystem) else ScalarSystem.from_cpr(sys_)
    p = np.linspace(0.0, 1.0, p_points)
    rows = []
    for G in loads:
        U = potential_value(s, p, G)
        dU = balance_value(s, p, G)
        block = [{"G": float(G), "p": float(a), "U": float(b), "U_prime": float(c), "zero_crossing": 0}
                 for a, b, c in zip(p, U, dU)]
        for i in range(1, p_points - 1):
            if U[i] * U[i + 1] < 0.0:
                root = optimize.brentq(lambda t: potential_value(s, t, G), p[i], p[i + 1], xtol=1e-14)
                block.append({"G": float(G), "p": float(root), "U": 0.0,
                              "U_prime": float(balance_value(s, root, G)), "zero_crossing": 1})
        block.sort(key=lambda r: (r["p"], r["zero_crossing"]))
        rows.extend(block)
    return rows


def run_potential(cfg: ExperimentConfig, out: _Writer, workers: int):
    try:
        s = ScalarSystem.from_cpr(build_system(cfg))
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    report = potential_report(s, cfg.potential.samples)
    loads = cfg.potential.loads or [report.G_s_star, report.G_conv_star, report.G_up_star]
    profile = emit_potential_profile(s, loads, cfg.potential.p_points)
    step = cfg.numeric.step
    # same reporting convention as the threshold tables
    shown = {"G_s": grid_floor(report.G_s_star, step), "G_conv": grid_floor(report.G_conv_star, step),
             "G_up": round(report.G_up_star, 4)}
    if cfg.output.format == "json":
        out.json("potential-report", {"report": report.to_dict(), "reported": shown, "profile": profile})
        return
    out.table("potential-thresholds", ["G_s", "G_conv", "G_up"], [shown])
    out.table("potential-samples", ["G", "u", "delta_E", "K_fh", "window_bound"],
              [{"G": g, "u": u, "delta_E": e, "K_fh": k, "window_bound": b}
               for g, u, e, k, b in zip(report.loads, report.u_of_G, report.delta_E, report.K_fh,
                                        report.window_bound)])
    out.table("potential-profile", ["G", "p", "U", "U_prime", "zero_crossing"], profile)


def run_region(cfg: ExperimentConfig, out: _Writer, workers: int):
    base = build_system(cfg)
    if base.K != 2:
        raise ConfigError("region sweeps need exactly two user classes")
    d1, d2 = base.degrees
    r = cfg.region
    max_iter = cfg.numeric.max_iter or SWEEP_MAX_ITER
    jobs = [(r.policy, d1, d2, w, cfg.coupling.L, r.grid_step, max_iter, cfg.numeric.tol, r.search, r.G_max)
            for w in cfg.coupling.w]
    results = parallel_map(_region_job, jobs, workers)
    points = [{"policy": b.policy, "w": b.w, "G1": g1, "G2": g2} for b in results for g1, g2 in b.points]
    curve = [{"policy": r.policy, "G1": g1, "G2": g2} for g1, g2 in results[0].bound_curve] if results else []
    if cfg.output.format == "json":
        out.json("region", {"boundaries": [b.to_dict() for b in results]})
        return
    out.table("region-boundary", ["policy", "w", "G1", "G2"], points)
    out.table("region-outer-bound", ["policy", "G1", "G2"], curve)


def _region_job(args):
    policy, d1, d2, w, L, step, max_iter, tol, mode, G_max = args
    return region_boundary_2d(policy, d1, d2, w, L, step, max_iter, tol, mode=mode, G_max=G_max)


def _default_envelopes(system: CprSystem):
    models = set(system.success)
    if len(models) != 1:
        raise ConfigError("bounds.envelopes must be given when receiver classes differ")
    m = next(iter(models))
    if isinstance(m, NearFar):
        return NEARFAR_ENVELOPES
    if isinstance(m, (SlottedAloha, DFold)):
        B = 1 if isinstance(m, SlottedAloha) else m.D
        if system.K == 2 and B == 1:
            return IRSA_TWO_CLASS_ENVELOPES
        return (CapacityEnvelope((1,) * system.K, B),)
    raise ConfigError(f"no default envelopes for {m.name}")


def run_bounds(cfg: ExperimentConfig, out: _Writer, workers: int):
    system = build_system(cfg, need_loads=True)
    rows = []
    if system.K == 1 and system.J == 1 and isinstance(system.success[0], DFoldMixture) and not cfg.bounds.envelopes:
        v = dfold_mixture_bound(system.G[0], system.degrees[0], dict(system.success[0].weights))
        rows.append({"bound": v.label, "slack": v.slack, "holds": v.holds})
    else:
        try:
            envs = ([CapacityEnvelope(tuple(b), B) for b, B in cfg.bounds.envelopes] if cfg.bounds.envelopes
                    else _default_envelopes(system))
        except DomainError as exc:
            raise ConfigError(f"bounds.envelopes: {exc}") from exc
        for e in envs:
            v = outer_bound_satisfied(system, e)
            rows.append({"bound": v.label, "slack": v.slack, "holds": v.holds})
    if cfg.output.format == "json":
        out.json("bounds", {"verdicts": rows})
    else:
        out.table("bounds", ["bound", "slack", "holds"], rows)


def _predicted_success(system) -> np.ndarray:
    if isinstance(system, CcprSystem):
        t = ccpr_evolve(system, keep_history=False)
        G = system.loads
        total = G.sum(axis=1)
        return np.where(total > 0, (t.final_success * G).sum(axis=1) / np.where(total > 0, total, 1.0), 1.0)
    return cpr_evolve(system, keep_history=False).final_success[:, 0]


def run_simulate(cfg: ExperimentConfig, out: _Writer, workers: int):
    system = _coupled(cfg, build_system(cfg, need_loads=True))
    sim = cfg.simulate
    res = simulate(system, sim.T, sim.rounds, sim.seed, workers)
    pred = _predicted_success(system)
    rows = [{"class": k + 1, "success_rate": res.success_rate[k], "std_error": res.std_error[k],
             "users": res.users[k], "density_evolution": float(pred[k]), "capacity_ok": res.capacity_ok}
            for k in range(len(res.success_rate))]
    if cfg.output.format == "json":
        out.json("simulate", {"result": res.to_dict(), "density_evolution": pred.tolist()})
    else:
        out.table("simulate", ["class", "success_rate", "std_error", "users", "density_evolution", "capacity_ok"],
                  rows)


def run_evolve(cfg: ExperimentConfig, out: _Writer, workers: int):
    system = _coupled(cfg, build_system(cfg, need_loads=True))
    max_iter = cfg.numeric.max_iter or DEFAULT_MAX_ITER
    evolve = ccpr_evolve if isinstance(system, CcprSystem) else cpr_evolve
    t = evolve(system, max_iter, cfg.numeric.tol, keep_history=False)
    K, L = t.q.shape
    rows = [{"class": k + 1, "stage": l + 1, "q": float(t.q[k, l]), "p": float(t.p[k, l]),
             "final_success": float(t.final_success[k, l])} for k in range(K) for l in range(L)]
    if cfg.output.format == "json":
        out.json("evolve", {"converged": t.converged, "iterations": t.iterations, "stable": t.is_stable(),
                            "q": t.q, "p": t.p, "final_success": t.final_success})
    else:
        out.table("evolve", ["class", "stage", "q", "p", "final_success"], rows)
        out.table("evolve-summary", ["converged", "iterations", "stable"],
                  [{"converged": t.converged, "iterations": t.iterations, "stable": t.is_stable()}])


RUNNERS = {
    "threshold-table": run_threshold,
    "potential-report": run_potential,
    "region-2d": run_region,
    "bounds-check": run_bounds,
    "simulate": run_simulate,
    "evolve": run_evolve,
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccpr", description="Stability analysis of coded Poisson receivers.")
    ap.add_argument("--version", action="version", version=f"ccpr {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, kind in COMMANDS.items():
        p = sub.add_parser(name, help=f"run a {kind} experiment")
        p.add_argument("--config", help="TOML or JSON experiment file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--seed", type=int, help="simulation seed")
    return ap


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    kind = COMMANDS[args.command]
    overrides = list(args.set)
    if args.out is not None:
        overrides.append(f"output.dir={json.dumps(args.out)}")
    if args.format is not None:
        overrides.append(f"output.format={json.dumps(args.format)}")
    if args.seed is not None:
        overrides.append(f"simulate.seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides, kind)
        out = _Writer(cfg)
        if kind in ("evolve", "simulate", "bounds-check"):
            build_system(cfg, need_loads=True)  # fail before touching the disk
        else:
            build_system(cfg)
        out.start()
        RUNNERS[kind](cfg, out, max(1, args.threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, DomainError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    for path in out.written:
        print(path)
    return 0


def main():  # pragma: no cover
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
