"""Command-line front end: generate, plan, peb-map, compare, oracle.

Every run writes a manifest next to its primary output recording the
command, resolved configuration hash, seed and file paths; reruns with the
same manifest inputs produce byte-identical outputs (wall-clock lives only
in the manifest). Exit codes: 0 success, 2 problem infeasibility, 1 usage
or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import replace

import numpy as np

from .baselines import exhaustive_oracle, modified_bse, modified_sdr_toa
from .convex_core import SolverConfig
from .errors import (
    AssociationInfeasibleError,
    InfeasibleSubproblemError,
    NoFeasibleEtaError,
    OracleBudgetError,
    RandomizationFailureError,
    ThresholdInfeasibleError,
    ValidationError,
)
from .kpi import PlanConfig, plan
from .model import Position, Topology
from .peb import nu_weight, peb, precompute_geometry
from .errors import UnboundedPebError
from .scenarios import ScenarioSpec, generate, grid_test_points, load, save

INFEASIBLE_ERRORS = (
    ThresholdInfeasibleError,
    NoFeasibleEtaError,
    RandomizationFailureError,
    InfeasibleSubproblemError,
    AssociationInfeasibleError,
    OracleBudgetError,
)

PLANNERS = ("loko", "bse", "sdr-toa", "oracle")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _resolve_solver(config: dict, seed: int | None) -> SolverConfig:
    fields = dict(config.get("solver", {}))
    if seed is not None:
        fields["seed"] = seed
    return SolverConfig(**fields)


def _config_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_manifest(out_path: str, command: str, config: dict, seed,
                    inputs: list, outputs: list, wall_clock: float,
                    flags: dict) -> None:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": seed,
        "input_paths": inputs,
        "output_paths": outputs,
        "wall_clock_s": wall_clock,
        "convergence_flags": flags,
    }
    with open(out_path + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_generate(args) -> int:
    start = time.perf_counter()
    spec = ScenarioSpec(
        kind=args.kind,
        seed=args.seed,
        budget=args.budget,
        cs_density=args.cs_density,
        enb_density=args.enb_density,
        test_grid_spacing=args.grid_spacing,
    )
    topo = generate(spec)
    save(topo, args.out)
    config = {
        "kind": spec.kind, "seed": spec.seed, "budget": spec.budget,
        "cs_density": spec.cs_density, "enb_density": spec.enb_density,
        "test_grid_spacing": spec.test_grid_spacing, "area": list(spec.area),
    }
    _write_manifest(args.out, "generate", config, args.seed, [], [args.out],
                    time.perf_counter() - start, {})
    print(f"wrote {args.out}: S={topo.n_sites} E={topo.n_enbs} "
          f"T={topo.n_test_points} G={topo.budget}")
    return 0


def cmd_plan(args) -> int:
    start = time.perf_counter()
    topo = load(args.scenario)
    if args.budget is not None:
        topo = replace(topo, budget=args.budget)
    file_cfg = _load_config_file(args.config)
    solver = _resolve_solver(file_cfg, args.seed)
    plan_fields = dict(file_cfg.get("plan", {}))
    if args.tpr is not None:
        plan_fields["mu"] = args.tpr
    if args.max_tau is not None:
        plan_fields["max_tau"] = args.max_tau
    cfg = PlanConfig(solver=solver, **plan_fields)

    result = plan(topo, cfg)
    with open(args.out, "w") as fh:
        fh.write(result.to_json())
        fh.write("\n")
    csv_path = args.out + ".csv"
    with open(csv_path, "w") as fh:
        fh.write(result.to_csv(topo))
    outputs = [args.out, csv_path]
    if args.trace:
        with open(args.trace, "w") as fh:
            for row in result.trace:
                fh.write(json.dumps(row, sort_keys=True))
                fh.write("\n")
        outputs.append(args.trace)
    _write_manifest(args.out, "plan", result.config, args.seed,
                    [args.scenario], outputs, time.perf_counter() - start,
                    {"converged": result.converged})
    print(f"plan: min_rate={result.min_rate_mbps:.3f} Mbit/s "
          f"max_peb={result.max_peb_m:.3f} m avg_peb={result.avg_peb_m:.3f} m "
          f"converged={result.converged}")
    return 0


def _deployment_vector(arg: str, topo: Topology) -> np.ndarray:
    if arg == "full":
        return np.ones(topo.n_sites, dtype=int)
    if arg == "none":
        return np.zeros(topo.n_sites, dtype=int)
    with open(arg) as fh:
        payload = json.load(fh)
    if "x_star" not in payload:
        raise ValidationError("x_star", f"not found in {arg}")
    x = np.asarray(payload["x_star"], dtype=int)
    if x.shape != (topo.n_sites,):
        raise ValidationError("x_star", "length does not match the scenario")
    return x


def _peb_at(point: Position, anchors: list) -> float:
    if len(anchors) < 2:
        return math.inf
    try:
        return peb(anchors, point)
    except UnboundedPebError:
        return math.inf


def cmd_peb_map(args) -> int:
    start = time.perf_counter()
    topo = load(args.scenario)
    x = _deployment_vector(args.deployment, topo)
    everything = topo.enbs + topo.candidate_sites + topo.test_points
    w = max(p.x for p in everything)
    h = max(p.y for p in everything)
    cells = grid_test_points((w, h), args.grid_spacing)

    lam_nr = topo.nr.effective_lambda()
    lam_lte = topo.lte.effective_lambda()
    active = [topo.candidate_sites[j] for j in np.nonzero(x)[0]]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x_m", "y_m", "peb_nr_m", "peb_lte_m", "peb_best_m"])
    for cell in cells:
        nr_anchors = [
            (s, nu_weight(max(cell.distance_to(s), 1.0), lam_nr, topo.nr.noise_model))
            for s in active
        ]
        lte_anchors = [
            (e, nu_weight(max(cell.distance_to(e), 1.0), lam_lte, topo.lte.noise_model))
            for e in topo.enbs
        ]
        p_nr = _peb_at(cell, nr_anchors)
        p_lte = _peb_at(cell, lte_anchors)
        best = min(p_nr, p_lte)
        writer.writerow(
            [
                f"{cell.x:.3f}", f"{cell.y:.3f}",
                "inf" if math.isinf(p_nr) else f"{p_nr:.6f}",
                "inf" if math.isinf(p_lte) else f"{p_lte:.6f}",
                "inf" if math.isinf(best) else f"{best:.6f}",
            ]
        )
    with open(args.out, "w") as fh:
        fh.write(buf.getvalue())
    config = {"deployment": args.deployment, "grid_spacing": args.grid_spacing}
    _write_manifest(args.out, "peb-map", config, None, [args.scenario],
                    [args.out], time.perf_counter() - start, {})
    print(f"wrote {args.out}: {len(cells)} cells")
    return 0


def _parse_budget_range(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(text)]


def _run_planner(name: str, topo: Topology, geom, mu: float, seed: int,
                 max_evals: int):
    solver = SolverConfig(seed=seed)
    if name == "loko":
        result = plan(topo, PlanConfig(mu=mu, solver=solver), geom=geom)
        return result.min_rate_mbps, result.max_peb_m, result.avg_peb_m, result.converged
    if name == "bse":
        res = modified_bse(topo, geom, mu=mu)
    elif name == "sdr-toa":
        res = modified_sdr_toa(topo, geom, cfg=solver, mu=mu)
    elif name == "oracle":
        res = exhaustive_oracle(topo, geom, mu=mu, max_evals=max_evals)
    else:
        raise ValidationError("planner", f"unknown planner {name!r}")
    return res.min_rate_mbps, res.max_peb_m, res.avg_peb_m, True


def cmd_compare(args) -> int:
    start = time.perf_counter()
    topo_base = load(args.scenario)
    planners = [p.strip() for p in args.planners.split(",") if p.strip()]
    for p in planners:
        if p not in PLANNERS:
            raise ValidationError("planners", f"unknown planner {p!r}")
    budgets = _parse_budget_range(args.budget_range)
    seeds = list(range(args.seeds))

    rows = []
    n_ok = 0
    flags = {}
    geom_cache: dict[int, object] = {}
    for g in budgets:
        topo_g = replace(topo_base, budget=g)
        if g not in geom_cache:
            geom_cache[g] = precompute_geometry(topo_g)
        geom = geom_cache[g]
        for name in planners:
            for seed in seeds:
                try:
                    min_rate, max_peb, avg_peb, conv = _run_planner(
                        name, topo_g, geom, args.tpr, seed, args.max_evals
                    )
                    rows.append(
                        (name, g, seed, f"{min_rate:.6f}",
                         "inf" if math.isinf(max_peb) else f"{max_peb:.6f}",
                         "inf" if math.isinf(avg_peb) else f"{avg_peb:.6f}")
                    )
                    n_ok += 1
                    flags[f"{name}.G{g}.seed{seed}"] = bool(conv)
                except INFEASIBLE_ERRORS as err:
                    rows.append((name, g, seed, "", "", ""))
                    flags[f"{name}.G{g}.seed{seed}"] = f"infeasible: {err}"
    rows.sort(key=lambda r: (r[0], r[1], r[2]))

    with open(args.out, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["planner", "budget", "seed", "min_rate_mbps", "max_peb_m", "avg_peb_m"]
        )
        writer.writerows(rows)
    config = {
        "planners": planners, "tpr": args.tpr, "budgets": budgets,
        "seeds": args.seeds, "max_evals": args.max_evals,
    }
    _write_manifest(args.out, "compare", config, args.seeds, [args.scenario],
                    [args.out], time.perf_counter() - start, flags)
    print(f"wrote {args.out}: {len(rows)} rows ({n_ok} feasible)")
    return 0 if n_ok > 0 else 2


def cmd_oracle(args) -> int:
    start = time.perf_counter()
    topo = load(args.scenario)
    if args.budget is not None:
        topo = replace(topo, budget=args.budget)
    geom = precompute_geometry(topo)
    res = exhaustive_oracle(topo, geom, mu=args.tpr, max_evals=args.max_evals)
    with open(args.out, "w") as fh:
        fh.write(res.to_json())
        fh.write("\n")
    config = {"tpr": args.tpr, "budget": topo.budget, "max_evals": args.max_evals}
    _write_manifest(args.out, "oracle", config, None, [args.scenario],
                    [args.out], time.perf_counter() - start, {})
    print(f"oracle: joint={res.joint_objective:.6f} min_rate={res.min_rate_mbps:.3f} "
          f"Mbit/s max_peb={res.max_peb_m:.3f} m")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radioplan",
        description="Joint throughput/localization-aware site selection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="sample a synthetic topology file")
    p_gen.add_argument("--kind", choices=("H", "SU", "DU"), required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--budget", type=int, default=None)
    p_gen.add_argument("--cs-density", type=float, default=None, help="per km^2")
    p_gen.add_argument("--enb-density", type=float, default=None, help="per km^2")
    p_gen.add_argument("--grid-spacing", type=float, default=None, help="meters")
    p_gen.set_defaults(func=cmd_generate)

    p_plan = sub.add_parser("plan", help="run the adaptive planner")
    p_plan.add_argument("--scenario", required=True)
    p_plan.add_argument("--tpr", type=float, default=None,
                        help="Mbit/s conceded per m^2 of squared bound")
    p_plan.add_argument("--budget", type=int, default=None)
    p_plan.add_argument("--seed", type=int, default=0)
    p_plan.add_argument("--out", required=True)
    p_plan.add_argument("--trace", default=None, help="line-delimited JSON trace")
    p_plan.add_argument("--config", default=None, help="JSON config file")
    p_plan.add_argument("--max-tau", type=int, default=None)
    p_plan.set_defaults(func=cmd_plan)

    p_map = sub.add_parser("peb-map", help="per-cell bound map for a deployment")
    p_map.add_argument("--scenario", required=True)
    p_map.add_argument("--deployment", required=True,
                       help="result JSON with x_star, or 'full'/'none'")
    p_map.add_argument("--grid-spacing", type=float, required=True)
    p_map.add_argument("--out", required=True)
    p_map.set_defaults(func=cmd_peb_map)

    p_cmp = sub.add_parser("compare", help="sweep planners x budgets x seeds")
    p_cmp.add_argument("--scenario", required=True)
    p_cmp.add_argument("--planners", default="loko,bse,sdr-toa",
                       help=f"comma list from {PLANNERS}")
    p_cmp.add_argument("--tpr", type=float, default=10.0)
    p_cmp.add_argument("--budget-range", required=True, help="e.g. 3..8 or 5")
    p_cmp.add_argument("--seeds", type=int, default=1)
    p_cmp.add_argument("--max-evals", type=int, default=10_000_000)
    p_cmp.add_argument("--out", required=True)
    p_cmp.set_defaults(func=cmd_compare)

    p_orc = sub.add_parser("oracle", help="exhaustive search optimum")
    p_orc.add_argument("--scenario", required=True)
    p_orc.add_argument("--tpr", type=float, default=0.0)
    p_orc.add_argument("--budget", type=int, default=None)
    p_orc.add_argument("--max-evals", type=int, default=10_000_000)
    p_orc.add_argument("--out", required=True)
    p_orc.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except INFEASIBLE_ERRORS as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return 2
    except (ValidationError, FileNotFoundError, json.JSONDecodeError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
