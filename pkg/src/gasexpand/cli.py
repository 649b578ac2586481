"""Command-line entry point: solve, sweep, mc-check, compare-policy, validate, dump-model.

Every artifact is written with a fixed key order and no wall-clock fields
unless ``--timing`` is given, so identical configurations reproduce
byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import pathlib
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .formulation import ConstraintSystem, ExpansionPlan, FormulationError, build_deterministic_model, build_robust_model
from .network import InstanceError, Network, read_instance, validate
from .physics import Infeasible, NetworkState, check_state, controls_of, feasibility, search_states, state_residuals
from .solver import SolveResult, SolverOptions, solve
from .uncertainty import (
    DemandProfile,
    Scenario,
    extremal_scenarios,
    load_profiles,
    nominal_scenario,
    profile_to_doc,
    sample,
    scale_profile,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_LIMIT = 4
EXIT_NON_MONOTONE = 5

SLACK_NOTE = (
    "slack pressures are shared by the scenarios of a profile but not fixed in value; "
    "mc-check pins them to these solved values when auditing a robust plan"
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    instance: str
    network: Network
    profiles: tuple[DemandProfile, ...]
    deltas: tuple[float, ...] | None  # set when profiles were generated from --delta
    epsilon: float
    mode: str = "robust"
    policy: str = "monotone"
    options: SolverOptions = field(default_factory=SolverOptions)
    out_dir: pathlib.Path = pathlib.Path("out")
    seed: int | None = None
    timing: bool = False

    def echo(self) -> dict:
        doc = {
            "instance": self.instance,
            "network": self.network.name,
            "mode": self.mode,
            "policy": self.policy,
            "profiles": [p.profile_id for p in self.profiles],
            "epsilon": self.epsilon if self.deltas is not None else None,
            "deltas": list(self.deltas) if self.deltas is not None else None,
            "gap_tol": self.options.gap_tol,
            "node_limit": self.options.node_limit,
            "time_limit": self.options.time_limit if math.isfinite(self.options.time_limit) else None,
        }
        if self.seed is not None:
            doc["seed"] = self.seed
        return doc

    def with_epsilon(self, epsilon: float) -> RunConfig:
        if self.deltas is None:
            raise ConfigError("an epsilon grid needs --delta generated profiles")
        profiles = tuple(scale_profile(self.network, d, epsilon) for d in self.deltas)
        return RunConfig(self.instance, self.network, profiles, self.deltas, epsilon, self.mode, self.policy,
                         self.options, self.out_dir, self.seed, self.timing)


# --------------------------------------------------------------------------
# model construction


def midpoint_scenario(profile: DemandProfile) -> Scenario:
    demands = {n: (lo + hi) / 2 for n, (lo, hi) in profile.intervals.items()}
    return Scenario(f"{profile.profile_id}/nominal", profile.profile_id, demands)


def nominal_of(cfg: RunConfig) -> Scenario:
    if len(cfg.profiles) != 1:
        raise ConfigError("deterministic mode takes exactly one profile")
    if cfg.deltas is not None:
        return nominal_scenario(cfg.network, cfg.deltas[0])
    return midpoint_scenario(cfg.profiles[0])


def build_model(cfg: RunConfig) -> ConstraintSystem:
    if cfg.mode == "deterministic":
        return build_deterministic_model(cfg.network, nominal_of(cfg), cfg.policy)
    return build_robust_model(cfg.network, cfg.profiles, cfg.policy)


def checked_scenarios(cfg: RunConfig) -> list[Scenario]:
    if cfg.mode == "deterministic":
        return [nominal_of(cfg)]
    return [s for p in cfg.profiles for s in extremal_scenarios(p)]


# --------------------------------------------------------------------------
# artifacts


def _write_json(path: pathlib.Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")


def _write_csv(path: pathlib.Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _fmt(x: float | None) -> str:
    if x is None or not math.isfinite(x):
        return ""
    return repr(float(x))


def slack_pressures_of(network: Network, states: dict[str, NetworkState], scenarios: Sequence[Scenario]) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for s in scenarios:
        st = states.get(s.scenario_id)
        if st is not None and s.profile_id not in out:
            out[s.profile_id] = {n: st.pi[n] for n in network.slack_nodes}
    return out


def recheck_plan(cfg: RunConfig, result: SolveResult) -> bool:
    """The plan must realise every checked scenario before plan.json is written."""
    net = cfg.network
    scenarios = checked_scenarios(cfg)
    tol = 1e-6
    by_profile: dict[str, list[Scenario]] = {}
    for s in scenarios:
        by_profile.setdefault(s.profile_id, []).append(s)
    for group in by_profile.values():
        states = [result.states.get(s.scenario_id) for s in group]
        ok = all(st is not None for st in states)
        if ok:
            for s, st in zip(group, states):
                if check_state(net, result.plan, st, st.directions) or max(state_residuals(net, result.plan, s, st)) > tol:
                    ok = False
            if len({tuple(st.pi[n] for n in net.slack_nodes) for st in states}) > 1:
                ok = False
        if not ok and not feasibility(net, result.plan, group, cfg.policy, hints=[st for st in states if st is not None]):
            return False
    return True


def plan_document(cfg: RunConfig, result: SolveResult) -> dict:
    scenarios = checked_scenarios(cfg)
    states = {s.scenario_id: result.states[s.scenario_id].to_doc() for s in scenarios if s.scenario_id in result.states}
    return {
        "instance": cfg.network.name,
        "mode": cfg.mode,
        "policy": cfg.policy,
        "profiles": [profile_to_doc(p) for p in cfg.profiles],
        "plan": result.plan.to_doc(),
        "cost": result.plan.cost,
        "slack_pressures": slack_pressures_of(cfg.network, result.states, scenarios),
        "slack_note": SLACK_NOTE,
        "states": states,
    }


def read_plan(network: Network, path: str | os.PathLike) -> tuple[ExpansionPlan, dict]:
    try:
        doc = json.loads(pathlib.Path(path).read_text())
        ids = doc["plan"]["built"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read plan file {path}: {exc}") from exc
    try:
        return ExpansionPlan.from_ids(network, ids), doc
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"plan file {path} does not match the instance: {exc}") from exc


def _status_exit(status: str) -> int:
    return {"optimal": EXIT_OK, "infeasible": EXIT_INFEASIBLE}.get(status, EXIT_LIMIT)


# --------------------------------------------------------------------------
# commands


def run_solve(cfg: RunConfig) -> SolveResult:
    return solve(build_model(cfg), cfg.options)


def cmd_solve(cfg: RunConfig) -> int:
    system = build_model(cfg)
    result = solve(system, cfg.options)
    report = {"config": cfg.echo(), "census": system.census(), **result.to_doc(cfg.timing)}
    _write_json(cfg.out_dir / "solve_report.json", report)
    if result.plan is not None:
        if not recheck_plan(cfg, result):
            print("internal error: solved plan failed the physics re-check", file=sys.stderr)
            return EXIT_INTERNAL
        _write_json(cfg.out_dir / "plan.json", plan_document(cfg, result))
    built = ", ".join(sorted(result.plan.built)) if result.plan is not None else "-"
    print(f"status {result.status}  cost {_fmt(result.objective) or '-'}  gap {_fmt(result.gap) or '-'}  "
          f"nodes {result.stats.nodes}  built [{built}]")
    return _status_exit(result.status)


def run_sweep(cfg: RunConfig, epsilons: Sequence[float]) -> list[tuple[float, SolveResult | str]]:
    rows = []
    for eps in epsilons:
        try:
            rows.append((eps, run_solve(cfg.with_epsilon(eps))))
        except (FormulationError, ValueError, RuntimeError) as exc:
            rows.append((eps, f"error: {exc}"))
    return rows


def sweep_is_monotone(rows: Sequence[tuple[float, SolveResult | str]], rel_tol: float = 1e-9) -> bool:
    costs = [r.objective for _, r in rows if isinstance(r, SolveResult) and r.status == "optimal"]
    return all(b >= a - rel_tol * max(1.0, abs(a)) for a, b in zip(costs, costs[1:]))


def cmd_sweep(cfg: RunConfig, epsilons: Sequence[float]) -> int:
    if list(epsilons) != sorted(epsilons):
        raise ConfigError("--epsilons must be sorted ascending")
    rows = run_sweep(cfg, epsilons)
    table = []
    worst = EXIT_OK
    for eps, r in rows:
        if isinstance(r, str):
            table.append([repr(eps), "", "", "", "", "error", ""])
            worst = max(worst, EXIT_INTERNAL)
            continue
        wall = _fmt(round(r.stats.wall_time * 1000, 3)) if cfg.timing else ""
        built = " ".join(sorted(r.plan.built)) if r.plan is not None else ""
        table.append([repr(eps), _fmt(r.objective), _fmt(r.gap), r.stats.nodes, wall, r.status, built])
        if r.status != "optimal":
            worst = max(worst, _status_exit(r.status))
    _write_csv(cfg.out_dir / "sweep.csv", ["epsilon", "objective", "gap", "nodes", "wall_ms", "status", "built"], table)
    for line in table:
        print(f"epsilon {line[0]:>6}  cost {line[1] or '-':>22}  nodes {line[3]}  {line[5]}")
    if not sweep_is_monotone(rows):
        print("optimal cost decreases along the epsilon grid", file=sys.stderr)
        return EXIT_NON_MONOTONE
    return worst


@dataclass(frozen=True)
class SampleCheck:
    network: Network
    plan: ExpansionPlan
    policy: str
    slack: dict[str, dict[str, float]] | None  # per profile id
    hints: tuple[NetworkState, ...]

    def __call__(self, scenario: Scenario) -> tuple[bool, str]:
        pins = self.slack.get(scenario.profile_id) if self.slack else None
        if self.hints:
            starts = [[controls_of(h, self.network)] for h in self.hints]
            found = search_states(self.network, self.plan, [scenario], None, starts, pins)
            if not isinstance(found, Infeasible):
                return True, ""
        ok = feasibility(self.network, self.plan, scenario, self.policy, slack_pressures=pins)
        return ok, "" if ok else "no admissible state"


def mc_audit(check: SampleCheck, scenarios: Sequence[Scenario], workers: int = 1) -> list[tuple[bool, str]]:
    """Feasibility of every sample; the order of results matches ``scenarios``."""
    if workers <= 1 or len(scenarios) < 2:
        return [check(s) for s in scenarios]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(check, scenarios, chunksize=max(1, len(scenarios) // (4 * workers))))


def sample_check_for(cfg: RunConfig, plan: ExpansionPlan, doc: dict, slack_mode: str) -> SampleCheck:
    """Resolve slack handling per audited profile.

    ``auto`` pins the slack only for profiles a robust plan was solved for;
    ``pinned`` falls back to the plan's first solved value for other profiles.
    """
    hints = tuple(NetworkState.from_doc(s) for s in doc.get("states", {}).values())
    solved = {pid: dict(v) for pid, v in doc.get("slack_pressures", {}).items()}
    pins: dict[str, dict[str, float]] = {}
    for p in cfg.profiles:
        if slack_mode == "free" or not solved:
            continue
        if p.profile_id in solved and (slack_mode == "pinned" or doc.get("mode") == "robust"):
            pins[p.profile_id] = solved[p.profile_id]
        elif slack_mode == "pinned":
            pins[p.profile_id] = next(iter(solved.values()))
    return SampleCheck(cfg.network, plan, doc.get("policy", cfg.policy), pins or None, hints)


def cmd_mc_check(cfg: RunConfig, plan_path: str, samples: int, slack_mode: str = "auto", workers: int | None = None) -> int:
    if cfg.seed is None:
        raise ConfigError("mc-check needs --seed")
    if samples < 1:
        raise ConfigError("--samples must be positive")
    plan, doc = read_plan(cfg.network, plan_path)
    check = sample_check_for(cfg, plan, doc, slack_mode)
    draws = [s for p in cfg.profiles for s in sample(p, samples, cfg.seed)]
    results = mc_audit(check, draws, workers if workers is not None else (os.cpu_count() or 1))
    rows = []
    summary = []
    for p in cfg.profiles:
        hits = 0
        for s, (ok, reason) in zip(draws, results):
            if s.profile_id != p.profile_id:
                continue
            rows.append([s.scenario_id, p.profile_id, int(ok), reason])
            hits += ok
        pinned = bool(check.slack and p.profile_id in check.slack)
        summary.append({"profile": p.profile_id, "samples": samples, "feasible": hits,
                        "probability": hits / samples, "slack": "pinned" if pinned else "free"})
    _write_csv(cfg.out_dir / "mc.csv", ["scenario_id", "profile", "feasible", "reason"], rows)
    _write_json(cfg.out_dir / "mc_summary.json", {"config": cfg.echo(), "plan": plan.to_doc(), "results": summary})
    for s in summary:
        print(f"profile {s['profile']}: feasible {s['feasible']}/{s['samples']}  probability {s['probability']:.4f}  slack {s['slack']}")
    return EXIT_OK


def pressure_deviation(a: SolveResult, b: SolveResult) -> float:
    worst = 0.0
    for sid, st in a.states.items():
        other = b.states.get(sid)
        if other is None:
            continue
        for n, p in st.pi.items():
            worst = max(worst, abs(p - other.pi[n]))
    return worst


def compare_policies(cfg: RunConfig) -> dict:
    runs = {}
    for pol in ("monotone", "general"):
        c = RunConfig(cfg.instance, cfg.network, cfg.profiles, cfg.deltas, cfg.epsilon, "robust", pol,
                      cfg.options, cfg.out_dir, cfg.seed, cfg.timing)
        runs[pol] = run_solve(c)
    m, g = runs["monotone"], runs["general"]
    same = m.plan is not None and g.plan is not None and m.plan.built == g.plan.built
    both = m.status == "optimal" and g.status == "optimal"
    dev = pressure_deviation(m, g) if both else None
    return {
        "epsilon": cfg.epsilon if cfg.deltas is not None else None,
        "status": {"monotone": m.status, "general": g.status},
        "built": {k: sorted(r.plan.built) if r.plan is not None else None for k, r in runs.items()},
        "plans_match": same,
        "cost": {k: r.objective if math.isfinite(r.objective) else None for k, r in runs.items()},
        "cost_delta": (m.objective - g.objective) if both else None,
        "max_pressure_deviation": dev,
        "max_pressure_deviation_relative": dev / cfg.network.pressure_sq_ref if dev is not None else None,
    }


def cmd_compare_policy(cfg: RunConfig, epsilons: Sequence[float] | None) -> int:
    configs = [cfg.with_epsilon(e) for e in epsilons] if epsilons else [cfg]
    runs = [compare_policies(c) for c in configs]
    _write_json(cfg.out_dir / "policy_report.json", {"config": cfg.echo(), "runs": runs})
    for r in runs:
        dev = r["max_pressure_deviation_relative"]
        print(f"epsilon {r['epsilon']}: plans match {r['plans_match']}  cost delta {r['cost_delta']}  "
              f"max pressure deviation {dev if dev is None else f'{dev:.3e}'} (relative)")
    worst = EXIT_OK
    for r in runs:
        for st in r["status"].values():
            if st != "optimal":
                worst = max(worst, _status_exit(st))
    return worst


def cmd_validate(instance: str) -> int:
    try:
        net = read_instance(instance)
    except OSError as exc:
        print(f"cannot read instance: {exc}")
        return EXIT_CONFIG
    except InstanceError as exc:
        print(f"invalid instance: {exc}")
        for f in exc.findings:
            print(f"  {f}")
        return EXIT_CONFIG
    counts = net.counts()
    print(f"{net.name}: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    for f in validate(net):
        print(f"  {f}")
    return EXIT_OK


def cmd_dump_model(cfg: RunConfig, fmt: str) -> int:
    system = build_model(cfg)
    name = "model.json" if fmt == "json" else "model.txt"
    path = cfg.out_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(system.dumps() if fmt == "json" else system.dump_text())
    census = system.census()
    print(", ".join(f"{k} {v}" for k, v in census.items()))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument handling


def _epsilon_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad epsilon list {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty epsilon list")
    return vals


def _common(p: argparse.ArgumentParser, profile: bool = True) -> None:
    p.add_argument("--instance", required=True, help="instance file or bundled name (base, a1, a2, a3)")
    if profile:
        src = p.add_mutually_exclusive_group()
        src.add_argument("--profile", help="profile document (JSON)")
        src.add_argument("--delta", type=float, action="append", help="demand scaling factor; repeat for several profiles")
        p.add_argument("--epsilon", type=float, default=0.0, help="relative half-width of the demand box")
        p.add_argument("--mode", choices=("robust", "deterministic"), default="robust")
        p.add_argument("--policy", choices=("monotone", "general"), default="monotone")
        p.add_argument("--gap-tol", type=float, default=SolverOptions.gap_tol)
        p.add_argument("--time-limit", type=float, default=None, help="seconds")
        p.add_argument("--node-limit", type=int, default=SolverOptions.node_limit)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--timing", action="store_true", help="include wall-clock fields in artifacts")
    p.add_argument("--out-dir", default="out")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gasexpand", description="Robust gas network expansion planning")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="solve one expansion problem")
    _common(p)
    p = sub.add_parser("sweep", help="solve along an epsilon grid")
    _common(p)
    p.add_argument("--epsilons", type=_epsilon_list, default=[0.01, 0.02, 0.03, 0.04, 0.05])
    p = sub.add_parser("mc-check", help="Monte Carlo feasibility audit of a plan")
    _common(p)
    p.add_argument("--plan", required=True, help="plan.json written by solve")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--slack", choices=("auto", "pinned", "free"), default="auto")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    p = sub.add_parser("compare-policy", help="monotone vs general compression policy")
    _common(p)
    p.add_argument("--epsilons", type=_epsilon_list, default=None)
    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("--instance", required=True)
    p = sub.add_parser("dump-model", help="write the constraint system")
    _common(p)
    p.add_argument("--format", choices=("text", "json"), default="text")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    try:
        net = read_instance(args.instance)
    except (InstanceError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    if args.profile is not None:
        try:
            profiles = tuple(load_profiles(pathlib.Path(args.profile).read_text()))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read profile file: {exc}") from exc
        deltas = None
        unknown = sorted({n for p in profiles for n in p.intervals} - set(net.node_by_id))
        if unknown:
            raise ConfigError(f"profile references unknown nodes {unknown}")
    elif args.delta:
        deltas = tuple(args.delta)
        try:
            profiles = tuple(scale_profile(net, d, args.epsilon) for d in deltas)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if len({p.profile_id for p in profiles}) != len(profiles):
            raise ConfigError("repeated --delta value")
    else:
        raise ConfigError("give exactly one of --profile or --delta")
    if args.gap_tol < 0 or args.node_limit < 1:
        raise ConfigError("--gap-tol must be >= 0 and --node-limit >= 1")
    if args.time_limit is not None and not args.time_limit > 0:
        raise ConfigError("--time-limit must be positive")
    options = SolverOptions(gap_tol=args.gap_tol, node_limit=args.node_limit,
                            time_limit=args.time_limit if args.time_limit is not None else math.inf)
    return RunConfig(args.instance, net, profiles, deltas, args.epsilon, args.mode, args.policy, options,
                     pathlib.Path(args.out_dir), args.seed, args.timing)


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "validate":
            return cmd_validate(args.instance)
        cfg = config_from_args(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.epsilons)
        if args.command == "mc-check":
            return cmd_mc_check(cfg, args.plan, args.samples, args.slack, args.workers)
        if args.command == "compare-policy":
            return cmd_compare_policy(cfg, args.epsilons)
        if args.command == "dump-model":
            return cmd_dump_model(cfg, args.format)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormulationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
