"""Experiment configuration, strategy comparison, sweeps and self-checks.

An experiment config is a flat ``key = value`` file (same syntax and
``include`` handling as parameter files).  Parameter keys may appear inline
and override the parameter file named by ``params``.  Recognised keys:

=====================  =====================================================
``cycles``             comma list of built-in cycle names or CSV paths
``params``             parameter file; ``builtin:default`` if absent
``strategies``         comma list of ``TCMS``, ``ECMS``, ``CS``, ``FE``
``solver.<STRATEGY>``  comma list of ``dp``, ``explicit``, ``candidate``,
                       ``numeric`` (causal solvers are TCMS only)
``ecms_zeta``          ``auto`` (tune for charge sustenance) or grams/SoC
``soc_step`` ...       DP grid: ``soc_step``, ``n_currents``,
                       ``refine_points``, ``terminal_band_steps``
``two_state``          ``true`` adds the SoH to the DP state
``adjoint_mode``       ``constant_zero``, ``constant_value``, ``integrated``
``adjoint_p0``         costate value for the non-zero modes [EUR]
``sweep.<name>``       ``lo:hi:steps`` for ``gamma`` [EUR/kWh] or ``A_b`` [V]
``sweep.policies``     comma list drawn from ``dp``, ``numeric``
``workers``            sweep processes; 0 means one per CPU
``verify.samples``     random samples per randomised self-check
``out``, ``seed``      output directory and random seed
=====================  =====================================================

Every output directory carries a ``manifest.json`` with the config hash;
writing into a directory produced by a different config fails unless
``force`` is set.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import multiprocessing
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .cycle import resolve_cycle
from .dp import DpGridSpec, DpInfeasible, DpSolution, dp_solve, tune_ecms_zeta
from .ocp import OcpSpec, RunResult, Strategy
from .params import PowertrainParams, builtin_path, params_from_dict, read_kv_file
from .pmp import AdjointMode, AdjointState, costate_variation, run_policy
from .powertrain import Fidelity, InfeasibleDemand, current_for_power
from .vehicle import PowerDemandTrace, demand_from_cycle

CAUSAL_SOLVERS = ("explicit", "candidate", "numeric")
SOLVERS = ("dp", *CAUSAL_SOLVERS)
SWEEP_AXES = {"gamma": "gamma_EUR_per_kWh", "A_b": "A_b_V"}


class ConfigError(ValueError):
    pass


class OutputConflict(RuntimeError):
    """The output directory holds artifacts from a different config."""


class StrategyFailed(RuntimeError):
    """A strategy could not be solved; the message names it."""


# ------------------------------------------------------------------ config --

@dataclass(frozen=True)
class SweepAxis:
    name: str
    lo: float
    hi: float
    steps: int

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass(frozen=True)
class ExperimentConfig:
    cycles: tuple[str, ...] = ("urban",)
    params: PowertrainParams = field(default_factory=PowertrainParams)
    strategies: tuple[Strategy, ...] = (Strategy.TCMS,)
    solvers: dict = field(default_factory=dict)
    ecms_zeta: float | None = None
    grid: DpGridSpec = field(default_factory=DpGridSpec)
    two_state: bool = False
    adjoint: AdjointState = field(default_factory=AdjointState)
    sweep: tuple[SweepAxis, ...] = ()
    sweep_policies: tuple[str, ...] = ("dp", "numeric")
    workers: int = 0
    verify_samples: int = 2000
    out: Path = Path("results")
    seed: int = 0
    config_hash: str = ""

    def solvers_for(self, strategy: Strategy) -> tuple[str, ...]:
        return self.solvers.get(strategy, ("dp",))


def _split(v: str) -> list[str]:
    return [x.strip() for x in v.split(",") if x.strip()]


def _bool(v: str) -> bool:
    if v.lower() in ("true", "yes", "1", "on"):
        return True
    if v.lower() in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def config_hash(kv: dict[str, str]) -> str:
    """Digest of the resolved settings and of every file they point to.

    Where results are written and how many processes compute them do not
    change the results, so ``out`` and ``workers`` are left out.
    """
    h = hashlib.sha256()
    for k in sorted(kv):
        if k in ("out", "workers"):
            continue
        parts = []
        for v in kv[k].split(","):
            v = v.strip()
            p = Path(v)
            parts.append(f"{v}@{_file_digest(p)}" if p.is_absolute() and p.is_file() else v)
        h.update(f"{k}={','.join(parts)}\n".encode())
    return h.hexdigest()[:16]


def _resolve_params_ref(v: str) -> Path:
    if v.startswith("builtin:"):
        return builtin_path(f"{v[len('builtin:'):]}.params")
    return Path(v)


def config_from_dict(kv: dict[str, str], base_dir: Path | None = None) -> ExperimentConfig:
    """Validate and assemble a config from resolved key-value pairs."""
    kv = dict(kv)
    base_dir = base_dir or Path.cwd()
    params_ref = kv.get("params", "builtin:default")
    ppath = _resolve_params_ref(params_ref)
    if not ppath.is_absolute():
        ppath = (base_dir / ppath).resolve()
    if not ppath.exists():
        raise ConfigError(f"parameter file not found: {ppath}")
    pkv = read_kv_file(ppath)
    pkv.update(kv)
    params = params_from_dict(pkv)
    kv["params"] = str(ppath)

    cycles = []
    for c in _split(kv.get("cycles", "urban")):
        if c.endswith(".csv"):
            p = Path(c) if Path(c).is_absolute() else (base_dir / c).resolve()
            if not p.exists():
                raise ConfigError(f"cycle file not found: {p}")
            c = str(p)
        cycles.append(c)
    if not cycles:
        raise ConfigError("at least one cycle is required")
    cycles = tuple(cycles)
    kv["cycles"] = ",".join(cycles)

    names = _split(kv.get("strategies", "TCMS"))
    if not names:
        raise ConfigError("at least one strategy is required")
    try:
        strategies = tuple(Strategy[n.upper()] for n in names)
    except KeyError as exc:
        raise ConfigError(f"unknown strategy {exc.args[0]}") from None
    solvers = {}
    for s in strategies:
        chosen = tuple(x.lower() for x in _split(kv.get(f"solver.{s.value}", "dp")))
        bad = [x for x in chosen if x not in SOLVERS]
        if bad or not chosen:
            raise ConfigError(f"solver.{s.value}: expected some of {SOLVERS}, got {chosen}")
        if s is not Strategy.TCMS and set(chosen) - {"dp"}:
            raise ConfigError(f"causal solvers apply to TCMS only, not {s.value}")
        solvers[s] = chosen

    z = kv.get("ecms_zeta", "auto")
    ecms_zeta = None if z.lower() == "auto" else float(z)

    g = DpGridSpec()
    grid = DpGridSpec(
        soc_step=float(kv.get("soc_step", g.soc_step)),
        n_currents=int(kv.get("n_currents", g.n_currents)),
        refine_points=int(kv.get("refine_points", g.refine_points)),
        terminal_band_steps=float(kv.get("terminal_band_steps", g.terminal_band_steps)),
        xi_points=int(kv.get("xi_points", g.xi_points)),
        xi_span=float(kv.get("xi_span", g.xi_span)))

    mode = AdjointMode(kv.get("adjoint_mode", "constant_zero"))
    adjoint = AdjointState(float(kv.get("adjoint_p0", 0.0)) if mode is not AdjointMode.CONSTANT_ZERO
                           else 0.0, mode)

    axes = []
    for key, v in kv.items():
        if not key.startswith("sweep.") or key == "sweep.policies":
            continue
        name = key[len("sweep."):]
        if name not in SWEEP_AXES:
            raise ConfigError(f"cannot sweep {name!r}; choose from {sorted(SWEEP_AXES)}")
        try:
            lo, hi, n = v.split(":")
            axis = SweepAxis(name, float(lo), float(hi), int(n))
        except ValueError:
            raise ConfigError(f"{key}: expected lo:hi:steps, got {v!r}") from None
        if axis.steps < 1 or axis.hi < axis.lo or (axis.steps == 1 and axis.hi != axis.lo):
            raise ConfigError(f"{key}: empty or inconsistent range {v!r}")
        axes.append(axis)
    axes.sort(key=lambda a: list(SWEEP_AXES).index(a.name))
    policies = tuple(_split(kv.get("sweep.policies", "dp, numeric")))
    if not policies or set(policies) - {"dp", "numeric"}:
        raise ConfigError("sweep.policies must be drawn from dp, numeric")

    out = Path(kv.get("out", "results"))
    if not out.is_absolute():
        out = base_dir / out
    return ExperimentConfig(
        cycles=cycles, params=params, strategies=strategies, solvers=solvers,
        ecms_zeta=ecms_zeta, grid=grid, two_state=_bool(kv.get("two_state", "false")),
        adjoint=adjoint, sweep=tuple(axes), sweep_policies=policies,
        workers=int(kv.get("workers", 0)), verify_samples=int(kv.get("verify.samples", 2000)),
        out=out, seed=int(kv.get("seed", 0)), config_hash=config_hash(kv))


def load_config(path: str | Path | None = None,
                overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Read a config file (or start from defaults) and apply overrides."""
    kv: dict[str, str] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        kv = read_kv_file(path)
        base = path.resolve().parent
    kv.update(overrides or {})
    return config_from_dict(kv, base)


# ---------------------------------------------------------------- outputs ---

def _versions() -> dict:
    import numba
    return {"hevcost": __version__, "numpy": np.__version__, "numba": numba.__version__,
            "python": platform.python_version()}


def prepare_output(out: Path, cfg_hash: str, force: bool = False) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.json"
    if manifest.exists() and not force:
        old = json.loads(manifest.read_text(encoding="utf-8")).get("config_hash")
        if old != cfg_hash:
            raise OutputConflict(f"{out} holds results of config {old}, not {cfg_hash}; "
                                 "pass force to overwrite")


def _update_manifest(out: Path, cfg_hash: str, artifacts: list[str], kind: str) -> None:
    manifest = out / "manifest.json"
    data = {"config_hash": cfg_hash, "artifacts": {}}
    if manifest.exists():
        old = json.loads(manifest.read_text(encoding="utf-8"))
        if old.get("config_hash") == cfg_hash:
            data["artifacts"] = old.get("artifacts", {})
    for a in artifacts:
        data["artifacts"][a] = kind
    data["created"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    data["versions"] = _versions()
    manifest.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _cycle_tag(ref: str) -> str:
    return Path(ref).stem if ref.endswith(".csv") else ref


def _demand(ref: str, params: PowertrainParams) -> PowerDemandTrace:
    return demand_from_cycle(resolve_cycle(ref), params.vehicle)


def write_demands(cfg: ExperimentConfig, force: bool = False) -> list[Path]:
    prepare_output(cfg.out, cfg.config_hash, force)
    paths = []
    for ref in cfg.cycles:
        p = cfg.out / f"demand_{_cycle_tag(ref)}.csv"
        _demand(ref, cfg.params).to_csv(p)
        paths.append(p)
    _update_manifest(cfg.out, cfg.config_hash, [p.name for p in paths], "demand")
    return paths


# -------------------------------------------------------------- comparison --

@dataclass(frozen=True)
class ComparisonRow:
    cycle: str
    strategy: str
    solver: str
    cost_eur: float
    fuel_g: float
    dq_b: float
    q_T: float
    zeta: float | None
    trace_file: str


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]
    metadata: dict

    def row(self, cycle: str, strategy: str, solver: str = "dp") -> ComparisonRow:
        for r in self.rows:
            if (r.cycle, r.strategy, r.solver) == (cycle, strategy, solver):
                return r
        raise KeyError((cycle, strategy, solver))

    def table(self) -> str:
        head = f"{'cycle':<10} {'strategy':<8} {'solver':<9} {'cost EUR':>9} {'fuel g':>9} {'dq_b':>8}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.cycle:<10} {r.strategy:<8} {r.solver:<9} {r.cost_eur:>9.4f} "
                         f"{r.fuel_g:>9.2f} {r.dq_b:>+8.4f}")
        return "\n".join(lines)


def _spec(cfg: ExperimentConfig, strategy: Strategy, zeta: float | None = None) -> OcpSpec:
    b = cfg.params.battery
    return OcpSpec(strategy, q0=cfg.params.q0, q_bounds=(b.q_min, b.q_max),
                   fidelity=cfg.params.fidelity, soh_as_state=cfg.two_state, zeta=zeta)


def solve_dp(cfg: ExperimentConfig, strategy: Strategy, demand: PowerDemandTrace
             ) -> tuple[DpSolution, float | None]:
    coeffs = cfg.params.costs
    if strategy is Strategy.ECMS and cfg.ecms_zeta is None:
        tuned = tune_ecms_zeta(demand, coeffs, cfg.params, grid=cfg.grid, q0=cfg.params.q0)
        return tuned.solution, tuned.zeta
    zeta = cfg.ecms_zeta if strategy is Strategy.ECMS else None
    return dp_solve(_spec(cfg, strategy, zeta), demand, coeffs, cfg.params, cfg.grid), zeta


def run_one(cfg: ExperimentConfig, strategy: Strategy, solver: str,
            demand: PowerDemandTrace) -> tuple[RunResult, float | None]:
    if solver == "dp":
        sol, zeta = solve_dp(cfg, strategy, demand)
        return sol.trace, zeta
    return run_policy(solver, demand, q0=cfg.params.q0, adjoint=cfg.adjoint,
                      coeffs=cfg.params.costs, params=cfg.params), None


def run_comparison(cfg: ExperimentConfig, force: bool = False,
                   only: set[str] | None = None) -> ComparisonReport:
    """Solve every configured strategy on every cycle and write the reports.

    ``only`` restricts the solvers (for example ``{"dp"}``).
    """
    prepare_output(cfg.out, cfg.config_hash, force)
    rows, artifacts = [], []
    for ref in cfg.cycles:
        tag = _cycle_tag(ref)
        demand = _demand(ref, cfg.params)
        for strategy in cfg.strategies:
            for solver in cfg.solvers_for(strategy):
                if only is not None and solver not in only:
                    continue
                try:
                    run, zeta = run_one(cfg, strategy, solver, demand)
                except (DpInfeasible, InfeasibleDemand, ValueError) as exc:
                    raise StrategyFailed(f"{tag}/{strategy.value}/{solver}: {exc}") from exc
                name = f"trace_{tag}_{strategy.value.lower()}_{solver}.csv"
                run.to_csv(cfg.out / name)
                artifacts.append(name)
                rows.append(ComparisonRow(tag, strategy.value, solver, run.cost, run.fuel_g,
                                          run.dq, float(run.q[-1]), zeta, name))
    if not rows:
        raise ConfigError("no strategy/solver pair selected")
    with (cfg.out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cycle", "strategy", "solver", "cost_eur", "fuel_g", "dq_b", "q_T",
                    "zeta_g", "trace_file", "config_hash"])
        for r in rows:
            w.writerow([r.cycle, r.strategy, r.solver, f"{r.cost_eur:.4f}", f"{r.fuel_g:.2f}",
                        f"{r.dq_b:.6f}", f"{r.q_T:.6f}",
                        "" if r.zeta is None else f"{r.zeta:.3f}", r.trace_file, cfg.config_hash])
    report = ComparisonReport(tuple(rows), {"config_hash": cfg.config_hash, **_versions()})
    (cfg.out / "summary.txt").write_text(report.table() + "\n", encoding="utf-8")
    artifacts += ["summary.csv", "summary.txt"]
    _update_manifest(cfg.out, cfg.config_hash, artifacts, "comparison")
    return report


# ------------------------------------------------------------- sensitivity --

@dataclass(frozen=True)
class SweepPoint:
    cycle: str
    values: dict
    dp: dict | None
    numeric: dict | None


@dataclass(frozen=True)
class SweepReport:
    points: tuple[SweepPoint, ...]
    axes: tuple[SweepAxis, ...]
    files: tuple[Path, ...]
    elapsed_s: float


def point_params(params: PowertrainParams, values: dict) -> PowertrainParams:
    if "gamma" in values:
        params = params.with_fuel_price(values["gamma"])
    if "A_b" in values:
        params = params.with_ocv_slope(values["A_b"])
    return params


def _summary(run: RunResult) -> dict:
    return {"cost": run.cost, "fuel": run.fuel_g, "depletion": -run.dq}


def sweep_point(args) -> tuple:
    """One grid point: DP benchmark and/or numeric policy.  Runs in a worker process."""
    index, tag, demand, params, values, grid, policies, adjoint = args
    p = point_params(params, values)
    out_dp = out_n = None
    if "dp" in policies:
        b = p.battery
        spec = OcpSpec(Strategy.TCMS, q0=p.q0, q_bounds=(b.q_min, b.q_max), fidelity=p.fidelity)
        sol = dp_solve(spec, demand, p.costs, p, grid)
        out_dp = _summary(sol.trace)
        out_dp["costate_variation"] = costate_variation(sol.trace, p.costs, p)
    if "numeric" in policies:
        run = run_policy("numeric", demand, q0=p.q0, adjoint=adjoint, coeffs=p.costs, params=p)
        out_n = _summary(run)
    return index, SweepPoint(tag, values, out_dp, out_n)


def _sweep_tasks(cfg: ExperimentConfig) -> list[tuple]:
    if not cfg.sweep:
        raise ConfigError("no sweep axes configured")
    grids = [a.values() for a in cfg.sweep]
    tasks = []
    for ref in cfg.cycles:
        demand = _demand(ref, cfg.params)
        for combo in np.array(np.meshgrid(*grids, indexing="ij")).reshape(len(grids), -1).T:
            values = {a.name: float(v) for a, v in zip(cfg.sweep, combo)}
            tasks.append((len(tasks), _cycle_tag(ref), demand, cfg.params, values, cfg.grid,
                          cfg.sweep_policies, cfg.adjoint))
    return tasks


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def run_sensitivity(cfg: ExperimentConfig, force: bool = False,
                    progress: Callable[[int, int], None] | None = None) -> SweepReport:
    """Evaluate the DP benchmark and the numeric policy over the sweep grid.

    Writes one long-format CSV per cycle, ready to pivot into surfaces.
    """
    prepare_output(cfg.out, cfg.config_hash, force)
    tasks = _sweep_tasks(cfg)
    t0 = time.perf_counter()
    results: list[SweepPoint | None] = [None] * len(tasks)
    workers = cfg.workers or os.cpu_count() or 1
    try:
        if workers > 1 and len(tasks) > 1:
            # fresh interpreters: forking after the DP kernels have started
            # their OpenMP threads is unsafe, and the kernels are disk-cached
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                for done, (k, pt) in enumerate(pool.map(sweep_point, tasks), 1):
                    results[k] = pt
                    if progress:
                        progress(done, len(tasks))
        else:
            for done, task in enumerate(tasks, 1):
                k, pt = sweep_point(task)
                results[k] = pt
                if progress:
                    progress(done, len(tasks))
    except (DpInfeasible, InfeasibleDemand) as exc:
        raise StrategyFailed(f"sweep: {exc}") from exc
    elapsed = time.perf_counter() - t0
    files = []
    cols = [SWEEP_AXES[a.name] for a in cfg.sweep]
    for tag in dict.fromkeys(pt.cycle for pt in results):
        path = cfg.out / f"sweep_{tag}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*cols, "dp_cost_eur", "dp_fuel_g", "dp_depletion", "dp_costate_variation",
                        "n_cost_eur", "n_fuel_g", "n_depletion", "config_hash"])
            for pt in results:
                if pt.cycle != tag:
                    continue
                d, n = pt.dp or {}, pt.numeric or {}
                w.writerow([*(repr(pt.values[a.name]) for a in cfg.sweep),
                            _fmt(d.get("cost")), _fmt(d.get("fuel")), _fmt(d.get("depletion")),
                            _fmt(d.get("costate_variation")), _fmt(n.get("cost")),
                            _fmt(n.get("fuel")), _fmt(n.get("depletion")), cfg.config_hash])
        files.append(path)
    _update_manifest(cfg.out, cfg.config_hash, [f.name for f in files], "sweep")
    return SweepReport(tuple(results), cfg.sweep, tuple(files), elapsed)


# ------------------------------------------------------------ self-checks ---

@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class VerifyReport:
    checks: tuple[CheckResult, ...]
    seed: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def lines(self) -> list[str]:
        return [f"{'PASS' if c.passed else 'FAIL'} {c.name}: measured {c.measured:.3e} "
                f"(tolerance {c.tolerance:.1e}){' ' + c.detail if c.detail else ''}"
                for c in self.checks]

    def to_csv(self, path: Path) -> None:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "measured", "tolerance", "passed", "detail"])
            for c in self.checks:
                w.writerow([c.name, repr(float(c.measured)), repr(float(c.tolerance)),
                            str(c.passed).lower(), c.detail])


def _check(name: str, measured: float, tol: float, detail: str = "") -> CheckResult:
    return CheckResult(name, float(measured), float(tol), bool(measured <= tol), detail)


def check_dp_enumeration(rng: np.random.Generator, n: int = 50) -> CheckResult:
    from .oracles import dp_matches_enumeration, toy_instance
    worst, where = 0.0, ""
    for k in range(n):
        inst = toy_instance(rng)
        got, ref = dp_matches_enumeration(inst)
        err = 0.0 if (math.isinf(got) and math.isinf(ref)) else abs(got - ref)
        if math.isnan(err) or err > worst:
            worst, where = (math.inf if math.isnan(err) else err), f"instance {k} ({inst.spec.strategy.value})"
    return _check("dp_vs_enumeration", worst, 0.0, where)


def _random_pm_p(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    return rng.uniform(-50e3, 75e3, n), rng.uniform(-15.0, 15.0, n)


def check_explicit_laws(rng: np.random.Generator, params: PowertrainParams,
                        n: int) -> list[CheckResult]:
    from .oracles import hamiltonian_grid_argmin
    from .pmp import candidate_set_law, explicit_law_constrained, numeric_law
    coeffs = params.costs
    worst_grid = worst_num = 0.0
    mismatches = 0
    where = ""
    for pm, p in zip(*_random_pm_p(rng, n)):
        try:
            d = explicit_law_constrained(pm, p, coeffs, params)
        except InfeasibleDemand:
            continue
        ref = hamiltonian_grid_argmin(pm, p, coeffs, params)
        if abs(ref - d.i_opt) > worst_grid:
            worst_grid, where = abs(ref - d.i_opt), f"P_m={pm:.1f} W, p={p:.4f}"
        c = candidate_set_law(pm, p, 0.5, coeffs, params, Fidelity.M2)
        mismatches += int(c.i_opt != d.i_opt or c.region != d.region)
        q = float(rng.uniform(params.battery.q_min, params.battery.q_max))
        worst_num = max(worst_num, abs(numeric_law(pm, p, q, coeffs, params, Fidelity.M2).i_opt
                                       - d.i_opt))
    return [_check("explicit_vs_grid_argmin", worst_grid, 0.02, where),
            _check("candidate_vs_explicit", mismatches, 0.0),
            _check("explicit_vs_numeric_m2", worst_num, 0.01)]


def check_boundaries(rng: np.random.Generator, params: PowertrainParams, n: int,
                     psi_transform: Callable[[dict], dict] | None = None) -> list[CheckResult]:
    """Hamiltonian equality at every power limit, computed and closed-form."""
    from .pmp import (
        _Simplified, branch_currents, closed_form_power_limits, costate_limits, power_limits,
        psi_terms,
    )
    coeffs = params.costs
    s = _Simplified.of(coeffs, params)
    vertex = s.v * s.v / (4 * s.r)
    p12, p23 = costate_limits(coeffs, params)
    worst = {"computed": (0.0, ""), "closed_form": (0.0, "")}
    for p in rng.uniform(-15.0, 15.0, n):
        i1, i3 = branch_currents(p, coeffs, params)
        if p < p12:
            pairs = [((1, 4), 1, i1), ((1, 5), 1, i1)]
        elif p <= p23:
            pairs = [((2, 4), 2, 0.0)]
        else:
            pairs = [((3, 4), 3, i3)]
        psi = psi_terms(p, coeffs, params)
        if psi_transform is not None:
            psi = psi_transform(dict(psi))
        computed = power_limits(p, coeffs, params)
        for label, lims in (("computed", computed),
                            ("closed_form", closed_form_power_limits(p, coeffs, params, psi))):
            for key, mode, i_on in pairs:
                pm = lims[key]
                # a limit capped at the parabola vertex is not an equality point
                if not math.isfinite(computed[key]) or computed[key] >= vertex * (1 - 1e-12):
                    continue
                if not math.isfinite(pm):
                    pm = math.inf
                i_off = current_for_power(pm, s.v, s.r) if math.isfinite(pm) else math.nan
                h_on = s.h(mode, i_on, p, pm)
                h_off = s.h(key[1], i_off, p, pm)
                rel = abs(h_on - h_off) / max(abs(h_on), abs(h_off), 1e-300)
                rel = math.inf if math.isnan(rel) else rel
                if rel > worst[label][0]:
                    worst[label] = (rel, f"P_lim{key} at p={p:.6f} (P_m={pm:.1f} W)")
    return [_check(f"boundary_equality_{label}", w, 1e-6, where)
            for label, (w, where) in worst.items()]


def check_gradients(rng: np.random.Generator, params: PowertrainParams, n: int = 500) -> CheckResult:
    from .oracles import PolynomialMaps
    from .pmp import adjoint_gradients
    maps = PolynomialMaps()
    p = maps.apply(params)
    b = p.battery
    worst, where = 0.0, ""
    done = 0
    while done < n:
        q = float(rng.uniform(b.q_min, b.q_max))
        i = float(rng.uniform(5.0, 100.0) * rng.choice([-1.0, 1.0]))
        pm = float(rng.uniform(0.0, 40e3))
        p_r = pm - (b.ocv_slope * q + b.ocv_offset - b.resistance * i) * i
        if not 1.0 < p_r < p.egu.p_max:
            continue
        done += 1
        ds, df = adjoint_gradients(q, i, pm, p)
        for got, ref, name in ((ds, maps.dsigma_dq(q), "dsigma/dq"),
                               (df, maps.dfuel_dq(q, i, pm, b), "dP_f/dq")):
            rel = abs(got - ref) / abs(ref)
            if rel > worst:
                worst, where = rel, f"{name} at q={q:.4f}, i={i:.2f} A"
    return _check("adjoint_gradients", worst, 1e-4, where)


def verify_suite(params: PowertrainParams | None = None, seed: int = 0, samples: int = 2000,
                 psi_transform: Callable[[dict], dict] | None = None) -> VerifyReport:
    """Run the oracle cross-checks; failures are reported, never raised."""
    from .params import default_params
    params = params or default_params()
    rng = np.random.default_rng(seed)
    checks = [check_dp_enumeration(rng)]
    checks += check_explicit_laws(rng, params, samples)
    checks += check_boundaries(rng, params, max(samples // 2, 1), psi_transform)
    checks.append(check_gradients(rng, params))
    return VerifyReport(tuple(checks), seed)


def run_verify(cfg: ExperimentConfig, force: bool = False) -> VerifyReport:
    prepare_output(cfg.out, cfg.config_hash, force)
    report = verify_suite(cfg.params, cfg.seed, cfg.verify_samples)
    report.to_csv(cfg.out / "verify.csv")
    _update_manifest(cfg.out, cfg.config_hash, ["verify.csv"], "verify")
    return report


