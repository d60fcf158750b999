"""End-to-end benchmark runs: reduce, plan, validate, aggregate.

One record per (scene, risk, N', seed).  MMD plans on a CEM-optimized reduced
set drawn from n_opt samples per obstacle; the SAA/CVaR/scenario
baselines draw their N' samples directly, unless the reduced-set ablation
is switched on.  Collision rates are always measured on the held-out
validation draws.
"""

import csv
import io
import itertools
import json
import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .frenet import (BoundaryConditions, EgoTrajectory, FrenetState, VehicleParams,
                     flat_controls, step_dynamics)
from .optimizer import (RISK_TAGS, ConstraintSpec, CostWeights, OptimizerConfig,
                        RiskCost, plan)
from .reduced_set import CemConfig, ReducedSet, random_reduced_set, reduce
from .risk import ObstacleSampleSet, worst_f_batch
from .scenarios import ScenarioSpec, sample_obstacle

log = logging.getLogger(__name__)

SELECTIONS = ("optimal", "random", "direct", "reduced")


def collision_rate(ego: EgoTrajectory, validation: ObstacleSampleSet,
                   params: VehicleParams = VehicleParams()) -> float:
    """Fraction of validation rows whose collision residual is positive."""
    if validation.N == 0:
        raise ValueError("validation set is empty")
    return float(np.mean(worst_f_batch(ego.s, ego.d, validation, params) > 0.0))


def joint_collision_rate(ego: EgoTrajectory, validations, params=VehicleParams()) -> float:
    """Validation row j collides if the ego hits row j of any obstacle."""
    if not validations:
        return 0.0
    hit = np.zeros(validations[0].N, dtype=bool)
    for V in validations:
        if V.N != hit.size:
            raise ValueError("validation sets must share their row count")
        hit |= worst_f_batch(ego.s, ego.d, V, params) > 0.0
    return float(hit.mean())


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    risk: str = "mmd"
    n_prime: int = 5
    seeds: tuple = (0,)
    n_opt: int = 100
    n_val: int = 10000
    baseline_uses_reduced_set: bool = False
    random_reduced_set: bool = False
    risk_weight: float = None
    cvar_alpha: float = 0.9
    residual_sigma: float = None
    cem: CemConfig = CemConfig()
    opt: OptimizerConfig = OptimizerConfig()
    params: VehicleParams = VehicleParams()
    out_dir: str = None

    def __post_init__(self):
        if self.risk not in RISK_TAGS:
            raise ValueError(f"unknown risk tag {self.risk!r}")
        if not 1 <= self.n_prime <= self.n_opt:
            raise ValueError(f"N'={self.n_prime} must lie in [1, n_opt={self.n_opt}]")
        if len(self.seeds) == 0:
            raise ValueError("need at least one seed")

    @property
    def selection(self) -> str:
        if self.risk == "mmd":
            return "random" if self.random_reduced_set else "optimal"
        return "reduced" if self.baseline_uses_reduced_set else "direct"

    def load_scenario(self) -> ScenarioSpec:
        if isinstance(self.scenario, ScenarioSpec):
            return self.scenario
        return ScenarioSpec.load(self.scenario)


@dataclass
class SceneRecord:
    scenario: str
    risk: str
    selection: str
    n_prime: int
    seed: int
    status: str
    collision_rate: float
    reduce_time: float
    plan_time: float
    residual_norm: float
    cost: float
    risk_value: float
    behavior_d: float
    behavior_v: float
    error: str = ""


ALL_FIELDS = [f.name for f in fields(SceneRecord)]
# wall times vary run to run; they live in a separate file so the record
# CSV of a seeded sweep is byte-reproducible
TIMING_FIELDS = ["scenario", "risk", "selection", "n_prime", "seed", "reduce_time", "plan_time"]
RECORD_FIELDS = [k for k in ALL_FIELDS if k not in ("reduce_time", "plan_time")]
_INT_FIELDS = {"n_prime", "seed"}
_STR_FIELDS = {"scenario", "risk", "selection", "status", "error"}


def _scene_inputs(spec: ScenarioSpec, cfg: RunConfig, seed: int):
    """Per-obstacle optimization sets (what the planner sees) and validation sets."""
    obs, sets = spec.sample_sets(seed, cfg.n_opt, cfg.n_val)
    t0 = time.perf_counter()
    chosen = []
    for j, ((O, _), ob) in enumerate(zip(sets, obs)):
        if cfg.selection == "optimal" or cfg.selection == "reduced":
            rs = reduce(O, cfg.n_prime, replace(cfg.cem, seed=seed * 1000 + j))
            if cfg.selection == "reduced":
                rs = ReducedSet(rs.indices, rs.samples,
                                np.full(cfg.n_prime, 1.0 / cfg.n_prime), rs.sigma, rs.gap)
        elif cfg.selection == "random":
            rs = random_reduced_set(O, cfg.n_prime, seed=[seed, j, 17])
        else:
            D = sample_obstacle(ob, cfg.n_prime, [seed, j, 99], spec.H, spec.dt)
            rs = ReducedSet(np.arange(cfg.n_prime), D, np.full(cfg.n_prime, 1.0 / cfg.n_prime), 1.0)
        chosen.append(rs)
    reduce_time = time.perf_counter() - t0 if cfg.selection != "direct" else 0.0
    return chosen, [V for _, V in sets], reduce_time


def planning_setup(spec: ScenarioSpec, cfg: RunConfig, seed: int):
    risk = RiskCost(cfg.risk, cfg.risk_weight, cfg.cvar_alpha, cfg.residual_sigma)
    opt = replace(cfg.opt, H=spec.H, dt=spec.dt, seed=seed)
    weights = CostWeights(v_des=spec.ego.v_des, d_des=spec.ego.d_des)
    cons = ConstraintSpec(d_min=spec.lanes.d_min, d_max=spec.lanes.d_max,
                          v_max=cfg.params.v_max, a_max=cfg.params.a_max)
    return risk, opt, weights, cons


def run_scene(cfg: RunConfig, seed: int = None) -> SceneRecord:
    """Reduce, plan and validate one seeded scene; failures become records."""
    seed = cfg.seeds[0] if seed is None else seed
    spec = cfg.load_scenario()
    rec = SceneRecord(spec.name, cfg.risk, cfg.selection, cfg.n_prime, int(seed), "ok",
                      float("nan"), float("nan"), float("nan"), float("nan"),
                      float("nan"), float("nan"), float("nan"), float("nan"))
    try:
        chosen, vals, rec.reduce_time = _scene_inputs(spec, cfg, seed)
        risk, opt, weights, cons = planning_setup(spec, cfg, seed)
        t0 = time.perf_counter()
        res = plan(spec.ego.bc, chosen, risk, opt, weights, cons, cfg.params, spec.curvature())
        rec.plan_time = time.perf_counter() - t0
        rec.collision_rate = joint_collision_rate(res.trajectory, vals, cfg.params)
        rec.residual_norm = res.residual_norm
        rec.cost = res.cost
        rec.risk_value = res.risk
        rec.behavior_d = res.behavior.b_d
        rec.behavior_v = res.behavior.b_v
    except Exception as exc:  # recorded, the sweep keeps going
        log.warning("scene %s seed %s failed: %s", spec.name, seed, exc)
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


@dataclass
class BenchmarkReport:
    records: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)

    def compute_aggregates(self):
        self.aggregates = aggregate(self.records)
        return self.aggregates

    def to_csv(self) -> str:
        return records_to_csv(self.records)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        # bytes, not text: the CRLF row terminators must survive untranslated
        (out / "records.csv").write_bytes(self.to_csv().encode())
        (out / "timings.csv").write_bytes(records_to_csv(self.records, TIMING_FIELDS).encode())
        (out / "aggregates.json").write_text(json.dumps(self.aggregates, indent=2) + "\n")
        return out


def _escape(text: str) -> str:
    # the csv module cannot carry NUL; backslash-escape it (and backslash itself)
    return text.replace("\\", "\\\\").replace("\x00", "\\0")


def _unescape(text: str) -> str:
    return re.sub(r"\\(.)", lambda m: "\x00" if m.group(1) == "0" else m.group(1), text)


def _fmt(name, value):
    if name in _STR_FIELDS:
        return _escape(str(value))
    if name in _INT_FIELDS:
        return str(value)
    return repr(float(value))


def records_to_csv(records, columns=None) -> str:
    columns = RECORD_FIELDS if columns is None else columns
    buf = io.StringIO(newline="")
    # RFC 4180 row terminator; any field holding \r or \n gets quoted
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in records:
        w.writerow([_fmt(k, getattr(r, k)) for k in columns])
    return buf.getvalue()


def records_from_csv(text: str):
    """Inverse of records_to_csv; columns absent from the file become NaN."""
    rows = csv.DictReader(io.StringIO(text, newline=""))
    out = []
    for row in rows:
        vals = {}
        for k in ALL_FIELDS:
            if k not in row:
                vals[k] = float("nan")
                continue
            v = row[k]
            vals[k] = _unescape(v) if k in _STR_FIELDS else int(v) if k in _INT_FIELDS else float(v)
        out.append(SceneRecord(**vals))
    return out


def read_report(out_dir) -> BenchmarkReport:
    """Rebuild a report from records.csv joined with timings.csv."""
    out = Path(out_dir)
    records = records_from_csv((out / "records.csv").read_bytes().decode())
    tpath = out / "timings.csv"
    if tpath.exists():
        timings = records_from_csv(tpath.read_bytes().decode())
        if len(timings) != len(records):
            raise ValueError("records.csv and timings.csv disagree in length")
        for r, t in zip(records, timings):
            if (r.scenario, r.risk, r.selection, r.n_prime, r.seed) != \
                    (t.scenario, t.risk, t.selection, t.n_prime, t.seed):
                raise ValueError(f"timing row for seed {t.seed} does not match its record")
            r.reduce_time, r.plan_time = t.reduce_time, t.plan_time
    report = BenchmarkReport(records)
    report.compute_aggregates()
    return report


def _summary(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {"median": None, "q1": None, "q3": None, "min": None, "max": None}
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3),
            "min": float(x.min()), "max": float(x.max())}


def aggregate(records):
    """Collision-rate and timing statistics per (scenario, risk, selection, N')."""
    groups = {}
    for r in records:
        groups.setdefault((r.scenario, r.risk, r.selection, r.n_prime), []).append(r)
    out = []
    for (scen, risk, sel, n_prime), rs in sorted(groups.items()):
        ok = [r for r in rs if r.status == "ok"]
        out.append({
            "scenario": scen, "risk": risk, "selection": sel, "n_prime": n_prime,
            "n_records": len(rs), "n_failed": len(rs) - len(ok),
            "collision_rate": _summary([r.collision_rate for r in ok]),
            "reduce_time": _summary([r.reduce_time for r in ok]),
            "plan_time": _summary([r.plan_time for r in ok]),
            "residual_norm": _summary([r.residual_norm for r in ok]),
        })
    return out


def _run_job(job):
    cfg, seed = job
    return run_scene(cfg, seed)


def sweep_jobs(base: RunConfig, scenarios=None, risks=None, n_primes=None, seeds=None):
    scenarios = [base.scenario] if scenarios is None else list(scenarios)
    risks = [base.risk] if risks is None else list(risks)
    n_primes = [base.n_prime] if n_primes is None else list(n_primes)
    seeds = list(base.seeds) if seeds is None else list(seeds)
    jobs = []
    for scen, risk, n_prime, seed in itertools.product(scenarios, risks, n_primes, seeds):
        jobs.append((replace(base, scenario=scen, risk=risk, n_prime=n_prime, seeds=(seed,)), seed))
    return jobs


def run_sweep(base: RunConfig, scenarios=None, risks=None, n_primes=None, seeds=None,
              workers: int = 1, out_dir=None) -> BenchmarkReport:
    """Cross product of scenes x risks x N' x seeds; records keep grid order."""
    jobs = sweep_jobs(base, scenarios, risks, n_primes, seeds)
    if not jobs:
        raise ValueError("empty sweep grid")
    if workers <= 1:
        records = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_job, jobs))
    report = BenchmarkReport(records)
    report.compute_aggregates()
    out_dir = out_dir if out_dir is not None else base.out_dir
    if out_dir is not None:
        report.write(out_dir)
    return report


@dataclass
class MpcLog:
    states: list = field(default_factory=list)
    behaviors: list = field(default_factory=list)
    plans: list = field(default_factory=list)
    cycle_times: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = []
        for k, (x, b, p, t) in enumerate(zip(self.states, self.behaviors, self.plans,
                                             self.cycle_times)):
            lines.append(json.dumps({"cycle": k, "state": asdict(x), "behavior": list(b),
                                     "plan_s": p[0], "plan_d": p[1], "wall_time": t}))
        return "\n".join(lines) + ("\n" if lines else "")


def _window(O: ObstacleSampleSet, start: int, H: int, s_offset: float) -> ObstacleSampleSet:
    Hl = O.H
    s = O.O[:, start:start + H] - s_offset
    d = O.O[:, Hl + start:Hl + start + H]
    return ObstacleSampleSet(np.hstack([s, d]), O.dt)


def mpc_drive(cfg: RunConfig, cycles: int, seed: int = None) -> MpcLog:
    """Receding-horizon loop: plan, apply the first control, shift, re-plan."""
    if cycles < 0:
        raise ValueError("cycles must be non-negative")
    seed = cfg.seeds[0] if seed is None else seed
    spec = cfg.load_scenario()
    H, dt = spec.H, spec.dt
    kappa = spec.curvature()
    risk, opt, weights, cons = planning_setup(spec, cfg, seed)
    # obstacle futures long enough to cover every shifted window
    obs, sets = spec.sample_sets(seed, cfg.n_opt, cfg.n_val, H=H + cycles)
    bc = spec.ego.bc
    x = FrenetState(s=0.0, d=bc.d_init, psi=float(np.arctan2(bc.v_y_init, bc.v_x_init)),
                    v=float(np.hypot(bc.v_x_init, bc.v_y_init)), s_dot=bc.v_x_init,
                    d_dot=bc.v_y_init, psi_dot=0.0)
    acc = (bc.a_x_init, bc.a_y_init)
    out = MpcLog()
    for c in range(cycles):
        t0 = time.perf_counter()
        reduced = []
        for j, (O, _) in enumerate(sets):
            win = _window(O, c, H, x.s)
            if cfg.risk == "mmd":
                reduced.append(reduce(win, cfg.n_prime, replace(cfg.cem, seed=seed * 1000 + j)))
            else:
                idx = np.arange(cfg.n_prime)
                reduced.append(ReducedSet(idx, win.subset(idx),
                                          np.full(cfg.n_prime, 1.0 / cfg.n_prime), 1.0))
        here = BoundaryConditions(v_x_init=x.s_dot, a_x_init=acc[0], d_init=x.d,
                                  v_y_init=x.d_dot, a_y_init=acc[1])
        res = plan(here, reduced, risk, replace(opt, seed=seed * 100003 + c), weights, cons,
                   cfg.params, kappa)
        traj = res.trajectory
        ctrl = flat_controls(traj, kappa, cfg.params)
        out.states.append(x)
        out.behaviors.append((res.behavior.b_d, res.behavior.b_v))
        out.plans.append(((traj.s + x.s).tolist(), traj.d.tolist()))
        x = step_dynamics(x, float(ctrl.a[0]), float(ctrl.theta[0]), kappa, dt, cfg.params)
        acc = (float(traj.s_ddot[1]), float(traj.d_ddot[1]))
        out.cycle_times.append(time.perf_counter() - t0)
    out.states.append(x)
    return out
