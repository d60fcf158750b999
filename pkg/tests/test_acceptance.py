"""Acceptance suite: one test per criterion, each recording a pass/fail line
that is printed in the terminal summary."""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg

from rkhsplan.frenet import (BehavioralInput, BoundaryConditions, CurvatureProfile, EgoTrajectory,
                             VehicleParams, flat_controls, frenet_plan, get_planner, initial_state,
                             rollout)
from rkhsplan.harness import RunConfig, run_scene, run_sweep
from rkhsplan.kernels import (KernelConfig, WeightedSampleSet, kernel_matrix, laplace_kernel,
                              median_heuristic, mmd_sq)
from rkhsplan.optimizer import OptimizerConfig, RiskCost, plan
from rkhsplan.reduced_set import (CemConfig, delta_r_mmd, optimal_weights, random_reduced_set,
                                  reduce)
from rkhsplan.risk import ObstacleSampleSet, r_mmd, residuals_of, theorem2_bound
from rkhsplan.scenarios import (ObstacleModel, ScenarioSpec, sample_dynamic, sample_static)

P = VehicleParams()


# 1. kernel suite

def brute_mmd(A, wa, B, wb, sigma):
    def k(x, y):
        return math.exp(-sum(abs(p - q) for p, q in zip(x, y)) / sigma)
    aa = sum(wa[i] * wa[j] * k(A[i], A[j]) for i in range(len(A)) for j in range(len(A)))
    ab = sum(wa[i] * wb[j] * k(A[i], B[j]) for i in range(len(A)) for j in range(len(B)))
    bb = sum(wb[i] * wb[j] * k(B[i], B[j]) for i in range(len(B)) for j in range(len(B)))
    return aa - 2 * ab + bb


def test_c01_kernel_suite(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_eig, sym_ok, bound_ok, self_ok, brute_err = np.inf, True, True, True, 0.0
    for _ in range(100):
        X = rng.normal(size=(50, 4)) * rng.uniform(0.1, 3)
        sigma = rng.uniform(0.2, 5)
        K = kernel_matrix(X, X, KernelConfig(sigma))
        sym_ok &= np.array_equal(K, K.T)
        bound_ok &= bool(np.all(K > 0) and np.all(K <= 1))
        worst_eig = min(worst_eig, np.linalg.eigvalsh(K).min())
        a, b = X[0], X[1]
        sym_ok &= laplace_kernel(a, b, KernelConfig(sigma)) == laplace_kernel(b, a, KernelConfig(sigma))
        w = rng.random(50)
        A = WeightedSampleSet(X, w / w.sum())
        self_ok &= mmd_sq(A, A, KernelConfig(sigma)) == 0.0
    for _ in range(200):
        na, nb, dim = rng.integers(1, 6, size=3)
        A, B = rng.normal(size=(na, dim)), rng.normal(size=(nb, dim))
        wa, wb = rng.random(na) + 0.01, rng.random(nb) + 0.01
        wa, wb = wa / wa.sum(), wb / wb.sum()
        sigma = rng.uniform(0.1, 5)
        got = mmd_sq(WeightedSampleSet(A, wa), WeightedSampleSet(B, wb), KernelConfig(sigma))
        ref = max(brute_mmd(A.tolist(), wa.tolist(), B.tolist(), wb.tolist(), sigma), 0.0)
        brute_err = max(brute_err, abs(got - ref))
    elapsed = time.perf_counter() - t0
    ok = sym_ok and bound_ok and self_ok and worst_eig >= -1e-8 and brute_err <= 1e-12 and elapsed < 10
    criterion(1, "kernel/MMD suite", ok,
              f"min eig {worst_eig:.2e}, brute-force err {brute_err:.1e}, {elapsed:.2f} s")
    assert ok


# 2. inner QP oracle

def test_c02_inner_qp_oracle(criterion):
    rng = np.random.default_rng(1)
    worst_obj, worst_sum = 0.0, 0.0
    for _ in range(50):
        N = int(rng.integers(2, 7))
        n = int(rng.integers(1, min(N, 3) + 1))
        O = ObstacleSampleSet(rng.normal(size=(N, 6)) * rng.uniform(0.2, 3), 0.1)
        idx = rng.choice(N, size=n, replace=False)
        sigma = float(rng.uniform(0.3, 5))
        beta = optimal_weights(O, idx, KernelConfig(sigma))
        K = np.exp(-np.abs(O.O[:, None] - O.O[None]).sum(-1) / sigma)
        Kp, b = K[np.ix_(idx, idx)], K[idx].mean(axis=1)
        x0 = np.full(n, 1.0 / n)
        Z = scipy.linalg.null_space(np.ones((1, n)))
        ref = x0 + Z @ scipy.linalg.lstsq(Z.T @ Kp @ Z, Z.T @ (b - Kp @ x0))[0]

        def obj(x):
            return x @ Kp @ x - 2 * b @ x

        worst_obj = max(worst_obj, abs(obj(beta) - obj(ref)))
        worst_sum = max(worst_sum, abs(beta.sum() - 1))
    ok = worst_obj <= 1e-8 and worst_sum <= 1e-9
    criterion(2, "inner QP vs dense solve", ok,
              f"objective gap {worst_obj:.1e}, |sum(beta) - 1| {worst_sum:.1e} on 50 instances")
    assert ok


# 3. and 4. reduced-set quality and delta_rMMD on bimodal trajectory scenes

BIMODAL = ObstacleModel(kind="dynamic", s=10.0, d=3.5, v=3.0, intent_offsets=(-3.5, 0.0),
                        intent_probs=(0.5, 0.5))


@pytest.fixture(scope="module")
def bimodal_scenes():
    ego = frenet_plan(BehavioralInput(0.0, 5.0), BoundaryConditions(5.0))
    t0 = time.perf_counter()
    out = []
    for seed in range(10):
        O = sample_dynamic(BIMODAL, 100, [seed, 1])
        rs = reduce(O, 5, CemConfig(seed=seed))
        sigma = median_heuristic(O.O)
        rand = [random_reduced_set(O, 5, seed=[seed, k], sigma=sigma) for k in range(200)]
        out.append({
            "gap": rs.gap,
            "rand_gaps": np.array([r.gap for r in rand]),
            "delta": delta_r_mmd(ego, O, rs, P),
            "rand_deltas": np.array([delta_r_mmd(ego, O, r, P) for r in rand]),
        })
    return out, time.perf_counter() - t0


def test_c03_reduced_set_quality(criterion, bimodal_scenes):
    scenes, elapsed = bimodal_scenes
    wins = sum(s["gap"] <= np.percentile(s["rand_gaps"], 25) for s in scenes)
    ok = wins >= 8 and elapsed < 120
    criterion(3, "reduced-set gap vs random subsets", ok,
              f"{wins}/10 scenes at or below the 25th percentile, {elapsed:.1f} s")
    assert ok


def test_c04_delta_r_mmd(criterion, bimodal_scenes):
    scenes, _ = bimodal_scenes
    wins = sum(s["delta"] <= np.median(s["rand_deltas"]) for s in scenes)
    ok = wins >= 8
    criterion(4, "delta_rMMD vs random subsets", ok, f"{wins}/10 scenes at or below the median")
    assert ok


# 5. finite-sample deviation bound

def test_c05_deviation_bound_monte_carlo(criterion):
    rng = np.random.default_rng(5)
    model = ScenarioSpec.load("static_bimodal").placement.noise
    ob = ObstacleModel(kind="static", s=12.0, d=0.0, noise=model)
    ego = frenet_plan(BehavioralInput(0.0, 3.0), BoundaryConditions(3.0))
    cfg = KernelConfig(0.5)

    def draw(n):
        O = sample_static(ob, n, rng.integers(2**63))
        return residuals_of(ego, O, P)

    ref_res = draw(100_000)
    ref = r_mmd(ref_res, np.full(ref_res.size, 1.0 / ref_res.size), cfg)
    bound, conf = theorem2_bound(50, 1.0, 0.3)
    viol = np.mean([abs(r_mmd(draw(50), np.full(50, 0.02), cfg) - ref) > bound
                    for _ in range(200)])
    ok = viol <= (1 - conf) + 0.05
    criterion(5, "deviation bound Monte Carlo", ok,
              f"violation rate {viol:.3f} vs allowed {(1 - conf) + 0.05:.3f} "
              f"(bound {bound:.3f}, reference risk {ref:.4f})")
    assert ok


# 6. convergence of the residual distribution to a Dirac

def test_c06_dirac_convergence(criterion):
    # obstacle in the ego lane, close enough that the initial samples collide
    noise = ScenarioSpec.load("static_trimodal").placement.noise
    ob = ObstacleModel(kind="static", s=10.0, d=0.0, noise=noise)
    rs = reduce(sample_static(ob, 100, 0), 5, CemConfig(seed=0))
    res = plan(BoundaryConditions(5.0), [rs], RiskCost("mmd"), OptimizerConfig(e_max=10, seed=0))
    costs = [t["cost"] for t in res.trace]
    series = [t["iter_nonzero_fraction"] for t in res.trace]
    final = res.trace[-1]["best_nonzero_fraction"]
    ok = series[0] > 0 and final == 0.0 and bool(np.all(np.diff(costs) <= 0))
    criterion(6, "Dirac convergence", ok,
              "nonzero residual fraction per iteration " + " ".join(f"{f:.1f}" for f in series)
              + f"; best cost non-increasing over {len(costs)} iterations")
    assert ok


# 7., 8. and 9. risk ordering and ablations on the benchmark families

FAMILIES = ("static_bimodal", "static_trimodal", "cutin_high")


@pytest.fixture(scope="module")
def family_medians():
    t0 = time.perf_counter()
    med = {}
    seeds = tuple(range(20))
    for fam in FAMILIES:
        runs = [(dict(risk=r), r) for r in ("mmd", "saa", "cvar")]
        if fam == "static_trimodal":
            runs += [(dict(risk="mmd", random_reduced_set=True), "mmd-random"),
                     (dict(risk="saa", baseline_uses_reduced_set=True), "saa-reduced"),
                     (dict(risk="cvar", baseline_uses_reduced_set=True), "cvar-reduced")]
        for kw, key in runs:
            rep = run_sweep(RunConfig(fam, n_prime=5, seeds=seeds, **kw))
            rates = [r.collision_rate for r in rep.records if r.status == "ok"]
            med[fam, key] = (float(np.median(rates)), len(rates))
    return med, time.perf_counter() - t0


def test_c07_risk_ordering(criterion, family_medians):
    med, elapsed = family_medians
    parts, not_worse, strictly = [], True, 0
    for fam in FAMILIES:
        m, s, c = (med[fam, k][0] for k in ("mmd", "saa", "cvar"))
        not_worse &= m <= s and m <= c
        strictly += m < s and m < c
        parts.append(f"{fam} mmd {m:.3f} saa {s:.3f} cvar {c:.3f}")
    ok = not_worse and strictly >= 2 and elapsed < 900
    criterion(7, "risk ordering", ok, "; ".join(parts) + f" ({elapsed:.0f} s)")
    assert ok


def test_c08_optimal_vs_random_reduced_set(criterion, family_medians):
    med, _ = family_medians
    opt, rnd = med["static_trimodal", "mmd"][0], med["static_trimodal", "mmd-random"][0]
    ok = opt <= rnd
    criterion(8, "optimal vs random reduced set", ok,
              f"static_trimodal median optimal {opt:.3f}, random {rnd:.3f}")
    assert ok


def test_c09_baselines_with_reduced_set(criterion, family_medians):
    med, _ = family_medians
    diffs = {k: abs(med["static_trimodal", k][0] - med["static_trimodal", f"{k}-reduced"][0])
             for k in ("saa", "cvar")}
    ok = all(d <= 0.05 for d in diffs.values())
    criterion(9, "baselines with vs without reduced set", ok,
              ", ".join(f"{k} |diff| {d:.3f}" for k, d in diffs.items()))
    assert ok


# 10. flatness and planner

def test_c10_flatness_and_planner(criterion):
    trip = 0.0
    for k in (0.0, 0.05):
        kappa = CurvatureProfile.constant(k)
        for v, d0 in ((5.0, 0.0), (12.0, 1.5), (2.0, -1.0)):
            t = np.arange(50) * 0.1
            traj = EgoTrajectory.from_positions(v * t, np.full(50, d0), 0.1)
            s, d = rollout(initial_state(traj, kappa, P), flat_controls(traj, kappa, P), kappa, 0.1, P)
            trip = max(trip, np.abs(s - traj.s).max(), np.abs(d - traj.d).max())
    pl = get_planner(50, 0.1, 1.0, 2.0)
    N = pl.null_basis.T.astype(np.longdouble)
    M = pl.M.astype(np.longdouble)
    rng = np.random.default_rng(10)
    bc_err, stat = 0.0, 0.0
    for _ in range(100):
        b = rng.uniform([-2, 0], [6, 15])
        bc = BoundaryConditions(rng.uniform(0, 15), rng.uniform(-2, 2), rng.uniform(-2, 6),
                                rng.uniform(-1, 1), rng.uniform(-1, 1))
        traj = pl.plan(BehavioralInput(*b), bc)
        bc_err = max(bc_err, traj.boundary_residual(bc))
        x = traj.stacked().astype(np.longdouble)
        r = M @ x - pl.c_d.astype(np.longdouble) * b[0] - pl.c_v.astype(np.longdouble) * b[1]
        stat = max(stat, float(np.abs(N @ (2 * M.T @ r)).max()))
    tol = 1e-3 * 50 * 0.1
    ok = trip <= tol and bc_err <= 1e-8 and stat <= 1e-8
    criterion(10, "flatness and planner", ok,
              f"round trip {trip:.1e} (tol {tol:.0e}), boundary {bc_err:.1e}, stationarity {stat:.1e}")
    assert ok


# 11. performance envelope

def test_c11_performance(criterion):
    three = ScenarioSpec.load("static_gaussian")
    one = replace(three, name="static_gaussian_1", placement=replace(three.placement, count=1))
    run_scene(RunConfig(one, n_prime=10), 0)  # warm-up: planner factorization cache
    t1 = max(r.reduce_time + r.plan_time
             for r in (run_scene(RunConfig(one, n_prime=10), s) for s in range(3)))
    t3 = max(r.reduce_time + r.plan_time
             for r in (run_scene(RunConfig(three, n_prime=10), s) for s in range(3)))
    ok = t1 < 1.0 and t3 < 3.0
    criterion(11, "performance envelope", ok,
              f"1 obstacle {t1:.3f} s (< 1 s), 3 obstacles {t3:.3f} s (< 3 s), worst of 3 seeds")
    assert ok


# 12. determinism

def test_c12_deterministic_csv(criterion, tmp_path):
    base = RunConfig("static_bimodal", n_prime=5)
    grid = dict(risks=["mmd", "saa", "cvar"], seeds=[0, 1, 2], workers=1)
    run_sweep(base, out_dir=tmp_path / "a", **grid)
    run_sweep(base, out_dir=tmp_path / "b", **grid)
    a = (tmp_path / "a" / "records.csv").read_bytes()
    b = (tmp_path / "b" / "records.csv").read_bytes()
    ok = a == b
    criterion(12, "byte-identical records", ok, f"{len(a)} bytes, 9 records, identical={ok}")
    assert ok
