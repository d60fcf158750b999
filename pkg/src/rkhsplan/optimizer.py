"""Projection-augmented sampling optimizer over Frenet behavioural inputs.

Each iteration samples behavioural inputs (b_d, b_v) from a Gaussian,
maps them to trajectories with the closed-form Frenet planner, pushes
them toward the feasible set with a few alternating projection sweeps,
and refits the Gaussian to the cheapest samples with exponential
(temperature gamma) weights and learning rate eta.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .frenet import (BehavioralInput, BoundaryConditions, CurvatureProfile,
                     EgoTrajectory, PlannerGains, VehicleParams, diff_matrices,
                     flat_controls_arrays, get_planner)
from .kernels import mmd_to_dirac_batch
from .risk import cvar_tail_count, residuals_batch

log = logging.getLogger(__name__)

RISK_TAGS = ("mmd", "saa", "cvar", "scenario")

# Large enough that any positive risk outranks every smoothness-cost gap,
# so each surrogate is driven to zero before comfort is traded.  The MMD
# value of a small intrusion r is about 2 beta^2 r / sigma with sigma in the
# hundreds, hence its larger weight.
DEFAULT_RISK_WEIGHTS = {"mmd": 1e10, "saa": 1e6, "cvar": 1e6, "scenario": 1e6}


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class CostWeights:
    w_theta: tuple = (1.0, 1.0, 0.1, 0.01)
    v_des: float = 3.0
    d_des: float = 0.0
    w_v: float = 1.0
    w_a: float = 1.0
    w_lane: float = 1.0

    def __post_init__(self):
        if len(self.w_theta) != 4:
            raise ValueError("w_theta needs four entries")
        if min(*self.w_theta, self.w_v, self.w_a, self.w_lane) < 0:
            raise ValueError("cost weights must be non-negative")


@dataclass(frozen=True)
class ConstraintSpec:
    d_min: float = -1.75
    d_max: float = 5.25
    v_max: float = 20.0
    a_max: float = 8.0

    def __post_init__(self):
        if not self.d_min < self.d_max:
            raise ValueError("need d_min < d_max")
        if not (self.v_max > 0 and self.a_max > 0):
            raise ValueError("v_max and a_max must be positive")


@dataclass(frozen=True)
class RiskCost:
    """Which risk surrogate scores the samples, and how strongly.

    residual_sigma overrides the per-obstacle bandwidth used by the MMD
    risk (by default the sigma carried by each reduced set).
    """

    tag: str = "mmd"
    weight: float = None
    alpha: float = 0.9
    residual_sigma: float = None

    def __post_init__(self):
        if self.tag not in RISK_TAGS:
            raise ValueError(f"unknown risk tag {self.tag!r}; expected one of {RISK_TAGS}")
        if self.weight is None:
            object.__setattr__(self, "weight", DEFAULT_RISK_WEIGHTS[self.tag])
        if self.weight < 0:
            raise ValueError("risk weight must be non-negative")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("CVaR alpha must lie in (0, 1)")

    def evaluate(self, res: np.ndarray, beta, sigma: float) -> np.ndarray:
        """Risk per row of a (n, N') residual matrix."""
        if self.tag == "mmd":
            s = sigma if self.residual_sigma is None else self.residual_sigma
            return mmd_to_dirac_batch(res, beta, s)
        if self.tag == "saa":
            return np.mean(res > 0.0, axis=1)
        if self.tag == "cvar":
            m = cvar_tail_count(res.shape[1], self.alpha)
            return np.sort(res, axis=1)[:, -m:].mean(axis=1)
        return np.sum(res * res, axis=1)


@dataclass(frozen=True)
class OptimizerConfig:
    e_max: int = 10
    n: int = 100
    n_c: int = 50
    n_elite: int = 10
    gamma: float = 1.0
    eta: float = 0.6
    proj_iters: int = 10
    init_mean: tuple = None
    init_cov: tuple = ((1.0, 0.0), (0.0, 4.0))
    cov_floor: float = 1e-4
    residual_penalty: float = 1.0
    H: int = 50
    dt: float = 0.1
    gains: PlannerGains = PlannerGains()
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_elite <= self.n_c <= self.n:
            raise ValueError("need 1 <= n_elite <= n_c <= n")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.e_max < 1 or self.proj_iters < 1:
            raise ValueError("e_max and proj_iters must be at least 1")


@dataclass
class PlanResult:
    behavior: BehavioralInput
    trajectory: EgoTrajectory
    cost: float
    risk: float
    residual_norm: float
    trace: list = field(default_factory=list)
    means: list = field(default_factory=list)


def smoothness_cost_arrays(s, d, kappa: CurvatureProfile, dt: float,
                           params: VehicleParams, weights: CostWeights) -> np.ndarray:
    """Batched driving-discomfort cost over rows of (n, H) positions.

    Rows whose speed vanishes somewhere get +inf.
    """
    s = np.atleast_2d(s)
    d = np.atleast_2d(d)
    D1, D2 = diff_matrices(s.shape[-1], float(dt))
    s_dot, d_dot = s @ D1.T, d @ D1.T
    s_ddot, d_ddot = s @ D2.T, d @ D2.T
    v, _, _, _, theta = flat_controls_arrays(s, d, s_dot, d_dot, kappa, dt, params.wheelbase)
    theta_dot = np.diff(theta, axis=-1) / dt
    theta_ddot = np.diff(theta_dot, axis=-1) / dt
    w1, w2, w3, w4 = weights.w_theta
    with np.errstate(invalid="ignore"):
        cost = (w1 * np.maximum(0.0, np.abs(theta) - params.theta_max).sum(-1)
                + w2 * (theta**2).sum(-1)
                + w3 * (theta_dot**2).sum(-1)
                + w4 * (theta_ddot**2).sum(-1)
                + weights.w_v * ((s_dot - weights.v_des) ** 2).sum(-1)
                + weights.w_a * (s_ddot**2 + d_ddot**2).sum(-1)
                + weights.w_lane * ((d - weights.d_des) ** 2).sum(-1))
    bad = (v <= 1e-9).any(-1) | ~np.isfinite(cost)
    return np.where(bad, np.inf, cost)


def smoothness_cost(traj: EgoTrajectory, kappa: CurvatureProfile, params: VehicleParams,
                    weights: CostWeights) -> float:
    c = smoothness_cost_arrays(traj.s, traj.d, kappa, traj.dt, params, weights)[0]
    if not np.isfinite(c):
        raise ValueError("speed vanishes along the trajectory, steering undefined")
    return float(c)


def inequality_residual(X: np.ndarray, H: int, dt: float, cons: ConstraintSpec) -> np.ndarray:
    """||max(0, g)||_2 per row of stacked positions X (n, 2H)."""
    X = np.atleast_2d(X)
    s, d = X[:, :H], X[:, H:]
    D1, D2 = diff_matrices(H, float(dt))
    vel = np.hypot(s @ D1.T, d @ D1.T)
    acc = np.hypot(s @ D2.T, d @ D2.T)
    g = np.concatenate([
        np.maximum(0.0, d - cons.d_max),
        np.maximum(0.0, cons.d_min - d),
        np.maximum(0.0, vel - cons.v_max),
        np.maximum(0.0, acc - cons.a_max),
    ], axis=1)
    return np.sqrt((g * g).sum(axis=1))


def _rescale(vec, limit):
    """Shrink (…, 2) vectors whose norm exceeds limit onto the limit."""
    norm = np.hypot(vec[..., 0], vec[..., 1])
    factor = np.where(norm > limit, limit / np.maximum(norm, 1e-300), 1.0)
    return vec * factor[..., None], bool((norm > limit).any())


def project_positions(X, bc: BoundaryConditions, cons: ConstraintSpec, iters: int,
                      H: int, dt: float, planner=None, trace=None):
    """Alternating-projection sweeps on stacked positions (n, 2H).

    Each sweep clamps d into the lane band, rescales forward-difference
    velocity and acceleration vectors that exceed their bounds (then
    re-integrates from the first sample), and finishes with the
    least-squares correction onto the boundary equalities.
    """
    if iters < 1:
        raise ValueError("need at least one projection sweep")
    if planner is None:
        planner = get_planner(H, float(dt), 1.0, 2.0)
    X = np.array(X, dtype=float, copy=True, ndmin=2)
    for _ in range(iters):
        X[:, H:] = np.clip(X[:, H:], cons.d_min, cons.d_max)
        P = np.stack([X[:, :H], X[:, H:]], axis=-1)                 # (n, H, 2)
        vel = np.diff(P, axis=1) / dt
        vel, v_hit = _rescale(vel, cons.v_max)
        acc = np.diff(vel, axis=1) / dt
        acc, a_hit = _rescale(acc, cons.a_max)
        if v_hit or a_hit:
            vel = np.concatenate([vel[:, :1], vel[:, :1] + np.cumsum(acc * dt, axis=1)], axis=1)
            P = np.concatenate([P[:, :1], P[:, :1] + np.cumsum(vel * dt, axis=1)], axis=1)
            X = np.concatenate([P[..., 0], P[..., 1]], axis=1)
        X = planner.equality_correction(X, bc)
        if trace is not None:
            trace.append(inequality_residual(X, H, dt, cons))
    return X, inequality_residual(X, H, dt, cons)


def project(traj: EgoTrajectory, bc: BoundaryConditions, cons: ConstraintSpec,
            iters: int = 10, trace=None):
    """Push one trajectory toward the feasible set; returns (trajectory, residual norm)."""
    X, res = project_positions(traj.stacked(), bc, cons, iters, traj.H, traj.dt, trace=trace)
    out = EgoTrajectory.from_positions(X[0, :traj.H], X[0, traj.H:], traj.dt)
    return out, float(res[0])


def elite_weights(costs, gamma: float) -> np.ndarray:
    """Normalized exp(-c / gamma), shifted by min(c) for stability."""
    costs = np.asarray(costs, dtype=float)
    w = np.exp(-(costs - costs.min()) / gamma)
    return w / w.sum()


def _risk_matrix(X, H, obstacles, risk: RiskCost, params):
    """Total risk per row of X over all obstacle reduced sets, plus the
    residual matrices (for diagnostics)."""
    total = np.zeros(X.shape[0])
    residuals = []
    for rs in obstacles:
        res = residuals_batch(X[:, :H], X[:, H:], rs.samples, params)
        residuals.append(res)
        total += risk.evaluate(res, rs.beta, rs.sigma)
    return risk.weight * total, residuals


def plan(init: BoundaryConditions, obstacles, risk: RiskCost, cfg: OptimizerConfig,
         weights: CostWeights = CostWeights(), cons: ConstraintSpec = ConstraintSpec(),
         params: VehicleParams = VehicleParams(),
         kappa: CurvatureProfile = CurvatureProfile()) -> PlanResult:
    """Minimize discomfort + risk + constraint residual over behavioural inputs.

    obstacles: per-obstacle sets exposing .samples, .beta and .sigma
    (ReducedSet); may be empty for risk-free planning.
    """
    H, dt = cfg.H, float(cfg.dt)
    planner = get_planner(H, dt, cfg.gains.kappa_p, cfg.gains.kappa_v)
    for rs in obstacles:
        if rs.samples.H != H:
            raise ValueError(f"obstacle horizon {rs.samples.H} != planner horizon {H}")
    mean = (np.array([init.d_init, init.v_x_init]) if cfg.init_mean is None
            else np.asarray(cfg.init_mean, dtype=float))
    cov = np.asarray(cfg.init_cov, dtype=float)

    best = None
    trace, means = [], [mean.copy()]
    for e in range(cfg.e_max):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, e]))
        L = np.linalg.cholesky(cov + 1e-12 * np.eye(2))
        b = mean + rng.standard_normal((cfg.n, 2)) @ L.T

        X = planner.solve_positions(b, init, refine=False)
        X, gnorm = project_positions(X, init, cons, cfg.proj_iters, H, dt, planner)

        keep = np.argsort(gnorm, kind="stable")[:cfg.n_c]
        Xc, bc_, gc = X[keep], b[keep], gnorm[keep]
        smooth = smoothness_cost_arrays(Xc[:, :H], Xc[:, H:], kappa, dt, params, weights)
        if obstacles:
            rk, res = _risk_matrix(Xc, H, obstacles, risk, params)
        else:
            rk, res = np.zeros(Xc.shape[0]), []
        c_aug = smooth + rk + cfg.residual_penalty * gc**2

        finite = np.isfinite(c_aug)
        if not finite.any():
            if best is None and not np.isfinite(
                    smoothness_cost_arrays(X[:, :H], X[:, H:], kappa, dt, params, weights)).any():
                raise PlanningError("every sampled trajectory failed control recovery")
            log.warning("iteration %d: no finite augmented cost among constraint elites", e)
            trace.append(trace[-1] if trace else {"cost": np.inf})
            means.append(mean.copy())
            continue

        order = np.argsort(np.where(finite, c_aug, np.inf), kind="stable")
        elite = order[:min(cfg.n_elite, int(finite.sum()))]
        i0 = elite[0]
        if best is None or c_aug[i0] < best["cost"]:
            nz = np.concatenate([r[i0] for r in res]) if res else np.zeros(0)
            best = {
                "cost": float(c_aug[i0]), "risk": float(rk[i0]), "resid": float(gc[i0]),
                "b": bc_[i0].copy(), "X": Xc[i0].copy(),
                "nonzero_fraction": float(np.mean(nz > 0)) if nz.size else 0.0,
            }
        it_nz = np.concatenate([r[i0] for r in res]) if res else np.zeros(0)
        trace.append({
            "iteration": e,
            "cost": best["cost"],
            "risk": best["risk"],
            "residual_norm": best["resid"],
            "iter_best_cost": float(c_aug[i0]),
            "iter_nonzero_fraction": float(np.mean(it_nz > 0)) if it_nz.size else 0.0,
            "best_nonzero_fraction": best["nonzero_fraction"],
        })

        w = elite_weights(c_aug[elite], cfg.gamma)
        be = bc_[elite]
        mean = (1.0 - cfg.eta) * mean + cfg.eta * (w @ be)
        diff = be - mean
        cov = (1.0 - cfg.eta) * cov + cfg.eta * (diff.T * w) @ diff
        cov = 0.5 * (cov + cov.T)
        np.fill_diagonal(cov, np.maximum(np.diag(cov), cfg.cov_floor))
        means.append(mean.copy())

    if best is None:
        raise PlanningError("no iteration produced a finite augmented cost")
    traj = EgoTrajectory.from_positions(best["X"][:H], best["X"][H:], dt)
    return PlanResult(
        behavior=BehavioralInput(float(best["b"][0]), float(best["b"][1])),
        trajectory=traj,
        cost=best["cost"],
        risk=best["risk"],
        residual_norm=best["resid"],
        trace=trace,
        means=means,
    )
