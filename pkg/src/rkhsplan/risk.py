"""Collision residuals and sample-based collision-risk surrogates."""

import math
from dataclasses import dataclass

import numpy as np

from .frenet import EgoTrajectory, VehicleParams
from .kernels import KernelConfig, mmd_to_dirac


@dataclass(frozen=True)
class ObstacleSampleSet:
    """N sampled obstacle trajectories; row j is [s_0..s_{H-1}, d_0..d_{H-1}]."""

    O: np.ndarray
    dt: float

    def __post_init__(self):
        O = np.atleast_2d(np.asarray(self.O, dtype=float))
        if O.shape[0] < 1:
            raise ValueError("obstacle sample set must be non-empty")
        if O.shape[1] % 2 or O.shape[1] < 4:
            raise ValueError(f"row dimension {O.shape[1]} is not 2H with H >= 2")
        if not np.all(np.isfinite(O)):
            raise ValueError("obstacle samples must be finite")
        object.__setattr__(self, "O", O)

    @property
    def N(self) -> int:
        return self.O.shape[0]

    @property
    def H(self) -> int:
        return self.O.shape[1] // 2

    @property
    def s(self) -> np.ndarray:
        return self.O[:, :self.H]

    @property
    def d(self) -> np.ndarray:
        return self.O[:, self.H:]

    def subset(self, indices) -> "ObstacleSampleSet":
        return ObstacleSampleSet(self.O[np.asarray(indices, dtype=int)], self.dt)


@dataclass(frozen=True)
class ResidualSample:
    worst_f: float
    residual: float
    argmax_k: int


@dataclass(frozen=True)
class CvarConfig:
    alpha: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("CVaR alpha must lie in (0, 1)")


def collision_f(ego: EgoTrajectory, tau, params: VehicleParams) -> ResidualSample:
    """Worst-case ellipse overlap of ego vs one obstacle trajectory."""
    tau = np.asarray(tau, dtype=float).ravel()
    if tau.shape[0] != 2 * ego.H:
        raise ValueError(f"obstacle trajectory has {tau.shape[0]} entries, expected {2 * ego.H}")
    H = ego.H
    f = (1.0 - (ego.s - tau[:H]) ** 2 / params.ellipse_a1**2
         - (ego.d - tau[H:]) ** 2 / params.ellipse_a2**2)
    k = int(np.argmax(f))
    return ResidualSample(worst_f=float(f[k]), residual=max(0.0, float(f[k])), argmax_k=k)


def worst_f_batch(ego_s, ego_d, obstacles: ObstacleSampleSet, params: VehicleParams):
    """Worst-case constraint values for a batch of egos.

    ego_s, ego_d: (n, H) or (H,).  Returns (n, N) (or (N,)) array.
    """
    ego_s = np.asarray(ego_s, dtype=float)
    ego_d = np.asarray(ego_d, dtype=float)
    if ego_s.shape[-1] != obstacles.H:
        raise ValueError(f"horizon mismatch: ego {ego_s.shape[-1]} vs obstacles {obstacles.H}")
    ds = (ego_s[..., None, :] - obstacles.s) / params.ellipse_a1
    dd = (ego_d[..., None, :] - obstacles.d) / params.ellipse_a2
    return (1.0 - ds * ds - dd * dd).max(axis=-1)


def residuals_batch(ego_s, ego_d, obstacles, params) -> np.ndarray:
    return np.maximum(0.0, worst_f_batch(ego_s, ego_d, obstacles, params))


def residuals_of(ego: EgoTrajectory, obstacles: ObstacleSampleSet,
                 params: VehicleParams) -> np.ndarray:
    return residuals_batch(ego.s, ego.d, obstacles, params)


def _as_residuals(residuals) -> np.ndarray:
    vals = np.asarray([r.residual if isinstance(r, ResidualSample) else r for r in residuals],
                      dtype=float)
    if vals.size == 0:
        raise ValueError("residual list must be non-empty")
    return vals


def r_saa(residuals) -> float:
    """Fraction of samples whose residual is strictly positive."""
    r = _as_residuals(residuals)
    return float(np.mean(r > 0.0))


def cvar_tail_count(n: int, alpha: float) -> int:
    # guard against (1 - alpha) * n landing a hair above an integer
    return max(1, math.ceil((1.0 - alpha) * n - 1e-9))


def r_cvar(residuals, cfg: CvarConfig = CvarConfig()) -> float:
    """Mean of the ceil((1 - alpha) N) largest residuals."""
    r = _as_residuals(residuals)
    m = cvar_tail_count(r.size, cfg.alpha)
    return float(np.sort(r)[-m:].mean())


def r_mmd(residuals, weights, cfg: KernelConfig) -> float:
    return mmd_to_dirac(_as_residuals(residuals), weights, cfg)


def scenario_penalty(residuals) -> float:
    """Quadratic penalty on every sampled scenario constraint."""
    r = np.asarray([x.residual if isinstance(x, ResidualSample) else x for x in residuals],
                   dtype=float)
    return float(np.sum(r * r))


def total_risk(ego: EgoTrajectory, per_obstacle, params: VehicleParams,
               residual_sigma=None) -> float:
    """Sum of per-obstacle MMD risks.

    per_obstacle: reduced sets exposing .samples (ObstacleSampleSet),
    .beta and .sigma.  residual_sigma overrides every set's sigma.
    """
    if len(per_obstacle) == 0:
        raise ValueError("total_risk needs at least one obstacle")
    total = 0.0
    for rs in per_obstacle:
        res = residuals_of(ego, rs.samples, params)
        sigma = rs.sigma if residual_sigma is None else residual_sigma
        total += r_mmd(res, rs.beta, KernelConfig(sigma))
    return total


def theorem2_bound(N: int, c_o: float = 1.0, eps: float = 0.3):
    """Finite-sample deviation bound of the empirical MMD risk.

    With probability above `confidence`, the N-sample estimate is within
    `deviation_bound` of the population value, for a kernel bounded by c_o.
    """
    if N < 1 or c_o <= 0 or eps <= 0:
        raise ValueError("need N >= 1, c_o > 0, eps > 0")
    bound = 2.0 * (2.0 * math.sqrt(c_o / N) + eps)
    confidence = 1.0 - math.exp(-eps * eps * N / (4.0 * c_o))
    return bound, confidence
