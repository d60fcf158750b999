"""Frenet-frame kinematic bicycle model, flat-output control recovery and
the closed-form behavioural planner.

Trajectories are represented by their H position samples per axis.
First and second derivatives come from fixed finite-difference stencils
(second-order central in the interior, second-order one-sided at the
ends), so every derivative is a linear map of the positions and the
planner reduces to one equality-constrained least-squares solve.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SINGULAR_GUARD = 1e-6


class FrenetSingularityError(ValueError):
    """1 - d*kappa(s) vanished, the Frenet projection is undefined."""


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.5
    ellipse_a1: float = 4.0
    ellipse_a2: float = 1.6
    theta_max: float = 0.6
    v_max: float = 20.0
    a_max: float = 8.0

    def __post_init__(self):
        for name in ("wheelbase", "ellipse_a1", "ellipse_a2", "theta_max", "v_max", "a_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class FrenetState:
    s: float
    d: float
    psi: float
    v: float
    s_dot: float
    d_dot: float
    psi_dot: float

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("speed must be non-negative")


@dataclass(frozen=True)
class CurvatureProfile:
    """Reference-path curvature as a function of arc length.

    kind is "zero", "constant" (values = kappa) or "table" (values =
    ((s0, k0), (s1, k1), ...) interpolated piecewise linearly and held
    constant outside the knots).
    """

    kind: str = "zero"
    values: object = None

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "table"):
            raise ValueError(f"unknown curvature kind {self.kind!r}")
        if self.kind == "constant":
            object.__setattr__(self, "values", float(self.values))
        if self.kind == "table":
            knots = np.asarray(self.values, dtype=float)
            if knots.ndim != 2 or knots.shape[1] != 2 or knots.shape[0] < 1:
                raise ValueError("curvature table must be a list of (s, kappa) pairs")
            if np.any(np.diff(knots[:, 0]) <= 0):
                raise ValueError("curvature table s-knots must be strictly increasing")
            object.__setattr__(self, "values", tuple(map(tuple, knots)))

    @classmethod
    def constant(cls, kappa):
        return cls("constant", kappa)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(s)
        if self.kind == "constant":
            return np.full_like(s, self.values)
        knots = np.asarray(self.values)
        return np.interp(s, knots[:, 0], knots[:, 1])

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or (self.kind == "constant" and self.values == 0.0)


@dataclass(frozen=True)
class BehavioralInput:
    b_d: float
    b_v: float

    def __post_init__(self):
        if not (np.isfinite(self.b_d) and np.isfinite(self.b_v)):
            raise ValueError("behavioural input must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.b_d, self.b_v])


@dataclass(frozen=True)
class BoundaryConditions:
    """Initial longitudinal/lateral state; s0 is 0 and final lateral speed is 0."""

    v_x_init: float = 0.0
    a_x_init: float = 0.0
    d_init: float = 0.0
    v_y_init: float = 0.0
    a_y_init: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.rhs())):
            raise ValueError("boundary conditions must be finite")

    def rhs(self) -> np.ndarray:
        # s0, s_dot0, s_ddot0, d0, d_dot0, d_ddot0, d_dot_H
        return np.array([0.0, self.v_x_init, self.a_x_init,
                         self.d_init, self.v_y_init, self.a_y_init, 0.0])


@lru_cache(maxsize=32)
def diff_matrices(H: int, dt: float):
    """(D1, D2): first/second derivative stencils as H x H matrices."""
    if H < 2:
        raise ValueError("horizon must have at least 2 samples")
    D1 = np.zeros((H, H))
    D2 = np.zeros((H, H))
    if H == 2:
        D1[:, 0], D1[:, 1] = -1.0 / dt, 1.0 / dt
        return D1, D2
    for k in range(1, H - 1):
        D1[k, k - 1], D1[k, k + 1] = -0.5 / dt, 0.5 / dt
        D2[k, k - 1:k + 2] = np.array([1.0, -2.0, 1.0]) / dt**2
    D1[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * dt)
    D1[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * dt)
    if H == 3:
        D2[0] = D2[1]
        D2[2] = D2[1]
    else:
        D2[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) / dt**2
        D2[-1, -4:] = np.array([-1.0, 4.0, -5.0, 2.0]) / dt**2
    D1.setflags(write=False)
    D2.setflags(write=False)
    return D1, D2


@dataclass(frozen=True)
class EgoTrajectory:
    dt: float
    s: np.ndarray
    d: np.ndarray
    s_dot: np.ndarray
    d_dot: np.ndarray
    s_ddot: np.ndarray
    d_ddot: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, f), dtype=float)
                for f in ("s", "d", "s_dot", "d_dot", "s_ddot", "d_ddot")]
        H = arrs[0].shape[0]
        if H < 2 or any(a.shape != (H,) for a in arrs):
            raise ValueError("trajectory vectors must share one length H >= 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name, a in zip(("s", "d", "s_dot", "d_dot", "s_ddot", "d_ddot"), arrs):
            object.__setattr__(self, name, a)
        D1, D2 = diff_matrices(H, float(self.dt))
        for pos, vel, acc in ((arrs[0], arrs[2], arrs[4]), (arrs[1], arrs[3], arrs[5])):
            scale = 1.0 + np.abs(pos).max() / self.dt**2
            if (np.abs(D1 @ pos - vel).max() > 1e-6 * scale
                    or np.abs(D2 @ pos - acc).max() > 1e-6 * scale):
                raise ValueError("derivatives inconsistent with the position stencils")

    @classmethod
    def from_positions(cls, s, d, dt: float) -> "EgoTrajectory":
        s = np.asarray(s, dtype=float)
        d = np.asarray(d, dtype=float)
        D1, D2 = diff_matrices(s.shape[0], float(dt))
        return cls(dt, s, d, D1 @ s, D1 @ d, D2 @ s, D2 @ d)

    @property
    def H(self) -> int:
        return self.s.shape[0]

    def stacked(self) -> np.ndarray:
        """Positions as one 2H vector [s_0..s_{H-1}, d_0..d_{H-1}]."""
        return np.concatenate([self.s, self.d])

    def boundary_residual(self, bc: BoundaryConditions) -> float:
        got = np.array([self.s[0], self.s_dot[0], self.s_ddot[0],
                        self.d[0], self.d_dot[0], self.d_ddot[0], self.d_dot[-1]])
        return float(np.abs(got - bc.rhs()).max())


@dataclass(frozen=True)
class ControlTrace:
    v: np.ndarray
    a: np.ndarray
    psi: np.ndarray
    psi_dot: np.ndarray
    theta: np.ndarray


def step_dynamics(x: FrenetState, a: float, theta: float, kappa: CurvatureProfile,
                  dt: float, params: VehicleParams = VehicleParams()) -> FrenetState:
    """One explicit Euler step of the Frenet bicycle model.

    Position, heading and speed integrate the current rates; the rates
    for the next step are computed from the current state.
    """
    k = float(kappa(x.s))
    denom = 1.0 - x.d * k
    if abs(denom) <= SINGULAR_GUARD:
        raise FrenetSingularityError(
            f"1 - d*kappa = {denom:.3e} at s={x.s:.4f}, d={x.d:.4f}"
        )
    s_dot_next = x.v * np.cos(x.psi) / denom
    return FrenetState(
        s=x.s + x.s_dot * dt,
        d=x.d + x.d_dot * dt,
        psi=x.psi + x.psi_dot * dt,
        v=max(x.v + a * dt, 0.0),
        s_dot=s_dot_next,
        d_dot=x.v * np.sin(x.psi),
        psi_dot=x.v * np.tan(theta) / params.wheelbase - k * s_dot_next,
    )


def flat_controls_arrays(s, d, s_dot, d_dot, kappa: CurvatureProfile, dt: float,
                         wheelbase: float):
    """Batched control recovery over the last axis.

    Returns (v, a, psi, psi_dot, theta).  a and psi_dot are forward
    differences; their last entry repeats the previous one so all arrays
    keep length H.  Raises ZeroDivisionError-free: callers must screen
    v == 0 themselves (see flat_controls).
    """
    k = kappa(s) if not kappa.is_zero else 0.0
    scale = 1.0 - d * k
    v = np.sqrt((s_dot * scale) ** 2 + d_dot**2)
    psi = np.arctan2(d_dot, s_dot)
    a = _forward_diff(v, dt)
    psi_dot = _forward_diff(psi, dt)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.arctan((psi_dot + k * s_dot) * wheelbase / v)
    return v, a, psi, psi_dot, theta


def _forward_diff(x, dt):
    out = np.empty_like(x)
    out[..., :-1] = np.diff(x, axis=-1) / dt
    out[..., -1] = out[..., -2]
    return out


def flat_controls(traj: EgoTrajectory, kappa: CurvatureProfile,
                  params: VehicleParams) -> ControlTrace:
    """Recover speed, acceleration, heading and steering from a trajectory."""
    v, a, psi, psi_dot, theta = flat_controls_arrays(
        traj.s, traj.d, traj.s_dot, traj.d_dot, kappa, traj.dt, params.wheelbase
    )
    stopped = np.flatnonzero(v <= 1e-9)
    if stopped.size:
        raise ValueError(f"speed vanishes at step {stopped[0]}, steering undefined")
    return ControlTrace(v=v, a=a, psi=psi, psi_dot=psi_dot, theta=theta)


def initial_state(traj: EgoTrajectory, kappa: CurvatureProfile,
                  params: VehicleParams) -> FrenetState:
    ctrl = flat_controls(traj, kappa, params)
    return FrenetState(s=traj.s[0], d=traj.d[0], psi=ctrl.psi[0], v=ctrl.v[0],
                       s_dot=traj.s_dot[0], d_dot=traj.d_dot[0], psi_dot=ctrl.psi_dot[0])


def rollout(x0: FrenetState, ctrl: ControlTrace, kappa: CurvatureProfile, dt: float,
            params: VehicleParams):
    """Simulate step_dynamics under a control trace; returns (s, d) arrays."""
    H = ctrl.v.shape[0]
    s, d = np.empty(H), np.empty(H)
    x = x0
    for k in range(H):
        s[k], d[k] = x.s, x.d
        if k < H - 1:
            x = step_dynamics(x, ctrl.a[k], ctrl.theta[k], kappa, dt, params)
    return s, d


@dataclass(frozen=True)
class PlannerGains:
    kappa_p: float = 1.0
    kappa_v: float = 2.0

    def __post_init__(self):
        if not (self.kappa_p > 0 and self.kappa_v > 0):
            raise ValueError("tracking gains must be positive")

    @classmethod
    def critically_damped(cls, kappa_p=1.0):
        return cls(kappa_p, 2.0 * np.sqrt(kappa_p))


class FrenetPlanner:
    """Closed-form planner for a fixed (H, dt, gains).

    Minimizes sum_k s''^2 + d''^2 + (d'' + kp (d - b_d) + kv d')^2
    + (s'' + kp (s' - b_v))^2 subject to the seven boundary equalities.
    The KKT matrix depends only on (H, dt, gains), so it is factored once
    and reused for every behavioural input and boundary condition.
    """

    def __init__(self, H: int = 50, dt: float = 0.1, gains: PlannerGains = PlannerGains()):
        if H < 5:
            raise ValueError("planner horizon must be at least 5")
        self.H, self.dt, self.gains = H, float(dt), gains
        D1, D2 = diff_matrices(H, self.dt)
        I, Z = np.eye(H), np.zeros((H, H))
        kp, kv = gains.kappa_p, gains.kappa_v
        # residual = M x - (C_d b_d + C_v b_v), x = [s; d]
        self.M = np.block([
            [D2, Z],
            [Z, D2],
            [Z, D2 + kv * D1 + kp * I],
            [D2 + kp * D1, Z],
        ])
        ones, zeros = np.ones(H), np.zeros(H)
        self.c_d = np.concatenate([zeros, zeros, kp * ones, zeros])
        self.c_v = np.concatenate([zeros, zeros, zeros, kp * ones])
        A = np.zeros((7, 2 * H))
        A[0, 0] = 1.0
        A[1, :H] = D1[0]
        A[2, :H] = D2[0]
        A[3, H] = 1.0
        A[4, H:] = D1[0]
        A[5, H:] = D2[0]
        A[6, H:] = D1[-1]
        self.A = A
        # Null-space least squares: x = x_p + N z with A x_p = e, z from a QR
        # solve on M N.  Avoids the squared conditioning of the KKT form.
        _, sv, vt = np.linalg.svd(A)
        if sv.min() < 1e-12 * sv.max():
            raise np.linalg.LinAlgError("boundary-condition rows are dependent")
        self.null_basis = vt[7:].T
        A_pinv = np.linalg.pinv(A)
        q, r = np.linalg.qr(self.M @ self.null_basis)
        if np.abs(np.diag(r)).min() < 1e-12 * np.abs(np.diag(r)).max():
            raise np.linalg.LinAlgError("planner optimality system is singular")
        lsq = self.null_basis @ np.linalg.solve(r, q.T)
        self._lsq = lsq
        self._M_ext = self.M.astype(np.longdouble)
        self._map_bc = A_pinv - lsq @ (self.M @ A_pinv)
        self._map_bd = lsq @ self.c_d
        self._map_bv = lsq @ self.c_v
        self._AAt = np.linalg.cholesky(A @ A.T)

    def objective(self, x, b) -> float:
        r = self.M @ x - self.c_d * b[0] - self.c_v * b[1]
        return float(r @ r)

    def gradient(self, x, b) -> np.ndarray:
        r = self.M @ x - self.c_d * b[0] - self.c_v * b[1]
        return 2.0 * self.M.T @ r

    def solve_positions(self, b, bc: BoundaryConditions, refine: bool = True) -> np.ndarray:
        """Optimal stacked positions for behavioural inputs b of shape (n, 2) or (2,)."""
        b = np.asarray(b, dtype=float)
        single = b.ndim == 1
        b = np.atleast_2d(b)
        sol = (np.outer(b[:, 0], self._map_bd) + np.outer(b[:, 1], self._map_bv)
               + self._map_bc @ bc.rhs())
        if refine:
            # mixed-precision refinement: residual in extended precision
            target = np.outer(b[:, 0], self.c_d) + np.outer(b[:, 1], self.c_v)
            resid = target.astype(np.longdouble) - sol.astype(np.longdouble) @ self._M_ext.T
            sol = sol + resid.astype(float) @ self._lsq.T
        return sol[0] if single else sol

    def plan(self, b: BehavioralInput, bc: BoundaryConditions) -> EgoTrajectory:
        x = self.solve_positions(b.as_array(), bc)
        traj = EgoTrajectory.from_positions(x[:self.H], x[self.H:], self.dt)
        if traj.boundary_residual(bc) > 1e-6:
            raise np.linalg.LinAlgError("planner optimality system is singular")
        return traj

    def equality_correction(self, x, bc: BoundaryConditions) -> np.ndarray:
        """Least-squares projection of stacked positions (n, 2H) onto A x = bc."""
        viol = x @ self.A.T - bc.rhs()
        lam = np.linalg.solve(self._AAt.T, np.linalg.solve(self._AAt, viol.T))
        return x - (self.A.T @ lam).T


@lru_cache(maxsize=16)
def get_planner(H: int, dt: float, kappa_p: float, kappa_v: float) -> FrenetPlanner:
    return FrenetPlanner(H, dt, PlannerGains(kappa_p, kappa_v))


def frenet_plan(b: BehavioralInput, bc: BoundaryConditions,
                gains: PlannerGains = PlannerGains(), H: int = 50,
                dt: float = 0.1) -> EgoTrajectory:
    """Map a behavioural input to the optimal trajectory from bc."""
    return get_planner(H, float(dt), gains.kappa_p, gains.kappa_v).plan(b, bc)
