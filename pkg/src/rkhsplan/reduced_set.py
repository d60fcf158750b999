"""Reduced-set selection for obstacle trajectory samples.

A reduced set is a weighted subset of the rows of O whose kernel mean
embedding approximates the uniform embedding of all N rows.  The subset
is encoded by a score vector lambda (keep the n_prime largest |lambda|),
the weights solve an equality-constrained QP in closed form, and an
outer cross-entropy search tunes (lambda, log sigma).
"""

import logging
from dataclasses import dataclass

import numpy as np

from .frenet import EgoTrajectory, VehicleParams
from .kernels import KernelConfig, l1_distances, median_heuristic, mmd_to_dirac
from .risk import ObstacleSampleSet, residuals_of

log = logging.getLogger(__name__)

RIDGE = 1e-8


@dataclass(frozen=True)
class ReducedSet:
    indices: np.ndarray
    samples: ObstacleSampleSet
    beta: np.ndarray
    sigma: float
    gap: float = float("nan")
    trace: tuple = ()

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int).ravel()
        beta = np.asarray(self.beta, dtype=float).ravel()
        if idx.size < 1 or np.unique(idx).size != idx.size:
            raise ValueError("reduced-set indices must be distinct and non-empty")
        if beta.shape != idx.shape or self.samples.N != idx.size:
            raise ValueError("indices, samples and weights must agree in length")
        if abs(beta.sum() - 1.0) > 1e-9:
            raise ValueError(f"reduced-set weights sum to {beta.sum():.12g}, not 1")
        if not self.sigma > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "beta", beta)

    @property
    def n_prime(self) -> int:
        return self.indices.size

    @classmethod
    def from_indices(cls, O: ObstacleSampleSet, indices, sigma: float, weights=None):
        """Reduced set on given rows; QP weights unless `weights` is given."""
        indices = np.asarray(indices, dtype=int)
        if weights is None:
            weights = optimal_weights(O, indices, KernelConfig(sigma))
        rs = cls(indices, O.subset(indices), weights, sigma)
        return cls(indices, rs.samples, rs.beta, sigma, embedding_gap(O, rs))

    def to_dict(self) -> dict:
        return {
            "indices": self.indices.tolist(),
            "beta": self.beta.tolist(),
            "sigma": self.sigma,
            "gap": self.gap,
            "dt": self.samples.dt,
            "samples": self.samples.O.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReducedSet":
        samples = ObstacleSampleSet(np.asarray(data["samples"]), float(data["dt"]))
        return cls(np.asarray(data["indices"]), samples, np.asarray(data["beta"]),
                   float(data["sigma"]), float(data.get("gap", "nan")))


@dataclass(frozen=True)
class CemConfig:
    e_cem: int = 20
    n_cem: int = 64
    n_elite: int = 8
    init_mean: np.ndarray = None
    init_cov: np.ndarray = None
    log_sigma_var: float = 0.25
    cov_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.e_cem < 1 or self.n_cem < 1:
            raise ValueError("e_cem and n_cem must be positive")
        if not 1 <= self.n_elite <= self.n_cem:
            raise ValueError("need 1 <= n_elite <= n_cem")
        if self.init_cov is not None:
            cov = np.atleast_2d(np.asarray(self.init_cov, dtype=float))
            if not np.allclose(cov, cov.T):
                raise ValueError("init_cov must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("init_cov must be positive definite") from None


def select_rows(O, lam, n_prime: int) -> np.ndarray:
    """Indices of the n_prime rows with largest |lambda|.

    Ascending sort of |lambda|, keeping the last n_prime entries in
    sorted order; ties resolve in favour of the lowest original index.
    """
    lam = np.asarray(lam, dtype=float).ravel()
    N = O.N if isinstance(O, ObstacleSampleSet) else int(O)
    if lam.size != N:
        raise ValueError(f"lambda has {lam.size} entries for {N} rows")
    if not 1 <= n_prime <= N:
        raise ValueError(f"n_prime={n_prime} outside [1, {N}]")
    # ascending |lambda|; equal magnitudes ordered by descending index so the
    # kept tail prefers the lowest original indices
    order = np.lexsort((-np.arange(N), np.abs(lam)))
    return order[N - n_prime:]


def _weights_from_kernel(Kp, b):
    """Closed-form minimizer of beta'K'beta - 2b'beta s.t. sum(beta) = 1.

    Kp: (..., n, n), b: (..., n).  Solves the bordered first-order system.
    """
    n = Kp.shape[-1]
    lead = Kp.shape[:-2]
    sys = np.zeros(lead + (n + 1, n + 1))
    sys[..., :n, :n] = 2.0 * (Kp + RIDGE * np.eye(n))
    sys[..., :n, n] = 1.0
    sys[..., n, :n] = 1.0
    rhs = np.zeros(lead + (n + 1,))
    rhs[..., :n] = 2.0 * b
    rhs[..., n] = 1.0
    sol = np.linalg.solve(sys, rhs[..., None])[..., 0]
    return sol[..., :n]


def optimal_weights(O: ObstacleSampleSet, indices, cfg: KernelConfig) -> np.ndarray:
    indices = np.asarray(indices, dtype=int)
    if indices.size < 1 or np.unique(indices).size != indices.size:
        raise ValueError("indices must be distinct and non-empty")
    if indices.min() < 0 or indices.max() >= O.N:
        raise IndexError("reduced-set index out of range")
    D = l1_distances(O.O[indices], O.O)
    Kxn = np.exp(-D / cfg.sigma)
    Kp = Kxn[:, indices]
    b = Kxn.mean(axis=1)
    try:
        beta = _weights_from_kernel(Kp, b)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("reduced-set weight system is singular") from exc
    if not np.all(np.isfinite(beta)):
        raise np.linalg.LinAlgError("reduced-set weight system is singular")
    return beta


def embedding_gap(O: ObstacleSampleSet, rs: ReducedSet) -> float:
    """Squared MMD between the uniform full set and the weighted reduced set."""
    K = np.exp(-l1_distances(O.O, O.O) / rs.sigma)
    return _gap_from_kernel(K, rs.indices, rs.beta)


def _gap_from_kernel(K, idx, beta) -> float:
    val = K.mean() - 2.0 * beta @ K[idx].mean(axis=1) + beta @ K[np.ix_(idx, idx)] @ beta
    return max(0.0, float(val))


def reduce(O: ObstacleSampleSet, n_prime: int, cfg: CemConfig = CemConfig(),
           warm_start: ReducedSet = None) -> ReducedSet:
    """Cross-entropy search over (lambda, log sigma) for the best reduced set.

    Returns the best-ever sample (indices, QP weights, sigma); the
    per-iteration best-ever gap is kept in ReducedSet.trace.
    """
    N = O.N
    if not 1 <= n_prime <= N:
        raise ValueError(f"n_prime={n_prime} outside [1, {N}]")
    D = l1_distances(O.O, O.O)
    dim = N + 1
    if cfg.init_mean is not None:
        mean = np.asarray(cfg.init_mean, dtype=float).copy()
    else:
        mean = np.zeros(dim)
        mean[-1] = np.log(median_heuristic(O.O))
    if cfg.init_cov is not None:
        cov = np.atleast_2d(np.asarray(cfg.init_cov, dtype=float)).copy()
    else:
        cov = np.eye(dim)
        cov[-1, -1] = cfg.log_sigma_var
    if mean.shape != (dim,) or cov.shape != (dim, dim):
        raise ValueError(f"CEM distribution must live in R^{dim}")

    best = (np.inf, None, None, None)
    trace = []
    for e in range(cfg.e_cem):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, e]))
        L = np.linalg.cholesky(cov)
        samples = mean + rng.standard_normal((cfg.n_cem, dim)) @ L.T
        if e == 0 and warm_start is not None:
            samples[0] = _warm_candidate(warm_start, samples[0], N)
        costs, idxs, betas = _score_batch(D, samples, n_prime)
        m = int(np.argmin(costs))
        if costs[m] < best[0]:
            best = (costs[m], idxs[m], betas[m], float(np.exp(samples[m, -1])))
        trace.append(best[0])

        elite = samples[np.argsort(costs, kind="stable")[:cfg.n_elite]]
        elite = elite[np.isfinite(np.sort(costs)[:cfg.n_elite])]
        if elite.shape[0] == 0:
            log.warning("CEM iteration %d: every inner solve failed", e)
            continue
        mean = elite.mean(axis=0)
        diff = elite - mean
        cov = diff.T @ diff / elite.shape[0] + cfg.cov_floor * np.eye(dim)

    if best[1] is None:
        raise np.linalg.LinAlgError("no CEM sample produced a solvable weight system")
    gap, idx, beta, sigma = best
    return ReducedSet(idx, O.subset(idx), beta, sigma, float(gap), tuple(trace))


def _warm_candidate(rs: ReducedSet, base, N):
    cand = base.copy()
    lam = cand[:N]
    top = np.abs(lam).max() + 1.0
    lam[rs.indices] = top + np.arange(rs.n_prime, 0, -1)
    cand[-1] = np.log(rs.sigma)
    return cand


def _score_batch(D, samples, n_prime):
    N = D.shape[0]
    n = samples.shape[0]
    sig = np.exp(samples[:, -1])
    idxs = np.stack([select_rows(N, lam, n_prime) for lam in samples[:, :N]])
    costs = np.full(n, np.inf)
    betas = np.zeros((n, n_prime))
    ok = np.isfinite(sig) & (sig > 0)
    if not ok.any():
        return costs, idxs, betas
    K = np.exp(-D[None] / sig[ok, None, None])
    rows = np.take_along_axis(K, idxs[ok][:, :, None], axis=1)      # (m, n', N)
    Kp = np.take_along_axis(rows, idxs[ok][:, None, :], axis=2)      # (m, n', n')
    b = rows.mean(axis=2)
    try:
        beta = _weights_from_kernel(Kp, b)
    except np.linalg.LinAlgError:
        beta = np.stack([_safe_weights(Kp[i], b[i]) for i in range(Kp.shape[0])])
    gap = (K.mean(axis=(1, 2)) - 2.0 * np.einsum("mi,mi->m", beta, b)
           + np.einsum("mi,mij,mj->m", beta, Kp, beta))
    good = np.all(np.isfinite(beta), axis=1)
    gap = np.where(good, np.maximum(gap, 0.0), np.inf)
    costs[ok] = gap
    betas[ok] = np.where(good[:, None], beta, 0.0)
    return costs, idxs, betas


def _safe_weights(Kp, b):
    try:
        return _weights_from_kernel(Kp, b)
    except np.linalg.LinAlgError:
        return np.full(b.shape, np.nan)


def random_reduced_set(O: ObstacleSampleSet, n_prime: int, seed: int,
                       sigma: float = None) -> ReducedSet:
    """Uniformly random rows with QP weights (median-heuristic sigma by default)."""
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(O.N, size=n_prime, replace=False))
    if sigma is None:
        sigma = median_heuristic(O.O)
    return ReducedSet.from_indices(O, idx, sigma)


def delta_r_mmd(ego: EgoTrajectory, O: ObstacleSampleSet, rs: ReducedSet,
                params: VehicleParams, residual_sigma: float = None) -> float:
    """|MMD risk on all N rows (uniform) - MMD risk on the reduced set (beta)|."""
    sigma = rs.sigma if residual_sigma is None else residual_sigma
    cfg = KernelConfig(sigma)
    full = residuals_of(ego, O, params)
    reduced = residuals_of(ego, rs.samples, params)
    r_full = mmd_to_dirac(full, np.full(full.size, 1.0 / full.size), cfg)
    r_red = mmd_to_dirac(reduced, rs.beta, cfg)
    return abs(r_full - r_red)
