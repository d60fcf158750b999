"""Laplace kernel, kernel matrices and squared-MMD estimators.

Every distribution handled here is an empirical one: a set of sample
vectors with (possibly signed) weights summing to one.  The squared MMD
between two such sets is the squared RKHS distance between their mean
embeddings, expanded with the kernel trick.
"""

from dataclasses import dataclass

import numpy as np

# Squared norms that come out slightly negative from cancellation are zeroed.
NEG_CLAMP = 1e-9


@dataclass(frozen=True)
class KernelConfig:
    sigma: float

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError(f"kernel bandwidth must be positive, got {self.sigma}")


@dataclass(frozen=True)
class WeightedSampleSet:
    """Samples (rows) and weights of an empirical distribution."""

    samples: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if samples.shape[0] < 1:
            raise ValueError("sample set must be non-empty")
        if weights.shape[0] != samples.shape[0]:
            raise ValueError(
                f"{samples.shape[0]} samples but {weights.shape[0]} weights"
            )
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {weights.sum():.12g}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, samples):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        n = samples.shape[0]
        return cls(samples, np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def _check_cfg(cfg):
    if isinstance(cfg, KernelConfig):
        return cfg.sigma
    return KernelConfig(float(cfg)).sigma


def laplace_kernel(z, z2, cfg: KernelConfig) -> float:
    """exp(-||z - z2||_1 / sigma)."""
    sigma = _check_cfg(cfg)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    z2 = np.atleast_1d(np.asarray(z2, dtype=float))
    if z.shape != z2.shape:
        raise ValueError(f"dimension mismatch: {z.shape} vs {z2.shape}")
    return float(np.exp(-np.abs(z - z2).sum() / sigma))


def l1_distances(X, Y) -> np.ndarray:
    """Pairwise L1 distance matrix between the rows of X and Y."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("kernel matrix needs non-empty sample sets")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    # Chunked over X rows to bound the (n, m, d) temporary.
    out = np.empty((X.shape[0], Y.shape[0]))
    chunk = max(1, int(2_000_000 // max(1, Y.shape[0] * X.shape[1])))
    for start in range(0, X.shape[0], chunk):
        block = X[start:start + chunk]
        out[start:start + chunk] = np.abs(block[:, None, :] - Y[None, :, :]).sum(-1)
    return out


def kernel_matrix(X, Y, cfg: KernelConfig) -> np.ndarray:
    sigma = _check_cfg(cfg)
    return np.exp(-l1_distances(X, Y) / sigma)


def mmd_sq(A: WeightedSampleSet, B: WeightedSampleSet, cfg: KernelConfig) -> float:
    """Squared MMD between two weighted empirical distributions.

    Computes wA' K_AA wA - 2 wA' K_AB wB + wB' K_BB wB and clamps
    round-off negatives (down to -1e-9) to zero.
    """
    if A.dim != B.dim:
        raise ValueError(f"dimension mismatch: {A.dim} vs {B.dim}")
    wa, wb = A.weights, B.weights
    val = (
        wa @ kernel_matrix(A.samples, A.samples, cfg) @ wa
        - 2.0 * wa @ kernel_matrix(A.samples, B.samples, cfg) @ wb
        + wb @ kernel_matrix(B.samples, B.samples, cfg) @ wb
    )
    return _clamp(val)


def _clamp(val: float) -> float:
    if val < 0.0:
        if val < -NEG_CLAMP:
            raise FloatingPointError(f"squared MMD {val:.3e} is negative beyond round-off")
        return 0.0
    return float(val)


def weighted_laplace_energy(x, w, sigma: float) -> float:
    """sum_ij w_i w_j exp(-|x_i - x_j| / sigma) for scalar samples.

    Runs in O(n log n) by sorting and sweeping an exponentially decayed
    running sum, so it scales to reference sets of 1e5 residuals.
    """
    x = np.asarray(x, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    decay = np.exp(-np.diff(xs) / sigma)
    acc = 0.0
    cross = 0.0
    for i in range(1, xs.shape[0]):
        acc = decay[i - 1] * (acc + ws[i - 1])
        cross += ws[i] * acc
    return float(ws @ ws + 2.0 * cross)


def mmd_to_dirac(residuals, weights, cfg: KernelConfig) -> float:
    """Squared MMD between weighted residual samples and a point mass at 0.

    The Dirac side is represented by exact zeros with uniform weights, so
    its self term is 1 and its cross term with the residuals reduces to
    sum_i beta_i exp(-r_i / sigma).
    """
    sigma = _check_cfg(cfg)
    r = np.asarray(residuals, dtype=float).ravel()
    beta = np.asarray(weights, dtype=float).ravel()
    if r.shape != beta.shape:
        raise ValueError(f"{r.shape[0]} residuals but {beta.shape[0]} weights")
    if r.size == 0:
        raise ValueError("residual set must be non-empty")
    if np.any(r < 0):
        raise ValueError("residuals must be non-negative")
    if abs(beta.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {beta.sum():.12g}")
    if not np.any(r > 0):
        return 0.0
    if r.size <= 64:
        d = np.abs(r[:, None] - r[None, :])
        self_term = beta @ np.exp(-d / sigma) @ beta
    else:
        self_term = weighted_laplace_energy(r, beta, sigma)
    val = self_term - 2.0 * beta @ np.exp(-r / sigma) + 1.0
    return _clamp(val)


def mmd_to_dirac_batch(residuals: np.ndarray, weights, sigma: float) -> np.ndarray:
    """Vectorized mmd_to_dirac over the leading axis of `residuals` (B, n)."""
    r = np.asarray(residuals, dtype=float)
    beta = np.asarray(weights, dtype=float)
    d = np.abs(r[:, :, None] - r[:, None, :])
    self_term = np.einsum("i,bij,j->b", beta, np.exp(-d / sigma), beta)
    val = self_term - 2.0 * np.exp(-r / sigma) @ beta + 1.0
    # rows with no positive residual coincide with the Dirac exactly
    return np.where((val < 0.0) | ~np.any(r > 0, axis=1), 0.0, val)


def median_heuristic(X) -> float:
    """Median pairwise L1 distance between distinct rows (bandwidth default)."""
    D = l1_distances(X, X)
    iu = np.triu_indices(D.shape[0], k=1)
    vals = D[iu]
    vals = vals[vals > 0]
    if vals.size == 0:
        return 1.0
    return float(np.median(vals))
