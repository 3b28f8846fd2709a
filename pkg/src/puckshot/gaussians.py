"""Dense Gaussian algebra: joint fitting, conditioning, sampling, PSD hygiene.

All covariance-producing operations re-symmetrize their outputs and clamp
negative eigenvalues, so downstream propagation never sees an indefinite
matrix. Every function is pure; RNG state is owned by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFinite, SingularCondition, TooFewSamples

# Relative diagonal regularization applied before any inversion and to
# fitted sample covariances; guards degenerate (e.g. static-puck) data.
REG_SCALE = 1e-9


def regularization(cov: np.ndarray) -> float:
    """Diagonal jitter for a covariance: REG_SCALE * max(1, trace)."""
    return REG_SCALE * max(1.0, float(np.trace(cov)))


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def clamp_psd(mat: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone (negative eigenvalues -> 0)."""
    sym = symmetrize(np.asarray(mat, dtype=float))
    vals, vecs = np.linalg.eigh(sym)
    if vals[0] >= 0.0:
        return sym
    vals = np.clip(vals, 0.0, None)
    return symmetrize((vecs * vals) @ vecs.T)


def is_psd(mat: np.ndarray, tol_scale: float = 1e-9) -> bool:
    """PSD check up to tolerance: eigenvalues >= -tol_scale * max(1, trace)."""
    sym = np.asarray(mat, dtype=float)
    if not np.allclose(sym, sym.T, rtol=0.0, atol=1e-9 * max(1.0, float(np.abs(sym).max()))):
        return False
    vals = np.linalg.eigvalsh(symmetrize(sym))
    return bool(vals[0] >= -tol_scale * max(1.0, float(np.trace(sym))))


@dataclass
class GaussianBelief:
    """Mean vector plus PSD covariance; the unit of all uncertainty propagation."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError(
                f"covariance shape {self.cov.shape} does not match mean dimension {self.mean.size}"
            )
        if not (np.isfinite(self.mean).all() and np.isfinite(self.cov).all()):
            raise NonFinite("belief contains NaN/Inf")

    @property
    def dim(self) -> int:
        return self.mean.size

    def validate(self) -> None:
        """Raise if the covariance is not symmetric PSD within tolerance."""
        scale = max(1.0, float(np.abs(self.cov).max()))
        if not np.allclose(self.cov, self.cov.T, rtol=0.0, atol=1e-9 * scale):
            raise ValueError("covariance not symmetric within 1e-9 relative")
        vals = np.linalg.eigvalsh(symmetrize(self.cov))
        if vals[0] < -1e-9 * max(1.0, float(np.trace(self.cov))):
            raise ValueError(f"covariance has negative eigenvalue {vals[0]:.3e}")


@dataclass
class JointGaussian:
    """Joint distribution over a prediction block y and a condition block xi."""

    mean_y: np.ndarray
    mean_xi: np.ndarray
    cov_yy: np.ndarray
    cov_yxi: np.ndarray
    cov_xixi: np.ndarray

    def __post_init__(self):
        self.mean_y = np.atleast_1d(np.asarray(self.mean_y, dtype=float))
        self.mean_xi = np.atleast_1d(np.asarray(self.mean_xi, dtype=float))
        self.cov_yy = np.atleast_2d(np.asarray(self.cov_yy, dtype=float))
        self.cov_yxi = np.atleast_2d(np.asarray(self.cov_yxi, dtype=float))
        self.cov_xixi = np.atleast_2d(np.asarray(self.cov_xixi, dtype=float))
        dy, dxi = self.mean_y.size, self.mean_xi.size
        if self.cov_yy.shape != (dy, dy) or self.cov_xixi.shape != (dxi, dxi):
            raise ValueError("marginal covariance block shapes inconsistent with means")
        if self.cov_yxi.shape != (dy, dxi):
            raise ValueError(f"cross-covariance shape {self.cov_yxi.shape} != ({dy}, {dxi})")

    @property
    def dim_y(self) -> int:
        return self.mean_y.size

    @property
    def dim_xi(self) -> int:
        return self.mean_xi.size

    def full_mean(self) -> np.ndarray:
        return np.concatenate([self.mean_y, self.mean_xi])

    def full_cov(self) -> np.ndarray:
        return np.block([[self.cov_yy, self.cov_yxi], [self.cov_yxi.T, self.cov_xixi]])


@dataclass
class LinearGaussianMap:
    """Affine-Gaussian map y | xi ~ N(gain @ xi + offset, noise_cov)."""

    gain: np.ndarray
    offset: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        self.gain = np.atleast_2d(np.asarray(self.gain, dtype=float))
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=float))
        self.noise_cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        dy = self.offset.size
        if self.gain.shape[0] != dy or self.noise_cov.shape != (dy, dy):
            raise ValueError("gain/offset/noise dimensions inconsistent")

    def predict(self, xi: np.ndarray) -> GaussianBelief:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return GaussianBelief(self.gain @ xi + self.offset, self.noise_cov.copy())


def fit_joint_gaussian(samples) -> JointGaussian:
    """Fit a joint Gaussian to (y, xi) sample pairs.

    Uses the unbiased (n-1) sample covariance with diagonal regularization
    so that degenerate data (e.g. all samples identical) still yields an
    invertible joint.

    Args:
        samples: iterable of (y, xi) pairs; y and xi may be scalars or vectors
            but must have consistent dimensions across samples.

    Raises:
        TooFewSamples: fewer than dim(y) + dim(xi) + 1 samples.
        NonFinite: any sample contains NaN/Inf.
    """
    pairs = list(samples)
    if not pairs:
        raise TooFewSamples("no samples")
    ys = np.atleast_2d(np.asarray([np.atleast_1d(np.asarray(y, dtype=float)) for y, _ in pairs]))
    xis = np.atleast_2d(np.asarray([np.atleast_1d(np.asarray(x, dtype=float)) for _, x in pairs]))
    n, dy = ys.shape
    dxi = xis.shape[1]
    if n < dy + dxi + 1:
        raise TooFewSamples(f"{n} samples < required {dy + dxi + 1}")
    data = np.hstack([ys, xis])
    if not np.isfinite(data).all():
        raise NonFinite("samples contain NaN/Inf")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (n - 1)
    cov = symmetrize(cov)
    cov[np.diag_indices_from(cov)] += regularization(cov)
    return JointGaussian(
        mean_y=mean[:dy],
        mean_xi=mean[dy:],
        cov_yy=cov[:dy, :dy],
        cov_yxi=cov[:dy, dy:],
        cov_xixi=cov[dy:, dy:],
    )


def condition(joint: JointGaussian) -> LinearGaussianMap:
    """Condition a joint Gaussian on its xi block.

    Returns the affine map with
        gain   = cov_yxi @ inv(cov_xixi)
        offset = mean_y - gain @ mean_xi
        noise  = cov_yy - gain @ cov_yxi^T   (re-symmetrized, clamped PSD)

    Raises:
        SingularCondition: cov_xixi is not invertible even after regularization.
    """
    s_xi = joint.cov_xixi.copy()
    s_xi[np.diag_indices_from(s_xi)] += regularization(s_xi)
    try:
        gain = np.linalg.solve(s_xi, joint.cov_yxi.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularCondition(f"condition block not invertible: {exc}") from exc
    if not np.isfinite(gain).all():
        raise SingularCondition("condition block inversion produced non-finite gain")
    offset = joint.mean_y - gain @ joint.mean_xi
    noise = clamp_psd(joint.cov_yy - gain @ joint.cov_yxi.T)
    return LinearGaussianMap(gain=gain, offset=offset, noise_cov=noise)


def chol_or_eigh(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular-like factor L with L @ L.T == cov.

    Cholesky when positive definite, symmetric eigen fallback for
    semidefinite covariances (zero/negative eigenvalues clipped to 0).
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(symmetrize(cov))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_gaussian(belief: GaussianBelief, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. samples from a belief; deterministic given the rng state."""
    factor = chol_or_eigh(belief.cov)
    z = rng.standard_normal((n, belief.dim))
    return belief.mean + z @ factor.T
