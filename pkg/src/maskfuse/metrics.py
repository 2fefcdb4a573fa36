"""Fréchet distance, Inception Score and mean-of-score, over pluggable features.

No pretrained networks are involved: callers supply feature vectors (for
the Fréchet distance) or class-probability rows (for the Inception Score).
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, ValidationError


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    n_samples: int

    @property
    def dim(self):
        return self.mean.shape[0]

    def merge(self, other: "FeatureStats") -> "FeatureStats":
        """Pairwise (Chan et al.) combination of two shards' statistics."""
        if other.dim != self.dim:
            raise ValidationError(f"cannot merge stats of dimension {self.dim} and {other.dim}")
        na, nb = self.n_samples, other.n_samples
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * (nb / n)
        scatter = self.cov * (na - 1) + other.cov * (nb - 1) + np.outer(delta, delta) * (na * nb / n)
        return FeatureStats(mean, scatter / (n - 1), n)

    def to_json(self):
        return {"mean": self.mean.tolist(), "cov": self.cov.reshape(-1).tolist(), "n": self.n_samples}

    @classmethod
    def from_json(cls, d):
        mean = np.asarray(d["mean"], dtype=np.float64)
        cov = np.asarray(d["cov"], dtype=np.float64).reshape(mean.size, mean.size)
        return cls(mean, cov, int(d["n"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def accumulate_stats(features) -> FeatureStats:
    """Two-pass sample mean and unbiased covariance of a stream of D-vectors."""
    x = np.asarray([np.asarray(f, dtype=np.float64).reshape(-1) for f in features])
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("need at least two feature vectors")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    return FeatureStats(mean, cov, x.shape[0])


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns.
    Raises :class:`NumericError` if the off-diagonal mass has not dropped
    below ``tol`` times the Frobenius norm after ``max_sweeps`` sweeps.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n < 2 or scale == 0.0:
        return np.diag(a).copy(), v
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = c * ap - s * aq, s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
    raise NumericError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def psd_sqrt(a):
    """Symmetric square root with negative eigenvalues clamped to zero."""
    a = 0.5 * (a + a.T)
    w, v = jacobi_eigh(a)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The cross term uses ``Tr((S_a S_b)^(1/2)) = Tr((R S_b R)^(1/2))`` with
    ``R = S_a^(1/2)``, so only symmetric square roots are needed.
    """
    if a.dim != b.dim:
        raise ValidationError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    root_a = psd_sqrt(a.cov)
    middle = root_a @ b.cov @ root_a
    w, _ = jacobi_eigh(0.5 * (middle + middle.T))
    cross = np.sqrt(np.clip(w, 0.0, None)).sum()
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(value, 0.0)


def validate_probs(p, tol=1e-9):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise ValidationError(f"probability matrix must be n x K, got shape {p.shape}")
    if (p < 0).any() or not np.isfinite(p).all():
        raise ValidationError("probabilities must be finite and non-negative")
    if np.abs(p.sum(axis=1) - 1.0).max() > tol:
        raise ValidationError("every probability row must sum to 1")
    return p


def inception_score(p) -> float:
    """``exp(mean_i KL(p_i || p_bar))`` with ``p_bar`` the column mean; 0 log 0 = 0."""
    p = validate_probs(p)
    # a constant column has that constant as its exact mean; averaging can be off by an ulp
    constant = (p == p[0]).all(axis=0)
    marginal = np.where(constant, p[0], p.mean(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0)
    kl = terms.sum(axis=1)
    return float(np.exp(kl.mean()))


def mean_of_score(scores) -> float:
    scores = [float(s) for s in scores]
    if not scores:
        raise ValidationError("mean of score needs at least one score")
    return sum(scores) / len(scores)
