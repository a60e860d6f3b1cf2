"""Principal component analysis via the covariance eigendecomposition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1


class PcaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # r x d, orthonormal rows
    eigenvalues: np.ndarray  # top r, descending
    explained_variance_ratio: np.ndarray
    total_variance: float
    spectrum: np.ndarray | None = None  # all d eigenvalues, descending

    @property
    def n_components(self):
        return self.components.shape[0]

    def save(self, path) -> None:
        np.savez(
            path,
            version=FORMAT_VERSION,
            mean=self.mean,
            components=self.components,
            eigenvalues=self.eigenvalues,
            explained_variance_ratio=self.explained_variance_ratio,
            total_variance=self.total_variance,
            spectrum=self.spectrum if self.spectrum is not None else np.empty(0),
        )

    @classmethod
    def load(cls, path) -> "PcaModel":
        with np.load(path) as z:
            if int(z["version"]) != FORMAT_VERSION:
                raise PcaError(f"unsupported PCA file version {int(z['version'])}")
            return cls(z["mean"], z["components"], z["eigenvalues"],
                       z["explained_variance_ratio"], float(z["total_variance"]),
                       z["spectrum"] if z["spectrum"].size else None)


def covariance_spectrum(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, descending eigenvalues and matching eigenvectors (as rows).

    Covariance uses the unbiased ``1 / (N - 1)`` normalization. Tiny
    negative eigenvalues from round-off are clipped to zero, and each
    eigenvector is signed so its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise PcaError(f"need a 2-D matrix with at least two rows, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise PcaError("PCA input contains non-finite values")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / (len(X) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order].T
    pivot = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), pivot])
    vecs *= np.where(signs == 0, 1.0, signs)[:, None]
    return mean, vals, vecs


def fit_pca(X, r: int) -> PcaModel:
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if int(r) != r or not 1 <= r <= min(n - 1, d):
        raise PcaError(f"r={r} outside 1..{min(n - 1, d)}")
    mean, vals, vecs = covariance_spectrum(X)
    total = float(vals.sum())
    ratio = vals[:r] / total if total > 0 else np.zeros(r)
    return PcaModel(mean, vecs[:r].copy(), vals[:r].copy(), ratio, total, vals)


def components_for_variance(eigenvalues, target: float = 0.99) -> int:
    """Smallest number of leading components whose variance share reaches ``target``."""
    vals = np.asarray(eigenvalues, dtype=np.float64)
    if vals.size == 0:
        raise PcaError("empty eigenvalue list")
    if not 0.0 < target <= 1.0:
        raise PcaError(f"target must lie in (0, 1], got {target}")
    cum = np.cumsum(vals) / vals.sum()
    # guard against the last cumulative value rounding just below 1
    hit = np.flatnonzero(cum >= target - 1e-12)
    return int(hit[0]) + 1 if hit.size else len(vals)


def transform(model: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.mean.shape[0]:
        raise PcaError(f"expected {model.mean.shape[0]} columns, got shape {X.shape}")
    return (X - model.mean) @ model.components.T


def inverse_transform(model: PcaModel, Z) -> np.ndarray:
    return np.asarray(Z) @ model.components + model.mean

