"""Per-column statistic and k-nearest-neighbor imputation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import HarDataset
from .masking import MaskedDataset


class ImputationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ImputerModel:
    """A fitted imputer.

    For ``kind == "simple"`` only ``statistics`` is used. For ``"knn"`` the
    pool (training values, NaN where missing) is kept whole; ``statistics``
    then holds the pool column means used as the no-neighbor fallback.
    """

    kind: str
    statistics: np.ndarray
    statistic: str = "mean"
    k: int = 0
    pool: np.ndarray | None = None

    @property
    def n_features(self):
        return len(self.statistics)

    def describe(self) -> dict:
        if self.kind == "simple":
            return {"kind": "simple", "statistic": self.statistic}
        return {"kind": "knn", "k": self.k, "weighting": "uniform", "pool_rows": len(self.pool)}


def _observed_matrix(train):
    if isinstance(train, MaskedDataset):
        return train.with_nan()
    return np.asarray(train, dtype=np.float64)


def _column_statistic(X, statistic):
    observed = ~np.isnan(X)
    empty = np.flatnonzero(~observed.any(axis=0))
    if empty.size:
        raise ImputationError(f"column(s) {empty.tolist()} have no observed training cells")
    if statistic == "mean":
        return np.nanmean(X, axis=0)
    if statistic == "median":
        return np.nanmedian(X, axis=0)
    raise ValueError(f"statistic must be 'mean' or 'median', got {statistic!r}")


def fit_simple(train, statistic: str = "mean") -> ImputerModel:
    """Fit one fill value per column from the observed training cells.

    ``train`` is a :class:`MaskedDataset` or a float array with NaN for
    missing cells.
    """
    X = _observed_matrix(train)
    return ImputerModel("simple", _column_statistic(X, statistic), statistic=statistic)


def fit_knn(train, k: int = 5) -> ImputerModel:
    if int(k) != k or k < 1:
        raise ImputationError(f"k must be a positive integer, got {k}")
    X = _observed_matrix(train)
    if k > len(X):
        raise ImputationError(f"k={k} exceeds the {len(X)} available pool rows")
    return ImputerModel("knn", _column_statistic(X, "mean"), k=int(k), pool=X.copy())


def nan_distance(a, b) -> float:
    """Euclidean distance over coordinates observed in both rows.

    Missing coordinates are NaN. The squared sum is scaled by
    ``d / d_shared`` so rows with few shared coordinates are not favoured;
    with nothing shared the distance is infinite.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("rows differ in length")
    shared = ~(np.isnan(a) | np.isnan(b))
    n_shared = int(shared.sum())
    if n_shared == 0:
        return math.inf
    diff = a[shared] - b[shared]
    return math.sqrt(len(a) / n_shared * float(diff @ diff))


def _pairwise_sq_estimate(T, pool, pool_obs, pool_sq):
    """Scaled squared nan-distances, matrix form (fast, not bit-exact)."""
    t_obs = ~np.isnan(T)
    Tz = np.where(t_obs, T, 0.0)
    d = T.shape[1]
    sq = (Tz * Tz) @ pool_obs.T + t_obs.astype(np.float64) @ pool_sq.T - 2.0 * (Tz @ np.nan_to_num(pool).T)
    shared = t_obs.astype(np.float64) @ pool_obs.T
    np.maximum(sq, 0.0, out=sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(shared > 0, sq * (d / np.maximum(shared, 1.0)), np.inf)
    return out


def _exact_distances(row, cand_rows, cand_obs):
    r_obs = ~np.isnan(row)
    shared = cand_obs & r_obs
    n_shared = shared.sum(axis=1)
    diff = np.where(shared, cand_rows - np.where(r_obs, row, 0.0), 0.0)
    sq = np.einsum("ij,ij->i", diff, diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.sqrt(len(row) / n_shared * sq)
    dist[n_shared == 0] = np.inf
    return dist


def _knn_fill_row(row, cols, model, pool_obs, approx):
    """Fill ``row[cols]`` in place; returns the number of fallback cells."""
    k = model.k
    pool = model.pool
    n_pool = len(pool)
    order = np.lexsort((np.arange(n_pool), approx))
    L = min(n_pool, max(8 * k, 64))
    while True:
        cand = order[:L]
        dist = _exact_distances(row, pool[cand], pool_obs[cand])
        finite = np.isfinite(dist)
        cand, dist = cand[finite], dist[finite]
        # re-rank candidates on exact distances, ties to lower pool index
        rank = np.lexsort((cand, dist))
        cand = cand[rank]
        obs = pool_obs[np.ix_(cand, cols)]
        enough = obs.sum(axis=0) >= k
        if enough.all() or L == n_pool:
            break
        L = min(n_pool, L * 4)
    take = obs & (np.cumsum(obs, axis=0) <= k)
    counts = take.sum(axis=0)
    # donors per column in rank order, summed one at a time so the result
    # does not depend on numpy's blocked reduction order
    donor_pos = np.argsort(~take, axis=0, kind="stable")[:k]
    donors = pool[cand[donor_pos], cols]
    total = np.zeros(len(cols))
    for r in range(len(donor_pos)):
        total += np.where(r < counts, donors[r], 0.0)
    fallback = counts == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        filled = total / counts
    filled[fallback] = model.statistics[cols][fallback]
    row[cols] = filled
    return int(fallback.sum())


def impute_array(model: ImputerModel, X, missing=None, chunk: int = 256) -> tuple[np.ndarray, int]:
    """Fill missing cells of ``X``.

    Args:
        X: values; NaN marks missing unless ``missing`` is given.
        missing: optional boolean mask (``True`` = missing).

    Returns:
        ``(filled, n_fallback)`` where ``n_fallback`` counts KNN cells that
        had no observing neighbor and took the pool column mean.
    """
    X = np.array(X, dtype=np.float64)
    if missing is None:
        missing = np.isnan(X)
    else:
        missing = np.asarray(missing, dtype=bool)
        X[missing] = np.nan
    if X.shape[1] != model.n_features:
        raise ValueError(f"model fitted on {model.n_features} columns, got {X.shape[1]}")
    if model.kind == "simple":
        return np.where(missing, model.statistics, X), 0

    target_rows = np.flatnonzero(missing.any(axis=1))
    pool = model.pool
    pool_obs = ~np.isnan(pool)
    pool_sq = np.where(pool_obs, pool * pool, 0.0)
    pool_obs_f = pool_obs.astype(np.float64)
    fallbacks = 0
    for s in range(0, len(target_rows), chunk):
        rows = target_rows[s:s + chunk]
        approx = _pairwise_sq_estimate(X[rows], pool, pool_obs_f, pool_sq)
        for r, a in zip(rows, approx):
            fallbacks += _knn_fill_row(X[r], np.flatnonzero(missing[r]), model, pool_obs, a)
    return X, fallbacks


def impute(model: ImputerModel, data: MaskedDataset) -> HarDataset:
    """Repair a masked dataset. Observed cells pass through bit-exactly."""
    filled, _ = impute_array(model, data.base.features, data.missing)
    return data.base.with_features(filled)
