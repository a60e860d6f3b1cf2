"""Independent reference implementations used by the unit and acceptance tests."""

import math

import numpy as np

from harmiss.network import backward, cross_entropy, forward


def knn_oracle(pool, X, k):
    """Brute-force KNN fill: plain loops over rows and columns."""
    n_pool, d = pool.shape
    observed = [[pool[i, j] for i in range(n_pool) if not math.isnan(pool[i, j])] for j in range(d)]
    col_mean = [sum(v) / len(v) for v in observed]
    out = X.copy()
    for r in range(len(X)):
        row = X[r]
        dists = []
        for i in range(n_pool):
            shared = [j for j in range(d) if not math.isnan(row[j]) and not math.isnan(pool[i, j])]
            if not shared:
                continue
            sq = sum((row[j] - pool[i, j]) ** 2 for j in shared)
            dists.append((math.sqrt(d / len(shared) * sq), i))
        dists.sort()
        for j in range(d):
            if not math.isnan(row[j]):
                continue
            donors = [pool[i, j] for _, i in dists if not math.isnan(pool[i, j])][:k]
            out[r, j] = sum(donors) / len(donors) if donors else col_mean[j]
    return out


def random_knn_instance(rng, n_pool=8, n_target=8, d=4, p_missing=0.3):
    pool = rng.normal(size=(n_pool, d))
    pool[rng.random(pool.shape) < p_missing] = np.nan
    pool[0] = rng.normal(size=d)  # every column keeps an observed cell
    X = rng.normal(size=(n_target, d))
    X[rng.random(X.shape) < p_missing] = np.nan
    return pool, X


def gradient_check(model, X, y, dropout_seed=0, eps=1e-6):
    """Relative error between analytic and central-difference gradients.

    The dropout mask is held fixed by reseeding before every forward pass.
    Returns ``||g - n|| / (||g|| + ||n||)``.
    """

    def loss():
        probs, _ = forward(model, X, "train", np.random.default_rng(dropout_seed))
        return cross_entropy(probs, y)

    _, cache = forward(model, X, "train", np.random.default_rng(dropout_seed))
    analytic = backward(model, cache, y)["theta"].copy()
    numeric = np.empty_like(analytic)
    theta = model.theta
    for j in range(theta.size):
        old = theta[j]
        theta[j] = old + eps
        up = loss()
        theta[j] = old - eps
        down = loss()
        theta[j] = old
        numeric[j] = (up - down) / (2 * eps)
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(np.linalg.norm(analytic - numeric) / denom) if denom else 0.0
