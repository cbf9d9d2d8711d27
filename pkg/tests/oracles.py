"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the package's split search, solvers or metrics.
"""

import itertools

import numpy as np

TOL = 1e-12


def gini_pair(neg, pos):
    total = neg + pos
    p = pos / total
    return 1.0 - p * p - (1 - p) * (1 - p)


def enumerate_splits(x, y, mask, alpha, sigma=None):
    """Every (j, tau, score) with score = weighted child Gini + alpha * penalty."""
    n, d = x.shape
    out = []
    for j in range(d):
        miss = sum((1.0 if sigma is None else sigma[i][j]) * mask[i][j] for i in range(n)) / n
        vals = sorted(set(x[:, j].tolist()))
        for a, b in zip(vals, vals[1:]):
            tau = (a + b) / 2
            left = [i for i in range(n) if x[i, j] <= tau]
            right = [i for i in range(n) if x[i, j] > tau]
            crit = 0.0
            for side in (left, right):
                pos = sum(y[i] for i in side)
                crit += len(side) / n * gini_pair(len(side) - pos, pos)
            out.append((j, tau, crit + alpha * miss))
    return out


def brute_best_split(x, y, mask, alpha, sigma=None):
    cands = enumerate_splits(x, y, mask, alpha, sigma)
    if not cands:
        return None
    best = min(c[2] for c in cands)
    return min((c for c in cands if c[2] <= best + TOL), key=lambda c: (c[0], c[1]))


def reference_cart(x, y, max_depth, depth=0):
    """Unregularized greedy Gini CART as nested dicts.

    Same candidate set (midpoints), tie rule (lowest feature, then threshold)
    and stopping rule (pure node, depth cap, fewer than 2 rows, no split
    with nonnegative gain) as the package tree.
    """
    n = len(y)
    pos = int(sum(y))
    leaf = {"value": pos / n}
    if depth >= max_depth or n < 2 or pos in (0, n):
        return leaf
    best = brute_best_split(x, y, np.zeros_like(x, dtype=bool), 0.0)
    if best is None or gini_pair(n - pos, pos) - best[2] < -TOL:
        return leaf
    j, tau, _ = best
    go = x[:, j] <= tau
    return {"feature": j, "threshold": tau,
            "left": reference_cart(x[go], y[go], max_depth, depth + 1),
            "right": reference_cart(x[~go], y[~go], max_depth, depth + 1)}


def tree_as_dict(tree, u=0):
    if tree.is_leaf(u):
        return {"value": float(tree.value[u])}
    return {"feature": int(tree.feature[u]), "threshold": float(tree.threshold[u]),
            "left": tree_as_dict(tree, int(tree.left[u])),
            "right": tree_as_dict(tree, int(tree.right[u]))}


def same_tree(a, b, tol=1e-12):
    if ("feature" in a) != ("feature" in b):
        return False
    if "feature" not in a:
        return abs(a["value"] - b["value"]) <= tol
    return (a["feature"] == b["feature"] and abs(a["threshold"] - b["threshold"]) <= tol
            and same_tree(a["left"], b["left"], tol) and same_tree(a["right"], b["right"], tol))


def pairwise_auroc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for a, b in itertools.product(pos, neg):
        wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def trace_path(nodes, row):
    """Follow a hand-written {id: (feature, tau, left, right) | None} tree."""
    u, path = 0, [0]
    while nodes[u] is not None:
        j, tau, left, right = nodes[u]
        u = left if row[j] <= tau else right
        path.append(u)
    return path


def logistic_loss(theta, b, x, y):
    eta = b + x @ theta
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def weighted_lasso_objective(theta, b, x, y, lam):
    return logistic_loss(theta, b, x, y) + float(np.dot(lam, np.abs(theta)))


def lbfgs_weighted_lasso(x, y, lam):
    """Weighted L1 logistic regression via the smooth split theta = u - v, u, v >= 0."""
    from scipy.optimize import minimize
    from scipy.special import expit

    n, d = x.shape

    def f(z):
        b, u, v = z[0], z[1:d + 1], z[d + 1:]
        eta = b + x @ (u - v)
        r = (expit(eta) - y) / n
        g = x.T @ r
        val = np.mean(np.logaddexp(0.0, eta) - y * eta) + lam @ (u + v)
        return val, np.concatenate([[r.sum()], g + lam, -g + lam])

    bounds = [(None, None)] + [(0, None)] * (2 * d)
    res = minimize(f, np.zeros(2 * d + 1), jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000, "maxcor": 30})
    return res.x[1:d + 1] - res.x[d + 1:], res.x[0]


def kkt_residual(theta, b, x, y, lam):
    """Largest violation of the weighted-lasso optimality conditions."""
    from scipy.special import expit

    r = (expit(b + x @ theta) - y) / x.shape[0]
    g = x.T @ r
    nz = theta != 0
    viol = [abs(r.sum())]
    viol += list(np.abs(g[nz] + lam[nz] * np.sign(theta[nz])))
    viol += list(np.maximum(np.abs(g[~nz]) - lam[~nz], 0.0))
    return max(viol)
