"""L1-regularized logistic regression with missingness-dependent penalties.

Features that are often missing get a larger L1 weight, so they are the
first to be dropped. The weighted problem is solved either directly or by
rescaling each column and running a uniform-penalty Lasso.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ContractError, FormatError

SCHEMES = ("additive", "scaled")
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class LassoFitParams:
    lam: float = 0.01
    alpha: float = 0.0
    beta: float = 0.0
    scheme: str = "additive"
    max_iterations: int = 200
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ContractError(f"unknown penalty scheme {self.scheme!r}")
        if self.scheme == "additive" and not self.lam > 0:
            raise ContractError("lam must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ContractError("alpha and beta must be nonnegative")
        if not self.tolerance > 0:
            raise ContractError("tolerance must be positive")


@dataclass(eq=False)
class LinearModel:
    theta: np.ndarray
    intercept: float
    penalty_weights: np.ndarray
    scheme: str = "additive"
    feature_names: tuple = ()
    converged: bool = True
    n_iter: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def support(self) -> np.ndarray:
        return np.abs(self.theta) > ZERO_TOL

    def decision_function(self, x) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=float) @ self.theta

    def predict(self, x) -> np.ndarray:
        """Positive-class probability."""
        return expit(self.decision_function(x))

    def to_dict(self) -> dict:
        return {
            "type": "linear",
            "theta": [float(t) for t in self.theta],
            "intercept": float(self.intercept),
            "penalty_weights": [float(v) for v in self.penalty_weights],
            "scheme": self.scheme,
            "feature_names": list(self.feature_names),
            "converged": bool(self.converged),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        try:
            return cls(np.array(d["theta"], dtype=float), float(d["intercept"]),
                       np.array(d["penalty_weights"], dtype=float), d.get("scheme", "additive"),
                       tuple(d.get("feature_names", ())), bool(d.get("converged", True)))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed linear model: {exc}") from exc


def penalty_weights(mask, params: LassoFitParams) -> np.ndarray:
    mask = np.asarray(mask, dtype=float)
    n = mask.shape[0]
    if params.scheme == "additive":
        return params.lam + params.alpha * mask.mean(axis=0)
    return (mask.sum(axis=0) + params.beta) / n * params.alpha


def rescale(x, lambda_j, lambda_prime: float) -> np.ndarray:
    """Column j multiplied by lambda_prime / lambda_j."""
    lambda_j = np.asarray(lambda_j, dtype=float)
    if np.any(lambda_j <= 0):
        raise ContractError("rescaling needs every lambda_j > 0; use the direct solver")
    return np.asarray(x, dtype=float) * (lambda_prime / lambda_j)[None, :]


def logistic_objective(theta, intercept, x, y):
    """Mean logistic loss and its gradient (d theta, d intercept)."""
    eta = intercept + x @ theta
    loss = np.mean(np.logaddexp(0.0, eta) - y * eta)
    r = (expit(eta) - y) / x.shape[0]
    return float(loss), x.T @ r, float(r.sum())


def _objective(theta, b, x, y, lam):
    return logistic_objective(theta, b, x, y)[0] + float(np.dot(lam, np.abs(theta)))


def _soft(u, t):
    return np.sign(u) * max(abs(u) - t, 0.0)


def _weighted_l1_qp(g, H, start, lam, tol, max_cycles=10_000):
    """Coordinate descent for min g'(z-s) + 1/2 (z-s)'H(z-s) + sum lam_k |z_k|.

    Index 0 is the unpenalized intercept.
    """
    z = start.copy()
    Hd = np.zeros_like(z)
    diag = np.diag(H)
    for _ in range(max_cycles):
        biggest = 0.0
        for k in range(z.size):
            a = diag[k]
            if a <= 0:
                continue
            delta_k = z[k] - start[k]
            grad = g[k] + Hd[k] - a * delta_k
            u = start[k] - grad / a
            znew = u if lam[k] == 0 else _soft(u, lam[k] / a)
            step = znew - z[k]
            if step != 0.0:
                Hd += H[:, k] * step
                z[k] = znew
                biggest = max(biggest, abs(step))
        if biggest < tol:
            break
    return z


def fit_lasso(x, y, lambda_j, params: LassoFitParams | None = None,
              feature_names=(), scheme: str | None = None) -> LinearModel:
    """Minimize mean logistic loss + sum_j lambda_j |theta_j| (intercept free).

    Proximal Newton: each outer step builds the quadratic model of the loss at
    the current point, minimizes it plus the L1 term by cyclic coordinate
    descent with soft-thresholding, then backtracks until the full objective
    decreases. ``model.history`` holds the objective after every step.
    """
    params = params or LassoFitParams()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = x.shape
    if np.isnan(x).any():
        raise ContractError("x must be imputed (no NaN)")
    if y.shape != (n,) or not np.isin(y, (0, 1)).all():
        raise ContractError("y must be a binary 0/1 vector matching x")
    lam = np.asarray(lambda_j, dtype=float)
    if lam.shape != (d,) or np.any(lam < 0):
        raise ContractError("lambda_j must be a nonnegative vector of length d")

    z = np.column_stack([np.ones(n), x])
    lam_full = np.concatenate([[0.0], lam])
    base = np.clip(y.mean(), 1e-12, 1 - 1e-12)
    coef = np.zeros(d + 1)
    coef[0] = np.log(base / (1 - base))
    obj = _objective(coef[1:], coef[0], x, y, lam)
    history = [obj]
    converged = False
    it = 0
    for it in range(1, params.max_iterations + 1):
        eta = z @ coef
        p = expit(eta)
        g = z.T @ (p - y) / n
        w = np.maximum(p * (1 - p), 1e-10)
        H = (z * w[:, None]).T @ z / n
        target = _weighted_l1_qp(g, H, coef, lam_full, tol=params.tolerance * 1e-2)
        step = target - coef
        # sufficient-decrease line search on the composite objective
        pen_now = float(np.dot(lam, np.abs(coef[1:])))
        decrease = g @ step + float(np.dot(lam, np.abs(target[1:]))) - pen_now
        t = 1.0
        while True:
            cand = coef + t * step
            new_obj = _objective(cand[1:], cand[0], x, y, lam)
            if new_obj <= obj + 1e-4 * t * min(decrease, 0.0) or t < 1e-10:
                break
            t *= 0.5
        if new_obj > obj:
            cand, new_obj = coef, obj
        change = np.max(np.abs(cand - coef)) if d + 1 else 0.0
        coef, obj = cand, new_obj
        history.append(obj)
        if change < params.tolerance:
            converged = True
            break
    theta = coef[1:].copy()
    theta[np.abs(theta) <= ZERO_TOL] = 0.0
    return LinearModel(theta, float(coef[0]), lam.copy(), scheme or params.scheme,
                       tuple(feature_names), converged, it, history)


def fit_ma_lasso(x, mask, y, params: LassoFitParams | None = None, feature_names=(),
                 use_rescaling: bool = True) -> LinearModel:
    """Fit with per-feature penalties derived from the training mask.

    Goes through the rescaled uniform-penalty problem (with the mean of the
    penalty weights as the common penalty) when every weight is positive, and
    through the direct weighted solver otherwise.
    """
    params = params or LassoFitParams()
    lam = penalty_weights(mask, params)
    if use_rescaling and np.all(lam > 0):
        lam_prime = float(lam.mean())
        xt = rescale(x, lam, lam_prime)
        m = fit_lasso(xt, y, np.full(lam.size, lam_prime), params, feature_names, params.scheme)
        theta = m.theta * (lam_prime / lam)
        theta[np.abs(theta) <= ZERO_TOL] = 0.0
        return LinearModel(theta, m.intercept, lam, params.scheme, tuple(feature_names),
                           m.converged, m.n_iter, m.history)
    if use_rescaling:
        warnings.warn("some penalty weights are zero; solving the weighted problem directly",
                      RuntimeWarning, stacklevel=2)
    return fit_lasso(x, y, lam, params, feature_names, params.scheme)
