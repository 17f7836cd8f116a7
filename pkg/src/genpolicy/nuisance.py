"""Outcome models, behavior policy and per-sample policy-value scores.

Every score used here is affine in the policy's treatment probability, so a
score vector is stored as coefficients ``(alpha, beta)`` with
``psi_i(theta) = alpha_i * pi(X_i, theta) + beta_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dataset import TrialDataset

METHODS = ("DM", "NIPW", "DR")


class FitError(RuntimeError):
    """A nuisance model could not be fitted."""


# --------------------------------------------------------------------------
# Regressors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RidgeRegression:
    """Linear model with an unpenalised intercept."""

    intercept: float
    coef: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray, alpha: float = 1e-3) -> "RidgeRegression":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        xm, ym = x.mean(axis=0), y.mean()
        xc = x - xm
        gram = xc.T @ xc + alpha * np.eye(x.shape[1])
        coef = np.linalg.solve(gram, xc.T @ (y - ym))
        return cls(float(ym - xm @ coef), coef)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=float) @ self.coef


@dataclass(frozen=True)
class LogisticRegression:
    """L2-penalised logistic regression solved by Newton's method.

    The intercept is not penalised.
    """

    intercept: float
    coef: np.ndarray
    n_iter: int

    @classmethod
    def fit(cls, x, y, alpha: float = 1e-3, tol: float = 1e-10, max_iter: int = 100) -> "LogisticRegression":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n, d = x.shape
        z = np.column_stack([np.ones(n), x])
        pen = np.full(d + 1, alpha)
        pen[0] = 0.0
        w = np.zeros(d + 1)
        for it in range(1, max_iter + 1):
            eta = z @ w
            p = 0.5 * np.tanh(0.5 * eta) + 0.5
            grad = z.T @ (p - y) / n + pen * w
            hess = (z * (p * (1 - p))[:, None]).T @ z / n + np.diag(pen)
            # tiny ridge on the diagonal keeps separable data solvable
            step = np.linalg.solve(hess + 1e-12 * np.eye(d + 1), grad)
            w = w - step
            if not np.all(np.isfinite(w)):
                raise FitError("logistic regression diverged")
            if np.max(np.abs(step)) < tol:
                return cls(float(w[0]), w[1:].copy(), it)
        raise FitError(
            f"logistic regression did not converge in {max_iter} Newton steps "
            f"(last step {np.max(np.abs(step)):.3g}, gradient norm {np.linalg.norm(grad):.3g})"
        )

    def predict_proba(self, x) -> np.ndarray:
        eta = self.intercept + np.asarray(x, dtype=float) @ self.coef
        return 0.5 * np.tanh(0.5 * eta) + 0.5


# --------------------------------------------------------------------------
# Nuisance bundle
# --------------------------------------------------------------------------

def ipw_weights(treatments: np.ndarray, behavior_probs: np.ndarray) -> np.ndarray:
    """``1/pi_b`` for treated rows and ``1/(1 - pi_b)`` for control rows."""
    t = np.asarray(treatments)
    pb = np.asarray(behavior_probs, dtype=float)
    return np.where(t == 1, 1.0 / pb, 1.0 / (1.0 - pb))


@dataclass(frozen=True)
class NuisanceModels:
    mu0: Callable[[np.ndarray], np.ndarray]
    mu1: Callable[[np.ndarray], np.ndarray]
    behavior_probs: np.ndarray
    ipw: np.ndarray
    behavior_model: Optional[LogisticRegression] = None


def fit_nuisance(
    data: TrialDataset,
    ridge: float = 1e-3,
    behavior: str = "auto",
    clip_eta: float = 0.01,
    logistic_penalty: float = 1e-3,
) -> NuisanceModels:
    """Fit outcome regressions per arm and the behavior policy.

    Parameters
    ----------
    behavior : {"auto", "known", "fit"}
        ``known`` uses ``data.behavior_probs`` (error if absent), ``fit``
        always fits a logistic model of ``T`` on ``X``, ``auto`` prefers the
        known probabilities when present.
    clip_eta : float
        Behavior probabilities are clipped to ``[clip_eta, 1 - clip_eta]``.
    """
    t = data.treatments
    if t.min() == t.max():
        raise FitError("both treatment arms are required to fit outcome models")
    if not 0.0 <= clip_eta < 0.5:
        raise ValueError("clip_eta must be in [0, 0.5)")
    x, y = data.covariates, data.outcomes
    m0 = RidgeRegression.fit(x[t == 0], y[t == 0], ridge)
    m1 = RidgeRegression.fit(x[t == 1], y[t == 1], ridge)

    model = None
    if behavior == "known" or (behavior == "auto" and data.behavior_probs is not None):
        if data.behavior_probs is None:
            raise FitError("behavior mode 'known' requires behavior probabilities in the data")
        pb = np.asarray(data.behavior_probs, dtype=float)
    elif behavior in ("fit", "auto"):
        model = LogisticRegression.fit(x, t, alpha=logistic_penalty)
        pb = model.predict_proba(x)
    else:
        raise ValueError(f"unknown behavior mode {behavior!r}")
    pb = np.clip(pb, clip_eta, 1.0 - clip_eta)
    return NuisanceModels(m0.predict, m1.predict, pb, ipw_weights(t, pb), model)


# --------------------------------------------------------------------------
# Scores
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreVector:
    method: str
    alpha: np.ndarray
    beta: np.ndarray

    def __call__(self, probs: np.ndarray) -> np.ndarray:
        """Scores at the given per-sample treatment probabilities."""
        return self.alpha * probs + self.beta

    def __len__(self) -> int:
        return self.alpha.shape[0]


def build_scores(method: str, data: TrialDataset, models: NuisanceModels) -> ScoreVector:
    """Affine coefficients of the DM, NIPW or DR score of each sample."""
    if method not in METHODS:
        raise ValueError(f"unknown score method {method!r}; expected one of {METHODS}")
    x, t, y = data.covariates, data.treatments, data.outcomes
    w = models.ipw
    if method == "NIPW":
        wt = 2.0 * w / w.mean()
        alpha = np.where(t == 1, wt * y, -wt * y)
        beta = np.where(t == 1, 0.0, wt * y)
        return ScoreVector(method, alpha, beta)

    mu0, mu1 = models.mu0(x), models.mu1(x)
    alpha = mu1 - mu0
    beta = mu0.copy()
    if method == "DR":
        nu = (1 - 2 * t) * (y - np.where(t == 1, mu1, mu0))
        alpha = alpha - w * nu
        beta = beta + w * (1 - t) * nu
    return ScoreVector(method, alpha, beta)
