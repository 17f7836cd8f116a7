"""Data-driven choice of ``gamma`` and ``P(S=1)`` from one shared covariate.

A 1-D logistic discriminator separates training draws from target draws.
Its odds, corrected for the sample-size ratio, estimate the density ratio
``p(x | S=1) / p(x)``, which is mapped to a per-sample selection
probability ``r / (1 + r)``.  The population selection rate is their
training-sample mean and ``gamma`` is the largest two-sided odds ratio
between the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nuisance import LogisticRegression


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationResult:
    p_sel: float
    gamma: float
    per_sample_sel_probs: np.ndarray


def _odds(p):
    return p / (1.0 - p)


def calibrate(
    train_col,
    target_col,
    clip_eta: float = 0.01,
    min_samples: int = 30,
    penalty: float = 1e-4,
) -> CalibrationResult:
    """Estimate ``(p_sel, gamma)`` from one covariate seen in both samples.

    Parameters
    ----------
    train_col, target_col : array_like
        The covariate in the training data and in an independent target
        sample (treated as disjoint draws).
    clip_eta : float
        Selection probabilities are clipped to ``[clip_eta, 1 - clip_eta]``.
    """
    a = np.asarray(train_col, dtype=float).ravel()
    b = np.asarray(target_col, dtype=float).ravel()
    n, m = a.size, b.size
    if n < min_samples or m < min_samples:
        raise CalibrationError(f"need at least {min_samples} samples in each column, got {n} and {m}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise CalibrationError("calibration columns contain non-finite values")
    pooled = np.concatenate([a, b])
    sd = pooled.std()
    if not sd > 0:
        raise CalibrationError("calibration covariate has zero variance")
    z = ((pooled - pooled.mean()) / sd)[:, None]
    label = np.concatenate([np.ones(n), np.zeros(m)])
    clf = LogisticRegression.fit(z, label, alpha=penalty)
    q = clf.predict_proba(z[:n])
    # prior correction removes the n:m sampling ratio
    wq = q * (m / (n + m))
    sel = wq / (wq + (1.0 - q) * (n / (n + m)))
    sel = np.clip(sel, clip_eta, 1.0 - clip_eta)
    p_sel = float(np.clip(sel.mean(), clip_eta, 1.0 - clip_eta))
    ratio = _odds(p_sel) / _odds(sel)
    gamma = float(max(1.0, np.max(np.maximum(ratio, 1.0 / ratio))))
    return CalibrationResult(p_sel, gamma, sel)
