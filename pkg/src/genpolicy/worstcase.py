"""Odds-ratio uncertainty set, Hajek estimator and the closed-form worst case."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class UncertaintySet:
    """Box ``[l, u]`` for the per-sample density ratio, induced by ``gamma``.

    ``gamma`` bounds the odds ratio between the population selection
    probability ``p_sel`` and every per-sample selection probability.
    """

    gamma: float
    p_sel: float
    l: float
    u: float


def bounds(gamma: float, p_sel: float) -> UncertaintySet:
    """Density-ratio bounds for odds-ratio bound ``gamma`` and selection rate ``p_sel``.

    Examples
    --------
    >>> s = bounds(2.0, 0.5)
    >>> (s.l, s.u)
    (0.75, 1.5)
    """
    gamma = float(gamma)
    p_sel = float(p_sel)
    if not gamma >= 1.0:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    if not 0.0 < p_sel < 1.0:
        raise ValueError(f"p_sel must lie in (0, 1), got {p_sel}")
    if gamma == 1.0:
        return UncertaintySet(gamma, p_sel, 1.0, 1.0)
    l = (1.0 - p_sel + gamma * p_sel) / gamma
    u = gamma * (1.0 - p_sel) + p_sel
    return UncertaintySet(gamma, p_sel, l, u)


def selection_odds_ratio(rn: np.ndarray, p_sel: float) -> np.ndarray:
    """Odds ratio implied by density ratio ``rn`` (inverse of the bound map).

    With ``P(S=1|x) = p_sel / rn`` the odds ratio
    ``p_sel (1 - P(S=1|x)) / (P(S=1|x) (1 - p_sel))`` equals
    ``(rn - p_sel) / (1 - p_sel)``.
    """
    rn = np.asarray(rn, dtype=float)
    return (rn - p_sel) / (1.0 - p_sel)


def hajek_value(psi, rn) -> float:
    """Self-normalised weighted mean ``sum(rn * psi) / sum(rn)``."""
    psi = np.asarray(psi, dtype=float)
    rn = np.asarray(rn, dtype=float)
    if psi.shape != rn.shape or psi.ndim != 1:
        raise ValueError("psi and rn must be 1-D arrays of equal length")
    total = rn.sum()
    if not total > 0:
        raise ValueError("weights must have a positive sum")
    return float(rn @ psi / total)


@dataclass(frozen=True)
class WorstCaseSolution:
    value: float
    k_star: int
    rn_at_opt: np.ndarray
    sort_permutation: np.ndarray


def worst_case_value(psi, uset: UncertaintySet) -> WorstCaseSolution:
    """Maximum Hajek value over all weight vectors in ``[l, u]^n``.

    The maximiser puts weight ``l`` on the ``k_star`` smallest scores and
    ``u`` on the rest; ``k_star`` is the first threshold whose value does not
    exceed the next sorted score.  Ties in ``psi`` are ordered by index.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.ndim != 1 or psi.shape[0] < 1:
        raise ValueError("psi must be a non-empty 1-D array")
    if uset.l > uset.u:
        raise ValueError("uncertainty set has l > u")
    value, k_star, order = kernels.worst_case(psi, uset.l, uset.u)
    rn = kernels.weights_from_threshold(order, k_star, uset.l, uset.u)
    return WorstCaseSolution(value, k_star, rn, order)
