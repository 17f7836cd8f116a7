"""Minimax convex-concave procedure for the worst-case policy value.

The worst-case value ``F(theta) = max_R sum(R psi(theta)) / sum(R)`` is
written as ``g - h`` with ``h(theta) = sum_i c_i h_i(theta)``, where
``psi_i = g_i - h_i`` is the per-sample split of an affine score.  Each outer
iteration linearises ``h`` at the current iterate and minimises the
resulting surrogate over the parameter box.  Because ``h`` is convex the
surrogate majorises ``F`` up to a constant, so the outer iterates never
increase ``F``.

Per-sample split
----------------
With ``pi = g~ - h~`` and ``psi_i = alpha_i pi + beta_i``::

    alpha_i >= 0:  g_i = alpha_i g~ + beta_i,   h_i = alpha_i h~
    alpha_i <  0:  g_i = |alpha_i| h~ + beta_i, h_i = |alpha_i| g~

This covers the sign-case tables usually written per score type.  For the
direct method ``alpha = mu1 - mu0`` and ``beta = mu0``, and the four
(sign mu0, sign mu1) cases collapse to the sign of ``alpha``.  The constant
``beta_i`` does not enter ``h_i``, which keeps ``h`` as small as possible.
For NIPW, ``alpha_i = +-w_i Y_i``, so the T=1 / T=0 cases are the two signs
of ``alpha``.  For DR, the residual term only shifts ``alpha`` and ``beta``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .nuisance import ScoreVector
from .policy import PolicyParams, PolicySpec, dc_index_pieces
from .worstcase import UncertaintySet

log = logging.getLogger(__name__)

C_RULES = ("rank", "uniform")


class SolverError(RuntimeError):
    """The inner convex solve failed to produce a usable iterate."""


class DescentViolation(RuntimeError):
    """The outer loop increased the worst-case value beyond tolerance."""


def surrogate_c(l: float, u: float, n: int) -> np.ndarray:
    """Concave-part weights obtained by summing the normalised threshold vectors.

    ``c_i = l * sum_{k<=i} 1/D_k + u * sum_{k>i} 1/D_k`` with
    ``D_k = (n-k+1) l + (k-1) u``.  Index ``i = 1`` is the sample that
    receives weight ``u`` in the most threshold vectors, i.e. the largest
    score.  The weights sum to ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(1, n + 1)
    inv = 1.0 / ((n - k + 1) * l + (k - 1) * u)
    head = np.cumsum(inv)
    return l * head + u * (head[-1] - head)


def dc_split(scores: ScoreVector, spec: PolicySpec, i: int, x_i, theta):
    """``(g_i, h_i, grad h_i)`` for sample ``i`` at ``theta``.

    ``x_i`` is the sample's design row.
    """
    x_i = np.asarray(x_i, dtype=float)
    z = float(x_i @ np.asarray(theta, dtype=float))
    gt, ht, dgt, dht = (float(v) for v in dc_index_pieces(spec.kind, z, spec.strong_convexity))
    a, b = float(scores.alpha[i]), float(scores.beta[i])
    if a >= 0.0:
        return a * gt + b, a * ht, a * dht * x_i
    return -a * ht + b, -a * gt, -a * dgt * x_i


@dataclass(frozen=True)
class MmccpConfig:
    delta_tol: float = 1e-4
    max_outer: int = 200
    inner_max_iter: int = 500
    inner_tol: float = 1e-6
    restarts: int = 5
    init_sd: float = math.sqrt(0.1)
    c_rule: str = "uniform"

    def __post_init__(self):
        if self.c_rule not in C_RULES:
            raise ValueError(f"c_rule must be one of {C_RULES}")
        if self.delta_tol <= 0 or self.inner_tol <= 0 or self.init_sd <= 0:
            raise ValueError("tolerances and init_sd must be positive")
        if self.max_outer < 1 or self.inner_max_iter < 1 or self.restarts < 1:
            raise ValueError("iteration budgets and restarts must be >= 1")


@dataclass
class DcObjective:
    """Worst-case objective over a fixed design, score vector and uncertainty set.

    ``c`` holds the constants of :func:`surrogate_c` in rank order; which
    sample each one attaches to is decided per outer iterate by
    :meth:`concave_weights`.
    """

    scores: ScoreVector
    uset: UncertaintySet
    spec: PolicySpec
    covariates: np.ndarray
    c: np.ndarray = field(init=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.covariates, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.spec.dim:
            raise ValueError(f"design must have shape (n, {self.spec.dim})")
        if x.shape[0] != len(self.scores):
            raise ValueError("design and scores disagree on the number of samples")
        self.covariates = x
        self._alpha = np.ascontiguousarray(self.scores.alpha, dtype=float)
        self._beta = np.ascontiguousarray(self.scores.beta, dtype=float)
        self._kind = kernels.KIND_CODES[self.spec.kind]
        self.c = surrogate_c(self.uset.l, self.uset.u, x.shape[0])

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    def psi(self, theta) -> np.ndarray:
        return kernels.scores(self.covariates, np.asarray(theta, float), self._alpha, self._beta, self._kind)

    def terms(self, theta, hweights=None, order_hint=None):
        return kernels.objective_terms(
            self.covariates, np.asarray(theta, dtype=float), self._alpha, self._beta, self._kind,
            self.spec.strong_convexity, self.uset.l, self.uset.u, hweights, order_hint,
        )

    def value(self, theta) -> float:
        return self.terms(theta)[0]

    def concave_weights(self, theta, rule: str = "rank") -> np.ndarray:
        """Per-sample weights ``c_i`` multiplying ``h_i`` at outer iterate ``theta``.

        ``rank``: the rank constants of :func:`surrogate_c`, attached in
        descending order of ``psi(theta)`` (ties by index).  ``uniform``: the
        largest normalised weight any vector in the box can put on one
        sample, ``u / (u + (n-1) l)``, for every sample.
        """
        if rule == "uniform":
            l, u, n = self.uset.l, self.uset.u, self.n
            return np.full(n, u / (u + (n - 1) * l))
        if rule != "rank":
            raise ValueError(f"unknown c rule {rule!r}")
        order = np.argsort(self.psi(theta), kind="stable")
        w = np.empty(self.n)
        w[order[::-1]] = self.c
        return w

    def h_value(self, theta, hweights) -> float:
        return self.terms(theta, hweights)[2]


def objective(dc: DcObjective, theta):
    """Worst-case value at ``theta`` and the subgradient of the maximising weights."""
    value, grad, *_ = dc.terms(theta)
    return value, grad


@dataclass
class Surrogate:
    """Convex-concave surrogate built at outer iterate ``theta_k``."""

    dc: DcObjective
    theta_k: np.ndarray
    hweights: np.ndarray

    def __post_init__(self):
        self._hint = np.arange(self.dc.n, dtype=np.intp)
        _, _, _, self.lin, _ = self.dc.terms(self.theta_k, self.hweights, self._hint)

    def __call__(self, theta):
        value, grad, hsum, hgrad, _ = self.dc.terms(theta, self.hweights, self._hint)
        return value + hsum - theta @ self.lin, grad + hgrad - self.lin

    def value(self, theta) -> float:
        return self(theta)[0]


def _projected_grad_norm(theta, grad, lo, hi) -> float:
    return float(np.linalg.norm(np.clip(theta - grad, lo, hi) - theta, ord=np.inf))


def _box_minimize(fun, theta0, spec: PolicySpec, cfg: MmccpConfig):
    """Box-constrained quasi-Newton solve that never returns worse than ``theta0``."""
    lo, hi = spec.bounds()
    theta0 = spec.project(np.asarray(theta0, dtype=float))
    f0, g0 = fun(theta0)
    if not (np.isfinite(f0) and np.all(np.isfinite(g0))):
        raise SolverError("objective is not finite at the warm start")
    if _projected_grad_norm(theta0, g0, lo, hi) < cfg.inner_tol:
        return theta0, f0
    res = minimize(
        fun, theta0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
        options={"maxiter": cfg.inner_max_iter, "gtol": cfg.inner_tol, "ftol": 1e-15, "maxls": 40},
    )
    theta = spec.project(res.x)
    f = fun(theta)[0]
    if not np.isfinite(f):
        raise SolverError(f"inner solve produced a non-finite objective ({res.message})")
    if f <= f0:
        return theta, f
    # L-BFGS-B can stall at kinks of the max term: fall back to projected
    # subgradient backtracking from the warm start.
    step = 1.0 / max(np.linalg.norm(g0), 1e-12)
    for _ in range(60):
        cand = np.clip(theta0 - step * g0, lo, hi)
        fc = fun(cand)[0]
        if fc <= f0:
            return cand, fc
        step *= 0.5
    log.debug("inner solve found no descent from warm start; keeping it")
    return theta0, f0


def inner_solve(dc: DcObjective, theta_k, cfg: MmccpConfig = MmccpConfig(), hweights=None) -> np.ndarray:
    """Approximately minimise the surrogate at ``theta_k`` over the box.

    The returned point never has a larger surrogate value than ``theta_k``.
    """
    theta_k = dc.spec.project(np.asarray(theta_k, dtype=float))
    if hweights is None:
        hweights = dc.concave_weights(theta_k, cfg.c_rule)
    sur = Surrogate(dc, theta_k, hweights)
    theta, f = _box_minimize(sur, theta_k, dc.spec, cfg)
    if f > sur.value(theta_k):
        raise SolverError("inner solve increased the surrogate")
    return theta


@dataclass
class MmccpResult:
    theta: PolicyParams
    trace: List[float]
    step_norms: List[float]
    outer_iters: int
    converged: bool
    descent_violations: int
    restart: int = 0
    all_final_values: List[float] = field(default_factory=list)
    all_converged: List[bool] = field(default_factory=list)
    all_outer_iters: List[int] = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.trace[-1]

    def write_trace(self, path: Union[str, Path]) -> None:
        """CSV with columns ``iteration, worst_case_value, step_norm``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "worst_case_value", "step_norm"])
            for k, v in enumerate(self.trace):
                step = "" if k == 0 else repr(self.step_norms[k - 1])
                w.writerow([k, repr(v), step])


def initial_points(dim: int, cfg: MmccpConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return cfg.init_sd * rng.standard_normal((cfg.restarts, dim))


def _run_from(dc: DcObjective, theta0, cfg: MmccpConfig, restart: int) -> MmccpResult:
    theta = dc.spec.project(np.asarray(theta0, dtype=float))
    trace = [dc.value(theta)]
    steps: List[float] = []
    converged = False
    tol = 10.0 * cfg.inner_tol
    for _ in range(cfg.max_outer):
        new = inner_solve(dc, theta, cfg)
        value = dc.value(new)
        if value > trace[-1] + tol:
            raise DescentViolation(
                f"worst-case value rose from {trace[-1]!r} to {value!r} at outer iteration {len(trace)}"
            )
        step = float(np.linalg.norm(new - theta))
        theta = new
        trace.append(value)
        steps.append(step)
        if step < cfg.delta_tol:
            converged = True
            break
    return MmccpResult(PolicyParams(dc.spec, theta), trace, steps, len(steps), converged, 0, restart)


def mmccp(dc: DcObjective, cfg: MmccpConfig = MmccpConfig(), seed: int = 0, starts=None) -> MmccpResult:
    """Run the outer loop from ``cfg.restarts`` random starts and keep the best.

    Starting points are ``N(0, init_sd^2 I)`` draws from ``seed`` unless
    ``starts`` is given.  The winner has the lowest final worst-case value
    (ties go to the earliest restart).
    """
    if starts is None:
        starts = initial_points(dc.spec.dim, cfg, seed)
    results = [_run_from(dc, s, cfg, r) for r, s in enumerate(np.atleast_2d(starts))]
    finals = [r.value for r in results]
    best = results[int(np.argmin(finals))]
    best.all_final_values = finals
    best.all_converged = [r.converged for r in results]
    best.all_outer_iters = [r.outer_iters for r in results]
    return best


def direct_minimize(dc: DcObjective, cfg: MmccpConfig = MmccpConfig(), seed: int = 0, starts=None) -> PolicyParams:
    """Minimise the worst-case value directly with the box solver (no DC surrogate).

    At ``gamma = 1`` this is plain minimisation of the mean score.
    """
    if starts is None:
        starts = initial_points(dc.spec.dim, cfg, seed)
    hint = np.arange(dc.n, dtype=np.intp)

    def fun(theta):
        value, grad, *_ = dc.terms(theta, None, hint)
        return value, grad

    best, best_f = None, np.inf
    for s in np.atleast_2d(starts):
        theta, f = _box_minimize(fun, s, dc.spec, cfg)
        if f < best_f:
            best, best_f = theta, f
    return PolicyParams(dc.spec, best)
