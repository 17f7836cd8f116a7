"""Parameterised policy classes and their difference-of-convex pieces.

Both classes act on the linear index ``z = theta @ x``:

* logistic: ``pi = sigmoid(z)``
* linear:   ``pi = clip(z, 0, 1)``

Each probability map is written as ``g(z) - h(z)`` with ``g`` and ``h``
convex in ``z`` (hence in ``theta``).  Adding ``lam/2 * z**2`` to both makes
them strongly convex in ``z`` without changing the difference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Tuple

import numpy as np

KINDS = ("logistic", "linear")


@dataclass(frozen=True)
class PolicySpec:
    """Policy class and its parameter box ``[-box_bound, box_bound]^dim``.

    ``linear_eps`` is only meaningful for the linear class: it describes the
    restricted parameter set where every index lies in ``[eps, 1 - eps]``.
    It is exposed through :meth:`linear_feasible` and not enforced by the
    optimiser, which uses right-derivative subgradients at the kinks.
    """

    kind: str = "logistic"
    dim: int = 1
    box_bound: float = 10_000.0
    strong_convexity: float = 1e-3
    linear_eps: float = 1e-3
    intercept: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {KINDS}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.box_bound <= 0:
            raise ValueError("box_bound must be positive")
        if self.strong_convexity < 0:
            raise ValueError("strong_convexity must be nonnegative")
        if self.linear_eps <= 0:
            raise ValueError("linear_eps must be positive")

    def design(self, covariates: np.ndarray) -> np.ndarray:
        """Matrix whose rows ``x`` enter the index ``theta @ x``."""
        x = np.atleast_2d(np.asarray(covariates, dtype=float))
        if self.intercept:
            x = np.column_stack([np.ones(x.shape[0]), x])
        if x.shape[1] != self.dim:
            raise ValueError(f"design has {x.shape[1]} columns but policy dim is {self.dim}")
        return x

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        b = np.full(self.dim, self.box_bound)
        return -b, b

    def project(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, -self.box_bound, self.box_bound)

    def linear_feasible(self, theta: np.ndarray, design: np.ndarray) -> bool:
        """Whether every index ``theta @ x_i`` lies in ``[eps, 1 - eps]``."""
        z = design @ theta
        return bool(np.all((z >= self.linear_eps) & (z <= 1.0 - self.linear_eps)))


def for_covariates(d: int, kind: str = "logistic", intercept: bool = True, **kw) -> PolicySpec:
    """Spec sized for ``d`` raw covariates (plus one if ``intercept``)."""
    return PolicySpec(kind=kind, dim=d + int(intercept), intercept=intercept, **kw)


def _check(spec: PolicySpec, theta, x) -> Tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta.shape != (spec.dim,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({spec.dim},)")
    if x.shape[-1] != spec.dim:
        raise ValueError(f"x has trailing dimension {x.shape[-1]}, expected {spec.dim}")
    return theta, x


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    # tanh form is stable for large |z|
    return 0.5 * np.tanh(0.5 * z) + 0.5


def prob_of_index(kind: str, z):
    if kind == "logistic":
        return sigmoid(z)
    return np.clip(z, 0.0, 1.0)


def policy_prob(spec: PolicySpec, theta, x):
    """Treatment probability for one design row or a matrix of rows."""
    theta, x = _check(spec, theta, x)
    out = prob_of_index(spec.kind, x @ theta)
    return float(out) if out.ndim == 0 else out


def dc_index_pieces(kind: str, z, lam: float = 0.0):
    """Convex pieces of the probability map as functions of the index.

    Returns ``(g, h, dg, dh)`` evaluated elementwise at ``z``, with
    ``g - h == prob_of_index(kind, z)``.  Derivatives at the kinks of the
    linear class are right derivatives.
    """
    z = np.asarray(z, dtype=float)
    quad = 0.5 * lam * z * z
    if kind == "logistic":
        th = np.tanh(0.5 * z)
        dth = 0.25 * (1.0 - th * th)  # d/dz of tanh(z/2)/2
        pos = z >= 0.0
        g = np.where(pos, 0.25 * z + 0.5, 0.5 * th + 0.5)
        h = np.where(pos, 0.25 * z - 0.5 * th, 0.0)
        dg = np.where(pos, 0.25, dth)
        dh = np.where(pos, 0.25 - dth, 0.0)
    elif kind == "linear":
        zp = np.maximum(z, 0.0)
        g = zp
        h = np.maximum(zp - 1.0, 0.0)
        dg = (z >= 0.0).astype(float)
        dh = (z >= 1.0).astype(float)
    else:
        raise ValueError(f"unknown policy kind {kind!r}")
    return g + quad, h + quad, dg + lam * z, dh + lam * z


def dc_pieces(spec: PolicySpec, theta, x):
    """``(g, h, grad_g, grad_h)`` of the probability at one design row ``x``.

    Gradients are with respect to ``theta`` (chain rule through ``z``).
    """
    theta, x = _check(spec, theta, x)
    if x.ndim != 1:
        raise ValueError("dc_pieces takes a single design row")
    g, h, dg, dh = dc_index_pieces(spec.kind, x @ theta, spec.strong_convexity)
    return float(g), float(h), float(dg) * x, float(dh) * x


@dataclass(frozen=True)
class PolicyParams:
    """A fitted parameter vector together with its class."""

    spec: PolicySpec
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.spec.dim,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({self.spec.dim},)")
        if np.any(np.abs(theta) > self.spec.box_bound):
            raise ValueError("theta lies outside the parameter box")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def __call__(self, covariates: np.ndarray) -> np.ndarray:
        """Treatment probabilities for raw covariate rows."""
        return prob_of_index(self.spec.kind, self.spec.design(covariates) @ self.theta)

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.spec.kind,
            "lambda": self.spec.strong_convexity,
            "intercept": self.spec.intercept,
            "box_bound": self.spec.box_bound,
            "theta": [float(v) for v in self.theta],
        })

    @classmethod
    def from_json(cls, text: str) -> "PolicyParams":
        obj = json.loads(text)
        theta = obj["theta"]
        spec = PolicySpec(
            kind=obj["kind"],
            dim=len(theta),
            strong_convexity=obj.get("lambda", 1e-3),
            intercept=obj.get("intercept", False),
            box_bound=obj.get("box_bound", 10_000.0),
        )
        return cls(spec, np.asarray(theta, dtype=float))
