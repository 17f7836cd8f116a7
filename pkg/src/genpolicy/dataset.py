"""Trial data containers, CSV ingestion and the synthetic selection-bias DGP.

The synthetic process draws a target population, then builds a biased
training set by rejection on a latent selection indicator whose probability
depends on the (unobserved) treatment effect.  Oracle quantities that only
exist in simulation (baseline ``m(x)``, effect ``C(x)``, selection
probability and the true Radon-Nikodym derivative) are kept alongside.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np


class SchemaError(ValueError):
    """A required column is missing from a CSV header."""


class ValidationError(ValueError):
    """A value violates a dataset invariant."""


class GenerationError(RuntimeError):
    """The simulator could not produce the requested training size."""


@dataclass(frozen=True)
class TrialDataset:
    """Covariates, binary treatments and outcomes (lower is better).

    Parameters
    ----------
    covariates : ndarray, shape (n, d)
    treatments : ndarray of int, shape (n,)
    outcomes : ndarray, shape (n,)
    behavior_probs : ndarray, shape (n,), optional
        Known treatment-assignment probabilities ``P(T=1 | X_i)``.
    covariate_names : tuple of str, optional
    """

    covariates: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    behavior_probs: Optional[np.ndarray] = None
    covariate_names: tuple = ()

    def __post_init__(self):
        x = np.array(self.covariates, dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValidationError(f"covariates must be a non-empty 2-D matrix, got shape {x.shape}")
        n, d = x.shape
        t = np.asarray(self.treatments)
        y = np.array(self.outcomes, dtype=float, copy=True)
        if t.shape != (n,) or y.shape != (n,):
            raise ValidationError("treatments and outcomes must have one entry per row")
        if not np.all((t == 0) | (t == 1)):
            bad = int(np.flatnonzero((t != 0) & (t != 1))[0])
            raise ValidationError(f"row {bad}: treatment must be 0 or 1, got {t[bad]!r}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("covariates contain non-finite values")
        if not np.all(np.isfinite(y)):
            raise ValidationError("outcomes contain non-finite values")
        pb = self.behavior_probs
        if pb is not None:
            pb = np.array(pb, dtype=float, copy=True)
            if pb.shape != (n,):
                raise ValidationError("behavior_probs must have one entry per row")
            if not np.all((pb > 0.0) & (pb < 1.0)):
                raise ValidationError("behavior_probs must lie strictly inside (0, 1)")
            pb.setflags(write=False)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(d))
        if len(names) != d:
            raise ValidationError("covariate_names length does not match covariate dimension")
        t = t.astype(np.int64)
        for arr in (x, t, y):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "treatments", t)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "behavior_probs", pb)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.covariates[:, self.covariate_names.index(name)]
        except ValueError:
            raise SchemaError(f"no covariate column named {name!r}") from None


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    """Column names used when reading a trial CSV.

    ``covariates=None`` means every column that is not the treatment,
    outcome, behavior-probability or a known oracle column.
    """

    treatment: str = "t"
    outcome: str = "y"
    behavior_prob: Optional[str] = "pb"
    covariates: Optional[Sequence[str]] = None


ORACLE_COLUMNS = ("xi", "c", "m", "sel_prob", "rn")


def _parse_float(raw: str, row: int, col: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ValidationError(f"row {row}, column {col!r}: cannot parse {raw!r} as a number") from None
    if not math.isfinite(value):
        raise ValidationError(f"row {row}, column {col!r}: non-finite value {raw!r}")
    return value


def load_csv(path: Union[str, Path], schema: CsvSchema = CsvSchema()) -> TrialDataset:
    """Read and validate a trial CSV.

    Rows are numbered from 1 (first data row after the header) in error
    messages.  Row order is preserved.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise SchemaError(f"{path}: missing header row")
        for required in (schema.treatment, schema.outcome):
            if required not in header:
                raise SchemaError(f"{path}: missing column {required!r}")
        if schema.covariates is not None:
            cov_cols = list(schema.covariates)
            missing = [c for c in cov_cols if c not in header]
            if missing:
                raise SchemaError(f"{path}: missing covariate columns {missing}")
        else:
            skip = {schema.treatment, schema.outcome, schema.behavior_prob, *ORACLE_COLUMNS}
            cov_cols = [c for c in header if c not in skip]
        if not cov_cols:
            raise SchemaError(f"{path}: no covariate columns")
        pb_col = schema.behavior_prob if schema.behavior_prob in header else None

        xs, ts, ys, pbs = [], [], [], []
        for row_no, rec in enumerate(reader, start=1):
            xs.append([_parse_float(rec[c], row_no, c) for c in cov_cols])
            t = _parse_float(rec[schema.treatment], row_no, schema.treatment)
            if t not in (0.0, 1.0):
                raise ValidationError(
                    f"row {row_no}, column {schema.treatment!r}: treatment must be 0 or 1, got {rec[schema.treatment]!r}"
                )
            ts.append(int(t))
            ys.append(_parse_float(rec[schema.outcome], row_no, schema.outcome))
            if pb_col is not None:
                p = _parse_float(rec[pb_col], row_no, pb_col)
                if not 0.0 < p < 1.0:
                    raise ValidationError(f"row {row_no}, column {pb_col!r}: behavior probability {p} outside (0, 1)")
                pbs.append(p)
    if not xs:
        raise ValidationError(f"{path}: no data rows")
    return TrialDataset(
        covariates=np.array(xs),
        treatments=np.array(ts),
        outcomes=np.array(ys),
        behavior_probs=np.array(pbs) if pb_col is not None else None,
        covariate_names=tuple(cov_cols),
    )


def write_csv(path: Union[str, Path], data: TrialDataset, oracle: Optional[Mapping[str, np.ndarray]] = None) -> None:
    """Write a dataset (and optional oracle columns) in the CSV layout read by :func:`load_csv`."""
    oracle = dict(oracle or {})
    cols = list(data.covariate_names) + ["t", "y"]
    if data.behavior_probs is not None:
        cols.append("pb")
    cols += list(oracle)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.covariates[i]]
            row += [str(int(data.treatments[i])), repr(float(data.outcomes[i]))]
            if data.behavior_probs is not None:
                row.append(repr(float(data.behavior_probs[i])))
            row += [repr(float(oracle[k][i])) for k in oracle]
            w.writerow(row)


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    n_train: int = 2000
    n_target: int = 100_000
    seed: int = 0
    covariate_mean: tuple = (-1.0, 0.5, -1.0, 0.0, -1.0)
    beta0: tuple = (0.0, 0.75, -0.5, 0.0, -1.0)
    beta1: tuple = (-1.5, 1.0, -1.5, 1.0, 0.5)
    noise_sd: float = 1.0
    max_draws: int = 50_000_000

    def __post_init__(self):
        if self.n_train < 1 or self.n_target < 1:
            raise ValueError("n_train and n_target must be positive")
        if not len(self.covariate_mean) == len(self.beta0) == len(self.beta1):
            raise ValueError("covariate_mean, beta0 and beta1 must share one dimension")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")


@dataclass(frozen=True)
class SimulatedSample:
    x: np.ndarray
    t: int
    y: float
    xi: int
    c_of_x: float
    m_of_x: float
    selection_prob: float
    true_rn: float


def baseline_outcome(x: np.ndarray, xi: np.ndarray, beta0) -> np.ndarray:
    return x @ np.asarray(beta0, dtype=float) + 3.0 * xi


def treatment_effect(x: np.ndarray, xi: np.ndarray, beta1) -> np.ndarray:
    return 2.5 + x @ np.asarray(beta1, dtype=float) - 4.0 * xi


def selection_probability(effect: np.ndarray) -> np.ndarray:
    return 0.5 + 0.475 * np.tanh(-10.0 * np.asarray(effect, dtype=float))


@dataclass(frozen=True)
class SampleTable:
    """Struct-of-arrays view of simulated samples with their oracle fields.

    Indexing yields :class:`SimulatedSample`; iteration is supported, but the
    array attributes are what the vectorised oracles use.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    xi: np.ndarray
    c: np.ndarray
    m: np.ndarray
    sel_prob: np.ndarray
    rn: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> SimulatedSample:
        return SimulatedSample(
            x=self.x[i], t=int(self.t[i]), y=float(self.y[i]), xi=int(self.xi[i]),
            c_of_x=float(self.c[i]), m_of_x=float(self.m[i]),
            selection_prob=float(self.sel_prob[i]), true_rn=float(self.rn[i]),
        )

    def __iter__(self) -> Iterator[SimulatedSample]:
        return (self[i] for i in range(len(self)))

    def oracle_columns(self) -> dict:
        return {"xi": self.xi, "c": self.c, "m": self.m, "sel_prob": self.sel_prob, "rn": self.rn}

    def to_dataset(self, behavior_prob: Optional[float] = 0.5) -> TrialDataset:
        pb = None if behavior_prob is None else np.full(len(self), behavior_prob)
        return TrialDataset(self.x, self.t, self.y, pb)


@dataclass(frozen=True)
class Simulation:
    """Output of :func:`simulate`.

    ``train`` is the biased training set (with known behavior probabilities
    ``1/2``), ``train_oracle`` its per-sample oracle fields and ``target`` an
    independent draw from the target population.
    """

    train: TrialDataset
    train_oracle: SampleTable
    target: SampleTable
    acceptance_rate: float
    config: SimulationConfig = field(repr=False)


def _draw_population(rng: np.random.Generator, cfg: SimulationConfig, size: int):
    mu = np.asarray(cfg.covariate_mean, dtype=float)
    x = mu + rng.standard_normal((size, mu.size))
    t = (rng.random(size) < 0.5).astype(np.int64)
    xi = (rng.random(size) < 0.5).astype(np.int64)
    eps = cfg.noise_sd * rng.standard_normal(size)
    m = baseline_outcome(x, xi, cfg.beta0)
    c = treatment_effect(x, xi, cfg.beta1)
    y = m + t * c + eps
    return x, t, y, xi, c, m, selection_probability(c)


def simulate(cfg: SimulationConfig = SimulationConfig()) -> Simulation:
    """Draw a target population and a selection-biased training set.

    Training samples are produced by rejection: population draws are kept
    with probability ``1/2 + 0.475 tanh(-10 C(x))`` until ``n_train`` are
    accepted.  ``P(S=1)`` is the empirical acceptance rate over all draws
    made, so ``rn = acceptance_rate / sel_prob``.
    """
    rng = np.random.default_rng(cfg.seed)
    parts, drawn, accepted = [], 0, 0
    while accepted < cfg.n_train:
        if drawn >= cfg.max_draws:
            raise GenerationError(
                f"only {accepted} of {cfg.n_train} training samples accepted after {drawn} draws"
            )
        batch = int(min(max(4 * (cfg.n_train - accepted) / 0.1, 1024), cfg.max_draws - drawn))
        x, t, y, xi, c, m, p = _draw_population(rng, cfg, batch)
        keep = rng.random(batch) < p
        idx = np.flatnonzero(keep)
        need = cfg.n_train - accepted
        if idx.size >= need:
            # stop the stream right after the n_train-th acceptance
            last = idx[need - 1]
            drawn += last + 1
            idx = idx[:need]
        else:
            drawn += batch
        accepted += idx.size
        parts.append((x[idx], t[idx], y[idx], xi[idx], c[idx], m[idx], p[idx]))
    rate = accepted / drawn
    cols = [np.concatenate(z) for z in zip(*parts)]
    x, t, y, xi, c, m, p = cols
    train_oracle = SampleTable(x, t, y, xi, c, m, p, rate / p)

    tx, tt, ty, txi, tc, tm, tp = _draw_population(rng, cfg, cfg.n_target)
    target = SampleTable(tx, tt, ty, txi, tc, tm, tp, rate / tp)
    return Simulation(
        train=train_oracle.to_dataset(0.5),
        train_oracle=train_oracle,
        target=target,
        acceptance_rate=rate,
        config=cfg,
    )


# --------------------------------------------------------------------------
# Oracle evaluation
# --------------------------------------------------------------------------

PolicyLike = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, float]


def _treat_probs(policy: PolicyLike, x: np.ndarray) -> np.ndarray:
    if callable(policy):
        p = np.asarray(policy(x), dtype=float)
    elif np.ndim(policy) == 1:
        p = np.asarray(policy, dtype=float)
    else:
        p = np.full(x.shape[0], float(policy))
    if p.shape != (x.shape[0],):
        raise ValueError("policy must return one probability per row")
    return p


def target_policy_value(policy: PolicyLike, target: SampleTable) -> float:
    """Monte-Carlo value ``mean(m(X) + pi(X) C(X))`` over target samples.

    ``policy`` maps an ``(n, d)`` covariate matrix to treatment
    probabilities, or is a constant probability.
    """
    if len(target) == 0:
        raise ValueError("target sample is empty")
    p = _treat_probs(policy, target.x)
    return float(np.mean(target.m + p * target.c))


def oracle_policy(target: SampleTable) -> np.ndarray:
    return (target.c < 0.0).astype(float)


def optimal_value(target: SampleTable) -> float:
    """Value of the oracle policy that treats exactly when ``C(x) < 0``."""
    return float(np.mean(target.m + np.minimum(target.c, 0.0)))


def policy_regret(policy: PolicyLike, target: SampleTable) -> float:
    """Target value of ``policy`` minus the value of the oracle policy ``1{C<0}``.

    ``policy`` may also be an array of per-sample treatment probabilities,
    which is how the oracle policy itself (see :func:`oracle_policy`) is
    passed, since it depends on the latent ``xi``.

    The oracle policy uses the latent ``xi`` through ``C``, so no
    covariate-only policy reaches zero regret.
    """
    p = _treat_probs(policy, target.x)
    gap = p * target.c - np.minimum(target.c, 0.0)
    return float(np.mean(gap))
