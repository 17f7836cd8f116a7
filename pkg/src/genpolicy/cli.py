"""Command-line interface: simulate, fit, sweep, treated-report, calibrate.

Every tabular result is written as CSV (to ``--out`` or standard output);
logs go to standard error.  Exit status is 0 on success, 2 for usage or
validation errors and 3 for numerical failures.

Options can come from a flat JSON document passed with ``--config``; flags
given on the command line take precedence over it.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .calibrate import CalibrationError, calibrate
from .dataset import (
    CsvSchema,
    GenerationError,
    SchemaError,
    SimulationConfig,
    TrialDataset,
    ValidationError,
    load_csv,
    policy_regret,
    simulate,
    write_csv,
)
from .dcopt import DcObjective, DescentViolation, MmccpConfig, SolverError, mmccp
from .nuisance import METHODS, FitError, build_scores, fit_nuisance
from .policy import KINDS, PolicyParams, for_covariates
from .worstcase import bounds

log = logging.getLogger("genpolicy")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

DEFAULT_GAMMAS = (1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0)


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to fit, sweep or report.

    ``data=None`` means the simulated population (one dataset per seed).
    ``p_sel="calibrate"`` estimates ``P(S=1)`` from ``calibration_col``,
    compared against the same column of ``calibration_target`` (or of the
    simulated target sample).
    """

    method: str = "DR"
    generalize: bool = True
    gammas: Tuple[float, ...] = DEFAULT_GAMMAS
    p_sel: Union[float, str] = "calibrate"
    calibration_col: str = "x2"
    calibration_target: Optional[str] = None
    kind: str = "logistic"
    intercept: bool = True
    strong_convexity: float = 1e-3
    box_bound: float = 1e4
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    data: Optional[str] = None
    n_train: int = 2000
    n_target: int = 100_000
    ridge: float = 1e-3
    clip_eta: float = 0.01
    behavior: str = "auto"
    restarts: int = 5
    max_outer: int = 200
    delta_tol: float = 1e-4
    inner_max_iter: int = 500
    inner_tol: float = 1e-6
    init_sd: float = float(np.sqrt(0.1))
    c_rule: str = "uniform"
    workers: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise UsageError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.kind not in KINDS:
            raise UsageError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.behavior not in ("auto", "known", "fit"):
            raise UsageError(f"behavior must be auto, known or fit, got {self.behavior!r}")
        gammas = tuple(float(g) for g in self.gammas)
        if not gammas or any(not g >= 1.0 for g in gammas):
            raise UsageError("gammas must be a non-empty list of values >= 1")
        if not self.generalize:
            gammas = (1.0,)
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise UsageError("at least one seed is required")
        if isinstance(self.p_sel, str) and self.p_sel != "calibrate":
            try:
                object.__setattr__(self, "p_sel", float(self.p_sel))
            except ValueError:
                raise UsageError(f"p_sel must be a probability or 'calibrate', got {self.p_sel!r}") from None
        if not isinstance(self.p_sel, str) and not 0.0 < self.p_sel < 1.0:
            raise UsageError(f"p_sel must lie in (0, 1), got {self.p_sel}")
        if self.n_train < 1 or self.n_target < 1:
            raise UsageError("n_train and n_target must be positive")
        if self.workers < 0:
            raise UsageError("workers must be >= 0 (0 picks min(4, cpu count))")
        if self.workers == 0:
            object.__setattr__(self, "workers", max(1, min(4, os.cpu_count() or 1)))

    def mmccp_config(self) -> MmccpConfig:
        try:
            return MmccpConfig(
                delta_tol=self.delta_tol,
                max_outer=self.max_outer,
                inner_max_iter=self.inner_max_iter,
                inner_tol=self.inner_tol,
                restarts=self.restarts,
                init_sd=self.init_sd,
                c_rule=self.c_rule,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# Computation (no argument parsing)
# --------------------------------------------------------------------------

@dataclass
class Prepared:
    """Fitted scores and selection parameters for one dataset."""

    data: TrialDataset
    scores: object
    p_sel: float
    calibrated_gamma: Optional[float]
    target: object = None


def _read_column(path: Union[str, Path], name: str) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or name not in reader.fieldnames:
            raise SchemaError(f"{path}: missing column {name!r}")
        vals = []
        for row_no, rec in enumerate(reader, start=1):
            try:
                vals.append(float(rec[name]))
            except (TypeError, ValueError):
                raise ValidationError(f"row {row_no}, column {name!r}: cannot parse {rec[name]!r}") from None
    return np.asarray(vals)


def _select_p(run: RunConfig, data: TrialDataset, target_col) -> Tuple[float, Optional[float]]:
    if run.p_sel != "calibrate":
        return float(run.p_sel), None
    if target_col is None:
        if run.calibration_target is None:
            raise UsageError("p_sel 'calibrate' needs --calibration-target for CSV data")
        target_col = _read_column(run.calibration_target, run.calibration_col)
    res = calibrate(data.column(run.calibration_col), target_col, clip_eta=run.clip_eta)
    log.info("calibrated p_sel=%.6g gamma=%.6g on column %s", res.p_sel, res.gamma, run.calibration_col)
    return res.p_sel, res.gamma


def prepare(run: RunConfig, seed: int) -> Prepared:
    """Load or simulate data, fit nuisances, build scores, choose ``p_sel``."""
    if run.data is None:
        sim = simulate(SimulationConfig(n_train=run.n_train, n_target=run.n_target, seed=seed))
        data, target = sim.train, sim.target
        names = data.covariate_names
        tcol = target.x[:, names.index(run.calibration_col)] if run.calibration_col in names else None
        if run.p_sel == "calibrate" and tcol is None:
            raise UsageError(f"no covariate column named {run.calibration_col!r}")
    else:
        data, target, tcol = load_csv(run.data, CsvSchema()), None, None
    if run.behavior == "known" and data.behavior_probs is None:
        raise UsageError("behavior mode 'known' needs a 'pb' column in the data")
    models = fit_nuisance(data, ridge=run.ridge, behavior=run.behavior, clip_eta=run.clip_eta)
    scores = build_scores(run.method, data, models)
    p_sel, g_hat = _select_p(run, data, tcol)
    return Prepared(data, scores, p_sel, g_hat, target)


@lru_cache(maxsize=4)
def _prepare_cached(run: RunConfig, seed: int) -> Prepared:
    return prepare(run, seed)


@dataclass
class FitRow:
    gamma: float
    seed: int
    policy: PolicyParams
    worst_case_value: float
    outer_iters: int
    converged: bool
    regret: Optional[float] = None


def fit_one(run: RunConfig, seed: int, gamma: float) -> FitRow:
    prep = _prepare_cached(run, seed)
    spec = for_covariates(
        prep.data.d, run.kind, run.intercept, strong_convexity=run.strong_convexity, box_bound=run.box_bound
    )
    dc = DcObjective(prep.scores, bounds(gamma, prep.p_sel), spec, spec.design(prep.data.covariates))
    res = mmccp(dc, run.mmccp_config(), seed=seed)
    log.info(
        "seed=%d gamma=%g value=%.6g outer=%d converged=%s", seed, gamma, res.value, res.outer_iters, res.converged
    )
    regret = policy_regret(res.theta, prep.target) if prep.target is not None else None
    return FitRow(gamma, seed, res.theta, res.value, res.outer_iters, res.converged, regret)


def _fit_job(args):
    return fit_one(*args)


def run_grid(run: RunConfig) -> List[FitRow]:
    """Fit every ``(gamma, seed)`` cell; rows ordered by gamma, then seed."""
    jobs = [(run, s, g) for s in run.seeds for g in run.gammas]
    if run.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=run.workers) as pool:
            rows = list(pool.map(_fit_job, jobs))
    else:
        rows = [fit_one(*j) for j in jobs]
    order = {g: i for i, g in enumerate(run.gammas)}
    return sorted(rows, key=lambda r: (order[r.gamma], run.seeds.index(r.seed)))


def sweep(run: RunConfig) -> List[dict]:
    """Regret of each generalizable policy against the ``gamma = 1`` baseline."""
    if run.data is not None:
        raise UsageError("sweep needs simulated data (oracle regret); omit --data")
    if 1.0 not in run.gammas:
        run = replace(run, gammas=(1.0,) + run.gammas)
    rows = run_grid(run)
    base = {r.seed: r.regret for r in rows if r.gamma == 1.0}
    out = []
    for r in rows:
        rb = base[r.seed]
        if r.gamma == 1.0:
            improvement = 0.0
        elif rb > 0:
            improvement = (rb - r.regret) / rb
        else:
            improvement = float("nan")
        out.append(dict(gamma=r.gamma, method=run.method, seed=r.seed, regret_gen=r.regret, regret_base=rb,
                        improvement=improvement))
    return out


def treated_report(rows: Sequence[FitRow], covariates: np.ndarray) -> List[dict]:
    """Percentage of rows with ``pi(x) > 0.5`` per gamma (averaged over seeds)."""
    covariates = np.asarray(covariates, dtype=float)
    if covariates.shape[0] == 0:
        raise UsageError("treated-report needs a non-empty dataset")
    acc: Dict[float, List[float]] = {}
    for r in rows:
        acc.setdefault(r.gamma, []).append(100.0 * float(np.mean(r.policy(covariates) > 0.5)))
    return [dict(gamma=g, pct_treated=float(np.mean(v))) for g, v in acc.items()]


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(rows: Sequence[dict], columns: Sequence[str], out: Optional[str]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    if out is None or out == "-":
        sys.stdout.write(buf.getvalue())
        sys.stdout.flush()
    else:
        Path(out).write_text(buf.getvalue())


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

_RUN_FIELDS = {f.name for f in fields(RunConfig)}


def _floats(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="flat JSON file with run options")
    p.add_argument("--data", default=S, help="training CSV (omit to simulate)")
    p.add_argument("--method", default=S, choices=METHODS)
    p.add_argument("--generalize", default=S, type=_bool, help="false fits only gamma=1")
    p.add_argument("--gammas", default=S, type=_floats, help="comma-separated gamma grid")
    p.add_argument("--p-sel", dest="p_sel", default=S, help="probability or 'calibrate'")
    p.add_argument("--calibration-col", dest="calibration_col", default=S)
    p.add_argument("--calibration-target", dest="calibration_target", default=S, help="CSV holding the target column")
    p.add_argument("--kind", default=S, choices=KINDS)
    p.add_argument("--intercept", default=S, type=_bool)
    p.add_argument("--lambda", dest="strong_convexity", default=S, type=float)
    p.add_argument("--box-bound", dest="box_bound", default=S, type=float)
    p.add_argument("--seeds", default=S, type=_ints)
    p.add_argument("--n-train", dest="n_train", default=S, type=int)
    p.add_argument("--n-target", dest="n_target", default=S, type=int)
    p.add_argument("--ridge", default=S, type=float)
    p.add_argument("--clip-eta", dest="clip_eta", default=S, type=float)
    p.add_argument("--behavior", default=S, choices=("auto", "known", "fit"))
    p.add_argument("--restarts", default=S, type=int)
    p.add_argument("--max-outer", dest="max_outer", default=S, type=int)
    p.add_argument("--delta-tol", dest="delta_tol", default=S, type=float)
    p.add_argument("--inner-max-iter", dest="inner_max_iter", default=S, type=int)
    p.add_argument("--inner-tol", dest="inner_tol", default=S, type=float)
    p.add_argument("--init-sd", dest="init_sd", default=S, type=float)
    p.add_argument("--c-rule", dest="c_rule", default=S, choices=("uniform", "rank"))
    p.add_argument("--workers", default=S, type=int)
    p.add_argument("--out", default="-", help="output CSV path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genpolicy", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write simulated train.csv and target.csv")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-target", type=int, default=100_000)

    p = sub.add_parser("fit", parents=[common], help="fit policies over a gamma grid")
    _add_run_options(p)
    p.add_argument("--policy-dir", help="also write one policy JSON per (gamma, seed)")

    p = sub.add_parser("sweep", parents=[common], help="regret improvement over the gamma=1 baseline (simulation)")
    _add_run_options(p)

    p = sub.add_parser("treated-report", parents=[common], help="percentage treated per gamma")
    _add_run_options(p)
    p.add_argument("--report-data", help="CSV whose rows are scored (default: the training data)")

    p = sub.add_parser("calibrate", parents=[common], help="estimate p_sel and gamma from one covariate")
    p.add_argument("--train", required=True)
    p.add_argument("--target-col", dest="target_col", required=True, help="CSV holding the target sample")
    p.add_argument("--col", required=True)
    p.add_argument("--clip-eta", type=float, default=0.01)
    p.add_argument("--min-samples", type=int, default=30)
    p.add_argument("--out", default="-")
    return parser


def run_config_from(args: argparse.Namespace) -> RunConfig:
    opts = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        unknown = sorted(set(doc) - _RUN_FIELDS)
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {unknown}")
        opts.update(doc)
    opts.update({k: v for k, v in vars(args).items() if k in _RUN_FIELDS})
    for key in ("gammas", "seeds"):
        if key in opts and not isinstance(opts[key], (list, tuple)):
            raise UsageError(f"{key} must be a list")
    try:
        return RunConfig(**opts)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args) -> None:
    try:
        cfg = SimulationConfig(n_train=args.n_train, n_target=args.n_target, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sim = simulate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "train.csv", sim.train, sim.train_oracle.oracle_columns())
    write_csv(out / "target.csv", sim.target.to_dataset(0.5), sim.target.oracle_columns())
    log.info("wrote %s and %s (acceptance rate %.6g)", out / "train.csv", out / "target.csv", sim.acceptance_rate)


def cmd_fit(args) -> None:
    run = run_config_from(args)
    rows = run_grid(run)
    d = rows[0].policy.spec.dim
    cols = ["gamma", "method", "seed", "kind", "worst_case_value", "outer_iters", "converged"]
    cols += [f"theta_{j}" for j in range(d)]
    table = []
    for r in rows:
        rec = dict(gamma=r.gamma, method=run.method, seed=r.seed, kind=run.kind, worst_case_value=r.worst_case_value,
                   outer_iters=r.outer_iters, converged=r.converged)
        rec.update({f"theta_{j}": float(v) for j, v in enumerate(r.policy.theta)})
        table.append(rec)
    write_table(table, cols, args.out)
    if args.policy_dir:
        pdir = Path(args.policy_dir)
        pdir.mkdir(parents=True, exist_ok=True)
        for r in rows:
            (pdir / f"policy_gamma{r.gamma:g}_seed{r.seed}.json").write_text(r.policy.to_json() + "\n")


def cmd_sweep(args) -> None:
    run = run_config_from(args)
    table = sweep(run)
    write_table(table, ["gamma", "method", "seed", "regret_gen", "regret_base", "improvement"], args.out)


def cmd_treated_report(args) -> None:
    run = run_config_from(args)
    rows = run_grid(run)
    if args.report_data:
        x = load_csv(args.report_data, CsvSchema()).covariates
    elif run.data is not None:
        x = load_csv(run.data, CsvSchema()).covariates
    else:
        x = _prepare_cached(run, run.seeds[0]).data.covariates
    write_table(treated_report(rows, x), ["gamma", "pct_treated"], args.out)


def cmd_calibrate(args) -> None:
    train = _read_column(args.train, args.col)
    target = _read_column(args.target_col, args.col)
    res = calibrate(train, target, clip_eta=args.clip_eta, min_samples=args.min_samples)
    text = json.dumps({"p_sel": res.p_sel, "gamma": res.gamma}) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "treated-report": cmd_treated_report,
    "calibrate": cmd_calibrate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        COMMANDS[args.command](args)
    except (UsageError, SchemaError, ValidationError, CalibrationError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (FitError, SolverError, DescentViolation, GenerationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
