"""Experiment orchestration over (n, p, m, eps, mechanism) grids.

Each grid cell crossed with a replication index gets an independent,
reproducible seed derived by hashing the master seed together with the
cell's *parameter values* (never its position), so editing the grid
never perturbs the cells that stay.  Within one (cell, replication) the
mechanisms under comparison share everything that should be shared —
the dataset, the fit, the removal set, and the calibrated radius — and
differ only in the noise they add.

Results stream to a CSV with a ``# schema=v1`` comment header, one row
per (cell, replication, mechanism).  Runs are resumable: rows already
present in the output are skipped, and because rows are written in a
deterministic order, an interrupted-then-resumed run reproduces the
uninterrupted file byte for byte (the wall_ms column excepted).
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .data import Dataset
from .datagen import DataGenSpec, generate_dataset
from .losses import LossSpec, ModelSpec, RegSpec
from .metrics import ged, ued
from .solver import SolverConfig, fit_rerm
from .unlearn import (
    InfeasibleBudget,
    NoiseMechanism,
    RemovalRequest,
    calibrate_noise,
    draw_noise,
    newton_unlearn_step,
    uniform_subsets,
)

__all__ = [
    "SCHEMA_COMMENT",
    "RESULT_COLUMNS",
    "ExperimentConfig",
    "ResultRow",
    "SlopeFit",
    "derive_seed",
    "loglog_slope",
    "run_experiment",
    "read_results",
    "summarize",
    "slope_fits",
    "results_equal_ignoring_wall",
]

SCHEMA_COMMENT = "# schema=v1"

RESULT_COLUMNS = (
    "experiment_id",
    "n",
    "p",
    "m",
    "eps",
    "mechanism",
    "replication",
    "seed",
    "r",
    "sigma",
    "ged_value",
    "ged_se",
    "ued_value",
    "ued_se",
    "newton_gap",
    "wall_ms",
)

_P_RULES = ("n=p", "2n=p")
_LINK_FOR_LOSS = {
    "logistic": "logistic",
    "quadratic": "linear_gaussian",
    "poisson": "poisson",
}


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of labels and parameter values."""

    def canon(x) -> str:
        if isinstance(x, float):
            return repr(x)
        return str(x)

    digest = hashlib.sha256("|".join(canon(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid, model, and budget for one experiment run."""

    n_values: tuple[int, ...]
    experiment_id: str = "exp"
    p_rule: str = "n=p"
    m_values: tuple[int, ...] = (1,)
    eps_values: tuple[float, ...] = (0.75,)
    mechanisms: tuple[str, ...] = ("gaussian", "laplace_isotropic")
    loss: str = "logistic"
    reg: str = "ridge"
    lam: float = 0.5
    replications: int = 20
    subsets_per_removal: int = 1000
    test_points: int = 100
    n_noise: int = 32
    master_seed: int = 0
    output_path: str = "results.csv"
    compute_cap: float | None = 7200.0
    calibration: str = "oracle"
    feature_dist: str = "gaussian"
    noise_std: float = 1.0
    threads: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "m_values", tuple(int(m) for m in self.m_values))
        object.__setattr__(
            self, "eps_values", tuple(float(e) for e in self.eps_values)
        )
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        if not self.n_values or not self.m_values or not self.eps_values:
            raise ValueError("grid lists must be non-empty")
        if not self.mechanisms:
            raise ValueError("at least one mechanism is required")
        if self.p_rule not in _P_RULES:
            raise ValueError(f"p_rule must be one of {_P_RULES}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.loss not in _LINK_FOR_LOSS:
            raise ValueError(f"loss must be one of {tuple(_LINK_FOR_LOSS)}")
        if self.calibration not in ("oracle", "theory"):
            raise ValueError("calibration must be 'oracle' or 'theory'")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def p_for(self, n: int) -> int:
        return n if self.p_rule == "n=p" else 2 * n

    def model(self) -> ModelSpec:
        return ModelSpec(loss=LossSpec(self.loss), reg=RegSpec(self.reg), lam=self.lam)

    def cells(self) -> list[tuple[int, int, int, float]]:
        """Grid cells sorted cheapest first (largest n last)."""
        out = [
            (n, self.p_for(n), m, eps)
            for n in self.n_values
            for m in self.m_values
            for eps in self.eps_values
        ]
        return sorted(out)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for key in ("n_values", "m_values", "eps_values", "mechanisms"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        known = {k: cfg[k] for k in cfg if k in cls.__dataclass_fields__}
        for key in ("n_values", "m_values", "eps_values", "mechanisms"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)


@dataclass(frozen=True)
class ResultRow:
    """One (cell, replication, mechanism) outcome; schema v1."""

    experiment_id: str
    n: int
    p: int
    m: int
    eps: float
    mechanism: str
    replication: int
    seed: int
    r: float
    sigma: float
    ged_value: float
    ged_se: float
    ued_value: float
    ued_se: float
    newton_gap: float
    wall_ms: float

    def key(self) -> tuple:
        return (
            self.experiment_id,
            self.n,
            self.p,
            self.m,
            repr(self.eps),
            self.mechanism,
            self.replication,
        )

    def to_csv_line(self) -> str:
        vals = []
        for col in RESULT_COLUMNS:
            v = getattr(self, col)
            vals.append(repr(v) if isinstance(v, float) else str(v))
        return ",".join(vals)


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares fit of log(y) against log(x)."""

    slope: float
    intercept: float
    r_squared: float
    n_points: int


def loglog_slope(xs, ys) -> SlopeFit:
    """OLS of ``log ys`` on ``log xs``; inputs must be positive."""
    xs = np.asarray(xs, dtype=float).reshape(-1)
    ys = np.asarray(ys, dtype=float).reshape(-1)
    if xs.shape != ys.shape or xs.size < 2:
        raise ValueError("need at least two (x, y) pairs of equal length")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs strictly positive inputs")
    lx, ly = np.log(xs), np.log(ys)
    if np.allclose(lx, lx[0]):
        raise ValueError("xs are degenerate (all equal)")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return SlopeFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        n_points=int(xs.size),
    )


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def _row_key(parts: list[str]) -> tuple:
    # mirrors ResultRow.key() for lines parsed back from CSV
    return (
        parts[0],
        int(parts[1]),
        int(parts[2]),
        int(parts[3]),
        repr(float(parts[4])),
        parts[5],
        int(parts[6]),
    )


def _load_done_keys(path: Path) -> set:
    """Keys already present in the output; trims a torn trailing line."""
    done: set = set()
    raw = path.read_text()
    lines = raw.split("\n")
    keep: list[str] = []
    dirty = False
    for i, line in enumerate(lines):
        if line == "" and i == len(lines) - 1:
            continue
        if line.startswith("#") or line.startswith("experiment_id,"):
            keep.append(line)
            continue
        parts = line.split(",")
        complete = len(parts) == len(RESULT_COLUMNS) and (i < len(lines) - 1 or raw.endswith("\n"))
        if not complete:
            dirty = True
            break
        keep.append(line)
        done.add(_row_key(parts))
    if dirty:
        path.write_text("\n".join(keep) + ("\n" if keep else ""))
    return done


def _run_cellrep(
    cfg: ExperimentConfig,
    model: ModelSpec,
    cell: tuple[int, int, int, float],
    rep: int,
    pending: tuple[str, ...],
) -> list[ResultRow]:
    n, p, m, eps = cell
    if m >= n:
        raise ValueError(f"removal size m={m} must be smaller than n={n}")
    t0 = time.perf_counter()
    seed = derive_seed(cfg.master_seed, "cell", n, p, m, eps, rep)
    link = _LINK_FOR_LOSS[cfg.loss]

    train_spec = DataGenSpec(
        n=n,
        p=p,
        feature_dist=cfg.feature_dist,
        link=link,
        noise_std=cfg.noise_std,
        seed=derive_seed(seed, "data"),
    )
    data = generate_dataset(train_spec)
    test_spec = replace(
        train_spec,
        n=cfg.test_points,
        beta_star=tuple(data.beta_star),
        seed=derive_seed(seed, "test"),
    )
    test_set = generate_dataset(test_spec)

    solver_cfg = SolverConfig()
    fitted = fit_rerm(model, data, cfg=solver_cfg)

    if cfg.calibration == "oracle":
        calib = calibrate_noise(
            model,
            data,
            fitted,
            m=m,
            eps=eps,
            mode="oracle",
            sampler=uniform_subsets(cfg.subsets_per_removal),
            rng=derive_seed(seed, "calib"),
            solver_cfg=solver_cfg,
        )
    else:
        calib = calibrate_noise(model, data, fitted, m=m, eps=eps, mode="theory")

    removal_rng = np.random.default_rng(derive_seed(seed, "removal"))
    removal = RemovalRequest(
        sorted(int(i) for i in removal_rng.choice(n, size=m, replace=False))
    )
    retrained = fit_rerm(
        model, data, exclude=removal.indices, cfg=solver_cfg, warm_start=fitted.beta
    )
    beta1 = newton_unlearn_step(fitted, model, data, removal)
    gap = float(np.linalg.norm(beta1 - retrained.beta))
    removed = data.take(removal.indices)

    rows = []
    for kind in pending:
        mech = NoiseMechanism.calibrated(kind, calib.sigma)

        def sampler(rng, _mech=mech):
            return beta1 + draw_noise(_mech, p, rng)

        noise_seed = derive_seed(seed, "noise", kind)
        # GED and UED share the same noise draws by construction
        ged_est = ged(model, retrained.beta, sampler, test_set, cfg.n_noise, noise_seed)
        ued_est = ued(model, retrained.beta, sampler, removed, cfg.n_noise, noise_seed)
        rows.append(
            ResultRow(
                experiment_id=cfg.experiment_id,
                n=n,
                p=p,
                m=m,
                eps=eps,
                mechanism=kind,
                replication=rep,
                seed=seed,
                r=calib.r,
                sigma=calib.sigma,
                ged_value=ged_est.value,
                ged_se=ged_est.std_error,
                ued_value=ued_est.value,
                ued_se=ued_est.std_error,
                newton_gap=gap,
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
    return rows


def run_experiment(
    cfg: ExperimentConfig, resume: bool = False, progress=None
) -> list[ResultRow]:
    """Run every (cell, replication) and stream rows to the output CSV.

    With ``resume=True`` an existing output is extended, skipping rows
    already present; without it an existing output is an error.  Raises
    :class:`unlearn_hd.unlearn.InfeasibleBudget` once ``compute_cap``
    seconds have elapsed, leaving completed rows on disk.
    """
    path = Path(cfg.output_path)
    done: set = set()
    if path.exists():
        if not resume:
            raise FileExistsError(
                f"{path} exists; pass resume=True to continue an interrupted run"
            )
        done = _load_done_keys(path)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        header = SCHEMA_COMMENT + "\n" + ",".join(RESULT_COLUMNS) + "\n"
        path.write_text(header)

    model = cfg.model()
    tasks = []
    for cell in cfg.cells():
        n, p, m, eps = cell
        for rep in range(cfg.replications):
            pending = tuple(
                kind
                for kind in cfg.mechanisms
                if (cfg.experiment_id, n, p, m, repr(float(eps)), kind, rep) not in done
            )
            if pending:
                tasks.append((cell, rep, pending))

    written: list[ResultRow] = []
    start = time.monotonic()

    def over_budget() -> bool:
        return cfg.compute_cap is not None and time.monotonic() - start > cfg.compute_cap

    with path.open("a") as fh:

        def emit(rows: list[ResultRow], label) -> None:
            for row in rows:
                fh.write(row.to_csv_line() + "\n")
            fh.flush()
            written.extend(rows)
            if progress:
                cell, rep = label
                print(
                    f"[{cfg.experiment_id}] n={cell[0]} p={cell[1]} m={cell[2]} "
                    f"eps={cell[3]} rep={rep}: {len(rows)} rows",
                    flush=True,
                )

        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                futures = [
                    (pool.submit(_run_cellrep, cfg, model, cell, rep, pending), cell, rep)
                    for cell, rep, pending in tasks
                ]
                for k, (fut, cell, rep) in enumerate(futures):
                    if over_budget():
                        for f, _, _ in futures[k:]:
                            f.cancel()
                        raise InfeasibleBudget(k, len(tasks), time.monotonic() - start)
                    emit(fut.result(), (cell, rep))
        else:
            for k, (cell, rep, pending) in enumerate(tasks):
                if over_budget():
                    raise InfeasibleBudget(k, len(tasks), time.monotonic() - start)
                emit(_run_cellrep(cfg, model, cell, rep, pending), (cell, rep))
    return written


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def read_results(csv_path) -> pd.DataFrame:
    """Load a schema-v1 results CSV."""
    df = pd.read_csv(csv_path, comment="#")
    missing = set(RESULT_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"{csv_path}: missing result columns {sorted(missing)}")
    return df


_SUMMARY_METRICS = ("ged_value", "ued_value", "newton_gap", "r")


def summarize(
    csv_path, group_by: tuple[str, ...] = ("n", "p", "m", "eps", "mechanism")
) -> pd.DataFrame:
    """Per-cell mean, SD, and count of the accuracy metrics and the radius."""
    df = read_results(csv_path)
    group_by = list(group_by)
    agg = {}
    for metric in _SUMMARY_METRICS:
        short = metric.replace("_value", "")
        agg[f"{short}_mean"] = (metric, "mean")
        agg[f"{short}_sd"] = (metric, lambda s: s.std(ddof=1) if len(s) > 1 else 0.0)
    out = df.groupby(group_by, as_index=False).agg(count=("seed", "size"), **agg)
    return out.sort_values(group_by, kind="mergesort").reset_index(drop=True)


def slope_fits(summary: pd.DataFrame, axis: str, metric: str = "ged") -> pd.DataFrame:
    """Log-log slopes of the per-cell mean metric along ``axis`` ('p' or 'm').

    One fit per mechanism within each group of the remaining cell labels.
    """
    if axis not in ("p", "m"):
        raise ValueError("axis must be 'p' or 'm'")
    col = f"{metric}_mean"
    if col not in summary.columns:
        raise ValueError(f"summary has no column {col!r}")
    group_cols = ["mechanism", "eps", "m"] if axis == "p" else ["mechanism", "eps", "n", "p"]
    records = []
    for keys, grp in summary.groupby(group_cols):
        if grp[axis].nunique() < 2:
            continue
        fit = loglog_slope(grp[axis].to_numpy(), grp[col].to_numpy())
        rec = dict(zip(group_cols, keys if isinstance(keys, tuple) else (keys,)))
        rec.update(
            metric=metric,
            axis=axis,
            slope=fit.slope,
            intercept=fit.intercept,
            r_squared=fit.r_squared,
            n_points=fit.n_points,
        )
        records.append(rec)
    cols = ["metric", "axis", *group_cols, "slope", "intercept", "r_squared", "n_points"]
    return pd.DataFrame.from_records(records, columns=cols)


def results_equal_ignoring_wall(path_a, path_b) -> bool:
    """Compare two results CSVs for equality with the wall_ms column dropped."""

    def normalized(path) -> list[str]:
        wall_idx = RESULT_COLUMNS.index("wall_ms")
        out = []
        for line in Path(path).read_text().splitlines():
            if line.startswith("#") or line.startswith("experiment_id,"):
                out.append(line)
                continue
            parts = line.split(",")
            del parts[wall_idx]
            out.append(",".join(parts))
        return out

    return normalized(path_a) == normalized(path_b)
