"""One-step Newton unlearning with calibrated randomization.

Given a solved objective ``beta_hat`` and a removal set M, the
approximation step is a single Newton iteration on the leave-M-out
objective, evaluated at ``beta_hat``:

    beta_newton = beta_hat - H_M(beta_hat)^{-1} grad_M(beta_hat),

followed by a randomization step ``beta_tilde = beta_newton + b`` with
``b`` drawn from the configured mechanism.  The Gaussian scale is
``sigma = r / eps`` where ``r`` bounds the worst-case gap between the
Newton update and an exact retrain over removal sets of size at most m.

Two calibrations of ``r`` are provided.  *Theory* mode evaluates the
closed-form rate ``c1(n) * sqrt(c2(n) * m^3 / (2 * lam * nu * n))`` with
configurable polylog constants.  *Oracle* mode measures the gap
directly: it retrains exactly for every scanned removal set (all
singletons when m = 1, sampled subsets otherwise) and takes the maximum.

The oracle scan is the hot path, so it reuses the cached full-data
Hessian factorization twice over: the leave-M-out Newton system is
solved through a rank-m Woodbury downdate (for m <= 32), and the exact
retrain polishes the Newton iterate with fixed-factor chord iterations,
falling back to full damped Newton whenever the chord contraction
stalls.  Every retrain satisfies the same gradient tolerance as
:func:`unlearn_hd.solver.fit_rerm`, so the scan's maxima match the slow
path up to solver tolerance.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .data import Dataset
from .losses import ModelSpec
from .solver import (
    FittedModel,
    SolverConfig,
    SolverError,
    _armijo_allowance,
    _factor_spd,
    fit_rerm,
    objective_gradient,
    objective_hessian,
    objective_value,
)

__all__ = [
    "MECHANISM_KINDS",
    "RemovalRequest",
    "NoiseMechanism",
    "CalibrationResult",
    "UnlearnOutput",
    "InfeasibleBudget",
    "uniform_subsets",
    "newton_unlearn_step",
    "calibrate_noise",
    "draw_noise",
    "unlearn",
]

MECHANISM_KINDS = ("gaussian", "laplace_isotropic", "none")

_DOWNDATE_MAX_M = 32
_LINSOLVE_RTOL = 1e-10
_CHORD_MAX_ITER = 60


class InfeasibleBudget(RuntimeError):
    """An oracle scan exceeded its compute cap; partial gaps are attached."""

    def __init__(self, scanned: int, total: int, elapsed: float):
        super().__init__(
            f"oracle scan stopped after {scanned}/{total} subsets ({elapsed:.1f}s)"
        )
        self.scanned = scanned
        self.total = total
        self.elapsed = elapsed


@dataclass(frozen=True)
class RemovalRequest:
    """A set of row indices whose influence is to be removed."""

    indices: tuple[int, ...]

    def __init__(self, indices):
        idx = tuple(sorted(int(i) for i in indices))
        if any(i < 0 for i in idx):
            raise ValueError("removal indices must be nonnegative")
        if len(set(idx)) != len(idx):
            raise ValueError("removal indices must be distinct")
        object.__setattr__(self, "indices", idx)

    @property
    def m(self) -> int:
        return len(self.indices)

    def validate_for(self, n: int) -> None:
        if self.indices and self.indices[-1] >= n:
            raise IndexError(f"removal index {self.indices[-1]} out of range for n={n}")


@dataclass(frozen=True)
class NoiseMechanism:
    """Randomization mechanism: kind plus scale.

    ``sigma`` is the per-coordinate standard deviation for the Gaussian
    mechanism and the radial scale for the isotropic Laplace mechanism
    (density proportional to ``exp(-||b|| / sigma)``).  A zero scale is
    only representable as the ``none`` mechanism.
    """

    kind: str
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in MECHANISM_KINDS:
            raise ValueError(f"kind must be one of {MECHANISM_KINDS}")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("sigma must be a finite nonnegative real")
        if self.sigma == 0 and self.kind != "none":
            raise ValueError("sigma = 0 requires kind 'none'")
        if self.kind == "none" and self.sigma != 0:
            raise ValueError("kind 'none' requires sigma = 0")

    @classmethod
    def calibrated(cls, kind: str, sigma: float) -> "NoiseMechanism":
        """Build a mechanism from a calibrated scale, degrading to 'none' at 0."""
        if kind == "none" or sigma == 0:
            return cls("none", 0.0)
        return cls(kind, float(sigma))


@dataclass(frozen=True)
class CalibrationResult:
    """Sensitivity radius and the noise scale derived from it."""

    r: float
    sigma: float
    eps: float
    mode: str
    m: int
    subsets_scanned: int
    c1: float | None = None
    c2: float | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("oracle", "theory"):
            raise ValueError("mode must be 'oracle' or 'theory'")
        if abs(self.sigma * self.eps - self.r) > 1e-12 * max(self.r, 1e-300):
            raise ValueError("sigma * eps must equal r")

    def to_json_dict(self) -> dict:
        return {
            "r": self.r,
            "sigma": self.sigma,
            "eps": self.eps,
            "mode": self.mode,
            "m": self.m,
            "subsets_scanned": self.subsets_scanned,
            "c1": self.c1,
            "c2": self.c2,
        }


@dataclass(frozen=True)
class UnlearnOutput:
    """Newton iterate, the noise that was added, and the released vector."""

    beta_newton: np.ndarray
    beta_tilde: np.ndarray
    noise: np.ndarray
    calibration: CalibrationResult

    def __post_init__(self) -> None:
        if not np.array_equal(self.beta_tilde, self.beta_newton + self.noise):
            raise ValueError("beta_tilde must equal beta_newton + noise exactly")


def uniform_subsets(count: int):
    """Sampler drawing ``count`` uniform size-m subsets (the m > 1 scan default)."""
    if count < 1:
        raise ValueError("subset count must be >= 1")

    def sample(n: int, m: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
        return [
            tuple(sorted(int(i) for i in rng.choice(n, size=m, replace=False)))
            for _ in range(count)
        ]

    return sample


# ---------------------------------------------------------------------------
# leave-M-out linear algebra
# ---------------------------------------------------------------------------


class _LeaveOutSystem:
    """Solver for ``H_M(beta_hat) x = v`` built once per removal set.

    Prefers the rank-m Woodbury downdate of the cached full-data factor;
    builds and factorizes the leave-M-out Hessian afresh when the
    downdate is unavailable or insufficiently accurate.
    """

    def __init__(self, ctx: "_ScanContext", idx: np.ndarray, allow_downdate: bool):
        self.ctx = ctx
        self.idx = idx
        self._fresh_factor: np.ndarray | None = None
        self._downdate = None
        if allow_downdate and 0 < idx.size <= _DOWNDATE_MAX_M:
            self._downdate = self._build_downdate()
        if self._downdate is None:
            self._fresh_factor = self._build_fresh()

    def _build_downdate(self):
        ctx = self.ctx
        U = ctx.X[self.idx].T  # p x m
        w = ctx.d2[self.idx].copy()
        keep = w > 1e-30
        U = U[:, keep]
        w = w[keep]
        if U.shape[1] == 0:
            # removed rows have zero curvature: H_M equals the full Hessian
            return (None, None, None, None)
        AinvU = scipy.linalg.cho_solve((ctx.factor, True), U)
        S = np.diag(1.0 / w) - U.T @ AinvU
        S = 0.5 * (S + S.T)
        try:
            S_chol = scipy.linalg.cholesky(S, lower=True)
        except scipy.linalg.LinAlgError:
            return None
        return (U, w, AinvU, S_chol)

    def _build_fresh(self) -> np.ndarray:
        ctx = self.ctx
        H = objective_hessian(ctx.model, ctx.data, self.idx, ctx.beta_hat)
        return _factor_spd(H, 1e-12)

    def solve(self, v: np.ndarray) -> np.ndarray:
        if self._fresh_factor is not None:
            return scipy.linalg.cho_solve((self._fresh_factor, True), v)
        U, w, AinvU, S_chol = self._downdate
        Av = scipy.linalg.cho_solve((self.ctx.factor, True), v)
        if U is None:
            return Av
        return Av + AinvU @ scipy.linalg.cho_solve((S_chol, True), U.T @ Av)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """``H_M @ v`` without materializing ``H_M``."""
        if self._fresh_factor is not None:
            L = self._fresh_factor
            return L @ (L.T @ v)
        ctx = self.ctx
        L = ctx.factor
        out = L @ (L.T @ v)
        if self.idx.size:
            U = ctx.X[self.idx]
            out -= U.T @ (ctx.d2[self.idx] * (U @ v))
        return out

    def solve_checked(self, v: np.ndarray) -> np.ndarray:
        """Solve to relative residual <= 1e-10, refining or rebuilding as needed."""
        x = self.solve(v)
        v_norm = float(np.linalg.norm(v))
        if v_norm == 0.0:
            return np.zeros_like(v)
        for _ in range(3):
            residual = v - self.matvec(x)
            if float(np.linalg.norm(residual)) <= _LINSOLVE_RTOL * v_norm:
                return x
            x = x + self.solve(residual)
        if self._fresh_factor is None:
            # downdate path could not reach the tolerance; rebuild exactly
            self._downdate = None
            self._fresh_factor = self._build_fresh()
            return self.solve_checked(v)
        raise SolverError("leave-M-out Newton system solve did not reach 1e-10")


class _ScanContext:
    """Per-fit precomputation shared by every removal set in a scan."""

    def __init__(
        self,
        model: ModelSpec,
        data: Dataset,
        fitted: FittedModel,
        cfg: SolverConfig,
    ):
        if fitted.excluded:
            raise ValueError("unlearning requires a fit on the full dataset")
        if fitted.beta.shape[0] != data.p:
            raise ValueError("fitted coefficient length does not match the data")
        self.model = model
        self.data = data
        self.cfg = cfg
        self.X = data.X
        self.y = data.y
        self.beta_hat = fitted.beta
        self.factor = fitted.hessian_factor
        self.z_hat = self.X @ self.beta_hat
        self.d1, self.d2 = model.loss.derivatives(self.y, self.z_hat)
        self.g_full = model.lam * model.reg.grad(self.beta_hat) + self.X.T @ self.d1
        self.fallbacks = 0

    def leave_out_gradient(self, idx: np.ndarray) -> np.ndarray:
        g = self.g_full
        if idx.size:
            g = g - self.X[idx].T @ self.d1[idx]
        return g.copy() if g is self.g_full else g

    def newton_step(self, idx: np.ndarray, allow_downdate: bool):
        """One Newton iteration of the leave-``idx``-out objective at beta_hat."""
        if idx.size == 0:
            system = None
            return self.beta_hat.copy(), system
        system = _LeaveOutSystem(self, idx, allow_downdate and self.factor is not None)
        g = self.leave_out_gradient(idx)
        step = system.solve_checked(g)
        return self.beta_hat - step, system

    def retrain(self, idx: np.ndarray, beta1: np.ndarray, system) -> np.ndarray:
        """Exact minimizer of the leave-``idx``-out objective.

        Polishes the Newton iterate with chord iterations that reuse the
        system factorization; falls back to full damped Newton when the
        contraction is too weak.
        """
        tol = self._grad_tol(idx)
        beta = beta1
        if system is not None:
            beta, converged = self._chord(idx, beta, system, tol)
            if converged:
                return beta
            self.fallbacks += 1
        fit = fit_rerm(self.model, self.data, idx, self.cfg, warm_start=beta)
        return fit.beta

    def _grad_tol(self, idx: np.ndarray) -> float:
        mask = np.ones(self.data.n, dtype=bool)
        mask[idx] = False
        return self.cfg.effective_grad_tol(self.y[mask])

    def _chord(self, idx, beta, system, tol):
        g = objective_gradient(self.model, self.data, idx, beta)
        gn = float(np.linalg.norm(g))
        f_cur = objective_value(self.model, self.data, idx, beta)
        bad_steps = 0
        for _ in range(_CHORD_MAX_ITER):
            if gn <= tol:
                return beta, True
            direction = system.solve(g)
            slope = -float(g @ direction)
            t = 1.0
            allowance = _armijo_allowance(f_cur)
            while True:
                cand = beta - t * direction
                f_new = objective_value(self.model, self.data, idx, cand)
                if f_new <= f_cur + 1e-4 * t * slope + allowance:
                    break
                t *= 0.5
                if t < 2.0**-20:
                    return beta, False
            beta, f_cur = cand, f_new
            g = objective_gradient(self.model, self.data, idx, beta)
            new_gn = float(np.linalg.norm(g))
            if new_gn > 0.9 * gn:
                bad_steps += 1
                if bad_steps >= 3:
                    return beta, False
            gn = new_gn
        return beta, gn <= tol


def newton_unlearn_step(
    fitted: FittedModel,
    model: ModelSpec,
    data: Dataset,
    removal: RemovalRequest,
    method: str = "fresh",
    solver_cfg: SolverConfig | None = None,
) -> np.ndarray:
    """Single Newton update of the leave-M-out objective, evaluated at the fit.

    ``method`` selects how the linear system is solved: ``"fresh"``
    (default) factorizes the leave-M-out Hessian directly, ``"downdate"``
    applies a rank-m Woodbury correction to the cached full-data factor
    (m <= 32), and ``"auto"`` prefers the downdate whenever it is legal.
    All methods enforce a relative solve residual of 1e-10 and agree up
    to that tolerance.
    """
    if method not in ("fresh", "downdate", "auto"):
        raise ValueError("method must be 'fresh', 'downdate', or 'auto'")
    removal.validate_for(data.n)
    ctx = _ScanContext(model, data, fitted, solver_cfg or SolverConfig())
    idx = np.asarray(removal.indices, dtype=np.intp)
    if method == "downdate":
        if fitted.hessian_factor is None:
            raise ValueError("downdate method needs a cached Hessian factorization")
        if removal.m > _DOWNDATE_MAX_M:
            raise ValueError(f"downdate method supports m <= {_DOWNDATE_MAX_M}")
    allow_downdate = method in ("downdate", "auto")
    beta1, _ = ctx.newton_step(idx, allow_downdate)
    return beta1


def calibrate_noise(
    model: ModelSpec,
    data: Dataset,
    fitted: FittedModel,
    m: int,
    eps: float,
    mode: str = "oracle",
    sampler=None,
    rng=None,
    *,
    c1=None,
    c2=None,
    solver_cfg: SolverConfig | None = None,
    threads: int = 1,
    compute_cap: float | None = None,
) -> CalibrationResult:
    """Choose the sensitivity radius ``r`` and the noise scale ``sigma = r/eps``.

    Oracle mode scans removal sets — all ``n`` singletons when ``m == 1``,
    otherwise subsets drawn by ``sampler`` (default: 1000 uniform
    subsets) — and takes the largest Newton-vs-retrain gap.  Theory mode
    evaluates the closed-form rate with constants ``c1``/``c2`` given as
    numbers or callables of n (defaults 1 and log^2 n).

    Raises :class:`InfeasibleBudget` if the scan exceeds ``compute_cap``
    seconds.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not eps > 0:
        raise ValueError("eps must be positive")
    n = data.n

    if mode == "theory":
        c1_val = float(c1(n) if callable(c1) else (1.0 if c1 is None else c1))
        c2_val = float(c2(n) if callable(c2) else (np.log(n) ** 2 if c2 is None else c2))
        r = c1_val * float(np.sqrt(c2_val * m**3 / (2.0 * model.lam * model.reg.nu * n)))
        return CalibrationResult(
            r=r,
            sigma=r / eps,
            eps=eps,
            mode="theory",
            m=m,
            subsets_scanned=0,
            c1=c1_val,
            c2=c2_val,
        )
    if mode != "oracle":
        raise ValueError("mode must be 'oracle' or 'theory'")

    rng = np.random.default_rng(rng)
    if m == 1:
        subsets = [(i,) for i in range(n)]
    else:
        sample = sampler if sampler is not None else uniform_subsets(1000)
        subsets = list(sample(n, m, rng))
        if any(len(s) != m for s in subsets):
            raise ValueError("sampler returned a subset of the wrong size")

    ctx = _ScanContext(model, data, fitted, solver_cfg or SolverConfig())

    def gap_for(subset) -> float:
        idx = np.asarray(subset, dtype=np.intp)
        beta1, system = ctx.newton_step(idx, allow_downdate=True)
        beta_retrained = ctx.retrain(idx, beta1, system)
        return float(np.linalg.norm(beta1 - beta_retrained))

    start = time.monotonic()
    gaps = np.empty(len(subsets))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(gap_for, s) for s in subsets]
            for k, fut in enumerate(futures):
                if compute_cap is not None and time.monotonic() - start > compute_cap:
                    for f in futures[k:]:
                        f.cancel()
                    raise InfeasibleBudget(k, len(subsets), time.monotonic() - start)
                gaps[k] = fut.result()
    else:
        for k, subset in enumerate(subsets):
            if compute_cap is not None and time.monotonic() - start > compute_cap:
                raise InfeasibleBudget(k, len(subsets), time.monotonic() - start)
            gaps[k] = gap_for(subset)

    argmax = int(np.argmax(gaps))
    r = float(gaps[argmax])
    return CalibrationResult(
        r=r,
        sigma=r / eps,
        eps=eps,
        mode="oracle",
        m=m,
        subsets_scanned=len(subsets),
        details={
            "gap_min": float(np.min(gaps)),
            "gap_median": float(np.median(gaps)),
            "gap_max_subset": tuple(int(i) for i in subsets[argmax]),
            "fallback_retrains": ctx.fallbacks,
            "elapsed_s": time.monotonic() - start,
        },
    )


def draw_noise(mech: NoiseMechanism, p: int, rng) -> np.ndarray:
    """Draw one noise vector of dimension ``p`` from the mechanism.

    Gaussian noise has i.i.d. N(0, sigma^2) coordinates.  The isotropic
    Laplace mechanism has density proportional to ``exp(-||b|| / sigma)``,
    realized as a Gamma(p, sigma) radius times a uniform unit direction.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    rng = np.random.default_rng(rng)
    if mech.kind == "none":
        return np.zeros(p)
    if mech.kind == "gaussian":
        return rng.normal(0.0, mech.sigma, size=p)
    radius = rng.gamma(shape=p, scale=mech.sigma)
    direction = rng.standard_normal(p)
    direction /= np.linalg.norm(direction)
    return radius * direction


def unlearn(
    fitted: FittedModel,
    model: ModelSpec,
    data: Dataset,
    removal: RemovalRequest,
    calib: CalibrationResult,
    kind: str,
    rng,
    method: str = "fresh",
) -> UnlearnOutput:
    """Approximation step plus randomization step, with both parts recorded."""
    if not np.isfinite(calib.sigma):
        raise ValueError("calibration sigma must be finite")
    if removal.m > calib.m:
        raise ValueError(
            f"removal of size {removal.m} exceeds the calibrated budget m={calib.m}"
        )
    beta_newton = newton_unlearn_step(fitted, model, data, removal, method=method)
    mech = NoiseMechanism.calibrated(kind, calib.sigma)
    noise = draw_noise(mech, data.p, rng)
    return UnlearnOutput(
        beta_newton=beta_newton,
        beta_tilde=beta_newton + noise,
        noise=noise,
        calibration=calib,
    )
