"""Trade-off functions and certifiability checks.

A trade-off curve maps a type-I error budget ``alpha`` to the smallest
achievable type-II error for testing "retrained" against "unlearned"
outputs.  The canonical curve here is the Gaussian one,

    f(alpha) = Phi(Phi^{-1}(1 - alpha) - eps),

which is exactly the trade-off between N(0, 1) and N(eps, 1); for
isotropic Gaussian noise of scale ``sigma`` around two vectors mu1, mu2
the full p-dimensional testing problem collapses to this scalar curve
with ``eps = ||mu1 - mu2|| / sigma``, independent of the dimension.

The certifiability check is reduced accordingly: the released vector is
indistinguishable at level ``f_{G, eps}`` exactly when the Newton-vs-
retrain gap stays within the calibrated radius ``r = sigma * eps``, so
``check_gpar`` simply counts per-dataset gap violations against a
probability budget.

Normal CDF and quantile go through the complementary error function
(``scipy.special.ndtr``/``ndtri``), accurate to ~1e-15.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "TradeoffCurve",
    "GparReport",
    "gaussian_tradeoff",
    "eps_delta_tradeoff",
    "tradeoff_between_gaussians",
    "empirical_tradeoff_curve",
    "check_gpar",
]

_PROVENANCES = ("analytic_gaussian", "analytic_eps_delta", "empirical")


@dataclass(frozen=True)
class TradeoffCurve:
    """Type-II error as a function of the type-I budget on an alpha grid."""

    alphas: np.ndarray
    betas: np.ndarray
    provenance: str

    def __post_init__(self) -> None:
        alphas = np.asarray(self.alphas, dtype=float)
        betas = np.asarray(self.betas, dtype=float)
        if alphas.ndim != 1 or alphas.shape != betas.shape:
            raise ValueError("alphas and betas must be matching 1-d arrays")
        if alphas.size == 0:
            raise ValueError("curve needs at least one grid point")
        if np.any(alphas < 0) or np.any(alphas > 1):
            raise ValueError("alphas must lie in [0, 1]")
        if np.any(np.diff(alphas) < 0):
            raise ValueError("alphas must be sorted ascending")
        if np.any(betas < -1e-12) or np.any(betas > 1 + 1e-12):
            raise ValueError("betas must lie in [0, 1]")
        if np.any(np.diff(betas) > 1e-9):
            raise ValueError("betas must be non-increasing in alpha")
        if self.provenance not in _PROVENANCES:
            raise ValueError(f"provenance must be one of {_PROVENANCES}")
        alphas = alphas.copy()
        betas = np.clip(betas, 0.0, 1.0)
        alphas.setflags(write=False)
        betas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "betas", betas)

    def save_csv(self, path) -> None:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("alpha,beta,provenance\n")
            for a, b in zip(self.alphas, self.betas):
                fh.write(f"{a!r},{b!r},{self.provenance}\n")

    @classmethod
    def load_csv(cls, path) -> "TradeoffCurve":
        path = Path(path)
        alphas, betas, prov = [], [], None
        with path.open() as fh:
            header = fh.readline().strip()
            if header != "alpha,beta,provenance":
                raise ValueError(f"{path}: unexpected curve header {header!r}")
            for line in fh:
                a, b, pr = line.strip().split(",")
                alphas.append(float(a))
                betas.append(float(b))
                prov = pr
        return cls(np.asarray(alphas), np.asarray(betas), prov)


@dataclass(frozen=True)
class GparReport:
    """Outcome of a gap-vs-radius certifiability check."""

    eps: float | None
    sigma: float | None
    r_used: float
    violations: int
    trials: int
    phi_hat: float
    phi_budget: float
    passed: bool

    def to_json_dict(self) -> dict:
        return {
            "eps": self.eps,
            "sigma": self.sigma,
            "r_used": self.r_used,
            "violations": self.violations,
            "trials": self.trials,
            "phi_hat": self.phi_hat,
            "phi_budget": self.phi_budget,
            "pass": self.passed,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


def _check_alpha(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("alpha must lie in [0, 1]")
    return alpha


def gaussian_tradeoff(eps: float, alpha):
    """Evaluate ``Phi(Phi^{-1}(1 - alpha) - eps)``; scalar or vectorized."""
    if not (np.isfinite(eps) and eps >= 0):
        raise ValueError("eps must be a finite nonnegative real")
    alpha = _check_alpha(alpha)
    with np.errstate(invalid="ignore"):
        out = ndtr(ndtri(1.0 - alpha) - eps)
    # ndtri(0) = -inf and ndtri(1) = +inf propagate correctly, but make the
    # endpoints exact rather than relying on inf arithmetic
    out = np.where(alpha == 0.0, 1.0, out)
    out = np.where(alpha == 1.0, 0.0, out)
    return out if out.ndim else float(out)


def eps_delta_tradeoff(eps: float, delta: float, alpha):
    """The piecewise-linear curve ``max(0, 1-delta-e^eps*a, e^-eps*(1-delta-a))``."""
    if not np.isfinite(eps):
        raise ValueError("eps must be finite")
    if not (0 <= delta <= 1):
        raise ValueError("delta must lie in [0, 1]")
    alpha = _check_alpha(alpha)
    branch1 = 1.0 - delta - np.exp(eps) * alpha
    branch2 = np.exp(-eps) * (1.0 - delta - alpha)
    out = np.maximum(0.0, np.maximum(branch1, branch2))
    return out if out.ndim else float(out)


def tradeoff_between_gaussians(mu1, mu2, sigma: float, alphas) -> TradeoffCurve:
    """Exact trade-off curve between ``mu1 + sigma*N(0, I)`` and ``mu2 + sigma*N(0, I)``.

    The testing problem between two isotropic Gaussians reduces to the
    scalar pair ``N(0,1)`` vs ``N(||mu1 - mu2||/sigma, 1)`` regardless of
    dimension.
    """
    mu1 = np.asarray(mu1, dtype=float).reshape(-1)
    mu2 = np.asarray(mu2, dtype=float).reshape(-1)
    if mu1.shape != mu2.shape:
        raise ValueError("mu1 and mu2 must have the same length")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    eps = float(np.linalg.norm(mu1 - mu2)) / sigma
    alphas = _check_alpha(alphas)
    return TradeoffCurve(
        alphas=alphas, betas=gaussian_tradeoff(eps, alphas), provenance="analytic_gaussian"
    )


def empirical_tradeoff_curve(samples_p, samples_q, alphas) -> TradeoffCurve:
    """Empirical trade-off of one-sided threshold tests on scalar statistics.

    The inputs are test statistics (for isotropic Gaussian mechanisms the
    caller projects vector outputs onto the mean-difference direction,
    which is the likelihood-ratio statistic, so threshold tests are
    optimal).  The rejection region is ``stat > t``; for each alpha the
    threshold is the smallest one whose *empirical* type-I error does not
    exceed alpha — no test randomization, so the estimate is conservative
    by at most 1/len(samples_p).
    """
    sp = np.sort(np.asarray(samples_p, dtype=float).reshape(-1))
    sq = np.sort(np.asarray(samples_q, dtype=float).reshape(-1))
    if sp.size == 0 or sq.size == 0:
        raise ValueError("both sample sets must be non-empty")
    alphas = _check_alpha(np.atleast_1d(alphas))
    n_p = sp.size
    # number of P-samples allowed above the threshold at each level
    k = np.minimum((alphas * n_p).astype(np.intp), n_p)
    thresholds = np.where(k >= n_p, -np.inf, sp[np.maximum(n_p - 1 - k, 0)])
    betas = np.searchsorted(sq, thresholds, side="right") / sq.size
    betas = np.minimum.accumulate(betas)  # remove tie-induced jitter
    return TradeoffCurve(alphas=alphas, betas=betas, provenance="empirical")


def check_gpar(
    gaps,
    r: float,
    phi_budget: float,
    eps: float | None = None,
    sigma: float | None = None,
) -> GparReport:
    """Count per-dataset gap violations of the radius ``r``.

    ``gaps`` holds one supremum of the Newton-vs-retrain distance per
    dataset replication; the check passes when the violation fraction
    stays within ``phi_budget``.
    """
    gaps = np.asarray(gaps, dtype=float).reshape(-1)
    if gaps.size == 0:
        raise ValueError("gaps must be non-empty")
    if np.any(gaps < 0):
        raise ValueError("gaps must be nonnegative")
    if not (0 <= phi_budget <= 1):
        raise ValueError("phi_budget must lie in [0, 1]")
    violations = int(np.sum(gaps > r))
    phi_hat = violations / gaps.size
    return GparReport(
        eps=eps,
        sigma=sigma,
        r_used=float(r),
        violations=violations,
        trials=int(gaps.size),
        phi_hat=phi_hat,
        phi_budget=float(phi_budget),
        passed=bool(phi_hat <= phi_budget),
    )
