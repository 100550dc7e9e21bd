"""Loss and regularizer families for regularized GLM objectives.

The training objective everywhere in this package is

    L(beta) = lam * r(beta) + sum_i loss(y_i | x_i @ beta),

so a model is fully described by a per-example loss acting on the linear
predictor ``z = x @ beta``, a separable regularizer, and the weight
``lam``.  Every loss family is convex in ``z`` with a nonnegative second
derivative, and every regularizer family is separable with per-coordinate
curvature bounded below by ``RegSpec.nu > 0``; together these make the
objective ``lam * nu``-strongly convex and keep a single Newton step
well defined after data removal.

All evaluators accept scalars or broadcastable numpy arrays in ``y`` and
``z``.  Derivatives are taken with respect to the linear predictor ``z``,
the direction in which the Newton machinery differentiates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

__all__ = [
    "LOSS_FAMILIES",
    "REG_FAMILIES",
    "ResponseDomainError",
    "LossSpec",
    "RegSpec",
    "ModelSpec",
    "loss_value",
    "loss_derivatives",
    "loss_third_derivative",
    "reg_eval",
]

LOSS_FAMILIES = ("quadratic", "logistic", "poisson")
REG_FAMILIES = ("ridge", "elastic_smooth")


class ResponseDomainError(ValueError):
    """A response value lies outside the loss family's domain."""


def _softplus(z: np.ndarray) -> np.ndarray:
    # log(1 + e^z) without overflow for large |z|
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


@dataclass(frozen=True)
class LossSpec:
    """Per-example loss ``loss(y | z)``, convex in the linear predictor.

    Supported families and their response domains:

    * ``quadratic``: ``(y - z)**2`` with ``y`` any real.
    * ``logistic``: ``log(1 + e^z) - y*z`` with ``y`` in ``{0, 1}``.
    * ``poisson``: ``e^z - y*z + log(y!)`` with ``y`` a nonnegative
      integer (canonical log link).

    Each family is a negative log likelihood up to an additive constant,
    hence nonnegative.
    """

    family: str

    def __post_init__(self) -> None:
        if self.family not in LOSS_FAMILIES:
            raise ValueError(
                f"unknown loss family {self.family!r}; expected one of {LOSS_FAMILIES}"
            )

    def check_response(self, y) -> None:
        """Raise :class:`ResponseDomainError` if ``y`` is out of domain."""
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ResponseDomainError(f"{self.family} response must be finite")
        if self.family == "logistic":
            if not np.all((y == 0.0) | (y == 1.0)):
                raise ResponseDomainError("logistic response must be coded 0/1")
        elif self.family == "poisson":
            if not np.all((y >= 0.0) & (y == np.floor(y))):
                raise ResponseDomainError(
                    "poisson response must be a nonnegative integer"
                )

    def value(self, y, z):
        """Evaluate ``loss(y | z)``; nonnegative and finite on the float range."""
        self.check_response(y)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.family == "quadratic":
            out = (y - z) ** 2
        elif self.family == "logistic":
            out = _softplus(z) - y * z
        else:  # poisson
            out = np.exp(z) - y * z + gammaln(y + 1.0)
        return out if out.ndim else float(out)

    def derivatives(self, y, z):
        """First and second derivatives of the loss with respect to ``z``.

        The second derivative is nonnegative for every family (convexity
        in the linear predictor).
        """
        self.check_response(y)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.family == "quadratic":
            d1 = -2.0 * (y - z)
            d2 = np.full(np.broadcast(y, z).shape, 2.0)
        elif self.family == "logistic":
            s = expit(z)
            d1 = s - y
            d2 = s * expit(-z)
            d2 = np.broadcast_to(d2, np.broadcast(y, z).shape).copy()
        else:  # poisson
            ez = np.exp(z)
            d1 = ez - y
            d2 = np.broadcast_to(ez, np.broadcast(y, z).shape).copy()
        if d1.ndim:
            return d1, d2
        return float(d1), float(d2)

    def third_derivative(self, y, z):
        """Third z-derivative; only exercised by the growth-witness checks."""
        self.check_response(y)
        z = np.asarray(z, dtype=float)
        if self.family == "quadratic":
            out = np.zeros_like(z)
        elif self.family == "logistic":
            s = expit(z)
            out = s * expit(-z) * (1.0 - 2.0 * s)
        else:  # poisson
            out = np.exp(z)
        return out if out.ndim else float(out)

    def growth_constants(self) -> tuple[float, float]:
        """Constants ``(C, s)`` with ``max(|loss|, |d1|, |d3|) <= C*(1+|y|^s+|z|^s)``.

        For quadratic and logistic the bound holds on the whole plane.
        The canonical Poisson rate ``e^z`` admits no global polynomial
        bound; its constant is sized so the bound holds on the probed
        range ``|z| <= 100``.
        """
        if self.family == "quadratic":
            return 2.0, 2.0
        if self.family == "logistic":
            return 2.0, 1.0
        return math.exp(100.0), 2.0


@dataclass(frozen=True)
class RegSpec:
    """Separable regularizer ``r(beta) = sum_k r_k(beta_k)``.

    * ``ridge``: ``r_k(t) = t**2`` with curvature exactly 2.
    * ``elastic_smooth``: ridge plus a pseudo-Huber smoothed l1 term
      ``l1_weight * delta * (sqrt(1 + (t/delta)**2) - 1)``; infinitely
      differentiable, so Newton steps stay valid where raw l1 would not.

    Both families keep ``r_k'' >= nu = 2`` everywhere, which is the
    strong-convexity floor the unlearning calibration relies on.
    """

    family: str
    l1_weight: float = 1.0
    huber_delta: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in REG_FAMILIES:
            raise ValueError(
                f"unknown regularizer family {self.family!r}; expected one of {REG_FAMILIES}"
            )
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be >= 0")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be > 0")

    @property
    def nu(self) -> float:
        """Strong-convexity constant: ``r_k''(t) >= nu`` for all ``t``."""
        return 2.0

    def value(self, beta: np.ndarray) -> float:
        beta = np.asarray(beta, dtype=float)
        if self.family == "ridge":
            return float(beta @ beta)
        u = np.sqrt(1.0 + (beta / self.huber_delta) ** 2)
        return float(beta @ beta + self.l1_weight * self.huber_delta * np.sum(u - 1.0))

    def grad(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if self.family == "ridge":
            return 2.0 * beta
        u = np.sqrt(1.0 + (beta / self.huber_delta) ** 2)
        return 2.0 * beta + self.l1_weight * beta / (self.huber_delta * u)

    def hess_diag(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if self.family == "ridge":
            return np.full(beta.shape, 2.0)
        u = np.sqrt(1.0 + (beta / self.huber_delta) ** 2)
        return 2.0 + self.l1_weight / (self.huber_delta * u**3)


@dataclass(frozen=True)
class ModelSpec:
    """Loss family, regularizer family and the regularization weight."""

    loss: LossSpec
    reg: RegSpec
    lam: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lam must be a positive finite real")

    @property
    def strong_convexity(self) -> float:
        """Lower bound ``lam * nu`` on the Hessian of the full objective."""
        return self.lam * self.reg.nu

    @classmethod
    def from_dict(cls, cfg: dict) -> "ModelSpec":
        """Build from the string identifiers used in config files."""
        reg_kwargs = {}
        if "l1_weight" in cfg:
            reg_kwargs["l1_weight"] = float(cfg["l1_weight"])
        if "huber_delta" in cfg:
            reg_kwargs["huber_delta"] = float(cfg["huber_delta"])
        return cls(
            loss=LossSpec(cfg.get("loss", "logistic")),
            reg=RegSpec(cfg.get("reg", "ridge"), **reg_kwargs),
            lam=float(cfg.get("lambda", cfg.get("lam", 0.5))),
        )


def loss_value(spec: LossSpec, y, z):
    """Functional form of :meth:`LossSpec.value`."""
    return spec.value(y, z)


def loss_derivatives(spec: LossSpec, y, z):
    """Functional form of :meth:`LossSpec.derivatives`."""
    return spec.derivatives(y, z)


def loss_third_derivative(spec: LossSpec, y, z):
    """Functional form of :meth:`LossSpec.third_derivative`."""
    return spec.third_derivative(y, z)


def reg_eval(spec: RegSpec, beta) -> tuple[float, np.ndarray, np.ndarray]:
    """Evaluate ``(r(beta), grad r(beta), diag of hess r(beta))`` at once."""
    beta = np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    return spec.value(beta), spec.grad(beta), spec.hess_diag(beta)
