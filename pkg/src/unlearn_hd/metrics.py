"""Prediction-level accuracy divergences between unlearned and retrained fits.

Both metrics average the absolute difference in per-example loss between
the exact retrain ``beta_retrained`` and draws of the randomized
unlearned vector: the generalization variant averages over fresh test
points, the unlearned-data variant over the removed points themselves.
Averaging runs over ``n_noise`` independent draws of the unlearned
vector and all evaluation points; the reported standard error is the
plain Monte Carlo standard error over all evaluated loss differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .losses import ModelSpec

__all__ = ["MetricEstimate", "ged", "ued"]


@dataclass(frozen=True)
class MetricEstimate:
    """Monte Carlo estimate: value, its standard error, and the sample count."""

    value: float
    std_error: float
    n_mc: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise ValueError("metric value must be finite")
        if self.std_error < 0:
            raise ValueError("std_error must be nonnegative")


def _loss_divergence(
    model: ModelSpec,
    retrained: np.ndarray,
    unlearn_sampler,
    points: Dataset,
    n_noise: int,
    rng,
) -> MetricEstimate:
    if n_noise < 1:
        raise ValueError("n_noise must be >= 1")
    rng = np.random.default_rng(rng)
    retrained = np.asarray(retrained, dtype=float).reshape(-1)
    if retrained.shape[0] != points.p:
        raise ValueError("coefficient length does not match the evaluation points")

    z_ref = points.X @ retrained
    loss_ref = np.asarray(model.loss.value(points.y, z_ref))
    diffs = np.empty((n_noise, points.n))
    for k in range(n_noise):
        beta_tilde = np.asarray(unlearn_sampler(rng), dtype=float).reshape(-1)
        z_u = points.X @ beta_tilde
        diffs[k] = np.abs(loss_ref - np.asarray(model.loss.value(points.y, z_u)))

    flat = diffs.ravel()
    value = float(np.mean(flat))
    if flat.size > 1:
        std_error = float(np.std(flat, ddof=1) / np.sqrt(flat.size))
    else:
        std_error = 0.0
    return MetricEstimate(value=value, std_error=std_error, n_mc=int(flat.size))


def ged(
    model: ModelSpec,
    retrained: np.ndarray,
    unlearn_sampler,
    test_set: Dataset,
    n_noise: int,
    rng,
) -> MetricEstimate:
    """Generalization divergence: mean ``|loss(y0|x0@retrained) - loss(y0|x0@tilde)|``.

    ``unlearn_sampler`` is called ``n_noise`` times with the passed
    generator and must return one unlearned coefficient vector per call;
    ``test_set`` holds fresh points drawn independently of training.
    """
    if test_set.n < 1:
        raise ValueError("test set must be non-empty")
    return _loss_divergence(model, retrained, unlearn_sampler, test_set, n_noise, rng)


def ued(
    model: ModelSpec,
    retrained: np.ndarray,
    unlearn_sampler,
    removed: Dataset,
    n_noise: int,
    rng,
) -> MetricEstimate:
    """Same divergence as :func:`ged` but averaged over the removed points."""
    if removed.n < 1:
        raise ValueError("removed set must be non-empty")
    return _loss_divergence(model, retrained, unlearn_sampler, removed, n_noise, rng)
