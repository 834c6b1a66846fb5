"""Closed-form two-objective min-norm gradient weighting.

Given the natural-loss gradient theta and the (lambda-scaled) adversarial
loss gradient theta_bar, the convex combination with minimum norm

    min_{gamma in [0,1]} || gamma*theta + (1-gamma)*theta_bar ||^2

has the analytic solution

    gamma* = clip( ((theta_bar - theta) . theta_bar) / ||theta - theta_bar||^2, 0, 1 )

The resulting direction d = gamma*theta + (1-gamma*)theta_bar is a common
descent direction: <d, theta> >= ||d||^2 and <d, theta_bar> >= ||d||^2, so
stepping along -d does not increase either objective to first order, and d
vanishes exactly at Pareto-stationary points.
"""

from __future__ import annotations

import numpy as np

# Below this squared distance the two gradients are treated as identical and
# every gamma gives the same combination; 0.5 is the symmetric choice.
DEGENERATE_SQ_DIST = 1e-24


def _check_pair(theta: np.ndarray, theta_bar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(theta, dtype=np.float64).ravel()
    tb = np.asarray(theta_bar, dtype=np.float64).ravel()
    if t.shape != tb.shape:
        raise ValueError(f"gradient length mismatch: {t.shape[0]} vs {tb.shape[0]}")
    if not np.all(np.isfinite(t)) or not np.all(np.isfinite(tb)):
        raise ValueError("gradients must be finite")
    return t, tb


def gamma_star(theta: np.ndarray, theta_bar: np.ndarray) -> float:
    t, tb = _check_pair(theta, theta_bar)
    diff = t - tb
    denom = float(diff @ diff)
    if denom < DEGENERATE_SQ_DIST:
        return 0.5
    raw = float((tb - t) @ tb) / denom
    return max(min(raw, 1.0), 0.0)


def combine(theta: np.ndarray, theta_bar: np.ndarray, gamma: float) -> np.ndarray:
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    t, tb = _check_pair(theta, theta_bar)
    return gamma * t + (1.0 - gamma) * tb


def min_norm_direction(theta: np.ndarray, theta_bar: np.ndarray) -> tuple[np.ndarray, float]:
    """Convenience: the min-norm combination and its weight in one call."""
    g = gamma_star(theta, theta_bar)
    return combine(theta, theta_bar, g), g
