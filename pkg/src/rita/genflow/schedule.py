"""Noise schedule and forward perturbation for denoising score matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GenFlowError", "NoiseSchedule", "make_noise_schedule", "perturb"]


class GenFlowError(ValueError):
    """Invalid schedule parameters or a failed generation run."""


@dataclass(frozen=True)
class NoiseSchedule:
    """betas indexed 1..N (stored 0-based) with cumulative alpha-bar products."""

    beta: np.ndarray  # (N,)
    alpha_bar: np.ndarray  # (N,) strictly decreasing products of (1 - beta)

    @property
    def n_levels(self) -> int:
        return len(self.beta)


def make_noise_schedule(
    n_levels: int, beta_start: float = 1e-4, beta_end: float = 0.2
) -> NoiseSchedule:
    """Linear beta interpolation; the terminal alpha-bar must be near zero."""
    if n_levels < 1:
        raise GenFlowError("need at least one noise level")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise GenFlowError("betas must satisfy 0 < start <= end < 1")
    beta = np.linspace(beta_start, beta_end, n_levels)
    alpha_bar = np.cumprod(1.0 - beta)
    if np.any(np.diff(alpha_bar) >= 0):
        raise GenFlowError("alpha-bar must be strictly decreasing")
    if n_levels > 1 and alpha_bar[-1] >= 0.05:
        raise GenFlowError(
            f"terminal alpha-bar {alpha_bar[-1]:.4f} is not near zero; "
            "increase the level count or the beta range"
        )
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def perturb(
    x: np.ndarray,
    level: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    mask: np.ndarray | None = None,
):
    """Sample the forward perturbation at one noise level.

    Returns (x_tilde, target_score) where x_tilde = sqrt(ab)*x +
    sqrt(1-ab)*eps and the target is the conditional Gaussian's log-density
    gradient -eps/sqrt(1-ab). Masked entries stay zero in both outputs.
    """
    if not 1 <= level <= schedule.n_levels:
        raise GenFlowError(f"level {level} outside 1..{schedule.n_levels}")
    ab = schedule.alpha_bar[level - 1]
    eps = rng.standard_normal(x.shape)
    if mask is not None:
        eps = eps * mask[..., None] if mask.ndim == x.ndim - 1 else eps * mask
    if ab >= 1.0:
        return x.copy(), np.zeros_like(x)
    x_tilde = np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps
    target = -eps / np.sqrt(1.0 - ab)
    return x_tilde, target
