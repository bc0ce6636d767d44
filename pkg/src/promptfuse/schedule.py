"""Noise schedule construction and deterministic DDIM stepping, both directions.

The schedule follows the scaled-linear convention: sqrt(beta) is interpolated
linearly between the endpoints and squared, then

    abar_t = prod_{s<=t} (1 - beta_s).

Inversion applies, verbatim,

    z_{t+1} = sqrt(abar_{t+1}/abar_t) * z_t
            + (sqrt(1/abar_{t+1} - 1) - sqrt(1/abar_t - 1)) * eps

and sampling either the exact algebraic inverse of that map
("paper-exact-inverse", the default, which makes round trips provable) or the
standard DDIM update through the predicted clean sample ("standard-ddim").

Step arithmetic runs in float64 regardless of input dtype: a 50-step f32
round trip accumulates ~1e-4 of error through the noisy end of the
trajectory, while f64 keeps it below 1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import INVERSION_FORMULAS


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal coefficients abar_t over the training timesteps."""

    alphas_cumprod: np.ndarray
    beta_start: float
    beta_end: float

    def __post_init__(self):
        abar = np.asarray(self.alphas_cumprod, dtype=np.float64)
        if abar.ndim != 1 or abar.size < 1:
            raise ValueError("alphas_cumprod must be a non-empty 1-D array")
        if not ((abar > 0.0) & (abar < 1.0)).all():
            raise ValueError("alphas_cumprod must lie strictly inside (0, 1)")
        if abar.size > 1 and not (np.diff(abar) < 0.0).all():
            raise ValueError("alphas_cumprod must be strictly decreasing")
        abar = abar.copy()
        abar.flags.writeable = False
        object.__setattr__(self, "alphas_cumprod", abar)

    @property
    def num_train_steps(self) -> int:
        return int(self.alphas_cumprod.size)

    def abar(self, t: int) -> float:
        """Cumulative signal coefficient at training timestep t."""
        if not 0 <= t < self.num_train_steps:
            raise IndexError(f"timestep {t} outside [0, {self.num_train_steps})")
        return float(self.alphas_cumprod[t])


@dataclass(frozen=True)
class TimestepSequence:
    """Ascending training-timestep indices visited by the DDIM loop."""

    steps: tuple[int, ...]
    num_train_steps: int

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("timesteps must be strictly ascending")
        if steps and not (0 <= steps[0] and steps[-1] < self.num_train_steps):
            raise ValueError(
                f"timesteps must lie in [0, {self.num_train_steps}), got {steps[0]}..{steps[-1]}"
            )
        object.__setattr__(self, "steps", steps)

    def __len__(self) -> int:
        return len(self.steps)

    def transitions(self) -> tuple[tuple[int, int], ...]:
        """(source, destination) timestep pairs walked by one inversion pass.

        Consecutive entries pair up; a final transition to the terminal
        training timestep is appended when the subsampled sequence stops
        short of it, so the noisy end of the trajectory reaches abar_{T-1}.
        Sampling walks the same pairs in reverse.
        """
        pairs = list(zip(self.steps, self.steps[1:]))
        terminal = self.num_train_steps - 1
        if self.steps and self.steps[-1] < terminal:
            pairs.append((self.steps[-1], terminal))
        return tuple(pairs)


def build_schedule(
    num_train_steps: int,
    beta_start: float = 0.00085,
    beta_end: float = 0.012,
) -> NoiseSchedule:
    """Scaled-linear beta schedule; defaults match the SD v1.x convention."""
    if num_train_steps < 1:
        raise ValueError("num_train_steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    sqrt_betas = np.linspace(
        math.sqrt(beta_start), math.sqrt(beta_end), num_train_steps, dtype=np.float64
    )
    betas = sqrt_betas * sqrt_betas
    return NoiseSchedule(
        alphas_cumprod=np.cumprod(1.0 - betas),
        beta_start=float(beta_start),
        beta_end=float(beta_end),
    )


def select_timesteps(schedule: NoiseSchedule, num_ddim_steps: int) -> TimestepSequence:
    """Evenly strided ascending indices: stride floor(T / num_ddim_steps)."""
    total = schedule.num_train_steps
    if num_ddim_steps < 1:
        raise ValueError("num_ddim_steps must be >= 1")
    if num_ddim_steps > total:
        raise ValueError(f"cannot select {num_ddim_steps} of {total} timesteps")
    stride = total // num_ddim_steps
    steps = tuple(i * stride for i in range(num_ddim_steps))
    return TimestepSequence(steps=steps, num_train_steps=total)


def ddim_invert_step(
    z_t: np.ndarray, eps: np.ndarray, abar_t: float, abar_next: float
) -> np.ndarray:
    """One deterministic inversion step toward noise; pure in its inputs."""
    z_t, eps = _checked_step_args(z_t, eps, abar_t, abar_next)
    scale = math.sqrt(abar_next / abar_t)
    drift = _sigma_ratio(abar_next) - _sigma_ratio(abar_t)
    return scale * z_t + drift * eps


def ddim_sample_step(
    z_next: np.ndarray,
    eps: np.ndarray,
    abar_t: float,
    abar_next: float,
    formula: str = "paper-exact-inverse",
) -> np.ndarray:
    """One deterministic sampling step from abar_next (noisier) to abar_t.

    "paper-exact-inverse" algebraically undoes ddim_invert_step;
    "standard-ddim" routes through the predicted clean sample
    x0 = (z - sqrt(1-abar_next) eps) / sqrt(abar_next).
    """
    z_next, eps = _checked_step_args(z_next, eps, abar_t, abar_next)
    if formula == "paper-exact-inverse":
        scale = math.sqrt(abar_next / abar_t)
        drift = _sigma_ratio(abar_next) - _sigma_ratio(abar_t)
        return (z_next - drift * eps) / scale
    if formula == "standard-ddim":
        x0 = (z_next - math.sqrt(1.0 - abar_next) * eps) / math.sqrt(abar_next)
        return math.sqrt(abar_t) * x0 + math.sqrt(1.0 - abar_t) * eps
    raise ValueError(f"formula must be one of {INVERSION_FORMULAS}, got {formula!r}")


def _sigma_ratio(abar: float) -> float:
    # sqrt(1/abar - 1), the noise-to-signal coefficient in the printed update
    return math.sqrt(1.0 / abar - 1.0)


def _checked_step_args(z, eps, abar_t, abar_next):
    z = np.asarray(z, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z.shape != eps.shape:
        raise ValueError(f"latent shape {z.shape} != noise shape {eps.shape}")
    for name, value in (("abar_t", abar_t), ("abar_next", abar_next)):
        if not 0.0 < value < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {value}")
    if not abar_next < abar_t:
        raise ValueError(
            f"abar_next ({abar_next}) must be below abar_t ({abar_t}): "
            "steps always bridge a less-noisy and a noisier point"
        )
    return z, eps
