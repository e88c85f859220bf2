"""Observation corruption: multiplicative Gaussian noise and random subsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrator import Trajectory


class DegenerateTrajectoryError(ValueError):
    """Subsampling would leave fewer than 2 points."""


@dataclass
class CorruptionConfig:
    noise_sigma: float = 0.0     # std of the multiplicative noise factor
    subsample_rho: float = 0.0   # fraction of points dropped

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.subsample_rho < 1:
            raise ValueError("subsample_rho must lie in [0, 1)")


def add_noise(traj: Trajectory, sigma: float, rng: np.random.Generator) -> Trajectory:
    """Each state entry x -> (1 + xi) * x with xi ~ N(0, sigma^2), times untouched."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return traj
    xi = rng.normal(0.0, sigma, size=traj.states.shape)
    return Trajectory(times=traj.times, states=traj.states * (1.0 + xi))


def subsample(traj: Trajectory, rho: float, rng: np.random.Generator) -> Trajectory:
    """Keep round((1-rho)*N) grid points chosen uniformly at random.

    The first point is always retained: inference rescales states by their
    value at the first observation, so t0 anchors the transform.
    """
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    n = traj.times.shape[0]
    n_keep = int(np.floor((1.0 - rho) * n + 0.5))  # round half up
    if n_keep < 2:
        raise DegenerateTrajectoryError(f"subsampling would keep {n_keep} of {n} points")
    if n_keep == n:
        return traj
    rest = rng.choice(n - 1, size=n_keep - 1, replace=False) + 1
    idx = np.concatenate(([0], np.sort(rest)))
    return Trajectory(times=traj.times[idx], states=traj.states[idx])


def corrupt(traj: Trajectory, cfg: CorruptionConfig, rng: np.random.Generator) -> Trajectory:
    """Noise first, then subsampling, matching the generation pipeline order."""
    noisy = add_noise(traj, cfg.noise_sigma, rng)
    return subsample(noisy, cfg.subsample_rho, rng)
