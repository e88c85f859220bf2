"""Adaptive Dormand-Prince 5(4) integration onto a fixed grid, plus the
divergence/convergence filters applied during dataset generation.

The stepper propagates with the 5th-order formula, controls the step from
the embedded 4th-order error estimate (elementary controller, safety 0.9,
growth factors clamped to [0.2, 10]) and reports the solution on the
requested grid through the quartic dense-output interpolant of Shampine
(1986). Coefficients are the standard published ones.

The inner loop works on plain Python floats: systems are at most a few
dimensions, where scalar arithmetic beats numpy dispatch by a wide margin,
and float exceptions give exact non-finite detection.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .expressions import OdeSystem, compile_system

# Dormand & Prince (1980) 5(4) pair. E is the difference between the 5th
# and 4th order weights (7 entries, including the FSAL stage).
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_E = (-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40)
# Quartic interpolant (Shampine 1986): y(t0 + s*h) = y0 + h * K^T P [s, s^2, s^3, s^4]
_P = (
    (1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799),
    (0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072),
    (0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632),
    (0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844),
    (0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423),
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


class IntegrationFailure(Exception):
    """Integration could not produce a finite trajectory on the grid."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray   # (N,), strictly increasing
    states: np.ndarray  # (N, D), finite

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        if times.ndim != 1 or states.ndim != 2 or states.shape[0] != times.shape[0]:
            raise ValueError("times must be (N,), states (N, D)")
        if times.shape[0] < 2:
            raise ValueError("a trajectory needs at least 2 points")
        if not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(states))):
            raise ValueError("trajectory entries must be finite")

    @property
    def dimension(self) -> int:
        return self.states.shape[1]


@dataclass
class IntegrationConfig:
    rtol: float = 1e-3
    atol: float = 1e-6
    t_start: float = 1.0
    t_end: float = 10.0
    grid_size: int = 128
    wall_timeout: float = 1.0
    max_steps: int = 1_000_000
    # step cap as a fraction of the span; keeps flat trajectory tails
    # resolved well below the oscillation threshold instead of riding the
    # error budget with ever-growing steps
    max_step_fraction: float = 0.02
    # generation-only shortcut: give up once |y| passes this bound, far
    # beyond divergence_threshold, since the filter will discard anyway
    abort_threshold: float = math.inf
    divergence_threshold: float = 1e2
    oscillation_threshold: float = 1e-3
    converged_keep_probability: float = 0.1
    ic_scale: float = 1.0

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.t_end <= self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")

    def grid(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.grid_size)


def _initial_step(rhs, y0, f0, span, rtol, atol) -> float:
    """Hairer's starting step heuristic (error-estimator order 4)."""
    d0 = math.sqrt(sum((y / (atol + abs(y) * rtol)) ** 2 for y in y0) / len(y0))
    d1 = math.sqrt(sum((f / (atol + abs(y) * rtol)) ** 2 for f, y in zip(f0, y0)) / len(y0))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = tuple(y + h0 * f for y, f in zip(y0, f0))
    f1 = rhs(y1)
    if not all(math.isfinite(v) for v in f1):
        return min(1e-6, span)
    d2 = (
        math.sqrt(
            sum(((a - b) / (atol + abs(y) * rtol)) ** 2 for a, b, y in zip(f1, f0, y0))
            / len(y0)
        )
        / h0
    )
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def integrate(
    sys: OdeSystem,
    x0,
    cfg: IntegrationConfig | None = None,
    times: np.ndarray | None = None,
) -> Trajectory:
    """Integrate dx/dt = f(x) from x0 at times[0], reported exactly on `times`.

    `times` defaults to the homogeneous grid linspace(t_start, t_end,
    grid_size). Raises IntegrationFailure when a state goes non-finite,
    the step size underflows, the step budget is exhausted, the wall
    timeout is exceeded, or the abort threshold is crossed.
    """
    cfg = cfg or IntegrationConfig()
    if times is None:
        times = cfg.grid()
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.shape[0] < 2 or not np.all(np.diff(times) > 0):
        raise ValueError("times must be a strictly increasing vector of length >= 2")

    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.dimension,):
        raise ValueError(f"x0 must have length {sys.dimension}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")

    dim = sys.dimension
    rhs = compile_system(sys)
    t0, t_end = float(times[0]), float(times[-1])
    span = t_end - t0
    deadline = time.monotonic() + cfg.wall_timeout
    min_step = 1e-12 * span
    max_step = cfg.max_step_fraction * span
    rtol, atol = cfg.rtol, cfg.atol
    abort = cfg.abort_threshold

    y = tuple(float(v) for v in x0)
    f = rhs(y)
    if not all(math.isfinite(v) for v in f):
        raise IntegrationFailure("nonfinite")
    h = min(_initial_step(rhs, y, f, span, rtol, atol), max_step)

    n_grid = times.shape[0]
    states = np.empty((n_grid, dim))
    states[0] = y
    fill = 1

    t = t0
    n_steps = 0
    rng_dim = range(dim)
    while fill < n_grid:
        if n_steps >= cfg.max_steps:
            raise IntegrationFailure("step_limit")
        if time.monotonic() > deadline:
            raise IntegrationFailure("timeout")
        if h < min_step:
            raise IntegrationFailure("step_underflow")
        clamped = t + h >= t_end
        if clamped:
            h = t_end - t
        n_steps += 1

        k1 = f
        a = _A[1]
        k2 = rhs(tuple(y[i] + h * a[0] * k1[i] for i in rng_dim))
        a = _A[2]
        k3 = rhs(tuple(y[i] + h * (a[0] * k1[i] + a[1] * k2[i]) for i in rng_dim))
        a = _A[3]
        k4 = rhs(
            tuple(y[i] + h * (a[0] * k1[i] + a[1] * k2[i] + a[2] * k3[i]) for i in rng_dim)
        )
        a = _A[4]
        k5 = rhs(
            tuple(
                y[i] + h * (a[0] * k1[i] + a[1] * k2[i] + a[2] * k3[i] + a[3] * k4[i])
                for i in rng_dim
            )
        )
        a = _A[5]
        k6 = rhs(
            tuple(
                y[i]
                + h
                * (
                    a[0] * k1[i]
                    + a[1] * k2[i]
                    + a[2] * k3[i]
                    + a[3] * k4[i]
                    + a[4] * k5[i]
                )
                for i in rng_dim
            )
        )
        b = _B
        y_new = tuple(
            y[i]
            + h
            * (
                b[0] * k1[i]
                + b[2] * k3[i]
                + b[3] * k4[i]
                + b[4] * k5[i]
                + b[5] * k6[i]
            )
            for i in rng_dim
        )
        f_new = rhs(y_new)
        stages = (k1, k2, k3, k4, k5, k6, f_new)
        finite = all(math.isfinite(v) for v in y_new) and all(
            math.isfinite(v) for k in stages for v in k
        )
        if not finite:
            # a stage or the state blew up: retry with a much smaller step
            h *= _MIN_FACTOR
            continue

        e = _E
        err_sq = 0.0
        for i in rng_dim:
            err_i = h * (
                e[0] * k1[i]
                + e[2] * k3[i]
                + e[3] * k4[i]
                + e[4] * k5[i]
                + e[5] * k6[i]
                + e[6] * f_new[i]
            )
            scale = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            err_sq += (err_i / scale) ** 2
        err_norm = math.sqrt(err_sq / dim)

        if err_norm <= 1.0:
            t_new = t_end if clamped else t + h
            if times[fill] <= t_new:
                # quartic dense output for grid points inside (t, t_new]
                q = [
                    tuple(sum(_P[j][c] * stages[j][i] for j in range(7)) for c in range(4))
                    for i in rng_dim
                ]
                while fill < n_grid and times[fill] <= t_new:
                    tau = times[fill]
                    if tau == t_new:
                        states[fill] = y_new
                    else:
                        s1 = (tau - t) / h
                        s2 = s1 * s1
                        s3 = s2 * s1
                        s4 = s2 * s2
                        states[fill] = [
                            y[i]
                            + h * (q[i][0] * s1 + q[i][1] * s2 + q[i][2] * s3 + q[i][3] * s4)
                            for i in rng_dim
                        ]
                    fill += 1
            t, y, f = t_new, y_new, f_new
            if abort != math.inf and any(abs(v) > abort for v in y_new):
                raise IntegrationFailure("aborted_divergent")
            factor = (
                _MAX_FACTOR
                if err_norm == 0.0
                else min(_MAX_FACTOR, _SAFETY * err_norm**-0.2)
            )
            h = min(h * factor, max_step)
        else:
            h *= max(_MIN_FACTOR, _SAFETY * err_norm**-0.2)

    if not np.all(np.isfinite(states)):
        raise IntegrationFailure("nonfinite")
    return Trajectory(times=times, states=states)


def integrate_fixed_step(sys: OdeSystem, x0, t0: float, t_end: float, n_steps: int) -> np.ndarray:
    """Propagate with the 5th-order formula at a fixed step; returns the end state.

    No error control; used to measure the method's convergence order.
    """
    rhs = compile_system(sys)
    h = (t_end - t0) / n_steps
    y = tuple(float(v) for v in np.asarray(x0, dtype=float))
    rng_dim = range(len(y))
    for _ in range(n_steps):
        k = [rhs(y)]
        for s in range(1, 6):
            a = _A[s]
            k.append(
                rhs(
                    tuple(
                        y[i] + h * sum(a[j] * k[j][i] for j in range(s)) for i in rng_dim
                    )
                )
            )
        y = tuple(
            y[i] + h * sum(_B[j] * k[j][i] for j in range(6)) for i in rng_dim
        )
    return np.array(y)


def sample_initial_condition(dim: int, ic_scale: float, rng: np.random.Generator) -> np.ndarray:
    """x0 with i.i.d. N(0, ic_scale) coordinates (ic_scale is the variance)."""
    if dim < 1 or ic_scale <= 0:
        raise ValueError("need dim >= 1 and ic_scale > 0")
    return rng.normal(0.0, math.sqrt(ic_scale), size=dim)


def oscillation(traj: Trajectory, window_fraction: float = 0.25) -> np.ndarray:
    """Per-dimension max minus min over the trailing window of the time range."""
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    t_cut = traj.times[-1] - window_fraction * (traj.times[-1] - traj.times[0])
    window = traj.states[traj.times >= t_cut - 1e-12]
    return window.max(axis=0) - window.min(axis=0)


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str  # "ok" | "divergent" | "converged"


def passes_filters(
    traj: Trajectory, cfg: IntegrationConfig, rng: np.random.Generator
) -> FilterDecision:
    """Discard divergent trajectories; discard converged ones 90% of the time.

    Divergence: any |state| above divergence_threshold on the grid output.
    Convergence: oscillation over the last quarter below the threshold in
    every dimension; those are kept only with converged_keep_probability.
    """
    if np.max(np.abs(traj.states)) > cfg.divergence_threshold:
        return FilterDecision(keep=False, reason="divergent")
    osc = oscillation(traj, 0.25)
    if np.all(osc < cfg.oscillation_threshold):
        keep = rng.random() < cfg.converged_keep_probability
        return FilterDecision(keep=keep, reason="converged")
    return FilterDecision(keep=True, reason="ok")
