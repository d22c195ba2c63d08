"""
Embedded Runge–Kutta time stepping with pluggable step admissibility.

The Dormand–Prince 5(4) pair drives both the Becker–Döring systems and the
LSW particle ODE. Problem-specific rules (positivity, energy monotonicity,
bounded relative motion) enter through hooks; a step rejected by a hook is
retried with half the step size.
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

import numpy as np
from scipy import integrate

from bdlab.errors import ConvergenceError, StepSizeUnderflowError
from bdlab.schemas import IntegratorControls

logger = logging.getLogger(__name__)

SAFETY = 0.9  # multiplicative factor for steps computed from asymptotic behaviour of errors
MIN_FACTOR = 0.2  # minimum allowed decrease in a step size
MAX_FACTOR = 5.0  # maximum allowed increase in a step size
HOOK_FACTOR = 0.5  # decrease after a hook rejection

RightHandSide = Callable[[np.ndarray], np.ndarray]
Projection = Callable[[np.ndarray, np.ndarray], Optional[np.ndarray]]
Admissibility = Callable[[np.ndarray, np.ndarray], Optional[str]]
StepLimit = Callable[[np.ndarray], float]
Observer = Callable[[float, np.ndarray, bool], None]
PostStep = Callable[[float, np.ndarray], np.ndarray]


def rk_step(fun: RightHandSide, y: np.ndarray, f: np.ndarray, h: float,
            A: np.ndarray, B: np.ndarray, K: np.ndarray) -> np.ndarray:
    """
    Perform one explicit Runge–Kutta step of an autonomous system.

    Args:
        fun: Right-hand side
        y: Current state
        f: fun(y)
        h: Step size
        A: Stage coefficients, shape (n_stages, n_stages)
        B: Weights of the propagated solution, shape (n_stages,)
        K: Storage of shape (n_stages + 1, n); the last row receives fun(y_new)

    Returns:
        The propagated state y_new
    """
    K[0] = f
    for s in range(1, A.shape[0]):
        K[s] = fun(y + h * (A[s, :s] @ K[:s]))
    y_new = y + h * (B @ K[:-1])
    K[-1] = fun(y_new)
    return y_new


@dataclass
class IntegrationStats:
    """Bookkeeping of one adaptive integration."""
    accepted: int = 0
    rejected: int = 0
    rejection_reasons: Counter = field(default_factory=Counter)
    t_final: float = 0.0
    dt_smallest: float = math.inf
    dt_largest: float = 0.0

    def accept(self, h: float) -> None:
        self.accepted += 1
        self.dt_smallest = min(self.dt_smallest, h)
        self.dt_largest = max(self.dt_largest, h)

    def reject(self, reason: str) -> None:
        self.rejected += 1
        self.rejection_reasons[reason] += 1


class DormandPrince54:
    """
    Adaptive Dormand–Prince 5(4) integrator.

    The error of the embedded fourth-order solution is measured in the max
    norm against ``atol + rtol * max(|y|, |y_new|)``.
    """
    order = 5
    error_estimator_order = 4
    n_stages = 6
    C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1])
    A = np.array([
        [0, 0, 0, 0, 0],
        [1 / 5, 0, 0, 0, 0],
        [3 / 40, 9 / 40, 0, 0, 0],
        [44 / 45, -56 / 15, 32 / 9, 0, 0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    ])
    B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
    E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])

    def __init__(self, fun: RightHandSide, controls: IntegratorControls, *,
                 atol: Optional[Union[float, np.ndarray]] = None,
                 project: Optional[Projection] = None,
                 admissible: Optional[Admissibility] = None,
                 step_limit: Optional[StepLimit] = None,
                 post_step: Optional[PostStep] = None):
        self.fun = fun
        self.controls = controls
        self.atol = controls.atol if atol is None else atol
        self.project = project
        self.admissible = admissible
        self.step_limit = step_limit
        self.post_step = post_step
        self.error_exponent = -1.0 / (self.error_estimator_order + 1)

    def _error_norm(self, K: np.ndarray, h: float, y: np.ndarray, y_new: np.ndarray) -> float:
        scale = self.atol + self.controls.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = h * (self.E @ K)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(scale > 0, np.abs(err) / scale, np.where(err == 0, 0.0, np.inf))
        return float(np.max(ratio)) if ratio.size else 0.0

    def integrate(self, y0: np.ndarray, t_end: float, observer: Observer,
                  sample_times: Iterable[float] = ()) -> IntegrationStats:
        """
        Integrate from t = 0 to ``t_end``.

        ``observer(t, y, is_sample)`` is called at t = 0 and after every
        accepted step; steps are shortened so that every requested sample
        time is hit exactly and reported with ``is_sample=True``.

        Raises:
            StepSizeUnderflowError: If the step shrinks below ``dt_min``
            ConvergenceError: If ``max_steps`` accepted steps do not reach ``t_end``
        """
        controls = self.controls
        stats = IntegrationStats()
        targets = sorted({float(s) for s in sample_times if 0.0 < s < t_end} | {float(t_end)})
        y = np.array(y0, dtype=float)
        t = 0.0
        dt = controls.dt_init
        K = np.empty((self.n_stages + 1, y.size))
        f = self.fun(y)
        observer(t, y, True)
        for target in targets:
            while t < target:
                remaining = target - t
                h = dt if controls.dt_max is None else min(dt, controls.dt_max)
                if self.step_limit is not None:
                    h = min(h, self.step_limit(y))
                clipped = h >= remaining
                if clipped:
                    h = remaining
                elif h < controls.dt_min:
                    raise StepSizeUnderflowError(t, h, "step limit")

                with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                    y_new = rk_step(self.fun, y, f, h, self.A, self.B, K)
                    error_norm = self._error_norm(K, h, y, y_new)

                reason = None
                if not np.all(np.isfinite(y_new)) or not math.isfinite(error_norm):
                    reason, factor = "non-finite", MIN_FACTOR
                elif error_norm > 1.0:
                    reason = "error"
                    factor = max(MIN_FACTOR, SAFETY * error_norm ** self.error_exponent)
                else:
                    factor = MAX_FACTOR if error_norm == 0 else min(MAX_FACTOR, SAFETY * error_norm ** self.error_exponent)
                    if self.project is not None:
                        projected = self.project(y, y_new)
                        if projected is None:
                            reason, factor = "projection", HOOK_FACTOR
                        else:
                            y_new = projected
                    if reason is None and self.admissible is not None:
                        reason = self.admissible(y, y_new)
                        if reason is not None:
                            factor = HOOK_FACTOR

                if reason is not None:
                    stats.reject(reason)
                    dt = h * factor
                    if dt < controls.dt_min:
                        raise StepSizeUnderflowError(t, dt, reason)
                    logger.debug("step rejected t=%.6g dt=%.3g reason=%s", t, h, reason)
                    continue

                t = target if clipped else t + h
                if self.post_step is not None:
                    y_new = self.post_step(t, y_new)
                y = y_new
                f = self.fun(y)
                stats.accept(h)
                dt = max(dt, h * factor) if clipped else h * factor
                observer(t, y, clipped)
                if stats.accepted >= controls.max_steps:
                    raise ConvergenceError(
                        f"{controls.max_steps} accepted steps did not reach t={t_end} (stopped at t={t:.6g})"
                    )
        stats.t_final = t
        logger.debug(
            "integration finished t=%.6g accepted=%d rejected=%d reasons=%s",
            t, stats.accepted, stats.rejected, dict(stats.rejection_reasons),
        )
        return stats


def quadrature(times: np.ndarray, values: np.ndarray, method: str = "trapezoid") -> tuple[float, float]:
    """
    Integrate sampled values over time.

    Returns:
        (integral, error estimate); the estimate is the difference between the
        composite Simpson and trapezoid rules.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size < 2:
        return 0.0, 0.0
    if not np.all(np.isfinite(values)):
        return math.inf, math.inf
    trap = float(integrate.trapezoid(values, x=times))
    if times.size < 3:
        return trap, 0.0
    simp = float(integrate.simpson(values, x=times))
    estimate = abs(simp - trap)
    return (simp if method == "simpson" else trap), estimate


def cumulative_quadrature(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Running trapezoid integral, starting at 0."""
    if len(times) < 2:
        return np.zeros(len(times))
    return integrate.cumulative_trapezoid(values, x=times, initial=0.0)
