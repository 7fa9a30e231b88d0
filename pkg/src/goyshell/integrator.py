"""Adaptive embedded Runge-Kutta integration with dense output.

The solver is a Dormand-Prince 5(4) pair with the classic quartic
interpolant, a step controller dt_new = dt * clamp(safety * err^(-1/5),
0.2, 5.0), and three distinguishable failure modes: step-budget
exhaustion (the stiffness signature), non-finite states, and step-size
underflow (the instability signature).  All integration state lives in
the real interleaved view; everything is deterministic, so identical
inputs produce bit-identical solutions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels as _k
from .model import GoyParams, ShellState, as_real, coupling_coefficients, wavenumbers

__all__ = [
    "IntegratorConfig",
    "SolveStats",
    "ErrorKind",
    "SolveError",
    "VectorField",
    "reference_field",
    "modified_field",
    "decay_field",
    "rotation_field",
    "constant_field",
    "SegmentSolution",
    "integrate_segment",
    "solve_real",
    "interpolate",
    "integrate_fixed",
    "observed_order",
]


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and guards for one integration segment."""

    rtol: float = 1e-6
    atol: float = 1e-12
    dt_init: float = 1e-4
    # a step 1e4x below anything developed turbulence needs means the
    # state is running away; declare failure instead of grinding on
    dt_min: float = 1e-8
    max_steps: int = 100_000
    safety: float = 0.9

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError(f"rtol must be positive, got {self.rtol}")
        if not self.atol > 0:
            raise ValueError(f"atol must be positive, got {self.atol}")
        if not 0 < self.safety < 1:
            raise ValueError(f"safety must lie in (0, 1), got {self.safety}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if not self.dt_init > 0:
            raise ValueError(f"dt_init must be positive, got {self.dt_init}")
        if not 0 <= self.dt_min < self.dt_init:
            raise ValueError(
                f"dt_min must satisfy 0 <= dt_min < dt_init, got {self.dt_min}"
            )


@dataclass(frozen=True)
class SolveStats:
    accepted: int
    rejected: int
    min_dt: float


class ErrorKind(str, enum.Enum):
    MAX_STEPS_EXCEEDED = "MaxStepsExceeded"
    NON_FINITE_STATE = "NonFiniteState"
    STEP_UNDERFLOW = "StepUnderflow"


class SolveError(RuntimeError):
    """An integration segment failed; carries which guard tripped."""

    def __init__(self, kind: ErrorKind, t_fail: float, steps_taken: int):
        self.kind = kind
        self.t_fail = t_fail
        self.steps_taken = steps_taken
        super().__init__(f"{kind.value} at t={t_fail} after {steps_taken} steps")


_STATUS_TO_KIND = {
    _k.STATUS_MAX_STEPS: ErrorKind.MAX_STEPS_EXCEEDED,
    _k.STATUS_NON_FINITE: ErrorKind.NON_FINITE_STATE,
    _k.STATUS_UNDERFLOW: ErrorKind.STEP_UNDERFLOW,
}


@dataclass(frozen=True)
class VectorField:
    """A compiled right-hand side plus a factory for its argument tuple.

    ``make_args`` builds a fresh tuple per solve so that scratch
    buffers are never shared between concurrent integrations.
    """

    fn: Callable
    dim: int
    make_args: Callable[[], tuple]


def _goy_field(p: GoyParams, coeff: float, forcing: complex) -> VectorField:
    a, b, c = coupling_coefficients(p)
    k = wavenumbers(p)
    k2 = k * k
    n = p.n_shells
    f_idx = p.forcing_shell - 1
    coeff = float(coeff)
    f_re = float(forcing.real)
    f_im = float(forcing.imag)

    def make_args():
        return (a, b, c, k2, coeff, f_re, f_im, f_idx, np.zeros(n + 4, np.complex128))

    return VectorField(fn=_k.goy_rhs, dim=2 * n, make_args=make_args)


def reference_field(p: GoyParams) -> VectorField:
    """Reference dynamics with viscous dissipation nu * k^2 * u."""
    return _goy_field(p, p.nu, p.forcing)


def modified_field(p: GoyParams, theta: float) -> VectorField:
    """Learnable dynamics with the diffusive model theta * k^2 * u."""
    return _goy_field(p, theta, p.forcing)


def decay_field(rates: np.ndarray) -> VectorField:
    rates = np.ascontiguousarray(np.atleast_1d(rates), dtype=np.float64)
    return VectorField(fn=_k.decay_rhs, dim=rates.shape[0], make_args=lambda: (rates,))


def rotation_field(omega: float) -> VectorField:
    return VectorField(fn=_k.rotation_rhs, dim=2, make_args=lambda: (float(omega),))


def constant_field(slopes: np.ndarray) -> VectorField:
    slopes = np.ascontiguousarray(np.atleast_1d(slopes), dtype=np.float64)
    return VectorField(
        fn=_k.constant_rhs, dim=slopes.shape[0], make_args=lambda: (slopes,)
    )


@dataclass(frozen=True, eq=False)
class OdeResult:
    """Raw solver output in the real view."""

    t0: float
    t1: float
    ts: np.ndarray
    ys: np.ndarray
    qs: np.ndarray
    stats: SolveStats

    @property
    def final(self) -> np.ndarray:
        return self.ys[-1].copy()

    def eval(self, t: float) -> np.ndarray:
        if not self.t0 <= t <= self.t1:
            raise ValueError(f"t={t} outside segment [{self.t0}, {self.t1}]")
        if self.qs.shape[0] == 0 and not (t == self.t0 or t == self.t1):
            raise ValueError("segment was solved without dense output")
        out = np.empty(self.ys.shape[1])
        _k.dense_eval(self.ts, self.ys, self.qs, t, out)
        return out


def solve_real(
    field: VectorField,
    x0: np.ndarray,
    t0: float,
    duration: float,
    cfg: IntegratorConfig,
    dense: bool = True,
) -> OdeResult:
    """Integrate a real vector field over [t0, t0+duration].

    Raises :class:`SolveError` when a guard trips.  duration == 0 is a
    well-defined identity segment.
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if x0.shape[0] != field.dim:
        raise ValueError(f"state dim {x0.shape[0]} != field dim {field.dim}")
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("non-finite initial state")
    if duration == 0:
        return OdeResult(
            t0=t0,
            t1=t0,
            ts=np.array([t0]),
            ys=x0.copy()[None, :],
            qs=np.empty((0, field.dim, 4)),
            stats=SolveStats(0, 0, math.nan),
        )
    t_end = t0 + duration
    status, t_fail, n_acc, n_rej, min_h, ts, ys, qs = _k.rk45_solve(
        field.fn,
        field.make_args(),
        x0,
        float(t0),
        float(t_end),
        cfg.rtol,
        cfg.atol,
        cfg.dt_init,
        cfg.dt_min,
        cfg.max_steps,
        cfg.safety,
        dense,
    )
    if status != _k.STATUS_OK:
        raise SolveError(_STATUS_TO_KIND[status], t_fail, n_acc + n_rej)
    return OdeResult(
        t0=t0,
        t1=t_end,
        ts=ts,
        ys=ys,
        qs=qs,
        stats=SolveStats(n_acc, n_rej, min_h if math.isfinite(min_h) else math.nan),
    )


@dataclass(frozen=True, eq=False)
class SegmentSolution:
    """Dense record of one forward shell-model segment.

    Knots cover [t0, t1] with no gaps; interpolation at knot times
    reproduces the stored states exactly.
    """

    t0: float
    t1: float
    ts: np.ndarray
    ys: np.ndarray
    qs: np.ndarray
    stats: SolveStats
    n_shells: int

    def eval_real(self, t: float) -> np.ndarray:
        if not self.t0 <= t <= self.t1:
            raise ValueError(f"t={t} outside segment [{self.t0}, {self.t1}]")
        if self.qs.shape[0] == 0 and not (t == self.t0 or t == self.t1):
            raise ValueError("segment was solved without dense output")
        out = np.empty(2 * self.n_shells)
        _k.dense_eval(self.ts, self.ys, self.qs, t, out)
        return out

    def interpolate(self, t: float) -> ShellState:
        return ShellState(u=self.eval_real(t).view(np.complex128), t=t)

    @property
    def initial_state(self) -> ShellState:
        return ShellState(u=self.ys[0].copy().view(np.complex128), t=self.t0)

    @property
    def final_state(self) -> ShellState:
        return ShellState(u=self.ys[-1].copy().view(np.complex128), t=self.t1)


def integrate_segment(
    state: ShellState,
    field: VectorField,
    cfg: IntegratorConfig,
    duration: float,
    dense: bool = True,
) -> SegmentSolution:
    """Advance a shell state by ``duration`` under ``field``.

    The returned solution interpolates anywhere inside the segment
    (order-4 interpolant) when ``dense``; the embedded error estimate
    satisfies the weighted tolerance per accepted step.
    """
    if 2 * state.n_shells != field.dim:
        raise ValueError(
            f"state has {state.n_shells} shells but field dim is {field.dim}"
        )
    res = solve_real(field, as_real(state.u), state.t, duration, cfg, dense)
    return SegmentSolution(
        t0=res.t0,
        t1=res.t1,
        ts=res.ts,
        ys=res.ys,
        qs=res.qs,
        stats=res.stats,
        n_shells=state.n_shells,
    )


def interpolate(sol: SegmentSolution, t: float) -> ShellState:
    """Dense-output state at interior time t (error outside [t0, t1])."""
    return sol.interpolate(t)


def integrate_fixed(
    field: VectorField, x0: np.ndarray, t0: float, duration: float, n_steps: int
) -> np.ndarray:
    """Fixed-step propagation, used by the order-verification harness."""
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    h = duration / n_steps
    return _k.rk45_fixed(field.fn, field.make_args(), x0, float(t0), h, n_steps)


def observed_order(
    field: VectorField,
    x0: np.ndarray,
    duration: float,
    exact_final: np.ndarray,
    base_steps: int = 20,
    refinements: int = 4,
) -> float:
    """Empirical convergence order from fixed-step refinement.

    Halves the step ``refinements`` times and fits the slope of
    log(endpoint error) against log(dt); the propagating solution of
    the embedded pair should come out close to 5.
    """
    exact_final = np.asarray(exact_final, dtype=np.float64)
    hs = []
    errs = []
    for level in range(refinements + 1):
        n = base_steps * 2 ** level
        y = integrate_fixed(field, x0, 0.0, duration, n)
        err = float(np.max(np.abs(y - exact_final)))
        hs.append(duration / n)
        errs.append(err)
    errs = np.array(errs)
    if np.any(errs == 0.0):
        raise ValueError("endpoint error hit zero; test field too trivial for a fit")
    slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
    return float(slope)
