"""Statistical diagnostics: energy, spectrum, flux, turnover time, the
sliding snapshot window, and the spectrum-slope loss with its state
gradient.

The loss measures how far the log-log slope of the (window-averaged)
energy density E_i = |u_i|^2 / (2 k_i) sits from the Kolmogorov value
-5/3, as a mean squared error over per-shell slopes

    slope_i = (log E_{i+1} - log E_i) / (log k_{i+1} - log k_i).

Averaging happens on the energy densities, not on the complex
amplitudes (phase averaging would cancel), and the gradient is taken
with respect to the newest snapshot only: older window entries were
produced under earlier parameter values and are constants of the
current update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import GoyParams, ShellState, wavenumbers

__all__ = [
    "Spectrum",
    "FluxProfile",
    "SnapshotWindow",
    "LossConfig",
    "LossDomainError",
    "kinetic_energy",
    "dissipation_rate",
    "energy_spectrum",
    "energy_flux",
    "turnover_time",
    "window_mean_spectrum",
    "loss",
    "loss_grad_state",
    "spectrum_slope",
    "profile_to_csv",
]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Per-shell energy density (k_i, E_i), shells 1..N."""

    k: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.k.shape != self.values.shape:
            raise ValueError("k and values must have matching shapes")


@dataclass(frozen=True, eq=False)
class FluxProfile:
    """Per-shell nonlinear energy flux (k_i, Pi_i), shells 1..N."""

    k: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.k.shape != self.values.shape:
            raise ValueError("k and values must have matching shapes")


def kinetic_energy(state: ShellState) -> float:
    """Total kinetic energy sum_i |u_i|^2 / 2."""
    return 0.5 * float(np.sum(np.abs(state.u) ** 2))


def dissipation_rate(state: ShellState, p: GoyParams, coeff: float) -> float:
    """Dissipation rate coeff * sum_i k_i^2 |u_i|^2.

    ``coeff`` is nu for the reference system and theta for the
    modified one.
    """
    k = wavenumbers(p)
    return float(coeff) * float(np.sum(k * k * np.abs(state.u) ** 2))


def injection_rate(state: ShellState, p: GoyParams) -> float:
    """Energy input by the forcing, Re(conj(u_fs) * f)."""
    return float((np.conj(state.u[p.forcing_shell - 1]) * p.forcing).real)


def energy_spectrum(state: ShellState, p: GoyParams) -> Spectrum:
    """Energy density E_i = |u_i|^2 / (2 k_i) over the shells."""
    k = wavenumbers(p)
    return Spectrum(k=k, values=0.5 * np.abs(state.u) ** 2 / k)


def energy_flux(state: ShellState, p: GoyParams) -> FluxProfile:
    """Nonlinear energy flux through shell i,

        Pi_i = -Im{ u_i u_{i+1} (k_i u_{i+2} + (1-eps) k_{i-1} u_{i-1}) }

    with the zero-padding closure at the boundaries.  For any i the
    cumulative nonlinear energy tendency satisfies
    sum_{j<=i} Re(conj(u_j) * i C_j) = -Pi_i, so a positive flux moves
    energy toward higher shells.
    """
    u = state.u
    n = p.n_shells
    k = wavenumbers(p)
    k_prev = k / p.lam
    up = np.zeros(n + 4, dtype=np.complex128)
    up[2:-2] = u
    # up[2+s] = u_{s+1}
    inner = k * up[4:] + (1.0 - p.epsilon) * k_prev * up[1:-3]
    pi = -np.imag(up[2:-2] * up[3:-1] * inner)
    return FluxProfile(k=k, values=pi)


def turnover_time(u1_samples: np.ndarray, k1: float) -> float:
    """Large-eddy turnover time 1 / mean(k_1 |u_1|) over trajectory samples."""
    u1_samples = np.asarray(u1_samples)
    if u1_samples.size == 0:
        raise ValueError("turnover time needs at least one sample")
    return 1.0 / float(np.mean(k1 * np.abs(u1_samples)))


class SnapshotWindow:
    """Fixed-capacity chronological buffer of (t, state) samples.

    Pushing past capacity evicts the oldest entry.  Per-snapshot
    squared amplitudes are cached so window-mean spectra are cheap;
    all reductions run in chronological order, which keeps results
    bit-identical regardless of the ring buffer's internal offset.
    """

    def __init__(self, capacity: int = 1000, spacing: float = 0.1):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        if not spacing > 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        self.capacity = int(capacity)
        self.spacing = float(spacing)
        self._t = np.empty(self.capacity, dtype=np.float64)
        self._u: np.ndarray | None = None
        self._abs2: np.ndarray | None = None
        self._count = 0
        self._head = 0  # next write position

    def __len__(self) -> int:
        return self._count

    def _chrono_index(self) -> np.ndarray:
        if self._count < self.capacity:
            return np.arange(self._count)
        return (self._head + np.arange(self.capacity)) % self.capacity

    def push(self, t: float, u: np.ndarray) -> None:
        u = np.ascontiguousarray(u, dtype=np.complex128)
        if not np.all(np.isfinite(u.view(np.float64))):
            raise ValueError("non-finite snapshot")
        if self._u is None:
            self._u = np.empty((self.capacity, u.shape[0]), dtype=np.complex128)
            self._abs2 = np.empty((self.capacity, u.shape[0]), dtype=np.float64)
        if u.shape[0] != self._u.shape[1]:
            raise ValueError("snapshot length changed mid-window")
        if self._count > 0:
            _, t_newest = self.newest_time_index()
            if not t > t_newest:
                raise ValueError(
                    f"snapshots must be strictly increasing in t ({t} <= {t_newest})"
                )
        self._t[self._head] = t
        self._u[self._head] = u
        self._abs2[self._head] = u.real ** 2 + u.imag ** 2
        self._head = (self._head + 1) % self.capacity
        if self._count < self.capacity:
            self._count += 1

    def newest_time_index(self) -> tuple[int, float]:
        idx = (self._head - 1) % self.capacity
        return idx, float(self._t[idx])

    @property
    def times(self) -> np.ndarray:
        return self._t[self._chrono_index()].copy()

    @property
    def states(self) -> np.ndarray:
        if self._count == 0:
            return np.empty((0, 0), dtype=np.complex128)
        return self._u[self._chrono_index()].copy()

    def newest(self) -> tuple[float, np.ndarray]:
        if self._count == 0:
            raise ValueError("window is empty")
        idx, t = self.newest_time_index()
        return t, self._u[idx].copy()

    def mean_abs2(self) -> np.ndarray:
        """Chronological mean of |u_i|^2 across the window."""
        if self._count == 0:
            raise ValueError("window is empty")
        rows = self._abs2[self._chrono_index()]
        return rows.sum(axis=0) / self._count

    def copy(self) -> "SnapshotWindow":
        w = SnapshotWindow(self.capacity, self.spacing)
        w._t = self._t.copy()
        w._u = None if self._u is None else self._u.copy()
        w._abs2 = None if self._abs2 is None else self._abs2.copy()
        w._count = self._count
        w._head = self._head
        return w

    @classmethod
    def from_snapshots(
        cls,
        times: np.ndarray,
        states: np.ndarray,
        capacity: int,
        spacing: float,
    ) -> "SnapshotWindow":
        """Build a window from chronological (times, states) arrays,
        keeping only the trailing ``capacity`` entries."""
        w = cls(capacity, spacing)
        times = np.asarray(times, dtype=np.float64)
        states = np.asarray(states, dtype=np.complex128)
        for t, u in zip(times[-capacity:], states[-capacity:]):
            w.push(float(t), u)
        return w


def window_mean_spectrum(w: SnapshotWindow, p: GoyParams) -> Spectrum:
    """Arithmetic mean of the per-snapshot energy spectra."""
    k = wavenumbers(p)
    mean_abs2 = w.mean_abs2()
    if mean_abs2.shape[0] != p.n_shells:
        raise ValueError("window shell count does not match params")
    return Spectrum(k=k, values=0.5 * mean_abs2 / k)


class LossDomainError(ValueError):
    """The loss is undefined: a spectrum entry in range is not positive."""


@dataclass(frozen=True)
class LossConfig:
    """Slope-loss settings.

    Slopes are formed between shells i and i+1 for i in [i_lo, i_hi]
    (1-based paper indices), so spectrum entries i_lo..i_hi+1 must be
    positive.  ``i_hi=None`` means N-1, i.e. every available slope.
    The mean over slope terms makes a flat spectrum score exactly
    (5/3)^2 regardless of the range choice.
    """

    target: float = -5.0 / 3.0
    i_lo: int = 1
    i_hi: int | None = None

    def resolve_range(self, n_shells: int) -> tuple[int, int]:
        hi = n_shells - 1 if self.i_hi is None else self.i_hi
        if not 1 <= self.i_lo < hi <= n_shells - 1:
            raise ValueError(
                f"slope range [{self.i_lo}, {hi}] invalid for {n_shells} shells"
            )
        return self.i_lo, hi


def inertial_range_config(
    p: GoyParams, k_lo: float = 4.0, k_hi: float = 2.0 ** 14
) -> LossConfig:
    """Loss restricted to slopes whose shells satisfy k_lo <= k <= k_hi
    (defaults pick out the inertial range, shells 6..18 under standard
    parameters)."""
    k = wavenumbers(p)
    inside = np.nonzero((k >= k_lo) & (k <= k_hi))[0] + 1
    if inside.size < 2:
        raise ValueError("inertial band contains fewer than two shells")
    return LossConfig(i_lo=int(inside[0]), i_hi=int(inside[-1]))


def _slopes(spec: Spectrum, lo: int, hi: int) -> np.ndarray:
    band = spec.values[lo - 1 : hi + 1]
    if np.any(band <= 0.0) or not np.all(np.isfinite(band)):
        raise LossDomainError(
            "spectrum must be positive over the slope range; got "
            f"min={band.min() if band.size else math.nan}"
        )
    log_e = np.log(band)
    log_k = np.log(spec.k[lo - 1 : hi + 1])
    return np.diff(log_e) / np.diff(log_k)


def loss(spec: Spectrum, cfg: LossConfig) -> float:
    """Mean squared deviation of the per-shell log slopes from the target."""
    lo, hi = cfg.resolve_range(spec.values.shape[0])
    slopes = _slopes(spec, lo, hi)
    return float(np.mean((slopes - cfg.target) ** 2))


def loss_grad_state(
    w: SnapshotWindow, p: GoyParams, cfg: LossConfig
) -> np.ndarray:
    """Gradient of loss(window mean spectrum) in the real view of the
    newest snapshot, older snapshots held constant.

    Chain rule through mean_E_i = (1/W) sum_snapshots E_i,
    E_i = |u_i|^2 / (2 k_i), and the log-slope residuals.  Shells
    outside [i_lo, i_hi + 1] receive exactly zero gradient.
    """
    n = p.n_shells
    lo, hi = cfg.resolve_range(n)
    k = wavenumbers(p)
    spec = window_mean_spectrum(w, p)
    slopes = _slopes(spec, lo, hi)
    residuals = slopes - cfg.target
    n_terms = residuals.shape[0]
    dlogk = np.diff(np.log(k[lo - 1 : hi + 1]))

    # dL/dmean_E_j collects the two slopes adjacent to shell j
    dl_dmean = np.zeros(n)
    coeff = 2.0 / n_terms
    for idx in range(n_terms):
        j_low = lo - 1 + idx  # 0-based shell of E_i in slope_i
        j_high = j_low + 1
        g = coeff * residuals[idx] / dlogk[idx]
        dl_dmean[j_low] -= g / spec.values[j_low]
        dl_dmean[j_high] += g / spec.values[j_high]

    count = len(w)
    _, u_new = w.newest()
    grad = np.zeros(2 * n)
    # dmean_E_j/d(Re u_j, Im u_j) of the newest snapshot = (x, y) / (W k_j)
    scale = dl_dmean / (count * k)
    grad[0::2] = scale * u_new.real
    grad[1::2] = scale * u_new.imag
    return grad


def spectrum_slope(
    spec: Spectrum, k_lo: float = 4.0, k_hi: float = 2.0 ** 14
) -> float:
    """Least-squares log-log slope of a spectrum over a wavenumber band."""
    mask = (spec.k >= k_lo) & (spec.k <= k_hi)
    if np.count_nonzero(mask) < 2:
        raise ValueError("need at least two shells inside the band")
    band = spec.values[mask]
    if np.any(band <= 0.0):
        raise ValueError("spectrum must be positive inside the band")
    slope, _ = np.polyfit(np.log(spec.k[mask]), np.log(band), 1)
    return float(slope)


def profile_to_csv(profile: Spectrum | FluxProfile) -> str:
    """Serialize a per-shell profile as shell_index,k,value CSV text."""
    lines = ["shell_index,k,value"]
    for i, (k, v) in enumerate(zip(profile.k, profile.values), start=1):
        lines.append(f"{i},{k!r},{v!r}")
    return "\n".join(lines) + "\n"
