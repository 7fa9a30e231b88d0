"""GOY shell-model vector fields, Jacobians, and parameter sensitivity.

The Gledzer-Ohkitani-Yamada (GOY) model evolves N complex shell
amplitudes u_1..u_N living on geometrically spaced wavenumbers
k_i = k0 * lam**i.  The reference dynamics are

    du_i/dt = -nu * k_i^2 * u_i + f * delta(i, forcing_shell) + 1j * C_i

with the quadratic shell coupling

    C_i = k_i u*_{i+1} u*_{i+2}
          - eps * k_{i-1} u*_{i-1} u*_{i+1}
          + (eps - 1) * k_{i-2} u*_{i-1} u*_{i-2}

where * denotes complex conjugation and u_j = 0 for j outside 1..N.
The zero-padding closure is what makes the nonlinear term conserve
total kinetic energy exactly: every triple product u*_j u*_{j+1} u*_{j+2}
enters sum(u*_i C_i) with total coefficient k_j * (1 - eps + eps - 1) = 0.

The learnable variant replaces the viscous term with a diffusive model
M_i = theta * k_i^2 * u_i, so the two right-hand sides coincide when
theta equals nu.

Shell indices are 1-based everywhere on the public surface, matching
the k_i = k0*lam**i convention.  Real-valued 2N views interleave the
components as (Re u_1, Im u_1, ..., Re u_N, Im u_N); this is exactly
the memory layout of a complex128 array, so the round trip is
bit-identical.  The conjugations in C_i make the flow real-linear but
not complex-differentiable, which is why the Jacobian and the
sensitivity vector live in the real view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GoyParams",
    "DissipationModel",
    "ShellState",
    "initial_condition",
    "wavenumber",
    "wavenumbers",
    "as_real",
    "as_complex",
    "nonlinear_term",
    "rhs_reference",
    "rhs_modified",
    "jacobian_real",
    "dfdtheta",
    "coupling_coefficients",
]


@dataclass(frozen=True)
class GoyParams:
    """Physical constants of the reference system.

    Defaults are the standard set: eps=0.5, lam=2, nu=1e-8, k0=2**-4,
    N=22 shells, forcing 5e-3*(1+1j) applied at shell 4.
    """

    epsilon: float = 0.5
    lam: float = 2.0
    nu: float = 1e-8
    k0: float = 2.0 ** -4
    n_shells: int = 22
    forcing: complex = 5e-3 * (1 + 1j)
    forcing_shell: int = 4

    def __post_init__(self):
        if not self.lam > 1.0:
            raise ValueError(f"shell spacing ratio must exceed 1, got {self.lam}")
        if not self.k0 > 0.0:
            raise ValueError(f"base wavenumber must be positive, got {self.k0}")
        if self.n_shells < 5:
            raise ValueError(f"need at least 5 shells, got {self.n_shells}")
        if not 1 <= self.forcing_shell <= self.n_shells:
            raise ValueError(
                f"forcing shell {self.forcing_shell} outside 1..{self.n_shells}"
            )


@dataclass(frozen=True)
class DissipationModel:
    """Diffusive dissipation surrogate M_i = theta * k_i^2 * u_i.

    theta is unconstrained here; range guards live in the optimizer.
    """

    theta: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ValueError(f"theta must be finite, got {self.theta}")


@dataclass(frozen=True, eq=False)
class ShellState:
    """Complex shell amplitudes plus simulation time.

    The amplitude array is copied on construction and must be finite;
    a non-finite state is an error condition, never silently carried.
    """

    u: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        u = np.array(self.u, dtype=np.complex128)
        if u.ndim != 1:
            raise ValueError(f"state must be a 1-d complex vector, got shape {u.shape}")
        if not np.all(np.isfinite(u.view(np.float64))):
            raise ValueError("non-finite shell amplitude")
        if not math.isfinite(self.t):
            raise ValueError(f"non-finite time {self.t}")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def n_shells(self) -> int:
        return self.u.shape[0]


def initial_condition(p: GoyParams, amplitude: complex = 1e-5 * (1 + 1j)) -> ShellState:
    """Standard seed state: shells 3 and 5 at `amplitude`, all else zero, t=0."""
    u = np.zeros(p.n_shells, dtype=np.complex128)
    u[2] = amplitude
    u[4] = amplitude
    return ShellState(u=u, t=0.0)


def wavenumber(i: int, p: GoyParams) -> float:
    """k_i = k0 * lam**i for 1-based shell index i."""
    return p.k0 * p.lam ** i


def wavenumbers(p: GoyParams) -> np.ndarray:
    """All shell wavenumbers k_1..k_N as a float array."""
    return p.k0 * p.lam ** np.arange(1, p.n_shells + 1, dtype=np.float64)


def as_real(u: np.ndarray) -> np.ndarray:
    """Flatten complex amplitudes to the interleaved (Re, Im) real view.

    complex128 stores (Re, Im) pairs contiguously, so this is a plain
    dtype reinterpretation and the round trip with :func:`as_complex`
    is bit-identical.
    """
    u = np.ascontiguousarray(u, dtype=np.complex128)
    return u.view(np.float64).copy()


def as_complex(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`as_real`."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[0] % 2:
        raise ValueError("real view must have even length")
    return x.view(np.complex128).copy()


def coupling_coefficients(p: GoyParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-shell prefactors (a, b, c) of the three C_i products.

    With 0-based storage index s for shell i = s+1:
        a[s] = k_i,  b[s] = -eps * k_{i-1},  c[s] = (eps - 1) * k_{i-2}.
    Out-of-range wavenumbers k_0, k_-1 are still well defined; the
    amplitude factors they multiply vanish at the boundary anyway.
    """
    s = np.arange(p.n_shells, dtype=np.float64)
    a = p.k0 * p.lam ** (s + 1)
    b = -p.epsilon * p.k0 * p.lam ** s
    c = (p.epsilon - 1.0) * p.k0 * p.lam ** (s - 1)
    return a, b, c


def _padded_conj(u: np.ndarray) -> np.ndarray:
    """conj(u) with two zero shells on each side, so neighbour lookups
    never index out of range."""
    up = np.zeros(u.shape[0] + 4, dtype=np.complex128)
    up[2:-2] = np.conj(u)
    return up


def nonlinear_term(state: ShellState, p: GoyParams) -> np.ndarray:
    """Quadratic coupling C_1..C_N with implicit zeros outside 1..N."""
    u = state.u
    if u.shape[0] != p.n_shells:
        raise ValueError(f"state has {u.shape[0]} shells, params expect {p.n_shells}")
    a, b, c = coupling_coefficients(p)
    up = _padded_conj(u)
    # up[2+s] == conj(u_{s+1}); neighbours at offsets +-1, +-2
    return (
        a * up[3:-1] * up[4:]
        + b * up[1:-3] * up[3:-1]
        + c * up[1:-3] * up[:-4]
    )


def _goy_rhs(state: ShellState, p: GoyParams, coeff: float) -> np.ndarray:
    rhs = 1j * nonlinear_term(state, p)
    k = wavenumbers(p)
    rhs -= coeff * k * k * state.u
    rhs[p.forcing_shell - 1] += p.forcing
    return rhs


def rhs_reference(state: ShellState, p: GoyParams) -> np.ndarray:
    """Reference time derivative: -nu k^2 u + forcing + i C."""
    return _goy_rhs(state, p, p.nu)


def rhs_modified(state: ShellState, p: GoyParams, m: DissipationModel) -> np.ndarray:
    """Learnable-dissipation time derivative: forcing + i C - theta k^2 u.

    Shares the evaluation path of :func:`rhs_reference`, so theta == nu
    reproduces the reference derivative bit for bit.
    """
    return _goy_rhs(state, p, m.theta)


def _bilinear_block(z: complex) -> np.ndarray:
    """2x2 real derivative block of i * alpha * conj(u_p) * conj(u_q).

    Differentiating with respect to (Re u_p, Im u_p) leaves the factor
    conj(u_q) behind and yields alpha * B(u_q) with the symmetric block
    B(z) = [[Im z, Re z], [Re z, -Im z]].
    """
    return np.array([[z.imag, z.real], [z.real, -z.imag]], dtype=np.float64)


def jacobian_real(state: ShellState, p: GoyParams, m: DissipationModel) -> np.ndarray:
    """Exact Jacobian of the modified right-hand side in the real view.

    Returns the 2N x 2N matrix d(rhs)/d(state) with the interleaved
    (Re, Im) ordering.  Conjugation makes the map real-linear only, so
    the blocks are not complex-multiplication blocks.
    """
    u = state.u
    n = p.n_shells
    if u.shape[0] != n:
        raise ValueError(f"state has {u.shape[0]} shells, params expect {n}")
    a, b, c = coupling_coefficients(p)
    k = wavenumbers(p)
    jac = np.zeros((2 * n, 2 * n), dtype=np.float64)

    def add(row: int, col: int, alpha: float, other: int):
        # d/d(u_col) of alpha * conj(u_col) * conj(u_other) inside i*C_row
        if 0 <= col < n and 0 <= other < n:
            jac[2 * row : 2 * row + 2, 2 * col : 2 * col + 2] += (
                alpha * _bilinear_block(u[other])
            )

    for s in range(n):
        add(s, s + 1, a[s], s + 2)
        add(s, s + 2, a[s], s + 1)
        add(s, s - 1, b[s], s + 1)
        add(s, s + 1, b[s], s - 1)
        add(s, s - 1, c[s], s - 2)
        add(s, s - 2, c[s], s - 1)
        damp = -m.theta * k[s] * k[s]
        jac[2 * s, 2 * s] += damp
        jac[2 * s + 1, 2 * s + 1] += damp
    return jac


def dfdtheta(state: ShellState, p: GoyParams) -> np.ndarray:
    """Sensitivity of the modified right-hand side to theta: -k^2 u,
    flattened to the real view."""
    if state.u.shape[0] != p.n_shells:
        raise ValueError(
            f"state has {state.u.shape[0]} shells, params expect {p.n_shells}"
        )
    k = wavenumbers(p)
    return as_real(-k * k * state.u)
