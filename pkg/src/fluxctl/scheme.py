"""Uniform periodic space-time grid, finite-difference stencils, the explicit
Lax-Friedrichs forward solver, and entropy diagnostics.

Fields are plain ndarrays: a spatial slice has shape (nx,), a space-time
field (L, nx) with the time index first.  Spatial index arithmetic is
modulo nx everywhere (periodic domain); the time horizon is fixed at 1.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np

from .model import ControlProblem, EntropyModel


class SchemeError(RuntimeError):
    """Numerical failure inside the discretization layer."""


class CflError(SchemeError):
    """Step-size restriction of the explicit scheme violated."""


@dataclasses.dataclass(frozen=True)
class Grid:
    """Uniform lattice on [0, b] x [0, 1] with nx cells and nt time steps."""

    nx: int
    nt: int
    b: float

    def __post_init__(self) -> None:
        if self.nx < 4:
            raise ValueError("need nx >= 4 spatial cells")
        if self.nt < 1:
            raise ValueError("need nt >= 1 time steps")
        if self.b <= 0:
            raise ValueError("domain length must be > 0")

    @property
    def dx(self) -> float:
        return self.b / self.nx

    @property
    def dt(self) -> float:
        return 1.0 / self.nt

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt


def forward_diff(w: np.ndarray, dx: float) -> np.ndarray:
    """(Dw)_i = (w_{i+1} - w_i) / dx, periodic."""
    return (np.roll(w, -1, axis=-1) - w) / dx


def laplacian(w: np.ndarray, dx: float) -> np.ndarray:
    """Lap(w)_i = (w_{i+1} - 2 w_i + w_{i-1}) / dx^2, periodic."""
    return (np.roll(w, -1, axis=-1) - 2.0 * w + np.roll(w, 1, axis=-1)) / (dx * dx)


def upwind_grad_sq(phi: np.ndarray, dx: float) -> np.ndarray:
    """((D phi)_i^+)^2 + ((D phi)_{i-1}^-)^2, the squared upwind gradient."""
    d = forward_diff(phi, dx)
    return np.maximum(d, 0.0) ** 2 + np.minimum(np.roll(d, 1, axis=-1), 0.0) ** 2


def mass(u: np.ndarray, dx: float) -> np.ndarray | float:
    """Total mass sum_i u_i dx per slice."""
    return np.sum(u, axis=-1) * dx


@dataclasses.dataclass(frozen=True)
class CflReport:
    """Margins of the two explicit-scheme step restrictions."""

    ok: bool
    viscosity_margin: float    # c - max|f'|/2
    parabolic_margin: float    # dx^2 - 2 (beta + c dx) dt

    def summary(self) -> str:
        state = "CFL ok" if self.ok else "CFL violated"
        return (f"{state}: c - max|f'|/2 = {self.viscosity_margin:.6g}, "
                f"dx^2 - 2(beta + c dx) dt = {self.parabolic_margin:.6g}")


def cfl_check(problem: ControlProblem, grid: Grid) -> CflReport:
    """Check c >= max|f'|/2 and dx^2 >= 2 (beta + c dx) dt."""
    visc = problem.c - 0.5 * problem.flux.lipschitz_bound
    para = grid.dx ** 2 - 2.0 * (problem.beta + problem.c * grid.dx) * grid.dt
    return CflReport(ok=(visc >= 0.0 and para >= 0.0),
                     viscosity_margin=visc, parabolic_margin=para)


def lax_friedrichs_step(problem: ControlProblem, grid: Grid, u: np.ndarray) -> np.ndarray:
    """One explicit step:

    u_j' = u_j - dt/(2 dx) (f(u_{j+1}) - f(u_{j-1}))
               + (beta + c dx) dt/dx^2 (u_{j+1} - 2 u_j + u_{j-1})
    """
    dx, dt = grid.dx, grid.dt
    fv = problem.flux.f(u)
    nu = (problem.beta + problem.c * dx) * dt
    out = (u - (dt / (2.0 * dx)) * (np.roll(fv, -1) - np.roll(fv, 1))
           + (nu / dx ** 2) * (np.roll(u, -1) - 2.0 * u + np.roll(u, 1)))
    if not np.all(np.isfinite(out)):
        raise SchemeError("forward step diverged")
    return out


def forward_solve(problem: ControlProblem, grid: Grid, cfl: str = "error") -> np.ndarray:
    """Run the explicit scheme from the sampled initial density.

    Returns the full (nt+1, nx) trajectory.  ``cfl`` is 'error' (default),
    'warn', or 'skip'.
    """
    if problem.u0.shape != (grid.nx,):
        raise SchemeError(f"initial density has shape {problem.u0.shape}, "
                          f"expected ({grid.nx},)")
    report = cfl_check(problem, grid)
    if not report.ok:
        if cfl == "error":
            raise CflError(report.summary())
        if cfl == "warn":
            warnings.warn(report.summary(), stacklevel=2)
    u = np.empty((grid.nt + 1, grid.nx))
    u[0] = problem.u0
    for k in range(grid.nt):
        u[k + 1] = lax_friedrichs_step(problem, grid, u[k])
    return u


def entropy_trace(entropy: EntropyModel, u: np.ndarray, dx: float) -> np.ndarray:
    """Total entropy sum_i G(u_i) dx per time slice.

    For the Boltzmann entropy, vacuum states contribute through the
    z log z -> 0 limit; strictly negative densities are rejected.
    """
    u = np.asarray(u, float)
    if entropy.positive and np.any(u < 0):
        raise SchemeError("negative density in entropy trace")
    return np.sum(entropy.G(u), axis=-1) * dx


def entropy_production(problem: ControlProblem, u: np.ndarray, dx: float) -> float:
    """Discrete entropy production sum_i V(u_i) ((D G'(u))_i)^2 dx >= 0."""
    u = np.asarray(u, float)
    if problem.entropy.positive and np.any(u <= 0):
        raise SchemeError("nonpositive density in entropy production")
    grad = forward_diff(problem.entropy.Gp(u), dx)
    return float(np.sum(problem.entropy.V(u) * grad * grad) * dx)
