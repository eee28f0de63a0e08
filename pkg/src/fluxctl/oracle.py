"""Reference solutions for validation: closed-form Riemann entropy solutions
at t = 1, fine-grid and implicit-in-time Lax-Friedrichs references, and the
L1 error norm."""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import ControlProblem
from .scheme import Grid, SchemeError, forward_solve


@dataclasses.dataclass(frozen=True)
class Shock:
    """Jump discontinuity at t = 1 with its left/right states and speed."""

    position: float
    u_left: float
    u_right: float
    speed: float


@dataclasses.dataclass(frozen=True)
class Rarefaction:
    """Self-similar fan emanating from x0: f'(u(x)) = (x - x0) / t."""

    x_lo: float
    x_hi: float
    center: float


@dataclasses.dataclass(frozen=True, eq=False)
class RiemannSolution:
    """Piecewise (constant or affine) entropy solution profile at t = 1.

    ``pieces`` are (x_lo, x_hi, u(x)) with strictly increasing boundaries
    covering [0, b]; intervals are half-open [x_lo, x_hi) except the last.
    """

    b: float
    pieces: tuple[tuple[float, float, Callable[[np.ndarray], np.ndarray]], ...]
    shocks: tuple[Shock, ...] = ()
    rarefactions: tuple[Rarefaction, ...] = ()

    def __post_init__(self) -> None:
        edges = [p[0] for p in self.pieces] + [self.pieces[-1][1]]
        if not all(a < b for a, b in zip(edges, edges[1:])):
            raise ValueError("piece boundaries must be strictly increasing")
        if edges[0] != 0.0 or edges[-1] != self.b:
            raise ValueError("pieces must cover [0, b]")

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        out = np.empty_like(x)
        out.fill(np.nan)
        for lo, hi, fn in self.pieces:
            m = (x >= lo) & (x < hi)
            if np.any(m):
                out[m] = fn(x[m])
        last = x == self.b
        if np.any(last):
            out[last] = self.pieces[-1][2](x[last])
        if np.any(np.isnan(out)):
            raise ValueError("evaluation point outside [0, b]")
        return out

    __call__ = evaluate


def burgers_solution() -> RiemannSolution:
    """Entropy solution at t = 1 for f(u) = u^2/2 with the unit block on
    [2, 3): rarefaction ramp u = x - 2 on (2, 3], plateau 1 on [3, 3.5],
    shock at 3.5 moving at speed 1/2, zero elsewhere."""
    zero = lambda x: np.zeros_like(x)
    return RiemannSolution(
        b=4.0,
        pieces=(
            (0.0, 2.0, zero),
            (2.0, 3.0, lambda x: x - 2.0),
            (3.0, 3.5, lambda x: np.ones_like(x)),
            (3.5, 4.0, zero),
        ),
        shocks=(Shock(position=3.5, u_left=1.0, u_right=0.0, speed=0.5),),
        rarefactions=(Rarefaction(x_lo=2.0, x_hi=3.0, center=2.0),),
    )


def traffic_solution() -> RiemannSolution:
    """Entropy solution at t = 1 for f(u) = u (1 - u) with the 0.8 block on
    [1, 2).

    Left edge: shock with speed [f]/[u] = f(0.8)/0.8 = 0.2, reaching x = 1.2.
    Right edge: rarefaction fan u = (3 - x)/2 for 1.4 < x <= 3.  The plateau
    between them keeps the upstream value 0.8 (the maximum principle forbids
    values above max u0).
    """
    zero = lambda x: np.zeros_like(x)
    return RiemannSolution(
        b=4.0,
        pieces=(
            (0.0, 1.2, zero),
            (1.2, 1.4, lambda x: np.full_like(x, 0.8)),
            (1.4, 3.0, lambda x: 0.5 * (3.0 - x)),
            (3.0, 4.0, zero),
        ),
        shocks=(Shock(position=1.2, u_left=0.0, u_right=0.8, speed=0.2),),
        rarefactions=(Rarefaction(x_lo=1.4, x_hi=3.0, center=2.0),),
    )


def burgers_exact(x: np.ndarray) -> np.ndarray:
    """u(1, x) for the block-datum Burgers problem on [0, 4]."""
    return burgers_solution().evaluate(x)


def traffic_exact(x: np.ndarray) -> np.ndarray:
    """u(1, x) for the block-datum traffic problem on [0, 4]."""
    return traffic_solution().evaluate(x)


def l1_error(a: np.ndarray, b: np.ndarray, dx: float) -> float:
    """Discrete L1 distance sum_i |a_i - b_i| dx."""
    return float(np.sum(np.abs(np.asarray(a, float) - np.asarray(b, float))) * dx)


def fine_reference(problem: ControlProblem, grid: Grid, r: int) -> np.ndarray:
    """Forward solve at (r nx, r^2 nt), cell-averaged back to the coarse grid.

    The initial density is upsampled piecewise-constantly (np.repeat), which
    reproduces indicator data exactly; the refined grid inherits a valid CFL
    margin from the coarse one.  Returns the t = 1 slice.
    """
    if r < 1:
        raise ValueError("refinement factor must be >= 1")
    fine_grid = Grid(nx=r * grid.nx, nt=r * r * grid.nt, b=grid.b)
    fine_problem = dataclasses.replace(problem, u0=np.repeat(problem.u0, r))
    u = forward_solve(fine_problem, fine_grid, cfl="error")
    return u[-1].reshape(grid.nx, r).mean(axis=1)


def implicit_reference(problem: ControlProblem, grid: Grid,
                       newton_tol: float = 1e-12, newton_max: int = 50) -> np.ndarray:
    """Direct solve of the implicit-in-time scheme with no control:

    (v - u^l)/dt + (f(v_{i+1}) - f(v_{i-1}))/(2 dx) = (beta + c dx) Lap(v)_i

    stepped with a sparse Newton iteration per slice.  This is the m = 0
    dynamics of the saddle-point discretization.
    """
    nx, dx, dt = grid.nx, grid.dx, grid.dt
    nu = problem.beta + problem.c * dx
    lap = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(nx, nx), format="lil")
    lap[0, -1] = 1.0
    lap[-1, 0] = 1.0
    lap = (lap / dx ** 2).tocsr()
    shift_m1 = sp.eye(nx, format="csr")[np.r_[1:nx, 0]]       # row i picks i+1
    shift_p1 = sp.eye(nx, format="csr")[np.r_[nx - 1, 0:nx - 1]]
    eye = sp.eye(nx, format="csr")

    u = np.empty((grid.nt + 1, nx))
    u[0] = problem.u0
    for l in range(grid.nt):
        v = u[l].copy()
        for _ in range(newton_max):
            fv = problem.flux.f(v)
            res = ((v - u[l]) / dt
                   + (np.roll(fv, -1) - np.roll(fv, 1)) / (2.0 * dx)
                   - nu * (np.roll(v, -1) - 2.0 * v + np.roll(v, 1)) / dx ** 2)
            if np.max(np.abs(res)) <= newton_tol:
                break
            dfv = sp.diags(problem.flux.df(v))
            jac = eye / dt + (shift_m1 @ dfv - shift_p1 @ dfv) / (2.0 * dx) - nu * lap
            v = v - spla.spsolve(jac.tocsc(), res)
        else:
            raise SchemeError(f"implicit reference Newton stalled at step {l}")
        u[l + 1] = v
    return u
