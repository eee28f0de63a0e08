"""G-prox primal-dual solver for the discrete control problem.

The discrete saddle problem couples a density field u (nt+1 slices, slice 0
pinned to the initial data), signed momentum fields m1 >= 0 and m2 <= 0
(nt slices), and a multiplier field phi (nt+1 slices, slice nt pinned to
minus the terminal-cost derivative).  The Lagrangian weights every
space-time cell by dx dt:

    sum_{l=1..nt} [ (m1^{l-1})^2 + (m2^{l-1})^2 ] / (2 V(u^l))
      - potential(u^l) + terminal(u^nt)/dt [at l=nt]
      + phi^{l-1} . K(u, m)^{l-1}

where K is the implicit-in-time conservation residual (see
:func:`continuity_residual`).  One iteration performs

    1. pointwise proximal descent in (u, m1, m2) with the flux linearized
       around the previous density iterate,
    2. re-pinning of the terminal multiplier slice,
    3. proximal ascent in phi preconditioned by the space-time metric
       (eps I - d_tt - Lap_x),
    4. extrapolation phi_bar = 2 phi_new - phi_old.

Residual bookkeeping: the primal residual is the (dx dt)-weighted L2 norm
of K, the dual residual is the weighted norm of the phi increment divided
by sigma.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .model import (POSITIVITY_FLOOR, ControlProblem, functional_F,
                    functional_F_deriv, functional_H_deriv)
from .scheme import Grid, entropy_trace, forward_diff, laplacian, upwind_grad_sq


class SolverError(RuntimeError):
    """Numerical failure inside the saddle-point solver."""


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 50_000
    tol_residual: float = 1e-5
    tau: float = 0.25
    sigma: float = 0.25
    h1_epsilon: float = 1.0     # zeroth-order weight in the dual metric
    newton_tol: float = 1e-10
    newton_max: int = 50

    def __post_init__(self) -> None:
        for name in ("max_iters", "tol_residual", "tau", "sigma",
                     "h1_epsilon", "newton_tol", "newton_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"solver parameter {name} must be > 0")


@dataclasses.dataclass(eq=False)
class PdhgState:
    """Mutable iterate of the primal-dual loop (array shapes in time-major
    layout: u and phi (nt+1, nx), m1/m2 (nt, nx))."""

    u: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    phi: np.ndarray
    phi_bar: np.ndarray
    tau: float
    sigma: float
    iter: int = 0


@dataclasses.dataclass(eq=False)
class SolveReport:
    iterations: int
    primal_residuals: np.ndarray
    dual_residuals: np.ndarray
    hamiltonian: np.ndarray     # per time slice, at the returned iterate
    entropy: np.ndarray         # per time slice, at the returned iterate
    converged: bool


def continuity_residual(problem: ControlProblem, grid: Grid, u: np.ndarray,
                        m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Implicit-in-time conservation residual, one row per l = 0 .. nt-1:

    r_i^l = (u_i^{l+1} - u_i^l)/dt + (f(u_{i+1}^{l+1}) - f(u_{i-1}^{l+1}))/(2 dx)
            + (D m1)_{i-1}^l + (D m2)_i^l - (beta + c dx) Lap(u)_i^{l+1}
    """
    dx, dt = grid.dx, grid.dt
    unew = u[1:]
    fv = problem.flux.f(unew)
    r = (unew - u[:-1]) / dt
    r = r + (np.roll(fv, -1, axis=1) - np.roll(fv, 1, axis=1)) / (2.0 * dx)
    r = r + (m1 - np.roll(m1, 1, axis=1)) / dx
    r = r + (np.roll(m2, -1, axis=1) - m2) / dx
    r = r - (problem.beta + problem.c * dx) * laplacian(unew, dx)
    return r


def mfg_continuity_residual(problem: ControlProblem, grid: Grid, u: np.ndarray,
                            m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Flux-free specialization of :func:`continuity_residual` (the
    diffusive mean-field-game transport residual).  With a zero flux model
    the generic residual coincides with this one bitwise."""
    dx, dt = grid.dx, grid.dt
    unew = u[1:]
    r = (unew - u[:-1]) / dt
    r = r + (m1 - np.roll(m1, 1, axis=1)) / dx
    r = r + (np.roll(m2, -1, axis=1) - m2) / dx
    r = r - (problem.beta + problem.c * dx) * laplacian(unew, dx)
    return r


class DualMetricSolver:
    """Direct solver for (eps I - d_tt - Lap_x) on the dual increment grid.

    Increments live on slices l = 0 .. nt-1.  The time operator has a
    zero-Neumann face at l = 0 and a zero-Dirichlet face at l = nt (the
    terminal slice is owned by the terminal condition); x is periodic and
    diagonalized by the real FFT.  Per-frequency tridiagonal factorizations
    are precomputed, so each solve is O(nt nx log nx).
    """

    def __init__(self, grid: Grid, h1_epsilon: float):
        self.grid = grid
        self.h1_epsilon = float(h1_epsilon)
        nx, nt = grid.nx, grid.nt
        k = np.arange(nx // 2 + 1)
        lam = (2.0 - 2.0 * np.cos(2.0 * np.pi * k / nx)) / grid.dx ** 2
        dt2 = 1.0 / grid.dt ** 2
        diag = np.tile(h1_epsilon + lam, (nt, 1))   # (nt, modes)
        diag[0] += dt2
        diag[1:] += 2.0 * dt2
        self._off = -dt2
        # Thomas factorization: dd[l] = diag[l] - off^2 / dd[l-1]
        dd = np.empty_like(diag)
        dd[0] = diag[0]
        for l in range(1, nt):
            dd[l] = diag[l] - self._off ** 2 / dd[l - 1]
        self._dd = dd

    def solve(self, r: np.ndarray) -> np.ndarray:
        """Return v with (eps I - d_tt - Lap_x) v = r, shapes (nt, nx)."""
        nt = self.grid.nt
        rhat = np.fft.rfft(r, axis=1)
        y = np.empty_like(rhat)
        y[0] = rhat[0]
        for l in range(1, nt):
            y[l] = rhat[l] - (self._off / self._dd[l - 1]) * y[l - 1]
        v = np.empty_like(rhat)
        v[nt - 1] = y[nt - 1] / self._dd[nt - 1]
        for l in range(nt - 2, -1, -1):
            v[l] = (y[l] - self._off * v[l + 1]) / self._dd[l]
        return np.fft.irfft(v, n=self.grid.nx, axis=1)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Operator action (for verification of the solve)."""
        nt, dx, dt = self.grid.nt, self.grid.dx, self.grid.dt
        padded = np.vstack([v[:1], v, np.zeros((1, self.grid.nx))])  # Neumann / Dirichlet
        dtt = (padded[2:] - 2.0 * padded[1:-1] + padded[:-2]) / dt ** 2
        return self.h1_epsilon * v - dtt - laplacian(v, dx)


def _primal_coefficients(problem: ControlProblem, grid: Grid, u_old: np.ndarray,
                         phi_bar: np.ndarray):
    """Linear coefficients of the pointwise prox problems.

    Block (l, i), l = 1 .. nt, owns (u_i^l, m1_i^{l-1}, m2_i^{l-1}).  After
    dividing the Lagrangian by dx dt, the momentum coefficients are
    b1 = -(D phi_bar)_i^{l-1} and b2 = -(D phi_bar)_{i-1}^{l-1}, and the
    density coefficient collects the adjoint time difference, the flux term
    linearized at the previous density iterate, and the diffusion adjoint.
    """
    dx, dt = grid.dx, grid.dt
    pb = phi_bar[:-1]                       # slices 0 .. nt-1
    d = forward_diff(pb, dx)
    b1 = -d
    b2 = -np.roll(d, 1, axis=1)
    a = pb / dt
    a[:-1] -= phi_bar[1:-1] / dt
    a += problem.flux.df(u_old[1:]) * (np.roll(pb, 1, axis=1)
                                       - np.roll(pb, -1, axis=1)) / (2.0 * dx)
    a -= (problem.beta + problem.c * dx) * laplacian(pb, dx)
    return a, b1, b2


def density_bounds(problem: ControlProblem, nt: int):
    """Pointwise bounds of the density prox: the box if present, with lower
    bound 0 for positive entropies (the mobility V(u) = u is regular at the
    origin), raised to the positivity floor exactly on the rows whose
    objective evaluates a logarithm (entropy-type potential everywhere, kl
    terminal on the last row).  Returns (lo, hi) with lo broadcastable to
    (nt, nx)."""
    if problem.box is not None:
        lo, hi = problem.box
    else:
        lo, hi = -np.inf, np.inf
    if problem.entropy.positive:
        lo = max(lo, 0.0)
    lo_rows = np.full((nt, 1), lo)
    if problem.potential.kind == "neg_boltzmann":
        lo_rows = np.maximum(lo_rows, POSITIVITY_FLOOR)
    if problem.terminal.kind == "kl":
        lo_rows[-1] = max(lo_rows[-1, 0], POSITIVITY_FLOOR)
    return lo_rows, hi


def _terminal_linear_term(problem: ControlProblem, grid: Grid) -> np.ndarray | None:
    """delta H / delta u at the terminal slice, already divided by dt, for
    terminal costs that enter the prox linearly (the kl kind enters through
    the nonlinear objective instead)."""
    if problem.terminal.kind == "linear":
        return problem.terminal.g / grid.dt
    return None


def pointwise_objective(problem, grid, l_is_last, U, M1, M2, a, b1, b2,
                        U0, M10, M20, tau):
    """Value of one pointwise prox objective (used by tests and the
    brute-force oracle; shapes broadcast).

    (M1^2 + M2^2) / (2 V(U)) + b1 M1 + b2 M2 + a U
      - Fdens(U) + [l = nt] Hdens(U)/dt
      + ((U - U0)^2 + (M1 - M10)^2 + (M2 - M20)^2) / (2 tau)
    """
    V = problem.entropy.V(np.asarray(U, float))
    val = (M1 ** 2 + M2 ** 2) / (2.0 * V) + b1 * M1 + b2 * M2 + a * U
    if problem.potential.kind == "neg_boltzmann":
        Uc = np.maximum(U, POSITIVITY_FLOOR)
        val = val + problem.potential.alpha * Uc * np.log(Uc)   # -Fdens
    if l_is_last and problem.terminal.kind != "zero":
        t = problem.terminal
        if t.kind == "linear":
            val = val + U * t.g / grid.dt
        else:
            Uc = np.maximum(U, POSITIVITY_FLOOR)
            val = val + t.mu * Uc * np.log(Uc / t.target) / grid.dt
    val = val + ((U - U0) ** 2 + (M1 - M10) ** 2 + (M2 - M20) ** 2) / (2.0 * tau)
    return val


def _env_grad(problem, grid, a_eff, p1, n2, U0, tau, kl_rows, U):
    """Derivative in U of the prox objective with the momenta eliminated.

    With m1*(U) = V p1 / (V + tau) and m2*(U) = V n2 / (V + tau), the
    kinetic contribution is -V'(U) (p1^2 + n2^2) / (2 (V(U) + tau)^2).
    """
    g = a_eff + (U - U0) / tau
    if problem.entropy.kind == "boltzmann":
        g = g - (p1 ** 2 + n2 ** 2) / (2.0 * (U + tau) ** 2)
    if problem.potential.kind == "neg_boltzmann":
        g = g + problem.potential.alpha * (np.log(U) + 1.0)
    if kl_rows is not None:
        t = problem.terminal
        g[-1] = g[-1] + t.mu * (np.log(U[-1] / t.target) + 1.0) / grid.dt
    return g


def _env_hess(problem, grid, p1, n2, tau, kl_rows, U):
    h = np.full_like(U, 1.0 / tau)
    if problem.entropy.kind == "boltzmann":
        h = h + (p1 ** 2 + n2 ** 2) / (U + tau) ** 3
    if problem.potential.kind == "neg_boltzmann":
        h = h + problem.potential.alpha / U
    if kl_rows is not None:
        h[-1] = h[-1] + problem.terminal.mu / (U[-1] * grid.dt)
    return h


def _newton_solve(problem, grid, a_eff, p1, n2, U0, tau, kl_rows, lo, hi, cfg):
    """Vectorized safeguarded Newton for the scalar density prox.

    The envelope gradient is smooth and nondecreasing on (lo, hi); brackets
    are maintained per element and Newton steps leaving them fall back to
    bisection.  Raises with the worst (l, i) coordinates on stall.
    """
    grad = lambda U: _env_grad(problem, grid, a_eff, p1, n2, U0, tau, kl_rows, U)
    lo_arr = np.broadcast_to(np.asarray(lo, float), U0.shape).copy()
    g_lo = grad(lo_arr)
    at_lo = g_lo >= 0.0
    if np.all(np.isfinite(hi)):
        hi_arr = np.broadcast_to(np.asarray(hi, float), U0.shape).copy()
        g_hi = grad(hi_arr)
        at_hi = (g_hi <= 0.0) & ~at_lo
    else:
        hi_arr = np.maximum(U0, lo) + 1.0 + tau * (np.abs(a_eff)
                                                   + (p1 ** 2 + n2 ** 2) / (2.0 * tau ** 2))
        for _ in range(200):
            need = grad(hi_arr) < 0.0
            if not np.any(need):
                break
            hi_arr = np.where(need, 2.0 * hi_arr, hi_arr)
        else:
            raise SolverError("density prox upper bracket not found")
        at_hi = np.zeros(U0.shape, dtype=bool)

    free = ~(at_lo | at_hi)
    U = np.where(at_lo, lo_arr, np.where(at_hi, hi_arr, np.clip(U0, lo_arr, hi_arr)))
    L, H = lo_arr.copy(), hi_arr.copy()
    active = free.copy()
    for _ in range(cfg.newton_max):
        if not np.any(active):
            break
        g = grad(U)
        conv = np.abs(g) <= cfg.newton_tol
        active &= ~conv
        if not np.any(active):
            break
        pos = g > 0
        H = np.where(active & pos, U, H)
        L = np.where(active & ~pos, U, L)
        step = U - g / _env_hess(problem, grid, p1, n2, tau, kl_rows, U)
        inside = (step > L) & (step < H) & np.isfinite(step)
        U = np.where(active, np.where(inside, step, 0.5 * (L + H)), U)
    else:
        g = grad(U)
        bad = active & (np.abs(g) > cfg.newton_tol)
        if np.any(bad):
            l, i = np.unravel_index(np.argmax(np.abs(np.where(bad, g, 0.0))), U.shape)
            raise SolverError(
                f"density prox Newton stalled at (l={l + 1}, i={i}), "
                f"|grad| = {abs(g[l, i]):.3e}")
    return U


def primal_update(state: PdhgState, problem: ControlProblem, grid: Grid,
                  cfg: SolverConfig, pool: ThreadPoolExecutor | None = None):
    """One proximal descent step; returns (u, m1, m2) without mutating state.

    The momenta are eliminated in closed form given the density,
    m* = V(u) (m_old - tau b) / (V(u) + tau) projected onto its sign, and
    the density solves a scalar strictly convex problem per grid point:
    in closed form when everything is affine in u (quadratic mobility, no
    entropy-type costs), by safeguarded Newton otherwise.
    """
    tau = cfg.tau
    a, b1, b2 = _primal_coefficients(problem, grid, state.u, state.phi_bar)
    p1 = np.maximum(state.m1 - tau * b1, 0.0)
    n2 = np.minimum(state.m2 - tau * b2, 0.0)
    U0 = state.u[1:]

    lin = _terminal_linear_term(problem, grid)
    if lin is not None:
        a[-1] += lin

    nonlinear = (problem.entropy.kind == "boltzmann"
                 or problem.potential.kind == "neg_boltzmann"
                 or problem.terminal.kind == "kl")
    lo, hi = density_bounds(problem, grid.nt)

    if not nonlinear:
        U = np.clip(U0 - tau * a, lo, hi)
    else:
        kl_rows = "last" if problem.terminal.kind == "kl" else None
        if pool is None:
            U = _newton_solve(problem, grid, a, p1, n2, U0, tau, kl_rows, lo, hi, cfg)
        else:
            U = _newton_parallel(problem, grid, a, p1, n2, U0, tau, kl_rows,
                                 lo, hi, cfg, pool)
    V = problem.entropy.V(U)
    scale = V / (V + tau)
    return np.vstack([state.u[:1], U]), scale * p1, scale * n2


def _newton_parallel(problem, grid, a_eff, p1, n2, U0, tau, kl_rows, lo, hi,
                     cfg, pool):
    """Row-chunked evaluation of the Newton prox (disjoint writes, results
    bitwise identical to the serial path)."""
    nt = U0.shape[0]
    nworkers = getattr(pool, "_max_workers", 2)
    # keep the terminal row in its own trailing chunk so kl handling is local
    rows = np.array_split(np.arange(nt - 1 if kl_rows else nt), nworkers)
    lo = np.broadcast_to(np.asarray(lo, float), (nt, 1))
    out = np.empty_like(U0)

    def work(idx):
        out[idx] = _newton_solve(problem, grid, a_eff[idx], p1[idx], n2[idx],
                                 U0[idx], tau, None, lo[idx], hi, cfg)

    futures = [pool.submit(work, idx) for idx in rows if idx.size]
    for f in futures:
        f.result()
    if kl_rows:
        out[-1:] = _newton_solve(problem, grid, a_eff[-1:], p1[-1:], n2[-1:],
                                 U0[-1:], tau, "last", lo[-1:], hi, cfg)
    return out


def enforce_terminal(state: PdhgState, problem: ControlProblem) -> None:
    """Pin the terminal multiplier slice: phi^nt = - delta H / delta u (u^nt)."""
    state.phi[-1] = -functional_H_deriv(problem.terminal, state.u[-1])


def dual_update(state: PdhgState, problem: ControlProblem, grid: Grid,
                cfg: SolverConfig, metric: DualMetricSolver) -> np.ndarray:
    """Preconditioned ascent phi += sigma L^{-1} K(z) on slices 0 .. nt-1;
    returns the continuity residual it consumed."""
    r = continuity_residual(problem, grid, state.u, state.m1, state.m2)
    inc = cfg.sigma * metric.solve(r)
    if not np.all(np.isfinite(inc)):
        raise SolverError("dual metric solve produced non-finite increments")
    state.phi[:-1] += inc
    return r


def extrapolate(phi_new: np.ndarray, phi_old: np.ndarray) -> np.ndarray:
    """phi_bar = 2 phi_new - phi_old."""
    return 2.0 * phi_new - phi_old


def discrete_hamiltonian(problem: ControlProblem, grid: Grid,
                         u_slice: np.ndarray, phi_slice: np.ndarray) -> float:
    """Discrete Hamiltonian of one time slice:

    sum_i [ upwind_grad_sq(phi)_i V(u_i) / 2
            + (phi_{i+1} - phi_{i-1})/(2 dx) f(u_i)
            + (beta + c dx) u_i Lap(phi)_i ] dx  -  potential(u)
    """
    dx = grid.dx
    central = (np.roll(phi_slice, -1) - np.roll(phi_slice, 1)) / (2.0 * dx)
    total = np.sum(0.5 * upwind_grad_sq(phi_slice, dx) * problem.entropy.V(u_slice)
                   + central * problem.flux.f(u_slice)
                   + (problem.beta + problem.c * dx) * u_slice
                   * laplacian(phi_slice, dx)) * dx
    return float(total - functional_F(problem.potential,
                                      np.maximum(u_slice, POSITIVITY_FLOOR)
                                      if problem.potential.kind != "zero" else u_slice,
                                      dx))


def hamiltonian_trace(problem: ControlProblem, grid: Grid, u: np.ndarray,
                      phi: np.ndarray) -> np.ndarray:
    return np.array([discrete_hamiltonian(problem, grid, u[l], phi[l])
                     for l in range(u.shape[0])])


def initial_state(problem: ControlProblem, grid: Grid, cfg: SolverConfig) -> PdhgState:
    """Constant-in-time density, zero momenta, zero multiplier (terminal
    slice immediately pinned to keep the state invariant)."""
    u = np.tile(problem.u0, (grid.nt + 1, 1))
    state = PdhgState(
        u=u,
        m1=np.zeros((grid.nt, grid.nx)),
        m2=np.zeros((grid.nt, grid.nx)),
        phi=np.zeros((grid.nt + 1, grid.nx)),
        phi_bar=np.zeros((grid.nt + 1, grid.nx)),
        tau=cfg.tau,
        sigma=cfg.sigma,
    )
    enforce_terminal(state, problem)
    state.phi_bar = state.phi.copy()
    return state


def pdhg_solve(problem: ControlProblem, grid: Grid,
               cfg: SolverConfig | None = None, parallel: bool = False,
               verbose: bool = False):
    """Run the primal-dual loop until max(primal, dual residual) falls below
    the tolerance or the iteration budget runs out.

    Returns (PdhgState, SolveReport); ``report.converged`` is honest, a
    non-converged run is returned rather than raised.  Residuals above 1e6
    abort with a hint to halve the step sizes.
    """
    if problem.u0.shape != (grid.nx,):
        raise SolverError(f"initial density has shape {problem.u0.shape}, "
                          f"expected ({grid.nx},)")
    cfg = cfg or SolverConfig()
    state = initial_state(problem, grid, cfg)
    metric = DualMetricSolver(grid, cfg.h1_epsilon)
    weight = np.sqrt(grid.dx * grid.dt)
    primal_hist, dual_hist = [], []
    converged = False
    pool = ThreadPoolExecutor(max_workers=4) if parallel else None
    try:
        for k in range(cfg.max_iters):
            phi_prev = state.phi.copy()
            state.u, state.m1, state.m2 = primal_update(state, problem, grid, cfg, pool)
            enforce_terminal(state, problem)
            r = dual_update(state, problem, grid, cfg, metric)
            state.phi_bar = extrapolate(state.phi, phi_prev)
            state.iter = k + 1

            primal_res = float(np.linalg.norm(r)) * weight
            dual_res = float(np.linalg.norm(state.phi - phi_prev)) * weight / cfg.sigma
            primal_hist.append(primal_res)
            dual_hist.append(dual_res)
            if verbose and (k % 500 == 0 or k == cfg.max_iters - 1):
                print(f"  iter {k:6d}: primal {primal_res:.3e} dual {dual_res:.3e}")
            if primal_res > 1e6 or not np.isfinite(primal_res):
                raise SolverError(
                    f"primal residual diverged at iteration {k + 1}; "
                    "try halving tau and sigma")
            if max(primal_res, dual_res) <= cfg.tol_residual:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    report = SolveReport(
        iterations=state.iter,
        primal_residuals=np.asarray(primal_hist),
        dual_residuals=np.asarray(dual_hist),
        hamiltonian=hamiltonian_trace(problem, grid, state.u, state.phi),
        entropy=entropy_trace(problem.entropy,
                              np.maximum(state.u, 0.0) if problem.entropy.positive
                              else state.u, grid.dx),
        converged=converged,
    )
    return state, report


def prox_kkt_residual(problem, grid, l_is_last, U, M1, M2, a, b1, b2,
                      U0, M10, M20, tau, lo=-np.inf, hi=np.inf):
    """Stationarity measure of a returned prox point (0 at exact optimality).

    Interior coordinates report |gradient|; coordinates at a bound report
    only the infeasible part of the gradient sign (one-sided condition).
    """
    U = np.asarray(U, float)
    V = problem.entropy.V(U)
    dV = (np.ones_like(U) if problem.entropy.kind == "boltzmann"
          else np.zeros_like(U))
    gU = a + (U - U0) / tau - dV * (M1 ** 2 + M2 ** 2) / (2.0 * V ** 2)
    if problem.potential.kind == "neg_boltzmann":
        gU = gU + problem.potential.alpha * (np.log(U) + 1.0)
    if l_is_last and problem.terminal.kind != "zero":
        t = problem.terminal
        if t.kind == "linear":
            gU = gU + t.g / grid.dt
        else:
            gU = gU + t.mu * (np.log(U / t.target) + 1.0) / grid.dt
    res_u = np.abs(gU)
    res_u = np.where(np.isclose(U, lo) & (gU > 0), 0.0, res_u)
    res_u = np.where(np.isclose(U, hi) & (gU < 0), 0.0, res_u)

    g1 = M1 / V + b1 + (M1 - M10) / tau
    res1 = np.where((M1 == 0.0) & (g1 > 0), 0.0, np.abs(g1))
    g2 = M2 / V + b2 + (M2 - M20) / tau
    res2 = np.where((M2 == 0.0) & (g2 < 0), 0.0, np.abs(g2))
    return np.maximum(res_u, np.maximum(res1, res2))
