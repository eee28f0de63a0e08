"""Flux functions, entropy pairs, mobilities, and cost functionals.

This layer owns the pointwise data of the control problem: a scalar flux
``f`` with derivative ``f'``, a convex entropy density ``G`` whose flux
potential ``Psi`` satisfies ``Psi' = f' G'``, the mobility
``V(u) = a(u) / G''(u)``, a running potential acting on the density, and a
terminal cost acting on the final density.  Everything here is pure and
immutable; discretization lives in :mod:`fluxctl.scheme`.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import xlogy

# Densities are clamped from below by this floor before logs or divisions.
# Experiment data keeps a background of at least 1e-3 away from vacuum, so
# the floor never carries real mass.
POSITIVITY_FLOOR = 1e-8


class ModelError(ValueError):
    """Invalid model data or a failed model-level computation."""


ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclasses.dataclass(frozen=True)
class FluxModel:
    """Scalar flux: f(u), f'(u), and max |f'| over the admissible state range."""

    kind: str
    f: ArrayFn
    df: ArrayFn
    lipschitz_bound: float


@dataclasses.dataclass(frozen=True)
class EntropyModel:
    """Convex entropy density G with derivatives, diffusion coefficient a(u)
    (scalar, default 1), and mobility V(u) = a(u) / G''(u).

    ``positive`` marks entropies whose derivatives need u > 0 (Boltzmann).
    """

    kind: str
    G: ArrayFn
    Gp: ArrayFn
    Gpp: ArrayFn
    a: ArrayFn
    V: ArrayFn
    positive: bool


@dataclasses.dataclass(frozen=True)
class PotentialSpec:
    """Running potential. kind 'zero': 0.  kind 'neg_boltzmann':
    -alpha * int u log u dx, with pointwise derivative -alpha (log u + 1)."""

    kind: str = "zero"
    alpha: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "neg_boltzmann"):
            raise ModelError(f"unknown potential kind {self.kind!r}")
        if self.alpha < 0:
            raise ModelError("potential weight alpha must be >= 0")


@dataclasses.dataclass(frozen=True, eq=False)
class TerminalSpec:
    """Terminal cost on the final density w.

    kind 'zero':   0
    kind 'kl':     mu * int w log(w / target) dx,  derivative mu (log(w/target) + 1)
    kind 'linear': int w g dx,                     derivative g
    """

    kind: str = "zero"
    mu: float = 0.0
    target: np.ndarray | None = None
    g: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "kl", "linear"):
            raise ModelError(f"unknown terminal kind {self.kind!r}")
        if self.kind == "kl":
            if self.mu < 0:
                raise ModelError("terminal weight mu must be >= 0")
            if self.target is None or np.any(np.asarray(self.target) <= 0):
                raise ModelError("kl terminal needs a strictly positive target")
        if self.kind == "linear" and self.g is None:
            raise ModelError("linear terminal needs a cost field g")


def make_flux(kind: str, lo: float, hi: float) -> FluxModel:
    """Build a preset flux with |f'| bounded over the state interval [lo, hi]."""
    if hi < lo:
        raise ModelError("empty admissible state range")
    if kind == "burgers":
        return FluxModel("burgers", lambda u: 0.5 * u * u, lambda u: np.asarray(u, float),
                         max(abs(lo), abs(hi)))
    if kind in ("traffic", "lwr_traffic"):
        return FluxModel("traffic", lambda u: u * (1.0 - u), lambda u: 1.0 - 2.0 * u,
                         max(abs(1.0 - 2.0 * lo), abs(1.0 - 2.0 * hi)))
    if kind == "zero":
        return FluxModel("zero", lambda u: np.zeros_like(np.asarray(u, float)),
                         lambda u: np.zeros_like(np.asarray(u, float)), 0.0)
    raise ModelError(f"unknown flux kind {kind!r}")


def tabulated_flux(states: np.ndarray, values: np.ndarray) -> FluxModel:
    """Cubic-spline flux through (state, flux) samples; bound from the spline."""
    states = np.asarray(states, float)
    values = np.asarray(values, float)
    if states.ndim != 1 or states.size < 4 or np.any(np.diff(states) <= 0):
        raise ModelError("tabulated flux needs >= 4 strictly increasing states")
    spline = CubicSpline(states, values)
    dspline = spline.derivative()
    probe = np.linspace(states[0], states[-1], 2001)
    return FluxModel("tabulated", spline, dspline, float(np.max(np.abs(dspline(probe)))))


def make_entropy(kind: str) -> EntropyModel:
    if kind == "quadratic":
        return EntropyModel(
            "quadratic",
            G=lambda u: 0.5 * u * u,
            Gp=lambda u: np.asarray(u, float),
            Gpp=lambda u: np.ones_like(np.asarray(u, float)),
            a=lambda u: np.ones_like(np.asarray(u, float)),
            V=lambda u: np.ones_like(np.asarray(u, float)),
            positive=False,
        )
    if kind == "boltzmann":
        # G(u) = u log u - u with the z log z -> 0 limit at the origin.
        return EntropyModel(
            "boltzmann",
            G=lambda u: xlogy(u, u) - u,
            Gp=np.log,
            Gpp=lambda u: 1.0 / np.asarray(u, float),
            a=lambda u: np.ones_like(np.asarray(u, float)),
            V=lambda u: np.asarray(u, float),
            positive=True,
        )
    raise ModelError(f"unknown entropy kind {kind!r}")


@dataclasses.dataclass(frozen=True, eq=False)
class ControlProblem:
    """Complete problem data: dynamics, costs, initial density, state bounds.

    ``c`` is the artificial-viscosity constant; monotonicity of the forward
    scheme needs c >= max |f'| / 2 over admissible states.  ``box`` is an
    optional pointwise state constraint [lo, hi] on the density.
    """

    flux: FluxModel
    entropy: EntropyModel
    beta: float
    c: float
    potential: PotentialSpec
    terminal: TerminalSpec
    u0: np.ndarray
    b: float
    box: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "u0", np.asarray(self.u0, float))
        if self.beta < 0:
            raise ModelError("diffusion constant beta must be >= 0")
        if self.c <= 0:
            raise ModelError("artificial-viscosity constant c must be > 0")
        if self.b <= 0:
            raise ModelError("domain length must be > 0")
        if self.c < 0.5 * self.flux.lipschitz_bound - 1e-12:
            raise ModelError(
                f"c = {self.c} below the monotonicity bound "
                f"{0.5 * self.flux.lipschitz_bound} = max|f'|/2")
        if self.box is not None:
            lo, hi = self.box
            if hi <= lo:
                raise ModelError("empty box")
            if np.any(self.u0 < lo) or np.any(self.u0 > hi):
                raise ModelError("initial density violates the box constraint")


def admissible_range(u0: np.ndarray, box: tuple[float, float] | None) -> tuple[float, float]:
    """State range used for the |f'| bound: the box if present, else the
    initial hull (the maximum principle of monotone schemes keeps iterates
    inside the hull of the data)."""
    if box is not None:
        return box
    u0 = np.asarray(u0, float)
    return float(u0.min()), float(u0.max())


def make_problem(
    flux: str | FluxModel,
    entropy: str | EntropyModel,
    u0: np.ndarray,
    b: float,
    beta: float = 0.0,
    c: float | None = None,
    potential: PotentialSpec | None = None,
    terminal: TerminalSpec | None = None,
    box: tuple[float, float] | None = None,
) -> ControlProblem:
    """Assemble a ControlProblem; defaults c to max(0.5, max|f'|/2)."""
    u0 = np.asarray(u0, float)
    if isinstance(flux, str):
        lo, hi = admissible_range(u0, box)
        flux = make_flux(flux, lo, hi)
    if isinstance(entropy, str):
        entropy = make_entropy(entropy)
    if c is None:
        c = max(0.5, 0.5 * flux.lipschitz_bound)
    return ControlProblem(
        flux=flux,
        entropy=entropy,
        beta=beta,
        c=c,
        potential=potential or PotentialSpec(),
        terminal=terminal or TerminalSpec(),
        u0=u0,
        b=b,
        box=box,
    )


def entropy_flux_psi(entropy: EntropyModel, flux: FluxModel, u: float) -> float:
    """Psi(u) = int_{u_ref}^{u} f'(z) G'(z) dz by adaptive quadrature.

    The lower limit is 0 for both presets; for the Boltzmann entropy the
    integrand has the integrable z log z endpoint behaviour.
    """
    def integrand(z):
        return float(flux.df(z) * entropy.Gp(z))

    with np.errstate(divide="ignore", invalid="ignore"):
        out = integrate.quad(integrand, 0.0, float(u), epsabs=1e-9, limit=200,
                             full_output=True)
    value, abserr = out[0], out[1]
    if len(out) > 3 or not np.isfinite(value) or abserr > 1e-7:
        raise ModelError("entropy flux quadrature failed")
    return value


def check_assumption1(problem: ControlProblem, u: np.ndarray) -> float:
    """Residual of the discrete analogue of int G'(u) div f(u) dx = 0.

    Returns |sum_i G'(u_i) (f(u_{i+1}) - f(u_{i-1})) / 2| on the periodic
    sample u; the 1/(2 dx) of the central difference cancels against the dx
    quadrature weight.  For smooth periodic fields this is O(dx).
    """
    u = np.asarray(u, float)
    state = np.maximum(u, POSITIVITY_FLOOR) if problem.entropy.positive else u
    gp = problem.entropy.Gp(state)
    fvals = problem.flux.f(u)
    return float(abs(np.sum(gp * (np.roll(fvals, -1) - np.roll(fvals, 1))) / 2.0))


def functional_F(spec: PotentialSpec, u: np.ndarray, dx: float) -> float:
    """Value of the running potential on a spatial slice."""
    if spec.kind == "zero":
        return 0.0
    u = np.asarray(u, float)
    if np.any(u <= 0):
        raise ModelError("nonpositive density in entropy potential")
    uc = np.maximum(u, POSITIVITY_FLOOR)
    return float(-spec.alpha * np.sum(uc * np.log(uc)) * dx)


def functional_F_deriv(spec: PotentialSpec, u: np.ndarray) -> np.ndarray:
    """Pointwise variational derivative of the running potential."""
    u = np.asarray(u, float)
    if spec.kind == "zero":
        return np.zeros_like(u)
    if np.any(u <= 0):
        raise ModelError("nonpositive density in entropy potential")
    return -spec.alpha * (np.log(np.maximum(u, POSITIVITY_FLOOR)) + 1.0)


def functional_H(spec: TerminalSpec, w: np.ndarray, dx: float) -> float:
    """Value of the terminal cost on the final spatial slice."""
    w = np.asarray(w, float)
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "linear":
        return float(np.sum(w * spec.g) * dx)
    if np.any(w <= 0):
        raise ModelError("nonpositive density in terminal cost")
    wc = np.maximum(w, POSITIVITY_FLOOR)
    return float(spec.mu * np.sum(wc * np.log(wc / spec.target)) * dx)


def functional_H_deriv(spec: TerminalSpec, w: np.ndarray) -> np.ndarray:
    """Pointwise variational derivative of the terminal cost."""
    w = np.asarray(w, float)
    if spec.kind == "zero":
        return np.zeros_like(w)
    if spec.kind == "linear":
        return np.array(spec.g, dtype=float, copy=True)
    if np.any(w <= 0):
        raise ModelError("nonpositive density in terminal cost")
    wc = np.maximum(w, POSITIVITY_FLOOR)
    return spec.mu * (np.log(wc / spec.target) + 1.0)
