"""Reduced Ginzburg-Landau cell problem on the half-cylinder (0, T1) x K_ell.

    G(u) = int |(grad - i E_nu) u|^2 - b |u|^2 + (b/2) |u|^4,
    E_nu(x) = (0, 0, cos(nu) x1 + sin(nu) x2),  K_ell = (-ell, ell)^2,

Neumann at x1 = 0, Dirichlet on the lateral walls and on the truncation wall
x1 = T1. Lengths are in units of the magnetic length.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import spectral1d, spectral2d
from .numcore import (
    DIRICHLET,
    NEUMANN,
    Axis,
    ComplexField,
    Functional,
    Grid,
    GridOperator,
    LinkGauge,
    StructuralError,
    _edge_weights,
    _laplacian_array,
    _slices,
    build_links,
    integrate,
    minimize_energy,
)

DEFAULT_H = 0.25
DEFAULT_T1 = 8.0
SUP_NORM_SLACK = 5e-3
# relative virial gap below which a negative-energy minimizer counts as converged
VIRIAL_TARGET = 1e-4


@dataclass(frozen=True)
class CellProblem:
    b: float
    nu: float
    ell: float
    T1: float = DEFAULT_T1
    h: float = DEFAULT_H

    def __post_init__(self):
        if not 0.0 < self.b <= 1.0:
            raise ValueError(f"b must lie in (0, 1], got {self.b}")
        if not 0.0 <= self.nu <= 0.5 * math.pi + 1e-12:
            raise ValueError(f"nu must lie in [0, pi/2], got {self.nu}")
        if self.ell <= 0 or self.T1 <= 0:
            raise ValueError("ell and T1 must be positive")
        if not 0.0 < self.h <= 0.25 + 1e-12:
            raise ValueError("grid spacing must resolve the magnetic length (h <= 1/4)")
        n_lat = 2 * self.ell / self.h
        if abs(n_lat - round(n_lat)) > 1e-9:
            raise ValueError("2*ell must be a multiple of h")

    @property
    def grid(self) -> Grid:
        return _cell_grid(self.T1, self.ell, self.h)

    @property
    def links(self) -> LinkGauge:
        return _cell_links(self.T1, self.ell, self.h, self.nu)

    @property
    def operator(self) -> GridOperator:
        return GridOperator(self.grid, self.links)

    @property
    def area(self) -> float:
        return 4.0 * self.ell ** 2


@lru_cache(maxsize=16)
def _cell_grid(T1, ell, h) -> Grid:
    return Grid(
        (
            Axis.with_spacing(0.0, T1, h, NEUMANN, DIRICHLET),
            Axis(-ell, ell, int(round(2 * ell / h)), DIRICHLET, DIRICHLET),
            Axis(-ell, ell, int(round(2 * ell / h)), DIRICHLET, DIRICHLET),
        )
    )


def potential_E(nu):
    c, s = math.cos(nu), math.sin(nu)
    return lambda x1, x2, x3: (0.0 * x1, 0.0 * x2, c * x1 + s * x2 + 0.0 * x3)


@lru_cache(maxsize=16)
def _cell_links(T1, ell, h, nu) -> LinkGauge:
    return build_links(_cell_grid(T1, ell, h), potential_E(nu), 1.0)


class CellFunctional(Functional):
    """Discrete G on a cell grid; ``links`` may be overridden for gauge checks."""

    def __init__(self, prob: CellProblem, links: LinkGauge | None = None):
        self.prob = prob
        self.grid = prob.grid
        self.links = prob.links if links is None else links
        if self.links.grid != self.grid:
            raise StructuralError("links live on a different grid")
        self.b = prob.b
        self._w = self.grid.weights()

    def energy_and_gradient(self, u: ComplexField):
        if u.grid != self.grid:
            raise StructuralError("field does not respect the cell grid")
        v = u.values
        lap = _laplacian_array(v, self.grid, self.links)
        rho = v.real ** 2 + v.imag ** 2
        w = self._w
        kin = float(np.sum(w * (v.real * lap.real + v.imag * lap.imag)))
        e = kin + float(np.sum(w * (-self.b * rho + 0.5 * self.b * rho * rho)))
        g = 2.0 * (lap - self.b * v + self.b * rho * v)
        return e, ComplexField(self.grid, g)

    def energy(self, u):
        return self.energy_and_gradient(u)[0]

    def gradient(self, u):
        return self.energy_and_gradient(u)[1]


def cell_energy(u: ComplexField, prob: CellProblem) -> float:
    """Discrete G(u): edge-sum kinetic term plus trapezoid potential terms."""
    if u.grid != prob.grid:
        raise StructuralError("field does not live on the cell grid")
    free = prob.grid.free_mask()
    if np.any(np.asarray(u.values)[~free]):
        raise StructuralError("field is nonzero on a Dirichlet face")
    return CellFunctional(prob).energy(u)


def l4_integral(u: ComplexField) -> float:
    return integrate(u.grid, np.abs(u.values) ** 4)


def decay_weighted_integral(u: ComplexField, links: LinkGauge, x1_min: float = 4.0) -> float:
    """int_{x1 >= 4} x1/(ln x1)^2 (|(grad - iE)u|^2 + |u|^2 + x1^2 |u|^4)."""
    grid = u.grid
    v = u.values
    x1 = grid.axes[0].nodes

    def weight(x):
        out = np.zeros_like(x)
        m = x >= x1_min
        out[m] = x[m] / np.log(x[m]) ** 2
        return out

    total = 0.0
    for k in range(3):
        lo, hi = _slices(3, k)
        e = links.factors[k]
        d = v[hi] - (e * v[lo] if e is not None else v[lo])
        xe = 0.5 * (x1[1:] + x1[:-1]) if k == 0 else x1
        wx = weight(xe).reshape(-1, 1, 1)
        total += float(np.sum(_edge_weights(grid, k) * wx * np.abs(d) ** 2))
    rho = np.abs(v) ** 2
    wn = weight(x1).reshape(-1, 1, 1)
    total += integrate(grid, wn * (rho + x1.reshape(-1, 1, 1) ** 2 * rho ** 2))
    return total


# -- cut-offs and trial states ---------------------------------------------


def cutoff(z):
    """chi: 1 on [-1/2, 1/2], 0 outside (-1, 1), cos^2 ramp in between."""
    a = np.abs(np.asarray(z, dtype=float))
    ramp = np.cos(np.pi * (a - 0.5)) ** 2
    return np.where(a <= 0.5, 1.0, np.where(a >= 1.0, 0.0, ramp))


def cutoff_constants() -> tuple:
    """(lambda, int chi'^2) for the cut-off chi, in closed form."""
    return 1.375, np.pi ** 2 / 2


def _eta(grid: Grid, ell: float):
    _, x2, x3 = grid.coords()
    return cutoff(x2 / ell) * cutoff(x3 / ell)


def lattice_count(ell: float, M: float) -> int:
    """Largest integer strictly below ell/M."""
    r = ell / M
    k = math.floor(r)
    return k - 1 if k == r else k


def centering_offset(state: spectral2d.HalfPlaneState) -> float:
    """Translation along x2 that moves the |phi|^2 centroid to x2 = 0."""
    g = state.field.grid
    _, x2 = g.coords()
    rho = state.field.values.real ** 2
    return -float(integrate(g, rho * (x2 - state.offset)) / integrate(g, rho))


def lattice_trial(prob: CellProblem, M: float, state: spectral2d.HalfPlaneState,
                  offset: float = 0.0) -> ComplexField:
    """eta(x2,x3) sum_j exp(i c_j sin(nu) x3) phi(x1, x2 - c_j), c_j = M j + offset.

    The phase sign makes each summand a ground state of the 3D operator with
    potential E_nu (the magnetic translation of phi by c_j along x2).
    """
    grid = prob.grid
    x1_hi = state.field.grid.axes[0].hi
    if x1_hi < grid.axes[0].hi - 1e-9:
        raise ValueError(
            f"phi box covers x1 <= {x1_hi:g}, smaller than the cell depth {grid.axes[0].hi:g}"
        )
    x1, x2, x3 = grid.coords()
    n = lattice_count(prob.ell, M)
    s = math.sin(prob.nu)
    total = np.zeros(grid.shape, dtype=complex)
    X1, X2 = np.broadcast_arrays(x1[:, :, 0], x2[:, :, 0])
    for j in range(-n, n + 1):
        c = M * j + offset
        slab = state(X1, X2 - c)[:, :, None]
        total = total + np.exp(1j * c * s * x3) * slab
    return ComplexField(grid, _eta(grid, prob.ell) * total)


def tangent_trial(prob: CellProblem, phi0: ComplexField, xi0: float) -> ComplexField:
    """eta(x2,x3) exp(i xi0 x3) phi0(x1) for nu = 0.

    The gauge factor exp(i xi0 x3) selects the x3-momentum at which the
    transverse operator is H(xi0).
    """
    if prob.nu != 0.0:
        raise ValueError("the tangent trial state is defined for nu = 0 only")
    grid = prob.grid
    x1, _, x3 = grid.coords()
    t = phi0.grid.axes[0].nodes
    prof = np.interp(x1.ravel(), t, phi0.values.real, right=0.0).reshape(x1.shape)
    return ComplexField(grid, _eta(grid, prob.ell) * np.exp(1j * xi0 * x3) * prof)


@lru_cache(maxsize=8)
def _phi_state(nu: float, h: float) -> spectral2d.HalfPlaneState:
    return spectral2d.eigenfunction_phi(nu, spectral2d.Resolution(h=h, max_length=80.0))


@lru_cache(maxsize=4)
def _phi0(h: float):
    th = spectral1d.find_theta0(h)
    return spectral1d.phi0(h, xi0=th.xi0), th.xi0, th.theta0


def trial_upper_bound_lattice(prob: CellProblem, M: float, t: float,
                              state: spectral2d.HalfPlaneState | None = None,
                              offset: float = 0.0) -> float:
    """G(t f) for the lattice trial state; an upper bound for d."""
    if not 0.0 < prob.nu < 0.5 * math.pi:
        raise ValueError("the lattice trial state needs 0 < nu < pi/2")
    if t <= 0 or M <= 0:
        raise ValueError("t and M must be positive")
    state = state or _phi_state(prob.nu, prob.h)
    return cell_energy(lattice_trial(prob, M, state, offset).scaled(t), prob)


@dataclass(frozen=True)
class TunedTrial:
    value: float
    t: float
    M: float | None
    offset: float


def _best_scale(f: ComplexField, prob: CellProblem):
    """min over t of G(t f) = a t^2 + q t^4, returned as (value, t)."""
    a = CellFunctional(prob).energy(f) - 0.5 * prob.b * l4_integral(f)
    q = 0.5 * prob.b * l4_integral(f)
    if a >= 0 or q <= 0:
        return 0.0, 0.0
    t2 = -a / (2.0 * q)
    return -a * a / (4.0 * q), math.sqrt(t2)


def tuned_trial_bound(prob: CellProblem, Ms=None) -> TunedTrial:
    """Best trial upper bound over M, the lattice origin and the amplitude t.

    The amplitude is optimized in closed form since G(t f) is a quadratic in
    t^2. Returns value 0 (t = 0) when no member of the family goes negative.
    """
    if prob.nu == 0.0:
        phi0, xi0, _ = _phi0(1.0 / 200)
        v, t = _best_scale(tangent_trial(prob, phi0, xi0), prob)
        return TunedTrial(v, t, None, 0.0)
    state = _phi_state(prob.nu, prob.h)
    if Ms is None:
        Ms = [prob.ell, prob.ell / 2, prob.ell / 3]
    best = TunedTrial(0.0, 0.0, None, 0.0)
    for off in (0.0, centering_offset(state)):
        for M in Ms:
            v, t = _best_scale(lattice_trial(prob, M, state, off), prob)
            if v < best.value:
                best = TunedTrial(v, t, M, off)
    return best


def trial_upper_bound_tangent(prob: CellProblem, t: float, h1d: float = 1.0 / 200) -> float:
    """G(t f) for the nu = 0 trial state eta * exp(i xi0 x3) * phi0."""
    if prob.nu != 0.0:
        raise ValueError("the tangent trial state is defined for nu = 0 only")
    phi0, xi0, _ = _phi0(h1d)
    return cell_energy(tangent_trial(prob, phi0, xi0).scaled(t), prob)


def lattice_main_term(prob: CellProblem, M: float, t: float,
                      state: spectral2d.HalfPlaneState, offset: float = 0.0) -> float:
    """Direct quadrature of the diagonal (per-bump) part of G(t f).

    Each bump contributes t^2 int chi_l(x3)^2 dx3 * int chi_l(x2)^2 [|grad phi|^2
    + V phi^2 - b phi^2 + (b/2) t^2 phi^4](x1, x2 - c_j) dx1 dx2; the 2D
    integrals use the eigenfunction's own grid.
    """
    g2 = state.field.grid
    phi = state.field.values.real
    x1, x2b = g2.coords()
    x2 = np.broadcast_to(x2b - state.offset, phi.shape)
    nu = prob.nu
    V = (math.cos(nu) * x1 + math.sin(nu) * x2) ** 2
    z = np.linspace(-prob.ell, prob.ell, 20001)
    int_x3 = float(np.trapezoid(cutoff(z / prob.ell) ** 2, z))
    total = 0.0
    n = lattice_count(prob.ell, M)
    for j in range(-n, n + 1):
        c = M * j + offset
        chi2 = cutoff((x2 + c) / prob.ell) ** 2
        dens = (V - prob.b + 0.5 * prob.b * t * t * phi ** 2) * phi ** 2
        pot = integrate(g2, chi2 * dens)
        kin = 0.0
        for k in range(2):
            lo, hi = _slices(2, k)
            d = phi[hi] - phi[lo]
            xm = 0.5 * (x2[hi] + x2[lo]) + c
            kin += float(np.sum(_edge_weights(g2, k) * cutoff(xm / prob.ell) ** 2 * d * d))
        total += kin + pot
    return t * t * int_x3 * total


# -- solve -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CellSolution:
    problem: CellProblem
    d_value: float
    minimizer: ComplexField
    sup_norm: float
    virial_gap: float
    decay_weighted_integral: float
    l4: float
    gradient_norm: float
    restart_energies: tuple = ()
    warnings: tuple = ()

    @property
    def d_per_area(self) -> float:
        return self.d_value / self.problem.area

    def to_dict(self) -> dict:
        p = self.problem
        return {
            "b": p.b, "nu": p.nu, "ell": p.ell,
            "d": self.d_value,
            "d_per_area": self.d_per_area,
            "sup_norm": self.sup_norm,
            "virial_gap": self.virial_gap,
            "decay_integral": self.decay_weighted_integral,
            "gradient_norm": self.gradient_norm,
            "restart_energies": list(self.restart_energies),
            "warnings": list(self.warnings),
            "grid": p.grid.describe(),
        }


def _seeds(prob: CellProblem, seed: int):
    grid = prob.grid
    seeds = []
    nu = prob.nu
    if nu == 0.0:
        phi0, xi0, _ = _phi0(1.0 / 200)
        seeds.append(tangent_trial(prob, phi0, xi0).scaled(0.5))
    elif nu < 0.5 * math.pi - 1e-9:
        try:
            state = _phi_state(nu, prob.h)
            seeds.append(lattice_trial(prob, prob.ell, state, centering_offset(state)).scaled(0.5))
        except spectral2d.TruncationError:
            pass
    x1, _, _ = grid.coords()
    bump = _eta(grid, prob.ell) * np.exp(-0.5 * x1 ** 2)
    seeds.append(ComplexField(grid, 0.5 * bump + 0j))
    rng = np.random.default_rng(seed)
    rand = rng.uniform(-0.5, 0.5, grid.shape) + 1j * rng.uniform(-0.5, 0.5, grid.shape)
    seeds.append(ComplexField(grid, rand * np.exp(-0.25 * x1 ** 2)))
    return seeds


def solve_cell(prob: CellProblem, restarts: int = 3, tol: float | None = None,
               seed: int = 0, maxiter: int = 40000, extra_seeds=(),
               method: str = "bb") -> CellSolution:
    """Multi-start minimization of the discrete cell functional.

    BB is the default here: on the cell grids it is about twice as fast as
    L-BFGS at the same tolerance.
    """
    if tol is None:
        tol = 1e-6 * max(1.0, prob.area)
    functional = CellFunctional(prob)
    seeds = list(extra_seeds) + _seeds(prob, seed)
    seeds = seeds[: max(restarts, len(extra_seeds) + 1)]
    res = minimize_energy(functional, seeds, restarts=len(seeds), tol=tol,
                          maxiter=maxiter, seed=seed, method=method)
    u = res.minimizer
    energy = res.energy
    grad = res.gradient_norm
    # small |d| makes the absolute tolerance loose, so tighten it from the best state
    for _ in range(4):
        if energy >= 0.0 or abs(energy + 0.5 * prob.b * l4_integral(u)) <= VIRIAL_TARGET * abs(energy):
            break
        tol *= 0.1
        more = minimize_energy(functional, u, tol=tol, maxiter=maxiter, seed=seed, method=method)
        u, energy, grad = more.minimizer, more.energy, more.gradient_norm
    if energy > 0.0:
        # the zero field is always admissible
        u = ComplexField(prob.grid, np.zeros(prob.grid.shape, dtype=complex))
        energy = 0.0
    l4 = l4_integral(u)
    gap = abs(energy + 0.5 * prob.b * l4)
    decay = decay_weighted_integral(u, prob.links)
    warns = list(res.warnings)
    for w in warns:
        warnings.warn(w)
    return CellSolution(
        problem=prob,
        d_value=energy,
        minimizer=u,
        sup_norm=u.sup_norm(),
        virial_gap=gap,
        decay_weighted_integral=decay,
        l4=l4,
        gradient_norm=grad if energy < 0 else 0.0,
        restart_energies=res.all_energies,
        warnings=tuple(warns),
    )


def subadditivity_check(b: float, nu: float, ell: float, n: int = 2, h: float = DEFAULT_H,
                        **kw) -> tuple:
    """(d(n ell), n^2 d(ell)); the comparison argument gives lhs <= rhs."""
    if n not in (2, 3):
        raise ValueError("n must be 2 or 3")
    small = solve_cell(CellProblem(b, nu, ell, h=h), **kw)
    big = solve_cell(CellProblem(b, nu, n * ell, h=h), **kw)
    return big.d_value, n * n * small.d_value
