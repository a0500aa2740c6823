"""Half-line harmonic oscillator family and the de Gennes constant.

H(xi) = -d^2/dt^2 + (t - xi)^2 on t > 0 with u'(0) = 0. Its ground energy
mu1(xi) is minimized at xi0 with mu1(xi0) = Theta0 and xi0^2 = Theta0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .numcore import (
    DIRICHLET,
    NEUMANN,
    Axis,
    ComplexField,
    EigenResult,
    Grid,
    GridOperator,
    lowest_eigenpair,
)

DEFAULT_H = 1.0 / 200
WALL_MASS_LIMIT = 1e-8


class TruncationError(ValueError):
    pass


class UnimodalityError(RuntimeError):
    def __init__(self, message, curve):
        super().__init__(message)
        self.curve = curve


def truncation_length(xi: float) -> float:
    return max(12.0, xi + 8.0)


def oscillator(xi: float, h: float = DEFAULT_H, T: float | None = None) -> GridOperator:
    """Discrete H(xi) on [0, T], Neumann at 0 and Dirichlet at T."""
    if T is None:
        T = truncation_length(xi)
    if T < xi + 8.0:
        raise TruncationError(
            f"truncation length {T:g} too short for xi={xi:g}; need at least {xi + 8.0:g}"
        )
    grid = Grid((Axis.with_spacing(0.0, T, h, NEUMANN, DIRICHLET),))
    (t,) = grid.coords()
    return GridOperator(grid, potential=(t - xi) ** 2)


def mu1(xi: float, h: float = DEFAULT_H, T: float | None = None, tol: float = 1e-9) -> EigenResult:
    """Ground energy of the truncated discrete H(xi).

    The result carries the flag ``"truncation"`` when more than 1e-8 of the
    eigenvector mass sits within two nodes of the far wall.
    """
    op = oscillator(xi, h, T)
    res = lowest_eigenpair(op, tol=tol)
    v = np.abs(res.eigenvector.values) ** 2 * op.grid.weights()
    flags = ("truncation",) if v[-3:].sum() > WALL_MASS_LIMIT else ()
    return EigenResult(res.eigenvalue, res.eigenvector, res.residual, res.iterations, flags)


@dataclass(frozen=True)
class Theta0Result:
    theta0: float
    xi0: float
    mu1_curve: tuple
    h: float
    residual: float
    grid: dict = field(default_factory=dict)


def _check_unimodal(xs, ys):
    interior_min = [
        i for i in range(1, len(ys) - 1) if ys[i] <= ys[i - 1] and ys[i] <= ys[i + 1]
    ]
    edge_min = [i for i in (0, len(ys) - 1) if ys[i] == min(ys)]
    if len(interior_min) != 1 or edge_min:
        raise UnimodalityError(
            f"mu1 samples are not unimodal on [{xs[0]}, {xs[-1]}] "
            f"(local minima at indices {interior_min + edge_min})",
            curve=list(zip(xs, ys)),
        )
    return interior_min[0]


def find_theta0(h: float = DEFAULT_H, search_tol: float = 1e-7, n_samples: int = 21) -> Theta0Result:
    """Golden-section minimum of mu1 over xi in [0, 2]."""
    if search_tol <= 0:
        raise ValueError("search_tol must be positive")
    xs = np.linspace(0.0, 2.0, n_samples)
    ys = [mu1(x, h).eigenvalue for x in xs]
    i = _check_unimodal(list(xs), ys)
    res = minimize_scalar(
        lambda x: mu1(x, h).eigenvalue,
        bracket=(xs[i - 1], xs[i], xs[i + 1]),
        method="golden",
        tol=search_tol,
    )
    xi0 = float(res.x)
    top = mu1(xi0, h)
    curve = tuple(sorted([(float(x), float(y)) for x, y in zip(xs, ys)] + [(xi0, top.eigenvalue)]))
    return Theta0Result(
        theta0=top.eigenvalue,
        xi0=xi0,
        mu1_curve=curve,
        h=h,
        residual=top.residual,
        grid=top.eigenvector.grid.describe(),
    )


def richardson_theta0(h: float = 1.0 / 50, levels: int = 3) -> dict:
    """Refinement study h, h/2, h/4 with second-order Richardson extrapolation."""
    hs = [h / 2 ** k for k in range(levels)]
    vals = [find_theta0(hk).theta0 for hk in hs]
    ratios = [
        (vals[k] - vals[k + 1]) / (vals[k + 1] - vals[k + 2]) for k in range(levels - 2)
    ]
    extrap = vals[-1] + (vals[-1] - vals[-2]) / 3.0
    return {"h": hs, "theta0": vals, "ratios": ratios, "extrapolated": extrap}


def phi0(h: float = DEFAULT_H, xi0: float | None = None, theta: Theta0Result | None = None) -> ComplexField:
    """Normalized, nonnegative ground state of H(xi0)."""
    if xi0 is None:
        theta = theta or find_theta0(h)
        xi0 = theta.xi0
    res = mu1(xi0, h)
    v = res.eigenvector.values
    v = v * (np.conj(v[0]) / abs(v[0]))
    f = ComplexField(res.eigenvector.grid, np.abs(v.real) + 0j)
    return f.scaled(1.0 / f.norm())


# Extrapolated value of richardson_theta0(1/50) (levels 1/50, 1/100, 1/200,
# successive-difference ratio 3.9996); tests recompute and compare.
REFERENCE_THETA0 = 0.5901061250
