"""Half-plane operator L(nu) = -Laplacian + (cos(nu) x1 + sin(nu) x2)^2 on x1 > 0
(Neumann at x1 = 0), its ground energy zeta(nu) and eigenfunction.

The operator is solved in a translated frame: the potential becomes
(cos(nu) x1 + sin(nu) x2 - s)^2 with s = xi0, which for nu > 0 is the same
operator shifted by s / sin(nu) along x2 and keeps the ground state near the
box center. For nu = 0 the potential no longer depends on x2; there the 3D
bottom of spectrum is the infimum over s, and the lateral walls are Neumann.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator, RegularGridInterpolator
from scipy.optimize import brentq, minimize_scalar
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .numcore import (
    DIRICHLET,
    NEUMANN,
    Axis,
    ComplexField,
    EigenResult,
    Grid,
    GridOperator,
    integrate,
    lowest_eigenpair,
)
from .spectral1d import REFERENCE_THETA0

HALF_PI = 0.5 * math.pi
DEFAULT_H = 0.1
DEFAULT_MAX_LENGTH = 80.0
WALL_MASS_LIMIT = 1e-6
NEAR_EDGE_GAP = 0.05
XI0 = math.sqrt(REFERENCE_THETA0)


class TruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Resolution:
    h: float = DEFAULT_H
    max_length: float = DEFAULT_MAX_LENGTH
    length: float | None = None  # decay length override (skips adaptivity)


def _box(nu: float, h: float, length: float) -> Grid:
    sn, cs = math.sin(nu), math.cos(nu)
    width = 4.0 + 4.0 / math.sqrt(max(sn, 1e-3))
    t1 = max(XI0 + 8.0, length * sn + 6.0)
    lo2, hi2 = -(length * cs + width), width
    return Grid(
        (
            Axis.with_spacing(0.0, t1, h, NEUMANN, DIRICHLET),
            Axis.with_spacing(lo2, hi2, h, DIRICHLET, DIRICHLET),
        )
    )


def half_plane_operator(nu: float, grid: Grid, shift: float = XI0) -> GridOperator:
    x1, x2 = grid.coords()
    return GridOperator(
        grid, potential=(math.cos(nu) * x1 + math.sin(nu) * x2 - shift) ** 2
    )


def _wall_mass(res: EigenResult) -> dict:
    v = np.abs(res.eigenvector.values) ** 2 * res.eigenvector.grid.weights()
    total = v.sum()
    return {
        "x1": float(v[-3:, :].sum() / total),
        "x2": float((v[:, :3].sum() + v[:, -3:].sum()) / total),
    }


def _zeta_nu0(h: float, tol: float) -> EigenResult:
    # x2-independent potential: Neumann lateral walls, minimize over the shift
    grid = Grid(
        (
            Axis.with_spacing(0.0, 12.0, h, NEUMANN, DIRICHLET),
            Axis.with_spacing(-1.0, 1.0, 2.0 / 8, NEUMANN, NEUMANN),
        )
    )

    def solve(s):
        return lowest_eigenpair(half_plane_operator(0.0, grid, s), tol=tol)

    best = minimize_scalar(lambda s: solve(s).eigenvalue, bracket=(0.6, 0.77, 0.95),
                           method="golden", tol=1e-6)
    res = solve(float(best.x))
    return EigenResult(res.eigenvalue, res.eigenvector, res.residual, res.iterations,
                       ("translation-invariant",))


def _solve_box(nu, h, length, tol, guess=None):
    grid = _box(nu, h, length)
    op = half_plane_operator(nu, grid)
    shift = None if guess is None else guess - 0.02
    return lowest_eigenpair(op, tol=tol, shift=shift)


def zeta(nu: float, resolution: Resolution = Resolution(), tol: float = 1e-9,
         guess: float | None = None) -> EigenResult:
    """Lowest eigenvalue of the truncated discrete L(nu).

    Flags: ``essential-edge`` at nu = pi/2, ``near-edge`` when the spectral
    gap 1 - zeta is below 0.05, ``box-capped`` when the adaptive decay length
    hit ``resolution.max_length``.
    """
    if not 0.0 <= nu <= HALF_PI + 1e-15:
        raise ValueError(f"nu must lie in [0, pi/2], got {nu}")
    nu = min(nu, HALF_PI)
    h = resolution.h
    if nu == 0.0:
        return _zeta_nu0(h, tol)
    flags = []
    if resolution.length is not None:
        length = resolution.length
    else:
        if guess is None:
            guess = _solve_box(nu, max(h, 0.25), 20.0, 1e-6).eigenvalue
        gap = max(1.0 - guess, 1e-6)
        length = 10.0 / math.sqrt(gap)
        if length > resolution.max_length:
            length = resolution.max_length
            flags.append("box-capped")
    res = _solve_box(nu, h, length, tol, guess)
    walls = _wall_mass(res)
    if nu == HALF_PI:
        flags.append("essential-edge")
    elif 1.0 - res.eigenvalue < NEAR_EDGE_GAP:
        flags.append("near-edge")
    if nu < HALF_PI:
        for axis, mass in walls.items():
            if mass > WALL_MASS_LIMIT:
                raise TruncationError(
                    f"eigenvector mass {mass:.2e} at the {axis} walls for nu={nu:.6g}; "
                    f"enlarge the box along {axis}"
                )
    return EigenResult(res.eigenvalue, res.eigenvector, res.residual, res.iterations,
                       tuple(flags))


@dataclass(frozen=True)
class DecayReport:
    alpha_fit: float
    alpha_bound: float
    tail_mass: float


@dataclass(frozen=True, eq=False)
class HalfPlaneState:
    """Ground state of L(nu) sampled on the translated box.

    ``offset`` maps box coordinates to half-plane coordinates:
    x2_half_plane = x2_box - offset.
    """

    nu: float
    zeta: float
    field: ComplexField
    offset: float
    decay: DecayReport

    def __call__(self, x1, x2):
        """phi at half-plane coordinates (zero outside the sampled box)."""
        g = self.field.grid
        interp = RegularGridInterpolator(
            tuple(a.nodes for a in g.axes), self.field.values.real,
            bounds_error=False, fill_value=0.0,
        )
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        pts = np.stack([x1.ravel(), (x2 + self.offset).ravel()], axis=-1)
        return interp(pts).reshape(x1.shape)

    def extent(self):
        """Half-plane x2 interval covered by the sampled box."""
        a = self.field.grid.axes[1]
        return a.lo - self.offset, a.hi - self.offset

    def l4(self) -> float:
        return integrate(self.field.grid, np.abs(self.field.values) ** 4)


def _decay_fit(field: ComplexField, nu: float) -> tuple:
    grid = field.grid
    phi = np.abs(field.values)
    i0, j0 = np.unravel_index(np.argmax(phi), phi.shape)
    x1, x2 = (a.nodes for a in grid.axes)
    # ray along the zero line of the potential, heading into the bulk
    direction = np.array([math.sin(nu), -math.cos(nu)])
    interp = RegularGridInterpolator((x1, x2), phi, bounds_error=False, fill_value=0.0)
    r = np.linspace(0.0, 400.0, 8001)
    pts = np.array([x1[i0], x2[j0]]) + r[:, None] * direction
    vals = interp(pts)
    peak = phi.max()
    sel = (vals < 1e-3 * peak) & (vals > 1e-9 * peak)
    if sel.sum() < 5:
        return float("nan"), r, vals
    slope = np.polyfit(r[sel], np.log(vals[sel]), 1)[0]
    return float(-slope), r, vals


def eigenfunction_phi(nu: float, resolution: Resolution = Resolution(),
                      tol: float = 1e-10) -> HalfPlaneState:
    """Positive normalized discrete ground state of L(nu) with decay diagnostics."""
    if not 0.0 < nu < HALF_PI:
        raise ValueError(
            "an L2 eigenfunction exists only for 0 < nu < pi/2; at nu = pi/2 the "
            "bottom of the spectrum is the edge of the essential spectrum [1, inf)"
        )
    res = zeta(nu, resolution, tol)
    v = res.eigenvector.values.real
    v = v * np.sign(v.flat[np.argmax(np.abs(v))])
    # entries below round-off have indeterminate sign; the ground state is positive
    phi = ComplexField(res.eigenvector.grid, np.abs(v) + 0j)
    phi = phi.scaled(1.0 / phi.norm())
    alpha, _, _ = _decay_fit(phi, nu)
    w = np.abs(phi.values) ** 2 * phi.grid.weights()
    tail = float((w[-3:, :].sum() + w[:, :3].sum() + w[:, -3:].sum()) / w.sum())
    report = DecayReport(alpha, math.sqrt(max(1.0 - res.eigenvalue, 0.0)), tail)
    return HalfPlaneState(nu, res.eigenvalue, phi, XI0 / math.sin(nu), report)


class SpectralCurve(BaseEstimator):
    """Sampled nu -> zeta(nu) with a monotone piecewise-cubic interpolant.

    ``fit(nu_grid)`` solves at each sample (continuation: each solve is
    seeded with the previous eigenvalue as shift and box-size estimate).
    A sample at nu = pi/2 is closed with the exact endpoint value 1; its
    computed truncated value is kept in ``meta_``.
    """

    def __init__(self, h=DEFAULT_H, max_length=DEFAULT_MAX_LENGTH, slack=1e-4,
                 close_endpoint=True):
        self.h = h
        self.max_length = max_length
        self.slack = slack
        self.close_endpoint = close_endpoint

    def fit(self, nu_grid, y=None):
        nu = np.asarray(nu_grid, dtype=float)
        if nu.ndim != 1 or len(nu) < 2:
            raise ValueError("nu_grid must be a 1D list of at least 2 values")
        if np.any(np.diff(nu) <= 0) or nu[0] < 0 or nu[-1] > HALF_PI + 1e-12:
            raise ValueError("nu_grid must be strictly increasing inside [0, pi/2]")
        res = Resolution(self.h, self.max_length)
        values, flags, meta = [], [], []
        guess = None
        for x in nu:
            r = zeta(float(x), res, guess=guess)
            z = r.eigenvalue
            m = {"nu": float(x), "computed": z, "grid": r.eigenvector.grid.describe(),
                 "residual": r.residual}
            if self.close_endpoint and abs(x - HALF_PI) < 1e-12:
                z = 1.0
                r = EigenResult(z, r.eigenvector, r.residual, r.iterations,
                                r.flags + ("analytic-endpoint",))
            values.append(z)
            flags.append(r.flags)
            meta.append(m)
            guess = z if x > 0 else None
        self._store(nu, np.array(values), flags, meta)
        return self

    def _store(self, nu, values, flags, meta):
        drops = np.diff(values)
        bad = np.nonzero(drops < -self.slack)[0]
        if bad.size:
            k = int(bad[0])
            raise ValueError(
                f"zeta decreases between nu={nu[k]:.6g} ({values[k]:.8f}) and "
                f"nu={nu[k + 1]:.6g} ({values[k + 1]:.8f}) beyond slack {self.slack}"
            )
        self.nu_samples_ = nu
        self.zeta_values_ = values
        self.flags_ = [tuple(f) for f in flags]
        self.meta_ = meta
        self.interpolator_ = PchipInterpolator(nu, np.maximum.accumulate(values))
        return self

    def predict(self, nu):
        check_is_fitted(self, "interpolator_")
        nu = np.asarray(nu, dtype=float)
        if np.any(nu < self.nu_samples_[0] - 1e-12) or np.any(nu > self.nu_samples_[-1] + 1e-12):
            raise ValueError("nu outside the sampled range")
        return self.interpolator_(np.clip(nu, self.nu_samples_[0], self.nu_samples_[-1]))

    def inverse(self, z):
        """nu with zeta(nu) = z, for z inside (zeta(nu_0), zeta(nu_last))."""
        check_is_fitted(self, "interpolator_")
        lo, hi = self.nu_samples_[0], self.nu_samples_[-1]
        zlo, zhi = float(self.interpolator_(lo)), float(self.interpolator_(hi))
        out = []
        for zz in np.atleast_1d(np.asarray(z, dtype=float)):
            if zz <= zlo:
                out.append(lo)
            elif zz >= zhi:
                out.append(hi)
            else:
                out.append(brentq(lambda x: float(self.interpolator_(x)) - zz, lo, hi,
                                  xtol=1e-13))
        out = np.array(out)
        return out if np.ndim(z) else float(out[0])

    def to_dict(self) -> dict:
        check_is_fitted(self, "interpolator_")
        return {
            "nu": [float(x) for x in self.nu_samples_],
            "zeta": [float(x) for x in self.zeta_values_],
            "flags": [list(f) for f in self.flags_],
            "meta": {"h": self.h, "max_length": self.max_length, "samples": self.meta_},
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "SpectralCurve":
        meta = data.get("meta", {})
        curve = cls(h=meta.get("h", DEFAULT_H), max_length=meta.get("max_length", DEFAULT_MAX_LENGTH))
        flags = data.get("flags", [[] for _ in data["nu"]])
        return curve._store(np.asarray(data["nu"], float), np.asarray(data["zeta"], float),
                            flags, meta.get("samples", []))

    @classmethod
    def from_json(cls, path) -> "SpectralCurve":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_spectral_curve(nu_grid, h: float = DEFAULT_H, max_length: float = DEFAULT_MAX_LENGTH) -> SpectralCurve:
    nu = np.asarray(nu_grid, dtype=float)
    if len(nu) < 9:
        raise ValueError("need at least 9 nu samples")
    return SpectralCurve(h=h, max_length=max_length).fit(nu)
