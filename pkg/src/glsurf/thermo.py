"""Thermodynamic limit of the cell energies.

E(b, nu) = lim d(b, nu; ell) / (4 ell^2), with
E <= d/(4 ell^2) <= E + C ell^(-2/3). The limit is estimated by a fixed-exponent
power-law fit over a few cell sizes, and vanishes exactly when b <= zeta(nu).
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import OptimizeWarning, curve_fit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import __version__, reducedgl, spectral1d
from .spectral2d import HALF_PI, SpectralCurve

log = logging.getLogger(__name__)

EXPONENT = 2.0 / 3.0
SLACK = 1e-4
ANALYTIC_ZERO = "analytic-zero"
EXTRAPOLATED = "extrapolated"


def density(d: float, ell: float) -> float:
    """Energy per unit boundary area: d over the square of side 2 ell."""
    return d / (4.0 * ell * ell)


def density_from_ell_squared(value: float) -> float:
    """Map d/ell^2 to the per-area density d/(4 ell^2)."""
    return value / 4.0


class PowerLawExtrapolator(BaseEstimator):
    """Least-squares fit f(ell) = A + c ell^(-exponent).

    After ``fit``: ``A_`` is the limit clamped so that every sample satisfies
    f >= A, ``C_env_`` the smallest envelope constant with
    f - A <= C_env ell^(-exponent), and ``window_stability_`` the change in
    the fitted limit when only the larger half of the samples is used.
    """

    def __init__(self, exponent=EXPONENT, slack=SLACK):
        self.exponent = exponent
        self.slack = slack

    def _lsq(self, ell, f):
        x = ell ** -self.exponent
        A = np.stack([np.ones_like(x), x], axis=1)
        coef, *_ = np.linalg.lstsq(A, f, rcond=None)
        return float(coef[0]), float(coef[1])

    def fit(self, ells, f=None):
        if f is None:
            ells, f = zip(*ells)
        ell = np.asarray(ells, dtype=float)
        f = np.asarray(f, dtype=float)
        if ell.ndim != 1 or len(ell) < 3 or len(ell) != len(f):
            raise ValueError("need at least 3 (ell, f) samples")
        if np.any(np.diff(ell) <= 0):
            raise ValueError("ell samples must be strictly increasing")
        A_fit, c = self._lsq(ell, f)
        tail = slice(max(0, len(ell) - max(2, (len(ell) + 1) // 2)), None)
        A_tail, _ = self._lsq(ell[tail], f[tail])
        A = min(A_fit, float(f.min()))
        if np.any(f < A - self.slack):
            raise ValueError("samples fall below the fitted limit")
        env = float(np.max((f - A) * ell ** self.exponent))
        self.ell_samples_ = ell.tolist()
        self.f_values_ = f.tolist()
        self.A_fit_ = A_fit
        self.A_ = A
        self.slope_ = c
        self.C_env_ = max(env, 0.0)
        self.window_stability_ = abs(A_fit - A_tail)
        self.free_exponent_ = self._free_exponent(ell, f)
        return self

    @staticmethod
    def _free_exponent(ell, f):
        if len(ell) < 4 or np.ptp(f) == 0:
            return None
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", OptimizeWarning)
                p, _ = curve_fit(lambda x, a, c, s: a + c * x ** -s, ell, f, p0=(f[-1], 0.0, EXPONENT),
                                 maxfev=2000)
        except (RuntimeError, ValueError):
            return None
        log.debug("free-exponent cross-check: exponent %.3f", p[2])
        return float(p[2])

    def predict(self, ell):
        check_is_fitted(self, "A_")
        return self.A_ + self.slope_ * np.asarray(ell, dtype=float) ** -self.exponent

    def envelope_ok(self) -> bool:
        ell = np.asarray(self.ell_samples_)
        f = np.asarray(self.f_values_)
        return bool(np.all(f - self.A_ <= self.C_env_ * ell ** -self.exponent + self.slack))

    def to_dict(self) -> dict:
        check_is_fitted(self, "A_")
        return {
            "ell": self.ell_samples_, "f": self.f_values_, "A": self.A_, "A_fit": self.A_fit_,
            "C_env": self.C_env_, "window_stability": self.window_stability_,
            "exponent": self.exponent,
        }


def extrapolate(samples) -> PowerLawExtrapolator:
    """Fit from a list of (ell, f) pairs."""
    return PowerLawExtrapolator().fit(samples)


@dataclass(frozen=True)
class LimitResult:
    E: float
    provenance: str
    fit: PowerLawExtrapolator | None = None
    solutions: tuple = ()

    @property
    def lipschitz(self) -> float:
        """Largest ||u||^2/(4 ell^2) among the cell minimizers (bounds |dE/db|)."""
        out = 0.0
        for s in self.solutions:
            out = max(out, s.minimizer.norm() ** 2 / (4 * s.problem.ell ** 2))
        return out


def E_of(b: float, nu: float, ells=(4.0, 6.0, 8.0), curve: SpectralCurve | None = None,
         h: float = reducedgl.DEFAULT_H, **solve_kw) -> LimitResult:
    """E(b, nu), skipping the solves where the zero-set criterion b <= zeta(nu) applies."""
    if not 0.0 < b <= 1.0:
        raise ValueError(f"b must lie in (0, 1], got {b}")
    if not 0.0 <= nu <= HALF_PI + 1e-12:
        raise ValueError(f"nu must lie in [0, pi/2], got {nu}")
    if b <= zeta_lower(nu, curve):
        return LimitResult(0.0, ANALYTIC_ZERO)
    sols = tuple(
        solve_cached(reducedgl.CellProblem(b, nu, float(ell), h=h), **solve_kw) for ell in ells
    )
    fit = PowerLawExtrapolator().fit([s.problem.ell for s in sols],
                                     [density(s.d_value, s.problem.ell) for s in sols])
    return LimitResult(min(fit.A_, 0.0), EXTRAPOLATED, fit, sols)


def zeta_lower(nu: float, curve: SpectralCurve | None) -> float:
    """zeta(nu) for the shortcut; without a curve only the certain cases apply."""
    if abs(nu - HALF_PI) < 1e-12:
        return 1.0
    if curve is not None:
        return float(curve.predict(nu))
    return spectral1d.REFERENCE_THETA0


_SOLVE_CACHE: dict = {}


def solve_cached(prob: reducedgl.CellProblem, **kw) -> reducedgl.CellSolution:
    """solve_cell with an in-process memo keyed by the problem and options."""
    key = (prob, tuple(sorted(kw.items())))
    if key not in _SOLVE_CACHE:
        _SOLVE_CACHE[key] = reducedgl.solve_cell(prob, **kw)
    return _SOLVE_CACHE[key]


class EnergyTable(BaseEstimator):
    """E(b, nu) on a rectangular grid with per-entry provenance and audits.

    ``fit(b_grid, nu_grid)`` fills the table, then checks the zero set
    against the spectral curve, row monotonicity in b, and a Lipschitz bound
    in b. ``predict(b, nu)`` interpolates bilinearly.
    """

    def __init__(self, ells=(4.0, 6.0, 8.0), h=reducedgl.DEFAULT_H, curve=None, slack=SLACK):
        self.ells = ells
        self.h = h
        self.curve = curve
        self.slack = slack

    def fit(self, b_grid, nu_grid=None):
        b = np.asarray(b_grid, dtype=float)
        nu = np.asarray(nu_grid, dtype=float)
        if np.any(np.diff(b) <= 0) or np.any(np.diff(nu) <= 0):
            raise ValueError("grids must be strictly increasing")
        if b[0] <= 0 or b[-1] > 1.0 or nu[0] < 0 or nu[-1] > HALF_PI + 1e-12:
            raise ValueError("b_grid must lie in (0, 1] and nu_grid in [0, pi/2]")
        E = np.zeros((len(b), len(nu)))
        prov = [[None] * len(nu) for _ in b]
        lip = np.zeros_like(E)
        fits = {}
        for i, bb in enumerate(b):
            for j, nn in enumerate(nu):
                r = E_of(float(bb), float(nn), self.ells, self.curve, self.h)
                E[i, j] = r.E
                prov[i][j] = r.provenance
                lip[i, j] = r.lipschitz
                if r.fit is not None:
                    fits[(i, j)] = r.fit.to_dict()
        return self._store(b, nu, E, prov, lip, fits)

    def _store(self, b, nu, E, prov, lip, fits):
        self.b_grid_ = np.asarray(b, dtype=float)
        self.nu_grid_ = np.asarray(nu, dtype=float)
        self.E_ = np.asarray(E, dtype=float)
        self.provenance_ = prov
        self.lipschitz_ = np.asarray(lip, dtype=float)
        self.fits_ = fits
        self.audit_ = self.audit()
        self.interpolator_ = RegularGridInterpolator(
            (self.b_grid_, self.nu_grid_), self.E_, method="linear"
        ) if len(b) > 1 and len(nu) > 1 else None
        return self

    def audit(self) -> dict:
        """Sign, zero-set, monotonicity and Lipschitz checks; raises on a monotonicity break."""
        b, nu, E = self.b_grid_, self.nu_grid_, self.E_
        if np.any(E > self.slack):
            i, j = np.argwhere(E > self.slack)[0]
            raise ValueError(f"positive energy at (b={b[i]:g}, nu={nu[j]:.4f})")
        for j in range(len(nu)):
            for i in range(len(b) - 1):
                if E[i + 1, j] > E[i, j] + self.slack:
                    raise ValueError(
                        f"E increases in b between (b={b[i]:g}, nu={nu[j]:.4f}) and "
                        f"(b={b[i + 1]:g}, nu={nu[j]:.4f})"
                    )
        mismatches = []
        for i, bb in enumerate(b):
            for j, nn in enumerate(nu):
                zero = abs(E[i, j]) <= self.slack
                expected_zero = bb <= zeta_lower(nn, self.curve)
                if zero != expected_zero and not self._near_curve(i, j):
                    mismatches.append((float(bb), float(nn)))
        lip_viol = []
        for j in range(len(nu)):
            for i in range(len(b) - 1):
                L = max(self.lipschitz_[i, j], self.lipschitz_[i + 1, j])
                if abs(E[i + 1, j] - E[i, j]) > L * (b[i + 1] - b[i]) + self.slack:
                    lip_viol.append((float(b[i]), float(nu[j])))
        return {"zero_set_mismatches": mismatches, "lipschitz_violations": lip_viol,
                "monotone_in_b": True}

    def _near_curve(self, i, j) -> bool:
        """Whether the curve b = zeta(nu) passes within one grid cell of entry (i, j)."""
        b, nu = self.b_grid_, self.nu_grid_
        bs = b[max(i - 1, 0): i + 2]
        nus = nu[max(j - 1, 0): j + 2]
        z = [zeta_lower(float(n), self.curve) for n in nus]
        lo_b, hi_b = bs.min(), bs.max()
        return any(lo_b <= zz <= hi_b for zz in z) or (min(z) <= lo_b and max(z) >= hi_b)

    def predict(self, b, nu):
        check_is_fitted(self, "E_")
        b = np.asarray(b, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if np.any(b < self.b_grid_[0] - 1e-12) or np.any(b > self.b_grid_[-1] + 1e-12):
            raise ValueError(f"b outside the table range [{self.b_grid_[0]}, {self.b_grid_[-1]}]")
        if self.interpolator_ is None:
            raise ValueError("interpolation needs at least two b and two nu values")
        bb, nn = np.broadcast_arrays(np.clip(b, self.b_grid_[0], self.b_grid_[-1]),
                                     np.clip(nu, self.nu_grid_[0], self.nu_grid_[-1]))
        out = self.interpolator_(np.stack([bb.ravel(), nn.ravel()], axis=-1)).reshape(bb.shape)
        # below the zero-set curve the value is exactly zero
        if self.curve is not None:
            out = np.where(bb <= self.curve.predict(nn), 0.0, out)
        return np.minimum(out, 0.0)

    def to_dict(self) -> dict:
        check_is_fitted(self, "E_")
        zeta = self.curve.to_dict() if self.curve is not None else {"nu": [], "zeta": []}
        return {
            "b": self.b_grid_.tolist(),
            "nu": self.nu_grid_.tolist(),
            "E": self.E_.tolist(),
            "provenance": self.provenance_,
            "lipschitz": self.lipschitz_.tolist(),
            "zeta": {"nu": zeta["nu"], "zeta": zeta["zeta"], "meta": zeta.get("meta", {})},
            "fits": {f"{i},{j}": v for (i, j), v in sorted(self.fits_.items())},
            "meta": {"theta0": spectral1d.REFERENCE_THETA0, "ells": list(self.ells),
                     "grid": {"h": self.h}, "version": __version__},
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "EnergyTable":
        z = data.get("zeta", {})
        curve = None
        if z.get("nu"):
            curve = SpectralCurve.from_dict({"nu": z["nu"], "zeta": z["zeta"], "meta": z.get("meta", {})})
        meta = data.get("meta", {})
        t = cls(ells=tuple(meta.get("ells", (4.0, 6.0, 8.0))), h=meta.get("grid", {}).get("h", reducedgl.DEFAULT_H),
                curve=curve)
        E = np.asarray(data["E"], dtype=float)
        lip = np.asarray(data.get("lipschitz", np.full(E.shape, np.inf)), dtype=float)
        fits = {tuple(int(k) for k in key.split(",")): v for key, v in data.get("fits", {}).items()}
        return t._store(data["b"], data["nu"], E, data["provenance"], lip, fits)

    @classmethod
    def from_json(cls, path) -> "EnergyTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_energy_table(b_grid, nu_grid, ells=(4.0, 6.0, 8.0), curve=None,
                       h: float = reducedgl.DEFAULT_H) -> EnergyTable:
    return EnergyTable(ells=tuple(ells), h=h, curve=curve).fit(b_grid, nu_grid)
