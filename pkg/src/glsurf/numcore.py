"""Grids, complex fields, link-gauge covariant differences, a lowest-eigenpair
solver and a monotone gradient minimizer.

Everything here is discretization machinery shared by the physics modules.
Fields live on the nodes of a tensor grid. Boundary faces are tagged Neumann
(node kept, mirror ghost) or Dirichlet (node clamped to zero). All inner
products use trapezoid node weights, and the covariant Laplacian is defined as
the weighted gradient of an edge-sum quadratic form, so discrete integration by
parts holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize as scipy_minimize
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

NEUMANN = "neumann"
DIRICHLET = "dirichlet"


class StructuralError(ValueError):
    """Raised when fields, links or operators do not share a grid."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver stops without meeting its tolerance.

    The best iterate found so far is attached as ``best`` and its residual
    (or gradient norm) as ``residual``.
    """

    def __init__(self, message, best=None, residual=np.nan, step=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.step = step


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    n: int
    bc_lo: str = NEUMANN
    bc_hi: str = NEUMANN

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.hi <= self.lo:
            raise ValueError(f"axis needs lo < hi, got [{self.lo}, {self.hi}]")
        if int(self.n) != self.n or self.n < 4:
            raise ValueError(f"axis needs n >= 4 cells, got {self.n}")
        for tag in (self.bc_lo, self.bc_hi):
            if tag not in (NEUMANN, DIRICHLET):
                raise ValueError(f"unknown boundary tag {tag!r}")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.n + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.lo + self.h * (np.arange(self.n) + 0.5)

    def weights(self) -> np.ndarray:
        w = np.full(self.n + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @classmethod
    def with_spacing(cls, lo, hi, h, bc_lo=NEUMANN, bc_hi=NEUMANN):
        """Axis over [lo, hi'] with hi' >= hi chosen so the spacing is exactly h."""
        n = max(4, int(np.ceil((hi - lo) / h - 1e-9)))
        return cls(float(lo), float(lo + n * h), n, bc_lo, bc_hi)


@dataclass(frozen=True)
class Grid:
    """Tensor-product node grid in 1, 2 or 3 dimensions."""

    axes: tuple

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if len(self.axes) not in (1, 2, 3):
            raise ValueError("grid dimension must be 1, 2 or 3")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.n + 1 for a in self.axes)

    @property
    def spacing(self) -> tuple:
        return tuple(a.h for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coords(self) -> list:
        """Broadcastable node coordinate arrays, one per axis."""
        out = []
        for k, a in enumerate(self.axes):
            s = [1] * self.dim
            s[k] = a.n + 1
            out.append(a.nodes.reshape(s))
        return out

    def meshgrid(self) -> list:
        return np.meshgrid(*(a.nodes for a in self.axes), indexing="ij")

    def weights(self) -> np.ndarray:
        return _node_weights(self)

    def free_mask(self) -> np.ndarray:
        """True on nodes that are unknowns (not clamped by a Dirichlet face)."""
        return _free_mask(self)

    def describe(self) -> dict:
        return {
            "dim": self.dim,
            "axes": [
                {"lo": a.lo, "hi": a.hi, "n": a.n, "bc": [a.bc_lo, a.bc_hi]}
                for a in self.axes
            ],
        }


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.grid.shape:
            raise StructuralError(
                f"field has shape {v.shape}, grid expects {self.grid.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v = np.where(self.grid.free_mask(), v, 0.0)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        return float(np.sqrt(inner(self, self).real))

    def scaled(self, c) -> "ComplexField":
        return ComplexField(self.grid, c * self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@lru_cache(maxsize=64)
def _node_weights(grid: Grid) -> np.ndarray:
    w = np.ones(grid.shape)
    for k, a in enumerate(grid.axes):
        s = [1] * grid.dim
        s[k] = a.n + 1
        w = w * a.weights().reshape(s)
    w.setflags(write=False)
    return w


@lru_cache(maxsize=64)
def _free_mask(grid: Grid) -> np.ndarray:
    m = np.ones(grid.shape, dtype=bool)
    for k, a in enumerate(grid.axes):
        idx = [slice(None)] * grid.dim
        if a.bc_lo == DIRICHLET:
            idx[k] = 0
            m[tuple(idx)] = False
        if a.bc_hi == DIRICHLET:
            idx[k] = -1
            m[tuple(idx)] = False
    m.setflags(write=False)
    return m


def inner(f: ComplexField, g: ComplexField) -> complex:
    """Weighted inner product <f, g> = sum w conj(f) g."""
    if f.grid != g.grid:
        raise StructuralError("fields live on different grids")
    return complex(np.sum(f.grid.weights() * np.conj(f.values) * g.values))


def integrate(grid: Grid, density: np.ndarray) -> float:
    return float(np.sum(grid.weights() * density))


@dataclass(frozen=True, eq=False)
class LinkGauge:
    """Per-edge phases; ``phases[k]`` holds edges along axis k.

    The phase on edge (p, p + e_k) is theta; traversing backwards gives -theta,
    which is implicit in how the stencil uses it.
    """

    grid: Grid
    phases: tuple

    def __post_init__(self):
        ph = tuple(np.asarray(p, dtype=float) for p in self.phases)
        if len(ph) != self.grid.dim:
            raise StructuralError("one phase array per axis required")
        for k, p in enumerate(ph):
            expect = list(self.grid.shape)
            expect[k] -= 1
            if p.shape != tuple(expect):
                raise StructuralError(
                    f"axis {k} phases have shape {p.shape}, expected {tuple(expect)}"
                )
            if not np.all(np.isfinite(p)):
                raise ValueError(f"non-finite phase on axis {k}")
            p.setflags(write=False)
        object.__setattr__(self, "phases", ph)
        object.__setattr__(
            self, "factors", tuple(np.exp(1j * p) if np.any(p) else None for p in ph)
        )

    @classmethod
    def zero(cls, grid: Grid) -> "LinkGauge":
        ph = []
        for k in range(grid.dim):
            s = list(grid.shape)
            s[k] -= 1
            ph.append(np.zeros(s))
        return cls(grid, tuple(ph))

    def is_trivial(self) -> bool:
        return all(not np.any(p) for p in self.phases)

    def shifted(self, theta: np.ndarray) -> "LinkGauge":
        """Links after the gauge change u -> exp(i theta) u."""
        theta = np.asarray(theta, dtype=float)
        ph = []
        for k, p in enumerate(self.phases):
            ph.append(p + np.diff(theta, axis=k))
        return LinkGauge(self.grid, tuple(ph))


def build_links(grid: Grid, potential: Callable, strength: float = 1.0) -> LinkGauge:
    """Midpoint-rule link phases for the connection (grad - i*strength*A).

    ``potential(*coords)`` returns a sequence of ``grid.dim`` components, each
    broadcastable against the coordinate arrays it receives.
    """
    phases = []
    for k, a in enumerate(grid.axes):
        pts = []
        for j, b in enumerate(grid.axes):
            s = [1] * grid.dim
            if j == k:
                s[j] = b.n
                pts.append(b.midpoints.reshape(s))
            else:
                s[j] = b.n + 1
                pts.append(b.nodes.reshape(s))
        comp = np.asarray(potential(*pts)[k], dtype=float)
        shape = list(grid.shape)
        shape[k] -= 1
        comp = np.broadcast_to(comp, shape)
        bad = ~np.isfinite(comp)
        if bad.any():
            loc = tuple(int(i[0]) for i in np.nonzero(bad))
            raise ValueError(f"non-finite potential on axis {k} edge {loc}")
        phases.append(strength * a.h * comp)
    return LinkGauge(grid, tuple(phases))


@lru_cache(maxsize=64)
def _edge_weights(grid: Grid, k: int) -> np.ndarray:
    """Quadrature weight carried by each edge along axis k (over h_k^2)."""
    w = np.full([n - 1 if j == k else n for j, n in enumerate(grid.shape)], 1.0)
    for j, a in enumerate(grid.axes):
        s = [1] * grid.dim
        if j == k:
            continue
        s[j] = a.n + 1
        w = w * a.weights().reshape(s)
    w = w / grid.axes[k].h
    w.setflags(write=False)
    return w


def _slices(dim, k):
    lo = [slice(None)] * dim
    hi = [slice(None)] * dim
    lo[k] = slice(0, -1)
    hi[k] = slice(1, None)
    return tuple(lo), tuple(hi)


def _check_same(field: ComplexField, links: LinkGauge):
    if field.grid != links.grid:
        raise StructuralError("field and links live on different grids")


def kinetic_density_sum(u: np.ndarray, grid: Grid, links: LinkGauge) -> float:
    """Edge-sum quadratic form sum_e W_e |u_q - exp(i theta_e) u_p|^2 / h^2."""
    total = 0.0
    for k in range(grid.dim):
        lo, hi = _slices(grid.dim, k)
        e = links.factors[k]
        if e is not None:
            d = u[hi] - e * u[lo]
        else:
            d = u[hi] - u[lo]
        total += float(np.sum(_edge_weights(grid, k) * (d.real ** 2 + d.imag ** 2)))
    return total


def _laplacian_array(u: np.ndarray, grid: Grid, links: LinkGauge) -> np.ndarray:
    out = np.zeros(grid.shape, dtype=complex)
    for k in range(grid.dim):
        lo, hi = _slices(grid.dim, k)
        e = links.factors[k]
        we = _edge_weights(grid, k)
        if e is not None:
            d = u[hi] - e * u[lo]
            out[hi] += we * d
            out[lo] -= we * np.conj(e) * d
        else:
            d = u[hi] - u[lo]
            out[hi] += we * d
            out[lo] -= we * d
    out /= grid.weights()
    out[~grid.free_mask()] = 0.0
    return out


def apply_covariant_laplacian(field: ComplexField, links: LinkGauge) -> ComplexField:
    """-(grad - iA)^2 applied with link phases on the hopping terms."""
    _check_same(field, links)
    return ComplexField(field.grid, _laplacian_array(field.values, field.grid, links))


@dataclass(frozen=True, eq=False)
class GridOperator:
    """Self-adjoint operator -(grad - iA)^2 + V on a grid.

    ``potential`` is a real node array (or None). The operator acts on the free
    nodes and is symmetric in the weighted inner product.
    """

    grid: Grid
    links: LinkGauge = None
    potential: np.ndarray = None

    def __post_init__(self):
        if self.links is None:
            object.__setattr__(self, "links", LinkGauge.zero(self.grid))
        elif self.links.grid != self.grid:
            raise StructuralError("links live on a different grid")
        if self.potential is not None:
            v = np.broadcast_to(np.asarray(self.potential, dtype=float), self.grid.shape)
            object.__setattr__(self, "potential", v)

    @property
    def is_real(self) -> bool:
        return self.links.is_trivial()

    def apply(self, field: ComplexField) -> ComplexField:
        out = _laplacian_array(field.values, self.grid, self.links)
        if self.potential is not None:
            out = out + self.potential * field.values
        return ComplexField(self.grid, out)

    def quadratic_form(self, field: ComplexField) -> float:
        q = kinetic_density_sum(field.values, self.grid, self.links)
        if self.potential is not None:
            q += integrate(self.grid, self.potential * np.abs(field.values) ** 2)
        return q

    def stiffness(self) -> sp.csr_matrix:
        """Hermitian matrix K on free nodes with <u, Op u> = u^H K u."""
        grid = self.grid
        idx = np.full(grid.shape, -1, dtype=np.int64)
        free = grid.free_mask()
        idx[free] = np.arange(int(free.sum()))
        nfree = int(free.sum())
        rows, cols, vals = [], [], []
        diag = np.zeros(grid.shape)
        for k in range(grid.dim):
            lo, hi = _slices(grid.dim, k)
            we = _edge_weights(grid, k)
            diag[hi] += we
            diag[lo] += we
            p, q = idx[lo], idx[hi]
            ok = (p >= 0) & (q >= 0)
            e = np.exp(1j * self.links.phases[k])
            # |u_q - e u_p|^2 contributes -e to K[q,p] and -conj(e) to K[p,q]
            rows.append(q[ok])
            cols.append(p[ok])
            vals.append(-(we * e)[ok])
            rows.append(p[ok])
            cols.append(q[ok])
            vals.append(-(we * np.conj(e))[ok])
        if self.potential is not None:
            diag = diag + grid.weights() * self.potential
        rows.append(idx[free])
        cols.append(idx[free])
        vals.append(diag[free].astype(complex))
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nfree, nfree),
        ).tocsr()
        if self.is_real:
            mat = mat.real
        return mat

    def symmetric_matrix(self) -> tuple:
        """(S, s) with S = D^-1/2 K D^-1/2 Hermitian and s = sqrt(weights) on free nodes."""
        s = np.sqrt(self.grid.weights()[self.grid.free_mask()])
        dinv = sp.diags(1.0 / s)
        return (dinv @ self.stiffness() @ dinv).tocsr(), s


@dataclass(frozen=True, eq=False)
class EigenResult:
    eigenvalue: float
    eigenvector: ComplexField
    residual: float
    iterations: int
    flags: tuple = ()


def lowest_eigenpair(
    op: GridOperator,
    tol: float = 1e-8,
    seed: int = 0,
    shift: float | None = None,
    v0: ComplexField | None = None,
    maxiter: int = 5000,
) -> EigenResult:
    """Smallest eigenvalue of a grid operator by shift-and-invert Lanczos.

    The shift defaults to just below zero (every operator built here is
    positive semidefinite). ``tol`` bounds the relative residual
    ||(Op - lam) v|| / max(1, |lam|) in the weighted norm.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    grid = op.grid
    free = grid.free_mask()
    S, s = op.symmetric_matrix()
    n = S.shape[0]
    dtype = float if op.is_real else complex
    if v0 is not None:
        start = (v0.values[free] * s).astype(dtype)
        if not np.any(start):
            start = None
    else:
        start = None
    if start is None:
        rng = np.random.default_rng(seed)
        start = rng.standard_normal(n)
        if dtype is complex:
            start = start + 1j * rng.standard_normal(n)
    sigma = -1e-3 if shift is None else float(shift)
    if dtype is float:
        start = np.real(start)
    try:
        w, v = eigsh(S, k=1, sigma=sigma, which="LM", v0=start, tol=tol * 1e-2,
                     maxiter=maxiter)
        iters = maxiter
    except ArpackNoConvergence as exc:
        vals = np.zeros(grid.shape, dtype=complex)
        if exc.eigenvectors.size:
            vals[free] = exc.eigenvectors[:, 0] / s
        best = ComplexField(grid, vals)
        raise ConvergenceError("eigensolver did not converge", best=best) from exc
    lam = float(w[0])
    vec = v[:, 0] / s
    vals = np.zeros(grid.shape, dtype=complex)
    vals[free] = vec
    ef = ComplexField(grid, vals)
    ef = ef.scaled(1.0 / ef.norm())
    # fix the global phase: largest-modulus entry real positive
    flat = ef.values.ravel()
    j = int(np.argmax(np.abs(flat)))
    ef = ef.scaled(np.conj(flat[j]) / abs(flat[j]))
    lam = op.quadratic_form(ef)
    r = op.apply(ef).values - lam * ef.values
    res = float(np.sqrt(integrate(grid, np.abs(r) ** 2)))
    if res > tol * max(1.0, abs(lam)):
        raise ConvergenceError(
            f"eigen residual {res:.3e} above tolerance {tol:.1e}", best=ef, residual=res
        )
    return EigenResult(lam, ef, res, iters)


def rayleigh_quotient(op: GridOperator, f: ComplexField) -> float:
    return op.quadratic_form(f) / inner(f, f).real


class Functional:
    """Interface for minimize_energy: energy(u) and L2 gradient(u) on a grid.

    The gradient G is the weighted-L2 Riesz representative, so that
    d/de E(u + e v) = Re <G, v> at e = 0.
    """

    grid: Grid

    def energy(self, u: ComplexField) -> float:
        raise NotImplementedError

    def gradient(self, u: ComplexField) -> ComplexField:
        raise NotImplementedError

    def energy_and_gradient(self, u: ComplexField):
        return self.energy(u), self.gradient(u)


@dataclass(frozen=True, eq=False)
class MinimizeResult:
    energy: float
    minimizer: ComplexField
    gradient_norm: float
    iterations: int
    restarts_used: int
    all_energies: tuple = ()
    warnings: tuple = ()


def _descend(functional, u0: ComplexField, tol, maxiter, step0):
    grid = functional.grid
    w = grid.weights()
    u = u0.values
    f, g = functional.energy_and_gradient(u0)
    g = g.values
    if not np.isfinite(f):
        raise ConvergenceError("NaN energy at the initial field", best=u0, step=0)
    gnorm = float(np.sqrt(np.sum(w * np.abs(g) ** 2)))
    alpha = step0
    for it in range(1, maxiter + 1):
        if gnorm <= tol:
            return ComplexField(grid, u), f, gnorm, it - 1
        gg = float(np.sum(w * np.abs(g) ** 2))
        a = alpha
        for _ in range(60):
            un = u - a * g
            un_f = ComplexField(grid, un)
            fn, gn = functional.energy_and_gradient(un_f)
            if not np.isfinite(fn):
                raise ConvergenceError(
                    f"NaN energy at step {it}", best=ComplexField(grid, u), step=it
                )
            if fn <= f - 1e-4 * a * gg:
                break
            a *= 0.5
        else:
            if f - fn >= 0 or gnorm <= 10 * tol:
                return ComplexField(grid, u), f, gnorm, it
            raise ConvergenceError(
                f"line search failed at step {it}", best=ComplexField(grid, u),
                residual=gnorm, step=it,
            )
        gn = gn.values
        s = un - u
        y = gn - g
        sy = float(np.sum(w * (s.real * y.real + s.imag * y.imag)))
        ss = float(np.sum(w * np.abs(s) ** 2))
        u, f, g = un, fn, gn
        gnorm = float(np.sqrt(np.sum(w * np.abs(g) ** 2)))
        # alternate long and short BB steps
        if sy > 0:
            if it % 2:
                alpha = ss / sy
            else:
                yy = float(np.sum(w * np.abs(y) ** 2))
                alpha = sy / yy
        else:
            alpha = min(2 * a, 1e3 * step0)
    if gnorm <= tol:
        return ComplexField(grid, u), f, gnorm, maxiter
    raise ConvergenceError(
        f"gradient norm {gnorm:.3e} above {tol:.1e} after {maxiter} steps",
        best=ComplexField(grid, u), residual=gnorm, step=maxiter,
    )


def _descend_lbfgs(functional, u0: ComplexField, tol, maxiter, step0, rounds=8):
    """L-BFGS on sqrt(w)-scaled real coordinates of the free nodes.

    The scaling makes the Euclidean gradient norm equal the weighted norm of
    the Riesz gradient, so ``tol`` means the same as in the BB descent.
    """
    grid = functional.grid
    free = grid.free_mask()
    sw = np.sqrt(grid.weights()[free])
    n = int(free.sum())
    state = {"calls": 0}

    def unpack(x):
        vals = np.zeros(grid.shape, dtype=complex)
        vals[free] = (x[:n] + 1j * x[n:]) / sw
        return ComplexField(grid, vals)

    def fun(x):
        state["calls"] += 1
        f, g = functional.energy_and_gradient(unpack(x))
        if not np.isfinite(f):
            raise ConvergenceError(f"NaN energy at evaluation {state['calls']}",
                                   best=unpack(x), step=state["calls"])
        gv = g.values[free] * sw
        return f, np.concatenate([gv.real, gv.imag])

    x = np.concatenate([(u0.values[free] * sw).real, (u0.values[free] * sw).imag])
    f, gx = fun(x)
    gnorm = float(np.linalg.norm(gx))
    iters = 0
    for _ in range(rounds):
        if gnorm <= tol or iters >= maxiter:
            break
        res = scipy_minimize(
            fun, x, jac=True, method="L-BFGS-B",
            options={"maxiter": maxiter - iters, "maxcor": 20, "ftol": 1e-15,
                     "gtol": tol / np.sqrt(2 * n), "maxls": 40},
        )
        iters += int(res.nit)
        if res.fun <= f:
            x, f = res.x, float(res.fun)
            gnorm = float(np.linalg.norm(res.jac))
        if res.nit == 0:
            break
    if gnorm <= tol:
        return unpack(x), f, gnorm, iters
    # finish with monotone BB steps, which need no curvature model
    return _descend(functional, unpack(x), tol, maxiter, step0)


def minimize_energy(
    functional: Functional,
    init,
    restarts: int = 1,
    tol: float = 1e-6,
    maxiter: int = 20000,
    step0: float | None = None,
    seed: int = 0,
    disagreement: float = 0.01,
    method: str = "lbfgs",
) -> MinimizeResult:
    """Multi-start descent: L-BFGS (default) or Barzilai-Borwein with Armijo backtracking.

    Every accepted step decreases the energy. ``init`` is one field or a list
    of starting fields; when fewer than ``restarts`` are given, seeded random
    fields fill the rest. The lowest energy over all starts is returned.
    """
    inits = [init] if isinstance(init, ComplexField) else list(init)
    if not inits:
        raise ValueError("need at least one initial field")
    grid = inits[0].grid
    rng = np.random.default_rng(seed)
    while len(inits) < restarts:
        amp = max(inits[0].sup_norm(), 0.1)
        vals = amp * (rng.uniform(-1, 1, grid.shape) + 1j * rng.uniform(-1, 1, grid.shape))
        inits.append(ComplexField(grid, vals))
    if step0 is None:
        step0 = 0.25 * min(grid.spacing) ** 2 / grid.dim
    if method not in ("lbfgs", "bb"):
        raise ValueError(f"unknown method {method!r}")
    descend = _descend_lbfgs if method == "lbfgs" else _descend
    best = None
    energies = []
    total_iters = 0
    for u0 in inits[: max(restarts, 1)]:
        if u0.grid != grid:
            raise StructuralError("initial fields live on different grids")
        u, f, gn, it = descend(functional, u0, tol, maxiter, step0)
        total_iters += it
        energies.append(f)
        if best is None or f < best[1]:
            best = (u, f, gn)
    warns = []
    lo, hi = min(energies), max(energies)
    if hi - lo > disagreement * max(abs(lo), 1e-12) and abs(hi - lo) > tol:
        warns.append(
            f"restart energies disagree: min {lo:.6g}, max {hi:.6g} (kept lowest)"
        )
    return MinimizeResult(
        energy=best[1], minimizer=best[0], gradient_norm=best[2],
        iterations=total_iters, restarts_used=len(energies),
        all_energies=tuple(energies), warnings=tuple(warns),
    )
