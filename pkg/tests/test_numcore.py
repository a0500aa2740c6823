import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glsurf.numcore import (
    DIRICHLET,
    NEUMANN,
    Axis,
    ComplexField,
    ConvergenceError,
    Functional,
    Grid,
    GridOperator,
    LinkGauge,
    StructuralError,
    build_links,
    inner,
    integrate,
    lowest_eigenpair,
    minimize_energy,
)

BC = st.sampled_from([NEUMANN, DIRICHLET])


def random_field(grid, rng):
    return ComplexField(grid, rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape))


def random_links(grid, rng, scale=1.0):
    ph = []
    for k in range(grid.dim):
        s = list(grid.shape)
        s[k] -= 1
        ph.append(scale * rng.normal(size=s))
    return LinkGauge(grid, tuple(ph))


@st.composite
def grids(draw, dims=(1, 2, 3)):
    dim = draw(st.sampled_from(dims))
    axes = []
    for _ in range(dim):
        lo = draw(st.floats(-3, 3))
        length = draw(st.floats(0.5, 4))
        n = draw(st.integers(4, 9 if dim == 3 else 14))
        axes.append(Axis(lo, lo + length, n, draw(BC), draw(BC)))
    return Grid(tuple(axes))


def test_axis_validation():
    with pytest.raises(ValueError):
        Axis(1.0, 0.0, 8)
    with pytest.raises(ValueError):
        Axis(0.0, 1.0, 3)
    with pytest.raises(ValueError):
        Axis(0.0, 1.0, 8, "periodic")


def test_with_spacing_keeps_exact_h():
    a = Axis.with_spacing(0.0, 7.3, 0.25)
    assert a.h == pytest.approx(0.25)
    assert a.hi >= 7.3


@given(grids())
@settings(max_examples=40, deadline=None)
def test_weights_integrate_constants_exactly(grid):
    vol = np.prod([a.hi - a.lo for a in grid.axes])
    assert integrate(grid, np.ones(grid.shape)) == pytest.approx(vol, rel=1e-12)


def test_field_rejects_nan_and_wrong_shape():
    g = Grid((Axis(0, 1, 8),))
    with pytest.raises(ValueError):
        ComplexField(g, np.full(9, np.nan))
    with pytest.raises(StructuralError):
        ComplexField(g, np.zeros(5))


def test_dirichlet_nodes_are_clamped():
    g = Grid((Axis(0, 1, 8, DIRICHLET, NEUMANN),))
    f = ComplexField(g, np.ones(9))
    assert f.values[0] == 0 and f.values[-1] == 1


def test_links_reject_non_finite_potential():
    g = Grid((Axis(0, 1, 8), Axis(0, 1, 8)))
    with pytest.raises(ValueError, match="axis 0"):
        build_links(g, lambda x, y: (np.where(x > 0.5, np.inf, 0.0) + 0 * y, 0 * x + 0 * y))


@given(grids(), st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_operator_is_self_adjoint(grid, seed):
    rng = np.random.default_rng(seed)
    pot = rng.uniform(0, 2, size=grid.shape)
    op = GridOperator(grid, random_links(grid, rng), pot)
    u, v = random_field(grid, rng), random_field(grid, rng)
    lhs = inner(op.apply(u), v)
    rhs = inner(u, op.apply(v))
    scale = abs(lhs) + abs(rhs) + 1.0
    assert abs(lhs - rhs) <= 1e-12 * scale


@given(grids(), st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_quadratic_form_is_integration_by_parts(grid, seed):
    rng = np.random.default_rng(seed)
    op = GridOperator(grid, random_links(grid, rng))
    u = random_field(grid, rng)
    q = op.quadratic_form(u)
    assert inner(u, op.apply(u)).real == pytest.approx(q, rel=1e-12, abs=1e-12)
    assert q >= -1e-12


@given(grids(), st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_gauge_invariance_of_quadratic_form(grid, seed):
    rng = np.random.default_rng(seed)
    links = random_links(grid, rng)
    chi = rng.uniform(-math.pi, math.pi, size=grid.shape)
    u = random_field(grid, rng)
    v = ComplexField(grid, np.exp(1j * chi) * u.values)
    q0 = GridOperator(grid, links).quadratic_form(u)
    q1 = GridOperator(grid, links.shifted(chi)).quadratic_form(v)
    assert q1 == pytest.approx(q0, rel=1e-12)


def test_stiffness_matches_apply():
    rng = np.random.default_rng(3)
    g = Grid((Axis(0, 2, 6, NEUMANN, DIRICHLET), Axis(-1, 1, 5, DIRICHLET, NEUMANN)))
    op = GridOperator(g, random_links(g, rng), rng.uniform(size=g.shape))
    u = random_field(g, rng)
    free = g.free_mask()
    K = op.stiffness()
    assert abs(K - K.conj().T).max() < 1e-14
    lhs = np.conj(u.values[free]) @ (K @ u.values[free])
    assert lhs.real == pytest.approx(op.quadratic_form(u), rel=1e-12)


def test_dirichlet_laplacian_spectrum_oracle():
    # -u'' on (0, L) with Dirichlet ends: lowest discrete eigenvalue (4/h^2) sin^2(pi h / 2L)
    L, n = 3.0, 60
    g = Grid((Axis(0, L, n, DIRICHLET, DIRICHLET),))
    r = lowest_eigenpair(GridOperator(g), tol=1e-10)
    h = L / n
    assert r.eigenvalue == pytest.approx(4 / h ** 2 * math.sin(math.pi * h / (2 * L)) ** 2, rel=1e-10)
    assert r.eigenvector.norm() == pytest.approx(1.0)


def test_eigenpair_phase_is_fixed():
    g = Grid((Axis(0, 3, 30, DIRICHLET, DIRICHLET),))
    r = lowest_eigenpair(GridOperator(g), seed=5)
    k = np.argmax(np.abs(r.eigenvector.values))
    assert r.eigenvector.values[k].imag == 0 and r.eigenvector.values[k].real > 0


def test_eigen_rejects_bad_tol():
    g = Grid((Axis(0, 3, 30, DIRICHLET, DIRICHLET),))
    with pytest.raises(ValueError):
        lowest_eigenpair(GridOperator(g), tol=0)


class DoubleWell(Functional):
    """sum w (|u|^2 - 1)^2 + small tilt, with two basins on a 1-node-wide grid."""

    def __init__(self, grid, tilt=0.0):
        self.grid = grid
        self.tilt = tilt

    def energy_and_gradient(self, u):
        w = self.grid.weights()
        v = u.values
        r = np.abs(v) ** 2 - 1
        e = float(np.sum(w * (r ** 2 + self.tilt * v.real)))
        g = 4 * r * v + self.tilt
        return e, ComplexField(self.grid, g)

    def energy(self, u):
        return self.energy_and_gradient(u)[0]

    def gradient(self, u):
        return self.energy_and_gradient(u)[1]


def test_minimizer_finds_minimum_and_reports():
    g = Grid((Axis(0, 1, 4),))
    f = DoubleWell(g)
    res = minimize_energy(f, ComplexField(g, 0.3 * np.ones(5)), tol=1e-10)
    assert res.energy == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(np.abs(res.minimizer.values), 1.0, atol=1e-6)


def test_restart_disagreement_warns_and_keeps_lowest():
    g = Grid((Axis(0, 1, 4),))
    f = DoubleWell(g, tilt=0.2)
    plus = ComplexField(g, np.ones(5))
    minus = ComplexField(g, -np.ones(5))
    res = minimize_energy(f, [plus, minus], restarts=2, tol=1e-10)
    assert res.warnings
    assert res.energy == min(res.all_energies)
    assert np.all(res.minimizer.values.real < 0)


def test_minimizer_raises_on_nan():
    g = Grid((Axis(0, 1, 4),))

    class Bad(DoubleWell):
        def energy_and_gradient(self, u):
            return float("nan"), u

    with pytest.raises(ConvergenceError):
        minimize_energy(Bad(g), ComplexField(g, np.ones(5)))
