"""Triangulated boundaries and the leading-order energy predictors.

The field direction is beta = (0, 0, 1). On a facet with outward unit normal
n, the angle between beta and the tangent plane is nu = arcsin |n . beta|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from .spectral1d import REFERENCE_THETA0
from .spectral2d import HALF_PI

BETA = np.array([0.0, 0.0, 1.0])
DEGENERATE_AREA = 1e-12
DEFAULT_MU = 0.1


class MeshError(ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class RegimeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must be an (m, 3) array of vertex indices")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            bad = int(np.nonzero((t < 0).any(1) | (t >= len(v)).any(1))[0][0])
            raise MeshError(f"triangle {bad} references a missing vertex", bad)
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        self._validate()

    def _validate(self):
        t = self.triangles
        ext = np.ptp(self.vertices, axis=0).max()
        small = np.nonzero(self.areas < DEGENERATE_AREA * ext * ext)[0]
        if small.size:
            raise MeshError(f"triangle {int(small[0])} is degenerate", int(small[0]))
        directed = {}
        for k, (a, b, c) in enumerate(t.tolist()):
            for e in ((a, b), (b, c), (c, a)):
                if e in directed:
                    raise MeshError(
                        f"triangle {k} repeats directed edge {e}: inconsistent orientation", k
                    )
                directed[e] = k
        for (a, b), k in directed.items():
            if (b, a) not in directed:
                raise MeshError(f"triangle {k} has an open edge ({a}, {b})", k)
        if self.volume <= 0:
            raise MeshError("facets are oriented inward (negative enclosed volume)")

    @cached_property
    def _cross(self):
        p = self.vertices[self.triangles]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        return self._cross / np.linalg.norm(self._cross, axis=1, keepdims=True)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def nu(self) -> np.ndarray:
        return np.arcsin(np.clip(np.abs(self.normals @ BETA), 0.0, 1.0))

    @cached_property
    def volume(self) -> float:
        p = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def max_diameter(self) -> float:
        p = self.vertices[self.triangles]
        edges = [p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]]
        return float(max(np.linalg.norm(e, axis=1).max() for e in edges))

    def __len__(self):
        return len(self.triangles)


# -- I/O -------------------------------------------------------------------


def _tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def parse_off(text: str) -> TriMesh:
    lines = list(_tokens(text))
    if not lines or not lines[0].startswith("OFF"):
        raise MeshError("missing OFF header")
    head = lines[0][3:].split()
    rest = lines[1:]
    if not head:
        if not rest:
            raise MeshError("missing counts line")
        head, rest = rest[0].split(), rest[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
    except (IndexError, ValueError) as exc:
        raise MeshError("malformed counts line") from exc
    if len(rest) < nv + nf:
        raise MeshError(f"expected {nv} vertices and {nf} facets, file is truncated")
    try:
        verts = np.array([[float(x) for x in rest[i].split()[:3]] for i in range(nv)])
    except ValueError as exc:
        raise MeshError("malformed vertex line") from exc
    tris = []
    for k in range(nf):
        parts = rest[nv + k].split()
        if int(parts[0]) != 3 or len(parts) < 4:
            raise MeshError(f"facet {k} is not a triangle", k)
        tris.append([int(x) for x in parts[1:4]])
    return TriMesh(verts.reshape(nv, 3), np.array(tris, dtype=np.int64).reshape(nf, 3))


def load_mesh(path) -> TriMesh:
    """Read an ASCII OFF triangle mesh, validate it and derive facet data."""
    return parse_off(Path(path).read_text())


def to_off(mesh: TriMesh) -> str:
    out = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    out += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    return "\n".join(out) + "\n"


def write_off(mesh: TriMesh, path):
    Path(path).write_text(to_off(mesh))


def bundled_mesh(name: str) -> TriMesh:
    """One of: cube, icosphere3, icosphere4, icosphere5, prolate."""
    ref = resources.files("glsurf") / "meshes" / f"{name}.off"
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled mesh named {name!r}")
    return parse_off(ref.read_text())


# -- generators ------------------------------------------------------------


def unit_cube() -> TriMesh:
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriMesh(v, np.array(tris))


def icosphere(level: int) -> TriMesh:
    """Unit sphere from an icosahedron refined ``level`` times (20 * 4^level facets)."""
    p = (1 + 5 ** 0.5) / 2
    v = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
         (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(x, float) / np.linalg.norm(x) for x in v]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriMesh(np.array(verts), np.array(f))


def prolate_ellipsoid(a: float = 1.0, c: float = 2.0, level: int = 4) -> TriMesh:
    """Spheroid with semi-axes (a, a, c), c > a, from a scaled icosphere."""
    if not c > a > 0:
        raise ValueError("a prolate spheroid needs c > a > 0")
    s = icosphere(level)
    return TriMesh(s.vertices * np.array([a, a, c]), s.triangles)


# -- quadratures -----------------------------------------------------------


@dataclass(frozen=True)
class SurfaceIntegral:
    total: float
    edge_contribution: float
    edge_area: float
    support_area: float


def _edge_mask(mesh: TriMesh, table, b: float) -> np.ndarray:
    """Facets whose nu lies in the table's nu-cell that contains the band edge."""
    curve = getattr(table, "curve", None)
    nus = table.nu_grid_
    if curve is None or len(nus) < 2:
        return np.zeros(len(mesh), dtype=bool)
    zs = curve.predict(nus)
    if b <= zs[0] or b > zs[-1]:
        return np.zeros(len(mesh), dtype=bool)
    j = int(np.searchsorted(zs, b)) - 1
    j = min(max(j, 0), len(nus) - 2)
    return (mesh.nu >= nus[j]) & (mesh.nu <= nus[j + 1])


def surface_integral_details(mesh: TriMesh, table, b: float) -> SurfaceIntegral:
    if not 0.0 < b <= 1.0:
        raise ValueError(f"b must lie in (0, 1], got {b}")
    if b < table.b_grid_[0] - 1e-12 or b > table.b_grid_[-1] + 1e-12:
        raise ValueError(f"b = {b} outside the table range [{table.b_grid_[0]}, {table.b_grid_[-1]}]")
    if b <= REFERENCE_THETA0:
        return SurfaceIntegral(0.0, 0.0, 0.0, 0.0)
    vals = table.predict(np.full(len(mesh), b), mesh.nu)
    contrib = mesh.areas * vals
    edge = _edge_mask(mesh, table, b)
    return SurfaceIntegral(
        total=float(contrib.sum()),
        edge_contribution=float(contrib[edge].sum()),
        edge_area=float(mesh.areas[edge].sum()),
        support_area=float(mesh.areas[vals < 0].sum()),
    )


def surface_integral_E(mesh: TriMesh, table, b: float) -> float:
    """Centroid-rule sum of area * E(b, nu) over the facets."""
    return surface_integral_details(mesh, table, b).total


def latitude_integral(table, b: float, lat_max: float = HALF_PI, radius: float = 1.0) -> float:
    """Sphere value of the boundary integral over the band |latitude| < lat_max.

    Uses nu = |latitude| and the area element 2 pi r^2 cos(lat) d lat on each
    hemisphere.
    """
    f = lambda t: float(table.predict(b, t)) * math.cos(t)
    brk = [x for x in table.nu_grid_ if 0 < x < lat_max]
    val, _ = quad(f, 0.0, lat_max, points=brk or None, limit=200, epsabs=1e-12)
    return 2.0 * 2.0 * math.pi * radius ** 2 * val


def gamma_region(mesh: TriMesh, b: float, curve) -> tuple:
    """Facets with zeta(nu) < b, and their total area."""
    if not 0.0 < b <= 1.0:
        raise ValueError(f"b must lie in (0, 1], got {b}")
    z = np.asarray(curve.predict(mesh.nu))
    idx = np.nonzero(z < b)[0]
    return idx, float(mesh.areas[idx].sum())


# -- predictors ------------------------------------------------------------


@dataclass(frozen=True)
class EnergyPrediction:
    kappa: float
    H: float
    b_eff: float
    surface_term: float
    bulk_term: float
    total: float
    error_scale: float
    lam: float
    surface_integral: float = 0.0
    edge_contribution: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa, "H": self.H, "b_eff": self.b_eff,
            "surface_term": self.surface_term, "bulk_term": self.bulk_term,
            "total": self.total, "error_scale": self.error_scale, "lambda": self.lam,
            "surface_integral": self.surface_integral,
            "edge_contribution": self.edge_contribution,
        }


def _check_regime(kappa, H, mu):
    if kappa <= 0 or H <= 0:
        raise ValueError("kappa and H must be positive")
    if H < kappa * (1.0 - mu):
        raise RegimeError(
            f"H = {H:g} is below kappa (1 - mu) = {kappa * (1 - mu):g}; the leading-order "
            "formula only holds for fields close to or above kappa"
        )


def predict_ground_energy(kappa: float, H: float, mesh: TriMesh, table, E2: float,
                          g_curve=None, mu: float = DEFAULT_MU) -> EnergyPrediction:
    """sqrt(kappa H) * int E(b, nu) dsigma + E2 |Omega| [kappa - H]_+^2.

    ``g_curve`` is accepted for interface symmetry; only E2 enters at
    leading order.
    """
    _check_regime(kappa, H, mu)
    if not E2 < 0:
        raise ValueError("E2 must be negative")
    b = min(kappa / H, 1.0)
    gap = max(kappa - H, 0.0)
    parts = surface_integral_details(mesh, table, b)
    surface = math.sqrt(kappa * H) * parts.total
    bulk = E2 * mesh.volume * gap ** 2
    return EnergyPrediction(
        kappa=kappa, H=H, b_eff=b,
        surface_term=surface, bulk_term=bulk, total=surface + bulk,
        error_scale=max(kappa, gap ** 2),
        lam=max(1.0 / kappa, max(kappa / H - 1.0, 0.0) ** 2),
        surface_integral=parts.total,
        edge_contribution=math.sqrt(kappa * H) * parts.edge_contribution,
    )


def predict_local_L4(kappa: float, H: float, mesh: TriMesh, facets, subvolume: float,
                     table, E2: float, mu: float = DEFAULT_MU, tol: float = 1e-12) -> float:
    """Predicted (1/2) int_D |psi|^4 for a region D meeting the boundary in ``facets``."""
    _check_regime(kappa, H, mu)
    if subvolume < 0:
        raise ValueError("subvolume must be nonnegative")
    facets = np.asarray(facets, dtype=np.int64)
    b = min(kappa / H, 1.0)
    if facets.size and b > REFERENCE_THETA0:
        vals = table.predict(np.full(facets.size, b), mesh.nu[facets])
        s = float((mesh.areas[facets] * vals).sum())
    else:
        s = 0.0
    out = -math.sqrt(H / kappa) * s / kappa - E2 * subvolume * max(kappa / H - 1.0, 0.0) ** 2
    if out < -tol:
        raise ValueError(f"negative L4 prediction {out:.3e}: table or E2 has the wrong sign")
    return max(out, 0.0)


@dataclass(frozen=True)
class TransitionScan:
    a_values: tuple
    predictions: tuple
    a_star: float | None
    a_star_closed_form: float | None

    def ratios(self) -> np.ndarray:
        return np.array([
            abs(p.bulk_term) / abs(p.surface_term) if p.surface_term else np.inf
            for p in self.predictions
        ])


def transition_scan(kappa: float, a_values, mesh: TriMesh, table, E2: float,
                    g_curve=None, mu: float = DEFAULT_MU) -> TransitionScan:
    """Predictions along H = kappa - a sqrt(kappa) and the crossover a*."""
    a = np.asarray(sorted(float(x) for x in a_values))
    preds = tuple(
        predict_ground_energy(kappa, kappa - x * math.sqrt(kappa), mesh, table, E2, g_curve, mu)
        for x in a
    )
    diff = np.array([abs(p.bulk_term) - abs(p.surface_term) for p in preds])
    a_star = None
    for k in range(len(a) - 1):
        if diff[k] <= 0 < diff[k + 1]:
            a_star = float(a[k] - diff[k] * (a[k + 1] - a[k]) / (diff[k + 1] - diff[k]))
            break
    s1 = surface_integral_E(mesh, table, 1.0) if table.b_grid_[-1] >= 1.0 else 0.0
    closed = math.sqrt(abs(s1) / (abs(E2) * mesh.volume)) if s1 else None
    return TransitionScan(tuple(a.tolist()), preds, a_star, closed)
