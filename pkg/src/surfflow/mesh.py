"""Staggered rectangular grid and mimetic difference operators.

Scalars (phi, mu, q, p) live at cell centers; vector components live on the
cell faces (x-component on vertical faces, y-component on horizontal faces).
Two boundary modes:

  box      -- velocity components vanish on boundary faces (which are not
              stored), cell scalars get homogeneous Neumann ghosts
  periodic -- everything wraps

The discrete gradient and divergence are exact negative adjoints of each
other under the uniform cell/face inner products (D = -G^T as matrices), and
cell<->face averaging operators are exact transposes of each other.  Every
cancellation in the discrete energy accounting relies on such exact
dualities, not on consistency orders, so the operators are assembled once as
sparse matrices and reused everywhere (quadrature = midpoint sums with the
same weights).

Layout: a field with index (ix, iy) is flattened C-style to ix*ny + iy.
Operators acting along x are kron(Op1d, I_ny); along y, kron(I_nx, Op1d).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Grid", "ScalarField", "VectorField",
    "grad", "div", "laplace_neumann", "vector_laplacian",
    "sbp_selftest", "SbpReport",
    "write_field_snapshot", "read_field_snapshot", "write_field_csv",
    "FIELD_KIND_CELL", "FIELD_KIND_XFACE", "FIELD_KIND_YFACE",
]

BOX = "box"
PERIODIC = "periodic"

FIELD_KIND_CELL = 0
FIELD_KIND_XFACE = 1
FIELD_KIND_YFACE = 2

_SNAPSHOT_MAGIC = b"CHNSFLD1"
_SNAPSHOT_HEADER = struct.Struct("<8sIIIIdq")   # magic nx ny kind pad time step
_SNAPSHOT_HEADER_LEN = 64


# ---------------------------------------------------------------------------
# 1D sparse building blocks
# ---------------------------------------------------------------------------

def _diff1(n: int, d: float, periodic: bool) -> sp.csr_matrix:
    """Cell -> face difference.  box: (n-1, n) interior faces; periodic: (n, n)."""
    if periodic:
        rows = np.repeat(np.arange(n), 2)
        cols = np.empty(2 * n, dtype=int)
        cols[0::2] = (np.arange(n) - 1) % n
        cols[1::2] = np.arange(n)
        vals = np.tile([-1.0 / d, 1.0 / d], n)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    rows = np.repeat(np.arange(n - 1), 2)
    cols = np.empty(2 * (n - 1), dtype=int)
    cols[0::2] = np.arange(n - 1)
    cols[1::2] = np.arange(1, n)
    vals = np.tile([-1.0 / d, 1.0 / d], n - 1)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n - 1, n))


def _avg1(n: int, periodic: bool) -> sp.csr_matrix:
    """Cell -> face two-point average, same sparsity as _diff1."""
    m = _diff1(n, 2.0, periodic).copy()
    m.data = np.abs(m.data)
    return m


def _lap1_between(n: int, d: float) -> sp.csr_matrix:
    """1D Laplacian for nodes that lie between zero-valued boundary nodes at
    distance d (normal direction of a face component in box mode)."""
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (d * d)


def _lap1_reflect(n: int, d: float) -> sp.csr_matrix:
    """1D Laplacian with odd-reflection ghosts (wall at half spacing, value 0)."""
    main = -2.0 * np.ones(n)
    main[0] = main[-1] = -3.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (d * d)


def _lap1_periodic(n: int, d: float) -> sp.csr_matrix:
    m = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)],
                 [-1, 0, 1], format="lil")
    m[0, n - 1] += 1.0
    m[n - 1, 0] += 1.0
    return (m / (d * d)).tocsr()


def _d1_corner(n: int, d: float, periodic: bool) -> sp.csr_matrix:
    """Face-tangential difference onto corner lines, with odd reflection at
    walls.  box: (n+1, n); periodic: (n, n)."""
    if periodic:
        return _diff1(n, d, True)
    m = sp.lil_matrix((n + 1, n))
    m[0, 0] = 2.0 / d
    for j in range(1, n):
        m[j, j - 1] = -1.0 / d
        m[j, j] = 1.0 / d
    m[n, n - 1] = -2.0 / d
    return m.tocsr()


def _embed_interior(n: int) -> sp.csr_matrix:
    """(n+1, n-1) embedding of interior face indices into corner lines."""
    m = sp.lil_matrix((n + 1, n - 1))
    for j in range(1, n):
        m[j, j - 1] = 1.0
    return m.tocsr()


def _avg1_corner(n: int, periodic: bool) -> sp.csr_matrix:
    """Cell -> corner-line average; nearest cell at box boundary lines."""
    if periodic:
        return _avg1(n, True)
    m = sp.lil_matrix((n + 1, n))
    m[0, 0] = 1.0
    for j in range(1, n):
        m[j, j - 1] = 0.5
        m[j, j] = 0.5
    m[n, n - 1] = 1.0
    return m.tocsr()


def _embed_wall_zero(n: int, periodic: bool) -> sp.csr_matrix:
    """Map interior tangential-edge values into the full edge line, zero at
    wall edges.  box: (n+1, n-1); periodic: identity (n, n)."""
    if periodic:
        return sp.identity(n, format="csr")
    return _embed_interior(n)


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

class Grid:
    """Uniform staggered grid on [0, lx] x [0, ly]."""

    def __init__(self, nx: int, ny: int, lx: float = 1.0, ly: float = 1.0,
                 bc: str = BOX):
        if nx < 2 or ny < 2:
            raise ValueError("grid needs nx, ny >= 2")
        if bc not in (BOX, PERIODIC):
            raise ValueError(f"unknown bc mode {bc!r}")
        if lx <= 0 or ly <= 0:
            raise ValueError("domain extents must be positive")
        self.nx = int(nx)
        self.ny = int(ny)
        self.lx = float(lx)
        self.ly = float(ly)
        self.bc = bc
        self.dx = self.lx / self.nx
        self.dy = self.ly / self.ny
        self.dV = self.dx * self.dy
        self._ops = None

    # shapes ---------------------------------------------------------------
    @property
    def periodic(self) -> bool:
        return self.bc == PERIODIC

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def xface_shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny) if self.periodic else (self.nx - 1, self.ny)

    @property
    def yface_shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny) if self.periodic else (self.nx, self.ny - 1)

    @property
    def n_xfaces(self) -> int:
        s = self.xface_shape
        return s[0] * s[1]

    @property
    def n_yfaces(self) -> int:
        s = self.yface_shape
        return s[0] * s[1]

    @property
    def n_faces(self) -> int:
        return self.n_xfaces + self.n_yfaces

    @property
    def volume(self) -> float:
        return self.lx * self.ly

    def __eq__(self, other):
        return (isinstance(other, Grid)
                and (self.nx, self.ny, self.lx, self.ly, self.bc)
                == (other.nx, other.ny, other.lx, other.ly, other.bc))

    def __hash__(self):
        return hash((self.nx, self.ny, self.lx, self.ly, self.bc))

    def __repr__(self):
        return f"Grid({self.nx}x{self.ny}, {self.lx}x{self.ly}, {self.bc})"

    # coordinates ----------------------------------------------------------
    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def xface_coords(self):
        if self.periodic:
            x = np.arange(self.nx) * self.dx
        else:
            x = np.arange(1, self.nx) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def yface_coords(self):
        x = (np.arange(self.nx) + 0.5) * self.dx
        if self.periodic:
            y = np.arange(self.ny) * self.dy
        else:
            y = np.arange(1, self.ny) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    @property
    def ops(self) -> "GridOperators":
        if self._ops is None:
            self._ops = GridOperators(self)
        return self._ops


class GridOperators:
    """Sparse operator bundle for one grid (field units, no volume weights)."""

    def __init__(self, g: Grid):
        per = g.periodic
        nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
        Ix = sp.identity(nx, format="csr")
        Iy = sp.identity(ny, format="csr")
        d1x, d1y = _diff1(nx, dx, per), _diff1(ny, dy, per)
        a1x, a1y = _avg1(nx, per), _avg1(ny, per)

        self.Gx = sp.kron(d1x, Iy, format="csr")
        self.Gy = sp.kron(Ix, d1y, format="csr")
        self.G = sp.vstack([self.Gx, self.Gy], format="csr")
        self.D = (-self.G.T).tocsr()

        self.Acf_x = sp.kron(a1x, Iy, format="csr")
        self.Acf_y = sp.kron(Ix, a1y, format="csr")
        self.Acf = sp.vstack([self.Acf_x, self.Acf_y], format="csr")
        self.Afc = self.Acf.T.tocsr()

        # componentwise vector Laplacian (Dirichlet ghosts in box mode)
        if per:
            lxx = sp.kron(_lap1_periodic(nx, dx), Iy) + sp.kron(Ix, _lap1_periodic(ny, dy))
            lyy = lxx.copy()
        else:
            Ixf = sp.identity(nx - 1, format="csr")
            Iyf = sp.identity(ny - 1, format="csr")
            lxx = (sp.kron(_lap1_between(nx - 1, dx), Iy)
                   + sp.kron(Ixf, _lap1_reflect(ny, dy)))
            lyy = (sp.kron(_lap1_reflect(nx, dx), Iyf)
                   + sp.kron(Ix, _lap1_between(ny - 1, dy)))
        self.Lxx = lxx.tocsr()
        self.Lyy = lyy.tocsr()
        self.Lvec = sp.block_diag([self.Lxx, self.Lyy], format="csr")

        # symmetric-gradient pieces: normal strains at cells, shear at corners
        self.B11 = (-self.Gx.T).tocsr()
        self.B22 = (-self.Gy.T).tocsr()
        dcx, dcy = _d1_corner(nx, dx, per), _d1_corner(ny, dy, per)
        ex, ey = _embed_wall_zero(nx, per), _embed_wall_zero(ny, per)
        if per:
            self.B12x = sp.kron(Ix, dcy, format="csr")
            self.B12y = sp.kron(dcx, Iy, format="csr")
            self.Acorner = sp.kron(_avg1_corner(nx, True), _avg1_corner(ny, True),
                                   format="csr")
            self.n_corners = nx * ny
        else:
            self.B12x = sp.kron(ex, dcy, format="csr")
            self.B12y = sp.kron(dcx, ey, format="csr")
            self.Acorner = sp.kron(_avg1_corner(nx, False), _avg1_corner(ny, False),
                                   format="csr")
            self.n_corners = (nx + 1) * (ny + 1)

        # skew convection: per component, conservative edge-flux divergence
        # P (edges->nodes difference), Q (nodes->edges average), and the flux
        # interpolation from face vector fields onto the edge sets.
        # x-component nodes: x-edges on the cell lattice, y-edges on corner rows
        if per:
            # normal-direction edges sit a half spacing ahead of their node
            # (backward difference / forward average); tangential edges sit a
            # half spacing behind (forward difference / backward average)
            dnx = _diff1(nx, dx, True)
            dny = _diff1(ny, dy, True)
            anx, any_ = _avg1(nx, True), _avg1(ny, True)
            self.conv_x = (sp.kron(dnx, Iy).tocsr(), sp.kron(anx, Iy).T.tocsr(),
                           sp.kron(Ix, -dny.T).tocsr(), sp.kron(Ix, any_).tocsr())
            self.flux_x_e1 = self.Acf_x.T.tocsr()                     # Mx -> cells
            self.flux_x_e2 = sp.kron(a1x, sp.identity(ny), format="csr")  # My -> corners
            self.conv_y = (sp.kron(Ix, dny).tocsr(), sp.kron(Ix, any_).T.tocsr(),
                           sp.kron(-dnx.T, Iy).tocsr(), sp.kron(anx, Iy).tocsr())
            self.flux_y_e1 = self.Acf_y.T.tocsr()                     # My -> cells
            self.flux_y_e2 = sp.kron(sp.identity(nx), a1y, format="csr")  # Mx -> corners
        else:
            Ixf = sp.identity(nx - 1, format="csr")
            Iyf = sp.identity(ny - 1, format="csr")

            def node_diff(n, d):
                # (n, n+1): difference of edge-line values onto n nodes
                rows = np.repeat(np.arange(n), 2)
                cols = np.empty(2 * n, dtype=int)
                cols[0::2] = np.arange(n)
                cols[1::2] = np.arange(1, n + 1)
                vals = np.tile([-1.0 / d, 1.0 / d], n)
                return sp.csr_matrix((vals, (rows, cols)), shape=(n, n + 1))

            def node_avg_reflect(n):
                # (n+1, n): node average onto edge lines, zero at wall lines
                m = sp.lil_matrix((n + 1, n))
                for j in range(1, n):
                    m[j, j - 1] = 0.5
                    m[j, j] = 0.5
                return m.tocsr()

            # x-component: x-edges = cells in x (nx) ; y-edges = (nx-1)x(ny+1)
            self.conv_x = (sp.kron(d1x, Iy).tocsr(),
                           sp.kron(a1x, Iy).T.tocsr(),
                           sp.kron(Ixf, node_diff(ny, dy)).tocsr(),
                           sp.kron(Ixf, node_avg_reflect(ny)).tocsr())
            self.flux_x_e1 = self.Acf_x.T.tocsr()
            self.flux_x_e2 = sp.kron(a1x, _embed_interior(ny), format="csr")
            self.conv_y = (sp.kron(Ix, d1y).tocsr(),
                           sp.kron(Ix, a1y).T.tocsr(),
                           sp.kron(node_diff(nx, dx), Iyf).tocsr(),
                           sp.kron(node_avg_reflect(nx), Iyf).tocsr())
            self.flux_y_e1 = self.Acf_y.T.tocsr()
            self.flux_y_e2 = sp.kron(_embed_interior(nx), a1y, format="csr")

        self.cell_integral = np.full(g.n_cells, g.dV)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass
class ScalarField:
    grid: Grid
    data: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.n_cells))

    @classmethod
    def full(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.n_cells, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        X, Y = grid.cell_centers()
        return cls(grid, np.asarray(fn(X, Y), dtype=float).ravel())

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).ravel()
        if self.data.size != self.grid.n_cells:
            raise ValueError("scalar field size does not match grid")

    def view2d(self) -> np.ndarray:
        return self.data.reshape(self.grid.cell_shape)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.data.copy())

    def integral(self) -> float:
        return float(self.data.sum() * self.grid.dV)

    def mean(self) -> float:
        return float(self.data.mean())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))


@dataclass
class VectorField:
    grid: Grid
    data: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros(grid.n_faces))

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).ravel()
        if self.data.size != self.grid.n_faces:
            raise ValueError("vector field size does not match grid")

    @property
    def ux(self) -> np.ndarray:
        return self.data[:self.grid.n_xfaces]

    @property
    def uy(self) -> np.ndarray:
        return self.data[self.grid.n_xfaces:]

    def ux2d(self) -> np.ndarray:
        return self.ux.reshape(self.grid.xface_shape)

    def uy2d(self) -> np.ndarray:
        return self.uy.reshape(self.grid.yface_shape)

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.data.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))


# ---------------------------------------------------------------------------
# operator application
# ---------------------------------------------------------------------------

def grad(c: ScalarField) -> VectorField:
    """Two-point difference onto faces.  Box boundary faces are not stored;
    their homogeneous-Neumann value is identically zero."""
    return VectorField(c.grid, c.grid.ops.G @ c.data)


def div(u: VectorField) -> ScalarField:
    """Conservative face difference per cell; exact negative adjoint of grad."""
    return ScalarField(u.grid, u.grid.ops.D @ u.data)


def laplace_neumann(c: ScalarField, coeff: np.ndarray) -> ScalarField:
    """div(coeff * grad c) with face coefficients coeff > 0."""
    coeff = np.asarray(coeff, dtype=float).ravel()
    if coeff.size != c.grid.n_faces:
        raise ValueError("coefficient must live on faces")
    if np.any(coeff <= 0):
        raise ValueError("laplace_neumann requires strictly positive face coefficients")
    ops = c.grid.ops
    return ScalarField(c.grid, ops.D @ (coeff * (ops.G @ c.data)))


def vector_laplacian(u: VectorField) -> VectorField:
    """Componentwise five-point Laplacian with Dirichlet velocity ghosts."""
    return VectorField(u.grid, u.grid.ops.Lvec @ u.data)


def _conv_parts(g: Grid, M: VectorField):
    ops = g.ops
    return (
        (ops.conv_x, ops.flux_x_e1 @ M.ux, ops.flux_x_e2 @ M.uy, slice(0, g.n_xfaces)),
        (ops.conv_y, ops.flux_y_e1 @ M.uy, ops.flux_y_e2 @ M.ux, slice(g.n_xfaces, g.n_faces)),
    )


def convect_skew(M: VectorField, v: VectorField) -> VectorField:
    """Skew-symmetric convection of v by the face mass flux M.

    Discretizes (M . grad) v + (div M) v / 2 component by component as the
    antisymmetric part of a conservative edge-flux divergence, so that
    <convect_skew(M, v), v> = 0 to round-off for any M (even when div M is
    nonzero).  In box mode the wall edges carry zero flux because the normal
    components of M vanish on the boundary.
    """
    g = M.grid
    out = np.empty(g.n_faces)
    for (P1, Q1, P2, Q2), phi1, phi2, sl in _conv_parts(g, M):
        u = v.data[sl]
        dd = P1 @ (phi1 * (Q1 @ u)) + P2 @ (phi2 * (Q2 @ u))
        ddT = Q1.T @ (phi1 * (P1.T @ u)) + Q2.T @ (phi2 * (P2.T @ u))
        out[sl] = 0.5 * (dd - ddT)
    return VectorField(g, out)


def convect_matrix(M: VectorField) -> sp.csr_matrix:
    """Matrix of v -> convect_skew(M, v) (block diagonal over components)."""
    g = M.grid
    blocks = []
    for (P1, Q1, P2, Q2), phi1, phi2, _ in _conv_parts(g, M):
        dd = P1 @ sp.diags(phi1) @ Q1 + P2 @ sp.diags(phi2) @ Q2
        blocks.append(0.5 * (dd - dd.T))
    return sp.block_diag(blocks, format="csr")


def convect_flux_jacobian(v: VectorField) -> sp.csr_matrix:
    """Matrix of M -> convect_skew(M, v) for fixed v (linear in the flux)."""
    g = v.grid
    ops = g.ops

    def blk(P1, Q1, P2, Q2, u, f1, f2):
        d1 = 0.5 * (P1 @ sp.diags(Q1 @ u) - Q1.T @ sp.diags(P1.T @ u))
        d2 = 0.5 * (P2 @ sp.diags(Q2 @ u) - Q2.T @ sp.diags(P2.T @ u))
        return d1 @ f1, d2 @ f2

    dxx, dxy = blk(*ops.conv_x, v.ux, ops.flux_x_e1, ops.flux_x_e2)
    dyy, dyx = blk(*ops.conv_y, v.uy, ops.flux_y_e1, ops.flux_y_e2)
    return sp.bmat([[dxx, dxy], [dyx, dyy]], format="csr")


# ---------------------------------------------------------------------------
# self-test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SbpReport:
    grid: str
    checks: tuple        # (name, passed, worst_residual)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def to_text(self) -> str:
        lines = [f"discrete-duality self-test on {self.grid}"]
        for name, ok, res in self.checks:
            lines.append(f"  [{'pass' if ok else 'FAIL'}] {name:34s} residual={res:.3e}")
        return "\n".join(lines)


def sbp_selftest(grid: Grid, n_trials: int = 20, seed: int = 7,
                 tol: float = 1e-12) -> SbpReport:
    """Verify the discrete identities the energy accounting depends on.

    On random fields: grad/-div adjointness, the discrete divergence theorem,
    symmetry / negative semidefiniteness / constant kernel of the
    variable-coefficient cell Laplacian, cell<->face interpolation duality,
    operator linearity, and symmetry of the biharmonic pairing.
    """
    rng = np.random.default_rng(seed)
    ops = grid.ops
    dV = grid.dV

    worst = {k: 0.0 for k in [
        "grad_div_adjoint", "divergence_theorem", "laplace_symmetry",
        "laplace_negative", "laplace_kernel_constants", "laplace_mean_zero",
        "interpolation_duality", "linearity", "biharmonic_symmetry"]}

    for _ in range(n_trials):
        c = rng.standard_normal(grid.n_cells)
        c2 = rng.standard_normal(grid.n_cells)
        u = rng.standard_normal(grid.n_faces)
        w = np.exp(rng.standard_normal(grid.n_faces))   # positive face coeff

        gc = ops.G @ c
        du = ops.D @ u
        lhs = float(gc @ u) * dV
        rhs = -float(c @ du) * dV
        scale = 1.0 + abs(lhs) + abs(rhs)
        worst["grad_div_adjoint"] = max(worst["grad_div_adjoint"],
                                        abs(lhs - rhs) / scale)

        tot = abs(float(du.sum()) * dV) / (1.0 + float(np.abs(u).max()))
        worst["divergence_theorem"] = max(worst["divergence_theorem"], tot)

        Lc = ops.D @ (w * (ops.G @ c))
        Lc2 = ops.D @ (w * (ops.G @ c2))
        s1 = float(Lc @ c2) * dV
        s2 = float(c @ Lc2) * dV
        worst["laplace_symmetry"] = max(worst["laplace_symmetry"],
                                        abs(s1 - s2) / (1.0 + abs(s1) + abs(s2)))

        ray = float(Lc @ c) * dV
        worst["laplace_negative"] = max(worst["laplace_negative"],
                                        max(ray, 0.0) / (1.0 + abs(ray)))

        const = ops.D @ (w * (ops.G @ np.ones(grid.n_cells)))
        worst["laplace_kernel_constants"] = max(worst["laplace_kernel_constants"],
                                                float(np.abs(const).max()))

        worst["laplace_mean_zero"] = max(worst["laplace_mean_zero"],
                                         abs(float(Lc.sum()) * dV)
                                         / (1.0 + float(np.abs(Lc).max())))

        a1 = float((ops.Acf @ c) @ u) * dV
        a2 = float(c @ (ops.Afc @ u)) * dV
        worst["interpolation_duality"] = max(worst["interpolation_duality"],
                                             abs(a1 - a2) / (1.0 + abs(a1)))

        lin = ops.G @ (2.5 * c - 0.5 * c2) - (2.5 * gc - 0.5 * (ops.G @ c2))
        worst["linearity"] = max(worst["linearity"],
                                 float(np.abs(lin).max()) / (1.0 + float(np.abs(gc).max())))

        v2 = rng.standard_normal(grid.n_faces)
        b1 = float((ops.Lvec @ u) @ (ops.Lvec @ v2)) * dV
        b2 = float((ops.Lvec @ v2) @ (ops.Lvec @ u)) * dV
        worst["biharmonic_symmetry"] = max(worst["biharmonic_symmetry"],
                                           abs(b1 - b2) / (1.0 + abs(b1)))

    checks = tuple((name, res <= tol, res) for name, res in worst.items())
    return SbpReport(grid=repr(grid), checks=checks)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def write_field_snapshot(path, data: np.ndarray, nx: int, ny: int, kind: int,
                         time: float, step: int) -> None:
    """Flat little-endian float64 payload after a 64-byte header."""
    header = _SNAPSHOT_HEADER.pack(_SNAPSHOT_MAGIC, nx, ny, kind, 0, time, step)
    header += b"\0" * (_SNAPSHOT_HEADER_LEN - len(header))
    payload = np.ascontiguousarray(data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_field_snapshot(path):
    """Returns (data, meta) with meta = dict(nx, ny, kind, time, step)."""
    with open(path, "rb") as fh:
        header = fh.read(_SNAPSHOT_HEADER_LEN)
        magic, nx, ny, kind, _, time, step = _SNAPSHOT_HEADER.unpack(
            header[:_SNAPSHOT_HEADER.size])
        if magic != _SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a field snapshot (bad magic)")
        data = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    return data, {"nx": int(nx), "ny": int(ny), "kind": int(kind),
                  "time": float(time), "step": int(step)}


def write_field_csv(path, field: ScalarField) -> None:
    X, Y = field.grid.cell_centers()
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for x, y, v in zip(X.ravel(), Y.ravel(), field.data):
            fh.write("%.17g,%.17g,%.17g\n" % (x, y, v))
