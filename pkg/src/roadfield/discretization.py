"""Cell-centered finite-volume operators on truncated rectangles.

The field occupies ``[-X, X] x [0, Y]`` with ``nx x ny`` square cells of
side ``h``; the road carries one node under each bottom-row cell. Unknowns
are stacked road first, then field row by row (``n_road + j*nx + i``).
Outer edges are homogeneous Dirichlet via mirrored ghost cells.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import ConfigurationError, NicheProfile, Parameters, niche_m

log = logging.getLogger(__name__)

COUPLED = "coupled"
NEUMANN = "neumann"
ROBIN = "robin"
KINDS = (COUPLED, NEUMANN, ROBIN)


@dataclass(frozen=True)
class Grid:
    X: float
    Y: float
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 3 or self.ny < 1:
            raise ConfigurationError(f"grid needs nx >= 3 and ny >= 1, got {self.nx}x{self.ny}")
        if abs(2 * self.X / self.nx - self.h) > 1e-12 * self.h or abs(self.Y / self.ny - self.h) > 1e-12 * self.h:
            raise ConfigurationError("grid spacing inconsistent between x and y")

    @property
    def x(self) -> np.ndarray:
        return -self.X + (np.arange(self.nx) + 0.5) * self.h

    @property
    def y(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.h

    def field_points(self):
        """Cell centers as (ny, nx) arrays, row j first."""
        return np.meshgrid(self.x, self.y, indexing="xy")

    def index(self, with_road: bool = True) -> "StackedIndex":
        return StackedIndex(self.nx, self.ny, with_road)


def build_grid(X: float, Y: float, h: float) -> Grid:
    if not (X > 0 and Y > 0 and h > 0):
        raise ConfigurationError("X, Y and h must be > 0")
    fx = 2 * X / h
    fy = Y / h
    nx, ny = round(fx), round(fy)
    if abs(fx - nx) > 1e-9 * max(1.0, fx) or abs(fy - ny) > 1e-9 * max(1.0, fy):
        raise ConfigurationError(f"2X/h = {fx:g} and Y/h = {fy:g} must both be integers")
    return Grid(X=float(X), Y=float(Y), h=float(h), nx=nx, ny=ny)


@dataclass(frozen=True)
class StackedIndex:
    nx: int
    ny: int
    with_road: bool = True

    @property
    def n_road(self) -> int:
        return self.nx if self.with_road else 0

    @property
    def n_field(self) -> int:
        return self.nx * self.ny

    @property
    def total(self) -> int:
        return self.n_road + self.n_field

    def road(self, i):
        if not self.with_road:
            raise IndexError("operator has no road unknowns")
        return i

    def field(self, i, j):
        return self.n_road + j * self.nx + i

    def unflatten(self, k: int):
        """Inverse map: ('road', i) or ('field', i, j)."""
        if k < 0 or k >= self.total:
            raise IndexError(k)
        if k < self.n_road:
            return ("road", k)
        j, i = divmod(k - self.n_road, self.nx)
        return ("field", i, j)

    def split(self, w: np.ndarray):
        """Return (road values or None, field values shaped (ny, nx))."""
        phi = w[: self.n_road] if self.with_road else None
        return phi, w[self.n_road:].reshape(self.ny, self.nx)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Discrete negative generator A; the principal eigenvalue solves A w = lambda w."""

    matrix: sp.csr_matrix
    kind: str
    grid: Grid
    profile: NicheProfile
    params: Parameters | None = None
    d: float = 1.0
    c: float = 0.0
    nu: float = 0.0
    advection: str = "central"
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def index(self) -> StackedIndex:
        return self.grid.index(with_road=self.kind == COUPLED)

    def shift_bound(self) -> float:
        """A shift s making s*I - A entrywise nonnegative."""
        A = self.matrix
        diag = np.abs(A.diagonal())
        offmass = np.asarray(abs(A).sum(axis=1)).ravel() - diag
        return 1.0 + float(np.max(diag + offmass))

    def dump(self, path) -> None:
        """Write ``row col value`` lines with 17 significant digits."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            fh.write(f"# {self.kind} {self.dimension}x{self.dimension}\n")
            for k in order:
                fh.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}\n")


def peclet(c: float, h: float, diffusivity: float) -> float:
    return abs(c) * h / (2.0 * diffusivity)


def _line_operator(n: int, h: float, diff: float, c: float, upwind: bool):
    """1D Dirichlet block for -diff*u'' - c*u' on n cells (ghost-mirror diffusion)."""
    main = np.full(n, 2.0 * diff / h**2)
    main[0] += diff / h**2
    main[-1] += diff / h**2
    if upwind:
        # transport speed is -c: forward difference
        upper = np.full(n - 1, -diff / h**2 - c / h)
        lower = np.full(n - 1, -diff / h**2)
        main = main + c / h
    else:
        upper = np.full(n - 1, -diff / h**2 - c / (2 * h))
        lower = np.full(n - 1, -diff / h**2 + c / (2 * h))
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr")


def _field_block(grid: Grid, d: float, c: float, m: np.ndarray, upwind: bool):
    """-d Lap - c d/dx - m with Dirichlet on x = +-X, y = Y and no flux at y = 0."""
    h = grid.h
    Ix = sp.identity(grid.nx, format="csr")
    Iy = sp.identity(grid.ny, format="csr")
    Tx = _line_operator(grid.nx, h, d, c, upwind)
    # y: zero flux at the bottom face, mirrored Dirichlet ghost at the top
    ymain = np.full(grid.ny, 2.0 * d / h**2)
    ymain[0] -= d / h**2
    ymain[-1] += d / h**2
    off = np.full(grid.ny - 1, -d / h**2)
    Ty = sp.diags([off, ymain, off], [-1, 0, 1], format="csr")
    K = sp.kron(Iy, Tx, format="csr") + sp.kron(Ty, Ix, format="csr")
    return (K - sp.diags(m.ravel())).tocsr()


def _sample_profile(grid: Grid, profile: NicheProfile) -> np.ndarray:
    if not profile.covers(grid.X, grid.Y):
        raise ConfigurationError("niche table does not cover the truncated domain")
    xx, yy = grid.field_points()
    return np.asarray(niche_m(profile, xx, yy), dtype=float)


def _choose_scheme(c: float, h: float, diffusivity: float) -> bool:
    pe = peclet(c, h, diffusivity)
    if pe > 1.0:
        log.warning("grid Peclet number %.3g > 1: using first-order upwind advection", pe)
        return True
    return False


def assemble_coupled(grid: Grid, p: Parameters, profile: NicheProfile) -> SparseOperator:
    h = grid.h
    upwind = _choose_scheme(p.c, h, min(p.d, p.D))
    m = _sample_profile(grid, profile)
    F = _field_block(grid, p.d, p.c, m, upwind)
    nx = grid.nx
    # exchange flux through the bottom face of row j = 0
    if p.nu:
        bump = np.zeros(F.shape[0])
        bump[:nx] = p.nu / h
        F = F + sp.diags(bump)
    R = _line_operator(nx, h, p.D, p.c, upwind)
    if p.mu:
        R = R + p.mu * sp.identity(nx, format="csr")
    road_to_field = sp.csr_matrix((np.full(nx, -p.mu / h), (np.arange(nx), np.arange(nx))),
                                  shape=(grid.nx * grid.ny, nx))
    field_to_road = sp.csr_matrix((np.full(nx, -p.nu), (np.arange(nx), np.arange(nx))),
                                  shape=(nx, grid.nx * grid.ny))
    A = sp.bmat([[R, field_to_road], [road_to_field, F]], format="csr")
    A.eliminate_zeros()
    A.sort_indices()
    return SparseOperator(matrix=A, kind=COUPLED, grid=grid, profile=profile, params=p,
                          d=p.d, c=p.c, nu=p.nu, advection="upwind" if upwind else "central")


def assemble_neumann(grid: Grid, d: float, c: float, profile: NicheProfile) -> SparseOperator:
    return _assemble_field_only(grid, d, c, 0.0, profile, NEUMANN)


def assemble_robin(grid: Grid, d: float, c: float, nu: float, profile: NicheProfile) -> SparseOperator:
    if nu < 0:
        raise ConfigurationError("Robin coefficient nu must be >= 0")
    return _assemble_field_only(grid, d, c, nu, profile, ROBIN)


def _assemble_field_only(grid, d, c, nu, profile, kind):
    if d <= 0 or c < 0:
        raise ConfigurationError("need d > 0 and c >= 0")
    upwind = _choose_scheme(c, grid.h, d)
    m = _sample_profile(grid, profile)
    A = _field_block(grid, d, c, m, upwind)
    if nu:
        bump = np.zeros(A.shape[0])
        bump[: grid.nx] = nu / grid.h
        A = A + sp.diags(bump)
    A = A.tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    return SparseOperator(matrix=A, kind=kind, grid=grid, profile=profile, d=d, c=c, nu=nu,
                          advection="upwind" if upwind else "central")


def assemble(kind: str, grid: Grid, p: Parameters, profile: NicheProfile) -> SparseOperator:
    if kind == COUPLED:
        return assemble_coupled(grid, p, profile)
    if kind == NEUMANN:
        return assemble_neumann(grid, p.d, p.c, profile)
    if kind == ROBIN:
        return assemble_robin(grid, p.d, p.c, p.nu, profile)
    raise ConfigurationError(f"unknown operator kind {kind!r}; expected one of {KINDS}")


def symmetry_weights(op: SparseOperator) -> np.ndarray:
    """Diagonal W with W A symmetric when c = 0 (mu*h on road, nu*h^2 on field)."""
    g = op.grid
    idx = op.index
    w = np.empty(idx.total)
    if op.kind == COUPLED:
        w[: idx.n_road] = op.params.mu * g.h
        w[idx.n_road:] = op.params.nu * g.h**2
    else:
        w[:] = g.h**2
    return w
