"""Principal eigenpairs of the assembled operators and domain exhaustion."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import (COUPLED, Grid, SparseOperator, assemble, build_grid,
                             symmetry_weights)
from .model import ConfigurationError, NicheProfile, Parameters, niche_m

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
MAX_ITER = 500
BRACKET_TOL = 1e-8


class SolverError(RuntimeError):
    """Iteration cap reached without meeting the residual tolerance."""

    def __init__(self, message, residual=None, partial=None):
        super().__init__(message)
        self.residual = residual
        self.partial = partial


class StructuralError(RuntimeError):
    """Converged eigenvector is not positive: assembly or sign problem."""


@dataclass
class EigenResult:
    lam: float
    phi: np.ndarray | None
    psi: np.ndarray
    residual: float
    iterations: int
    tol: float = DEFAULT_TOL
    grid: Grid | None = None

    @property
    def vector(self) -> np.ndarray:
        if self.phi is None:
            return self.psi.ravel()
        return np.concatenate([self.phi, self.psi.ravel()])


@dataclass
class ExhaustionResult:
    ladder: list = field(default_factory=list)  # (X_k, Y_k, lambda_k)
    lambda_inf: float = math.nan
    converged: bool = False
    last: EigenResult | None = None

    def as_dict(self) -> dict:
        return {
            "ladder": [{"X": X, "Y": Y, "lambda": lam} for X, Y, lam in self.ladder],
            "lambda_inf": self.lambda_inf,
            "converged": self.converged,
        }


def _result(op: SparseOperator, w, lam, residual, iterations, tol) -> EigenResult:
    phi, psi = op.index.split(w)
    return EigenResult(lam=float(lam), phi=None if phi is None else phi.copy(), psi=psi.copy(),
                       residual=float(residual), iterations=iterations, tol=tol, grid=op.grid)


def _normalize(x):
    k = np.argmax(np.abs(x))
    return x / x[k]


def _factor_below(A, sigma, eye):
    """Factor A - sigma I and report whether sigma lies below the principal eigenvalue.

    A - sigma I is a Z-matrix; with diagonal pivots and a symmetric
    permutation it is a nonsingular M-matrix exactly when every pivot is
    positive, which happens exactly when sigma < lambda_1.
    """
    try:
        lu = spla.splu(A - sigma * eye, permc_spec="MMD_AT_PLUS_A",
                       diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError:  # exactly singular: sigma is an eigenvalue
        return None, False
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise StructuralError("LU applied off-diagonal pivoting; M-matrix test unavailable")
    return lu, bool(np.all(lu.U.diagonal() > 0))


def _bounds(Aw, w):
    """Collatz-Wielandt bracket min/max of (A w)_i / w_i for positive w."""
    if not np.all(w > 0):
        return -math.inf, math.inf
    r = Aw / w
    return float(r.min()), float(r.max())


def default_start(op: SparseOperator) -> np.ndarray:
    """Positive initial iterate.

    Constant profiles at c > 0 get the e^{-c x / 2d} decay of the exact
    translation-invariant eigenfunction times a cosine envelope; without
    it the far tail converges very slowly. Other cases start from ones.
    """
    n = op.dimension
    if op.c <= 0 or op.profile.kind != "constant":
        return np.ones(n)
    g = op.grid
    ex = np.exp(-op.c * (g.x + g.X) / (2.0 * op.d)) * np.cos(np.pi * g.x / (2.0 * g.X))
    field_part = np.outer(np.cos(np.pi * g.y / (2.0 * g.Y)), ex).ravel()
    if op.kind == COUPLED:
        return np.concatenate([ex, field_part])
    return field_part


def principal_eigenpair(op: SparseOperator, tol: float = DEFAULT_TOL, start=None,
                        max_iter: int = MAX_ITER, power_steps: int = 20,
                        bracket_tol: float = BRACKET_TOL) -> EigenResult:
    """Perron eigenpair of A by shifted inverse iteration.

    Power steps on ``s I - A`` give a positive iterate and a crude
    estimate. Each shift is certified to lie below the principal
    eigenvalue by the pivot-sign test of :func:`_factor_below`, so the
    iteration cannot lock onto another eigenvalue and every iterate stays
    positive. A failed test certifies an upper bound and the next shift
    bisects. Refactoring happens only when the new shift at least halves
    the distance to the current estimate.

    Convergence requires the max-norm residual below ``tol`` and the
    Collatz-Wielandt bracket narrower than ``bracket_tol`` (relative to
    ``max(1, |lambda|)``).
    """
    if tol <= 0:
        raise ConfigurationError("tol must be > 0")
    A = op.matrix.tocsc()
    n = A.shape[0]
    off = A - sp.diags(A.diagonal())
    if off.nnz and off.data.max() > 0:
        raise StructuralError("operator has positive off-diagonal entries (not a Z-matrix)")
    if start is None:
        w = default_start(op)
    else:
        w = np.abs(np.asarray(start, dtype=float)).copy()
        w[~(w > 0)] = w[w > 0].min() if np.any(w > 0) else 1.0
    s = op.shift_bound()
    eye = sp.identity(n, format="csc")
    B = (s * eye - A).tocsr()
    for _ in range(power_steps):
        w = B @ w
        w /= w.max()

    lo, hi = -math.inf, math.inf
    lu = None
    sigma = -math.inf
    failed = False
    residual = math.inf
    lam = math.nan
    b_lo = b_hi = math.nan
    for it in range(1, max_iter + 1):
        Aw = A @ w
        lam = float(w @ Aw / (w @ w))
        residual = float(np.max(np.abs(Aw - lam * w)) / np.max(np.abs(w)))
        b_lo, b_hi = _bounds(Aw, w)
        # non-normal operators admit tiny max-norm residuals far from the
        # Perron pair, so the componentwise bracket must close as well
        if residual <= tol and b_hi - b_lo <= bracket_tol * max(1.0, abs(lam)):
            break
        lo, hi = max(lo, b_lo), min(hi, b_hi)
        if lu is None:
            sigma = lo - max(1e-3 * (hi - lo), 1e-10 * max(1.0, abs(lo)))
            lu, ok = _factor_below(A, sigma, eye)
            if not ok:
                raise StructuralError("shift below the Collatz-Wielandt bound failed the "
                                      "M-matrix pivot test")
        else:
            est = min(lam, hi)
            target = 0.5 * (sigma + hi) if failed else est - residual
            target = max(target, lo)
            if target - sigma > 0.5 * (est - sigma):
                new_lu, ok = _factor_below(A, target, eye)
                failed = not ok
                if ok:
                    lu, sigma = new_lu, target
                else:
                    # a failed pivot test certifies target >= lambda_1
                    hi = min(hi, target)
        w = _normalize(lu.solve(w))
    else:
        raise SolverError(f"inverse iteration did not reach residual {tol:g} "
                          f"in {max_iter} iterations (last {residual:.3g}, "
                          f"bracket width {b_hi - b_lo:.3g})", residual=residual,
                          partial=_result(op, w, lam, residual, max_iter, tol))
    if not np.all(w > 0):
        raise StructuralError(
            f"principal eigenvector has {int(np.sum(w <= 0))} non-positive entries "
            "(check exchange-rate signs or assembly)")
    return _result(op, w, lam, residual, it, tol)


def dense_oracle(op: SparseOperator, max_dim: int = 2000) -> EigenResult:
    """Principal eigenpair from a full dense eigendecomposition."""
    n = op.dimension
    if n > max_dim:
        raise ConfigurationError(f"dense oracle limited to dimension {max_dim}, got {n}")
    M = op.matrix.toarray()
    vals, vecs = scipy.linalg.eig(M)
    order = np.argsort(vals.real, kind="stable")
    for k in order[:4]:
        v = vecs[:, k]
        v = v / v[np.argmax(np.abs(v))]
        if np.max(np.abs(v.imag)) < 1e-9 and np.all(v.real > 0):
            lam = vals[k]
            others = np.delete(vals, k)
            if abs(lam.imag) > 1e-9:
                raise StructuralError(f"principal eigenvalue not real: {lam}")
            if others.size and np.min(np.abs(others - lam)) < 1e-9:
                raise StructuralError("principal eigenvalue is not simple")
            w = v.real
            residual = np.max(np.abs(M @ w - lam.real * w)) / np.max(np.abs(w))
            return _result(op, w, lam.real, residual, 0, 0.0)
    raise StructuralError("no positive eigenvector among the smallest-real-part candidates")


def rayleigh_quotient(grid: Grid, p: Parameters, profile: NicheProfile, phi, psi) -> float:
    """Discrete energy quotient of a road/field pair (valid only for c = 0).

    Sums use cell measures (h on the road, h^2 in the field). The Dirichlet
    edges sit on cell faces, so the edge differences span half a cell; the
    bottom field face carries only the exchange term. For c = 0 the quotient
    equals w.W A w / w.W w with the symmetrizing weights.
    """
    if p.c != 0:
        raise ConfigurationError("the energy quotient characterizes the eigenvalue only when c = 0")
    h = grid.h
    phi = np.asarray(phi, dtype=float).ravel()
    psi = np.asarray(psi, dtype=float).reshape(grid.ny, grid.nx)
    if phi.size != grid.nx:
        raise ConfigurationError("road values must have one entry per road node")
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
        raise ConfigurationError("entries must be finite")
    if not (np.any(phi) or np.any(psi)):
        raise ConfigurationError("pair is identically zero")
    # interior faces: (difference / h)^2 over a cell; edge faces: (value / (h/2))^2 over half a cell
    road_energy = p.D * (np.sum(np.diff(phi) ** 2) + 2 * (phi[0] ** 2 + phi[-1] ** 2)) / h
    grad2 = (np.sum(np.diff(psi, axis=1) ** 2) + 2 * np.sum(psi[:, 0] ** 2 + psi[:, -1] ** 2)
             + np.sum(np.diff(psi, axis=0) ** 2) + 2 * np.sum(psi[-1] ** 2))
    xx, yy = grid.field_points()
    m = niche_m(profile, xx, yy)
    field_energy = p.d * grad2 - np.sum(m * psi**2) * h**2
    exchange = np.sum((p.mu * phi - p.nu * psi[0]) ** 2) * h
    num = p.mu * road_energy + p.nu * field_energy + exchange
    den = p.mu * np.sum(phi**2) * h + p.nu * np.sum(psi**2) * h**2
    return float(num / den)


def symmetric_check_eigenvalue(op: SparseOperator) -> float:
    """Smallest eigenvalue of W^(1/2) A W^(-1/2) by a symmetric solver (c = 0 only)."""
    w = np.sqrt(symmetry_weights(op))
    S = sp.diags(w) @ op.matrix @ sp.diags(1.0 / w)
    S = 0.5 * (S + S.T)
    if S.shape[0] <= 2000:
        return float(scipy.linalg.eigh(S.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
    val = spla.eigsh(S.tocsc(), k=1, sigma=op.matrix.diagonal().min() - op.shift_bound(),
                     which="LM", return_eigenvectors=False)
    return float(val[0])


def snap_to_grid(X: float, h: float) -> float:
    """Nearest positive multiple of h (keeps Y = X commensurate with the spacing)."""
    return h * max(2, round(X / h))


def _embed(prev: EigenResult, grid: Grid, with_road: bool) -> np.ndarray:
    """Pad a smaller-domain eigenvector onto an enclosing aligned grid."""
    g0 = prev.grid
    off = round((grid.X - g0.X) / grid.h)
    floor = float(prev.vector.min())
    psi = np.full((grid.ny, grid.nx), floor)
    psi[: g0.ny, off: off + g0.nx] = prev.psi
    if not with_road:
        return psi.ravel()
    phi = np.full(grid.nx, floor)
    if prev.phi is not None:
        phi[off: off + g0.nx] = prev.phi
    return np.concatenate([phi, psi.ravel()])


def exhaust_lambda(p: Parameters, profile: NicheProfile, kind: str = COUPLED, X0: float = 4.0,
                   growth: float = 1.5, h: float = 0.25, stop_tol: float = 1e-4,
                   max_steps: int = 6, tol: float = DEFAULT_TOL, h_rule=None,
                   min_steps: int = 1) -> ExhaustionResult:
    """Principal eigenvalues on nested squares ``[-X_k, X_k] x [0, X_k]``.

    ``X_k = X0 * growth**k`` snapped to the spacing. ``h_rule`` maps X_k to
    a spacing; by default the spacing stays fixed at ``h``. Stops when two
    consecutive rungs differ by at most ``stop_tol`` and at least
    ``min_steps`` rungs have been computed (used to match truncations).
    """
    if X0 <= 0 or growth <= 1 or stop_tol <= 0:
        raise ConfigurationError("need X0 > 0, growth > 1 and stop_tol > 0")
    max_steps = max(max_steps, min_steps)
    out = ExhaustionResult()
    prev = None
    X_prev = 0.0
    for k in range(max_steps):
        hk = h if h_rule is None else float(h_rule(X0 * growth**k))
        Xk = snap_to_grid(X0 * growth**k, hk)
        if Xk <= X_prev:
            Xk = X_prev + hk
        grid = build_grid(Xk, Xk, hk)
        op = assemble(kind, grid, p, profile)
        start = None
        # padded tails are a poor start for the exponential profiles of
        # homogeneous problems at c > 0; the analytic default is better
        analytic = profile.kind == "constant" and p.c > 0
        if prev is not None and prev.grid.h == hk and not analytic:
            start = _embed(prev, grid, kind == COUPLED)
        try:
            res = principal_eigenpair(op, tol=tol, start=start)
        except SolverError as exc:
            exc.partial = out
            raise
        out.ladder.append((Xk, Xk, res.lam))
        out.lambda_inf = res.lam
        out.last = res
        out.converged = prev is not None and abs(res.lam - prev.lam) <= stop_tol
        if out.converged and k + 1 >= min_steps:
            break
        prev = res
        X_prev = Xk
    return out


def export_eigenfunction(result: EigenResult, road_path=None, field_path=None) -> None:
    """CSV export: road as ``x,phi``, field as ``x,y,psi``."""
    g = result.grid
    if road_path is not None and result.phi is not None:
        with open(road_path, "w") as fh:
            fh.write("x,phi\n")
            for x, v in zip(g.x, result.phi):
                fh.write(f"{x:.17g},{v:.17g}\n")
    if field_path is not None:
        with open(field_path, "w") as fh:
            fh.write("x,y,psi\n")
            for j, y in enumerate(g.y):
                for i, x in enumerate(g.x):
                    fh.write(f"{x:.17g},{y:.17g},{result.psi[j, i]:.17g}\n")
