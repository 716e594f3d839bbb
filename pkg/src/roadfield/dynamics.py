"""Semi-implicit time stepping of the road-field system in the moving frame.

One step solves ``(I + dt A) w_new = w - dt (0, v**2)`` where ``A`` is the
assembled coupled operator (diffusion, advection, exchange and the linear
``-m v`` term). Under ``dt * ([sup m]^+ + 2 sup v) <= 0.5`` the matrix is an
M-matrix and ``v -> v - dt v**2`` is increasing, so the scheme preserves
nonnegativity and pointwise order. Fixed points of the scheme solve the
discrete stationary problem exactly, independently of ``dt``.
"""
from __future__ import annotations

import functools
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import Grid, assemble_coupled
from .eigensolver import principal_eigenpair
from .model import ConfigurationError, NicheProfile, Parameters, ReactionTerm, niche_m

log = logging.getLogger(__name__)

PERSISTENCE = "persistence"
EXTINCTION = "extinction"
UNDETERMINED = "undetermined"

STABILITY_MARGIN = 0.5
BORDERLINE = 0.02


class StabilityError(ConfigurationError):
    """Time step too large for the positivity-preserving regime."""


@dataclass
class State:
    t: float
    u: np.ndarray  # road, shape (nx,)
    v: np.ndarray  # field, shape (ny, nx)
    grid: Grid

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != (self.grid.nx,) or self.v.shape != (self.grid.ny, self.grid.nx):
            raise ConfigurationError("state arrays do not match the grid")

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0) -> "State":
        return cls(t, np.zeros(grid.nx), np.zeros((grid.ny, grid.nx)), grid)

    @classmethod
    def from_vector(cls, w: np.ndarray, grid: Grid, t: float = 0.0) -> "State":
        return cls(t, w[: grid.nx].copy(), w[grid.nx:].reshape(grid.ny, grid.nx).copy(), grid)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.v.ravel()])

    @property
    def sup(self) -> float:
        return float(max(self.u.max(initial=0.0), self.v.max(initial=0.0)))

    @property
    def minimum(self) -> float:
        return float(min(self.u.min(), self.v.min()))


@dataclass
class Classification:
    verdict: str
    lam: float
    steady_state: State | None = None
    gap: float = math.nan
    t_final: float = 0.0
    evidence: list = field(default_factory=list)  # (t, core min of lower, sup of upper, gap)
    lower_monotone: bool = True

    def as_dict(self) -> dict:
        out = {
            "verdict": self.verdict,
            "lambda": self.lam,
            "gap": self.gap,
            "t_final": self.t_final,
            "lower_monotone": self.lower_monotone,
            "evidence": [list(map(float, row)) for row in self.evidence],
        }
        if self.steady_state is not None:
            out["steady_sup"] = self.steady_state.sup
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2)


def admissible_dt(term: ReactionTerm, sup_v: float) -> float:
    """Largest dt meeting dt * ([sup m]^+ + 2 sup v) <= 0.5."""
    rate = max(term.profile.sup_m, 0.0) + 2.0 * max(sup_v, 0.0)
    return math.inf if rate == 0 else STABILITY_MARGIN / rate


def supersolution_level(p: Parameters, term: ReactionTerm, *states: State) -> float:
    """Field level M such that the constant pair (nu M / mu, M) dominates every given state."""
    M = term.saturation
    for s in states:
        M = max(M, float(s.v.max(initial=0.0)))
        if p.nu > 0:
            M = max(M, p.mu * float(s.u.max(initial=0.0)) / p.nu)
    return M


@functools.lru_cache(maxsize=16)
def _implicit_factor(grid: Grid, p: Parameters, profile: NicheProfile, dt: float):
    op = assemble_coupled(grid, p, profile)
    n = op.dimension
    M = (sp.identity(n, format="csc") + dt * op.matrix).tocsc()
    return spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options={"SymmetricMode": True})


def _advance(w: np.ndarray, nx: int, lu, dt: float) -> np.ndarray:
    rhs = w.copy()
    v = rhs[nx:]
    rhs[nx:] = v - dt * v * v
    return lu.solve(rhs)


def step(state: State, p: Parameters, term: ReactionTerm, dt: float) -> State:
    """One implicit-explicit step of length dt."""
    if not dt > 0:
        raise StabilityError("dt must be > 0")
    bound = admissible_dt(term, float(state.v.max(initial=0.0)))
    if dt > bound:
        raise StabilityError(f"dt = {dt:g} exceeds the admissible bound {bound:.6g}")
    lu = _implicit_factor(state.grid, p, term.profile, float(dt))
    w = _advance(state.vector, state.grid.nx, lu, dt)
    return State.from_vector(w, state.grid, state.t + dt)


def _prepare(p, term, grid, dt, *states):
    M = supersolution_level(p, term, *states)
    bound = admissible_dt(term, M)
    if dt is None:
        dt = bound
    elif dt > bound:
        raise StabilityError(f"dt = {dt:g} exceeds the admissible bound {bound:.6g} "
                             f"for densities up to {M:.6g}")
    return float(dt), _implicit_factor(grid, p, term.profile, float(dt))


def _core_mask(grid: Grid, profile: NicheProfile) -> np.ndarray:
    xx, yy = grid.field_points()
    mask = niche_m(profile, xx, yy) > 0
    if not mask.any():
        mask = (np.abs(xx) <= 0.1 * grid.X) & (yy <= 0.1 * grid.Y + grid.h)
    return mask


def evolve_classify(p: Parameters, term: ReactionTerm, grid: Grid, horizon: float = 500.0,
                    dt: float | None = None, steady_tol: float = 1e-6,
                    extinction_tol: float = 1e-6, check_every: int = 10) -> Classification:
    """Sandwich classification between a small eigenfunction multiple and the supersolution.

    The upper trajectory starts at the constant pair ``(nu S / mu, S)`` and
    decreases; when the truncated eigenvalue is negative the lower one
    starts at ``eps`` times the eigenfunction with ``eps = |lambda| / 2``
    and increases. Persistence is declared when they agree within
    ``steady_tol`` relative to the upper sup norm, extinction when the
    upper sup norm drops below ``extinction_tol * S``.
    """
    if horizon <= 0:
        raise ConfigurationError("horizon must be > 0")
    if not p.strict_exchange:
        raise ConfigurationError("classification needs mu > 0 and nu > 0")
    op = assemble_coupled(grid, p, term.profile)
    eig = principal_eigenpair(op)
    lam = eig.lam
    S = term.saturation
    upper = State(0.0, np.full(grid.nx, p.nu * S / p.mu), np.full((grid.ny, grid.nx), S), grid)
    lower = None
    if lam < 0:
        w = eig.vector / eig.vector.max()
        lower = State.from_vector(0.5 * abs(lam) * w, grid)
    dt, lu = _prepare(p, term, grid, dt, upper)
    nsteps = int(math.ceil(horizon / dt - 1e-12))
    core = _core_mask(grid, term.profile)
    out = Classification(verdict=UNDETERMINED, lam=lam)
    wu = upper.vector
    wl = None if lower is None else lower.vector
    nx = grid.nx
    t = 0.0
    for k in range(1, nsteps + 1):
        wu = _advance(wu, nx, lu, dt)
        if wl is not None:
            new = _advance(wl, nx, lu, dt)
            if np.any(new < wl - 1e-12 * max(1.0, float(wl.max()))):
                out.lower_monotone = False
            wl = new
        t = k * dt
        if k % check_every and k != nsteps:
            continue
        sup_u = float(wu.max())
        if wl is None:
            gap = math.inf
            core_min = 0.0
        else:
            gap = float(np.max(np.abs(wu - wl))) / max(sup_u, 1e-300)
            core_min = float(wl[nx:].reshape(grid.ny, grid.nx)[core].min())
        out.evidence.append((t, core_min, sup_u, gap))
        if sup_u < extinction_tol * S:
            out.verdict = EXTINCTION
            break
        if wl is not None and gap <= steady_tol and core_min > 0:
            out.verdict = PERSISTENCE
            break
    out.t_final = t
    if wl is not None:
        out.gap = float(np.max(np.abs(wu - wl))) / max(float(wu.max()), 1e-300)
    if out.verdict == PERSISTENCE:
        if not out.lower_monotone:
            log.warning("lower bracket was not monotone; downgrading verdict")
            out.verdict = UNDETERMINED
        else:
            out.steady_state = State.from_vector(0.5 * (wu + wl), grid, t)
    if abs(lam) < BORDERLINE and out.verdict != UNDETERMINED:
        log.warning("truncated eigenvalue %.3g is borderline; reporting undetermined", lam)
        out.verdict = UNDETERMINED
    return out


@dataclass
class ComparisonReport:
    max_violation: float
    min_entry: float
    identical: bool
    samples: int

    def as_dict(self) -> dict:
        return dict(max_violation=self.max_violation, min_entry=self.min_entry,
                    identical=self.identical, samples=self.samples)


def check_comparison(p: Parameters, term: ReactionTerm, grid: Grid, init_low: State,
                     init_high: State, horizon: float, dt: float | None = None,
                     sample_every: int = 1) -> ComparisonReport:
    """Evolve two ordered initial states and record the worst ordering violation."""
    if np.any(init_low.vector > init_high.vector):
        raise ConfigurationError("init_low must be <= init_high pointwise")
    dt, lu = _prepare(p, term, grid, dt, init_low, init_high)
    wl, wh = init_low.vector, init_high.vector
    worst = 0.0
    lowest = float(min(wl.min(), wh.min()))
    identical = True
    samples = 0
    for k in range(1, int(math.ceil(horizon / dt - 1e-12)) + 1):
        wl = _advance(wl, grid.nx, lu, dt)
        wh = _advance(wh, grid.nx, lu, dt)
        if k % sample_every == 0:
            samples += 1
            worst = max(worst, float(np.max(wl - wh)))
            lowest = min(lowest, float(wl.min()), float(wh.min()))
            identical = identical and np.array_equal(wl, wh)
    return ComparisonReport(max(worst, 0.0), lowest, identical, samples)


def bump_state(grid: Grid, center, amplitude: float = 1.0, width: float = 1.0) -> State:
    """Gaussian field bump with zero road density."""
    xx, yy = grid.field_points()
    v = amplitude * np.exp(-((xx - center[0]) ** 2 + (yy - center[1]) ** 2) / (2 * width**2))
    return State(0.0, np.zeros(grid.nx), v, grid)


@dataclass
class UniquenessReport:
    final_gap: float
    history: list  # (t, gap)
    decreasing_late: bool

    def as_dict(self) -> dict:
        return dict(final_gap=self.final_gap, decreasing_late=self.decreasing_late,
                    history=[list(map(float, r)) for r in self.history])


def check_uniqueness(p: Parameters, term: ReactionTerm, grid: Grid, horizon: float = 200.0,
                     dt: float | None = None, tol: float = 1e-3, inits=None,
                     samples: int = 20) -> UniquenessReport:
    """Evolve two unordered positive data and track their max-norm gap.

    The default data are unit bumps centered at (-2, 1) and (2, 1).
    """
    if inits is None:
        inits = (bump_state(grid, (-2.0, 1.0)), bump_state(grid, (2.0, 1.0)))
    a, b = inits
    dt, lu = _prepare(p, term, grid, dt, a, b)
    wa, wb = a.vector, b.vector
    nsteps = int(math.ceil(horizon / dt - 1e-12))
    stride = max(1, nsteps // samples)
    history = []
    for k in range(1, nsteps + 1):
        wa = _advance(wa, grid.nx, lu, dt)
        wb = _advance(wb, grid.nx, lu, dt)
        if k % stride == 0 or k == nsteps:
            history.append((k * dt, float(np.max(np.abs(wa - wb)))))
    late = [g for t, g in history if t >= 0.5 * horizon]
    decreasing = all(y <= x + tol * 1e-3 for x, y in zip(late, late[1:]))
    final = history[-1][1] if history else 0.0
    if final > tol:
        log.info("uniqueness gap %.3g above tolerance %.3g", final, tol)
    return UniquenessReport(final, history, decreasing)


def simulate(p: Parameters, term: ReactionTerm, init: State, horizon: float,
             dt: float | None = None, stride: int = 0):
    """Evolve one trajectory; returns the final state and frames every ``stride`` steps."""
    dt, lu = _prepare(p, term, init.grid, dt, init)
    w = init.vector
    frames = [State.from_vector(w, init.grid, init.t)] if stride else []
    nsteps = int(math.ceil(horizon / dt - 1e-12))
    for k in range(1, nsteps + 1):
        w = _advance(w, init.grid.nx, lu, dt)
        if stride and (k % stride == 0 or k == nsteps):
            frames.append(State.from_vector(w, init.grid, init.t + k * dt))
    return State.from_vector(w, init.grid, init.t + nsteps * dt), frames


def export_frames(frames, field_path=None, road_path=None) -> None:
    """CSV frames: field as ``t,x,y,value``, road as ``t,x,value``."""
    if field_path is not None:
        with open(field_path, "w") as fh:
            fh.write("t,x,y,value\n")
            for s in frames:
                g = s.grid
                for j, y in enumerate(g.y):
                    for i, x in enumerate(g.x):
                        fh.write(f"{s.t:.17g},{x:.17g},{y:.17g},{s.v[j, i]:.17g}\n")
    if road_path is not None:
        with open(road_path, "w") as fh:
            fh.write("t,x,value\n")
            for s in frames:
                for x, val in zip(s.grid.x, s.u):
                    fh.write(f"{s.t:.17g},{x:.17g},{val:.17g}\n")
