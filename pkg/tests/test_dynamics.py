import math

import numpy as np
import pytest

from roadfield.discretization import assemble_coupled, build_grid
from roadfield.dynamics import (EXTINCTION, PERSISTENCE, StabilityError, State, admissible_dt,
                                bump_state, check_comparison, check_uniqueness, evolve_classify,
                                export_frames, simulate, step)
from roadfield.eigensolver import principal_eigenpair
from roadfield.model import NicheProfile, Parameters, ReactionTerm

BASE = Parameters(1, 1, 1, 1)
GRID = build_grid(4.0, 4.0, 0.5)  # 16 x 8 field cells


def term(L):
    return ReactionTerm(NicheProfile.radial(L))


def test_grid_shape():
    assert (GRID.nx, GRID.ny) == (16, 8)


def test_zero_is_stationary():
    out = step(State.zeros(GRID), BASE, term(3.0), 0.1)
    assert not np.any(out.u) and not np.any(out.v)


def test_supersolution_decreases():
    t = term(3.0)
    M = 2 * t.saturation
    s = State(0.0, np.full(GRID.nx, BASE.nu * M / BASE.mu), np.full((GRID.ny, GRID.nx), M), GRID)
    out = step(s, BASE, t, admissible_dt(t, M))
    assert np.all(out.u <= s.u) and np.all(out.v <= s.v)


def test_small_eigenfunction_increases():
    t = term(3.0)
    res = principal_eigenpair(assemble_coupled(GRID, BASE, t.profile))
    assert res.lam < 0
    eps = 1e-3
    s = State(0.0, eps * res.phi, eps * res.psi, GRID)
    out = step(s, BASE, t, admissible_dt(t, s.sup))
    assert np.all(out.u >= s.u) and np.all(out.v >= s.v)


def test_step_rejects_unstable_dt():
    t = term(3.0)
    s = bump_state(GRID, (0.0, 1.0))
    with pytest.raises(StabilityError, match="dt"):
        step(s, BASE, t, 10 * admissible_dt(t, s.sup))


def test_persistence_verdict():
    cl = evolve_classify(BASE, term(5.0), build_grid(12.0, 12.0, 0.5))
    assert cl.verdict == PERSISTENCE
    assert cl.lam < 0
    v = cl.steady_state.v
    g = cl.steady_state.grid
    core = np.hypot(*np.meshgrid(g.x, g.y)) < 4.0
    assert np.all(v[core] > 0)


def test_steady_state_solves_discrete_problem():
    grid = build_grid(12.0, 12.0, 0.5)
    t = term(5.0)
    cl = evolve_classify(BASE, t, grid)
    w = cl.steady_state.vector
    A = assemble_coupled(grid, BASE, t.profile).matrix
    forcing = np.concatenate([np.zeros(grid.nx), cl.steady_state.v.ravel() ** 2])
    assert np.max(np.abs(A @ w + forcing)) <= 1e-4 * np.max(w)


def test_nowhere_favorable_goes_extinct():
    cl = evolve_classify(BASE, term(-5.0), build_grid(8.0, 8.0, 0.5))
    assert cl.verdict == EXTINCTION


def test_fast_shift_goes_extinct():
    t = term(5.0)
    c = 2.1 * math.sqrt(max(BASE.d, BASE.D) * t.profile.sup_m)
    cl = evolve_classify(BASE.with_(c=c), t, build_grid(12.0, 12.0, 0.5))
    assert cl.verdict == EXTINCTION


def test_comparison_from_zero():
    hi = bump_state(GRID, (0.5, 1.0))
    rep = check_comparison(BASE, term(3.0), GRID, State.zeros(GRID), hi, horizon=5.0)
    assert rep.max_violation == 0.0


def test_comparison_of_ordered_bumps():
    hi = bump_state(GRID, (0.5, 1.0), amplitude=1.5, width=1.2)
    lo = State(0.0, 0.5 * hi.u, 0.5 * hi.v, GRID)
    rep = check_comparison(BASE, term(3.0), GRID, lo, hi, horizon=10.0)
    assert rep.max_violation <= 1e-10
    assert rep.min_entry >= 0


def test_comparison_identical_data():
    s = bump_state(GRID, (0.0, 1.0))
    rep = check_comparison(BASE, term(3.0), GRID, s, s, horizon=5.0)
    assert rep.identical


def test_uniqueness_of_positive_steady_state():
    rep = check_uniqueness(BASE, term(5.0), build_grid(12.0, 12.0, 0.5), horizon=200.0)
    assert rep.final_gap <= 1e-3
    assert rep.decreasing_late


def test_uniqueness_identical_data():
    s = bump_state(GRID, (0.0, 1.0))
    rep = check_uniqueness(BASE, term(3.0), GRID, horizon=5.0, inits=(s, s))
    assert rep.final_gap == 0.0


def test_uniqueness_under_extinction():
    rep = check_uniqueness(BASE, term(-5.0), GRID, horizon=50.0)
    assert rep.final_gap <= 1e-3


def test_simulate_is_deterministic_and_exports(tmp_path):
    init = bump_state(GRID, (0.0, 1.0))
    a, frames = simulate(BASE, term(3.0), init, 2.0, stride=5)
    b, _ = simulate(BASE, term(3.0), init, 2.0, stride=5)
    np.testing.assert_array_equal(a.vector, b.vector)
    export_frames(frames, tmp_path / "f.csv", tmp_path / "r.csv")
    field = (tmp_path / "f.csv").read_text().splitlines()
    road = (tmp_path / "r.csv").read_text().splitlines()
    assert field[0] == "t,x,y,value" and road[0] == "t,x,value"
    assert len(field) == 1 + len(frames) * GRID.nx * GRID.ny
    assert len(road) == 1 + len(frames) * GRID.nx
