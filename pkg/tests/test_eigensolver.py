import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roadfield.discretization import (assemble_coupled, assemble_neumann, assemble_robin,
                                      build_grid, symmetry_weights)
from roadfield.eigensolver import (SolverError, dense_oracle, exhaust_lambda, export_eigenfunction,
                                   principal_eigenpair, rayleigh_quotient,
                                   symmetric_check_eigenvalue, snap_to_grid)
from roadfield.model import NicheProfile, Parameters

ZERO = NicheProfile.constant(0.0, homogeneous=True)
BASE = Parameters(1, 1, 1, 1)


def test_three_cell_stencil_closed_form():
    # nx=3, ny=1 with h=1: x-part [[3,-1,0],[-1,2,-1],[0,-1,3]] has smallest
    # eigenvalue 1, the single y-cell (reflecting below, Dirichlet above) adds 2
    g = build_grid(1.5, 1.0, 1.0)
    assert (g.nx, g.ny) == (3, 1)
    op = assemble_neumann(g, 1.0, 0.0, ZERO)
    assert principal_eigenpair(op).lam == pytest.approx(3.0, abs=1e-12)


def test_three_unknown_characteristic_polynomial():
    op = assemble_neumann(build_grid(1.5, 1.0, 1.0), 1.0, 0.0, NicheProfile.radial(1.0))
    lam = principal_eigenpair(op).lam
    coeffs = np.poly(op.matrix.toarray())
    roots = np.sort(np.roots(coeffs).real)
    assert lam == pytest.approx(roots[0], abs=1e-10)
    # a simple root: the characteristic polynomial changes sign across it
    assert np.polyval(coeffs, lam - 1e-3) * np.polyval(coeffs, lam + 1e-3) < 0


def test_small_coupled_principal_is_real_and_simple():
    op = assemble_coupled(build_grid(1.0, 1.0, 0.5), BASE, NicheProfile.radial(1.0))
    assert op.dimension == 12
    vals = np.linalg.eigvals(op.matrix.toarray())
    k = np.argmin(vals.real)
    assert abs(vals[k].imag) < 1e-12
    assert np.min(np.abs(np.delete(vals, k) - vals[k])) > 1e-6
    assert principal_eigenpair(op).lam == pytest.approx(vals[k].real, abs=1e-10)


@pytest.mark.parametrize("c", [0.0, 0.8])
def test_matches_dense_oracle(c):
    op = assemble_coupled(build_grid(1.5, 2.0, 0.5), BASE.with_(c=c), NicheProfile.radial(1.0))
    res, ref = principal_eigenpair(op), dense_oracle(op)
    assert res.lam == pytest.approx(ref.lam, abs=1e-10)
    a = np.concatenate([res.phi, res.psi.ravel()])
    b = np.concatenate([ref.phi, ref.psi.ravel()])
    np.testing.assert_allclose(a / a.max(), b / b.max(), atol=1e-8)
    assert np.all(a > 0)


def test_neumann_separable_value():
    op = assemble_neumann(build_grid(1.0, 1.0, 1 / 64), 1.0, 0.0, ZERO)
    assert principal_eigenpair(op).lam == pytest.approx(math.pi**2 / 2, rel=0.02)


def test_constant_potential_shift():
    g = build_grid(2.0, 2.0, 0.25)
    lam0 = principal_eigenpair(assemble_neumann(g, 1.0, 0.0, ZERO)).lam
    lam3 = principal_eigenpair(assemble_neumann(g, 1.0, 0.0, NicheProfile.constant(3.0, True))).lam
    assert lam3 == pytest.approx(lam0 - 3.0, abs=1e-12)


def test_robin_without_exchange_gives_neumann_value():
    g = build_grid(2.0, 2.0, 0.5)
    prof = NicheProfile.radial(1.0)
    a = principal_eigenpair(assemble_robin(g, 1.0, 0.3, 0.0, prof)).lam
    b = principal_eigenpair(assemble_neumann(g, 1.0, 0.3, prof)).lam
    assert a == b


def test_quotient_equals_weighted_form():
    g = build_grid(2.0, 2.0, 0.5)
    p, prof = Parameters(3, 2, 1.5, 0.5), NicheProfile.radial(1.0)
    op = assemble_coupled(g, p, prof)
    W = symmetry_weights(op)
    rng = np.random.default_rng(3)
    for _ in range(5):
        w = rng.standard_normal(op.dimension)
        expected = w @ (W * (op.matrix @ w)) / (w @ (W * w))
        q = rayleigh_quotient(g, p, prof, w[:g.nx], w[g.nx:])
        assert q == pytest.approx(expected, rel=1e-12)


def test_symmetric_route_agrees_at_zero_speed():
    op = assemble_coupled(build_grid(3.0, 3.0, 0.25), Parameters(2, 1, 1.5, 0.5), NicheProfile.radial(2.0))
    assert principal_eigenpair(op).lam == pytest.approx(symmetric_check_eigenvalue(op), abs=1e-9)


def test_non_normal_homogeneous_problem():
    # drift dominated: a residual-only stopping rule locks onto pseudo-modes here
    p = Parameters(D=2, d=1, mu=1, nu=1, c=2)
    op = assemble_coupled(build_grid(30.0, 30.0, 0.5), p, NicheProfile.constant(1.0, True))
    res = principal_eigenpair(op)
    assert res.lam == pytest.approx(0.070215742716, abs=1e-9)
    assert np.all(res.psi > 0) and np.all(res.phi > 0)


def test_iteration_budget_is_enforced():
    op = assemble_coupled(build_grid(8.0, 8.0, 0.5), BASE.with_(c=1.0), NicheProfile.radial(3.0))
    with pytest.raises(SolverError):
        principal_eigenpair(op, max_iter=1, power_steps=0)


# energy quotient --------------------------------------------------------

def test_quotient_of_eigenpair_is_eigenvalue():
    g = build_grid(4.0, 4.0, 0.25)
    p, prof = Parameters(2, 1, 1, 1), NicheProfile.radial(2.0)
    res = principal_eigenpair(assemble_coupled(g, p, prof))
    q = rayleigh_quotient(g, p, prof, res.phi, res.psi)
    assert q == pytest.approx(res.lam, abs=1e-6 * max(1.0, abs(res.lam)))


def test_quotient_of_road_only_pair():
    X, D, mu = 4.0, 2.0, 1.0
    g = build_grid(X, 1.0, X / 64)
    p = Parameters(D, 1, mu, 1)
    phi = np.cos(math.pi * g.x / (2 * X))
    q = rayleigh_quotient(g, p, NicheProfile.radial(1.0), phi, np.zeros((g.ny, g.nx)))
    assert q == pytest.approx(D * (math.pi / (2 * X)) ** 2 + mu, rel=0.02)


def test_random_pairs_bound_the_eigenvalue():
    g = build_grid(2.0, 2.0, 0.5)
    p, prof = Parameters(3, 1, 2, 0.5), NicheProfile.radial(1.5)
    lam = principal_eigenpair(assemble_coupled(g, p, prof)).lam
    rng = np.random.default_rng(7)
    for _ in range(100):
        phi = rng.random(g.nx)
        psi = rng.random((g.ny, g.nx))
        assert rayleigh_quotient(g, p, prof, phi, psi) >= lam - 1e-8


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=8, max_size=8),
       st.lists(st.floats(0, 1), min_size=32, max_size=32))
def test_quotient_bound_property(phi, psi):
    g = build_grid(2.0, 2.0, 0.5)
    p, prof = Parameters(1, 2, 1, 1), NicheProfile.radial(1.0)
    if not (any(phi) or any(psi)):
        return
    lam = principal_eigenpair(assemble_coupled(g, p, prof)).lam
    assert rayleigh_quotient(g, p, prof, phi, np.reshape(psi, (4, 8))) >= lam - 1e-8


# exhaustion -------------------------------------------------------------

def test_unfavorable_ladder_positive_and_decreasing():
    res = exhaust_lambda(BASE, NicheProfile.radial(-10.0), kind="neumann", X0=2.0, h=0.5,
                         max_steps=4, stop_tol=1e-12)
    lams = [row[2] for row in res.ladder]
    assert len(lams) == 4
    assert min(lams) >= math.tanh(9.0)
    assert all(b < a for a, b in zip(lams, lams[1:]))


def test_coupled_ladder_nonincreasing():
    res = exhaust_lambda(BASE.with_(c=0.5), NicheProfile.radial(2.0), X0=3.0, h=0.5, max_steps=5,
                         stop_tol=1e-12)
    lams = [row[2] for row in res.ladder]
    assert all(b <= a + 1e-9 for a, b in zip(lams, lams[1:]))


def test_exhaustion_schedule_independence():
    prof = NicheProfile.radial(3.0)
    a = exhaust_lambda(BASE, prof, X0=7.0, growth=1.5, h=0.5, stop_tol=1e-4)
    b = exhaust_lambda(BASE, prof, X0=7.0, growth=2.0, h=0.5, stop_tol=1e-4)
    assert a.converged and b.converged
    assert a.lambda_inf == pytest.approx(b.lambda_inf, abs=2e-4)


def test_snap_to_grid():
    assert snap_to_grid(3.3, 0.5) == 3.5
    assert snap_to_grid(0.1, 0.5) == 1.0


def test_export_headers(tmp_path):
    g = build_grid(1.0, 1.0, 0.5)
    res = principal_eigenpair(assemble_coupled(g, BASE, NicheProfile.radial(1.0)))
    export_eigenfunction(res, tmp_path / "r.csv", tmp_path / "f.csv")
    road = (tmp_path / "r.csv").read_text().splitlines()
    field = (tmp_path / "f.csv").read_text().splitlines()
    assert road[0] == "x,phi" and len(road) == 1 + g.nx
    assert field[0] == "x,y,psi" and len(field) == 1 + g.nx * g.ny
    # written values round-trip exactly
    assert float(road[1].split(",")[1]) == res.phi[0]


def test_rectangles_sandwich_half_balls():
    # the half-ball of radius R lies between its inscribed and circumscribed
    # rectangles, so a vanishing gap pins the half-ball limit to ours
    p, prof, h = Parameters(2, 1, 1, 1, c=0.5), NicheProfile.radial(3.0), 0.5
    gaps = []
    for R in (6.0, 10.0, 16.0):
        Xi = h * math.floor(R / math.sqrt(2) / h)
        inner = principal_eigenpair(assemble_coupled(build_grid(Xi, Xi, h), p, prof)).lam
        outer = principal_eigenpair(assemble_coupled(build_grid(R, R, h), p, prof)).lam
        assert inner >= outer - 1e-12
        gaps.append(inner - outer)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[-1] < 1e-5
