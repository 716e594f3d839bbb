import math

import numpy as np
import pytest

from roadfield.model import (ConfigurationError, NicheProfile, OutOfDomainError, Parameters,
                             ReactionTerm, chi, niche_m, positive_part, validate_hypotheses)


def test_chi_values():
    assert chi(0.0) == 0.0
    assert abs(chi(-20.0) - 1.0) <= 1e-12
    assert chi(3.0) == pytest.approx(-math.tanh(3.0), abs=1e-15)
    assert chi(3.0) == pytest.approx(-0.99505475, abs=1e-8)


def test_chi_is_odd_and_decreasing():
    r = np.linspace(-5, 5, 101)
    np.testing.assert_allclose(chi(-r), -chi(r), atol=0)
    assert np.all(np.diff(chi(r)) < 0)


def test_positive_part():
    assert positive_part(-2.0) == 0.0
    assert positive_part(1.5) == 1.5


def test_radial_profile_points():
    prof = NicheProfile.radial(2.0)
    assert prof(0.0, 0.0) == pytest.approx(0.96402758, abs=1e-8)
    assert prof(2.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert prof.sup_m == pytest.approx(math.tanh(2.0))


def test_constant_profile_everywhere():
    prof = NicheProfile.constant(1.0, homogeneous=True)
    np.testing.assert_array_equal(prof(np.array([-3.0, 0.0, 7.0]), np.array([0.0, 1.0, 9.0])), 1.0)


def test_profile_rejects_points_below_road():
    with pytest.raises(OutOfDomainError):
        niche_m(NicheProfile.radial(1.0), 0.0, -0.1)


def test_tabulated_bilinear_and_clamp(tmp_path):
    path = tmp_path / "m.csv"
    rows = ["x,y,m"]
    for x in (-1.0, 0.0, 1.0):
        for y in (0.0, 1.0):
            rows.append(f"{x},{y},{x + 2 * y - 10}")
    path.write_text("\n".join(rows) + "\n")
    prof = NicheProfile.from_csv(path)
    # bilinear interpolation is exact on affine data
    assert prof(0.5, 0.25) == pytest.approx(-9.0)
    # clamping holds edge values outside the table
    assert prof(5.0, 3.0) == pytest.approx(-7.0)
    strict = NicheProfile.from_csv(path, clamp=False)
    with pytest.raises(OutOfDomainError):
        strict(5.0, 0.0)


def test_favorable_constant_needs_opt_in():
    with pytest.raises(ConfigurationError):
        NicheProfile.constant(1.0)


def test_clamped_table_needs_unfavorable_edges():
    x, y = np.array([-1.0, 1.0]), np.array([0.0, 1.0])
    with pytest.raises(ConfigurationError):
        NicheProfile.tabulated(x, y, np.ones((2, 2)))


def test_bfz_radial_far_field():
    rep = validate_hypotheses(ReactionTerm(NicheProfile.radial(2.0)), 10.0)
    assert rep.bfz and rep.passed
    assert rep.outside_sup == pytest.approx(-math.tanh(8.0))


def test_bfz_fails_for_favorable_constant():
    rep = validate_hypotheses(ReactionTerm(NicheProfile.constant(1.0, homogeneous=True)), 10.0)
    assert not rep.bfz
    assert not rep.passed


def test_nowhere_favorable_profile():
    prof = NicheProfile.radial(-5.0)
    rep = validate_hypotheses(ReactionTerm(prof), 1.0)
    assert rep.bfz
    assert rep.sup_m < 0
    # independent evaluation on a sample lattice
    xs, ys = np.meshgrid(np.linspace(-1, 1, 21), np.linspace(0, 1, 11))
    assert np.all(np.tanh(-(np.hypot(xs, ys) + 5.0)) <= -math.tanh(4.0))


def test_saturation_and_kpp():
    term = ReactionTerm(NicheProfile.radial(3.0))
    rep = validate_hypotheses(term, 6.0)
    assert rep.sat and rep.kpp
    assert term.saturation == pytest.approx(1.0 + math.tanh(3.0))


@pytest.mark.parametrize("kwargs", [dict(D=0, d=1, mu=1, nu=1), dict(D=1, d=-1, mu=1, nu=1),
                                    dict(D=1, d=1, mu=0, nu=1), dict(D=1, d=1, mu=1, nu=-1)])
def test_parameters_reject_invalid(kwargs):
    with pytest.raises(ConfigurationError):
        Parameters(**kwargs)


def test_parameters_decoupled_opt_in():
    p = Parameters(D=1, d=1, mu=0, nu=0, allow_decoupled=True)
    assert not p.strict_exchange
    assert p.with_(c=2.0).c == 2.0


def test_profile_identity_for_caching():
    assert NicheProfile.radial(2.0) == NicheProfile.radial(2.0)
    assert hash(NicheProfile.radial(2.0)) == hash(NicheProfile.radial(2.0))
    assert NicheProfile.radial(2.0) != NicheProfile.radial(2.5)
