"""Built-in battery of analytic identities, bounds and scheme properties.

Each check returns a :class:`CheckResult` with a signed ``margin``
(nonnegative when the check passes) and the measured quantities in
``details``. Results depend only on the inputs and the seed, so the JSON
report is byte-reproducible.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import analysis as an
from .discretization import COUPLED, KINDS, NEUMANN, assemble, build_grid
from .dynamics import (PERSISTENCE, State, bump_state, check_comparison, check_uniqueness,
                       evolve_classify)
from .eigensolver import dense_oracle, principal_eigenpair
from .model import ConfigurationError, NicheProfile, Parameters, ReactionTerm, positive_part

BASE = Parameters(D=1.0, d=1.0, mu=1.0, nu=1.0)
SPEED_TOL = 1e-2
COARSE = an.Numerics(h=0.5, stop_tol=1e-4, max_steps=7)
ROAD_HEAVY = an.Numerics(h=0.5, stop_tol=1e-3, max_steps=7)


@dataclass
class CheckResult:
    name: str
    criterion: int
    passed: bool
    margin: float
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "criterion": self.criterion, "passed": self.passed,
                "margin": self.margin, "details": self.details}

    def summary(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.criterion:2d} {self.name:<22s} margin {self.margin:+.3e}"


def _result(name, criterion, margins, details) -> CheckResult:
    margin = float(min(margins)) if margins else 0.0
    return CheckResult(name, criterion, bool(margin >= 0), margin, details)


def _radial(L):
    return NicheProfile.radial(float(L))


# 1 ----------------------------------------------------------------------

def check_separable(seed: int = 0) -> CheckResult:
    target = math.pi**2 / 2
    zero = NicheProfile.constant(0.0, homogeneous=True)
    hs = [1 / 16, 1 / 32, 1 / 64]
    lams = [principal_eigenpair(assemble(NEUMANN, build_grid(1, 1, h), BASE, zero)).lam for h in hs]
    errs = [abs(l - target) for l in lams]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    rel = errs[-1] / target
    return _result("separable", 1, [min(orders) - 1.8, 0.02 - rel],
                   {"h": hs, "lambda": lams, "orders": orders, "rel_error": rel})


# 2 ----------------------------------------------------------------------

_COUPLED_SHAPES = [(3, 2), (4, 2), (5, 2), (4, 3), (5, 3), (6, 3), (6, 4)]
_FIELD_SHAPES = [(3, 2), (4, 3), (5, 4), (6, 4), (6, 5), (5, 6)]


def random_small_operator(rng, kind: str, c: float):
    """A random operator with at most 30 unknowns."""
    shapes = _COUPLED_SHAPES if kind == COUPLED else _FIELD_SHAPES
    nx, ny = shapes[rng.integers(len(shapes))]
    h = float(rng.choice([0.25, 0.5]))
    grid = build_grid(nx * h / 2, ny * h, h)
    p = Parameters(D=float(rng.uniform(0.5, 2)), d=float(rng.uniform(0.5, 2)),
                   mu=float(rng.uniform(0.2, 2)), nu=float(rng.uniform(0.2, 2)), c=c)
    return assemble(kind, grid, p, _radial(rng.uniform(-1, 3)))


def check_oracle(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    rows = []
    margins = []
    for i in range(20):
        kind = KINDS[i % 3]
        c = (0.0, 1.0)[(i // 3) % 2]
        op = random_small_operator(rng, kind, c)
        it = principal_eigenpair(op, tol=1e-12)
        ref = dense_oracle(op)
        dl = abs(it.lam - ref.lam)
        dv = float(np.max(np.abs(it.vector / it.vector.max() - ref.vector / ref.vector.max())))
        rows.append({"kind": kind, "c": c, "n": op.dimension, "dlambda": dl, "dvector": dv})
        margins += [1e-9 - dl, 1e-8 - dv]
    return _result("oracle", 2, margins, {"cases": rows})


# 3 ----------------------------------------------------------------------

SHIFT_NUMERICS = an.Numerics(h=0.125, stop_tol=1e-4, max_steps=6)


def matched(p_list, profile, kind, numerics):
    """Exhaust several configs to a common ladder depth."""
    res = [an.evaluate(p, profile, kind, numerics) for p in p_list]
    depth = max(len(r.ladder) for r in res)
    if any(len(r.ladder) != depth for r in res):
        numerics = numerics.with_(min_steps=depth)
        res = [an.evaluate(p, profile, kind, numerics) for p in p_list]
    return res


def shift_identity_cases(ds=(0.5, 1.0, 2.0), cs=(0.5, 1.0, 2.0), L=3.0):
    profile = _radial(L)
    num = SHIFT_NUMERICS.for_profile(profile)
    rows = []
    for d in ds:
        ps = [Parameters(D=d, d=d, mu=1.0, nu=1.0, c=c) for c in (0.0, *cs)]
        res = matched(ps, profile, COUPLED, num)
        for c, r in zip(cs, res[1:]):
            expected = c * c / (4 * d)
            rows.append({"d": d, "c": c, "delta": r.lambda_inf - res[0].lambda_inf,
                         "expected": expected, "X": r.ladder[-1][0]})
    return rows


def check_shift_identity(seed: int = 0) -> CheckResult:
    rows = shift_identity_cases()
    margins = [0.02 * r["expected"] - abs(r["delta"] - r["expected"]) for r in rows]
    return _result("shift-identity", 3, margins, {"cases": rows})


# 4-6 --------------------------------------------------------------------

SPEED_CONFIGS = [
    Parameters(D=0.5, d=1.0, mu=1.0, nu=1.0),
    Parameters(D=1.0, d=1.0, mu=1.0, nu=1.0),
    Parameters(D=4.0, d=1.0, mu=1.0, nu=1.0),
    Parameters(D=10.0, d=1.0, mu=1.0, nu=1.0),
    Parameters(D=1.0, d=2.0, mu=2.0, nu=0.5),
]
SPEED_L = 3.0


@functools.lru_cache(maxsize=None)
def _speeds(p: Parameters, L: float, kind: str = COUPLED) -> an.SpeedPair:
    profile = _radial(L)
    return an.critical_speeds(p, profile, SPEED_TOL, COARSE.for_profile(profile), kind=kind)


def check_speed_bound(seed: int = 0) -> CheckResult:
    rows, margins = [], []
    for p in SPEED_CONFIGS:
        sp_ = _speeds(p, SPEED_L)
        rows.append({"D": p.D, "d": p.d, "c_star": sp_.c_star, "c_star_upper": sp_.c_star_upper,
                     "bound": sp_.bound, "provisional": sp_.provisional})
        margins += [sp_.bound + 2 * SPEED_TOL - sp_.c_star_upper,
                    sp_.c_star_upper - sp_.c_star, sp_.c_star]
    return _result("speed-bound", 4, margins, {"cases": rows})


def check_kappa_bound(seed: int = 0) -> CheckResult:
    sup = float(positive_part(_radial(SPEED_L).sup_m))
    margins, rows = [], []
    for p in SPEED_CONFIGS[1:4]:
        scan = _speeds(p, SPEED_L).scan
        worst = min(lam - (c * c / (4 * max(p.d, p.D)) - sup) for c, lam, _ in scan)
        rows.append({"D": p.D, "d": p.d, "min_slack": worst})
        margins.append(worst + COARSE.stop_tol)
    return _result("kappa-bound", 5, margins, {"cases": rows})


def check_min_zero(seed: int = 0) -> CheckResult:
    margins, rows = [], []
    for p in SPEED_CONFIGS:
        scan = _speeds(p, SPEED_L).scan
        worst = min(lam - scan[0][1] for _, lam, _ in scan)
        rows.append({"D": p.D, "d": p.d, "min_rise": worst})
        margins.append(worst + COARSE.stop_tol)
    return _result("min-zero", 6, margins, {"cases": rows})


# 7 ----------------------------------------------------------------------

ROAD_CAP_CASES = [(0.2, 1.0, 1.0), (0.2, 1.0, -2.0), (1.0, 1.0, 0.0), (5.0, 1.0, -1.0),
                  (5.0, 0.5, 2.0)]


def check_road_cap(seed: int = 0) -> CheckResult:
    margins, rows = [], []
    for mu, nu, L in ROAD_CAP_CASES:
        p = Parameters(D=1.0, d=1.0, mu=mu, nu=nu)
        profile = _radial(L)
        res = an.evaluate(p, profile, COUPLED, COARSE.for_profile(profile))
        rows.append({"mu": mu, "nu": nu, "L": L, "lambda": res.lambda_inf,
                     "converged": res.converged})
        margins.append(mu + COARSE.stop_tol - res.lambda_inf)
    return _result("road-cap", 7, margins, {"cases": rows})


# 8 ----------------------------------------------------------------------

def check_monotonicity(seed: int = 0) -> CheckResult:
    slack = 1e-6
    profile = _radial(SPEED_L)
    tables = {
        "L": an.sweep("L", np.linspace(-2, 8, 11), BASE, profile, COARSE.for_profile(_radial(8))),
        "d": an.sweep("d", [0.25, 0.5, 1, 2, 4], BASE, profile, COARSE.for_profile(profile)),
        "D": an.sweep("D", [0.25, 0.5, 1, 2, 4], BASE, profile, COARSE.for_profile(profile)),
    }
    sign = {"L": -1.0, "d": 1.0, "D": 1.0}
    margins, details = [], {}
    for axis, table in tables.items():
        lam = table.column("lambda")
        steps = sign[axis] * np.diff(lam)
        margins.append(float(steps.min()) + slack)
        details[axis] = {"values": table.values, "lambda": lam.tolist()}
    return _result("monotonicity", 8, margins, details)


# 9 ----------------------------------------------------------------------

def road_lattice():
    Ls = (-1.0, 0.5, 1.0, 1.5, 2.5)
    Ds = (0.5, 5.0)
    exchange = ((0.5, 1.0), (1.0, 1.0), (2.0, 0.5), (1.0, 3.0), (0.2, 0.2), (4.0, 4.0))
    return [(L, D, mu, nu) for L in Ls for D in Ds for mu, nu in exchange]


def check_road_no_help(seed: int = 0) -> CheckResult:
    rows, bad = [], 0
    margins = []
    for L, D, mu, nu in road_lattice():
        p = Parameters(D=D, d=1.0, mu=mu, nu=nu)
        profile = _radial(L)
        res = an.evaluate(p, profile, COUPLED, COARSE.for_profile(profile))
        g = res.last.grid
        lam_n = principal_eigenpair(assemble(NEUMANN, g, p, profile)).lam
        violation = lam_n >= 0 and res.lambda_inf < 0
        bad += violation
        rows.append({"L": L, "D": D, "mu": mu, "nu": nu, "lambda": res.lambda_inf,
                     "lambda_neumann": lam_n, "X": g.X})
        if lam_n >= 0:
            margins.append(res.lambda_inf)
    details = {"rows": rows, "violations": int(bad), "count": len(rows)}
    return CheckResult("road-no-help", 9, bad == 0, float(min(margins, default=0.0)), details)


# 10 ---------------------------------------------------------------------

def no_road_crossing(d: float = 1.0, lo: float = -1.0, hi: float = 6.0, tol: float = 1e-3,
                     numerics: an.Numerics = COARSE) -> float:
    """Niche scale where the reflecting-boundary eigenvalue changes sign."""
    p = Parameters(D=d, d=d, mu=1.0, nu=1.0)

    def lam(L):
        return an.evaluate(p, _radial(L), NEUMANN, numerics.for_profile(_radial(hi))).lambda_inf

    if lam(lo) < 0 or lam(hi) >= 0:
        raise ConfigurationError("no-road crossing not bracketed")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if lam(mid) < 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


HARMFUL_OFFSETS = (0.1, 0.2, 0.4, 0.8)
HARMFUL_DS = (10.0, 30.0, 100.0)


def check_road_harmful(seed: int = 0) -> CheckResult:
    Lbar = no_road_crossing()
    tried = []
    found = None
    for off in HARMFUL_OFFSETS:
        L = Lbar + off
        profile = _radial(L)
        num = ROAD_HEAVY.for_profile(profile)
        lam_n = an.evaluate(BASE, profile, NEUMANN, num).lambda_inf
        for D in HARMFUL_DS:
            res = an.evaluate(BASE.with_(D=D), profile, COUPLED, num)
            tried.append({"L": L, "D": D, "lambda_neumann": lam_n, "lambda": res.lambda_inf,
                          "converged": res.converged})
            if lam_n < -0.01 and res.lambda_inf > 0.01 and res.converged:
                found = tried[-1]
                break
        if found:
            break
    margin = min(-0.01 - found["lambda_neumann"], found["lambda"] - 0.01) if found else -1.0
    return CheckResult("road-harmful", 10, found is not None, float(margin),
                       {"L_bar": Lbar, "found": found, "tried": tried})


# 11 ---------------------------------------------------------------------

def check_diffusion_threshold(seed: int = 0) -> CheckResult:
    p = BASE
    fav = _radial(5.0)
    res = an.diffusion_threshold(p, fav, d_max=100.0, tol=1e-2,
                                 numerics=ROAD_HEAVY.for_profile(fav))
    none = an.diffusion_threshold(p, _radial(-5.0), d_max=100.0, tol=1e-2,
                                  numerics=ROAD_HEAVY.for_profile(_radial(-5.0)))
    margins = [res.d_star, 1e-2 - res.width, res.lam_at_max, 0.0 if none.d_star == 0 else -1.0]
    return _result("diffusion-threshold", 11, margins,
                   {"favorable": res.as_dict(), "unfavorable": none.as_dict()})


# 12 ---------------------------------------------------------------------

ALL_D = (1.0, 10.0, 100.0)
ALL_D_LS = (2.0, 4.0, 6.0, 8.0, 12.0)


def check_persistence_all_D(seed: int = 0) -> CheckResult:
    tried = []
    for L in ALL_D_LS:
        profile = _radial(L)
        num = ROAD_HEAVY.for_profile(profile)
        lams = [an.evaluate(BASE.with_(D=D), profile, COUPLED, num).lambda_inf for D in ALL_D]
        tried.append({"L": L, "lambda": lams})
        if max(lams) < 0:
            return CheckResult("persistence-all-D", 12, True, float(-max(lams)),
                               {"L": L, "D": list(ALL_D), "tried": tried})
    return CheckResult("persistence-all-D", 12, False, -1.0, {"tried": tried})


# 13 ---------------------------------------------------------------------

H_NUMERICS_COARSE = an.HOMOGENEOUS_NUMERICS.with_(h=0.5)


@functools.lru_cache(maxsize=None)
def homogeneous_speed(D: float, d: float = 1.0) -> float:
    # D = 2d sits on the threshold and needs the finer spacing; the large-D
    # side only needs a coarse estimate
    num = an.HOMOGENEOUS_NUMERICS if D <= 2 * d else H_NUMERICS_COARSE
    return an.homogeneous_speed_cH(Parameters(D=D, d=d, mu=1.0, nu=1.0), SPEED_TOL, num)


def check_homogeneous_speed(seed: int = 0) -> CheckResult:
    kpp = an.c_kpp(1.0)
    equal_side = homogeneous_speed(2.0)
    strict_side = homogeneous_speed(10.0)
    margins = [0.03 - abs(equal_side - kpp) / kpp, strict_side - 1.05 * kpp]
    return _result("homogeneous-speed", 13, margins,
                   {"c_KPP": kpp, "c_H(D=2d)": equal_side, "c_H(D=10d)": strict_side})


# 14-15 ------------------------------------------------------------------

LADDER = (4.0, 8.0, 16.0, 32.0)
BENEFIT = Parameters(D=10.0, d=1.0, mu=1.0, nu=1.0)


@functools.lru_cache(maxsize=None)
def _ladder_speeds(L: float, kind: str = COUPLED) -> an.SpeedPair:
    profile = _radial(L)
    return an.critical_speeds(BENEFIT, profile, SPEED_TOL, ROAD_HEAVY.for_profile(profile),
                              kind=kind)


def check_road_benefit(seed: int = 0) -> CheckResult:
    tried = []
    for L in LADDER:
        cs = _ladder_speeds(L).c_star
        cn = _ladder_speeds(L, NEUMANN).c_star
        row = {"L": L, "c_star": cs, "c_N": cn}
        tried.append(row)
        if cn + 0.05 <= cs:
            c = 0.5 * (cn + cs)
            profile = _radial(L)
            num = ROAD_HEAVY.for_profile(profile)
            lam_n = an.lambda_of_c(BENEFIT, profile, NEUMANN, c, num)
            lam = an.lambda_of_c(BENEFIT, profile, COUPLED, c, num)
            row.update({"c": c, "lambda_neumann": lam_n, "lambda": lam})
            if lam_n >= 0.01 and lam <= -0.01:
                margin = min(lam_n - 0.01, -0.01 - lam, cs - cn - 0.05)
                return CheckResult("road-benefit", 14, True, float(margin), {"tried": tried})
    return CheckResult("road-benefit", 14, False, -1.0, {"tried": tried})


def check_large_niche(seed: int = 0) -> CheckResult:
    cH = homogeneous_speed(BENEFIT.D, BENEFIT.d)
    speeds = [_ladder_speeds(L).c_star for L in LADDER]
    margins = [b - a + SPEED_TOL for a, b in zip(speeds, speeds[1:])]
    margins.append(abs(speeds[1] - cH) - abs(speeds[3] - cH))
    rows = []
    big = _radial(LADDER[-1])
    for c in (0.0, 1.0):
        lam = an.lambda_of_c(BENEFIT, big, COUPLED, c, ROAD_HEAVY.for_profile(big))
        lam_h = an.homogeneous_lambda(BENEFIT, c, H_NUMERICS_COARSE)
        rows.append({"c": c, "lambda_L32": lam, "lambda_H": lam_h})
        margins.append(0.1 * abs(lam_h) - abs(lam - lam_h))
    return _result("large-niche-limit", 15, margins,
                   {"L": list(LADDER), "c_star": speeds, "c_H": cH, "eigenvalues": rows})


# 16 ---------------------------------------------------------------------

def dichotomy_configs():
    """(parameters, L) pairs; the first four persist, the last four go extinct."""
    return [
        (Parameters(1, 1, 1, 1, 0.0), 5.0),
        (Parameters(1, 1, 1, 1, 0.0), 3.0),
        (Parameters(10, 1, 1, 1, 0.5), 4.0),
        (Parameters(1, 1, 1, 1, 1.0), 5.0),
        (Parameters(1, 1, 1, 1, 0.0), -5.0),
        (Parameters(1, 1, 1, 1, 0.0), 1.0),
        (Parameters(1, 1, 1, 1, 2.1 * math.tanh(5.0)), 5.0),
        (Parameters(1, 1, 1, 1, 3.0), 3.0),
    ]


DYN_GRID = (12.0, 0.5)


def check_dichotomy(seed: int = 0) -> CheckResult:
    X, h = DYN_GRID
    grid = build_grid(X, X, h)
    rows, margins = [], []
    for p, L in dichotomy_configs():
        term = ReactionTerm(_radial(L))
        cl = evolve_classify(p, term, grid, horizon=500.0, steady_tol=1e-3)
        expected = PERSISTENCE if cl.lam < 0 else "extinction"
        row = {"D": p.D, "c": p.c, "L": L, "lambda": cl.lam, "verdict": cl.verdict,
               "gap": cl.gap, "t": cl.t_final}
        margins += [abs(cl.lam) - 0.02, 0.0 if cl.verdict == expected else -1.0]
        if cl.lam < 0:
            margins.append(1e-3 - cl.gap)
            uq = check_uniqueness(p, term, grid, horizon=200.0, tol=1e-3)
            row["uniqueness_gap"] = uq.final_gap
            margins.append(1e-3 - uq.final_gap)
        rows.append(row)
    return _result("dichotomy", 16, margins, {"cases": rows})


# 17 ---------------------------------------------------------------------

def random_ordered_pair(rng, grid):
    high = bump_state(grid, (rng.uniform(-4, 4), rng.uniform(0, 4)), rng.uniform(0.5, 3),
                      rng.uniform(0.5, 3))
    high.u[:] = rng.uniform(0, 2) * np.exp(-((grid.x - rng.uniform(-4, 4)) ** 2) / 4)
    frac_v = rng.uniform(0, 1, size=high.v.shape)
    frac_u = rng.uniform(0, 1, size=high.u.shape)
    low = State(0.0, frac_u * high.u, frac_v * high.v, grid)
    return low, high


def check_scheme_properties(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    grid = build_grid(8.0, 8.0, 1.0)  # 16 x 8 cells
    rows, margins = [], []
    for _ in range(10):
        p = Parameters(D=float(rng.uniform(0.5, 5)), d=float(rng.uniform(0.5, 2)),
                       mu=float(rng.uniform(0.2, 2)), nu=float(rng.uniform(0.2, 2)),
                       c=float(rng.uniform(0, 1)))
        term = ReactionTerm(_radial(rng.uniform(-2, 5)))
        low, high = random_ordered_pair(rng, grid)
        rep = check_comparison(p, term, grid, low, high, horizon=20.0)
        rows.append(rep.as_dict())
        margins += [rep.min_entry + 1e-13, 1e-10 - rep.max_violation]
    return _result("scheme-properties", 17, margins, {"cases": rows})


CHECKS = {
    "separable": check_separable,
    "oracle": check_oracle,
    "shift-identity": check_shift_identity,
    "speed-bound": check_speed_bound,
    "kappa-bound": check_kappa_bound,
    "min-zero": check_min_zero,
    "road-cap": check_road_cap,
    "monotonicity": check_monotonicity,
    "road-no-help": check_road_no_help,
    "road-harmful": check_road_harmful,
    "diffusion-threshold": check_diffusion_threshold,
    "persistence-all-D": check_persistence_all_D,
    "homogeneous-speed": check_homogeneous_speed,
    "road-benefit": check_road_benefit,
    "large-niche-limit": check_large_niche,
    "dichotomy": check_dichotomy,
    "scheme-properties": check_scheme_properties,
}


@dataclass
class VerifyReport:
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def as_dict(self) -> dict:
        return {"passed": self.passed, "checks": [r.as_dict() for r in self.results]}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, default=_jsonable)

    def summary(self) -> str:
        return "\n".join(r.summary() for r in self.results)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def verify_suite(names=None, seed: int = 0) -> VerifyReport:
    """Run the named checks (all by default) in registry order."""
    if names is None:
        names = list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigurationError(f"unknown check(s) {unknown}; available: {list(CHECKS)}")
    order = [n for n in CHECKS if n in names]
    return VerifyReport([CHECKS[n](seed) for n in order])
