"""Critical speeds, diffusion thresholds, homogeneous speeds and parameter sweeps.

Every eigenvalue here is an exhausted estimate (see
:func:`roadfield.eigensolver.exhaust_lambda`); thresholds inherit the
exhaustion ``stop_tol`` as their uncertainty on top of the bisection width.
"""
from __future__ import annotations

import csv
import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .discretization import COUPLED, KINDS, NEUMANN, assemble, build_grid
from .dynamics import evolve_classify
from .eigensolver import SolverError, exhaust_lambda, principal_eigenpair, snap_to_grid
from .model import ConfigurationError, NicheProfile, Parameters, ReactionTerm, positive_part

log = logging.getLogger(__name__)

AXES = ("c", "L", "d", "D", "mu", "nu")


class ThresholdError(ConfigurationError):
    """A search interval does not bracket the sign change it is meant to find."""


@dataclass(frozen=True)
class Numerics:
    """Exhaustion schedule shared by every eigenvalue estimate of a study."""

    h: float = 0.25
    X0: float = 4.0
    growth: float = 1.5
    stop_tol: float = 1e-4
    max_steps: int = 6
    tol: float = 1e-9
    min_steps: int = 1

    def __post_init__(self):
        if not (self.h > 0 and self.X0 > 0 and self.growth > 1 and self.stop_tol > 0):
            raise ConfigurationError("numerics need h > 0, X0 > 0, growth > 1, stop_tol > 0")
        if self.max_steps < 1 or self.min_steps < 1:
            raise ConfigurationError("max_steps and min_steps must be >= 1")

    def for_profile(self, profile: NicheProfile, margin: float = 4.0) -> "Numerics":
        """Start the ladder outside a radial niche so no rung is spent inside it."""
        if profile.kind == "radial" and profile.L + margin > self.X0:
            return replace(self, X0=snap_to_grid(profile.L + margin, self.h))
        return self

    def with_(self, **changes) -> "Numerics":
        return replace(self, **changes)


# truncation bias of homogeneous problems decays only like X**-2, so the
# ladder stops early and the bias (which lowers c_H) is reported as uncertainty
HOMOGENEOUS_NUMERICS = Numerics(h=0.25, X0=4.0, growth=1.5, stop_tol=1.5e-2, max_steps=7)


@functools.lru_cache(maxsize=256)
def evaluate(p: Parameters, profile: NicheProfile, kind: str = COUPLED,
             numerics: Numerics = Numerics()):
    """Exhausted eigenvalue (memoized on all inputs)."""
    if kind not in KINDS:
        raise ConfigurationError(f"unknown operator kind {kind!r}")
    return exhaust_lambda(p, profile, kind=kind, X0=numerics.X0, growth=numerics.growth,
                          h=numerics.h, stop_tol=numerics.stop_tol,
                          max_steps=numerics.max_steps, tol=numerics.tol,
                          min_steps=numerics.min_steps)


def lambda_of_c(p: Parameters, profile: NicheProfile, kind: str = COUPLED, c: float | None = None,
                numerics: Numerics = Numerics()) -> float:
    """Exhausted principal eigenvalue with the frame speed replaced by ``c``."""
    if c is not None:
        if c < 0:
            raise ConfigurationError("c must be >= 0")
        p = p.with_(c=float(c))
    return evaluate(p, profile, kind, numerics).lambda_inf


def _point(args):
    p, profile, kind, numerics = args
    res = evaluate(p, profile, kind, numerics)
    return res.lambda_inf, res.converged


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def speed_bound(p: Parameters, profile: NicheProfile, kind: str = COUPLED) -> float:
    """2 sqrt(max{d, D} [sup m]^+); only d enters without the road."""
    diff = p.d if kind != COUPLED else max(p.d, p.D)
    return 2.0 * math.sqrt(diff * float(positive_part(profile.sup_m)))


def c_kpp(d: float, growth: float = 1.0) -> float:
    return 2.0 * math.sqrt(d * growth)


@dataclass
class SpeedPair:
    c_star: float
    c_star_upper: float
    bound: float
    bracket_width: float
    provisional: bool = False
    scan: list = field(default_factory=list)  # (c, lambda, converged)

    @property
    def gap(self) -> float:
        return self.c_star_upper - self.c_star

    def as_dict(self) -> dict:
        out = asdict(self)
        out["scan"] = [[float(c), float(lam), bool(conv)] for c, lam, conv in self.scan]
        out["gap"] = self.gap
        return out


def _bisect(fn, lo: float, hi: float, tol: float):
    """Shrink [lo, hi] with fn(lo) < 0 <= fn(hi) to width <= tol; returns (lo, hi, flags)."""
    flags = []
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lam, conv = fn(mid)
        flags.append(conv)
        if lam < 0:
            lo = mid
        else:
            hi = mid
    return lo, hi, flags


def _speed_search(fn, bound: float, tol: float, n_scan: int, jobs: int, point_args) -> SpeedPair:
    cs = np.linspace(0.0, bound, n_scan) if bound > 0 else np.zeros(1)
    vals = _map(_point, [point_args(float(c)) for c in cs], jobs)
    scan = [(float(c), lam, conv) for c, (lam, conv) in zip(cs, vals)]
    provisional = not all(conv for _, _, conv in scan)
    lams = np.array([lam for _, lam, _ in scan])
    if lams[0] >= 0:
        return SpeedPair(0.0, 0.0, bound, 0.0, provisional, scan)
    nonneg = np.flatnonzero(lams >= 0)
    if nonneg.size == 0:
        log.warning("eigenvalue still negative at the speed bound %.6g", bound)
        return SpeedPair(bound, bound, bound, 0.0, True, scan)
    first = int(nonneg[0])
    last_neg = int(np.flatnonzero(lams < 0)[-1])
    lo, hi, f1 = _bisect(fn, cs[first - 1], cs[first], tol)
    c_star, width = 0.5 * (lo + hi), hi - lo
    if last_neg == first - 1:
        c_up = c_star
    else:
        lo2, hi2, f2 = _bisect(fn, cs[last_neg], cs[last_neg + 1], tol)
        c_up, width = 0.5 * (lo2 + hi2), max(width, hi2 - lo2)
        f1 = f1 + f2
    provisional = provisional or not all(f1)
    return SpeedPair(float(c_star), float(c_up), bound, float(width), provisional, scan)


def critical_speeds(p: Parameters, profile: NicheProfile, tol: float = 1e-2,
                    numerics: Numerics | None = None, n_scan: int = 21, jobs: int = 1,
                    kind: str = COUPLED) -> SpeedPair:
    """Lower and upper critical frame speeds by a coarse scan followed by bisection.

    ``c_star`` bisects the first scan interval where the eigenvalue turns
    nonnegative, ``c_star_upper`` the last interval where it is still
    negative. A nonnegative eigenvalue at c = 0 gives (0, 0).
    """
    if tol <= 0:
        raise ConfigurationError("tol must be > 0")
    if profile.violates_bfz:
        raise ConfigurationError("critical speeds need a bounded niche (constant m0 >= 0 given)")
    numerics = numerics or Numerics().for_profile(profile)
    bound = speed_bound(p, profile, kind)

    def args(c):
        return (p.with_(c=c), profile, kind, numerics)

    return _speed_search(lambda c: _point(args(c)), bound, tol, n_scan, jobs, args)


def critical_speed_no_road(d: float, profile: NicheProfile, tol: float = 1e-2,
                           numerics: Numerics | None = None, n_scan: int = 21,
                           jobs: int = 1) -> float:
    """Critical speed of the field-only problem with a reflecting boundary."""
    p = Parameters(D=d, d=d, mu=1.0, nu=1.0)
    return critical_speeds(p, profile, tol, numerics, n_scan, jobs, kind=NEUMANN).c_star


@dataclass
class DiffusionThreshold:
    d_star: float
    lo: float
    hi: float
    lam_at_max: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def __float__(self):
        return self.d_star

    def as_dict(self) -> dict:
        return dict(d_star=self.d_star, lo=self.lo, hi=self.hi, width=self.width,
                    lam_at_max=self.lam_at_max)


def diffusion_threshold(p: Parameters, profile: NicheProfile, d_max: float = 100.0,
                        tol: float = 1e-2, d_min: float = 1e-3,
                        numerics: Numerics | None = None) -> DiffusionThreshold:
    """Field diffusivity at which the stationary-niche eigenvalue changes sign.

    ``p.d`` is ignored. The eigenvalue is nondecreasing in d at c = 0, so a
    plain bisection on [d_min, d_max] applies.
    """
    if p.c != 0:
        raise ConfigurationError("the diffusion threshold is defined for c = 0")
    if not 0 < d_min < d_max:
        raise ConfigurationError("need 0 < d_min < d_max")
    numerics = numerics or Numerics().for_profile(profile)

    def fn(d):
        return _point((p.with_(d=float(d)), profile, COUPLED, numerics))

    lam_max, _ = fn(d_max)
    if lam_max < 0:
        raise ThresholdError(f"eigenvalue {lam_max:.6g} < 0 at d_max = {d_max:g}; raise d_max")
    if fn(d_min)[0] >= 0:
        return DiffusionThreshold(0.0, 0.0, 0.0, lam_max)
    lo, hi, _ = _bisect(fn, d_min, d_max, tol)
    return DiffusionThreshold(0.5 * (lo + hi), lo, hi, lam_max)


def homogeneous_lambda(p: Parameters, c: float, numerics: Numerics = HOMOGENEOUS_NUMERICS,
                       kind: str = COUPLED) -> float:
    """Exhausted eigenvalue of the system with m identically 1."""
    return lambda_of_c(p, NicheProfile.constant(1.0, homogeneous=True), kind, c, numerics)


def homogeneous_speed_cH(p: Parameters, tol: float = 1e-2,
                         numerics: Numerics = HOMOGENEOUS_NUMERICS) -> float:
    """Root of the homogeneous eigenvalue in c by bisection on [0, 2 sqrt(max{d, D})]."""
    hi = 2.0 * math.sqrt(max(p.d, p.D))
    fn = functools.partial(_homogeneous_point, p, numerics)
    if fn(0.0)[0] >= 0:
        return 0.0
    if fn(hi)[0] < 0:
        raise ThresholdError(f"homogeneous eigenvalue negative at the bound c = {hi:.6g}")
    lo, hi, _ = _bisect(fn, 0.0, hi, tol)
    return 0.5 * (lo + hi)


def _homogeneous_point(p, numerics, c):
    return _point((p.with_(c=float(c)), NicheProfile.constant(1.0, homogeneous=True),
                   COUPLED, numerics))


@dataclass
class DerivedConstants:
    c_KPP: float
    c_H: float
    c_N: float | None = None
    d_star: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


# sweeps -----------------------------------------------------------------

def parse_range(text: str) -> np.ndarray:
    """``start:stop:count`` to an inclusive linspace."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigurationError(f"range {text!r} must look like start:stop:count")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ConfigurationError(f"range {text!r}: {exc}") from None
    if count < 1 or not (math.isfinite(start) and math.isfinite(stop)):
        raise ConfigurationError(f"range {text!r} needs finite ends and count >= 1")
    return np.linspace(start, stop, count)


def apply_axis(axis: str, value: float, p: Parameters, profile: NicheProfile):
    if axis not in AXES:
        raise ConfigurationError(f"sweep axis must be one of {AXES}, got {axis!r}")
    if axis == "L":
        return p, profile.with_L(value)
    return p.with_(**{axis: float(value)}), profile


@dataclass
class SweepTable:
    axis: str
    values: list
    rows: list = field(default_factory=list)
    with_verdicts: bool = False

    HEADER = ("axis", "value", "lambda", "lambda_neumann", "converged")

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] if r[name] is not None else np.nan for r in self.rows], dtype=float)

    def as_dict(self) -> dict:
        return {"axis": self.axis, "values": [float(v) for v in self.values], "rows": self.rows}

    def to_csv(self, path) -> None:
        header = list(self.HEADER) + (["verdict"] if self.with_verdicts else [])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in self.rows:
                line = [self.axis, _fmt(r["value"]), _fmt(r["lambda"]),
                        _fmt(r["lambda_neumann"]), str(bool(r["converged"])).lower()]
                if self.with_verdicts:
                    line.append(r.get("verdict") or "")
                w.writerow(line)


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{float(x):.17g}"


def _sweep_row(args):
    axis, value, p, profile, numerics, with_neumann, with_verdicts = args
    row = {"value": float(value), "lambda": None, "lambda_neumann": None, "converged": False,
           "X": None, "rungs": 0, "verdict": None, "error": None}
    try:
        pv, prof = apply_axis(axis, value, p, profile)
        res = evaluate(pv, prof, COUPLED, numerics)
        g = res.last.grid
        row.update({"lambda": res.lambda_inf, "converged": res.converged, "X": g.X,
                    "rungs": len(res.ladder)})
        if with_neumann:
            row["lambda_neumann"] = principal_eigenpair(
                assemble(NEUMANN, g, pv, prof), tol=numerics.tol).lam
        if with_verdicts:
            Xd = snap_to_grid(1.5 * g.X, g.h)
            verdict = evolve_classify(pv, ReactionTerm(prof), build_grid(Xd, Xd, g.h))
            row["verdict"] = verdict.verdict
    except (SolverError, ConfigurationError, RuntimeError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(axis: str, values, p: Parameters, profile: NicheProfile,
          numerics: Numerics | None = None, with_neumann: bool = False,
          with_verdicts: bool = False, jobs: int = 1, matched: bool = True) -> SweepTable:
    """Eigenvalues along one parameter axis, one row per value.

    With ``matched`` every row is pushed to the same number of ladder
    rungs, so all rows share one final truncation; monotonicity in the
    swept parameter then holds to solver tolerance rather than to the
    exhaustion tolerance. The Neumann value is computed on the row's final
    grid.
    """
    values = [float(v) for v in values]
    if any(not math.isfinite(v) for v in values):
        raise ConfigurationError("sweep values must be finite")
    if values != sorted(values):
        raise ConfigurationError("sweep values must be sorted")
    if values:
        apply_axis(axis, values[0], p, profile)
    if numerics is None:
        numerics = Numerics()
        if axis == "L" and profile.kind == "radial" and values:
            numerics = numerics.for_profile(NicheProfile.radial(max(values)))
        else:
            numerics = numerics.for_profile(profile)
    table = SweepTable(axis, values, with_verdicts=with_verdicts)

    def run(num):
        return _map(_sweep_row, [(axis, v, p, profile, num, with_neumann, with_verdicts)
                                 for v in values], jobs)

    rows = run(numerics)
    if matched and rows:
        depth = max(r["rungs"] for r in rows)
        if any(r["rungs"] != depth for r in rows if r["error"] is None):
            rows = run(numerics.with_(min_steps=depth))
    table.rows = rows
    return table


def verify_suite(names=None, seed: int = 0):
    """Run the built-in verification battery (see :mod:`roadfield.verification`)."""
    from .verification import verify_suite as run

    return run(names, seed)
