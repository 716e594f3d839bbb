"""Physical parameters, niche growth-rate profiles and the logistic reaction term."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class ConfigurationError(ValueError):
    """Invalid model or grid input."""


class OutOfDomainError(ValueError):
    """A tabulated profile was queried outside its table with clamping disabled."""


def positive_part(x):
    return np.maximum(x, 0.0)


def chi(r):
    """Decreasing transition from +1 (r -> -inf) to -1 (r -> +inf), zero at r = 0."""
    return -np.tanh(r)


@dataclass(frozen=True)
class Parameters:
    """Coefficients of the road-field system in the moving frame.

    ``D`` and ``d`` are the road and field diffusivities, ``mu`` the
    road-to-field and ``nu`` the field-to-road exchange rates, ``c`` the
    frame speed. Zero exchange rates are rejected unless
    ``allow_decoupled`` is set.
    """

    D: float
    d: float
    mu: float
    nu: float
    c: float = 0.0
    allow_decoupled: bool = False

    def __post_init__(self):
        for name in ("D", "d", "mu", "nu", "c"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ConfigurationError(f"parameter {name} must be finite, got {value}")
        if self.D <= 0 or self.d <= 0:
            raise ConfigurationError("diffusivities D and d must be > 0")
        if self.c < 0:
            raise ConfigurationError("frame speed c must be >= 0")
        if self.mu < 0 or self.nu < 0:
            raise ConfigurationError("exchange rates mu and nu must be >= 0")
        if not self.strict_exchange and not self.allow_decoupled:
            raise ConfigurationError(
                "mu and nu must be > 0 (set allow_decoupled for diagnostic runs)"
            )

    @property
    def strict_exchange(self) -> bool:
        return self.mu > 0 and self.nu > 0

    def with_(self, **changes) -> "Parameters":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class NicheProfile:
    """Linearized growth rate m(x, y) = f_v(x, y, 0).

    Use the constructors :meth:`radial`, :meth:`constant` and
    :meth:`tabulated` rather than instantiating directly.
    """

    kind: str
    L: float = 0.0
    m0: float = 0.0
    homogeneous: bool = False
    clamp: bool = True
    table_x: np.ndarray | None = field(default=None, repr=False)
    table_y: np.ndarray | None = field(default=None, repr=False)
    table_m: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def radial(cls, L: float) -> "NicheProfile":
        if not np.isfinite(L):
            raise ConfigurationError("niche scale L must be finite")
        return cls(kind="radial", L=float(L))

    @classmethod
    def constant(cls, m0: float, homogeneous: bool = False) -> "NicheProfile":
        if m0 >= 0 and not homogeneous:
            raise ConfigurationError(
                "a constant profile with m0 >= 0 has no unfavorable exterior; "
                "pass homogeneous=True to use it anyway"
            )
        return cls(kind="constant", m0=float(m0), homogeneous=homogeneous)

    @classmethod
    def tabulated(cls, x, y, m, clamp: bool = True) -> "NicheProfile":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        m = np.asarray(m, dtype=float)
        if x.ndim != 1 or y.ndim != 1 or m.shape != (x.size, y.size):
            raise ConfigurationError("table must be m[ix, iy] on axes x, y")
        if x.size < 2 or y.size < 2 or np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise ConfigurationError("table axes must be strictly increasing with >= 2 points")
        if not np.all(np.isfinite(m)):
            raise ConfigurationError("table values must be finite")
        if clamp:
            ring = np.concatenate([m[0, :], m[-1, :], m[:, -1]])
            if y[0] > 0:
                ring = np.concatenate([ring, m[:, 0]])
            if ring.max() >= 0:
                raise ConfigurationError(
                    "clamped table edges must be unfavorable (m < 0) to keep the niche bounded"
                )
        x.setflags(write=False)
        y.setflags(write=False)
        m.setflags(write=False)
        return cls(kind="tabulated", clamp=clamp, table_x=x, table_y=y, table_m=m)

    @classmethod
    def from_csv(cls, path, clamp: bool = True) -> "NicheProfile":
        """Load a table with header ``x,y,m`` covering a full rectangular lattice."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["x", "y", "m"]:
                raise ConfigurationError(f"{path}: expected header x,y,m")
            rows = [(float(r["x"]), float(r["y"]), float(r["m"])) for r in reader]
        data = np.array(rows)
        xs = np.unique(data[:, 0])
        ys = np.unique(data[:, 1])
        if xs.size * ys.size != data.shape[0]:
            raise ConfigurationError(f"{path}: samples do not form a full x-y lattice")
        m = np.full((xs.size, ys.size), np.nan)
        m[np.searchsorted(xs, data[:, 0]), np.searchsorted(ys, data[:, 1])] = data[:, 2]
        if np.isnan(m).any():
            raise ConfigurationError(f"{path}: duplicate samples in table")
        return cls.tabulated(xs, ys, m, clamp=clamp)

    # identity used for caching and equality
    def key(self) -> tuple:
        if self.kind == "tabulated":
            h = hashlib.sha256()
            for arr in (self.table_x, self.table_y, self.table_m):
                h.update(np.ascontiguousarray(arr).tobytes())
            return ("tabulated", self.clamp, h.hexdigest())
        return (self.kind, self.L, self.m0, self.homogeneous)

    def __eq__(self, other):
        return isinstance(other, NicheProfile) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    @property
    def violates_bfz(self) -> bool:
        return self.kind == "constant" and self.m0 >= 0

    def __call__(self, x, y):
        return niche_m(self, x, y)

    @property
    def sup_m(self) -> float:
        if self.kind == "radial":
            # maximum at the origin
            return float(chi(-self.L))
        if self.kind == "constant":
            return self.m0
        return float(self.table_m.max())

    def far_field_bound(self, radius: float) -> float:
        """Supremum of m over the half-plane outside the ball of the given radius."""
        if self.kind == "radial":
            return float(chi(radius - self.L))
        if self.kind == "constant":
            return self.m0
        X, Y = np.meshgrid(self.table_x, self.table_y, indexing="ij")
        outside = np.hypot(X, Y) >= radius
        vals = [self.table_m[outside].max()] if outside.any() else []
        if self.clamp:
            # clamping extends the edge values to infinity
            vals.extend([self.table_m[0, :].max(), self.table_m[-1, :].max(), self.table_m[:, -1].max()])
        else:
            vals.append(np.nan)
        return float(max(vals))

    def with_L(self, L: float) -> "NicheProfile":
        if self.kind != "radial":
            raise ConfigurationError("only radial profiles have a niche scale L")
        return NicheProfile.radial(L)

    def covers(self, X: float, Y: float) -> bool:
        if self.kind != "tabulated" or self.clamp:
            return True
        return (self.table_x[0] <= -X and self.table_x[-1] >= X
                and self.table_y[0] <= 0 and self.table_y[-1] >= Y)


def niche_m(profile: NicheProfile, x, y):
    """Evaluate the growth rate m at points of the closed upper half-plane."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise OutOfDomainError("niche profile queried below the road (y < 0)")
    if profile.kind == "radial":
        return chi(np.hypot(x, y) - profile.L)
    if profile.kind == "constant":
        return np.full(np.broadcast(x, y).shape, profile.m0)[()]
    tx, ty, tm = profile.table_x, profile.table_y, profile.table_m
    if not profile.clamp:
        if np.any((x < tx[0]) | (x > tx[-1]) | (y < ty[0]) | (y > ty[-1])):
            raise OutOfDomainError("point outside tabulated niche with clamping disabled")
    xc = np.clip(x, tx[0], tx[-1])
    yc = np.clip(y, ty[0], ty[-1])
    i = np.clip(np.searchsorted(tx, xc, side="right") - 1, 0, tx.size - 2)
    j = np.clip(np.searchsorted(ty, yc, side="right") - 1, 0, ty.size - 2)
    sx = (xc - tx[i]) / (tx[i + 1] - tx[i])
    sy = (yc - ty[j]) / (ty[j + 1] - ty[j])
    return ((1 - sx) * (1 - sy) * tm[i, j] + sx * (1 - sy) * tm[i + 1, j]
            + (1 - sx) * sy * tm[i, j + 1] + sx * sy * tm[i + 1, j + 1])


@dataclass(frozen=True)
class ReactionTerm:
    """Logistic reaction f(x, y, v) = m(x, y) v - v**2."""

    profile: NicheProfile

    @property
    def saturation(self) -> float:
        return max(self.profile.sup_m, 0.0) + 1.0

    def __call__(self, x, y, v):
        v = np.asarray(v, dtype=float)
        return niche_m(self.profile, x, y) * v - v * v

    def per_capita(self, x, y, v):
        return niche_m(self.profile, x, y) - np.asarray(v, dtype=float)


@dataclass
class HypothesisReport:
    radius: float
    sup_m: float
    outside_sup: float
    saturation: float
    bfz: bool
    sat: bool
    kpp: bool
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict:
        return {
            "radius": self.radius,
            "sup_m": self.sup_m,
            "outside_sup": self.outside_sup,
            "saturation": self.saturation,
            "bfz": self.bfz,
            "sat": self.sat,
            "kpp": self.kpp,
            "failures": list(self.failures),
        }


def validate_hypotheses(term: ReactionTerm, radius: float, n_samples: int = 41) -> HypothesisReport:
    """Check saturation, the KPP ratio condition and boundedness of the niche.

    Saturation and KPP are checked pointwise on a sample lattice of
    ``[-radius, radius] x [0, radius]`` crossed with densities in ``(0, 2S]``.
    """
    if radius <= 0:
        raise ConfigurationError("radius must be > 0")
    profile = term.profile
    S = term.saturation
    xs = np.linspace(-radius, radius, n_samples)
    ys = np.linspace(0.0, radius, (n_samples + 1) // 2)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    m = niche_m(profile, X, Y)
    sup_sampled = float(np.max(m))
    outside = profile.far_field_bound(radius)

    vs = np.linspace(S, 2 * S, 9)
    f_sat = term(X[..., None], Y[..., None], vs)
    sat_ok = bool(np.all(f_sat < 0))

    vgrid = np.linspace(1e-3, 2 * S, 50)
    ratio = term.per_capita(X[..., None], Y[..., None], vgrid)
    kpp_ok = bool(np.all(np.diff(ratio, axis=-1) < 0))

    failures = []
    bfz_ok = np.isfinite(outside) and outside < 0
    if not bfz_ok:
        failures.append(f"BFZ: sup of m outside radius {radius} is {outside} (needs < 0)")
    if not sat_ok:
        failures.append(f"sat: f(x, y, v) >= 0 for some v >= S = {S}")
    if not kpp_ok:
        failures.append("KPP: f(v)/v not strictly decreasing on samples")
    if sup_sampled > profile.sup_m + 1e-12:
        failures.append(f"cached sup_m {profile.sup_m} below sampled {sup_sampled}")
    return HypothesisReport(
        radius=float(radius),
        sup_m=profile.sup_m,
        outside_sup=outside,
        saturation=S,
        bfz=bool(bfz_ok),
        sat=sat_ok,
        kpp=kpp_ok,
        failures=failures,
    )
