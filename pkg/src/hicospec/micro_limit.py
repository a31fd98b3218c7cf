"""The beta function, its local-supremum analogue and the predicted spectral sets."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, PoleError, PreconditionError
from .geometry import (
    BernoulliLattice,
    RandomModel,
    RandomParking,
    Realization,
    ScaledLattice,
    Window,
    subwindow,
)
from .shape_spectra import (
    POLE_GUARD,
    ShapeSpectrum,
    SpectrumCache,
    SpectrumSettings,
    WeightedPoint,
    b_integral,
    micro_spectrum,
    model_spectra,
)

TOL_ROOT = 1e-4


# ---------------------------------------------------------------------------
# spectral sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralSet:
    """Finite union of closed intervals and isolated points, sorted and disjoint."""

    intervals: tuple[tuple[float, float], ...] = ()
    points: tuple[float, ...] = ()
    flags: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        ivs = sorted((float(a), float(b)) for a, b in self.intervals if b >= a)
        merged: list[list[float]] = []
        for a, b in ivs:
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        degenerate = [a for a, b in merged if a == b]
        merged = [(a, b) for a, b in merged if b > a]
        pts = sorted({float(p) for p in list(self.points) + degenerate})
        pts = [p for p in pts if not any(a <= p <= b for a, b in merged)]
        object.__setattr__(self, "intervals", tuple(tuple(m) for m in merged))
        object.__setattr__(self, "points", tuple(pts))

    @classmethod
    def interval(cls, a: float, b: float) -> "SpectralSet":
        return cls(((a, b),))

    def __or__(self, other: "SpectralSet") -> "SpectralSet":
        return SpectralSet(self.intervals + other.intervals, self.points + other.points,
                           {**self.flags, **other.flags})

    def is_empty(self) -> bool:
        return not self.intervals and not self.points

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.distance(x) <= tol

    def distance(self, x: float) -> float:
        d = math.inf
        for a, b in self.intervals:
            d = min(d, max(a - x, 0.0, x - b))
        for p in self.points:
            d = min(d, abs(x - p))
        return d

    def clip(self, lo: float, hi: float) -> "SpectralSet":
        ivs = [(max(a, lo), min(b, hi)) for a, b in self.intervals if b >= lo and a <= hi]
        pts = [p for p in self.points if lo <= p <= hi]
        return SpectralSet(tuple(ivs), tuple(pts), dict(self.flags))

    def gaps(self, lo: float, hi: float) -> list[tuple[float, float]]:
        """Open components of ``[lo, hi]`` minus the set."""
        pieces = sorted(list(self.clip(lo, hi).intervals) + [(p, p) for p in self.clip(lo, hi).points])
        out, cur = [], lo
        for a, b in pieces:
            if a > cur:
                out.append((cur, a))
            cur = max(cur, b)
        if cur < hi:
            out.append((cur, hi))
        return out

    def measure(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    def rows(self) -> list[tuple[str, float, float]]:
        out = [("interval", a, b) for a, b in self.intervals] + [("point", p, p) for p in self.points]
        return sorted(out, key=lambda r: (r[1], r[2]))

    def to_dict(self) -> dict:
        return {"intervals": [list(i) for i in self.intervals], "points": list(self.points)}


def hausdorff_distance(a: Iterable[float], b: SpectralSet, window: tuple[float, float]) -> float:
    """Hausdorff distance between a finite point set and a spectral set inside ``window``.

    The reverse direction is evaluated exactly: on an interval, the distance to
    a finite set is maximal at an endpoint or halfway between neighbouring points.
    """
    lo, hi = window
    pts = np.sort(np.array([x for x in a if lo <= x <= hi], dtype=float))
    bb = b.clip(lo, hi)
    if len(pts) == 0 or bb.is_empty():
        warnings.warn("Hausdorff distance with an empty set; returning the window diameter", RuntimeWarning)
        return float(hi - lo)
    fwd = max(bb.distance(x) for x in pts)

    def to_pts(x: float) -> float:
        return float(np.min(np.abs(pts - x)))

    rev = max((to_pts(p) for p in bb.points), default=0.0)
    for s, t in bb.intervals:
        cand = [s, t]
        inner = pts[(pts > s) & (pts < t)]
        if len(inner) == 0:
            # only nearest points outside matter; check the interval ends
            pass
        else:
            # halfway between consecutive points, plus ends
            mids = 0.5 * (inner[1:] + inner[:-1])
            cand.extend(mids.tolist())
        rev = max(rev, max(to_pts(x) for x in cand))
    return float(max(fwd, rev))


# ---------------------------------------------------------------------------
# beta function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bracket:
    lam: float
    lo: float
    hi: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


class BetaFunction:
    """``β(λ) = λ + λ² Σ ρ_k ∫ b_k(λ)`` over (spectrum, intensity) terms.

    Parameters
    ----------
    terms : list of (ShapeSpectrum, float)
        Spectra of every inclusion type (already scaled) and the expected
        number of such inclusions per unit volume.
    guard : float, optional
        Pole guard; defaults to ``1e-3`` times the smallest first eigenvalue.
    """

    def __init__(self, terms: Sequence[tuple[ShapeSpectrum, float]], guard: float | None = None, label: str = ""):
        self.terms = [(s, float(rho)) for s, rho in terms if rho > 0]
        lam1 = min((s.lambda_1 for s, _ in self.terms), default=math.inf)
        self.guard = float(guard) if guard is not None else (POLE_GUARD * lam1 if self.terms else 0.0)
        self.label = label

    @classmethod
    def from_model(cls, model: RandomModel, settings: SpectrumSettings | None = None,
                   cache: SpectrumCache | None = None, **kw) -> "BetaFunction":
        return cls(model_spectra(model, settings or SpectrumSettings(), cache), **kw)

    @property
    def theta(self) -> float:
        """Expected inclusion volume fraction."""
        return float(sum(rho * s.area for s, rho in self.terms))

    @property
    def lambda_cut(self) -> float:
        return min((s.lambda_cut for s, _ in self.terms), default=math.inf)

    def poles(self, lambda_max: float) -> np.ndarray:
        vals = [s.eigenvalues[s.eigenvalues <= lambda_max] for s, _ in self.terms]
        return np.unique(np.concatenate(vals)) if vals else np.zeros(0)

    def resolvent(self, lam: float) -> Bracket:
        """Bracket for ``⟨b⟩ = Σ ρ_k ∫ b_k``."""
        lo = hi = 0.0
        for spec, rho in self.terms:
            r = b_integral(spec, lam, self.guard)
            lo += rho * r.lo
            hi += rho * r.hi
        return Bracket(lam, lo, hi)

    def __call__(self, lam: float) -> Bracket:
        lam = float(lam)
        if lam == 0.0:
            return Bracket(0.0, 0.0, 0.0)
        r = self.resolvent(lam)
        l2 = lam * lam
        return Bracket(lam, lam + l2 * r.lo, lam + l2 * r.hi)

    def mid(self, lam: float) -> float:
        return self(lam).mid

    def curve(self, lams: Iterable[float]) -> list[Bracket]:
        """Brackets on a grid; points inside a pole guard are skipped."""
        out = []
        for x in lams:
            try:
                out.append(self(x))
            except PoleError:
                continue
        return out


def beta_eval(model: RandomModel, lam: float, settings: SpectrumSettings | None = None,
              cache: SpectrumCache | None = None) -> Bracket:
    return BetaFunction.from_model(model, settings, cache)(lam)


def periodic_beta(spectra: Sequence[ShapeSpectrum], t: float = 1.0, dim: int = 2, guard: float | None = None) -> BetaFunction:
    """β of the t-periodic arrangement of one cell containing all ``spectra``."""
    return BetaFunction([(s, 1.0 / t**dim) for s in spectra], guard=guard, label=f"{t:g}-per")


def beta_derivative_check(beta: BetaFunction, lams: Sequence[float]) -> float:
    """Smallest difference quotient of bracket midpoints along ``lams``.

    Raises :class:`PreconditionError` when the grid crosses a pole.
    """
    lams = np.sort(np.asarray(lams, dtype=float))
    poles = beta.poles(lams[-1] + beta.guard)
    if np.any((poles > lams[0] - beta.guard) & (poles < lams[-1] + beta.guard)):
        raise PreconditionError("the lambda grid crosses a pole of beta")
    vals = np.array([beta.mid(x) for x in lams])
    return float(np.min(np.diff(vals) / np.diff(lams)))


# ---------------------------------------------------------------------------
# realizations and local averages
# ---------------------------------------------------------------------------


class InclusionIntegrals:
    """Per-inclusion ``∫ b`` for a realization, evaluated once per λ."""

    def __init__(self, real: Realization, spectra: dict[str, ShapeSpectrum], guard: float | None = None):
        self.real = real
        self.spectra = spectra
        lam1 = min(s.lambda_1 for s in spectra.values()) if spectra else math.inf
        self.guard = guard if guard is not None else POLE_GUARD * lam1

    def values(self, lam: float, real: Realization | None = None) -> np.ndarray:
        real = real or self.real
        cache: dict[tuple[str, float], float] = {}
        out = np.zeros(len(real))
        for i, (sid, r) in enumerate(zip(real.shape_ids, real.scales)):
            key = (sid, float(r))
            if key not in cache:
                cache[key] = b_integral(self.spectra[sid].scaled(r), lam, self.guard).mid
            out[i] = cache[key]
        return out


def _spectra_by_id(real: Realization, settings: SpectrumSettings, cache: SpectrumCache | None) -> dict[str, ShapeSpectrum]:
    from .shape_spectra import _DEFAULT_CACHE

    cache = cache or _DEFAULT_CACHE
    return {sid: cache.get(shape, settings) for sid, shape in real.shapes.items()}


def beta_from_realization(real: Realization, lam: float, settings: SpectrumSettings | None = None,
                          cache: SpectrumCache | None = None) -> float:
    """Window estimate ``λ + λ² |W|^{-1} Σ ∫ b`` over inclusions whose closure lies in the window."""
    if len(real) == 0 or lam == 0.0:
        return float(lam)
    inside = subwindow(real, real.window)
    ints = InclusionIntegrals(real, _spectra_by_id(real, settings or SpectrumSettings(), cache))
    total = float(np.sum(ints.values(lam, inside)))
    return float(lam + lam * lam * total / real.window.volume)


def local_average(real: Realization, x: Sequence[float], M: float, lam: float,
                  settings: SpectrumSettings | None = None, cache: SpectrumCache | None = None) -> float:
    """``λ + λ² M^{-d} Σ ∫ b`` over inclusions with closure inside the cube of edge M at x."""
    box = Window(tuple(x), M)
    sub = subwindow(real, box)
    if len(sub) == 0 or lam == 0.0:
        return float(lam)
    ints = InclusionIntegrals(real, _spectra_by_id(real, settings or SpectrumSettings(), cache))
    return float(lam + lam * lam * float(np.sum(ints.values(lam, sub))) / box.volume)


def default_shift_pitch(model: dict | RandomModel | None) -> float:
    if isinstance(model, (BernoulliLattice, ScaledLattice)):
        return model.pitch / 4
    if isinstance(model, dict) and model.get("kind") in ("bernoulli", "scaled"):
        return float(model.get("pitch", 1.0)) / 4
    return 0.25


def beta_inf_estimate(
    real: Realization,
    lam: float,
    M_list: Sequence[float],
    settings: SpectrumSettings | None = None,
    cache: SpectrumCache | None = None,
    pitch: float | None = None,
) -> dict[float, float]:
    """Supremum of the local averages over a translation grid, per cube size.

    An inclusion with bounding box ``[l, u]`` lies in the cube of edge M at x
    exactly when ``u - M/2 <= x <= l + M/2``; summing these rectangles with a
    difference array evaluates every grid translation at once.
    """
    pitch = pitch or default_shift_pitch(real.model)
    d = real.dim
    out: dict[float, float] = {}
    vals = None
    if len(real) and lam != 0.0:
        ints = InclusionIntegrals(real, _spectra_by_id(real, settings or SpectrumSettings(), cache))
        vals = ints.values(lam)
        lo_b, hi_b = real.bounding_boxes()
    for M in M_list:
        if M > real.window.edge + 1e-12:
            raise PreconditionError(f"cube edge {M:g} exceeds the window edge {real.window.edge:g}")
        if vals is None:
            out[float(M)] = float(lam)
            continue
        xlo = real.window.lo + 0.5 * M
        xhi = real.window.hi - 0.5 * M
        n = np.floor((xhi - xlo) / pitch + 1e-9).astype(int) + 1
        acc = np.zeros(tuple(int(k) + 1 for k in n))
        # index range of admissible translations per inclusion
        i0 = np.ceil((hi_b - 0.5 * M - xlo) / pitch - 1e-9).astype(int)
        i1 = np.floor((lo_b + 0.5 * M - xlo) / pitch + 1e-9).astype(int)
        i0 = np.maximum(i0, 0)
        i1 = np.minimum(i1, n - 1)
        ok = np.all(i1 >= i0, axis=1)
        for corner in np.ndindex(*(2,) * d):
            idx = tuple(np.where(np.array(corner)[None, :] == 0, i0, i1 + 1)[ok].T)
            sign = (-1) ** sum(corner)
            np.add.at(acc, idx, sign * vals[ok])
        for a in range(d):
            acc = np.cumsum(acc, axis=a)
        sums = acc[tuple(slice(0, int(k)) for k in n)]
        out[float(M)] = float(lam + lam * lam * sums.max() / M**d)
    return out


# ---------------------------------------------------------------------------
# predicted sets
# ---------------------------------------------------------------------------


def _micro_points(beta: BetaFunction, lambda_max: float) -> list[WeightedPoint]:
    return micro_spectrum(None, lambda_max, terms=beta.terms) if beta.terms else []


def band_set(beta: BetaFunction, lambda_max: float, tol_root: float = TOL_ROOT,
             points: list[WeightedPoint] | None = None) -> SpectralSet:
    """Closure of ``{β ≥ 0}`` on ``[0, lambda_max]`` together with the poles of β.

    On each component between consecutive inclusion eigenvalues β is strictly
    increasing, so the sign change (if any) is found by bisection on bracket
    midpoints.  Endpoints next to a pole are evaluated at the pole guard.
    """
    if lambda_max >= beta.lambda_cut - beta.guard:
        raise PreconditionError(
            f"lambda_max={lambda_max:g} is not below the spectral cutoff {beta.lambda_cut:g}; compute more modes"
        )
    pts = points if points is not None else _micro_points(beta, lambda_max)
    mus = [p.value for p in pts]
    g = beta.guard * (1 + 1e-6)  # just outside the guard
    edges = [0.0] + mus + [lambda_max]
    intervals: list[tuple[float, float]] = []
    roots: list[dict] = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 2 * g:
            continue
        left = a if a == 0.0 else a + g
        right = b if b == lambda_max and b not in mus else b - g
        if beta.mid(left) >= 0:
            intervals.append((a, b))
            continue
        if beta.mid(right) < 0:
            continue
        x0, x1 = left, right
        tol = tol_root * (b - a)
        while x1 - x0 > tol:
            xm = 0.5 * (x0 + x1)
            if beta.mid(xm) >= 0:
                x1 = xm
            else:
                x0 = xm
        root = 0.5 * (x0 + x1)
        step = max(1e-2 * (b - a), tol)
        lo_side = beta(max(root - step, left))
        hi_side = beta(min(root + step, right))
        if not (lo_side.lo < 0 <= hi_side.hi) or lo_side.hi > 0 or hi_side.lo < 0:
            raise PreconditionError(
                f"beta bracket too wide to locate the band edge near {root:.6g}; compute more modes"
            )
        roots.append({"root": root, "uncertainty": tol})
        intervals.append((root, b))
    return SpectralSet(tuple(intervals), tuple(mus), {"roots": roots, "guard": g})


def predicted_spectrum(model: RandomModel | None, lambda_max: float, settings: SpectrumSettings | None = None,
                       cache: SpectrumCache | None = None, beta: BetaFunction | None = None) -> SpectralSet:
    """Whole-space spectrum of the limit operator: poles of β together with ``{β ≥ 0}``."""
    if beta is None:
        if model is None:
            raise ConfigError("either a model or a beta function is required")
        beta = BetaFunction.from_model(model, settings, cache)
    if not beta.terms:
        return SpectralSet.interval(0.0, lambda_max)
    return band_set(beta, lambda_max)


def bounded_domain_spectrum(beta: BetaFunction, ahom: np.ndarray, box: float, lambda_window: tuple[float, float],
                            n_max: int = 400) -> np.ndarray:
    """Eigenvalues λ of the limit problem on a Dirichlet square of edge ``box`` inside a window.

    Each eigenvalue of ``-div(A_hom grad)`` on the box, ``μ = π²(a11 m² + a22 n²)/box²``,
    gives one λ per component where β crosses μ.
    """
    a11, a22 = float(ahom[0, 0]), float(ahom[1, 1])
    t1, t2 = lambda_window
    mus = beta.poles(t2 + beta.guard)
    g = beta.guard * (1 + 1e-6)
    edges = sorted({0.0, *[m for m in mus if m < t2], t2})
    m_idx = np.arange(1, n_max + 1)
    mm, nn = np.meshgrid(m_idx, m_idx, indexing="ij")
    levels = np.sort((math.pi**2 * (a11 * mm**2 + a22 * nn**2) / box**2).ravel())
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= t1 or b - a <= 2 * g:
            continue
        left = max(a + g if a > 0 else a, t1)
        right = b - g if b in mus else b
        if left >= right:
            continue
        lo_val, hi_val = beta.mid(left), beta.mid(right)
        for mu in levels[(levels >= lo_val) & (levels <= hi_val)]:
            x0, x1 = left, right
            while x1 - x0 > 1e-10 * max(1.0, right):
                xm = 0.5 * (x0 + x1)
                if beta.mid(xm) >= mu:
                    x1 = xm
                else:
                    x0 = xm
            out.append(0.5 * (x0 + x1))
    return np.sort(np.array(out))


def limit_set_G(
    model: RandomModel,
    lambda_max: float,
    settings: SpectrumSettings | None = None,
    cache: SpectrumCache | None = None,
    ensemble: Sequence[Realization] | None = None,
    lam_grid: Sequence[float] | None = None,
    M_list: Sequence[float] | None = None,
) -> SpectralSet:
    """Upper bound set ``Sp(-Δ_O) ∪ {β_∞ ≥ 0}``.

    Closed forms: a lattice with vacant sites (or several scales on a lattice
    with vacancies) gives all of ``[0, lambda_max]``; fully occupied lattices
    give the union of the band sets of the periodic arrangements of each
    shape/scale; parking gives the union for the 1- and 2-periodic
    arrangements of the item.  Other inputs need an ensemble.
    """
    settings = settings or SpectrumSettings()
    if isinstance(model, (BernoulliLattice, ScaledLattice)):
        if model.p < 1.0:
            return SpectralSet.interval(0.0, lambda_max) | SpectralSet(
                (), tuple(p.value for p in micro_spectrum(model, lambda_max, settings, cache)) if model.p > 0 else (),
                {"source": "closed-form"},
            )
        t = model.pitch
        betas = [
            periodic_beta([s], t, s.dim)
            for s, _ in model_spectra(model, settings, cache)
        ]
        return _union_of_bands(betas, lambda_max, "closed-form")
    if isinstance(model, RandomParking):
        spec = model_spectra(model, settings, cache)[0][0]
        betas = [periodic_beta([spec], 1.0, model.dim), periodic_beta([spec], 2.0, model.dim)]
        out = _union_of_bands(betas, lambda_max, "closed-form")
        out.flags["parking_bespoke"] = True
        return out
    if ensemble is None:
        raise ConfigError("no closed form for this model; supply an ensemble of realizations")
    return _estimate_G(model, ensemble, lambda_max, settings, cache, lam_grid, M_list)


def _union_of_bands(betas: list[BetaFunction], lambda_max: float, source: str) -> SpectralSet:
    g = min(b.guard for b in betas)
    out = SpectralSet()
    for b in betas:
        b.guard = g
        out = out | band_set(b, lambda_max)
    out.flags.update({"source": source})
    return out


def _estimate_G(model, ensemble, lambda_max, settings, cache, lam_grid, M_list) -> SpectralSet:
    lam_grid = np.asarray(lam_grid if lam_grid is not None else np.linspace(0, lambda_max, 201), dtype=float)
    positive = np.zeros(len(lam_grid), dtype=bool)
    points = set()
    for real in ensemble:
        Ms = M_list or [real.window.edge / 4, real.window.edge / 2]
        ids = _spectra_by_id(real, settings, cache)
        for s in ids.values():
            points.update(float(v) for v in s.eigenvalues if v <= lambda_max)
        for i, lam in enumerate(lam_grid):
            if positive[i]:
                continue
            try:
                est = beta_inf_estimate(real, lam, Ms, settings, cache)
            except PoleError:
                positive[i] = True
                continue
            positive[i] = max(est.values()) >= 0
    ivs, start = [], None
    for i, ok in enumerate(positive):
        if ok and start is None:
            start = lam_grid[i]
        if (not ok or i == len(positive) - 1) and start is not None:
            ivs.append((start, lam_grid[i] if ok else lam_grid[i - 1]))
            start = None
    return SpectralSet(tuple(ivs), tuple(sorted(points)), {"source": "estimate", "lower_set": True})


# ---------------------------------------------------------------------------
# spectral measure and point spectrum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralMeasure:
    edges: np.ndarray
    mass: np.ndarray

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def spectral_measure(points: Sequence[WeightedPoint], edges: Sequence[float]) -> SpectralMeasure:
    """Bin the weighted micro-spectrum points (mass of ``1_O`` under the spectral resolution)."""
    edges = np.asarray(edges, dtype=float)
    vals = np.array([p.value for p in points])
    w = np.array([p.weight for p in points])
    mass, _ = np.histogram(vals, bins=edges, weights=w)
    return SpectralMeasure(edges, mass)


def stieltjes_term(measure: SpectralMeasure, lam: float) -> tuple[float, float]:
    """``λ² ∫ dμ(t)/(t - λ)`` with bin-centre quadrature and a bound on the binning error."""
    c = measure.centers
    hw = 0.5 * np.diff(measure.edges)
    nz = measure.mass > 0
    d = np.abs(c[nz] - lam)
    if np.any(d <= hw[nz]):
        raise PreconditionError("lambda lies inside an occupied bin")
    val = lam * lam * float(np.sum(measure.mass[nz] / (c[nz] - lam)))
    err = lam * lam * float(np.sum(measure.mass[nz] * hw[nz] / (d * (d - hw[nz]))))
    return val, err


def point_spectrum_classify(spec: ShapeSpectrum, tol_mean: float = 1e-8) -> np.ndarray:
    """True where the eigenspace holds a zero-mean eigenfunction."""
    return (spec.multiplicities >= 2) | (spec.masses <= tol_mean**2)
