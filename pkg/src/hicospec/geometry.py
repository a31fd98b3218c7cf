"""Inclusion shapes, random inclusion models and their finite-window realizations.

Coordinates are in unit-cell units (lattice pitch 1 means one inclusion site
per unit cube).  Arrays indexed by grid cells always use ``[ix, iy]`` order.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ConfigError, PreconditionError

SHAPE_KINDS = ("interval", "square", "disk", "raster")

# ---------------------------------------------------------------------------
# counter-based hashing: per-site random numbers that do not depend on the
# window or on the order in which sites are visited
# ---------------------------------------------------------------------------

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _M64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
    return x ^ (x >> np.uint64(31))


def site_hash(seed: int, stream: int, *keys: np.ndarray) -> np.ndarray:
    """64-bit hash of ``(seed, stream, keys...)``, vectorized over ``keys``."""
    with np.errstate(over="ignore"):
        base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        x = _splitmix64(np.asarray(base ^ (np.uint64(stream) * np.uint64(0xD1B54A32D192ED03))))
        out = None
        for k in keys:
            k = np.asarray(k).astype(np.int64).view(np.uint64)
            x = _splitmix64((x if out is None else out) ^ k)
            out = x
        return x if out is None else out


def site_uniform(seed: int, stream: int, *keys: np.ndarray) -> np.ndarray:
    """Uniform numbers in [0, 1) attached to lattice sites."""
    h = site_hash(seed, stream, *keys)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


# labels: lexicographic key of the anchor's integer cell, times 8, plus the rank
# of the anchor inside that cell (several parked items can share one cell)
_LABEL_OFFSET = 1 << 28


def cell_key(cells: np.ndarray) -> np.ndarray:
    cells = np.atleast_2d(np.asarray(cells, dtype=np.int64))
    key = np.zeros(cells.shape[0], dtype=np.int64)
    for axis in range(cells.shape[1]):
        c = cells[:, axis] + _LABEL_OFFSET
        if np.any((c < 0) | (c >= 2 * _LABEL_OFFSET)):
            raise ConfigError("inclusion anchor outside the labelled lattice range")
        key = key * (2 * _LABEL_OFFSET) + c
    return key


# ---------------------------------------------------------------------------
# shapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Shape:
    """Inclusion prototype centred at the origin.

    ``size`` is the interval length, square side or disk radius.  Raster shapes
    carry a boolean ``mask`` with spacing ``h_mask`` centred at the origin.
    """

    id: str
    kind: str
    size: float = 0.0
    mask: np.ndarray | None = field(default=None, compare=False, repr=False)
    h_mask: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in SHAPE_KINDS:
            raise ConfigError(f"unknown shape kind {self.kind!r}")
        if self.kind == "raster":
            if self.mask is None or self.h_mask <= 0:
                raise ConfigError(f"raster shape {self.id!r} needs a mask and h_mask > 0")
            m = np.array(self.mask, dtype=bool)
            if m.ndim not in (1, 2) or not m.any():
                raise ConfigError(f"raster shape {self.id!r} has an empty or malformed mask")
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)
        elif not self.size > 0:
            raise ConfigError(f"shape {self.id!r}: size must be positive")

    # -- basic geometry -----------------------------------------------------

    @property
    def dim(self) -> int:
        if self.kind == "interval":
            return 1
        if self.kind == "raster":
            return self.mask.ndim
        return 2

    def half_extent(self, scale: float = 1.0) -> np.ndarray:
        """Half side lengths of the axis-aligned bounding box."""
        if self.kind in ("interval", "square"):
            return np.full(self.dim, 0.5 * self.size * scale)
        if self.kind == "disk":
            return np.full(2, self.size * scale)
        idx = np.argwhere(self.mask)
        n = np.array(self.mask.shape)
        lo = idx.min(axis=0) * self.h_mask - 0.5 * n * self.h_mask
        hi = (idx.max(axis=0) + 1) * self.h_mask - 0.5 * n * self.h_mask
        return np.maximum(np.abs(lo), np.abs(hi)) * scale

    def extent(self, scale: float = 1.0) -> np.ndarray:
        """Bounding-box side lengths."""
        if self.kind != "raster":
            return 2.0 * self.half_extent(scale)
        idx = np.argwhere(self.mask)
        return (idx.max(axis=0) - idx.min(axis=0) + 1) * self.h_mask * scale

    def area(self, scale: float = 1.0) -> float:
        if self.kind == "interval":
            return self.size * scale
        if self.kind == "square":
            return (self.size * scale) ** 2
        if self.kind == "disk":
            return math.pi * (self.size * scale) ** 2
        return float(self.mask.sum()) * (self.h_mask * scale) ** self.dim

    def diameter(self, scale: float = 1.0) -> float:
        if self.kind == "interval":
            return self.size * scale
        if self.kind == "square":
            return math.sqrt(2.0) * self.size * scale
        if self.kind == "disk":
            return 2.0 * self.size * scale
        return float(np.linalg.norm(self.extent(scale)))

    def min_feature(self, scale: float = 1.0) -> float:
        """Smallest length that a grid has to resolve."""
        if self.kind == "disk":
            return 2.0 * self.size * scale
        return float(self.extent(scale).min())

    def contains(self, points: np.ndarray, scale: float = 1.0) -> np.ndarray:
        """Membership of points given relative to the shape centre (open set)."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            p = p[:, None] if self.dim == 1 else p[None, :]
        if self.kind in ("interval", "square"):
            return np.all(np.abs(p) < 0.5 * self.size * scale, axis=-1)
        if self.kind == "disk":
            return np.sum(p * p, axis=-1) < (self.size * scale) ** 2
        hm = self.h_mask * scale
        n = np.array(self.mask.shape)
        idx = np.floor(p / hm + 0.5 * n).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < n), axis=-1)
        out = np.zeros(p.shape[:-1], dtype=bool)
        if inside.any():
            sel = idx[inside]
            out[inside] = self.mask[tuple(sel.T)]
        return out

    # -- validity -------------------------------------------------------------

    def is_connected(self) -> bool:
        """Single component with connected complement (4-neighbour flood fill)."""
        if self.kind != "raster":
            return True
        _, n_in = ndimage.label(self.mask)
        padded = np.pad(~self.mask, 1, constant_values=True)
        _, n_out = ndimage.label(padded)
        return n_in == 1 and n_out == 1

    def checks(self, scale: float = 1.0) -> dict[str, bool]:
        """Validity flags: diameter below 1/2, fits the unit cell, connectedness.

        Fitting follows the canonical translation: after moving the lower
        corner of the bounding box to (1/4, ..., 1/4) relative to the cell
        origin (-1/2, ..., -1/2), the shape has to stay inside the unit cube.
        """
        ext = self.extent(scale)
        return {
            "diameter_below_half": self.diameter(scale) < 0.5,
            "fits_unit_cell": bool(np.all(ext < 0.75)),
            "connected": self.is_connected(),
        }

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "kind": self.kind}
        if self.kind == "raster":
            rows = np.atleast_2d(self.mask)
            d["h_mask"] = self.h_mask
            d["mask"] = ["".join("1" if v else "0" for v in row) for row in rows]
            d["mask_dim"] = self.mask.ndim
        else:
            d["size"] = self.size
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Shape":
        try:
            kind = d["kind"]
            if kind == "raster":
                mask = np.array([[c == "1" for c in row] for row in d["mask"]], dtype=bool)
                if d.get("mask_dim", 2) == 1:
                    mask = mask[0]
                return cls(id=str(d["id"]), kind=kind, mask=mask, h_mask=float(d["h_mask"]))
            return cls(id=str(d["id"]), kind=kind, size=float(d["size"]))
        except KeyError as exc:
            raise ConfigError(f"shape description missing field {exc}") from None


def interval(length: float, id: str | None = None) -> Shape:
    return Shape(id or f"interval-{length:g}", "interval", length)


def square(side: float, id: str | None = None) -> Shape:
    return Shape(id or f"square-{side:g}", "square", side)


def disk(radius: float, id: str | None = None) -> Shape:
    return Shape(id or f"disk-{radius:g}", "disk", radius)


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """Axis-aligned cube with given centre and edge length."""

    center: tuple[float, ...]
    edge: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) not in (1, 2):
            raise ConfigError("only dimensions 1 and 2 are supported")
        if not self.edge > 0:
            raise ConfigError("window edge must be positive")

    @classmethod
    def cube(cls, edge: float, dim: int = 2, center: Sequence[float] | None = None) -> "Window":
        return cls(tuple(center) if center is not None else (0.0,) * dim, edge)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - 0.5 * self.edge

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + 0.5 * self.edge

    @property
    def volume(self) -> float:
        return self.edge**self.dim

    def contains_window(self, other: "Window", tol: float = 1e-12) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def to_dict(self) -> dict[str, Any]:
        return {"center": list(self.center), "edge": self.edge}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Window":
        return cls(tuple(d["center"]), float(d["edge"]))


# ---------------------------------------------------------------------------
# random models
# ---------------------------------------------------------------------------


def _check_probabilities(weights: Sequence[float], what: str) -> None:
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ConfigError(f"{what} must be nonnegative and sum to 1, got {list(w)}")


@dataclass(frozen=True)
class BernoulliLattice:
    """Each site of the lattice ``pitch * Z^d`` is occupied with probability ``p``.

    An occupied site carries ``shapes[k]`` with probability ``weights[k]``.
    """

    shapes: tuple[Shape, ...]
    weights: tuple[float, ...] = (1.0,)
    p: float = 1.0
    pitch: float = 1.0
    gap: float = 0.05
    seed: int = 0

    kind = "bernoulli"

    def __post_init__(self) -> None:
        object.__setattr__(self, "shapes", tuple(self.shapes))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.shapes) != len(self.weights):
            raise ConfigError("one weight per shape is required")
        _check_probabilities(self.weights, "shape weights")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"occupation probability must lie in [0, 1], got {self.p}")
        if self.pitch < 1.0:
            raise ConfigError("lattice pitch must be >= 1")
        _check_lattice_fit(self.shapes, [1.0], self.pitch, self.gap)

    @property
    def dim(self) -> int:
        return self.shapes[0].dim

    def intensities(self) -> list[tuple[Shape, float, float]]:
        """(shape, scale, expected inclusions per unit volume) triples."""
        rho = self.p / self.pitch**self.dim
        return [(s, 1.0, rho * w) for s, w in zip(self.shapes, self.weights) if w > 0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "shapes": [s.to_dict() for s in self.shapes],
            "weights": list(self.weights),
            "p": self.p,
            "pitch": self.pitch,
            "gap": self.gap,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class ScaledLattice:
    """Every site carries the base shape scaled by a random factor.

    The scale law is quantized: ``scales[i]`` occurs with probability
    ``weights[i]``.
    """

    shape: Shape
    scales: tuple[float, ...]
    weights: tuple[float, ...]
    pitch: float = 1.0
    p: float = 1.0
    gap: float = 0.05
    seed: int = 0

    kind = "scaled"

    def __post_init__(self) -> None:
        object.__setattr__(self, "scales", tuple(float(r) for r in self.scales))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.scales) != len(self.weights):
            raise ConfigError("one weight per scale is required")
        _check_probabilities(self.weights, "scale weights")
        r = np.asarray(self.scales)
        if np.any(r <= 0) or np.any(r > 1):
            raise ConfigError("scales must satisfy 0 < r1 <= r2 <= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("occupation probability must lie in [0, 1]")
        if self.pitch < 1.0:
            raise ConfigError("lattice pitch must be >= 1")
        _check_lattice_fit([self.shape], self.scales, self.pitch, self.gap)

    @classmethod
    def from_density(cls, shape: Shape, r1: float, r2: float, density, n: int = 8, **kw) -> "ScaledLattice":
        """Quantize a scale density on [r1, r2] with ``n`` midpoint nodes."""
        if not 0 < r1 <= r2 <= 1:
            raise ConfigError("scales must satisfy 0 < r1 <= r2 <= 1")
        if r1 == r2:
            return cls(shape, (r1,), (1.0,), **kw)
        edges = np.linspace(r1, r2, n + 1)
        mids = 0.5 * (edges[1:] + edges[:-1])
        w = np.asarray([max(float(density(r)), 0.0) for r in mids])
        if w.sum() <= 0:
            raise ConfigError("scale density vanishes on [r1, r2]")
        return cls(shape, tuple(mids), tuple(w / w.sum()), **kw)

    @property
    def dim(self) -> int:
        return self.shape.dim

    def intensities(self) -> list[tuple[Shape, float, float]]:
        rho = self.p / self.pitch**self.dim
        return [(self.shape, r, rho * w) for r, w in zip(self.scales, self.weights) if w > 0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "shape": self.shape.to_dict(),
            "scales": list(self.scales),
            "weights": list(self.weights),
            "pitch": self.pitch,
            "p": self.p,
            "gap": self.gap,
            "seed": self.seed,
        }


# jamming densities of random sequential adsorption of aligned unit cubes,
# used as the parking intensity when no ensemble estimate is supplied
RENYI_CONSTANT = 0.7475979202534
ALIGNED_SQUARE_JAMMING = 0.562009


@dataclass(frozen=True)
class RandomParking:
    """Unit axis cubes parked sequentially until jamming; each carries ``shape``.

    ``density`` overrides the jamming density used as inclusion intensity.
    """

    shape: Shape
    dim: int = 2
    t_max: float = 1e6
    probe: float = 0.01
    gap: float = 0.05
    density: float | None = None
    seed: int = 0

    kind = "parking"

    def __post_init__(self) -> None:
        if self.dim not in (1, 2) or self.shape.dim != self.dim:
            raise ConfigError("parking dimension must match the shape dimension (1 or 2)")
        if not self.t_max > 0 or not 0 < self.probe < 1:
            raise ConfigError("parking needs t_max > 0 and 0 < probe pitch < 1")
        if self.gap < 0:
            raise ConfigError("gap must be nonnegative")
        if np.any(self.shape.extent() + self.gap > 1.0 + 1e-12):
            raise ConfigError("inclusion plus gap must fit inside the unit parking item")

    @property
    def jamming_density(self) -> float:
        if self.density is not None:
            return self.density
        return RENYI_CONSTANT if self.dim == 1 else ALIGNED_SQUARE_JAMMING

    def intensities(self) -> list[tuple[Shape, float, float]]:
        return [(self.shape, 1.0, self.jamming_density)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "shape": self.shape.to_dict(),
            "dim": self.dim,
            "t_max": self.t_max,
            "probe": self.probe,
            "gap": self.gap,
            "density": self.density,
            "seed": self.seed,
        }


RandomModel = Union[BernoulliLattice, ScaledLattice, RandomParking]


def _check_lattice_fit(shapes: Iterable[Shape], scales: Iterable[float], pitch: float, gap: float) -> None:
    if gap < 0:
        raise ConfigError("gap must be nonnegative")
    dims = {s.dim for s in shapes}
    if len(dims) != 1:
        raise ConfigError("all shapes of a model must share one dimension")
    for s in shapes:
        for r in scales:
            if np.any(s.extent(r) + gap > pitch + 1e-12):
                raise ConfigError(
                    f"shape {s.id!r} at scale {r:g} plus gap {gap:g} does not fit the pitch {pitch:g}"
                )


def model_from_dict(d: dict[str, Any]) -> RandomModel:
    kind = d.get("kind")
    try:
        if kind == "bernoulli":
            return BernoulliLattice(
                shapes=tuple(Shape.from_dict(s) for s in d["shapes"]),
                weights=tuple(d.get("weights", [1.0])),
                p=float(d.get("p", 1.0)),
                pitch=float(d.get("pitch", 1.0)),
                gap=float(d.get("gap", 0.05)),
                seed=int(d.get("seed", 0)),
            )
        if kind == "scaled":
            shape = Shape.from_dict(d["shape"])
            extra = dict(pitch=float(d.get("pitch", 1.0)), p=float(d.get("p", 1.0)),
                         gap=float(d.get("gap", 0.05)), seed=int(d.get("seed", 0)))
            if "scales" in d:
                return ScaledLattice(shape, tuple(d["scales"]), tuple(d["weights"]), **extra)
            r1, r2 = float(d["r1"]), float(d["r2"])
            return ScaledLattice.from_density(shape, r1, r2, lambda r: 1.0, n=int(d.get("n_scales", 8)), **extra)
        if kind == "parking":
            return RandomParking(
                shape=Shape.from_dict(d["shape"]),
                dim=int(d.get("dim", 2)),
                t_max=float(d.get("t_max", 1e6)),
                probe=float(d.get("probe", 0.01)),
                gap=float(d.get("gap", 0.05)),
                density=None if d.get("density") is None else float(d["density"]),
                seed=int(d.get("seed", 0)),
            )
    except KeyError as exc:
        raise ConfigError(f"model description missing field {exc}") from None
    raise ConfigError(f"unknown model kind {kind!r}")


def model_shapes(model: RandomModel) -> list[Shape]:
    if isinstance(model, BernoulliLattice):
        return list(model.shapes)
    return [model.shape]


# ---------------------------------------------------------------------------
# realizations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Inclusion:
    shape_id: str
    center: tuple[float, ...]
    scale: float
    label: int


@dataclass(frozen=True)
class Realization:
    """Inclusions of one sample, restricted to a window.

    Per-inclusion data is stored column-wise; ``inclusions`` gives row records.
    An inclusion belongs to the window when its centre does (half-open box).
    """

    window: Window
    shapes: dict[str, Shape]
    shape_ids: tuple[str, ...]
    centers: np.ndarray
    scales: np.ndarray
    labels: np.ndarray
    seed: int
    model: dict[str, Any] = field(default_factory=dict)
    flags: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.shape_ids)
        c = np.asarray(self.centers, dtype=float).reshape(n, self.window.dim)
        s = np.asarray(self.scales, dtype=float).reshape(n)
        lab = np.asarray(self.labels, dtype=np.int64).reshape(n)
        order = np.argsort(lab, kind="stable")
        c, s, lab = c[order], s[order], lab[order]
        ids = tuple(self.shape_ids[i] for i in order)
        if n and np.any(np.diff(lab) == 0):
            raise ConfigError("inclusion labels must be unique")
        for a in (c, s, lab):
            a.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "shape_ids", ids)

    def __len__(self) -> int:
        return len(self.shape_ids)

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def inclusions(self) -> list[Inclusion]:
        return [
            Inclusion(sid, tuple(c), float(r), int(k))
            for sid, c, r, k in zip(self.shape_ids, self.centers, self.scales, self.labels)
        ]

    def half_extents(self) -> np.ndarray:
        out = np.zeros((len(self), self.dim))
        for i, (sid, r) in enumerate(zip(self.shape_ids, self.scales)):
            out[i] = self.shapes[sid].half_extent(r)
        return out

    def bounding_boxes(self) -> tuple[np.ndarray, np.ndarray]:
        he = self.half_extents()
        return self.centers - he, self.centers + he

    def areas(self) -> np.ndarray:
        return np.array([self.shapes[sid].area(r) for sid, r in zip(self.shape_ids, self.scales)])

    def select(self, keep: np.ndarray, window: Window | None = None, **flags) -> "Realization":
        keep = np.asarray(keep, dtype=bool)
        return Realization(
            window=window or self.window,
            shapes=self.shapes,
            shape_ids=tuple(sid for sid, k in zip(self.shape_ids, keep) if k),
            centers=self.centers[keep],
            scales=self.scales[keep],
            labels=self.labels[keep],
            seed=self.seed,
            model=self.model,
            flags={**self.flags, **flags},
        )

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "dimension": self.dim,
            "window": self.window.to_dict(),
            "model": self.model,
            "seed": self.seed,
            "shapes": [s.to_dict() for s in self.shapes.values()],
            "inclusions": [
                {"id": sid, "center": [float(x) for x in c], "scale": float(r), "label": int(k)}
                for sid, c, r, k in zip(self.shape_ids, self.centers, self.scales, self.labels)
            ],
            "flags": _jsonable(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Realization":
        window = Window.from_dict(d["window"])
        if len(window.center) != int(d["dimension"]):
            raise ConfigError("window dimension does not match the declared dimension")
        shapes = {s["id"]: Shape.from_dict(s) for s in d.get("shapes", [])}
        if not shapes and d.get("model"):
            shapes = {s.id: s for s in model_shapes(model_from_dict(d["model"]))}
        inc = d["inclusions"]
        for item in inc:
            if item["id"] not in shapes:
                raise ConfigError(f"inclusion refers to unknown shape {item['id']!r}")
        return cls(
            window=window,
            shapes=shapes,
            shape_ids=tuple(item["id"] for item in inc),
            centers=np.array([item["center"] for item in inc], dtype=float).reshape(len(inc), window.dim),
            scales=np.array([item["scale"] for item in inc], dtype=float),
            labels=np.array([item["label"] for item in inc], dtype=np.int64),
            seed=int(d.get("seed", 0)),
            model=d.get("model", {}),
            flags=d.get("flags", {}),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Realization":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def generate(model: RandomModel, window: Window, seed: int) -> Realization:
    """Sample the model inside ``window``.

    Lattice models draw every site from a hash of ``(seed, site)``, so the
    sample seen through a window does not depend on the window.
    """
    if window.edge < 1.0:
        raise PreconditionError("window edge length must be >= 1")
    dim = model.shape.dim if not isinstance(model, BernoulliLattice) else model.dim
    if window.dim != dim:
        raise PreconditionError(f"window dimension {window.dim} does not match model dimension {dim}")
    if isinstance(model, RandomParking):
        from .parking import park

        result = park(model, window, seed)
        return _finish(model, window, seed, [model.shape] * len(result.centers), result.centers,
                       np.ones(len(result.centers)), _parking_labels(result.centers, model.shape),
                       jammed=result.jammed, parking_time=result.time, n_items_region=result.n_region)
    return _generate_lattice(model, window, seed)


def _generate_lattice(model: BernoulliLattice | ScaledLattice, window: Window, seed: int) -> Realization:
    t = model.pitch
    d = window.dim
    lo = np.floor(window.lo / t - 0.5).astype(int)
    hi = np.ceil(window.hi / t - 0.5).astype(int)
    axes = [np.arange(lo[a], hi[a] + 1) for a in range(d)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    centers = (nodes + 0.5) * t
    inside = np.all((centers >= window.lo) & (centers < window.hi), axis=1)
    nodes, centers = nodes[inside], centers[inside]
    keys = [nodes[:, a] for a in range(d)]
    occupied = site_uniform(seed, 0, *keys) < model.p
    u_kind = site_uniform(seed, 1, *keys)
    if isinstance(model, BernoulliLattice):
        cum = np.cumsum(model.weights)
        kidx = np.minimum(np.searchsorted(cum, u_kind, side="right"), len(cum) - 1)
        shapes = [model.shapes[k] for k in kidx]
        scales = np.ones(len(nodes))
    else:
        cum = np.cumsum(model.weights)
        kidx = np.minimum(np.searchsorted(cum, u_kind, side="right"), len(cum) - 1)
        shapes = [model.shape] * len(nodes)
        scales = np.asarray(model.scales)[kidx]
    labels = cell_key(nodes) * 8
    sel = np.flatnonzero(occupied)
    return _finish(model, window, seed, [shapes[i] for i in sel], centers[sel], scales[sel], labels[sel])


def _parking_labels(centers: np.ndarray, shape: Shape) -> np.ndarray:
    if len(centers) == 0:
        return np.zeros(0, dtype=np.int64)
    anchors = centers - shape.half_extent()
    cells = np.floor(anchors).astype(np.int64)
    keys = cell_key(cells)
    order = np.lexsort(tuple(anchors[:, a] for a in reversed(range(anchors.shape[1]))) + (keys,))
    labels = np.empty(len(centers), dtype=np.int64)
    rank = 0
    prev = None
    for i in order:
        rank = rank + 1 if keys[i] == prev else 0
        prev = keys[i]
        if rank > 7:
            raise ConfigError("more than eight parked items anchored in one unit cell")
        labels[i] = keys[i] * 8 + rank
    return labels


def _finish(model, window, seed, shapes, centers, scales, labels, **flags) -> Realization:
    shape_map = {s.id: s for s in model_shapes(model)}
    real = Realization(
        window=window,
        shapes=shape_map,
        shape_ids=tuple(s.id for s in shapes),
        centers=np.asarray(centers, dtype=float).reshape(len(shapes), window.dim),
        scales=np.asarray(scales, dtype=float),
        labels=np.asarray(labels, dtype=np.int64),
        seed=int(seed),
        model=model.to_dict(),
        flags=flags,
    )
    checks = validity_flags(real, model.gap)
    if isinstance(model, RandomParking) and not flags.get("jammed", True):
        warnings.warn(f"random parking not jammed at T_max={model.t_max:g} (seed {seed})", RuntimeWarning)
    return Realization(**{**real.__dict__, "flags": {**flags, **checks}})


def validity_flags(real: Realization, gap: float) -> dict[str, Any]:
    diam_ok = all(real.shapes[sid].diameter(r) < 0.5 for sid, r in zip(real.shape_ids, real.scales))
    g = min_gap(real)
    return {
        "min_gap": g,
        "separation_ok": bool(g >= gap - 1e-12),
        "diameter_below_half": bool(diam_ok),
        "shapes_connected": all(s.is_connected() for s in real.shapes.values()),
    }


def _box_distance(c1, h1, c2, h2) -> np.ndarray:
    sep = np.maximum(np.abs(c1 - c2) - h1 - h2, 0.0)
    return np.sqrt(np.sum(sep * sep, axis=-1))


def min_gap(real: Realization) -> float:
    """Smallest distance between two inclusion closures (inf for < 2 inclusions).

    Disks are handled exactly, squares and intervals exactly, raster shapes
    through their bounding boxes (a lower bound).
    """
    n = len(real)
    if n < 2:
        return math.inf
    he = real.half_extents()
    radius = 2.0 * float(np.max(np.linalg.norm(he, axis=1)))
    tree = cKDTree(real.centers)
    best = math.inf
    kinds = np.array([real.shapes[sid].kind for sid in real.shape_ids])
    sizes = np.array([real.shapes[sid].size for sid in real.shape_ids]) * real.scales
    for cutoff in (radius + 1.0, np.inf):
        pairs = tree.query_pairs(cutoff if np.isfinite(cutoff) else 1e300, output_type="ndarray")
        if len(pairs) == 0:
            continue
        i, j = pairs[:, 0], pairs[:, 1]
        dist = _box_distance(real.centers[i], he[i], real.centers[j], he[j])
        both_disk = (kinds[i] == "disk") & (kinds[j] == "disk")
        if both_disk.any():
            cd = np.linalg.norm(real.centers[i] - real.centers[j], axis=1)
            dist = np.where(both_disk, np.maximum(cd - sizes[i] - sizes[j], 0.0), dist)
        one_disk = (kinds[i] == "disk") ^ (kinds[j] == "disk")
        if one_disk.any():
            di = np.where(kinds[i] == "disk", i, j)
            bi = np.where(kinds[i] == "disk", j, i)
            sep = np.maximum(np.abs(real.centers[di] - real.centers[bi]) - he[bi], 0.0)
            dd = np.maximum(np.sqrt(np.sum(sep * sep, axis=1)) - sizes[di], 0.0)
            dist = np.where(one_disk, dd, dist)
        best = float(dist.min())
        if best <= radius:
            break
    return best


def volume_fraction(real: Realization) -> float:
    """Inclusion volume per window volume."""
    if len(real) == 0:
        return 0.0
    return float(real.areas().sum() / real.window.volume)


# ---------------------------------------------------------------------------
# marks and windowing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Marking:
    values: dict[int, int]
    seed: int

    def __getitem__(self, label: int) -> int:
        return self.values[int(label)]

    def __len__(self) -> int:
        return len(self.values)

    def array(self, labels: Iterable[int]) -> np.ndarray:
        return np.array([self.values[int(k)] for k in labels], dtype=int)


def mark_values(labels: np.ndarray, seed: int) -> np.ndarray:
    """+1/-1 marks determined by (label, seed) only."""
    labels = np.asarray(labels, dtype=np.int64)
    bits = site_hash(seed, 7, labels) >> np.uint64(63)
    return np.where(bits == 1, 1, -1).astype(int)


def mark(real: Realization, seed: int) -> Marking:
    vals = mark_values(real.labels, seed)
    return Marking({int(k): int(v) for k, v in zip(real.labels, vals)}, int(seed))


def subwindow(real: Realization, box: Window) -> Realization:
    """Inclusions whose closure lies inside ``box``; labels are kept."""
    if not real.window.contains_window(box):
        raise PreconditionError("sub-box must lie inside the realization window")
    if len(real) == 0:
        return real.select(np.zeros(0, dtype=bool), window=box)
    lo, hi = real.bounding_boxes()
    keep = np.all((lo >= box.lo - 1e-12) & (hi <= box.hi + 1e-12), axis=1)
    return real.select(keep, window=box)


def void_injection(real: Realization, box: Window) -> Realization:
    """Remove every inclusion whose closure meets ``box``."""
    if not real.window.contains_window(box):
        raise PreconditionError("void box must lie inside the realization window")
    if len(real) == 0:
        return real
    lo, hi = real.bounding_boxes()
    hit = np.all((lo <= box.hi) & (hi >= box.lo), axis=1)
    return real.select(~hit, voided=box.to_dict())


# ---------------------------------------------------------------------------
# rasterization on a consumer grid
# ---------------------------------------------------------------------------


def rasterize_realization(
    real: Realization,
    origin: Sequence[float],
    shape: Sequence[int],
    h: float,
    eps: float = 1.0,
    periodic: bool = False,
) -> np.ndarray:
    """Index of the inclusion covering each cell (``-1`` for the matrix).

    Cell ``[i, j]`` has centre ``origin + (i + 1/2, j + 1/2) h``; inclusion
    geometry is scaled by ``eps``.  A cell belongs to an inclusion when its
    centre lies in it.  With ``periodic`` the grid is a torus.
    """
    shape = tuple(int(n) for n in shape)
    origin = np.asarray(origin, dtype=float)
    d = len(shape)
    if d != real.dim:
        raise PreconditionError("grid dimension does not match the realization")
    owner = -np.ones(shape, dtype=np.int64)
    he = real.half_extents() * eps
    centers = real.centers * eps
    stencil_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    for k, (sid, r) in enumerate(zip(real.shape_ids, real.scales)):
        c = centers[k]
        i0 = np.floor((c - he[k] - origin) / h - 0.5).astype(int)
        i1 = np.ceil((c + he[k] - origin) / h - 0.5).astype(int)
        # sub-cell offset of the centre decides the stencil; reuse it for repeats
        frac = np.round(((c - origin) / h - i0) * 1e9).astype(np.int64)
        key = (sid, float(r), tuple(frac), tuple(i1 - i0))
        if key not in stencil_cache:
            axes = [origin[a] + (np.arange(i0[a], i1[a] + 1) + 0.5) * h - c[a] for a in range(d)]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
            inside = real.shapes[sid].contains(pts, r * eps).reshape(tuple(len(x) for x in axes))
            stencil_cache[key] = (np.argwhere(inside), inside)
        offs, _ = stencil_cache[key]
        idx = offs + i0
        if periodic:
            idx = idx % np.array(shape)
        else:
            ok = np.all((idx >= 0) & (idx < np.array(shape)), axis=1)
            idx = idx[ok]
        owner[tuple(idx.T)] = k
    return owner
