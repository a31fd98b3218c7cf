"""Config-driven experiment pipeline writing CSV/JSON artifacts and a manifest."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .direct_solver import assemble, plane_wave_quasimode, relevance_classify, spectrum_window
from .errors import HicospecError, PreconditionError
from .geometry import Realization, Window, generate, model_shapes, volume_fraction
from .homogenization import CellProblem, HomogenizedTensor, homogenized_matrix
from .micro_limit import (
    BetaFunction,
    SpectralSet,
    hausdorff_distance,
    limit_set_G,
    predicted_spectrum,
)
from .shape_spectra import SpectrumCache, model_spectra

log = logging.getLogger(__name__)


class StageError(HicospecError):
    """Wraps a module error with the name of the failing stage."""

    def __init__(self, stage: str, error: HicospecError):
        self.stage = stage
        self.error = error
        self.exit_code = error.exit_code
        super().__init__(f"stage {stage!r} failed: {type(error).__name__}: {error}")


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.10g" % float(x)
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Plain CSV with ``%.10g`` floats and ``\\n`` line endings."""
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    text = Path(path).read_text().splitlines()
    if not text:
        return []
    head = text[0].split(",")
    return [dict(zip(head, line.split(","))) for line in text[1:] if line]


def write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    version: str
    seeds: list[int]
    wall_clock: float
    outputs: dict[str, str] = field(default_factory=dict)  # file name -> sha256

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "version": self.version, "seeds": self.seeds,
                "wall_clock": self.wall_clock, "outputs": self.outputs}


# ---------------------------------------------------------------------------
# artifact builders shared with the CLI
# ---------------------------------------------------------------------------


def beta_rows(beta: BetaFunction, lams: Sequence[float]) -> list[tuple[float, float, float]]:
    """``(λ, lo, hi)`` rows; λ inside a pole guard is skipped."""
    rows = []
    poles = beta.poles(max(lams) + beta.guard) if beta.terms else np.zeros(0)
    for lam in lams:
        if poles.size and np.min(np.abs(poles - lam)) <= beta.guard:
            continue
        b = beta(lam)
        rows.append((lam, b.lo, b.hi))
    return rows


def set_rows(name: str, s: SpectralSet) -> list[tuple[str, str, float, float]]:
    return [(name, kind, lo, hi) for kind, lo, hi in s.rows()]


def first_gap(bands: SpectralSet, lambda_max: float) -> tuple[float, float] | None:
    """First gap of ``bands`` (isolated poles count as spectrum, not as gaps)."""
    gaps = bands.gaps(0.0, lambda_max)
    return gaps[0] if gaps else None


def gap_window(gap: tuple[float, float], margin: float, above: float) -> tuple[float, float]:
    a, b = gap
    g = b - a
    return a + margin * g, b + above * g


def count_in_gaps(values: np.ndarray, bands: SpectralSet, window: tuple[float, float], margin: float) -> int:
    """Eigenvalues strictly inside a gap of ``bands`` after shrinking each gap by ``margin`` of its width."""
    n = 0
    for a, b in bands.gaps(*window):
        w = b - a
        n += int(np.sum((values > a + margin * w) & (values < b - margin * w)))
    return n


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


class Pipeline:
    def __init__(self, config: ExperimentConfig, cache: SpectrumCache | None = None):
        self.cfg = config
        self.cache = cache or SpectrumCache()
        self.out = config.output
        self.settings = config.spectrum_settings()
        self._beta: BetaFunction | None = None
        self._bands: SpectralSet | None = None
        self._ahom: HomogenizedTensor | None = None
        self._geom: Realization | None = None
        self.outputs: list[Path] = []
        self.seeds: set[int] = set()

    @property
    def lambda_max(self) -> float:
        return float(self.cfg.sections["beta"]["lambda_max"])

    # lazily computed shared objects

    def beta(self) -> BetaFunction:
        if self._beta is None:
            self._beta = BetaFunction(model_spectra(self.cfg.model, self.settings, self.cache))
        return self._beta

    def bands(self) -> SpectralSet:
        if self._bands is None:
            self._bands = predicted_spectrum(None, self.lambda_max, beta=self.beta())
        return self._bands

    def geometry(self) -> Realization:
        if self._geom is None:
            g = self.cfg.sections["geometry"]
            M = float(g["window"])
            dim = self.cfg.model.dim
            self.seeds.add(int(g["seed"]))
            self._geom = generate(self.cfg.model, Window.cube(M, dim, [M / 2] * dim), int(g["seed"]))
        return self._geom

    def ahom(self) -> HomogenizedTensor:
        if self._ahom is None:
            h = self.cfg.sections["homog"]
            real = self.geometry()
            M = float(h["supercell"]) or real.window.edge
            seed = int(self.cfg.sections["geometry"]["seed"])
            sup = generate(self.cfg.model, Window.cube(M, 2, [M / 2, M / 2]), seed) if M != real.window.edge else real
            cell = CellProblem.from_realization(sup, float(h["h"]), np.diag(h["a1"]))
            self._ahom = homogenized_matrix(cell, keep_correctors=False)
        return self._ahom

    def _emit(self, path: Path) -> None:
        self.outputs.append(path)

    # stages

    def stage_geometry(self) -> None:
        real = self.geometry()
        p = self.out / "geom.json"
        real.save(p)
        self._emit(p)
        rows = [(len(real), volume_fraction(real), real.flags.get("min_gap", math.nan))]
        self._emit(write_csv(self.out / "geometry.csv", ["inclusions", "theta", "min_gap"], rows))

    def stage_shapes(self) -> None:
        rows = []
        for shape in model_shapes(self.cfg.model):
            spec = self.cache.get(shape, self.settings)
            for s, (lam, m, k) in enumerate(zip(spec.eigenvalues, spec.masses, spec.multiplicities), 1):
                rows.append((shape.id, s, lam, k, m))
        self._emit(write_csv(self.out / "shapes.csv", ["shape", "index", "eigenvalue", "multiplicity", "mass"], rows))

    def stage_beta(self) -> None:
        n = int(self.cfg.sections["beta"]["n_lambda"])
        lams = np.linspace(0.0, self.lambda_max, n)
        rows = beta_rows(self.beta(), lams)
        self._emit(write_csv(self.out / "beta.csv", ["lambda", "beta_lo", "beta_hi"], rows))

    def stage_bands(self) -> None:
        rows = set_rows("predicted", self.bands())
        if self.cfg.model.intensities():
            G = limit_set_G(self.cfg.model, self.lambda_max, self.settings, self.cache)
            rows += set_rows("G", G)
        self._emit(write_csv(self.out / "bands.csv", ["set", "kind", "lo", "hi"], rows))

    def stage_homog(self) -> None:
        t = self.ahom()
        self._emit(write_json(self.out / "ahom.json", t.to_dict()))

    def _spectrum_window(self) -> tuple[float, float]:
        sp = self.cfg.sections["spectrum"]
        if sp["window"] != "gap":
            return float(sp["window"][0]), float(sp["window"][1])
        gap = first_gap(self.bands(), self.lambda_max)
        if gap is None:
            raise PreconditionError("the predicted spectrum has no gap below lambda_max")
        return gap_window(gap, float(sp["margin"]), float(sp["above"]))

    def stage_spectrum(self) -> None:
        sp = self.cfg.sections["spectrum"]
        box = float(sp["box"])
        L = float(sp["L"]) or box / 4
        seed = int(sp["seed"])
        self.seeds.add(seed)
        window = self._spectrum_window()
        bands = self.bands()
        rows, summary = [], []
        for eps in sp["eps"]:
            eps = float(eps)
            M = box / eps
            real = generate(self.cfg.model, Window.cube(M, 2, [M / 2, M / 2]), seed)
            op = assemble(real, eps, 1.0, eps * float(sp["h_over_eps"]), Window.cube(box, 2, [box / 2, box / 2]),
                          bc=sp["bc"], min_cells=int(sp["min_cells"]))
            ws = spectrum_window(op, *window, max_count=int(sp["max_count"]), seed=seed, keep_vectors=True)
            ev = ws.eigenvalues
            if ev.size:
                flags, ratios = relevance_classify(op, ws.vectors, L, float(sp["c_mass"]))
            else:
                flags, ratios = np.zeros(0, bool), np.zeros(0)
            for lam, r, q, f in zip(ev, ws.residuals, ratios, flags):
                rows.append((eps, lam, r, q, f, not bands.contains(lam)))
            hd = hausdorff_distance(ev, bands, window) if ev.size else math.inf
            summary.append((eps, window[0], window[1], ws.count, ev.size,
                            count_in_gaps(ev, bands, window, 0.02), hd))
        self._emit(write_csv(self.out / "spectrum.csv",
                             ["epsilon", "eigenvalue", "residual", "mass_ratio_L", "relevant", "in_gap"], rows))
        self._emit(write_csv(self.out / "spectrum_summary.csv",
                             ["epsilon", "t1", "t2", "count", "computed", "in_gap", "hausdorff"], summary))

    def _quasimode_lambda(self) -> float:
        q = self.cfg.sections["quasimode"]["lambda"]
        if q != "mid-band":
            return float(q)
        b = self.bands()
        top = first_gap(b, self.lambda_max)
        return 0.5 * (top[0] if top else self.lambda_max)

    def stage_quasimode(self) -> None:
        q = self.cfg.sections["quasimode"]
        lam = self._quasimode_lambda()
        beta = self.beta()
        bv = beta.mid(lam) if beta.terms else lam
        ahom = self.ahom().matrix
        rows = []
        for seed in q["seeds"]:
            self.seeds.add(int(seed))
            for eps in q["eps"]:
                for L in q["L"]:
                    eps, L = float(eps), float(L)
                    M = L / eps
                    real = generate(self.cfg.model, Window.cube(M, 2, [M / 2, M / 2]), int(seed))
                    op = assemble(real, eps, 1.0, eps * float(q["h_over_eps"]), Window.cube(L, 2, [L / 2, L / 2]),
                                  min_cells=int(self.cfg.sections["spectrum"]["min_cells"]))
                    rep = plane_wave_quasimode(op, lam, L, bv, ahom)
                    rows.append((int(seed), eps, L, lam, rep.residual, rep.residual_direct, rep.mass_ratio))
        self._emit(write_csv(self.out / "quasimode.csv",
                             ["seed", "epsilon", "L", "lambda", "residual", "residual_direct", "mass_ratio"], rows))

    def stage_report(self) -> None:
        from .report import summarize

        text = summarize(self.out, self.lambda_max)
        p = self.out / "summary.txt"
        p.write_text(text)
        self._emit(p)

    def run(self) -> RunManifest:
        t0 = time.perf_counter()
        self.out.mkdir(parents=True, exist_ok=True)
        for stage in self.cfg.stages:
            log.info("stage %s", stage)
            try:
                getattr(self, f"stage_{stage}")()
            except HicospecError as exc:
                raise StageError(stage, exc) from exc
        man = RunManifest(
            self.cfg.hash(), __version__, sorted(self.seeds), round(time.perf_counter() - t0, 3),
            {p.name: sha256(p) for p in self.outputs},
        )
        write_json(self.out / "manifest.json", man.to_dict())
        return man


def run_pipeline(config: ExperimentConfig, cache: SpectrumCache | None = None) -> RunManifest:
    return Pipeline(config, cache).run()
