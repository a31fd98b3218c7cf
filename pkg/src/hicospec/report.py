"""Human-readable summary and optional SVG plots built solely from run CSVs."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import PreconditionError
from .pipeline import read_csv

EXPECTED = ("beta.csv", "bands.csv", "spectrum.csv", "spectrum_summary.csv", "quasimode.csv")


def _f(x: str) -> float:
    return float(x)


def summarize(directory: str | Path, lambda_max: float | None = None) -> str:
    """Summary table of a run directory.

    Raises
    ------
    PreconditionError
        If none of the expected artifacts is present.
    """
    d = Path(directory)
    present = [n for n in EXPECTED if (d / n).exists()]
    if not present:
        raise PreconditionError(f"no run outputs in {d}; expected any of {', '.join(EXPECTED)}")
    lines: list[str] = [f"run directory: {d.name}"]
    missing = [n for n in EXPECTED if n not in present]
    if missing:
        lines.append("missing outputs: " + ", ".join(missing))

    bands = read_csv(d / "bands.csv") if "bands.csv" in present else []
    pred = [(_f(r["lo"]), _f(r["hi"])) for r in bands if r["set"] == "predicted" and r["kind"] == "interval"]
    if bands:
        lines.append("")
        lines.append("predicted bands:")
        for r in bands:
            if r["set"] != "predicted":
                continue
            if r["kind"] == "interval":
                lines.append(f"  [{_f(r['lo']):.6g}, {_f(r['hi']):.6g}]")
            else:
                lines.append(f"  point {_f(r['lo']):.6g}")
        g = [r for r in bands if r["set"] == "G"]
        if g:
            lines.append("limit set G: " + ", ".join(
                f"[{_f(r['lo']):.6g}, {_f(r['hi']):.6g}]" for r in g if r["kind"] == "interval"))

    if "beta.csv" in present:
        rows = read_csv(d / "beta.csv")
        if rows:
            lam = np.array([_f(r["lambda"]) for r in rows])
            beta = np.array([0.5 * (_f(r["beta_lo"]) + _f(r["beta_hi"])) for r in rows])
            lines.append("")
            lines.append(f"beta sampled at {len(rows)} points on [{lam[0]:.6g}, {lam[-1]:.6g}], "
                         f"{int(np.sum(beta >= 0))} nonnegative")

    if "spectrum_summary.csv" in present:
        rows = read_csv(d / "spectrum_summary.csv")
        lines.append("")
        lines.append("direct spectrum:")
        lines.append(f"  {'epsilon':>10} {'window':>23} {'count':>6} {'in_gap':>6} {'hausdorff':>10}")
        for r in rows:
            lines.append(f"  {_f(r['epsilon']):>10.6g} [{_f(r['t1']):>9.5g}, {_f(r['t2']):>9.5g}] "
                         f"{int(r['count']):>6d} {int(r['in_gap']):>6d} {_f(r['hausdorff']):>10.4g}")
        spec = read_csv(d / "spectrum.csv") if "spectrum.csv" in present else []
        if not spec:
            lines.append("  no eigenvalues found in the window")
        else:
            lines.append("  eigenvalue histogram:")
            ev = np.array([_f(r["eigenvalue"]) for r in spec])
            edges = np.linspace(float(rows[0]["t1"]), float(rows[0]["t2"]), 9) if rows else np.linspace(ev.min(), ev.max(), 9)
            counts, _ = np.histogram(ev, bins=edges)
            for a, b, c in zip(edges[:-1], edges[1:], counts):
                tag = "band" if any(lo <= 0.5 * (a + b) <= hi for lo, hi in pred) else "gap"
                lines.append(f"    [{a:9.5g}, {b:9.5g}) {tag:>4} {'#' * int(c)} {c}")

    if "quasimode.csv" in present:
        rows = read_csv(d / "quasimode.csv")
        lines.append("")
        lines.append("quasimode residuals:")
        lines.append(f"  {'seed':>4} {'epsilon':>8} {'L':>6} {'lambda':>10} {'residual':>11} {'mass_ratio':>10}")
        for r in rows:
            lines.append(f"  {int(r['seed']):>4d} {_f(r['epsilon']):>8.5g} {_f(r['L']):>6.4g} {_f(r['lambda']):>10.6g} "
                         f"{_f(r['residual']):>11.5g} {_f(r['mass_ratio']):>10.4g}")
    if lambda_max is not None and not pred and bands:
        lines.append(f"no bands below {lambda_max:g}")
    return "\n".join(lines) + "\n"


def beta_svg(directory: str | Path, width: int = 480, height: int = 320) -> Path:
    """Plot of the β bracket midpoint from ``beta.csv``."""
    d = Path(directory)
    rows = read_csv(d / "beta.csv")
    if not rows:
        raise PreconditionError("beta.csv is empty")
    lam = np.array([_f(r["lambda"]) for r in rows])
    b = np.array([0.5 * (_f(r["beta_lo"]) + _f(r["beta_hi"])) for r in rows])
    lim = max(float(np.percentile(np.abs(b), 90)), 1.0) * 1.5
    b = np.clip(b, -lim, lim)
    x = (lam - lam.min()) / max(lam.max() - lam.min(), 1e-300) * (width - 40) + 30
    y = height / 2 - b / lim * (height / 2 - 10)
    # break the polyline where consecutive samples straddle a pole
    segs, cur = [], []
    for i in range(len(x)):
        if cur and abs(b[i] - b[i - 1]) > lim:
            segs.append(cur)
            cur = []
        cur.append(f"{x[i]:.1f},{y[i]:.1f}")
    segs.append(cur)
    lines = "".join(f'<polyline fill="none" stroke="black" points="{" ".join(s)}"/>' for s in segs if s)
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
           f'<line x1="30" y1="{height / 2}" x2="{width - 10}" y2="{height / 2}" stroke="gray"/>'
           f"{lines}</svg>\n")
    p = d / "beta.svg"
    p.write_text(svg)
    return p


def gap_violations(directory: str | Path) -> dict[float, int]:
    """Per-ε count of computed eigenvalues inside a predicted gap."""
    rows = read_csv(Path(directory) / "spectrum_summary.csv")
    return {_f(r["epsilon"]): int(r["in_gap"]) for r in rows}


def hausdorff_by_eps(directory: str | Path) -> dict[float, float]:
    rows = read_csv(Path(directory) / "spectrum_summary.csv")
    return {_f(r["epsilon"]): (math.inf if r["hausdorff"] == "inf" else _f(r["hausdorff"])) for r in rows}
