"""Command-line entry point ``hicospec``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 precondition violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig, from_dict, load, load_model, preset
from .errors import ConfigError, HicospecError
from .geometry import Realization, Shape, Window, generate, volume_fraction
from .shape_spectra import SpectrumCache, SpectrumSettings, mass_identity_check

log = logging.getLogger("hicospec")


def _settings(args) -> SpectrumSettings:
    return SpectrumSettings(h=args.h, n_modes=args.modes, analytic=args.analytic, min_cells=args.min_cells)


def _spectra_args(p: argparse.ArgumentParser, h: float = 1.0 / 64) -> None:
    p.add_argument("--h", type=float, default=h, help="shape grid spacing in cell units")
    p.add_argument("--modes", type=int, default=200, help="number of shape modes")
    p.add_argument("--min-cells", type=int, default=16, help="cells required across each shape")
    p.add_argument("--analytic", action="store_true", help="closed-form spectra (interval/square/disk)")


def _out(path: str | None) -> Path | None:
    return Path(path) if path else None


def _emit_csv(path: Path | None, header, rows) -> None:
    from .pipeline import fmt, write_csv

    if path is None:
        print(",".join(header))
        for r in rows:
            print(",".join(fmt(v) for v in r))
    else:
        write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_geometry(args) -> int:
    model = load_model(args.model)
    M = float(args.window)
    if M < 1:
        raise ConfigError("window edge must be >= 1")
    real = generate(model, Window.cube(M, model.dim, [M / 2] * model.dim), args.seed)
    real.save(args.out)
    print(f"{len(real)} inclusions, theta={volume_fraction(real):.6g}, flags={json.dumps(real.flags, sort_keys=True)}")
    return 0


def cmd_parking(args) -> int:
    from .geometry import RandomParking

    model = load_model(args.model)
    if not isinstance(model, RandomParking):
        raise ConfigError("parking needs a model of kind 'parking'")
    rows = []
    M = float(args.window)
    for seed in range(args.seed, args.seed + args.seeds):
        real = generate(model, Window.cube(M, model.dim, [M / 2] * model.dim), seed)
        rows.append((seed, len(real), len(real) / real.window.volume, real.flags.get("jammed", False)))
    _emit_csv(_out(args.out), ["seed", "inclusions", "density", "jammed"], rows)
    d = np.array([r[2] for r in rows])
    se = d.std(ddof=1) / math.sqrt(len(d)) if len(d) > 1 else math.nan
    print(f"mean density {d.mean():.6g} (standard error {se:.2g}); reference {model.jamming_density:.6g}",
          file=sys.stderr)
    return 0


def cmd_shapes(args) -> int:
    path = Path(args.shape)
    if not path.exists():
        raise ConfigError(f"shape file {path} does not exist")
    if path.suffix == ".json":
        data = json.loads(path.read_text())
    else:
        from .config import tomllib

        data = tomllib.loads(path.read_text())
    shape = Shape.from_dict(data.get("shape", data))
    spec = SpectrumCache().get(shape, _settings(args))
    if args.out:
        Path(args.out).write_text(json.dumps(spec.to_dict(), indent=1) + "\n")
    print(f"{shape.id}: {spec.n_modes} modes in {len(spec.eigenvalues)} clusters, "
          f"Lambda_1={spec.lambda_1:.10g}, captured fraction={mass_identity_check(spec):.6g}")
    return 0


def cmd_beta(args) -> int:
    from .micro_limit import BetaFunction
    from .pipeline import beta_rows

    model = load_model(args.model)
    beta = BetaFunction.from_model(model, _settings(args), SpectrumCache())
    lams = np.linspace(0.0, args.lmax, args.n)
    _emit_csv(_out(args.out), ["lambda", "beta_lo", "beta_hi"], beta_rows(beta, lams))
    return 0


def cmd_bands(args) -> int:
    from .micro_limit import limit_set_G, predicted_spectrum
    from .pipeline import set_rows

    model = load_model(args.model)
    cache = SpectrumCache()
    s = _settings(args)
    rows = set_rows("predicted", predicted_spectrum(model, args.lmax, s, cache))
    if args.limit_set:
        rows += set_rows("G", limit_set_G(model, args.lmax, s, cache))
    _emit_csv(_out(args.out), ["set", "kind", "lo", "hi"], rows)
    return 0


def cmd_betainf(args) -> int:
    from .micro_limit import beta_inf_estimate, default_shift_pitch

    real = Realization.load(args.geom)
    rows = []
    for lam in args.lambdas:
        est = beta_inf_estimate(real, lam, args.M, _settings(args), SpectrumCache(),
                                pitch=args.pitch or default_shift_pitch(real.model))
        rows += [(lam, M, v) for M, v in sorted(est.items())]
    _emit_csv(_out(args.out), ["lambda", "M", "sup_local_average"], rows)
    return 0


def cmd_homog(args) -> int:
    from .homogenization import CellProblem, homogenized_matrix

    real = Realization.load(args.geom)
    if args.cell_pitch:
        M = float(args.cell_pitch)
        c = np.asarray(real.window.center, dtype=float)
        from .geometry import subwindow

        sub = subwindow(real, Window(tuple(c), M))
        real = sub
    cell = CellProblem.from_realization(real, args.h)
    t = homogenized_matrix(cell, keep_correctors=False)
    text = json.dumps(t.to_dict(), indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def _operator(args):
    from .direct_solver import assemble

    real = Realization.load(args.geom)
    box = args.box if args.box else real.window.edge * args.eps
    c = np.asarray(real.window.center, dtype=float) * args.eps
    return assemble(real, args.eps, 1.0, args.h, Window(tuple(c), box), bc=args.bc, min_cells=args.min_cells)


def cmd_spectrum(args) -> int:
    from .direct_solver import mass_ratios, spectrum_window

    op = _operator(args)
    ws = spectrum_window(op, args.window[0], args.window[1], max_count=args.max_count, seed=args.seed,
                         keep_vectors=True)
    L = args.L or op.edge / 4
    ratios = mass_ratios(op, ws.vectors, L) if ws.eigenvalues.size else []
    _emit_csv(_out(args.out), ["eigenvalue", "residual", "mass_ratio_L"],
              list(zip(ws.eigenvalues, ws.residuals, ratios)))
    if ws.truncated:
        print(f"window holds {ws.count} eigenvalues; reported the lowest {args.max_count}", file=sys.stderr)
    return 0


def cmd_quasimode(args) -> int:
    from .direct_solver import plane_wave_quasimode
    from .micro_limit import BetaFunction

    op = _operator(args)
    real = op.realization
    if args.model:
        model = load_model(args.model)
    elif real.model:
        from .geometry import model_from_dict

        model = model_from_dict(real.model)
    else:
        raise ConfigError("quasimode needs --model when the geometry has no model record")
    beta = BetaFunction.from_model(model, SpectrumSettings(h=args.shape_h, n_modes=args.modes,
                                                          min_cells=args.min_cells), SpectrumCache())
    if args.ahom:
        ahom = np.asarray(json.loads(Path(args.ahom).read_text())["matrix"])
    else:
        ahom = np.eye(2)
        log.warning("no --ahom given; using the identity")
    rows = []
    for L in args.L:
        rep = plane_wave_quasimode(op, args.lam, L, beta.mid(args.lam), ahom)
        rows.append((args.eps, L, args.lam, rep.residual, rep.mass_ratio))
    _emit_csv(_out(args.out), ["epsilon", "L", "lambda", "residual", "mass_ratio"], rows)
    return 0


def _config_from_args(args) -> ExperimentConfig:
    if args.preset:
        data = preset(args.preset)
        cfg = from_dict(data)
    elif args.config:
        cfg = load(args.config)
    else:
        raise ConfigError("give a configuration file or --preset")
    if getattr(args, "output", None):
        cfg.sections["run"]["output"] = str(Path(args.output).resolve())
    return cfg


def cmd_validate(args) -> int:
    cfg = _config_from_args(args)
    print(f"configuration valid: stages={cfg.stages} hash={cfg.hash()}")
    return 0


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = _config_from_args(args)
    man = run_pipeline(cfg)
    print(f"wrote {len(man.outputs)} outputs to {cfg.output} (config hash {man.config_hash})")
    return 0


def cmd_report(args) -> int:
    from .report import beta_svg, summarize

    text = summarize(args.dir)
    print(text, end="")
    if args.svg and (Path(args.dir) / "beta.csv").exists():
        beta_svg(args.dir)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hicospec", description="High-contrast random composite spectral laboratory.")
    p.add_argument("--version", action="version", version=f"hicospec {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("geometry", help="generate a realization")
    s.add_argument("--model", required=True)
    s.add_argument("--window", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_geometry)

    s = sub.add_parser("parking", help="jamming densities of a parking model over seeds")
    s.add_argument("--model", required=True)
    s.add_argument("--window", type=float, required=True)
    s.add_argument("--seed", type=int, default=0, help="first seed")
    s.add_argument("--seeds", type=int, default=1, help="number of seeds")
    s.add_argument("--out")
    s.set_defaults(func=cmd_parking)

    s = sub.add_parser("shapes", help="Dirichlet spectrum of one shape")
    s.add_argument("--shape", required=True)
    _spectra_args(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_shapes)

    s = sub.add_parser("beta", help="beta function bracket on a lambda grid")
    s.add_argument("--model", required=True)
    s.add_argument("--lmax", type=float, required=True)
    s.add_argument("--n", type=int, default=301)
    _spectra_args(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_beta)

    s = sub.add_parser("bands", help="predicted spectrum (and the limit set G)")
    s.add_argument("--model", required=True)
    s.add_argument("--lmax", type=float, required=True)
    s.add_argument("--limit-set", action="store_true", help="also emit the set G")
    _spectra_args(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bands)

    s = sub.add_parser("betainf", help="sup of local averages over cube sizes")
    s.add_argument("--geom", required=True)
    s.add_argument("--lambda", dest="lambdas", type=float, nargs="+", required=True)
    s.add_argument("--M", type=float, nargs="+", required=True)
    s.add_argument("--pitch", type=float, default=None, help="translation grid pitch")
    _spectra_args(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_betainf)

    s = sub.add_parser("homog", help="homogenized matrix of a periodic supercell")
    s.add_argument("--geom", required=True)
    s.add_argument("--cell-pitch", type=float, default=None, help="supercell edge (default: whole window)")
    s.add_argument("--h", type=float, default=1.0 / 64)
    s.add_argument("--out")
    s.set_defaults(func=cmd_homog)

    for name, func, helptext in (("spectrum", cmd_spectrum, "eigenvalues of A^eps in a window"),
                                 ("quasimode", cmd_quasimode, "plane-wave quasimode residuals")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--geom", required=True)
        s.add_argument("--eps", type=float, required=True)
        s.add_argument("--h", type=float, required=True, help="physical grid spacing")
        s.add_argument("--box", type=float, default=None, help="physical box edge")
        s.add_argument("--bc", choices=("dirichlet", "periodic"), default="dirichlet")
        s.add_argument("--min-cells", type=int, default=16)
        s.add_argument("--out")
        s.set_defaults(func=func)
    sp = sub.choices["spectrum"]
    sp.add_argument("--window", type=float, nargs=2, required=True, metavar=("T1", "T2"))
    sp.add_argument("--max-count", type=int, default=200)
    sp.add_argument("--L", type=float, default=None, help="relevance cube edge (default box/4)")
    sp.add_argument("--seed", type=int, default=0, help="Krylov starting vector seed")
    qm = sub.choices["quasimode"]
    qm.add_argument("--lambda", dest="lam", type=float, required=True)
    qm.add_argument("--L", type=float, nargs="+", required=True)
    qm.add_argument("--model", default=None)
    qm.add_argument("--ahom", default=None, help="JSON from 'hicospec homog'")
    qm.add_argument("--shape-h", type=float, default=1.0 / 64)
    qm.add_argument("--modes", type=int, default=200)

    for name, func, helptext in (("validate", cmd_validate, "check a configuration without computing"),
                                 ("run", cmd_run, "run a configured pipeline")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", nargs="?")
        s.add_argument("--preset", default=None)
        s.add_argument("--output", default=None, help="override the output directory")
        s.set_defaults(func=func)

    s = sub.add_parser("report", help="summarize a run directory")
    s.add_argument("dir")
    s.add_argument("--svg", action="store_true", help="also write beta.svg")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return int(args.func(args) or 0)
    except HicospecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
