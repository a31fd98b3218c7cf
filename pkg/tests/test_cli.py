import json
from pathlib import Path

import pytest

from hicospec import cli
from hicospec.config import ConfigError, from_dict, preset
from hicospec.errors import NumericalError
from hicospec.pipeline import read_csv

FIXTURES = Path(__file__).parent / "fixtures"
SHAPE = '{ id = "sq", kind = "square", size = 0.5 }'
COARSE = ["--h", "0.125", "--modes", "8", "--min-cells", "4"]


def model_file(tmp_path, p, name="model.toml"):
    path = tmp_path / name
    path.write_text(f'[model]\nkind = "bernoulli"\np = {p}\nshapes = [{SHAPE}]\n')
    return str(path)


@pytest.fixture(scope="module")
def halfband_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "hicospec-out"
    assert cli.main(["run", "--preset", "bernoulli-halfband", "--output", str(out)]) == 0
    return out


def test_empty_model_beta_is_identity(tmp_path):
    out = tmp_path / "beta.csv"
    rc = cli.main(["beta", "--model", model_file(tmp_path, 0.0), "--lmax", "10", "--n", "6", "--out", str(out), *COARSE])
    assert rc == 0
    rows = read_csv(out)
    assert [float(r["beta_lo"]) for r in rows] == [float(r["lambda"]) for r in rows] == [0, 2, 4, 6, 8, 10]


def test_empty_model_single_band(tmp_path):
    out = tmp_path / "bands.csv"
    rc = cli.main(["bands", "--model", model_file(tmp_path, 0.0), "--lmax", "100", "--limit-set", "--out", str(out),
                   *COARSE])
    assert rc == 0
    rows = read_csv(out)
    pred = [r for r in rows if r["set"] == "predicted"]
    assert len(pred) == 1 and float(pred[0]["lo"]) == 0 and float(pred[0]["hi"]) == 100


def test_full_lattice_geometry(tmp_path):
    out = tmp_path / "g.json"
    assert cli.main(["geometry", "--model", model_file(tmp_path, 1.0), "--window", "4", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert len(data["inclusions"]) == 16


def test_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["beta", "--model", str(tmp_path / "missing.toml"), "--lmax", "10"]) == 2
    geom = tmp_path / "g.json"
    cli.main(["geometry", "--model", model_file(tmp_path, 1.0), "--window", "4", "--out", str(geom)])
    rc = cli.main(["spectrum", "--geom", str(geom), "--eps", "0.25", "--h", "0.25", "--window", "0", "1"])
    assert rc == 4
    assert cli.main(["report", str(tmp_path)]) == 4

    def boom(args):
        raise NumericalError("did not converge")

    monkeypatch.setattr(cli, "cmd_beta", boom)
    assert cli.main(["beta", "--model", "x", "--lmax", "1"]) == 3
    assert "did not converge" in capsys.readouterr().err


def test_validate(tmp_path, capsys):
    assert cli.main(["validate", "--preset", "bernoulli-halfband"]) == 0
    assert "configuration valid" in capsys.readouterr().out
    bad = tmp_path / "bad.toml"
    bad.write_text(f'[model]\nkind = "bernoulli"\nshapes = [{SHAPE}]\n[run]\nstages = ["nonsense"]\n')
    assert cli.main(["validate", str(bad)]) == 2


def test_config_rejections():
    base = preset("bernoulli-halfband")
    for patch in ({"bogus": {}}, {"spectrum": {"bc": "robin"}}, {"spectrum": {"eps": [-1.0]}},
                  {"spectrum": {"window": [1.0]}}, {"beta": {"lambda_max": 0}}):
        with pytest.raises(ConfigError):
            from_dict({**base, **patch})
    with pytest.raises(ConfigError):
        from_dict({"spectra": {}})


def test_preset_produces_all_outputs(halfband_run):
    expected = {"geom.json", "geometry.csv", "shapes.csv", "beta.csv", "bands.csv", "ahom.json", "spectrum.csv",
                "spectrum_summary.csv", "quasimode.csv", "summary.txt", "manifest.json"}
    assert expected <= {p.name for p in halfband_run.iterdir()}
    manifest = json.loads((halfband_run / "manifest.json").read_text())
    assert set(manifest["outputs"]) == expected - {"manifest.json"}
    assert manifest["seeds"] == [0, 1]


def test_preset_summary_matches_golden(halfband_run):
    assert (halfband_run / "summary.txt").read_text() == (FIXTURES / "halfband_summary.txt").read_text()


def test_report_no_eigenvalues(tmp_path, capsys):
    (tmp_path / "spectrum_summary.csv").write_text("epsilon,t1,t2,count,computed,in_gap,hausdorff\n0.25,1,2,0,0,0,inf\n")
    (tmp_path / "spectrum.csv").write_text("epsilon,eigenvalue,residual,mass_ratio_L,relevant,in_gap\n")
    assert cli.main(["report", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "no eigenvalues found in the window" in text
    assert "missing outputs" in text


def test_report_svg(halfband_run):
    assert cli.main(["report", str(halfband_run), "--svg"]) == 0
    svg = (halfband_run / "beta.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg
