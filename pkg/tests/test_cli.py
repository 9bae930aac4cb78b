import json

import numpy as np
import pytest

from bubbleimg.cli import run
from bubbleimg.dataio import load_scenario
from bubbleimg.cli import bundled_scenario
from bubbleimg.defaults import DEFAULTS
from bubbleimg.invert import ReconstructionResult
from bubbleimg.media import sample_background


def test_validate_quick(capsys):
    assert run(["validate", "--quick"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("scenario ") and "far-field normalization" in out
    assert "FAIL" not in out


def test_validate_full(capsys):
    # the shipped default configuration is required to pass every oracle check
    code = run(["validate"])
    print(capsys.readouterr().out)
    assert code == 0


@pytest.mark.parametrize("argv", [["validate", "--bogus"], ["frobnicate"], ["scan"], ["invert", "--out", "x"],
                                  ["validate", "--jobs", "0"], ["validate", "--set", "nonsense=1"],
                                  ["validate", "--set", "ls_rtol=abc"]])
def test_usage_errors(argv, capsys):
    assert run(argv) == 2
    assert "usage:" in capsys.readouterr().err


def test_computational_failure(tmp_path, capsys):
    assert run(["invert", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "r.json")]) == 1
    assert "bubbleimg:" in capsys.readouterr().err


def test_set_is_scoped_to_the_run():
    before = DEFAULTS.ls_rtol
    assert run(["validate", "--quick", "--set", "ls_rtol=1e-9"]) == 0
    assert DEFAULTS.ls_rtol == before


@pytest.fixture(scope="module")
def homogeneous_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("homog")
    assert run(["scan", "--scenario", "homogeneous", "--out", str(d / "data"), "--jobs", "1"]) == 0
    assert run(["invert", "--data", str(d / "data"), "--out", str(d / "recon.json"), "--jobs", "1"]) == 0
    return d


def test_scan_invert_homogeneous(homogeneous_run):
    rec = ReconstructionResult.read(homogeneous_run / "recon.json")
    scn = load_scenario(bundled_scenario("homogeneous"))
    rho = sample_background(scn.medium, rec.z)[0]
    assert np.all(np.isfinite(rec.rho0))
    assert np.max(np.abs(rec.rho0 / rho - 1)) < 1e-3


def test_rerun_is_byte_identical(homogeneous_run, tmp_path):
    assert run(["scan", "--scenario", "homogeneous", "--out", str(tmp_path / "data"), "--jobs", "1"]) == 0
    assert run(["invert", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "recon.json")]) == 0
    for f in (homogeneous_run / "data").iterdir():
        assert (tmp_path / "data" / f.name).read_bytes() == f.read_bytes()
    assert (tmp_path / "recon.json").read_bytes() == (homogeneous_run / "recon.json").read_bytes()


def test_spectrum_output(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert run(["spectrum", "--shape", "sphere(2)", "--h", "0.25", "--count", "2", "--out", str(out)]) == 0
    assert "scenario" in capsys.readouterr().out
    data = json.loads(out.read_text())
    lams = [c["lam"] for c in data["clusters"]]
    assert len(lams) == 2 and lams[0] > lams[1] > 0
    assert data["mu_shape"] == pytest.approx(8 * np.pi / 3, rel=2e-2)


def test_simulate_output(tmp_path):
    out = tmp_path / "p.json"
    assert run(["simulate", "--scenario", "homogeneous", "--z", "0", "0", "0", "--omega", "7000",
                "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data and all(k == k.strip() for k in data)
