import json
import math

import pytest

from dislocgamma import cli
from dislocgamma.config import SCHEMA, ConfigError, parse_config, schema_doc

ISO = 'wells = [[[1, 0], [0, 1]], [[1.5, 0], [0, 0.7]]]\nmode = "iso"\nxi = [1, 0]\n'
DIST2 = 'wells = [[[1, 0], [0, 1]], [[1.3, 0], [0, 0.8]]]\n'


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, text, cmd, out="out", extra=()):
    cfg = write_cfg(tmp_path, text)
    d = tmp_path / out
    code = cli.main(["--config", cfg, "--out", str(d), *extra, cmd])
    return code, d


# -- config ----------------------------------------------------------------

@pytest.mark.parametrize("text,match", [
    ("", "missing required key 'wells'"),
    (ISO + "foo = 1\n", "line 4: unknown key 'foo'"),
    (ISO + "mode = \"iso\"\n", "line 4: duplicate key 'mode'"),
    (ISO + "seed = [\n", "line 4: invalid JSON"),
    (ISO + "n_theta = 64\n", "line 4: n_theta"),
    (ISO + "ds = 0.1\n", "line 4: ds"),
    (ISO + "well_index = 2\n", "well_index out of range"),
    (ISO + "eta = [0.1]\n", "one entry per eps"),
    (ISO + "kind = \"nope\"\n", "unknown inequality id"),
    ("wells = [[[1, 0], [0]]]\n", "line 1: wells"),
    ("just text\n", "line 1: expected"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_config_defaults_and_comments():
    cfg = parse_config("# comment\n\n" + ISO)
    assert cfg["mode"] == "iso" and cfg["convention"] == "psi-half"
    assert set(cfg) == set(SCHEMA)
    assert all(k in schema_doc() for k in SCHEMA)


# -- exit codes ------------------------------------------------------------

def test_missing_wells_exit_2(tmp_path):
    assert run(tmp_path, "mode = \"iso\"\n", "table")[0] == 2


def test_missing_config_file_exit_2(tmp_path):
    assert cli.main(["--config", str(tmp_path / "none.cfg"), "table"]) == 2


def test_eta_violation_exit_4(tmp_path, capsys):
    code, _ = run(tmp_path, ISO + "eta = [0.5, 0.5, 0.5]\n", "validate")
    assert code == 4
    assert "eta_upper[0]" in capsys.readouterr().err


def test_gamma_eta_violation_exit_4(tmp_path):
    assert run(tmp_path, ISO + "eta = [0.5, 0.5, 0.5]\n", "gamma")[0] == 4


def test_zero_burgers_cell(tmp_path):
    cfg = write_cfg(tmp_path, ISO + "deltas = [0.1, 0.01]\n", "z.cfg")
    assert cli.main(["--config", cfg, "--out", str(tmp_path / "zero"), "cell", "--xi", "0", "0"]) == 0
    data = json.loads((tmp_path / "zero" / "psi_hat.json").read_text())
    assert data["psi_hat"] == 0 and data["richardson"]["slope"] == 0


# -- outputs ---------------------------------------------------------------

def test_cell_outputs_iso_exact(tmp_path):
    code, d = run(tmp_path, ISO + "deltas = [0.1, 0.01]\n", "cell")
    assert code == 0
    assert {p.name for p in d.iterdir()} >= {"psi_table.csv", "cell_trace.dat", "psi_hat.json"}
    data = json.loads((d / "psi_hat.json").read_text())
    assert data["psi_hat_nohalf"] == pytest.approx(1 / (2 * math.pi), rel=1e-9)
    assert data["richardson"]["slope"] == pytest.approx(1 / (2 * math.pi), rel=1e-9)
    assert data["relative_disagreement"] < 0.05


@pytest.mark.parametrize("cmd,text,files", [
    ("table", ISO, ["self_energy_table.json"]),
    ("phi", ISO, ["phi.csv"]),
    ("probe", ISO + "n_samples = 4\n", ["probe_report.json", "probe_samples.csv"]),
    ("helmholtz", ISO + "levels = [16, 32, 64]\n", ["helmholtz.csv"]),
    ("validate", ISO, ["validate.json"]),
    ("cell", ISO + "deltas = [0.1, 0.03]\n", ["psi_table.csv", "cell_trace.dat", "psi_hat.json"]),
])
def test_subcommands_deterministic(tmp_path, cmd, text, files):
    c1, d1 = run(tmp_path, text, cmd, out="a")
    c2, d2 = run(tmp_path, text, cmd, out="b")
    assert c1 == c2 == 0
    for f in files:
        assert (d1 / f).read_bytes() == (d2 / f).read_bytes(), f


def test_seed_changes_probe(tmp_path):
    _, d1 = run(tmp_path, ISO + "n_samples = 3\n", "probe", out="a")
    _, d2 = run(tmp_path, ISO + "n_samples = 3\n", "probe", out="b", extra=("--seed", "5"))
    assert (d1 / "probe_samples.csv").read_bytes() != (d2 / "probe_samples.csv").read_bytes()


def test_convention_flag_halves_table(tmp_path):
    _, d1 = run(tmp_path, ISO, "table", out="a")
    _, d2 = run(tmp_path, ISO, "table", out="b", extra=("--convention", "psi-nohalf"))
    a = json.loads((d1 / "self_energy_table.json").read_text())
    b = json.loads((d2 / "self_energy_table.json").read_text())
    assert a["convention_flag"] == "psi-half" and b["convention_flag"] == "psi-nohalf"
    for ea, eb in zip(a["entries"], b["entries"]):
        assert eb["psi_hat"] == pytest.approx(2 * ea["psi_hat"], rel=1e-12)


def test_gamma_small_run(tmp_path):
    text = ISO + "eps = [1e-2]\n"
    code, d = run(tmp_path, text, "gamma", extra=("--grid", "32"))
    assert code == 0
    head = (d / "gamma_trace.csv").read_text().splitlines()[0]
    assert head == "j,eps,E_eps,elastic,self,interaction,penalty,limit"
    rep = json.loads((d / "gamma_report.json").read_text())
    assert rep["runs"][0]["valid"]
