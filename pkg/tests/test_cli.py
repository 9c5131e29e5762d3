import json

import pytest

from hkb_delay import cli


def run(tmp_path, *args):
    return cli.main(list(args) + ["--out", str(tmp_path)])


def read(path):
    return path.read_bytes()


# --- configuration errors --------------------------------------------------------

@pytest.mark.parametrize("text", [
    "[chart]\nbogus = 1\n",
    "[nonsense]\nx = 1\n",
    "[params]\nkappa = 2\n",
    "[chart]\nresolution = ten ten\n",
    "not an ini file\n",
])
def test_bad_config_exits_2(tmp_path, text):
    cfg = tmp_path / "run.ini"
    cfg.write_text(text)
    assert run(tmp_path / "out", "chart", "--config", str(cfg)) == 2


def test_bad_flags_exit_2(tmp_path):
    assert run(tmp_path, "chart", "--x-range", "1", "1") == 2
    assert run(tmp_path, "chart", "--plane", "b-omega") == 2
    assert run(tmp_path, "tables", "--tolerance", "-1") == 2
    assert run(tmp_path, "unfold", "--point", "HH9") == 2
    assert cli.main(["chart", "--no-such-flag"]) == 2
    assert cli.main([]) == 2


def test_missing_config_file_exits_2(tmp_path):
    assert run(tmp_path, "tables", "--config", str(tmp_path / "absent.ini")) == 2


# --- numerical failures ----------------------------------------------------------

def test_numerical_failures_exit_3(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--periods", "5", "--a", "50", "--amplitude", "5") == 3
    assert run(tmp_path, "continue", "--gamma", "-1", "--no-switch") == 3
    assert run(tmp_path, "torus", "--gamma", "-1") == 3
    assert "numerical failure" in capsys.readouterr().err


# --- tables ----------------------------------------------------------------------

def test_tables_report_pass_and_fail(tmp_path):
    assert run(tmp_path / "a", "tables") == 0
    rep = (tmp_path / "a" / "tables_report.txt").read_text()
    assert rep.strip().splitlines()[-1] == "report PASS"
    assert rep.count("FAIL") == 0
    data = json.loads((tmp_path / "a" / "tables.json").read_text())
    assert data["pass"] and data["reference"] and len(data["normal_forms"]) == 4
    assert (tmp_path / "a" / "table_double_hopf.csv").read_text().count("\n") == 5
    # a tolerance below the tabulated precision fails the comparison but still exits 0
    assert run(tmp_path / "b", "tables", "--tolerance", "1e-12") == 0
    assert (tmp_path / "b" / "tables_report.txt").read_text().strip().endswith("report FAIL")


def test_tables_off_reference_parameters(tmp_path):
    assert run(tmp_path, "tables", "--omega", "7.0") == 0
    rep = (tmp_path / "tables_report.txt").read_text()
    assert "no tabulated reference" in rep


# --- chart -----------------------------------------------------------------------

def test_chart_outputs_and_verify(tmp_path):
    assert run(tmp_path, "chart", "--resolution", "30", "20", "--verify", "--seed", "5") == 0
    csv = (tmp_path / "chart_a_tau.csv").read_text().splitlines()
    assert csv[0].startswith("# plane=a-tau")
    assert len(csv) == 20 + 1 and all(len(r.split(",")) == 30 for r in csv[1:])
    rep = json.loads((tmp_path / "chart_a_tau_verify.json").read_text())
    assert rep["mismatches"] == [] and rep["agree"] == rep["checked"] == 50
    assert (tmp_path / "chart_a_tau.svg").read_text().startswith("<svg")


def test_format_filter(tmp_path):
    assert run(tmp_path, "chart", "--resolution", "10", "10", "--format", "json") == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["chart_a_tau.json"]


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[params]\ngamma = 0.641\n[chart]\nresolution = 12 8\nplane = gamma-tau\n")
    assert run(tmp_path / "f", "chart", "--config", str(cfg)) == 0
    rows = (tmp_path / "f" / "chart_gamma_tau.csv").read_text().splitlines()
    assert len(rows) == 8 + 1 and len(rows[1].split(",")) == 12
    assert run(tmp_path / "g", "chart", "--config", str(cfg), "--resolution", "5", "4") == 0
    rows = (tmp_path / "g" / "chart_gamma_tau.csv").read_text().splitlines()
    assert len(rows) == 4 + 1 and len(rows[1].split(",")) == 5


# --- determinism -----------------------------------------------------------------

@pytest.mark.parametrize("args", [
    ("chart", "--resolution", "25", "25", "--verify", "--seed", "11"),
    ("simulate", "--periods", "30", "--seed", "4"),
    ("unfold", "--n", "21"),
    ("tables",),
])
def test_outputs_are_byte_identical(tmp_path, args):
    assert run(tmp_path / "r1", *args) == 0
    assert run(tmp_path / "r2", *args) == 0
    f1 = sorted(p.name for p in (tmp_path / "r1").iterdir())
    f2 = sorted(p.name for p in (tmp_path / "r2").iterdir())
    assert f1 == f2 and f1
    for name in f1:
        assert read(tmp_path / "r1" / name) == read(tmp_path / "r2" / name), name


def test_seed_changes_simulation(tmp_path):
    assert run(tmp_path / "s1", "simulate", "--periods", "10", "--seed", "1") == 0
    assert run(tmp_path / "s2", "simulate", "--periods", "10", "--seed", "2") == 0
    assert read(tmp_path / "s1" / "trajectory.csv") != read(tmp_path / "s2" / "trajectory.csv")


def test_json_outputs_are_strict(tmp_path):
    assert run(tmp_path, "simulate", "--periods", "100", "--a", "-0.8", "--tau", "0.19214") == 0
    m = json.loads((tmp_path / "measures.json").read_text(),
                   parse_constant=lambda c: pytest.fail(f"non-strict JSON constant {c}"))
    assert m["measures"]["classification"] == "equilibrium"
    assert m["measures"]["period"] is None


# --- other commands ---------------------------------------------------------------

def test_unfold_outputs(tmp_path):
    assert run(tmp_path, "unfold", "--n", "11", "--axis", "tau") == 0
    rows = (tmp_path / "unfold_HH1_tau.csv").read_text().splitlines()
    assert rows[0] == "param,state,r1,r2,amplitude,stability"
    assert len({r.split(",")[0] for r in rows[1:]}) == 11
    regions = json.loads((tmp_path / "unfold_HH1_regions.json").read_text())
    assert len(regions["regions_b"]) == 6 and len(regions["regions_a_tau"]) == 6


def test_simulate_sweep(tmp_path):
    assert run(tmp_path, "simulate", "--sweep-a", "-0.8", "-0.6", "--sweep-n", "3",
               "--periods", "20", "--tau", "0.19214") == 0
    rows = (tmp_path / "simulate_sweep.csv").read_text().splitlines()
    assert len(rows) == 4


def test_continue_short_run(tmp_path):
    assert run(tmp_path, "continue", "--a-range", "-0.7", "-0.6", "--max-points", "12",
               "--no-switch", "--modes", "in-phase") == 0
    rows = (tmp_path / "branch_in-phase.csv").read_text().splitlines()
    assert 2 < len(rows) <= 13
    ev = json.loads((tmp_path / "branch_in-phase_events.json").read_text())
    assert ev["events"][0]["kind"] == "torus"


def test_torus_partial_exit(tmp_path):
    assert run(tmp_path, "torus", "--max-points", "2", "--to-locking") == 4
    assert (tmp_path / "torus_branch.csv").read_text().count("\n") == 3
    meta = json.loads((tmp_path / "torus_start.json").read_text())
    assert meta["N"] == 12


def test_verify_command(tmp_path):
    assert run(tmp_path, "verify") == 0
    rep = (tmp_path / "verify_report.txt").read_text()
    assert "FAIL" not in rep
