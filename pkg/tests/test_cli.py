import filecmp
import os

import pytest

from evoheat.cli import main
from evoheat.config import ConfigError, parse_config
from evoheat.emit import emit_report, render_summary
from evoheat.experiments import run_experiment
from evoheat.figures import render_figures
from evoheat.reports import CheckReport

KERNEL_TEXT = """\
[experiment]
kind = kernel
dt = 2e-3
horizon = 0.1
x0 = 0
delta_width = 0.03125

[mesh]
topology = circle
extent = 1.0
nodes = 64
"""

MVI_TEXT = """\
[experiment]
kind = verify-mvi
dt = 2e-3
horizon = 0.25
x0 = 0
delta_width = 0.03125

[mesh]
topology = circle
extent = 1.0
nodes = 64

[check]
refinements = 1,2
mvi_tau0 = 0.2
mvi_r0 = 0.1
"""

CG_TEXT = """\
[experiment]
kind = cg-run
dt = 2e-3
horizon = 0.2
x0 = 0
delta_width = 0.03125

[mesh]
topology = circle
extent = 1.0
nodes = 64

[sequence]
kind = conformalPerturbation
k_max = 3
psi = 0.3*sin(2*pi*x)
tau1 = 0.1
"""

# a probe ball this small forces the derived bound under the floating
# floor, so the lower-bound verdict must come back vacuous
VACUOUS_TEXT = """\
[experiment]
kind = verify-cutoff
dt = 2.5e-3
horizon = 0.75
x0 = 0
delta_width = 0.03125

[mesh]
topology = circle
extent = 1.0
nodes = 64

[check]
r_star = 0.4
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def demo_reports():
    return (
        CheckReport(check_id="b.second", verdict="PASS", measured=1.0,
                    bound=2.0),
        CheckReport(check_id="a.first", verdict="VACUOUS",
                    details={"reason": "bound under the floor"}),
        CheckReport(check_id="b.second", verdict="PASS", measured=1.0,
                    bound=2.0, k=2),
    )


# ------------------------------------------------------------------ emit

def test_emit_rejects_empty_and_unknown_format(tmp_path):
    with pytest.raises(ValueError, match="at least one"):
        emit_report((), "text-records", str(tmp_path), "d1")
    with pytest.raises(ValueError, match="format"):
        emit_report(demo_reports(), "xml", str(tmp_path), "d1")


def test_emit_orders_records_and_stamps_digest(tmp_path):
    paths = emit_report(demo_reports(), "text-records", str(tmp_path),
                        "abc123")
    text = open(os.path.join(str(tmp_path), "checks.txt")).read()
    lines = text.strip().splitlines()
    assert lines[1] == "# config=abc123"
    body = [l for l in lines if l.startswith("check=")]
    assert [l.split()[0] for l in body] == [
        "check=a.first", "check=b.second", "check=b.second"]
    assert all("config=abc123" in l for l in body)
    assert sorted(os.path.basename(p) for p in paths) == [
        "checks.txt", "summary.txt"]


def test_emit_is_insensitive_to_report_order(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    emit_report(demo_reports(), "text-records", a, "d")
    emit_report(tuple(reversed(demo_reports())), "text-records", b, "d")
    for name in ("checks.txt", "summary.txt"):
        assert open(os.path.join(a, name)).read() == \
            open(os.path.join(b, name)).read()


def test_summary_lists_verdict_classes_separately():
    text = render_summary(demo_reports(), "d")
    lines = text.splitlines()
    assert any(l.startswith("PASS 2:") and "b.second" in l for l in lines)
    assert any(l.startswith("VACUOUS 1:") and "a.first" in l for l in lines)
    assert any(l.startswith("FAIL 0:") for l in lines)
    assert lines[-1] == "exit_status=2"


def test_emit_csv_tables(tmp_path):
    tables = (("errs", ("k", "err"), ((1, 0.5), (2, 0.25))),)
    paths = emit_report(demo_reports(), "csv-tables", str(tmp_path), "zz",
                        tables=tables)
    text = open(paths[0]).read()
    assert text == "# config=zz\nk,err\n1,0.5\n2,0.25\n"


def test_figures_skip_tables_without_numbers(tmp_path):
    tables = (("names", ("name", "value"), (("a", 1.0), ("b", 2.0))),
              ("series", ("tau", "mass"), ((0.0, 1.0), (0.1, 0.9))),
              ("single", ("tau", "mass"), ((0.0, 1.0),)))
    paths = render_figures(tables, str(tmp_path), "dd")
    assert [os.path.basename(p) for p in paths] == ["series.png"]
    assert os.path.getsize(paths[0]) > 1000


# ------------------------------------------------------------------- cli

def test_kernel_run_writes_reports_tables_figures(tmp_path, capsys):
    cfg = write(tmp_path, "kernel.ini", KERNEL_TEXT)
    out = str(tmp_path / "out")
    assert main(["kernel", "--config", cfg, "--out", out]) == 0
    produced = sorted(os.listdir(out))
    assert produced == ["checks.txt", "final_state.csv", "final_state.png",
                        "mass.csv", "mass.png", "summary.txt"]
    stdout = capsys.readouterr().out
    assert "exit_status=0" in stdout
    assert "PASS" in stdout


def test_two_runs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, "kernel.ini", KERNEL_TEXT)
    out1, out2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    assert main(["kernel", "--config", cfg, "--out", out1]) == 0
    assert main(["kernel", "--config", cfg, "--out", out2]) == 0
    names = sorted(os.listdir(out1))
    assert names == sorted(os.listdir(out2))
    match, mismatch, errors = filecmp.cmpfiles(out1, out2, names,
                                               shallow=False)
    assert mismatch == [] and errors == []
    assert sorted(match) == names


def test_cg_run_emits_decreasing_error_table(tmp_path):
    cfg = write(tmp_path, "cg.ini", CG_TEXT)
    out = str(tmp_path / "out")
    assert main(["cg-run", "--config", cfg, "--out", out]) == 0
    lines = open(os.path.join(out, "cg_errors.csv")).read().splitlines()
    assert lines[1].split(",")[0] == "k"
    errs = [float(l.split(",")[1]) for l in lines[2:]]
    assert len(errs) == 3
    assert errs[0] > errs[1] > errs[2]
    assert os.path.exists(os.path.join(out, "cg_errors.png"))


def test_failing_check_yields_status_one(tmp_path):
    cfg = write(tmp_path, "mvi.ini", MVI_TEXT)
    out = str(tmp_path / "out")
    # zero tolerance for the refinement spread cannot be met
    status = main(["verify-mvi", "--config", cfg, "--out", out,
                   "--tol", "mvi_spread=0.0"])
    assert status == 1
    summary = open(os.path.join(out, "summary.txt")).read()
    assert "mvi.stability" in summary
    assert "exit_status=1" in summary


def test_vacuous_only_yields_warning_status(tmp_path):
    cfg = write(tmp_path, "vac.ini", VACUOUS_TEXT)
    out = str(tmp_path / "out")
    assert main(["verify-cutoff", "--config", cfg, "--out", out]) == 2
    summary = open(os.path.join(out, "summary.txt")).read()
    assert "VACUOUS 1: cutoff.lower_bound" in summary
    assert "PASS 2:" in summary


def test_malformed_expression_names_field_and_exits_three(tmp_path, capsys):
    broken = KERNEL_TEXT + "\n[metric]\nkind = density\n" \
        "expression = 1 + sinh(x)\n"
    cfg = write(tmp_path, "broken.ini", broken)
    status = main(["kernel", "--config", cfg, "--out",
                   str(tmp_path / "out")])
    assert status == 3
    err = capsys.readouterr().err
    assert "metric.expression" in err
    assert "sinh" in err


def test_declared_kind_must_match_subcommand(tmp_path, capsys):
    cfg = write(tmp_path, "kernel.ini", KERNEL_TEXT)
    status = main(["solve", "--config", cfg, "--out", str(tmp_path / "o")])
    assert status == 3
    assert "experiment.kind" in capsys.readouterr().err


def test_missing_config_file_exits_three(tmp_path, capsys):
    status = main(["kernel", "--config", str(tmp_path / "nope.ini"),
                   "--out", str(tmp_path / "o")])
    assert status == 3
    assert "config error" in capsys.readouterr().err


def test_grid_override_changes_the_run(tmp_path):
    cfg = write(tmp_path, "kernel.ini", KERNEL_TEXT)
    out = str(tmp_path / "out")
    assert main(["kernel", "--config", cfg, "--out", out,
                 "--grid", "128", "--no-figures"]) == 0
    lines = open(os.path.join(out, "final_state.csv")).read().splitlines()
    assert len(lines) == 2 + 128  # digest line, header, one row per node
    assert not os.path.exists(os.path.join(out, "mass.png"))


def test_bad_tol_flag_is_a_usage_error(tmp_path):
    cfg = write(tmp_path, "kernel.ini", KERNEL_TEXT)
    with pytest.raises(SystemExit):
        main(["kernel", "--config", cfg, "--tol", "oops"])


def test_run_experiment_rejects_unknown_kind():
    with pytest.raises(ConfigError, match="unknown kind"):
        run_experiment("transmogrify", parse_config(KERNEL_TEXT))
