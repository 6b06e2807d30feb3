import pandas as pd
import pytest

from meshfree import cli
from meshfree.checks import CheckResult
from meshfree.nodegen import NodeType
from meshfree.records import read_meta, read_nodes, read_records


def test_run_peak_without_adaptation(tmp_path, capsys):
    out = tmp_path / "peak"
    assert cli.main(["run", "--problem", "peak", "--max-iter", "0", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "iter   0" in printed and "e_inf=" in printed
    assert len(read_records(out)) == 1
    assert read_meta(out).status == "ok"
    assert (out / "solver.log").exists()


def test_run_fretting_reports_loading_and_traction_difference(tmp_path, capsys):
    reference = tmp_path / "ref.csv"
    pd.DataFrame({"x": [-0.2, -0.1, 0.0, 0.1, 0.2], "sigma_xx": [-100.0, -150.0, -200.0, -150.0, -100.0]}) \
        .to_csv(reference, index=False)
    out = tmp_path / "fretting"
    code = cli.main(["run", "--problem", "fretting", "--max-iter", "0", "--ref", str(reference), "--out", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "Hertz: a=0.2067 mm" in printed
    assert printed.count("loading:") == 3
    assert "mean|dsxx|=" in printed
    assert read_records(out)[0].mean_abs_dsxx is not None
    nodes = read_nodes(out / "nodes_0.csv")
    assert (nodes.loc[nodes["type"] == NodeType.DIRICHLET, "eta"] == 0.0).all()


def test_invalid_problem_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["run", "--problem", "plate", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_config_errors_exit_with_usage_status(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text('{"problem": "peak", "beta_h": 0.5, "alpha_h": 0.2}')
    assert cli.main(["run", "--config", str(config), "--out", str(tmp_path / "run")]) == 2
    assert "[cli]" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["run"]) == 2


def test_aborting_errors_exit_nonzero_with_module_prefix(tmp_path, capsys, monkeypatch):
    from meshfree.errors import SolverFailureError

    def failing(config, recorder, on_iteration=None):
        raise SolverFailureError("stagnated").tag(0)

    monkeypatch.setattr(cli, "run_config", failing)
    out = tmp_path / "run"
    assert cli.main(["run", "--problem", "peak", "--out", str(out)]) == 1
    assert "[system] stagnated (iteration 0)" in capsys.readouterr().err
    assert read_meta(out).status == "failed"


def test_default_output_directory(runs_dir, monkeypatch):
    monkeypatch.setattr(cli, "RUNS_DIR", str(runs_dir))
    config = cli.load_config(cli.build_parser().parse_args(["run", "--problem", "boussinesq"]))
    path = cli.output_dir(config)
    assert path.parent == runs_dir and path.name.startswith("boussinesq-")


def test_study_subcommand(tmp_path, capsys):
    config = tmp_path / "study.json"
    config.write_text('{"problem": "peak", "peak": {"strength": 5.0}, "study": {"h": [0.1], "m": [2], "seeds": 2}}')
    out = tmp_path / "study"
    assert cli.main(["study", "--config", str(config), "--out", str(out)]) == 0
    assert "2 cells, 0 failed" in capsys.readouterr().out
    assert len(pd.read_csv(out / "study.csv")) == 2


@pytest.mark.parametrize("passed, code", [(True, 0), (False, 1)])
def test_check_subcommand_exit_status(monkeypatch, capsys, passed, code):
    results = [CheckResult("hertz-half-width", True, "ok"), CheckResult("other", passed, "detail")]
    monkeypatch.setattr(cli, "run_checks", lambda: results)
    assert cli.main(["check"]) == code
    printed = capsys.readouterr().out
    assert "PASS  hertz-half-width: ok" in printed
    assert ("FAIL  other" in printed) != passed
