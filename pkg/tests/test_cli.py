import csv
import hashlib
import json
from pathlib import Path
from unittest.mock import patch

import pytest
from click.testing import CliRunner

from app.artifacts import read_config
from app.config import settings
from app.errors import QuadratureError, SimulationError
from app.main import cli

STUDIES = Path(__file__).resolve().parent.parent / "studies"


def write_config(tmp_path: Path, text: str, name: str = "config.toml") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


TRAP = """
[coefficient]
kind = "power_law"
alpha = 0.25

[problem]
x0 = 0.0

[study]
kind = "trap_control"
levels = [8]
n_paths = 200
seed = 4
"""

STRONG = """
[coefficient]
kind = "power_law"
alpha = 0.25

[problem]
x0 = 1.0

[study]
kind = "strong_cauchy"
levels = [2, 4, 6]
finest_level = 8
n_paths = 300
seed = 9
"""


@pytest.fixture
def cli_runner():
    return CliRunner()


def test_classify_integrable_power_law(cli_runner):
    result = cli_runner.invoke(cli, ["classify", str(STUDIES / "classify_power_025.toml")])
    assert result.exit_code == 0
    assert "vanishes_as_eps_to_zero" in result.stdout
    assert "integrability assumption holds: True" in result.stdout


def test_classify_square_root_diverges(cli_runner):
    result = cli_runner.invoke(cli, ["classify", str(STUDIES / "classify_power_05.toml")])
    assert result.exit_code == 1
    assert "divergent" in result.stdout


def test_classify_missing_alpha_is_a_usage_error(cli_runner, tmp_path):
    config = write_config(tmp_path, '[coefficient]\nkind = "power_law"\n')
    result = cli_runner.invoke(cli, ["classify", str(config)])
    assert result.exit_code == 2


def test_classify_rejects_broken_toml(cli_runner, tmp_path):
    config = write_config(tmp_path, "[coefficient\nkind = ")
    assert cli_runner.invoke(cli, ["classify", str(config)]).exit_code == 2
    assert cli_runner.invoke(cli, ["classify", str(tmp_path / "missing.toml")]).exit_code == 2


def test_classify_custom_coefficient_reference(cli_runner, tmp_path):
    config = write_config(
        tmp_path,
        '[coefficient]\nkind = "custom"\nfunction = "math:fabs"\nzero_set = [0.0]\ncontinuity_attested = true\n',
    )
    result = cli_runner.invoke(cli, ["classify", str(config)])
    assert result.exit_code == 1
    assert "non-integrable set: [0.0]" in result.stdout


def test_run_trap_control_writes_artifacts(cli_runner, tmp_path):
    config = write_config(tmp_path, TRAP)
    out_dir = tmp_path / "out"
    result = cli_runner.invoke(cli, ["run", str(config), "--out-dir", str(out_dir)])
    assert result.exit_code == 0, result.output

    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "passed"
    assert manifest["config_hash"] == hashlib.sha256(config.read_bytes()).hexdigest()
    assert manifest["seed"] == 4
    assert manifest["finished_at"] is not None
    assert set(manifest["outputs"]) == {"results", "summary"}

    summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["verdict"] is True
    assert {row["arm"] for row in summary["rows"]} == {"no_shift", "shift"}
    assert all("wall_time" not in row for row in summary["rows"])

    with (out_dir / "results.csv").open(encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert {"level", "statistic", "ci_low", "ci_high", "n_paths"} <= set(rows[0])
    assert len(rows) == 2


def test_run_seed_override(cli_runner, tmp_path):
    config = write_config(tmp_path, TRAP)
    out_dir = tmp_path / "out"
    result = cli_runner.invoke(cli, ["run", str(config), "--seed", "77", "--out-dir", str(out_dir)])
    assert result.exit_code == 0, result.output
    summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["provenance"]["seed"] == 77


def test_run_failing_verdict_exits_one(cli_runner, tmp_path):
    config = write_config(tmp_path, STRONG.replace("n_paths = 300", "n_paths = 10"))
    out_dir = tmp_path / "out"
    result = cli_runner.invoke(cli, ["run", str(config), "--out-dir", str(out_dir)])
    assert result.exit_code == 1
    summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["ci_reliable"] is False
    assert json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))["status"] == "failed"


def test_summary_is_identical_across_worker_counts(cli_runner, tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "block_paths_max", 64)
    config = write_config(tmp_path, STRONG)
    outputs = []
    for workers in ("1", "4"):
        out_dir = tmp_path / f"workers-{workers}"
        result = cli_runner.invoke(cli, ["run", str(config), "--workers", workers, "--out-dir", str(out_dir)])
        assert result.exit_code in (0, 1), result.output
        outputs.append((out_dir / "summary.json").read_bytes())
    assert outputs[0] == outputs[1]


def test_run_usage_errors(cli_runner, tmp_path):
    no_study = write_config(tmp_path, TRAP.split("[study]")[0], name="no_study.toml")
    assert cli_runner.invoke(cli, ["run", str(no_study), "--out-dir", str(tmp_path / "a")]).exit_code == 2

    trap = write_config(tmp_path, TRAP)
    blocker = tmp_path / "blocker"
    blocker.write_text("", encoding="utf-8")
    assert cli_runner.invoke(cli, ["run", str(trap), "--out-dir", str(blocker / "out")]).exit_code == 2

    moved = write_config(tmp_path, TRAP.replace("x0 = 0.0", "x0 = 1.0"), name="moved.toml")
    assert cli_runner.invoke(cli, ["run", str(moved), "--out-dir", str(tmp_path / "b")]).exit_code == 2

    assert cli_runner.invoke(cli, ["run", str(trap), "--workers", "0"]).exit_code == 2


def test_dump_path_for_brownian_motion(cli_runner, tmp_path):
    config = write_config(tmp_path, '[coefficient]\nkind = "constant"\nvalue = 1.0\n\n[problem]\nx0 = 0.0\n')
    result = cli_runner.invoke(cli, ["dump-path", str(config), "--level", "2", "--seed", "3"])
    assert result.exit_code == 0
    lines = result.stdout.splitlines()
    assert lines[0] == "t,x"
    assert len(lines) == 6
    assert [float(line.split(",")[0]) for line in lines[1:]] == [0.0, 0.25, 0.5, 0.75, 1.0]
    again = cli_runner.invoke(cli, ["dump-path", str(config), "--level", "2", "--seed", "3"])
    assert again.stdout == result.stdout


def test_dump_path_without_shift_stays_at_zero(cli_runner, tmp_path):
    config = write_config(tmp_path, TRAP.split("[study]")[0])
    result = cli_runner.invoke(cli, ["dump-path", str(config), "--level", "6", "--no-shift"])
    assert result.exit_code == 0
    assert all(float(line.split(",")[1]) == 0.0 for line in result.stdout.splitlines()[1:])


def test_dump_path_over_the_dense_cap(cli_runner, tmp_path):
    config = write_config(tmp_path, TRAP.split("[study]")[0])
    assert cli_runner.invoke(cli, ["dump-path", str(config), "--level", "21"]).exit_code == 2
    assert cli_runner.invoke(cli, ["dump-path", str(config), "--level", "40"]).exit_code == 2


def test_shipped_study_configs_parse():
    for path in sorted(STUDIES.glob("*.toml")):
        study_file, digest = read_config(path)
        assert len(digest) == 64
        study_file.coefficient.build()
        if study_file.study is not None:
            study_file.build_problem()


def test_simulation_failure_marks_the_manifest_failed(cli_runner, tmp_path):
    config = write_config(tmp_path, TRAP)
    out_dir = tmp_path / "out"
    with patch("app.main.run_study", side_effect=SimulationError(12, path_index=3)):
        result = cli_runner.invoke(cli, ["run", str(config), "--out-dir", str(out_dir)])
    assert result.exit_code == 1
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "failed"
    assert manifest["outputs"] == {}
    assert not (out_dir / "summary.json").exists()


def test_classify_quadrature_failure_exits_two(cli_runner):
    failure = QuadratureError("quadrature on [-0.00625, -0.003125] did not converge", 1e-3)
    with patch("app.main.classify_coefficient", side_effect=failure):
        result = cli_runner.invoke(cli, ["classify", str(STUDIES / "classify_power_025.toml")])
    assert result.exit_code == 2
    assert "did not converge" in result.output
    assert not isinstance(result.exception, QuadratureError)


def test_classify_rejects_a_coefficient_above_its_growth_bound(cli_runner, tmp_path):
    config = write_config(
        tmp_path,
        '[coefficient]\nkind = "custom"\nfunction = "math:exp"\ncontinuity_attested = true\n',
    )
    result = cli_runner.invoke(cli, ["classify", str(config)])
    assert result.exit_code == 2
    assert "linear_growth_constant" in result.output
