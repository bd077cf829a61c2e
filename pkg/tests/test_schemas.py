from datetime import datetime, timezone

import pytest
from pydantic import ValidationError

from app.coefficients import CoefficientKind
from app.errors import ConfigurationError
from app.estimators import EstimatorKind
from app.schemas import (
    CoefficientSection,
    ConvergenceReport,
    Provenance,
    ReportRow,
    RunManifest,
    StudyFile,
    StudyKind,
    StudySection,
)


def test_power_law_sections_need_alpha_in_range():
    assert CoefficientSection(kind="odd_power_law", alpha=0.3).build().kind is CoefficientKind.ODD_POWER_LAW
    with pytest.raises(ValidationError):
        CoefficientSection(kind="power_law")
    with pytest.raises(ValidationError):
        CoefficientSection(kind="power_law", alpha=1.0)
    with pytest.raises(ValidationError):
        CoefficientSection(kind="constant")
    with pytest.raises(ValidationError):
        CoefficientSection(kind="power_law", alpha=0.25, exponent=2)


def test_custom_section_resolves_an_import_reference(caplog):
    spec = CoefficientSection(kind="custom", function="math:fabs", zero_set=[0.0]).build()
    assert spec.kind is CoefficientKind.CUSTOM
    assert spec.zero_set == (0.0,)
    assert spec(-2.0) == 2.0
    assert "not attested" in caplog.text


@pytest.mark.parametrize("reference", ["fabs", "math:", "math:no_such_function", "no_such_module:f", "math:pi"])
def test_bad_custom_references(reference):
    section = CoefficientSection(kind="custom", function=reference, continuity_attested=True)
    with pytest.raises(ConfigurationError):
        section.build()


def test_study_section_defaults_and_ordering():
    study = StudySection(kind="occupation_scaling", levels=[8, 10], n_paths=100, eps_ladder=[0.05, 0.2, 0.1])
    assert study.kind is StudyKind.OCCUPATION_SCALING
    assert study.eps_ladder == [0.2, 0.1, 0.05]
    assert study.estimator is EstimatorKind.TENT
    assert study.dominance_factor == 1.0
    assert study.seed == 0


@pytest.mark.parametrize(
    "fields",
    [
        {"levels": [10, 8]},
        {"levels": [4, 4]},
        {"levels": [-1, 2]},
        {"levels": []},
        {"n_paths": 1},
        {"eps_ladder": [0.1, 0.0]},
        {"seed": -1},
        {"p": 0.5},
        {"kind": "ergodic"},
    ],
)
def test_study_section_rejects(fields):
    base = {"kind": "weak_ks", "levels": [2, 4], "n_paths": 100}
    with pytest.raises(ValidationError):
        StudySection(**{**base, **fields})


def test_study_file_builds_its_problem():
    document = {
        "coefficient": {"kind": "power_law", "alpha": 0.25},
        "problem": {"x0": 0.5, "horizon": 2.0},
    }
    problem = StudyFile.model_validate(document).build_problem()
    assert (problem.x0, problem.horizon) == (0.5, 2.0)
    with pytest.raises(ConfigurationError):
        StudyFile.model_validate({"coefficient": document["coefficient"]}).build_problem()


def test_summary_drops_wall_times():
    report = ConvergenceReport(
        study=StudyKind.TRAP_CONTROL,
        rows=[ReportRow(level=4, statistic=0.5, n_paths=10, arm="shift", wall_time=1.25)],
        verdict=True,
        ci_reliable=False,
        provenance=Provenance(seed=1, config_hash="abc", code_version="0.1.0"),
    )
    summary = report.summary()
    assert "wall_time" not in summary["rows"][0]
    assert summary["rows"][0]["arm"] == "shift"
    assert summary["study"] == "trap_control"
    assert report.rows[0].wall_time == 1.25


def test_manifest_starts_running():
    manifest = RunManifest(
        config_path="study.toml",
        config_hash="abc",
        seed=3,
        workers=2,
        started_at=datetime.now(timezone.utc),
        code_version="0.1.0",
    )
    assert manifest.status == "running"
    assert manifest.finished_at is None
    with pytest.raises(ValidationError):
        RunManifest.model_validate({**manifest.model_dump(), "status": "paused"})


def test_custom_section_enforces_linear_growth():
    steep = CoefficientSection(kind="custom", function="math:exp", continuity_attested=True)
    with pytest.raises(ConfigurationError, match="linear_growth_constant"):
        steep.build()
    bounded = CoefficientSection(
        kind="custom", function="math:exp", linear_growth_constant=3000.0, continuity_attested=True
    )
    assert bounded.build()(0.0) == 1.0
