import pytest

from lrspatial.errors import ScenarioError
from lrspatial.model import ModelKind
from lrspatial.scenarios import (
    EstimatorSpec,
    bundled_scenario_path,
    load_scenarios,
    parse_scenarios,
)

GRID_DOCUMENT = """
[defaults]
n = 200
replications = 50
seed = 10

[[scenario]]
id = "grid"
dependence = [0.2, 0.8]
tau2 = [0.0, 2.0]
estimators = ["LM", "SLM", "LSLM:100"]

[[scenario]]
id = "single"
dgp = "SEM-noise"
dependence = 0.5
estimators = "LSEM:50, SEM"
"""


def test_grid_expansion(tmp_path):
    path = tmp_path / "grid.toml"
    path.write_text(GRID_DOCUMENT)
    scenarios = load_scenarios(path)

    assert [s.id for s in scenarios] == [
        "grid-dependence0.2-tau20.0",
        "grid-dependence0.2-tau22.0",
        "grid-dependence0.8-tau20.0",
        "grid-dependence0.8-tau22.0",
        "single",
    ]
    assert [s.seed for s in scenarios] == [10, 11, 12, 13, 10]
    assert all(s.n == 200 and s.replications == 50 for s in scenarios)
    assert scenarios[-1].dgp == "SEM-noise"
    assert [e.label for e in scenarios[-1].estimators] == ["LSEM_50", "SEM"]
    assert scenarios[0].max_rank == 100


def test_estimator_labels():
    assert EstimatorSpec.model_validate("lslm:200").label == "LSLM_200"
    spec = EstimatorSpec.model_validate("SLM")
    assert spec.kind == ModelKind.SLM and spec.L is None


@pytest.mark.parametrize("label", ["LSLM", "SLM:20", "SDM", "SAC"])
def test_estimator_label_errors(label):
    with pytest.raises(ValueError):
        EstimatorSpec.model_validate(label)


def test_zero_replications_names_scenario_and_field():
    document = {"scenario": [{"id": "bad", "replications": 0, "estimators": ["LM"]}]}
    with pytest.raises(ScenarioError) as excinfo:
        parse_scenarios(document)
    assert excinfo.value.scenario == "bad"
    assert "replications" in str(excinfo.value)


def test_unknown_key_is_rejected():
    document = {"scenario": [{"id": "typo", "replicatons": 5, "estimators": ["LM"]}]}
    with pytest.raises(ScenarioError, match="replicatons"):
        parse_scenarios(document)


def test_dependence_must_lie_in_unit_interval():
    document = {"scenario": [{"id": "x", "dependence": 1.0, "estimators": ["LM"]}]}
    with pytest.raises(ScenarioError, match="dependence"):
        parse_scenarios(document)


def test_empty_and_unknown_tables():
    with pytest.raises(ScenarioError, match="no"):
        parse_scenarios({"defaults": {"n": 10}})
    with pytest.raises(ScenarioError, match="unknown"):
        parse_scenarios({"scenario": [], "extra": {}})


def test_malformed_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[[scenario]\nid = 1\n")
    with pytest.raises(ScenarioError):
        load_scenarios(path)


@pytest.mark.parametrize(
    "name", ["smoke", "noise-robustness", "misspecified-noise", "effects", "residual-moran"]
)
def test_bundled_documents_parse(name):
    scenarios = load_scenarios(bundled_scenario_path(name))
    assert scenarios


def test_noise_robustness_grid_size():
    scenarios = load_scenarios(bundled_scenario_path("noise-robustness"))
    assert len(scenarios) == 12
    assert {s.tau2 for s in scenarios} == {0.0, 2.0, 4.0}


def test_missing_bundled_document():
    with pytest.raises(ScenarioError):
        bundled_scenario_path("nope")
