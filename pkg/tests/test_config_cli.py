import json

import pytest

from absorbkit.cli import main
from absorbkit.config import PipelineConfig, config_from_dict, load_config
from absorbkit.data import default_contrasts
from absorbkit.errors import ConfigError


def test_defaults():
    cfg = PipelineConfig()
    assert (cfg.seed, cfg.K, cfg.ensemble_top_l, cfg.permutation_iterations) == (42, 5, 3, 1000)
    assert len(cfg.contrasts) == 20
    assert cfg.runs_permutation("J1 vs memory")


def test_toml_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "c.toml").write_text(
        'seed = 3\ncontrasts = ["J1 vs J6"]\n[paths]\ngroup_csv = "g.csv"\nout_dir = "/abs/out"\n'
        '[selection]\nrfe_min_features = 4\n')
    cfg = load_config(tmp_path / "c.toml")
    assert cfg.seed == 3 and cfg.contrasts == ("J1 vs J6",)
    assert cfg.paths.group_csv == str(tmp_path / "g.csv") and cfg.paths.out_dir == "/abs/out"
    assert cfg.selection.rfe_min_features == 4


@pytest.mark.parametrize("bad", [
    {"K": 1}, {"bogus": 1}, {"families": ["XGB"]}, {"contrasts": ["J9 vs counting"]},
    {"ensemble_top_l": 7}, {"selection": {"nope": 1}}, {"model_hyper": {"LR": {"depth": 3}}},
    {"selection_metric": "f1"},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_cli_end_to_end(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_subjects": 6, "n_features": 20, "informative_rois": [1, 2],
                                "effect_size": 2.5, "conditions": ["J1", "counting"],
                                "case_j_runs": 4, "case_control_runs": 4}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "data")]) == 0
    cfg = tmp_path / "run.toml"
    cfg.write_text('contrasts = ["J1 vs counting"]\npermutation_iterations = 0\nK = 3\n'
                   'families = ["LR", "DT", "KNN"]\n'
                   '[paths]\ngroup_csv = "data/group.csv"\ncase_csv = "data/case.csv"\n'
                   'covariates_csv = "data/covariates.csv"\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    capsys.readouterr()
    assert main(["report", "--run", str(tmp_path / "out")]) == 0
    text = capsys.readouterr().out
    assert "Recall/Sens." in text and "J1 vs counting" in text and "Overall mean" in text


def test_cli_exit_codes(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    cfg = tmp_path / "c.toml"
    cfg.write_text('[paths]\ngroup_csv = "nope.csv"\ncase_csv = "nope.csv"\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    cfg.write_text("K = 0\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert main(["report", "--run", str(tmp_path)]) == 3


def test_default_contrasts_cover_named_comparisons():
    names = {c.name for c in default_contrasts()}
    assert {"J vs control", "J vs counting", "J1 vs J6"} <= names
    assert {f"J{i} vs counting" for i in range(1, 7)} <= names
    assert {f"J{i} vs memory" for i in range(1, 7)} <= names
    assert {f"J{i} vs J{i + 1}" for i in range(1, 6)} <= names
