"""
Tests for YAML configuration handling
"""

import pytest
import yaml
from pydantic import ValidationError

from conftest import ROOT
from src.utils.config import Config


def write_config(tmp_path, data) -> Config:
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(data))
    return Config(str(path))


class TestConfig:
    def test_missing_file_gives_defaults(self, tmp_path):
        config = Config(str(tmp_path / "absent.yaml"))
        assert config.get("clustering.n_start") is None
        pipeline = config.get_pipeline_config()
        assert pipeline.clustering.n_start == 2
        assert pipeline.clustering.pass_fraction == 0.9
        assert config.get_ko_config().n_steps == 10000
        assert config.validate_config() == []

    def test_dot_notation(self, tmp_path):
        config = write_config(tmp_path, {"logging": {"level": "DEBUG"}})
        assert config.get("logging.level") == "DEBUG"
        assert config.get("logging.missing", "x") == "x"
        config.set("gp.nugget", 1e-8)
        assert config.get("gp.nugget") == 1e-8

    def test_sections_build_pipeline_config(self, tmp_path):
        config = write_config(
            tmp_path,
            {
                "app": {"max_concurrent_jobs": 3},
                "reduction": {"truncation_tol": 1e-6, "fixed_rank": None},
                "clustering": {"n_start": 3, "error_threshold": 5e-4, "subcluster": "off"},
                "karcher": {"tol": 1e-9},
                "gp": {"nugget": 1e-9, "length_scale_bounds": [0.01, 10.0]},
                "pipeline": {"core_model": "diagonal", "seed": 4},
            },
        )
        pipeline = config.get_pipeline_config()
        assert pipeline.truncation_tol == 1e-6
        assert pipeline.clustering.n_start == 3
        assert pipeline.clustering.error_threshold == 5e-4
        assert pipeline.clustering.subcluster == "off"
        assert pipeline.karcher.tol == 1e-9
        assert pipeline.gp.length_scale_bounds == (0.01, 10.0)
        assert pipeline.core_model == "diagonal"
        assert pipeline.seed == 4
        assert pipeline.max_workers == 3

    def test_unknown_key_is_rejected(self, tmp_path):
        config = write_config(tmp_path, {"clustering": {"n_strat": 3}})
        with pytest.raises(ValidationError):
            config.get_pipeline_config()
        assert len(config.validate_config()) == 1

    def test_section_must_be_mapping(self, tmp_path):
        config = write_config(tmp_path, {"gp": [1, 2]})
        with pytest.raises(ValueError):
            config.get_pipeline_config()

    def test_ko_section(self, tmp_path):
        config = write_config(tmp_path, {"ko": {"t_final": 3.0, "shape": [40, 25]}})
        assert config.get_ko_config().shape == (40, 25)

    def test_validate_reports_bad_sections(self, tmp_path):
        config = write_config(tmp_path, {"ko": {"dt": 0.007}, "logging": {"level": "LOUD"}})
        issues = config.validate_config()
        assert len(issues) == 2
        assert any("ko" in issue for issue in issues)
        assert any("LOUD" in issue for issue in issues)

    def test_save_round_trip(self, tmp_path):
        config = write_config(tmp_path, {"pipeline": {"seed": 1}})
        config.set("pipeline.seed", 9)
        config.save_config()
        assert Config(str(tmp_path / "config.yaml")).get("pipeline.seed") == 9

    def test_example_file_is_valid(self):
        assert Config(str(ROOT / "config.example.yaml")).validate_config() == []
