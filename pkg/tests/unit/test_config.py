import pytest

from votecraft.config import (
    THREADS_ENV,
    ExperimentConfig,
    apply_overrides,
    parse_override,
    resolve_threads,
)
from votecraft.errors import ConfigError, ReportIoError


class TestExperimentConfig:
    """
    Tests for building and validating experiment configs.
    """

    def test_defaults(self):
        """
        Test the defaults of an empty document.
        """
        config = ExperimentConfig.from_dict({})
        assert config.algorithms == ("wvwv", "meanshift")
        assert config.trials == 20
        assert config.timing_repetitions == 5
        assert config.scene.point_count == 12800

    def test_master_seed_drives_scene_seed(self):
        """
        Test that the scene seed always follows the master seed.
        """
        config = ExperimentConfig.from_dict({"master_seed": 42, "scene": {"seed": 7}})
        assert config.scene.seed == 42

    @pytest.mark.parametrize("data", [
        {"trails": 3},
        {"algorithms": ["ransac"]},
        {"algorithms": []},
        {"algorithms": ["wvwv", "wvwv"]},
        {"trials": 0},
        {"timing_repetitions": 2},
        {"pose_weighting": "median"},
        {"rank_tolerance": 0.0},
        {"threads": 0},
        {"meanshift": {"radius": 0.1}},
        {"scene": {"colour": "red"}},
        {"scene": {"shape": "torus"}},
    ])
    def test_invalid(self, data):
        """
        Test that each invalid document raises ConfigError.
        """
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(data)

    def test_single_algorithm_string(self):
        """
        Test that a bare algorithm name becomes a one-element tuple.
        """
        assert ExperimentConfig(algorithms="wvwv").algorithms == ("wvwv",)

    def test_fingerprint(self):
        """
        Test that the fingerprint ignores outputs and threads but not the trials.
        """
        base = ExperimentConfig.from_dict({"trials": 3})
        same = ExperimentConfig.from_dict({"trials": 3, "threads": 8,
                                           "output": {"csv": "out.csv"}})
        other = ExperimentConfig.from_dict({"trials": 4})
        assert len(base.fingerprint()) == 16
        assert base.fingerprint() == same.fingerprint()
        assert base.fingerprint() != other.fingerprint()

    def test_round_trip_through_dict(self):
        """
        Test that to_dict feeds back into from_dict unchanged.
        """
        config = ExperimentConfig.from_dict({"trials": 2, "algorithms": ["wvwv"],
                                             "scene": {"angular_noise_deg": 5.0}})
        assert ExperimentConfig.from_dict(config.to_dict()) == config

    def test_with_overrides(self):
        """
        Test dotted overrides on an existing config.
        """
        config = ExperimentConfig().with_overrides(
            ["scene.occlusion_fraction=0.4", "algorithms=[wvwv]", "master_seed=9"])
        assert config.scene.occlusion_fraction == 0.4
        assert config.algorithms == ("wvwv",)
        assert config.scene.seed == 9

    def test_meanshift_config(self):
        """
        Test the diameter-scaled bandwidth and explicit overrides.
        """
        assert ExperimentConfig().meanshift_config(0.2).bandwidth == pytest.approx(0.01)
        explicit = ExperimentConfig(meanshift={"bandwidth": 0.003, "kernel": "flat"})
        settings = explicit.meanshift_config(0.2)
        assert settings.bandwidth == 0.003
        assert settings.kernel == "flat"


class TestConfigFiles:
    """
    Tests for reading YAML experiment files.
    """

    def test_from_file_with_overrides(self, tmp_path):
        """
        Test that overrides win over the file.
        """
        path = tmp_path / "experiment.yaml"
        path.write_text("trials: 5\nscene:\n  point_count: 200\n  shape: sphere\n")
        config = ExperimentConfig.from_file(path, ["scene.point_count=300"])
        assert config.trials == 5
        assert config.scene.point_count == 300
        assert config.scene.symmetric is True

    def test_missing_file(self, tmp_path):
        """
        Test that an unreadable file raises ReportIoError.
        """
        with pytest.raises(ReportIoError):
            ExperimentConfig.from_file(tmp_path / "missing.yaml")

    def test_invalid_yaml(self, tmp_path):
        """
        Test that malformed YAML raises ConfigError.
        """
        path = tmp_path / "broken.yaml"
        path.write_text("trials: [1, 2\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(path)

    def test_non_mapping_document(self, tmp_path):
        """
        Test that a YAML list is not an experiment.
        """
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(path)


class TestOverrides:
    """
    Tests for key=value override parsing.
    """

    def test_parse_override(self):
        """
        Test dotted keys and YAML scalar values.
        """
        assert parse_override("scene.angular_noise_deg=5") == (("scene", "angular_noise_deg"), 5)
        assert parse_override("--trials=3") == (("trials",), 3)
        assert parse_override("algorithms=[wvwv, meanshift]") == (
            ("algorithms",), ["wvwv", "meanshift"])
        assert parse_override("output.csv=") == (("output", "csv"), None)

    def test_malformed_override(self):
        """
        Test that a missing '=' raises ConfigError.
        """
        with pytest.raises(ConfigError):
            parse_override("trials")

    def test_apply_overrides_leaves_input_untouched(self):
        """
        Test that overrides create nested sections on a copy.
        """
        data = {"trials": 1}
        result = apply_overrides(data, ["scene.seed=4", "trials=2"])
        assert result == {"trials": 2, "scene": {"seed": 4}}
        assert data == {"trials": 1}

    def test_override_through_scalar(self):
        """
        Test that a dotted key through a scalar raises ConfigError.
        """
        with pytest.raises(ConfigError):
            apply_overrides({"trials": 1}, ["trials.count=2"])


class TestResolveThreads:
    """
    Tests for thread-count precedence.
    """

    def test_precedence(self, monkeypatch):
        """
        Test CLI over environment over config over CPU count.
        """
        monkeypatch.setenv(THREADS_ENV, "3")
        assert resolve_threads(2, 5) == 2
        assert resolve_threads(None, 5) == 3
        monkeypatch.delenv(THREADS_ENV)
        assert resolve_threads(None, 5) == 5
        assert resolve_threads() >= 1

    def test_invalid(self, monkeypatch):
        """
        Test non-integer and non-positive thread counts.
        """
        monkeypatch.setenv(THREADS_ENV, "many")
        with pytest.raises(ConfigError):
            resolve_threads()
        with pytest.raises(ConfigError):
            resolve_threads(0)
