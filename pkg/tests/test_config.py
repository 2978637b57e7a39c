import json
import logging

import pytest

from salprop.common import (
    EXIT_DATA,
    EXIT_IO,
    EXIT_USAGE,
    IdMismatch,
    ParseError,
    UsageError,
    atomic_write_text,
    exit_code_for,
    fallback_message,
    header_comment,
    read_csv_rows,
    render_csv,
)
from salprop.config import PARAMS, RunConfig, build_config, load_config_file, save_config_file


class TestRunConfig:
    def test_defaults(self, config):
        expected = dict(
            alpha=0.65, nms_theta=0.75, max_n=1000, T=5.0, beta=0.8, k=0.5, min_len=15,
            min_mag=40.0, link_radius=15.0, seed=42, C=1.0, max_passes=200,
        )
        for key, value in expected.items():
            assert getattr(config, key) == value

    def test_registry_covers_every_field(self):
        assert [key for key, _flag, _help in PARAMS] == list(RunConfig.model_fields)
        assert len({flag for _key, flag, _help in PARAMS}) == len(PARAMS)

    def test_overrides(self):
        cfg = build_config({"alpha": 0.7, "max_n": 10}, env={})
        assert (cfg.alpha, cfg.max_n) == (0.7, 10)

    @pytest.mark.parametrize(
        "values",
        [{"alpha": 1.0}, {"nms_theta": 0.0}, {"max_n": 0}, {"T": -1.0}, {"colour": 3}, {"scale_min": 0.5, "scale_max": 0.4}],
    )
    def test_invalid_values(self, values):
        with pytest.raises(UsageError):
            build_config(values, env={})

    def test_seed_from_environment(self):
        assert build_config({"seed": 1}, env={"SALPROP_SEED": "77"}).seed == 77
        assert build_config({"seed": 1}, env={"SALPROP_SEED": ""}).seed == 1

    def test_bad_seed_in_environment(self):
        with pytest.raises(UsageError):
            build_config({}, env={"SALPROP_SEED": "lots"})

    def test_frozen(self, config):
        with pytest.raises(Exception):
            config.alpha = 0.5

    def test_flags_follow_registry_order(self, config):
        assert list(config.as_flags()) == [key for key, _flag, _help in PARAMS]


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        cfg = build_config({"beta": 0.6, "top_k": 50}, env={})
        path = save_config_file(cfg, tmp_path / "run.json", note="detect")
        doc = json.loads(path.read_text())
        assert doc["kind"] == "salprop_config"
        assert doc["note"] == "detect"
        assert build_config(load_config_file(path), env={}) == cfg

    def test_wrong_kind(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"kind": "tune", "params": {}}))
        with pytest.raises(UsageError):
            load_config_file(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{alpha: ")
        with pytest.raises(UsageError):
            load_config_file(path)


class TestCommon:
    @pytest.mark.parametrize(
        "error, code",
        [
            (UsageError("x"), EXIT_USAGE),
            (FileNotFoundError("x"), EXIT_IO),
            (PermissionError("x"), EXIT_IO),
            (ParseError("x"), EXIT_DATA),
            (IdMismatch("x"), EXIT_DATA),
            (RuntimeError("x"), EXIT_DATA),
        ],
    )
    def test_exit_codes(self, error, code):
        assert exit_code_for(error) == code

    def test_data_errors_are_value_errors(self):
        assert isinstance(ParseError("x"), ValueError)

    def test_header_comment(self):
        assert header_comment("detect", {"alpha": 0.65, "seed": 42}) == "# salprop detect alpha=0.65 seed=42\n"

    def test_csv_round_trip(self, tmp_path):
        text = render_csv(["a", "b"], [(1, "x,y"), (2, "z")], comment="# note\n")
        path = atomic_write_text(tmp_path / "out" / "t.csv", text)
        assert read_csv_rows(path) == [["a", "b"], ["1", "x,y"], ["2", "z"]]
        assert [p.name for p in path.parent.iterdir()] == ["t.csv"]

    def test_fallback_message(self, caplog):
        with caplog.at_level(logging.WARNING):
            fallback_message("Edge map", "file missing", "the built-in detector")
        assert "[FALLBACK] Edge map unavailable" in caplog.text
        assert "the built-in detector" in caplog.text
