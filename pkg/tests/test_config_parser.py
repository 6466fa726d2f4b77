import os

import pytest

from paircam.config_parser import ConfigParser
from paircam.exceptions import NoFilepathError, UnsupportedConfigFormatError

TEST_DIR = os.path.dirname(__file__)

EXPECTED_CONFIG = {
    "grid": {"n_pixels": 4, "pitch": 13.0},
    "source_model": {
        "kind": "double_gaussian",
        "sigma_plus": 12.06,
        "sigma_minus": 926.12,
    },
    "source": {"mean_pairs": 2.0},
    "sensor": {"eta": 0.44, "mode": {"kind": "spc", "p10": 0.015}},
    "n_frames": 10,
    "seed": 2024,
    "reconstruction": {"fit": False},
}


class TestConfigParser:
    def test_load_json(self):
        config_file = os.path.join(TEST_DIR, "test_data/config.json")
        config_parser = ConfigParser(config_file)
        assert config_parser.config == EXPECTED_CONFIG

    def test_load_toml(self):
        config_file = os.path.join(TEST_DIR, "test_data/config.toml")
        config_parser = ConfigParser(config_file)
        config_parser.load()
        assert config_parser.config == EXPECTED_CONFIG
        assert type(config_parser.config["grid"]) is dict

    @pytest.mark.parametrize("config_format", ["json", "toml"])
    def test_write(self, tmp_path, config_format):
        config_parser = ConfigParser()
        config_parser.config = dict(EXPECTED_CONFIG, output_dir=None)
        config_parser.write(str(tmp_path / "config_test"), config_format=config_format)
        assert config_parser.filepath.endswith(f".{config_format}")
        config_parser.load()
        if config_format == "toml":
            assert config_parser.config == EXPECTED_CONFIG
        else:
            assert config_parser.config == dict(EXPECTED_CONFIG, output_dir=None)

    def test_no_filepath(self):
        with pytest.raises(NoFilepathError):
            ConfigParser().load()

    def test_unsupported_format(self, tmp_path):
        config_file = tmp_path / "config.txt"
        config_file.write_text("n_frames=10\n")
        with pytest.raises(UnsupportedConfigFormatError):
            ConfigParser(str(config_file))
        with pytest.raises(UnsupportedConfigFormatError):
            ConfigParser().write(str(config_file), config_format="yaml")
