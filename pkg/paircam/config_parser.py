import json
import os

import tomlkit

from paircam.exceptions import NoFilepathError, UnsupportedConfigFormatError


class ConfigParser:
    """
    Experiment configuration parser

    Parameters
    ----------
    filepath: str
        Path to config file to load from or write to (optional)
    """

    def __init__(self, filepath=None):
        self.filepath = filepath
        self.config = dict()

        if self.filepath:
            self.load()

    def _set_filepath(self, filepath):
        """
        Set config filepath

        Parameters
        ----------
        filepath: str
            Path to config file to load

        Raises
        ------
        NoFilepathError
            If both filepath and self.filepath are None
        """
        if not filepath:
            if not self.filepath:
                raise NoFilepathError()
        else:
            self.filepath = filepath

    def _load_json(self):
        with open(self.filepath, "rt") as f_in:
            self.config = json.load(f_in)

    def _load_toml(self):
        with open(self.filepath, "rt") as f_in:
            self.config = tomlkit.loads(f_in.read()).unwrap()

    def _write_json(self):
        self.filepath = os.path.splitext(self.filepath)[0] + ".json"
        with open(self.filepath, "wt") as f_out:
            json.dump(self.config, f_out, indent=2)
            f_out.write("\n")

    def _write_toml(self):
        self.filepath = os.path.splitext(self.filepath)[0] + ".toml"
        with open(self.filepath, "wt") as f_out:
            f_out.write(tomlkit.dumps(_drop_none(self.config)))

    def load(self, filepath=None, config_format=None):
        """
        Load configuration file.

        Parameters
        ----------
        filepath: str
            Path to config file to load (optional)
        config_format: str
            Config file format, either `json` or `toml`. If None, the format will be
            inferred from the filename extension. (optional)
        """
        self._set_filepath(filepath)

        if not config_format:
            config_format = os.path.splitext(self.filepath)[1].lower().lstrip(".")

        if config_format == "json":
            self._load_json()
        elif config_format == "toml":
            self._load_toml()
        else:
            raise UnsupportedConfigFormatError(
                "Configuration file should have extension `json` or `toml`, not "
                f"`{config_format}`",
            )

    def write(self, filepath=None, config_format="json"):
        """
        Write configuration to file.

        Parameters
        ----------
        filepath: str
            Path where config file will be written (optional)
        config_format: str
            Config file format to write, `json` (default) or `toml` (optional)
        """
        self._set_filepath(filepath)

        if config_format.lower() == "json":
            self._write_json()
        elif config_format.lower() == "toml":
            self._write_toml()
        else:
            raise UnsupportedConfigFormatError(config_format)


def _drop_none(value):
    """TOML has no null; omit unset keys."""
    if isinstance(value, dict):
        return {k: _drop_none(v) for k, v in value.items() if v is not None}
    if isinstance(value, list):
        return [_drop_none(v) for v in value]
    return value
