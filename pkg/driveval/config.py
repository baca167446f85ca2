import hashlib
import json
import os
import sys
from pathlib import Path

from ._defaults import default_output_dir
from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Allowed keys and types of the study configuration file. The ``models`` entries are
# validated when the model family is built.
_config_schema = {
    "study": {
        "seed": (int,),
        "trials": (int,),
        "towns": (list,),
        "validation_hours": (int, float),
        "family": (str,),
    },
    "offline": {
        "T": (int,),
        "sigma": (int, float),
        "alpha": (int, float),
    },
    "models": None,
}


def _validate_config_dict(config_dict):
    if not isinstance(config_dict, dict):
        raise ConfigError(f"Configuration must be a table: {config_dict!r}")
    for table, value in config_dict.items():
        if table not in _config_schema:
            raise ConfigError(f"Unknown configuration table {table!r}. Supported: {sorted(_config_schema)}")
        keys = _config_schema[table]
        if keys is None:
            if not isinstance(value, list) or not all(isinstance(v, dict) for v in value):
                raise ConfigError(f"Configuration entry {table!r} must be an array of tables")
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"Configuration entry {table!r} must be a table: {value!r}")
        for key, v in value.items():
            if key not in keys:
                raise ConfigError(f"Unknown key {key!r} in table {table!r}. Supported: {sorted(keys)}")
            if isinstance(v, bool) or not isinstance(v, keys[key]):
                raise ConfigError(f"Key {key!r} in table {table!r} has invalid type: {v!r}")


def parse_config(text):
    """
    Parse and validate the TOML text of a study configuration.

    Raises
    ------
    ConfigError
        The text is not valid TOML or does not follow the configuration schema.
    """
    try:
        config_dict = tomllib.loads(text)
    except tomllib.TOMLDecodeError as ex:
        raise ConfigError(f"Failed to parse configuration: {ex}") from ex
    _validate_config_dict(config_dict)
    return config_dict


def load_config(path):
    try:
        with open(path, "rb") as f:
            text = f.read().decode("utf-8")
    except (OSError, UnicodeDecodeError) as ex:
        raise ConfigError(f"Failed to read configuration file {str(path)!r}: {ex}") from ex
    return parse_config(text)


def canonical_json(config_dict):
    return json.dumps(config_dict, sort_keys=True, separators=(",", ":"))


def config_hash(config_dict):
    """
    SHA-256 hash (hex) of the canonical JSON form of a configuration.
    """
    return hashlib.sha256(canonical_json(config_dict).encode("utf-8")).hexdigest()


def substream_seed(master, component, index=0):
    """
    Seed of the random stream ``(component, index)`` derived from the master seed.
    The seed is the SHA-256 hash of the three parts truncated to 63 bits.
    """
    digest = hashlib.sha256(f"{master}|{component}|{index}".encode("utf-8")).hexdigest()
    return int(digest[:16], 16) & (2**63 - 1)


def resolve_output_dir(out=None):
    """
    Output directory: the explicit value, then ``DRIVEVAL_OUT``, then ``./driveval-out``.
    """
    out = out or os.environ.get("DRIVEVAL_OUT", None) or default_output_dir
    return Path(out)
