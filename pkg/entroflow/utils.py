import json
from pathlib import Path
from typing import Any

import pendulum
import yaml
from pendulum.datetime import DateTime
from tinydb import Storage
from tinydb_serialization import Serializer


def is_jsonable(x: Any) -> bool:
    try:
        json.dumps(x)
        return True
    except (TypeError, OverflowError):
        return False


def get_readable_gin_config() -> dict:
    """
    Parses the operative gin configuration to a dictionary.
    :return: configurable name -> {parameter: value}; values that are not
        JSON serialisable are stored as their string form
    """
    from gin.config import _OPERATIVE_CONFIG as gin_config

    data = {}
    for key in gin_config.keys():
        name = key[1]
        values = gin_config[key]

        if values:
            subdict = {}
            for k, v in values.items():
                if is_jsonable(v):
                    subdict[k] = v
                else:
                    subdict[k] = v.__str__()
            data[name] = subdict

    return data


def write_json(data: Any, path: Path | str) -> None:
    """Sorted keys, no timestamps: identical inputs give identical bytes."""
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


class YAMLStorage(Storage):
    """The whole history as one YAML document; a missing or unparsable file reads as empty."""

    def __init__(self, path: Path | str) -> None:
        self.path = Path(path)

    def read(self) -> dict[str, Any] | None:
        try:
            return yaml.safe_load(self.path.read_text())
        except (FileNotFoundError, yaml.YAMLError):
            return None

    def write(self, data: dict[str, Any]) -> None:
        self.path.write_text(yaml.dump(data))


class DateTimeSerializer(Serializer):
    OBJ_CLASS = DateTime

    def encode(self, obj: DateTime) -> str:
        return obj.to_iso8601_string()

    def decode(self, s: str) -> DateTime:
        return pendulum.parse(s, strict=False)
