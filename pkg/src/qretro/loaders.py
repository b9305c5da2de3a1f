"""Reading JSON inputs into the schemas of ``qretro.models``."""
from __future__ import annotations

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Union

from pydantic import ValidationError

from qretro.errors import ModelFileError
from qretro.models.model_file import ModelFile
from qretro.models.run_config import RunConfig
from qretro.models.scenario_file import ScenarioFile

logger = logging.getLogger(__name__)


class ConfigKind(str, Enum):
    MODEL = "model"
    SCENARIO = "scenario"
    RUN = "run"


def read_json(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ModelFileError(f"cannot read {path}: {e.strerror}") from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFileError(f"malformed JSON in {path}: {e.msg}", line=e.lineno, column=e.colno) from e
    if not isinstance(document, dict):
        raise ModelFileError(f"{path} must contain a JSON object at the top level")
    return document


def detect_kind(document: dict) -> ConfigKind:
    if "scheme" in document:
        return ConfigKind.SCENARIO
    if "n_modes" in document:
        return ConfigKind.MODEL
    return ConfigKind.RUN


def _parse(schema, document: dict, path: Path):
    try:
        return schema.model_validate(document)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ModelFileError(f"invalid {schema.__name__} in {path}: {problems}") from e


def load_model_file(path: Union[str, Path]) -> ModelFile:
    return _parse(ModelFile, read_json(path), Path(path))


def load_scenario(path: Union[str, Path]) -> ScenarioFile:
    return _parse(ScenarioFile, read_json(path), Path(path))


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Parse a run config and resolve its relative paths against the file's directory."""
    path = Path(path)
    config = _parse(RunConfig, read_json(path), path)
    base = path.parent
    updates = {}
    for key in ("model", "scenario", "record", "out"):
        value = getattr(config, key)
        if value is not None and not Path(value).is_absolute():
            updates[key] = str(base / value)
    return config.model_copy(update=updates)


def load_any(path: Union[str, Path]) -> Union[ModelFile, ScenarioFile, RunConfig]:
    """Load a config of whichever kind its top-level keys announce."""
    path = Path(path)
    document = read_json(path)
    kind = detect_kind(document)
    logger.debug("%s detected as a %s config", path, kind.value)
    if kind is ConfigKind.SCENARIO:
        return _parse(ScenarioFile, document, path)
    if kind is ConfigKind.MODEL:
        return _parse(ModelFile, document, path)
    return load_run_config(path)
