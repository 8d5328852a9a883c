"""
YAML model and policy files.

A model file is a mapping with keys `subs`, `qbar_cross`, `rbar_cross` and
`risk_factor`; every sub-population entry has n, f, A, B, A_bar, B_bar, Q,
R, sigma_x, sigma_w, alpha and optionally mu (default 1). Matrices are
nested lists; scalars stand for 1x1 matrices and a flat alpha list is a
single feature column. Unknown keys are errors.
"""
import logging
from pathlib import Path
from typing import Any, Optional, Union

import yaml
from pydantic import ValidationError

from .errors import ConfigError, InvalidModel
from .models import Policy, TeamModel
from .team_model import validate_model

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _line_of(text: str, loc: tuple) -> Optional[int]:
    """1-based line of the YAML node addressed by a pydantic error location, if it can be found."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = None
    for part in loc:
        if isinstance(node, yaml.MappingNode) and isinstance(part, str):
            match = next(((k, v) for k, v in node.value if k.value == part), None)
            if match is None:
                break
            line = match[0].start_mark.line + 1
            node = match[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    return line


def _load_yaml(path: PathLike, what: str) -> tuple[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} file {path}: {exc}", field=what) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{path}: invalid YAML: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return text, data


def _validation_to_config_error(exc: ValidationError, text: str, path: PathLike) -> ConfigError:
    first = exc.errors()[0]
    loc = tuple(first["loc"])
    field = ".".join(str(part) for part in loc)
    return ConfigError(f"{path}: {first['msg']}", field=field or None, line=_line_of(text, loc))


def parse_model(path: PathLike, validate: bool = True) -> TeamModel:
    """
    Read a TeamModel from a YAML file.

    Raises:
        ConfigError: unreadable file, bad YAML, unknown or malformed keys
        InvalidModel: the model parses but violates an invariant (when validate is set)
    """
    text, data = _load_yaml(path, "model_path")
    try:
        model = TeamModel.model_validate(data)
    except ValidationError as exc:
        raise _validation_to_config_error(exc, text, path) from exc
    if validate:
        report = validate_model(model)
        if not report.is_valid:
            raise InvalidModel(report)
    logger.info("loaded model %s: %d sub-population(s), Dx=%d, Du=%d", path, len(model.subs), model.Dx, model.Du)
    return model


def serialize_model(m: TeamModel) -> str:
    return yaml.safe_dump(m.model_dump(), sort_keys=False)


def write_model(m: TeamModel, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(serialize_model(m))
    return path


def same_model(a: TeamModel, b: TeamModel) -> bool:
    """Field-for-field equality (exact float comparison)."""
    return a.model_dump() == b.model_dump()


def load_policy(path: PathLike) -> Policy:
    text, data = _load_yaml(path, "policy_file")
    try:
        return Policy.model_validate(data)
    except ValidationError as exc:
        raise _validation_to_config_error(exc, text, path) from exc


def dump_policy(p: Policy, path: PathLike) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(p.model_dump(), sort_keys=False))
    return path
