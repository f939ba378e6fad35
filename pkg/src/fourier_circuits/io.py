"""Run configuration files and parameter checkpoints.

Config files are YAML mappings whose keys are :class:`TrainConfig` fields, plus
an optional ``grok`` section (``seeds``, ``threshold``).  Unknown keys and
wrongly typed values are rejected with the offending line number.

Checkpoints are JSON documents.  Every float is written with 17 significant
digits, so loading a checkpoint reproduces the parameters bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .mlp import MlpParams
from .training import TrainConfig
from .transformer import AttnConfig, AttnParams

CHECKPOINT_FORMAT = "fourier-circuits-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """A config file could not be parsed or validated."""


@dataclass(frozen=True)
class GrokOptions:
    seeds: tuple[int, ...] = (0, 1, 2)
    threshold: float = 0.99


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    grok: GrokOptions = field(default_factory=GrokOptions)


_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_TRAIN_DEFAULTS = TrainConfig()


def _coerce(value, default, where: str):
    """Check ``value`` against the type of ``default``; ints are accepted for floats."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        # YAML 1.1 reads "5e-3" as a string; accept any float literal
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    raise ConfigError(f"{where}: unsupported field type")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
        if root is None:
            return RunConfig()
        if not isinstance(root, yaml.MappingNode):
            raise ConfigError(f"{source}:{root.start_mark.line + 1}: top level must be a mapping")
        train_kwargs: dict = {}
        grok_kwargs: dict = {}
        for key_node, value_node in root.value:
            line = key_node.start_mark.line + 1
            key = loader.construct_object(key_node, deep=True)
            where = f"{source}:{line}: {key}"
            value = loader.construct_object(value_node, deep=True)
            if key == "grok":
                grok_kwargs = _parse_grok(loader, value_node, source)
            elif key in _TRAIN_FIELDS:
                if key in train_kwargs:
                    raise ConfigError(f"{where}: duplicate key")
                train_kwargs[key] = _coerce(value, getattr(_TRAIN_DEFAULTS, key), where)
            else:
                raise ConfigError(f"{where}: unknown key")
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{source}:{line}: {exc.problem or exc}") from None
    finally:
        loader.dispose()
    try:
        train = TrainConfig(**train_kwargs)
        grok = GrokOptions(**grok_kwargs)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return RunConfig(train, grok)


def _parse_grok(loader, node, source: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{source}:{node.start_mark.line + 1}: grok must be a mapping")
    out: dict = {}
    for key_node, value_node in node.value:
        line = key_node.start_mark.line + 1
        key = loader.construct_object(key_node, deep=True)
        value = loader.construct_object(value_node, deep=True)
        where = f"{source}:{line}: grok.{key}"
        if key == "seeds":
            if not isinstance(value, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in value):
                raise ConfigError(f"{where}: expected a list of integers")
            if not value:
                raise ConfigError(f"{where}: need at least one seed")
            out["seeds"] = tuple(value)
        elif key == "threshold":
            out["threshold"] = _coerce(value, 0.99, where)
        else:
            raise ConfigError(f"{where}: unknown key")
    return out


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    doc = cfg.train.to_dict()
    doc["grok"] = {"seeds": list(cfg.grok.seeds), "threshold": cfg.grok.threshold}
    return yaml.safe_dump(doc, sort_keys=False)


# ----------------------------------------------------------------------------
# checkpoints


def _encode_array(a: np.ndarray) -> str:
    flat = np.asarray(a, dtype=np.float64).reshape(-1)
    return "[" + ", ".join(_encode_float(x) for x in flat) + "]"


def _encode_float(x) -> str:
    text = format(float(x), ".17g")
    # keep a float marker so JSON does not read "-0" back as the integer 0
    return text if any(c in text for c in ".en") else text + ".0"


def save_checkpoint(path, model, config: dict | None = None) -> None:
    if isinstance(model, MlpParams):
        kind = "mlp"
        meta = {"p": model.p, "k": model.k, "m": model.m}
        arrays = {"U": model.U, "W": model.W}
    elif isinstance(model, AttnParams):
        kind = "attention"
        meta = dataclasses.asdict(model.cfg)
        arrays = model.arrays
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise ValueError(f"parameter {name} has non-finite entries")
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "model": meta,
        "config": config or {},
    }
    lines = ["{"]
    for key, value in header.items():
        lines.append(f"  {json.dumps(key)}: {json.dumps(value, sort_keys=True)},")
    lines.append('  "arrays": {')
    items = list(arrays.items())
    for i, (name, a) in enumerate(items):
        sep = "," if i < len(items) - 1 else ""
        lines.append(f'    {json.dumps(name)}: {{"shape": {list(a.shape)}, "data": {_encode_array(a)}}}{sep}')
    lines.append("  }")
    lines.append("}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


class CheckpointError(ValueError):
    """A checkpoint file is malformed or of an unknown kind."""


def load_checkpoint(path):
    """Returns ``(model, header)`` where ``header`` holds the kind, model metadata and config echo."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    arrays = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]) for name, entry in doc["arrays"].items()
    }
    kind = doc.get("kind")
    if kind == "mlp":
        model = MlpParams(arrays["U"], arrays["W"])
    elif kind == "attention":
        model = AttnParams(AttnConfig(**doc["model"]), arrays)
    else:
        raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")
    header = {k: v for k, v in doc.items() if k != "arrays"}
    return model, header
