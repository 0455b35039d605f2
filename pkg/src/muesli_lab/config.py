"""INI run-configuration files.

Three sections are recognised:

``[run]``
    ``mdp`` (``aliased``, ``chain:N``, ``random:S:A:SEED`` or a path to an MDP
    JSON file, relative paths resolved against the config file),
    ``reward_scale`` and ``output_dir``.
``[train]``
    Any :class:`~muesli_lab.trainer.TrainConfig` field except ``update``.
``[update]``
    Any :class:`~muesli_lab.updates.UpdateConfig` field.

Unknown sections or keys are rejected.  ``none`` sets an optional field to None.
"""

import configparser
import dataclasses
import io
import os
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

from ._validation import ValidationError
from .env import aliased_mdp, chain_mdp, load_mdp, random_mdp
from .trainer import TrainConfig
from .updates import UpdateConfig

OUTPUT_DIR_ENV = "MUESLI_LAB_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "muesli_out"
RUN_KEYS = ("mdp", "reward_scale", "output_dir")


@dataclass(frozen=True)
class RunSpec:
    train: TrainConfig = field(default_factory=TrainConfig)
    mdp: str = "aliased"
    reward_scale: float = 1.0
    output_dir: str = DEFAULT_OUTPUT_DIR
    base_dir: str = "."

    def build_mdp(self):
        mdp = resolve_mdp(self.mdp, self.base_dir)
        return mdp if self.reward_scale == 1.0 else mdp.with_reward_scale(self.reward_scale)

    def with_overrides(self, overrides):
        """Apply ``{key: text}``; keys may be bare or ``section.key``."""
        spec = self
        train, update = {}, {}
        for raw_key, text in overrides.items():
            section, key = _locate(raw_key)
            if section == "run":
                spec = replace(spec, **{key: _parse_run(key, text)})
            elif section == "train":
                train[key] = _parse(TrainConfig, key, text)
            else:
                update[key] = _parse(UpdateConfig, key, text)
        upd = replace(spec.train.update, **update) if update else spec.train.update
        return replace(spec, train=replace(spec.train, update=upd, **train))

    def output_path(self, cli_value=None):
        if cli_value:
            return Path(cli_value)
        env = os.environ.get(OUTPUT_DIR_ENV)
        if env:
            return Path(env)
        return Path(self.output_dir)


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls)}


TRAIN_FIELDS = tuple(k for k in _fields(TrainConfig) if k != "update")
UPDATE_FIELDS = tuple(_fields(UpdateConfig))


def _locate(key):
    if "." in key:
        section, name = key.split(".", 1)
        allowed = {"run": RUN_KEYS, "train": TRAIN_FIELDS, "update": UPDATE_FIELDS}.get(section)
        if allowed is None or name not in allowed:
            raise ValidationError(f"unknown config key {key!r}")
        return section, name
    hits = [s for s, names in (("run", RUN_KEYS), ("train", TRAIN_FIELDS), ("update", UPDATE_FIELDS))
            if key in names]
    if not hits:
        raise ValidationError(f"unknown config key {key!r}")
    return hits[0], key


def _parse_value(tp, text, name):
    text = text.strip()
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if text.lower() == "none":
            return None
        tp = args[0]
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except ValueError:
        raise ValidationError(f"cannot parse {name} = {text!r} as {tp.__name__}") from None


def _parse(cls, key, text):
    hints = typing.get_type_hints(cls)
    return _parse_value(hints[key], text, key)


def _parse_run(key, text):
    return float(text) if key == "reward_scale" else text.strip()


def resolve_mdp(source, base_dir="."):
    source = source.strip()
    if source == "aliased":
        return aliased_mdp()
    if source.startswith("chain:"):
        return chain_mdp(int(source.split(":")[1]))
    if source.startswith("random:"):
        parts = source.split(":")
        if len(parts) != 4:
            raise ValidationError("random MDP source must be random:STATES:ACTIONS:SEED")
        return random_mdp(int(parts[1]), int(parts[2]), seed=int(parts[3]))
    path = Path(source)
    if not path.is_absolute():
        path = Path(base_dir) / path
    return load_mdp(path)


def parse_config(text, base_dir="."):
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from None
    overrides = {}
    for section in parser.sections():
        if section not in ("run", "train", "update"):
            raise ValidationError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            overrides[f"{section}.{key}"] = value
    return RunSpec(base_dir=str(base_dir)).with_overrides(overrides)


BUNDLED_DIR = Path(__file__).parent / "data"


def bundled_path(name):
    """Path of a file shipped in the package data directory."""
    return BUNDLED_DIR / name


def load_config(path):
    """Read a config file; bare names of bundled configs also resolve."""
    path = Path(path)
    if not path.exists() and (BUNDLED_DIR / path.name).exists() and path.parent == Path("."):
        path = BUNDLED_DIR / path.name
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)


def _fmt(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(spec):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {k: _fmt(getattr(spec, k)) for k in RUN_KEYS}
    parser["train"] = {k: _fmt(getattr(spec.train, k)) for k in TRAIN_FIELDS}
    parser["update"] = {k: _fmt(getattr(spec.train.update, k)) for k in UPDATE_FIELDS}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
