"""Experiment configuration models and parser"""

import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .data import PartitionKind, PartitionSpec, allocation_matrix
from .exceptions import ConfigError
from .federation import AdversaryConfig, AdversaryKind, StrategyConfig, StrategyKind
from .model import ModelKind

MAX_AUDIT_PARTICIPANTS = 8

# dotted key path -> 1-based line in the source file
LineIndex = Dict[str, int]


class DataSource(Enum):
    BLOBS = "blobs"
    CSV = "csv"


class RollingType(Enum):
    HOURLY = "hourly"
    DAILY = "daily"


@dataclass
class ModelConfig:
    kind: ModelKind = ModelKind.LOGISTIC
    hidden_dim: int = 16


@dataclass
class DataConfig:
    """Where samples come from: generated blobs or a CSV file"""
    source: DataSource = DataSource.BLOBS
    # For blobs
    num_classes: int = 4
    input_dim: int = 2
    per_class: int = 100
    separation: float = 6.0
    # For csv
    path: Optional[str] = None
    label_column: str = "label"


@dataclass
class TrainingConfig:
    """Defaults shared by every strategy unless it overrides them"""
    eta: float = 0.01
    mu: float = 0.9
    local_epochs: int = 1
    batch_size: int = 32
    rounds: int = 50


@dataclass
class LoggingConfig:
    """Event log configuration"""
    directory: str = "./logs"
    rolling: RollingType = RollingType.DAILY
    max_age_days: int = 7
    enabled: bool = True


@dataclass
class ExperimentConfig:
    """Main experiment configuration"""
    participants: int = 2
    seed: int = 0
    workers: int = 1
    output_dir: str = "./results"
    valset_fraction: float = 0.2
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    strategies: List[StrategyConfig] = field(default_factory=list)
    adversaries: List[AdversaryConfig] = field(default_factory=list)
    audit_strategy: Optional[str] = None
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def strategy(self, name: str) -> StrategyConfig:
        for strategy in self.strategies:
            if strategy.label == name:
                return strategy
        raise ConfigError(f"Unknown strategy: {name}")


def _expand_dotted(flat: Dict[str, Any]) -> Dict[str, Any]:
    """{'a.b': 1} -> {'a': {'b': 1}}; nested values are expanded recursively"""
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if isinstance(value, dict):
            value = _expand_dotted(value)
        parts = str(key).split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key '{key}' conflicts with a scalar value")
        leaf = parts[-1]
        if isinstance(node.get(leaf), dict) and isinstance(value, dict):
            node[leaf].update(value)
        else:
            node[leaf] = value
    return nested


def _yaml_line_index(text: str) -> LineIndex:
    """Map every key path of a YAML document to the line it is declared on"""
    index: LineIndex = {}

    def walk(node, prefix: str) -> None:
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
                index[path] = key_node.start_mark.line + 1
                walk(value_node, path)

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return index
    walk(root, "")
    return index


def _parse_flat(text: str) -> Tuple[Dict[str, Any], LineIndex]:
    """Parse `section.key = value` lines; values are YAML scalars or flow collections"""
    flat: Dict[str, Any] = {}
    index: LineIndex = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got '{line}'", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", line=number)
        try:
            flat[key] = yaml.safe_load(value) if value else None
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse value for '{key}': {e}", line=number)
        index[key] = number
    return flat, index


def _dotted_lines(index: LineIndex) -> LineIndex:
    """Also register every prefix of a dotted key so section errors can be anchored"""
    full = dict(index)
    for key, line in index.items():
        parts = key.split(".")
        for end in range(1, len(parts)):
            full.setdefault(".".join(parts[:end]), line)
    return full


def load_config(config_path: str) -> ExperimentConfig:
    """Load configuration from a YAML file or a flat dotted `key = value` file"""
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    with open(config_path, "r", encoding="utf-8") as f:
        text = f.read()

    if config_path.endswith((".yaml", ".yml")):
        try:
            config_dict = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {e}", line=mark.line + 1 if mark else None)
        if not isinstance(config_dict, dict):
            raise ConfigError("configuration must be a mapping", line=1)
        lines = _dotted_lines(_yaml_line_index(text))
    else:
        config_dict, flat_lines = _parse_flat(text)
        lines = _dotted_lines(flat_lines)

    return parse_config(_expand_dotted(config_dict), lines)


class _Section:
    """Typed access to one config mapping, remembering key paths for line anchors"""

    def __init__(self, values: Any, path: str, lines: LineIndex):
        if values is None:
            values = {}
        if not isinstance(values, dict):
            raise ConfigError(f"'{path}' must be a section", line=lines.get(path))
        self.values = values
        self.path = path
        self.lines = lines

    def key_path(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def error(self, key: str, message: str) -> ConfigError:
        path = self.key_path(key)
        line = self.lines.get(path)
        if line is None:
            line = self.lines.get(self.path)
        return ConfigError(f"{path}: {message}", line=line)

    def reject_unknown(self, allowed) -> None:
        for key in self.values:
            if key not in allowed:
                raise self.error(key, "unknown key")

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def integer(self, key: str, default: Optional[int], minimum: Optional[int] = None) -> Optional[int]:
        value = self.values.get(key, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(key, f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.error(key, f"must be >= {minimum}, got {value}")
        return value

    def number(self, key: str, default: Optional[float]) -> Optional[float]:
        value = self.values.get(key, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(key, f"expected a number, got {value!r}")
        return float(value)

    def boolean(self, key: str, default: bool) -> bool:
        value = self.values.get(key, default)
        if not isinstance(value, bool):
            raise self.error(key, f"expected true or false, got {value!r}")
        return value

    def choice(self, key: str, enum_type, default):
        value = self.values.get(key, default)
        if isinstance(value, enum_type):
            return value
        try:
            return enum_type(str(value).lower())
        except ValueError:
            options = ", ".join(member.value for member in enum_type)
            raise self.error(key, f"unknown value '{value}' (expected one of: {options})")

    def section(self, key: str) -> "_Section":
        return _Section(self.values.get(key), self.key_path(key), self.lines)


TOP_LEVEL_KEYS = {
    "participants", "seed", "workers", "output_dir", "valset_fraction", "model", "data",
    "partition", "training", "strategy", "strategies", "adversaries", "audit", "logging",
}
STRATEGY_KEYS = {"kind", "mu", "eta", "local_epochs", "batch_size", "rounds", "force_uniform"}
ADVERSARY_KEYS = {"participant", "kind", "noise_std", "match_honest_norm"}


def _parse_strategies(root: _Section, training: TrainingConfig) -> List[StrategyConfig]:
    key = "strategy" if "strategy" in root.values else "strategies"
    section = root.section(key)
    if not section.values:
        raise root.error(key, "at least one strategy is required")

    strategies = []
    for name in section.values:
        entry = section.section(str(name))
        entry.reject_unknown(STRATEGY_KEYS)
        kind = entry.choice("kind", StrategyKind, entry.get("kind", str(name)))
        strategy = StrategyConfig(
            kind=kind,
            name=str(name),
            mu=entry.number("mu", training.mu),
            eta=entry.number("eta", training.eta),
            local_epochs=entry.integer("local_epochs", training.local_epochs, minimum=1),
            batch_size=entry.integer("batch_size", training.batch_size, minimum=1),
            rounds=entry.integer("rounds", training.rounds, minimum=1),
            force_uniform=entry.boolean("force_uniform", False),
        )
        try:
            strategy.validate()
        except ConfigError as e:
            raise entry.error("kind", e.reason)
        strategies.append(strategy)
    return strategies


def _adversary_entries(root: _Section) -> List[Tuple[Any, Optional[int]]]:
    """(entry, line) pairs from either a list or a participant -> options mapping"""
    raw = root.get("adversaries") or []
    line = root.lines.get("adversaries")
    if isinstance(raw, list):
        return [(entry, line) for entry in raw]
    if not isinstance(raw, dict):
        raise ConfigError("adversaries: expected a list", line=line)

    entries = []
    for key, value in raw.items():
        key_line = root.lines.get(f"adversaries.{key}", line)
        if isinstance(key, bool):
            raise ConfigError(f"adversaries: key {key!r} is not a participant index", line=key_line)
        try:
            participant = int(str(key))
        except ValueError:
            raise ConfigError(f"adversaries: key {key!r} is not a participant index", line=key_line)
        if value is not None and not isinstance(value, dict):
            raise ConfigError(f"adversaries: options for participant {participant} must be a mapping",
                              line=key_line)
        entries.append((dict(value or {}, participant=participant), key_line))
    return entries


def _parse_adversaries(root: _Section, participants: int) -> List[AdversaryConfig]:
    adversaries = []
    seen = set()
    for entry, line in _adversary_entries(root):
        if not isinstance(entry, dict) or "participant" not in entry:
            raise ConfigError("adversaries: every entry needs a participant index", line=line)
        unknown = set(entry) - ADVERSARY_KEYS
        if unknown:
            raise ConfigError(f"adversaries: unknown key '{sorted(unknown)[0]}'", line=line)
        participant = entry["participant"]
        if isinstance(participant, bool) or not isinstance(participant, int) \
                or not 0 <= participant < participants:
            raise ConfigError(f"adversaries: {participant!r} is not a participant index", line=line)
        if participant in seen:
            raise ConfigError(f"adversaries: participant {participant} listed twice", line=line)
        seen.add(participant)
        try:
            kind = AdversaryKind(str(entry.get("kind", "noise")).lower())
        except ValueError:
            raise ConfigError(f"adversaries: unknown kind '{entry.get('kind')}'", line=line)
        noise_std = entry.get("noise_std", 0.01)
        if isinstance(noise_std, bool) or not isinstance(noise_std, (int, float)) or noise_std < 0:
            raise ConfigError("adversaries: noise_std must be a non-negative number", line=line)
        match_norm = entry.get("match_honest_norm", False)
        if not isinstance(match_norm, bool):
            raise ConfigError("adversaries: match_honest_norm must be true or false", line=line)
        adversaries.append(AdversaryConfig(participant, kind, float(noise_std), match_norm))
    return adversaries


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _parse_probs(section: _Section) -> Optional[List[List[float]]]:
    probs = section.get("probs")
    if probs is None:
        return None
    if not isinstance(probs, list) or not all(
            isinstance(row, list) and all(_is_number(p) for p in row) for row in probs):
        raise section.error("probs", "expected a list of rows of numbers")
    return [[float(p) for p in row] for row in probs]


def _parse_partition(section: _Section, participants: int, num_classes: Optional[int]) -> PartitionSpec:
    section.reject_unknown({"kind", "major_classes", "major_prob", "major_owner",
                            "probs", "exclusive_class", "owner"})
    kind = section.choice("kind", PartitionKind, "equal")
    major_classes = section.get("major_classes", [0])
    if isinstance(major_classes, int):
        major_classes = [major_classes]
    if not isinstance(major_classes, list) or not all(isinstance(c, int) for c in major_classes):
        raise section.error("major_classes", "expected a list of class indices")

    spec = PartitionSpec(
        kind=kind,
        major_classes=major_classes,
        major_prob=section.number("major_prob", 0.7),
        major_owner=section.integer("major_owner", 0, minimum=0),
        probs=_parse_probs(section),
        exclusive_class=section.integer("exclusive_class", 0, minimum=0),
        owner=section.integer("owner", 0, minimum=0),
    )

    if num_classes is not None:
        # surfaces shape and sum errors before any data is generated
        try:
            allocation_matrix(spec, participants, num_classes)
        except ConfigError as e:
            raise section.error("kind", e.reason)
    return spec


def parse_config(config_dict: dict, lines: Optional[LineIndex] = None) -> ExperimentConfig:
    """Parse a nested configuration dictionary into an ExperimentConfig"""
    root = _Section(config_dict, "", lines or {})
    root.reject_unknown(TOP_LEVEL_KEYS)

    if "participants" not in root.values:
        raise ConfigError("participants: required key is missing")
    config = ExperimentConfig(
        participants=root.integer("participants", None, minimum=1),
        seed=root.integer("seed", 0, minimum=0),
        workers=root.integer("workers", 1, minimum=1),
        output_dir=str(root.get("output_dir", "./results")),
    )

    config.valset_fraction = root.number("valset_fraction", 0.2)
    if not 0.0 < config.valset_fraction < 1.0:
        raise root.error("valset_fraction", f"must lie in (0, 1), got {config.valset_fraction}")

    model = root.section("model")
    model.reject_unknown({"kind", "hidden_dim"})
    config.model = ModelConfig(
        kind=model.choice("kind", ModelKind, "logistic"),
        hidden_dim=model.integer("hidden_dim", 16, minimum=1),
    )

    data = root.section("data")
    data.reject_unknown({"source", "num_classes", "input_dim", "per_class", "separation",
                         "path", "label_column"})
    config.data = DataConfig(
        source=data.choice("source", DataSource, "blobs"),
        num_classes=data.integer("num_classes", 4, minimum=2),
        input_dim=data.integer("input_dim", 2, minimum=2),
        per_class=data.integer("per_class", 100, minimum=1),
        separation=data.number("separation", 6.0),
        path=data.get("path"),
        label_column=str(data.get("label_column", "label")),
    )
    if config.data.source == DataSource.BLOBS and config.data.separation <= 0:
        raise data.error("separation", f"must be positive, got {config.data.separation}")
    if config.data.source == DataSource.CSV and not config.data.path:
        raise data.error("path", "csv data needs a path")

    known_classes = config.data.num_classes if config.data.source == DataSource.BLOBS else None
    config.partition = _parse_partition(root.section("partition"), config.participants, known_classes)

    training = root.section("training")
    training.reject_unknown({"eta", "mu", "local_epochs", "batch_size", "rounds"})
    config.training = TrainingConfig(
        eta=training.number("eta", 0.01),
        mu=training.number("mu", 0.9),
        local_epochs=training.integer("local_epochs", 1, minimum=1),
        batch_size=training.integer("batch_size", 32, minimum=1),
        rounds=training.integer("rounds", 50, minimum=1),
    )

    config.strategies = _parse_strategies(root, config.training)
    config.adversaries = _parse_adversaries(root, config.participants)

    audit = root.section("audit")
    audit.reject_unknown({"strategy"})
    config.audit_strategy = audit.get("strategy")
    if config.audit_strategy is not None:
        if config.audit_strategy not in [s.label for s in config.strategies]:
            raise audit.error("strategy", f"'{config.audit_strategy}' is not a configured strategy")

    log = root.section("logging")
    log.reject_unknown({"directory", "rolling", "max_age_days", "enabled"})
    config.logging = LoggingConfig(
        directory=str(log.get("directory", "./logs")),
        rolling=log.choice("rolling", RollingType, "daily"),
        max_age_days=log.integer("max_age_days", 7, minimum=1),
        enabled=log.boolean("enabled", True),
    )

    return config
