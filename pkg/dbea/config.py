"""
Run configuration.

A run is described by a YAML file with the sections ``seed``, ``dataset``,
``model``, ``loss``, ``optim``, ``train``, ``monitor`` and ``output_dir``.
Each section maps onto the dataclass defined next to the code it configures.
The schema is closed: unknown keys and mistyped values are rejected.
"""
import dataclasses
import json
import logging
from dataclasses import dataclass, field

import yaml

from .diff_core import OptimConfig
from .errors import ConfigError
from .losses import LossWeights
from .model import ModelConfig
from .monitor import MonitorConfig
from .training import TrainConfig
from .utils import sha256_bytes
from .world import DatasetConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """
    Everything that determines a run. The model's feature dimension, query
    count and class count must agree with the dataset's.
    """
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    output_dir: str = "runs/default"

    def validate(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("must be a non-negative integer", "seed")
        for section in SECTIONS:
            getattr(self, section).validate()
        for name in ('feature_dim', 'queries', 'num_classes'):
            if getattr(self.model, name) != getattr(self.dataset, name):
                raise ConfigError("{} != dataset.{} ({})".format(
                    getattr(self.model, name), name, getattr(self.dataset, name)),
                    "model." + name)
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **sections):
        """
        Copy with some sections (or fields of sections) replaced; a dict value
        updates the fields of that section.
        """
        changes = {}
        for key, value in sections.items():
            if isinstance(value, dict):
                value = dataclasses.replace(getattr(self, key), **value)
            changes[key] = value
        return dataclasses.replace(self, **changes)


SECTIONS = {
    'dataset': DatasetConfig,
    'model': ModelConfig,
    'loss': LossWeights,
    'optim': OptimConfig,
    'train': TrainConfig,
    'monitor': MonitorConfig,
}


def _coerce(value, kind, key, item=None):
    # YAML gives int, float, bool, str, list; dataclass fields are typed
    # with plain classes, tuple fields name their element type in `item`.
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind is str:
        if isinstance(value, str):
            return value
    elif kind is tuple:
        if isinstance(value, (list, tuple)):
            if item is None:
                raise ConfigError("no element type declared", key)
            return tuple(_coerce(v, item, "{}[{}]".format(key, i)) for i, v in enumerate(value))
    raise ConfigError("expected {}, got {!r}".format(kind.__name__, value), key)


def section_from_dict(cls, data, prefix):
    """
    Build one config dataclass from a mapping, rejecting unknown keys.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", prefix)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for key, value in data.items():
        dotted = "{}.{}".format(prefix, key)
        if key not in fields:
            raise ConfigError("unknown key", dotted)
        values[key] = _coerce(value, fields[key].type, dotted, fields[key].metadata.get('item'))
    return cls(**values)


def config_from_dict(data):
    """
    Build and validate a RunConfig from nested mappings.

    Raises
    ------

    ConfigError
        Naming the dotted key at fault.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("the configuration must be a mapping")
    known = set(SECTIONS) | {'seed', 'output_dir'}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", str(key))
    kwargs = {name: section_from_dict(cls, data.get(name), name)
              for name, cls in SECTIONS.items()}
    if 'seed' in data:
        kwargs['seed'] = _coerce(data['seed'], int, 'seed')
    if 'output_dir' in data:
        kwargs['output_dir'] = _coerce(data['output_dir'], str, 'output_dir')
    return RunConfig(**kwargs).validate()


def load_config(path=None):
    """
    Load a run configuration.

    Parameters
    ----------

    path : string, optional
        YAML file. An empty file, or no path at all, gives the defaults.

    Returns
    -------

    config : RunConfig
    """
    if path is None:
        return RunConfig().validate()
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except OSError as error:
        raise ConfigError("cannot read {}: {}".format(path, error.strerror))
    except yaml.YAMLError as error:
        raise ConfigError("{} does not parse: {}".format(path, error))
    config = config_from_dict(data)
    logger.debug("loaded %s (hash %s)", path, config_hash(config))
    return config


def dump_config(config):
    """
    YAML text that `load_config` reads back to an equal config.
    """
    def plain(obj):
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        return obj
    return yaml.safe_dump(plain(config.to_dict()), sort_keys=True, default_flow_style=None)


def config_hash(config):
    """
    SHA-256 of the canonical JSON form of a config.
    `output_dir` is not part of it.
    """
    data = config.to_dict()
    data.pop('output_dir', None)
    text = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return sha256_bytes(text.encode('utf-8'))
