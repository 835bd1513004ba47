"""
Training loop and run manifest.

Training is zero-shot: only in-distribution scenes are ever fed to the
model. Each epoch shuffles the training scenes with a seeded permutation,
walks them in mini-batches, averages the per-scene gradients of the total
loss and takes one AdamW step per batch.
"""
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy

from .checkpoint import save_checkpoint
from .diff_core import OptimState, adamw_step
from .errors import ConfigError, TrainingDivergence
from .losses import LossBreakdown, scene_loss
from .model import TandemModel
from .utils import child_rng, file_digest, parallel_map
from .world import IN_DISTRIBUTION, generate_dataset

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = 1
_SHUFFLE_KEY = 101


@dataclass(frozen=True)
class TrainConfig:
    """
    `parallel` computes the per-scene gradients of a batch on a thread pool.
    """
    epochs: int = 50
    batch_size: int = 8
    parallel: bool = False

    def validate(self):
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigError("must be a non-negative integer", "train.epochs")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError("must be a positive integer", "train.batch_size")
        if not isinstance(self.parallel, bool):
            raise ConfigError("must be a boolean", "train.parallel")


@dataclass
class RunManifest:
    """
    Record of a run: the config hash, per-epoch loss breakdowns, metric
    tables, wall-clock timings, and every emitted file with its SHA-256.
    Timings are the only content that differs between identical runs.
    """
    config_hash: str = ""
    artifact_version: int = ARTIFACT_VERSION
    seed: int = 0
    mode: str = ""
    epochs: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def add_file(self, path, root=None):
        name = os.path.relpath(path, root) if root else os.path.basename(path)
        self.files[name.replace(os.sep, '/')] = file_digest(path)
        return name

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError("unknown manifest keys {}".format(sorted(unknown)))
        return cls(**data)

    def write(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    @classmethod
    def read(cls, path):
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


def iter_training_batches(samples, batch_size, rng):
    """
    Yield shuffled mini-batches of training samples.

    Raises
    ------

    ConfigError
        If any sample is not in-distribution.
    """
    for sample in samples:
        if sample.regime != IN_DISTRIBUTION:
            raise ConfigError("scene {} of regime {} reached the training loop".format(
                sample.scene_id, sample.regime), "dataset.train_regimes")
    order = rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]


def scene_gradients(model, sample, weights):
    """
    Loss breakdown and parameter gradients of one training scene.
    """
    output, cache = model.forward(sample.features)
    breakdown, head_grads, _ = scene_loss(output, sample.scene.classes,
                                          sample.scene.boxes, weights)
    if not numpy.isfinite(breakdown.total):
        raise TrainingDivergence("non-finite loss on scene {}".format(sample.scene_id))
    return breakdown, model.backward(cache, head_grads)


def train_epoch(model, state, samples, config, epoch, workers=1):
    """
    One pass over the training scenes.

    Returns
    -------

    state : OptimState
    breakdown : LossBreakdown
        Mean over the scenes of the epoch
    """
    rng = child_rng(config.seed, _SHUFFLE_KEY, epoch)
    breakdowns = []
    for batch in iter_training_batches(samples, config.train.batch_size, rng):
        if config.train.parallel:
            results = parallel_map(lambda s: scene_gradients(model, s, config.loss), batch, workers)
        else:
            results = [scene_gradients(model, s, config.loss) for s in batch]
        grads = [numpy.zeros_like(a) for a in model.arrays()]
        for breakdown, scene_grads in results:
            breakdowns.append(breakdown)
            for total, g in zip(grads, scene_grads):
                total += g
        grads = [g / len(batch) for g in grads]
        _, state = adamw_step(model.arrays(), grads, state)
        logger.debug("epoch %d step %d: batch loss %.6g", epoch, state.step,
                     numpy.mean([b.total for b, _ in results]))
    return state, LossBreakdown.mean(breakdowns)


def train(config, splits=None, checkpoint_path=None, workers=1):
    """
    Train a model from scratch.

    Parameters
    ----------

    config : RunConfig
    splits : DatasetSplits, optional
        Generated from `config.dataset` and `config.seed` if not given
    checkpoint_path : string, optional
        Rewritten after initialization and after every epoch; after a
        divergence it holds the last good parameters
    workers : int
        Threads for data generation and parallel batches

    Returns
    -------

    model : TandemModel
    manifest : RunManifest

    Raises
    ------

    TrainingDivergence
        If a loss or gradient becomes non-finite.
    """
    from .config import config_hash

    config.validate()
    started = time.perf_counter()
    if splits is None:
        splits = generate_dataset(config.dataset, config.seed, workers)
    if not splits.train:
        raise ConfigError("no training scenes", "dataset.scenes")
    model = TandemModel.init(config.model, config.seed)
    state = OptimState.zeros_like(model.arrays(), config.optim)
    manifest = RunManifest(config_hash=config_hash(config), seed=config.seed,
                           mode=config.model.mode)
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path)
    for epoch in range(config.train.epochs):
        epoch_start = time.perf_counter()
        try:
            state, breakdown = train_epoch(model, state, splits.train, config, epoch, workers)
        except TrainingDivergence as error:
            logger.error("training diverged in epoch %d: %s", epoch + 1, error)
            raise TrainingDivergence("epoch {}: {}".format(epoch + 1, error))
        record = dict(breakdown.to_dict(), epoch=epoch + 1)
        manifest.epochs.append(record)
        manifest.timings["epoch_{}".format(epoch + 1)] = time.perf_counter() - epoch_start
        logger.info("epoch %d/%d: total %.6g base %.6g tandem %.6g diversity %.6g",
                    epoch + 1, config.train.epochs, breakdown.total, breakdown.base,
                    breakdown.tandem, breakdown.diversity)
        if checkpoint_path:
            save_checkpoint(model, checkpoint_path)
    manifest.timings["train"] = time.perf_counter() - started
    return model, manifest
