"""
Synthetic detection world.

Scenes are lists of labelled boxes. Each scene is turned into a fixed number
of query feature vectors by a frozen random nonlinear map, standing in for the
decoder output of a detection transformer. Four regimes are generated:
in-distribution, Near-OOD (shifted box and class statistics under the same
map), Far-OOD (an independent map) and novel-class (objects of classes that
were withheld from training).
"""
import logging
from dataclasses import dataclass, field, replace

import numpy

from .errors import ConfigError, DataError, ShapeError
from .utils import child_rng, parallel_map, read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

IN_DISTRIBUTION = 'in_distribution'
NEAR_OOD = 'near_ood'
FAR_OOD = 'far_ood'
NOVEL_CLASS = 'novel_class'
REGIMES = (IN_DISTRIBUTION, NEAR_OOD, FAR_OOD, NOVEL_CLASS)

SPLITS = ('train', 'val', 'test')


@dataclass(frozen=True)
class DatasetConfig:
    """
    Generator settings.

    Sizes are widths of normalized boxes; heights are width times an aspect
    ratio. Near-OOD widths are the in-distribution widths shifted up by
    `near_shift`. `novel_blend` moves the class code of held-out classes
    towards `novel_sibling`: 0 gives an unrelated (far) novel class, values
    near 1 a class that resembles a trained one.
    """
    scenes: int = 2000
    ood_scenes: int = 300
    split: tuple = field(default=(7.5, 1.0, 1.5), metadata={'item': float})
    num_classes: int = 5
    queries: int = 25
    min_objects: int = 1
    max_objects: int = 4
    min_size: float = 0.03
    id_size_range: tuple = field(default=(0.05, 0.25), metadata={'item': float})
    near_shift: float = 0.25
    aspect_range: tuple = field(default=(0.5, 2.0), metadata={'item': float})
    near_aspect_range: tuple = field(default=(2.0, 3.0), metadata={'item': float})
    near_class_weights: tuple = field(default=(), metadata={'item': float})
    feature_dim: int = 32
    world_hidden: int = 48
    noise_dim: int = 4
    noise: float = 0.05
    regimes: tuple = field(default=(IN_DISTRIBUTION, NEAR_OOD, FAR_OOD), metadata={'item': str})
    train_regimes: tuple = field(default=(IN_DISTRIBUTION,), metadata={'item': str})
    held_out_classes: tuple = field(default=(), metadata={'item': int})
    novel_sibling: int = 0
    novel_blend: float = 0.0

    def validate(self):
        if self.scenes < 0 or self.ood_scenes < 0:
            raise ConfigError("scene counts must be >= 0", "dataset.scenes")
        if len(self.split) != 3 or any(not r > 0 for r in self.split):
            raise ConfigError("need three positive split fractions", "dataset.split")
        if self.num_classes < 1:
            raise ConfigError("must be >= 1", "dataset.num_classes")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ConfigError("need 0 <= min_objects <= max_objects", "dataset.max_objects")
        if self.max_objects > self.queries:
            raise ConfigError("more objects than queries", "dataset.queries")
        if not 0.0 < self.min_size <= 1.0:
            raise ConfigError("min_size must be in (0, 1]", "dataset.min_size")
        for name in ('id_size_range', 'aspect_range', 'near_aspect_range'):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi:
                raise ConfigError("need 0 < low <= high", "dataset." + name)
        lo, hi = self.id_size_range
        if hi + self.near_shift > 1.0 or lo + self.near_shift < self.min_size:
            raise ConfigError("shifted widths leave [min_size, 1]", "dataset.near_shift")
        if hi > 1.0:
            raise ConfigError("widths must be <= 1", "dataset.id_size_range")
        if self.near_class_weights and (len(self.near_class_weights) != self.num_classes
                                        or min(self.near_class_weights) < 0):
            raise ConfigError("need one non-negative weight per class",
                              "dataset.near_class_weights")
        if self.feature_dim < 1 or self.world_hidden < 1 or self.noise_dim < 0:
            raise ConfigError("dimensions must be positive", "dataset.feature_dim")
        if self.noise < 0.0:
            raise ConfigError("must be >= 0", "dataset.noise")
        for regime in self.regimes:
            if regime not in REGIMES:
                raise ConfigError("unknown regime {!r}".format(regime), "dataset.regimes")
        if tuple(self.train_regimes) != (IN_DISTRIBUTION,):
            raise ConfigError("training is zero-shot: only in_distribution scenes "
                              "may be used for training", "dataset.train_regimes")
        for c in self.held_out_classes:
            if not 0 <= c < self.num_classes:
                raise ConfigError("class {} out of range".format(c), "dataset.held_out_classes")
        if len(set(self.held_out_classes)) >= self.num_classes:
            raise ConfigError("at least one class must remain for training",
                              "dataset.held_out_classes")
        if NOVEL_CLASS in self.regimes and not self.held_out_classes:
            raise ConfigError("novel_class regime needs held-out classes",
                              "dataset.held_out_classes")
        if not 0 <= self.novel_sibling < self.num_classes or \
                self.novel_sibling in self.held_out_classes and self.novel_blend > 0.0:
            raise ConfigError("sibling must be a trained class", "dataset.novel_sibling")
        if not 0.0 <= self.novel_blend <= 1.0:
            raise ConfigError("must be in [0, 1]", "dataset.novel_blend")

    @property
    def latent_dim(self):
        return self.num_classes + 1 + 4 + self.noise_dim

    def split_counts(self, n):
        """
        Split `n` scenes by the configured fractions (train, val, test).
        """
        total = float(sum(self.split))
        n_train = int(round(n * self.split[0] / total))
        n_val = int(round(n * self.split[1] / total))
        n_val = min(n_val, n - n_train)
        return n_train, n_val, n - n_train - n_val


@dataclass(frozen=True)
class DatasetRegime:
    """
    A regime and the distribution settings that realize it.

    Parameters
    ----------

    kind : string
        One of `REGIMES`
    size_range : tuple
        Range of box widths
    aspect_range : tuple
        Range of height / width ratios
    class_weights : tuple
        Unnormalized class prior (zero for classes that never occur)
    held_out : tuple
        Classes withheld from training
    max_objects, min_objects : int
        Object count range
    """
    kind: str
    size_range: tuple
    aspect_range: tuple
    class_weights: tuple
    held_out: tuple = ()
    min_objects: int = 1
    max_objects: int = 4
    min_size: float = 0.03


def make_regime(kind, config):
    """
    Build the `DatasetRegime` of `kind` from a `DatasetConfig`.
    """
    if kind not in REGIMES:
        raise ConfigError("unknown regime {!r}".format(kind))
    held = tuple(sorted(set(config.held_out_classes)))
    weights = numpy.ones(config.num_classes)
    size_range = tuple(config.id_size_range)
    aspect_range = tuple(config.aspect_range)
    if kind == NEAR_OOD:
        size_range = tuple(s + config.near_shift for s in config.id_size_range)
        aspect_range = tuple(config.near_aspect_range)
        if config.near_class_weights:
            weights = numpy.array(config.near_class_weights, dtype=float)
        else:
            weights = 0.5**numpy.arange(config.num_classes)
    if kind != NOVEL_CLASS:
        weights[list(held)] = 0.0
    if weights.sum() <= 0.0:
        raise ConfigError("class prior of regime {} is empty".format(kind),
                          "dataset.near_class_weights")
    return DatasetRegime(kind, size_range, aspect_range, tuple(weights.tolist()),
                         held, config.min_objects, config.max_objects, config.min_size)


@dataclass(frozen=True)
class Scene:
    """
    Ground truth of one scene: a tuple of (class_id, (cx, cy, w, h)).
    """
    scene_id: str
    objects: tuple
    regime: str

    @property
    def classes(self):
        return numpy.array([c for c, _ in self.objects], dtype=int)

    @property
    def boxes(self):
        if not self.objects:
            return numpy.zeros((0, 4))
        return numpy.array([b for _, b in self.objects], dtype=numpy.float64)


class WorldMap:
    r"""
    A frozen two-layer map :math:`f(z) = \tanh(z W_1 + b_1) W_2 + b_2` from
    latent object descriptors to query features.

    Parameters
    ----------

    seed : int
        Seed the weights are drawn from
    latent_dim, hidden, feature_dim : int
        Dimensions
    """

    def __init__(self, seed, latent_dim, hidden, feature_dim):
        self.seed = seed
        rng = numpy.random.default_rng(numpy.random.SeedSequence(seed))
        self.w1 = rng.normal(0.0, 2.0 / numpy.sqrt(latent_dim), size=(latent_dim, hidden))
        self.b1 = rng.normal(0.0, 0.5, size=hidden)
        self.w2 = rng.normal(0.0, 1.0 / numpy.sqrt(hidden), size=(hidden, feature_dim))
        self.b2 = rng.normal(0.0, 0.1, size=feature_dim)

    @property
    def latent_dim(self):
        return self.w1.shape[0]

    @property
    def feature_dim(self):
        return self.w2.shape[1]

    def __call__(self, latents):
        latents = numpy.atleast_2d(latents)
        if latents.shape[1] != self.latent_dim:
            raise ShapeError("latent dimension {} does not match the map ({})".format(
                latents.shape[1], self.latent_dim))
        return numpy.tanh(latents @ self.w1 + self.b1) @ self.w2 + self.b2

    def __eq__(self, other):
        return isinstance(other, WorldMap) and all(
            numpy.array_equal(a, b) for a, b in zip(
                (self.w1, self.b1, self.w2, self.b2),
                (other.w1, other.b1, other.w2, other.b2)))

    __hash__ = None


def make_world(seed, regime, config=None):
    """
    World map for a regime. In-distribution, Near-OOD and novel-class scenes
    share one map; Far-OOD uses a map drawn from an independent seed.

    Parameters
    ----------

    seed : int
        Master seed
    regime : DatasetRegime or string
        Regime (or its kind)
    config : DatasetConfig, optional
        Supplies the dimensions
    """
    config = config or DatasetConfig()
    kind = regime if isinstance(regime, str) else regime.kind
    if kind not in REGIMES:
        raise ConfigError("unknown regime {!r}".format(kind))
    map_key = 1 if kind == FAR_OOD else 0
    return WorldMap([int(seed), 7919, map_key], config.latent_dim,
                    config.world_hidden, config.feature_dim)


def sample_scene(regime, rng, scene_id="scene"):
    """
    Draw one scene.

    Boxes lie inside the unit square, with widths from the regime's size
    range and heights from its aspect range, both clipped to
    [min_size, 1]. Novel-class scenes always hold at least one object of a
    held-out class.

    Parameters
    ----------

    regime : DatasetRegime
        Distribution settings
    rng : numpy.random.Generator
        Source of randomness
    scene_id : string
        Identifier stored with the scene
    """
    if regime.min_size > 1.0:
        raise ConfigError("min_size exceeds 1", "dataset.min_size")
    if not 0 <= regime.min_objects <= regime.max_objects:
        raise ConfigError("bad object count range", "dataset.max_objects")
    weights = numpy.asarray(regime.class_weights, dtype=float)
    if weights.size < 1 or weights.sum() <= 0.0:
        raise ConfigError("empty class prior")
    prior = weights / weights.sum()
    n = int(rng.integers(regime.min_objects, regime.max_objects + 1))
    if regime.kind == NOVEL_CLASS:
        n = max(n, 1)
    classes = rng.choice(len(prior), size=n, p=prior)
    if regime.kind == NOVEL_CLASS:
        if not regime.held_out:
            raise ConfigError("novel_class regime needs held-out classes",
                              "dataset.held_out_classes")
        classes[0] = regime.held_out[int(rng.integers(len(regime.held_out)))]
    objects = []
    for c in classes:
        w = numpy.clip(rng.uniform(*regime.size_range), regime.min_size, 1.0)
        h = numpy.clip(w * rng.uniform(*regime.aspect_range), regime.min_size, 1.0)
        cx = rng.uniform(w / 2.0, 1.0 - w / 2.0)
        cy = rng.uniform(h / 2.0, 1.0 - h / 2.0)
        objects.append((int(c), (float(cx), float(cy), float(w), float(h))))
    return Scene(scene_id, tuple(objects), regime.kind)


@dataclass
class QueryFeatures:
    """
    Query features of one scene, with the object each query was rendered
    from (-1 for background). The assignment is never shown to the model.
    """
    features: numpy.ndarray
    assignment: numpy.ndarray


def class_code(class_id, config, regime_kind=IN_DISTRIBUTION):
    """
    Class part of the latent descriptor: a one-hot vector over the classes
    plus a background slot, blended towards the sibling class for held-out
    classes in novel-class scenes.
    """
    code = numpy.zeros(config.num_classes + 1)
    if class_id is None:
        code[-1] = 1.0
        return code
    code[class_id] = 1.0
    if regime_kind == NOVEL_CLASS and class_id in config.held_out_classes \
            and config.novel_blend > 0.0:
        code *= 1.0 - config.novel_blend
        code[config.novel_sibling] += config.novel_blend
    return code


def render_queries(scene, world, rng, config=None):
    """
    Render the query features of a scene.

    Each object is rendered into one distinct, randomly chosen query from
    (class code, box, noise); the remaining queries are background renders
    of a random clutter box.

    Parameters
    ----------

    scene : Scene
        Ground truth
    world : WorldMap
        Feature map
    rng : numpy.random.Generator
        Source of randomness
    config : DatasetConfig, optional
        Query count, dimensions and noise level
    """
    config = config or DatasetConfig()
    if world.feature_dim != config.feature_dim or world.latent_dim != config.latent_dim:
        raise ShapeError("world map dimensions do not match the dataset config")
    q = config.queries
    if len(scene.objects) > q:
        raise ConfigError("scene has more objects than queries", "dataset.queries")
    assignment = numpy.full(q, -1, dtype=int)
    assignment[rng.permutation(q)[:len(scene.objects)]] = numpy.arange(len(scene.objects))
    latents = numpy.zeros((q, config.latent_dim))
    clutter = rng.uniform(0.0, 1.0, size=(q, 4))
    noise = rng.normal(0.0, 1.0, size=(q, config.noise_dim)) * config.noise
    n_code = config.num_classes + 1
    for i in range(q):
        k = assignment[i]
        if k < 0:
            latents[i, :n_code] = class_code(None, config)
            latents[i, n_code:n_code + 4] = clutter[i]
        else:
            c, box = scene.objects[k]
            latents[i, :n_code] = class_code(c, config, scene.regime)
            latents[i, n_code:n_code + 4] = box
        latents[i, n_code + 4:] = noise[i]
    return QueryFeatures(world(latents), assignment)


@dataclass
class Sample:
    """
    A scene together with its rendered queries.
    """
    scene: Scene
    features: numpy.ndarray
    assignment: numpy.ndarray

    @property
    def scene_id(self):
        return self.scene.scene_id

    @property
    def regime(self):
        return self.scene.regime


@dataclass
class DatasetSplits:
    """
    Generated data. `train` only ever holds in-distribution samples; `val`
    and `test` map a regime to its samples.
    """
    train: list
    val: dict = field(default_factory=dict)
    test: dict = field(default_factory=dict)
    config: DatasetConfig = None
    seed: int = 0

    def split(self, name, regime=IN_DISTRIBUTION):
        if name == 'train':
            if regime != IN_DISTRIBUTION:
                raise ConfigError("training split only holds in_distribution scenes")
            return self.train
        try:
            return getattr(self, name)[regime]
        except (AttributeError, KeyError):
            raise ConfigError("no {} split for regime {}".format(name, regime))


def _make_sample(args):
    config, seed, regime, world, split_index, regime_index, i, split_name = args
    rng = child_rng(seed, split_index, regime_index, i)
    scene = sample_scene(regime, rng, "{}-{}-{:05d}".format(split_name, regime.kind, i))
    rendered = render_queries(scene, world, rng, config)
    return Sample(scene, rendered.features, rendered.assignment)


def _generate(config, seed, kind, split_name, n, workers):
    regime = make_regime(kind, config)
    world = make_world(seed, regime, config)
    args = [(config, seed, regime, world, SPLITS.index(split_name), REGIMES.index(kind),
             i, split_name) for i in range(n)]
    return parallel_map(_make_sample, args, workers)


def generate_dataset(config, seed=0, workers=1):
    """
    Generate train/val/test splits.

    In-distribution scenes are split by `config.split`; every other requested
    regime gets `config.ood_scenes` evaluation scenes split between val and
    test in the same val:test proportion. Every scene derives its own child
    seed from (seed, split, regime, index).

    Parameters
    ----------

    config : DatasetConfig
        Generator settings
    seed : int
        Master seed
    workers : int
        Threads used for generation; the output does not depend on it

    Returns
    -------

    splits : DatasetSplits
    """
    config.validate()
    n_train, n_val, n_test = config.split_counts(config.scenes)
    val_share = config.split[1] / (config.split[1] + config.split[2])
    splits = DatasetSplits(train=_generate(config, seed, IN_DISTRIBUTION, 'train',
                                           n_train, workers),
                           config=config, seed=seed)
    for kind in config.regimes:
        if kind == IN_DISTRIBUTION:
            counts = (n_val, n_test)
        else:
            v = int(round(config.ood_scenes * val_share))
            counts = (v, config.ood_scenes - v)
        if counts[1] == 0:
            raise ConfigError("regime {} has no evaluation scenes".format(kind),
                              "dataset.ood_scenes" if kind != IN_DISTRIBUTION else "dataset.scenes")
        splits.val[kind] = _generate(config, seed, kind, 'val', counts[0], workers)
        splits.test[kind] = _generate(config, seed, kind, 'test', counts[1], workers)
    logger.info("generated %d train scenes; eval regimes %s", len(splits.train),
                ", ".join("{}={}".format(k, len(v)) for k, v in splits.test.items()))
    return splits


def feature_divergence(a, b):
    """
    Symmetric KL divergence between diagonal Gaussian fits of two feature
    sets (rows are samples).
    """
    a = numpy.asarray(a, dtype=float)
    b = numpy.asarray(b, dtype=float)
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    var_a, var_b = a.var(axis=0) + 1e-12, b.var(axis=0) + 1e-12
    d2 = (mu_a - mu_b)**2
    kl_ab = 0.5 * numpy.sum(var_a / var_b + d2 / var_b - 1.0 + numpy.log(var_b / var_a))
    kl_ba = 0.5 * numpy.sum(var_b / var_a + d2 / var_a - 1.0 + numpy.log(var_a / var_b))
    return float(kl_ab + kl_ba)


def sample_to_record(sample):
    return {
        'scene_id': sample.scene_id,
        'regime': sample.regime,
        'objects': [{'class_id': c, 'box': list(box)} for c, box in sample.scene.objects],
        'features': sample.features,
        'assignment': sample.assignment,
    }


def write_split(path, samples):
    """
    Write samples as JSON-lines records
    ``{scene_id, regime, objects: [{class_id, box}], features, assignment}``.
    """
    write_jsonl(path, (sample_to_record(s) for s in samples))


def read_split(path):
    """
    Read a split written by `write_split`.

    Raises
    ------

    DataError
        Naming the record that is malformed.
    """
    samples = []
    for position, record in enumerate(read_jsonl(path), start=1):
        try:
            objects = tuple((int(o['class_id']), tuple(float(v) for v in o['box']))
                            for o in record['objects'])
            scene = Scene(str(record['scene_id']), objects, str(record['regime']))
            features = numpy.array(record['features'], dtype=numpy.float64)
            assignment = numpy.array(record.get('assignment', [-1] * len(features)), dtype=int)
        except (KeyError, TypeError, ValueError) as error:
            raise DataError("{}: record {}: {}".format(path, position, error))
        if features.ndim != 2 or any(len(b) != 4 for _, b in objects) \
                or scene.regime not in REGIMES:
            raise DataError("{}: record {}: malformed scene".format(path, position))
        samples.append(Sample(scene, features, assignment))
    return samples


def with_held_out(config, classes, blend=None, sibling=None):
    """
    Copy of `config` holding out `classes` and evaluating the novel-class
    regime as well.
    """
    regimes = tuple(config.regimes)
    if NOVEL_CLASS not in regimes:
        regimes = regimes + (NOVEL_CLASS,)
    changes = {'held_out_classes': tuple(classes), 'regimes': regimes}
    if blend is not None:
        changes['novel_blend'] = blend
    if sibling is not None:
        changes['novel_sibling'] = sibling
    return replace(config, **changes)
