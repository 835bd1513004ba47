"""
Benchmarks.

Detection quality of the fused detections, out-of-distribution separation
by the situation monitor at image and object level, the novel-object
protocol with a held-out class, parameter overhead of the tandem heads, and
the loss-weight ablation.
"""
import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy
from IPython.core.pylabtools import print_figure
from matplotlib import pyplot

from .boxes import pairwise_iou
from .errors import ConfigError, DataError, ShapeError, UndefinedMetricError
from .losses import LossWeights
from .metrics import (LABEL_ID, LABEL_OOD, DetectionRecord, ScoredSample, average_precision,
                      match_detections, ood_benchmark, pcorr_split)
from .model import param_count, select_topk
from .monitor import MonitorConfig, score_output
from .report import histogram_figure
from .training import train
from .utils import parallel_map
from .world import FAR_OOD, IN_DISTRIBUTION, NEAR_OOD, NOVEL_CLASS, generate_dataset, with_held_out

logger = logging.getLogger(__name__)

LEVELS = ('image', 'object')


@dataclass
class DetectionEvaluation:
    """
    Detection metrics of one split; metrics that are undefined are None.
    """
    ap50: float = None
    map: float = None
    pcorr_all: float = None
    pcorr_tp: float = None
    n_scenes: int = 0
    n_detections: int = 0

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def ground_truth(samples):
    """
    scene_id -> list of (class_id, box) for a list of samples.
    """
    return {s.scene_id: list(s.scene.objects) for s in samples}


def detect(model, samples, top_k=None, workers=1):
    """
    The top-K fused detections of every scene, in scene order and then in
    order of decreasing confidence.
    """
    k = model.config.top_k if top_k is None else top_k

    def scene_records(sample):
        fused = model.predict(sample.features).fused
        return [DetectionRecord(sample.scene_id, tuple(float(v) for v in fused.boxes[i]),
                                int(fused.labels[i]), float(fused.confidence[i]),
                                extra={'regime': sample.regime})
                for i in select_topk(fused.confidence, k)]

    return [r for records in parallel_map(scene_records, samples, workers) for r in records]


def evaluate_records(records, truth, iou_tp_threshold=0.5):
    """
    Detection metrics of a set of detections against ground truth. The
    records are matched afresh, so any match fields they carry are ignored.

    Returns
    -------

    evaluation : DetectionEvaluation
    matched : list of DetectionRecord
    """
    matched = match_detections(records, truth)
    evaluation = DetectionEvaluation(n_scenes=len(truth), n_detections=len(matched))
    try:
        evaluation.ap50, evaluation.map = average_precision(matched, truth)
    except UndefinedMetricError:
        pass
    evaluation.pcorr_all, evaluation.pcorr_tp = pcorr_split(matched, iou_tp_threshold)
    return evaluation, matched


def evaluate_detection(model, samples, top_k=None, workers=1):
    """
    Detection metrics (AP50, mAP, PCorr over all and over true positives) of
    a model on a split, plus the matched detection dump.

    Raises
    ------

    ShapeError
        If the split's feature dimension does not match the model.
    """
    for s in samples:
        if s.features.shape[1] != model.config.feature_dim:
            raise ShapeError("scene {} has feature dimension {}, model expects {}".format(
                s.scene_id, s.features.shape[1], model.config.feature_dim))
    evaluation, matched = evaluate_records(detect(model, samples, top_k, workers),
                                           ground_truth(samples))
    logger.info("detection on %d scenes: AP50 %s mAP %s", evaluation.n_scenes,
                evaluation.ap50, evaluation.map)
    return evaluation, matched


@dataclass
class OODRun:
    """
    Result of one benchmark pairing together with what produced it: the
    labelled scores and the score dump records.
    """
    result: object
    samples: list = field(default_factory=list)
    records: list = field(default_factory=list)
    level: str = 'image'
    _png_data: bytes = field(default=None, repr=False, compare=False)

    def _figure_data(self, format):
        fig = histogram_figure(self.samples, getattr(self.result, 'name', ""))
        data = print_figure(fig, format)
        pyplot.close(fig)
        return data

    def _repr_png_(self):
        if not self.samples:
            return None
        if self._png_data is None:
            self._png_data = self._figure_data('png')
        return self._png_data


def _object_label(fused, index, objects, held_out, ood_role, iou_threshold):
    # OOD: overlaps held-out ground truth, or any ground truth of a scene
    # playing the OOD role. ID: a true positive of a trained class.
    if not objects:
        return None
    ious = pairwise_iou(fused.boxes[index], [b for _, b in objects])[0]
    g = int(numpy.argmax(ious))
    if ious[g] < iou_threshold:
        return None
    gt_class = objects[g][0]
    if gt_class in held_out or ood_role:
        return LABEL_OOD
    if int(fused.labels[index]) == gt_class:
        return LABEL_ID
    return None


def run_ood_benchmark(model, id_samples, ood_samples, level='image', monitor=None,
                      held_out=(), iou_threshold=0.5, name="", workers=1):
    """
    Separation of an in-distribution split from an OOD split.

    At image level every scene is one sample labelled by its split. At
    object level every top-K detection is one sample: detections overlapping
    ground truth of a held-out class (IoU >= `iou_threshold`) are OOD, as are
    detections overlapping any ground truth of a Near or Far OOD scene in
    the OOD split; true positives of trained classes are in-distribution;
    everything else is left out. Labels never depend on the predicted class
    except for the true-positive test.

    Parameters
    ----------

    model : TandemModel
    id_samples, ood_samples : list of Sample
    level : string
        ``'image'`` or ``'object'``
    monitor : MonitorConfig, optional
    held_out : sequence of int
        Classes withheld from training
    iou_threshold : scalar
    name : string
        Label of the pairing
    workers : int

    Returns
    -------

    run : OODRun
    """
    if level not in LEVELS:
        raise ConfigError("level must be one of {}".format(LEVELS), "level")
    if not id_samples or not ood_samples:
        raise DataError("both splits must be nonempty")
    monitor = monitor or MonitorConfig()
    held_out = {int(c) for c in held_out}
    k = model.config.top_k

    def score(args):
        sample, ood_role = args
        output = model.predict(sample.features)
        return output.fused, score_output(output, k, monitor, sample.scene_id, sample.regime)

    jobs = [(s, False) for s in id_samples] + [(s, True) for s in ood_samples]
    scored = parallel_map(score, jobs, workers)
    samples, records = [], []
    for (sample, ood_role), (fused, result) in zip(jobs, scored):
        role = LABEL_OOD if ood_role else LABEL_ID
        if level == 'image':
            samples.append(ScoredSample(result.image_usm, role))
            records.append(dict(result.to_record(), label=role))
            continue
        scene_ood = ood_role and sample.regime != NOVEL_CLASS
        for index, usm, confidence in result.per_object:
            label = _object_label(fused, index, sample.scene.objects, held_out, scene_ood,
                                  iou_threshold)
            if label is None:
                continue
            samples.append(ScoredSample(usm, label))
            records.append({'scene_id': sample.scene_id, 'regime': sample.regime,
                            'index': index, 'usm': usm, 'confidence': confidence,
                            'label': label})
    result = ood_benchmark(samples, name=name)
    logger.info("%s (%s level): %d ID / %d OOD samples, AUROC %s", name or "ood benchmark",
                level, result.n_id, result.n_ood, result.auroc)
    return OODRun(result, samples, records, level)


def benchmark_suite(model, splits, level='image', monitor=None, split='test', workers=1):
    """
    One `run_ood_benchmark` per OOD regime present in `split`, each against
    the in-distribution scenes of the same split.

    Returns
    -------

    runs : dict
        regime -> OODRun
    """
    available = getattr(splits, split)
    id_samples = available.get(IN_DISTRIBUTION)
    if not id_samples:
        raise DataError("no in_distribution {} scenes".format(split))
    held_out = splits.config.held_out_classes if splits.config else ()
    runs = {}
    for regime in (NEAR_OOD, FAR_OOD, NOVEL_CLASS):
        if regime not in available:
            continue
        runs[regime] = run_ood_benchmark(model, id_samples, available[regime], level, monitor,
                                         held_out=held_out, name="ID vs {}".format(regime),
                                         workers=workers)
    return runs


def _check_novel_present(splits, held_out):
    for name in ('val', 'test'):
        samples = getattr(splits, name).get(NOVEL_CLASS, [])
        if not any(c in held_out for s in samples for c, _ in s.scene.objects):
            raise ConfigError("held-out classes never appear in the {} scenes".format(name),
                              "dataset.held_out_classes")


def run_novel_object_benchmark(config, splits=None, workers=1):
    """
    Novel-object protocol: train with the held-out classes absent from every
    training scene, then score detections of the novel-class test scenes at
    object level against in-distribution true positives.

    Parameters
    ----------

    config : RunConfig
        `config.dataset.held_out_classes` must name at least one class

    Returns
    -------

    run : OODRun
    model : TandemModel
    manifest : RunManifest
    """
    held_out = tuple(config.dataset.held_out_classes)
    if not held_out:
        raise ConfigError("need at least one held-out class", "dataset.held_out_classes")
    if NOVEL_CLASS not in config.dataset.regimes:
        config = replace(config, dataset=with_held_out(config.dataset, held_out))
    config.validate()
    if splits is None:
        splits = generate_dataset(config.dataset, config.seed, workers)
    _check_novel_present(splits, set(held_out))
    model, manifest = train(config, splits, workers=workers)
    run = run_ood_benchmark(model, splits.test[IN_DISTRIBUTION], splits.test[NOVEL_CLASS],
                            'object', config.monitor, held_out=held_out,
                            name="novel (blend {:g})".format(config.dataset.novel_blend),
                            workers=workers)
    return run, model, manifest


@dataclass
class OverheadReport:
    """
    Parameter counts of a vanilla and a dbea model. `delta` is the relative
    saving ``(vanilla - dbea) / vanilla``; `head_overhead` is the cost of the
    extra head and `trunk_savings` what the narrower trunk gives back.
    """
    vanilla: dict
    dbea: dict
    delta: float
    head_overhead: int
    trunk_savings: int

    def rows(self):
        return [{'component': part, 'vanilla': self.vanilla[part], 'dbea': self.dbea[part]}
                for part in ('trunk', 'heads', 'total')]

    def to_dict(self):
        return {'rows': self.rows(), 'delta': self.delta,
                'head_overhead': self.head_overhead, 'trunk_savings': self.trunk_savings}

    def _repr_html_(self):
        body = ''.join('<tr><td>{component}</td><td>{vanilla}</td><td>{dbea}</td></tr>'.format(**r)
                       for r in self.rows())
        return ('<table><tr><th>component</th><th>vanilla</th><th>dbea</th></tr>{}'
                '<tr><td>delta</td><td colspan="2">{:.2%}</td></tr></table>').format(
                    body, self.delta)


def overhead_report(vanilla_config, dbea_config):
    """
    Compare the parameter counts of two model configs.
    """
    vanilla = param_count(vanilla_config)
    dbea = param_count(dbea_config)
    return OverheadReport(vanilla, dbea,
                          (vanilla['total'] - dbea['total']) / float(vanilla['total']),
                          dbea['heads'] - vanilla['heads'],
                          vanilla['trunk'] - dbea['trunk'])


LAMBDA_DIV = (0.0, 10.0, 20.0, 40.0, 80.0)
LAMBDA_TQ = (0.0, 1.0, 10.0, 100.0)
LAMBDA_TA = (0.0, 1.0)


def ablation_grid(base=None):
    """
    One-factor-at-a-time grid around `base` (a LossWeights): every listed
    value of each lambda with the other two at their base values. Each
    point is a ``(lambda_div, lambda_tq, lambda_ta)`` triple, listed once.
    """
    base = base or LossWeights()
    points = [(d, base.lambda_tq, base.lambda_ta) for d in LAMBDA_DIV]
    points += [(base.lambda_div, q, base.lambda_ta) for q in LAMBDA_TQ]
    points += [(base.lambda_div, base.lambda_tq, a) for a in LAMBDA_TA]
    return list(dict.fromkeys(points))


def full_ablation_grid():
    """
    The full product of the listed lambda values.
    """
    return list(itertools.product(LAMBDA_DIV, LAMBDA_TQ, LAMBDA_TA))


@dataclass
class AblationRow:
    """
    One trained grid point: detection quality on the in-distribution test
    split and separation from the Far and Near OOD scenes.
    """
    lambda_div: float
    lambda_tq: float
    lambda_ta: float
    seed: int
    far: object = None
    near: object = None
    detection: object = None

    @property
    def label(self):
        return "div={:g} tq={:g} ta={:g}".format(self.lambda_div, self.lambda_tq, self.lambda_ta)

    def to_dict(self):
        return {'lambda_div': self.lambda_div, 'lambda_tq': self.lambda_tq,
                'lambda_ta': self.lambda_ta, 'seed': self.seed,
                'far': None if self.far is None else self.far.to_dict(),
                'near': None if self.near is None else self.near.to_dict(),
                'detection': None if self.detection is None else self.detection.to_dict()}


def run_ablation(config, grid=None, seeds=None, level='image', workers=1):
    """
    Train one model per (grid point, seed), evaluate its detections on the
    in-distribution test scenes and benchmark it against the Far and Near OOD
    test scenes. All grid points of a seed share one dataset.

    Parameters
    ----------

    config : RunConfig
    grid : list of tuple, optional
        ``(lambda_div, lambda_tq, lambda_ta)`` points; `ablation_grid` by
        default
    seeds : list of int, optional
        Defaults to ``[config.seed]``

    Returns
    -------

    rows : list of AblationRow
    """
    grid = ablation_grid(config.loss) if grid is None else list(grid)
    seeds = [config.seed] if seeds is None else list(seeds)
    rows = []
    for seed in seeds:
        seeded = replace(config, seed=seed)
        splits = generate_dataset(seeded.dataset, seed, workers)
        for lambda_div, lambda_tq, lambda_ta in grid:
            point = replace(seeded, loss=replace(seeded.loss, lambda_div=float(lambda_div),
                                                 lambda_tq=float(lambda_tq),
                                                 lambda_ta=float(lambda_ta)))
            model, _ = train(point, splits, workers=workers)
            detection, _ = evaluate_detection(model, splits.test[IN_DISTRIBUTION], workers=workers)
            runs = benchmark_suite(model, splits, level, point.monitor, workers=workers)
            row = AblationRow(float(lambda_div), float(lambda_tq), float(lambda_ta), seed,
                              runs[FAR_OOD].result if FAR_OOD in runs else None,
                              runs[NEAR_OOD].result if NEAR_OOD in runs else None, detection)
            logger.info("ablation %s seed %d: AP50 %s far AUROC %s near AUROC %s", row.label,
                        seed, detection.ap50, row.far and row.far.auroc,
                        row.near and row.near.auroc)
            rows.append(row)
    return rows
