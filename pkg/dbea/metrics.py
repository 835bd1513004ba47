"""
Evaluation metrics.

Out-of-distribution separability (AUROC, AUPR-In/Out, FPR and detection
error at a fixed true positive rate), the Pearson correlation between
detection confidence and IoU, and COCO-style average precision. For the OOD
metrics a higher score means "more OOD" and OOD samples are the positives.
Equal scores are always treated as a single threshold.
"""
from dataclasses import dataclass, field

import numpy
from scipy.stats import rankdata
from sklearn import metrics as skmetrics

from .boxes import pairwise_iou
from .errors import UndefinedMetricError

LABEL_ID = 'in_distribution'
LABEL_OOD = 'ood'
COCO_IOU_THRESHOLDS = tuple(numpy.round(numpy.linspace(0.5, 0.95, 10), 2).tolist())


@dataclass(frozen=True)
class ScoredSample:
    """
    One scored sample; higher scores mean more OOD.
    """
    score: float
    label: str


def scored_samples(id_scores, ood_scores):
    """
    Build samples from separate in-distribution and OOD score lists.
    """
    return [ScoredSample(float(s), LABEL_ID) for s in id_scores] + \
        [ScoredSample(float(s), LABEL_OOD) for s in ood_scores]


def _arrays(samples):
    scores = numpy.array([s.score for s in samples], dtype=numpy.float64)
    is_ood = numpy.array([s.label == LABEL_OOD for s in samples], dtype=bool)
    if not numpy.all(numpy.isfinite(scores)):
        raise UndefinedMetricError("scores must be finite")
    return scores, is_ood


def _need_both(is_positive):
    n_pos = int(is_positive.sum())
    if n_pos == 0 or n_pos == len(is_positive):
        raise UndefinedMetricError("need at least one sample of each label")


def roc_curve(scores, is_positive):
    """
    ROC points, one per distinct score (descending), starting at (0, 0).

    Returns
    -------

    fpr, tpr, thresholds : numpy array
        `thresholds[0]` is +inf for the starting point
    """
    scores = numpy.asarray(scores, dtype=numpy.float64)
    is_positive = numpy.asarray(is_positive, dtype=bool)
    _need_both(is_positive)
    fpr, tpr, thresholds = skmetrics.roc_curve(is_positive.astype(int), scores,
                                               drop_intermediate=False)
    thresholds = numpy.array(thresholds, dtype=numpy.float64)
    thresholds[0] = numpy.inf
    return fpr, tpr, thresholds


def pr_curve(scores, is_positive):
    """
    Precision and recall at every distinct score (descending) down to the
    first one with full recall.

    Returns
    -------

    precision, recall, thresholds : numpy array
    """
    scores = numpy.asarray(scores, dtype=numpy.float64)
    is_positive = numpy.asarray(is_positive, dtype=bool)
    if not is_positive.any():
        raise UndefinedMetricError("no positive samples")
    precision, recall, thresholds = skmetrics.precision_recall_curve(
        is_positive.astype(int), scores)
    # drop the (1, 0) end point and walk from the highest threshold down
    precision, recall = precision[:-1][::-1], recall[:-1][::-1]
    thresholds = thresholds[::-1]
    last = int(numpy.argmax(recall >= 1.0))
    return precision[:last + 1], recall[:last + 1], thresholds[:last + 1]


def auroc(samples):
    """
    Area under the ROC curve by the rank (Mann-Whitney) method with midranks:
    the probability that an OOD sample outscores an in-distribution sample,
    counting ties as one half.
    """
    scores, is_ood = _arrays(samples)
    _need_both(is_ood)
    ranks = rankdata(scores, method='average')
    n_pos = is_ood.sum()
    n_neg = len(is_ood) - n_pos
    u = ranks[is_ood].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_trapezoid(samples):
    """
    Area under the ROC curve by trapezoidal integration of `roc_curve`.
    """
    scores, is_ood = _arrays(samples)
    fpr, tpr, _ = roc_curve(scores, is_ood)
    return float(skmetrics.auc(fpr, tpr))


def aupr(samples, positive_class='out'):
    """
    Area under the precision-recall curve as average precision: precision
    summed over the recall increments of every distinct threshold.

    Parameters
    ----------

    samples : list of ScoredSample
    positive_class : string
        ``'out'``: OOD samples are positive and scores are used as they are;
        ``'in'``: in-distribution samples are positive and scores are negated
    """
    scores, is_ood = _arrays(samples)
    if positive_class == 'out':
        positive = is_ood
    elif positive_class == 'in':
        positive, scores = ~is_ood, -scores
    else:
        raise ValueError("positive_class must be 'in' or 'out'")
    if not positive.any():
        raise UndefinedMetricError("no positive samples")
    return float(skmetrics.average_precision_score(positive.astype(int), scores))


def _operating_point(samples, tpr_target):
    scores, is_ood = _arrays(samples)
    fpr, tpr, thr = roc_curve(scores, is_ood)
    # first threshold block, walking down from the highest score, whose
    # TPR reaches the target
    hit = numpy.nonzero(tpr >= tpr_target - 1e-12)[0]
    i = hit[0]
    return float(fpr[i]), float(tpr[i]), float(thr[i])


def fpr_at_tpr(samples, tpr_target=0.95):
    """
    False positive rate at the highest threshold whose true positive rate
    reaches `tpr_target`.
    """
    return _operating_point(samples, tpr_target)[0]


def de_at_tpr(samples, tpr_target=0.95):
    """
    Detection error ``0.5 (1 - TPR) + 0.5 FPR`` at the `fpr_at_tpr`
    operating point, the misclassification probability under equal priors.
    """
    fpr, tpr, _ = _operating_point(samples, tpr_target)
    return 0.5 * (1.0 - tpr) + 0.5 * fpr


@dataclass
class OODBenchmarkResult:
    """
    Separability of one in-distribution versus OOD pairing. Metrics that are
    undefined for the given samples are None.
    """
    auroc: float = None
    aupr_in: float = None
    aupr_out: float = None
    fpr_at_95: float = None
    de_at_95: float = None
    n_id: int = 0
    n_ood: int = 0
    name: str = ""

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def _repr_html_(self):
        cells = ''.join('<td>{}</td>'.format('&ndash;' if v is None else
                                             '{:.4f}'.format(v) if isinstance(v, float) else v)
                        for v in self.to_dict().values())
        head = ''.join('<th>{}</th>'.format(k) for k in self.__dataclass_fields__)
        return '<table><tr>{}</tr><tr>{}</tr></table>'.format(head, cells)


def ood_benchmark(samples, name="", tpr_target=0.95):
    """
    All OOD metrics for one pairing. Undefined metrics become None.
    """
    _, is_ood = _arrays(samples)
    result = OODBenchmarkResult(n_id=int((~is_ood).sum()), n_ood=int(is_ood.sum()), name=name)
    for attr, fn in (('auroc', auroc),
                     ('aupr_in', lambda s: aupr(s, 'in')),
                     ('aupr_out', lambda s: aupr(s, 'out')),
                     ('fpr_at_95', lambda s: fpr_at_tpr(s, tpr_target)),
                     ('de_at_95', lambda s: de_at_tpr(s, tpr_target))):
        try:
            setattr(result, attr, fn(samples))
        except UndefinedMetricError:
            setattr(result, attr, None)
    return result


def pearson(xs, ys):
    """
    Product-moment correlation coefficient.

    Raises
    ------

    UndefinedMetricError
        With fewer than two points or zero variance in either argument.
    """
    x = numpy.asarray(xs, dtype=numpy.float64)
    y = numpy.asarray(ys, dtype=numpy.float64)
    if len(x) != len(y):
        raise ValueError("xs and ys differ in length")
    if len(x) < 2:
        raise UndefinedMetricError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = numpy.dot(dx, dx), numpy.dot(dy, dy)
    if sxx <= 0.0 or syy <= 0.0:
        raise UndefinedMetricError("zero variance")
    return float(numpy.clip(numpy.dot(dx, dy) / numpy.sqrt(sxx * syy), -1.0, 1.0))


@dataclass
class DetectionRecord:
    """
    One predicted detection and, once matched, the ground truth it covers.
    """
    scene_id: str
    box: tuple
    class_id: int
    confidence: float
    matched_gt: int = None
    gt_class: int = None
    iou: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def class_match(self):
        return self.matched_gt is not None and self.gt_class == self.class_id

    def to_record(self):
        record = {'scene_id': self.scene_id, 'box': list(self.box),
                  'class_id': int(self.class_id), 'confidence': float(self.confidence),
                  'matched_gt': self.matched_gt, 'gt_class': self.gt_class,
                  'iou': float(self.iou)}
        record.update(self.extra)
        return record

    @classmethod
    def from_record(cls, record):
        known = ('scene_id', 'box', 'class_id', 'confidence', 'matched_gt', 'gt_class', 'iou')
        matched = record.get('matched_gt')
        gt_class = record.get('gt_class')
        return cls(str(record['scene_id']), tuple(float(v) for v in record['box']),
                   int(record['class_id']), float(record['confidence']),
                   None if matched is None else int(matched),
                   None if gt_class is None else int(gt_class),
                   float(record.get('iou', 0.0)),
                   {k: v for k, v in record.items() if k not in known})


def _by_scene(records):
    groups = {}
    for i, r in enumerate(records):
        groups.setdefault(r.scene_id, []).append(i)
    return groups


def match_detections(records, ground_truth):
    """
    Greedy class-agnostic matching for calibration analysis: in each scene,
    detections in order of decreasing confidence take the unconsumed
    ground-truth box of highest (positive) IoU.

    Parameters
    ----------

    records : list of DetectionRecord
    ground_truth : dict
        scene_id -> list of (class_id, box)

    Returns
    -------

    records : list of DetectionRecord
        Copies with `matched_gt`, `gt_class` and `iou` filled in
    """
    out = [DetectionRecord(r.scene_id, tuple(r.box), r.class_id, r.confidence,
                           extra=dict(r.extra)) for r in records]
    for scene_id, idx in _by_scene(out).items():
        gts = ground_truth.get(scene_id, [])
        if not gts:
            continue
        ious = pairwise_iou([out[i].box for i in idx], [b for _, b in gts])
        consumed = numpy.zeros(len(gts), dtype=bool)
        for row in sorted(range(len(idx)), key=lambda j: -out[idx[j]].confidence):
            candidates = numpy.where(consumed, -1.0, ious[row])
            g = int(numpy.argmax(candidates))
            if candidates[g] > 0.0:
                consumed[g] = True
                r = out[idx[row]]
                r.matched_gt, r.gt_class, r.iou = g, int(gts[g][0]), float(ious[row, g])
    return out


def pcorr_split(records, iou_tp_threshold=0.5):
    """
    Pearson correlation between confidence and IoU, over all records
    (unmatched records count with IoU 0) and over true positives (IoU at
    least the threshold and matching class).

    Returns
    -------

    pcorr_all, pcorr_tp : scalar or None
        None where the correlation is undefined
    """
    if not 0.0 < iou_tp_threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    conf = numpy.array([r.confidence for r in records], dtype=float)
    ious = numpy.array([r.iou if r.matched_gt is not None else 0.0 for r in records], dtype=float)
    tp = numpy.array([r.class_match and r.iou >= iou_tp_threshold for r in records], dtype=bool)
    results = []
    for mask in (numpy.ones(len(records), dtype=bool), tp):
        try:
            results.append(pearson(conf[mask], ious[mask]))
        except UndefinedMetricError:
            results.append(None)
    return tuple(results)


def _class_ap(preds, gts_by_scene, n_gt, threshold):
    # preds: list of (confidence, scene_id, box), already confidence-sorted
    consumed = {s: numpy.zeros(len(g), dtype=bool) for s, g in gts_by_scene.items()}
    tp = numpy.zeros(len(preds))
    for i, (_, scene_id, box) in enumerate(preds):
        gts = gts_by_scene.get(scene_id)
        if not gts:
            continue
        ious = pairwise_iou([box], gts)[0]
        ious = numpy.where(consumed[scene_id], -1.0, ious)
        g = int(numpy.argmax(ious))
        if ious[g] >= threshold:
            consumed[scene_id][g] = True
            tp[i] = 1.0
    return interpolated_ap(numpy.cumsum(tp), numpy.cumsum(1.0 - tp), n_gt)


def interpolated_ap(tp, fp, n_gt):
    """
    All-point interpolated AP from cumulative true and false positive counts.
    """
    if len(tp) == 0:
        return 0.0
    recall = numpy.r_[0.0, tp / n_gt]
    precision = numpy.r_[1.0, tp / numpy.maximum(tp + fp, 1e-300)]
    envelope = numpy.maximum.accumulate(precision[::-1])[::-1]
    return float(numpy.sum(numpy.diff(recall) * envelope[1:]))


def average_precision(records, ground_truth, iou_thresholds=COCO_IOU_THRESHOLDS):
    """
    COCO-style average precision.

    Per class, detections are walked in order of decreasing confidence; each
    takes the unconsumed ground truth of its class with the highest IoU if
    that IoU reaches the threshold. Classes without ground truth are left out
    of the means.

    Parameters
    ----------

    records : list of DetectionRecord
    ground_truth : dict
        scene_id -> list of (class_id, box)
    iou_thresholds : sequence
        Thresholds averaged for mAP; 0.5 must be one of them

    Returns
    -------

    ap50, map : scalar

    Raises
    ------

    UndefinedMetricError
        If there is no ground truth at all.
    """
    classes = sorted({int(c) for gts in ground_truth.values() for c, _ in gts})
    if not classes:
        raise UndefinedMetricError("no ground truth")
    table = numpy.zeros((len(classes), len(iou_thresholds)))
    for ci, c in enumerate(classes):
        gts_by_scene = {s: [b for k, b in gts if int(k) == c] for s, gts in ground_truth.items()}
        n_gt = sum(len(g) for g in gts_by_scene.values())
        preds = [(r.confidence, r.scene_id, tuple(r.box)) for r in records if r.class_id == c]
        order = sorted(range(len(preds)), key=lambda i: -preds[i][0])
        preds = [preds[i] for i in order]
        for ti, t in enumerate(iou_thresholds):
            table[ci, ti] = _class_ap(preds, gts_by_scene, n_gt, t)
    i50 = [i for i, t in enumerate(iou_thresholds) if abs(t - 0.5) < 1e-9]
    ap50 = float(table[:, i50[0]].mean()) if i50 else None
    return ap50, float(table.mean())
