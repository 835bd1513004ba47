import numpy
import pytest
from numpy.testing import assert_allclose

from dbea.boxes import pairwise_iou
from dbea.errors import UndefinedMetricError
from dbea.metrics import (COCO_IOU_THRESHOLDS, LABEL_ID, LABEL_OOD, DetectionRecord,
                          ScoredSample, auroc, auroc_trapezoid, aupr, average_precision,
                          de_at_tpr, fpr_at_tpr, interpolated_ap, match_detections,
                          ood_benchmark, pcorr_split, pearson, pr_curve, roc_curve,
                          scored_samples)


def test_auroc_examples():
    assert auroc(scored_samples([0.1, 0.2], [0.8, 0.9])) == 1.0
    assert auroc(scored_samples([0.8, 0.9], [0.1, 0.2])) == 0.0
    assert auroc(scored_samples([0.5, 0.5, 0.5], [0.5, 0.5])) == 0.5
    assert_allclose(auroc(scored_samples([0.1, 0.4], [0.3, 0.5])), 0.75)


def test_auroc_rank_equals_trapezoid():
    """
    Both integrations agree on random samples with many ties.
    """
    rng = numpy.random.default_rng(0)
    for _ in range(1000):
        n_id, n_ood = rng.integers(1, 20, size=2)
        samples = scored_samples(rng.integers(0, 6, n_id), rng.integers(0, 6, n_ood) + 1)
        assert abs(auroc(samples) - auroc_trapezoid(samples)) <= 1e-12


def test_aupr_examples():
    """
    Descending: OOD 0.9, ID 0.7, OOD 0.5. Precision 1, 1/2, 2/3 at recall
    1/2, 1/2, 1.
    """
    samples = scored_samples([0.7], [0.9, 0.5])
    assert_allclose(aupr(samples, 'out'), 5.0 / 6.0)
    perfect = scored_samples([0.1, 0.2, 0.3], [0.7, 0.8])
    assert_allclose(aupr(perfect, 'out'), 1.0)
    assert_allclose(aupr(perfect, 'in'), 1.0)
    with pytest.raises(ValueError):
        aupr(samples, 'both')


def test_aupr_random_scores_give_base_rate():
    rng = numpy.random.default_rng(1)
    scores = rng.uniform(size=10000)
    is_ood = rng.uniform(size=10000) < 0.3
    samples = scored_samples(scores[~is_ood], scores[is_ood])
    assert abs(aupr(samples, 'out') - is_ood.mean()) < 0.02
    assert abs(aupr(samples, 'in') - (1.0 - is_ood.mean())) < 0.02


def _brute_force_fpr(id_scores, ood_scores, target=0.95):
    for t in sorted(set(id_scores) | set(ood_scores), reverse=True):
        tpr = numpy.mean(numpy.asarray(ood_scores) >= t)
        if tpr >= target - 1e-12:
            return numpy.mean(numpy.asarray(id_scores) >= t)


def test_fpr_at_95():
    perfect = scored_samples(numpy.arange(10), numpy.arange(10) + 100)
    assert fpr_at_tpr(perfect) == 0.0
    assert fpr_at_tpr(scored_samples([1.0] * 5, [1.0] * 5)) == 1.0

    id_scores = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]
    ood_scores = [0.3, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]
    samples = scored_samples(id_scores, ood_scores)
    # 90% of the OOD scores lie above every ID score; the tied 0.3 block
    # reaches TPR 1 with five ID scores at or above it
    assert_allclose(fpr_at_tpr(samples), 0.5)
    assert fpr_at_tpr(samples) == _brute_force_fpr(id_scores, ood_scores)

    rng = numpy.random.default_rng(2)
    for _ in range(200):
        id_scores = list(rng.integers(0, 30, rng.integers(1, 30)) / 10.0)
        ood_scores = list(rng.integers(5, 40, rng.integers(1, 30)) / 10.0)
        samples = scored_samples(id_scores, ood_scores)
        assert_allclose(fpr_at_tpr(samples), _brute_force_fpr(id_scores, ood_scores))


def test_detection_error_at_exact_target():
    """
    95 of 100 OOD samples sit below 103 of 1000 ID samples but above the
    rest: TPR 0.95, FPR 0.103.
    """
    ood = list(numpy.linspace(2.0, 3.0, 95)) + [-10.0] * 5
    id_ = list(numpy.linspace(5.0, 6.0, 103)) + list(numpy.linspace(0.0, 1.0, 897))
    samples = scored_samples(id_, ood)
    assert_allclose(fpr_at_tpr(samples), 0.103)
    assert_allclose(de_at_tpr(samples), 0.0765)
    assert abs(de_at_tpr(samples) - 0.076) <= 0.006


def test_detection_error_with_tied_block():
    """
    A tie block overshoots the target: TPR jumps from 0.94 to 0.968 while
    FPR becomes 0.012.
    """
    ood = list(numpy.linspace(2.0, 3.0, 940)) + [1.0] * 28 + [-10.0] * 32
    id_ = [1.0] * 12 + list(numpy.linspace(0.0, 0.5, 988))
    samples = scored_samples(id_, ood)
    assert_allclose(fpr_at_tpr(samples), 0.012)
    assert_allclose(de_at_tpr(samples), 0.5 * 0.032 + 0.5 * 0.012)
    assert_allclose(de_at_tpr(samples), 0.022)


def test_perfect_separation_detection_error():
    samples = scored_samples(numpy.arange(40), numpy.arange(40) + 100)
    assert_allclose(de_at_tpr(samples), 0.025)


def test_undefined_metrics():
    only_id = scored_samples([0.1, 0.2, 0.3], [])
    with pytest.raises(UndefinedMetricError):
        auroc(only_id)
    with pytest.raises(UndefinedMetricError):
        fpr_at_tpr(only_id)
    with pytest.raises(UndefinedMetricError):
        auroc(scored_samples([0.1, numpy.nan], [0.4]))
    result = ood_benchmark(only_id, name="id-only")
    assert result.auroc is None and result.aupr_out is None and result.fpr_at_95 is None
    assert_allclose(result.aupr_in, 1.0)
    assert (result.n_id, result.n_ood) == (3, 0)
    assert '&ndash;' in result._repr_html_()


def test_ood_benchmark():
    result = ood_benchmark(scored_samples([0.1, 0.4], [0.3, 0.5]), name="near")
    assert_allclose(result.auroc, 0.75)
    assert result.to_dict()['name'] == "near"
    assert (result.n_id, result.n_ood) == (2, 2)


def test_roc_curve():
    fpr, tpr, thr = roc_curve([0.9, 0.8, 0.8, 0.1], [True, True, False, False])
    assert_allclose(fpr, [0.0, 0.0, 0.5, 1.0])
    assert_allclose(tpr, [0.0, 0.5, 1.0, 1.0])
    assert thr[0] == numpy.inf
    assert_allclose(thr[1:], [0.9, 0.8, 0.1])


def _threshold_blocks(scores, is_positive):
    # cumulative (tp, fp) at the end of every block of equal scores, descending
    order = numpy.argsort(-scores, kind='stable')
    s = scores[order]
    pos = is_positive[order].astype(float)
    last = numpy.r_[s[1:] != s[:-1], True]
    return s[last], numpy.cumsum(pos)[last], numpy.cumsum(1.0 - pos)[last]


def test_curves_against_threshold_blocks():
    """
    Integer scores with many ties: one curve point per distinct score.
    """
    rng = numpy.random.default_rng(6)
    for _ in range(200):
        n = int(rng.integers(2, 40))
        scores = rng.integers(0, 8, n).astype(float)
        is_positive = rng.uniform(size=n) < 0.4
        is_positive[:2] = (True, False)
        thr, tp, fp = _threshold_blocks(scores, is_positive)
        fpr, tpr, thresholds = roc_curve(scores, is_positive)
        assert_allclose(fpr, numpy.r_[0.0, fp / fp[-1]])
        assert_allclose(tpr, numpy.r_[0.0, tp / tp[-1]])
        assert_allclose(thresholds[1:], thr)
        precision, recall, pr_thresholds = pr_curve(scores, is_positive)
        full = int(numpy.argmax(tp == tp[-1])) + 1
        assert_allclose(precision, (tp / (tp + fp))[:full])
        assert_allclose(recall, (tp / tp[-1])[:full])
        assert_allclose(pr_thresholds, thr[:full])
        samples = scored_samples(scores[~is_positive], scores[is_positive])
        step = numpy.sum(numpy.diff(numpy.r_[0.0, tp / tp[-1]]) * tp / (tp + fp))
        assert_allclose(aupr(samples, 'out'), step, atol=1e-12)


def test_pr_curve_example():
    precision, recall, thresholds = pr_curve([0.9, 0.7, 0.5], [True, False, True])
    assert_allclose(precision, [1.0, 0.5, 2.0 / 3.0])
    assert_allclose(recall, [0.5, 0.5, 1.0])
    assert_allclose(thresholds, [0.9, 0.7, 0.5])
    with pytest.raises(UndefinedMetricError):
        pr_curve([0.1, 0.2], [False, False])


def test_relabelling_swaps_aupr_in_and_out():
    rng = numpy.random.default_rng(7)
    id_scores = rng.normal(size=30)
    ood_scores = rng.normal(loc=0.5, size=20)
    samples = scored_samples(id_scores, ood_scores)
    swapped = scored_samples(-ood_scores, -id_scores)
    assert_allclose(aupr(swapped, 'in'), aupr(samples, 'out'), rtol=1e-12)
    assert_allclose(aupr(swapped, 'out'), aupr(samples, 'in'), rtol=1e-12)
    assert_allclose(auroc(swapped), auroc(samples), rtol=1e-12)


def test_scored_sample_labels():
    samples = scored_samples([1], [2])
    assert samples == [ScoredSample(1.0, LABEL_ID), ScoredSample(2.0, LABEL_OOD)]


def test_pearson():
    assert_allclose(pearson([1, 2, 3], [2, 4, 6]), 1.0)
    assert_allclose(pearson([1, 2, 3], [6, 4, 2]), -1.0)
    assert_allclose(pearson([1, 2, 3], [1, 3, 2]), 0.5)
    with pytest.raises(UndefinedMetricError):
        pearson([1.0], [2.0])
    with pytest.raises(UndefinedMetricError):
        pearson([1, 2, 3], [5, 5, 5])


def test_pearson_ignores_positive_affine_maps():
    rng = numpy.random.default_rng(8)
    x, y = rng.normal(size=50), rng.normal(size=50) + 0.3 * numpy.arange(50)
    r = pearson(x, y)
    assert_allclose(pearson(2.5 * x - 4.0, 0.1 * y + 7.0), r, rtol=1e-12)
    assert_allclose(pearson(-x, y), -r, rtol=1e-12)


def _record(confidence, iou, matched=True, class_id=0, gt_class=0):
    return DetectionRecord("s", (0.5, 0.5, 0.1, 0.1), class_id, confidence,
                           0 if matched else None, gt_class if matched else None,
                           iou if matched else 0.0)


def test_pcorr_split():
    records = [_record(0.9, 0.9), _record(0.8, 0.6), _record(0.3, 0.2),
               _record(0.2, 0.0, matched=False), _record(0.7, 0.8, class_id=1)]
    pcorr_all, pcorr_tp = pcorr_split(records)
    assert_allclose(pcorr_all, pearson([0.9, 0.8, 0.3, 0.2, 0.7], [0.9, 0.6, 0.2, 0.0, 0.8]))
    assert_allclose(pcorr_tp, 1.0)
    assert pcorr_split(records[:1]) == (None, None)
    assert pcorr_split(records[2:4])[1] is None


def test_match_detections_is_greedy_by_confidence():
    gt = {"s": [(1, (0.5, 0.5, 0.2, 0.2))], "t": []}
    records = [DetectionRecord("s", (0.52, 0.5, 0.2, 0.2), 1, 0.4),
               DetectionRecord("s", (0.55, 0.5, 0.2, 0.2), 0, 0.9),
               DetectionRecord("t", (0.5, 0.5, 0.2, 0.2), 0, 0.5)]
    matched = match_detections(records, gt)
    assert matched[1].matched_gt == 0 and matched[1].gt_class == 1
    assert not matched[1].class_match
    assert matched[0].matched_gt is None and matched[2].matched_gt is None
    assert records[1].matched_gt is None


def test_detection_record_round_trip():
    record = DetectionRecord("s", (0.5, 0.5, 0.1, 0.1), 2, 0.75, 1, 2, 0.8, {'regime': 'x'})
    assert DetectionRecord.from_record(record.to_record()) == record


def test_average_precision_by_hand():
    """
    An exact hit on one box and an IoU 2/3 hit on the other: AP50 1, AP70
    1/2, and mAP (4 + 6 / 2) / 10.
    """
    a, b = (0.2, 0.2, 0.1, 0.1), (0.5, 0.5, 0.2, 0.2)
    truth = {"s": [(0, a), (0, b)]}
    records = [DetectionRecord("s", a, 0, 0.9), DetectionRecord("s", (0.54, 0.5, 0.2, 0.2), 0, 0.8)]
    ap50, _ = average_precision(records, truth, (0.5,))
    no_ap50, ap70 = average_precision(records, truth, (0.7,))
    assert no_ap50 is None
    assert_allclose((ap50, ap70), (1.0, 0.5))
    ap50, map_ = average_precision(records, truth, COCO_IOU_THRESHOLDS)
    assert_allclose((ap50, map_), (1.0, 0.7))

    # a class with no predictions scores 0; a prediction in a scene without
    # ground truth of its class is a false positive
    truth["u"] = [(1, b)]
    records.append(DetectionRecord("u", b, 0, 0.95))
    ap50, _ = average_precision(records, truth, (0.5,))
    assert_allclose(ap50, (2.0 / 3.0 + 0.0) / 2.0)
    with pytest.raises(UndefinedMetricError):
        average_precision(records, {"s": []})


def _brute_force_ap(flags, n_gt):
    flags = numpy.asarray(flags, dtype=float)
    tp = numpy.cumsum(flags)
    precision = tp / numpy.arange(1, len(flags) + 1)
    return sum(max(precision[k:]) for k in range(len(flags)) if flags[k]) / n_gt


def test_interpolated_ap_against_brute_force():
    rng = numpy.random.default_rng(3)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        flags = rng.uniform(size=n) < 0.5
        n_gt = int(flags.sum() + rng.integers(0, 3)) or 1
        tp = numpy.cumsum(flags)
        ap = interpolated_ap(tp, numpy.cumsum(~flags), n_gt)
        assert_allclose(ap, _brute_force_ap(flags, n_gt), atol=1e-12)
    assert interpolated_ap(numpy.zeros(0), numpy.zeros(0), 3) == 0.0


def test_metrics_ignore_monotone_transforms():
    rng = numpy.random.default_rng(4)
    id_scores = rng.normal(size=40)
    ood_scores = rng.normal(loc=0.8, size=30)
    before = scored_samples(id_scores, ood_scores)
    after = scored_samples(numpy.exp(3.0 * id_scores), numpy.exp(3.0 * ood_scores))
    for fn in (auroc, lambda s: aupr(s, 'in'), lambda s: aupr(s, 'out'), fpr_at_tpr):
        assert_allclose(fn(after), fn(before), rtol=1e-12)


def _greedy_tp(preds, gts, threshold):
    consumed = set()
    flags = []
    for box in preds:
        best, best_iou = None, -1.0
        for g, gt in enumerate(gts):
            value = float(pairwise_iou([box], [gt])[0, 0])
            if g not in consumed and value > best_iou:
                best, best_iou = g, value
        hit = best is not None and best_iou >= threshold
        if hit:
            consumed.add(best)
        flags.append(hit)
    return flags


def test_average_precision_against_threshold_enumeration():
    """
    Single-class scenes with at most 8 predictions: every confidence
    threshold is evaluated from scratch.
    """
    rng = numpy.random.default_rng(5)
    for _ in range(100):
        n_gt = int(rng.integers(1, 4))
        gts = [tuple(b) for b in numpy.c_[rng.uniform(0.3, 0.7, (n_gt, 2)),
                                          rng.uniform(0.1, 0.3, (n_gt, 2))]]
        n = int(rng.integers(1, 9))
        picks = rng.integers(0, n_gt, n)
        boxes = [tuple(numpy.asarray(gts[p]) + rng.normal(scale=0.03, size=4)) for p in picks]
        confidences = rng.permutation(n) / n + 0.01
        order = numpy.argsort(-confidences)
        precision, recall = [], []
        for k in range(1, n + 1):
            flags = _greedy_tp([boxes[i] for i in order[:k]], gts, 0.5)
            precision.append(sum(flags) / k)
            recall.append(sum(flags) / n_gt)
        expected = sum((r - r_prev) * max(precision[k:])
                       for k, (r, r_prev) in enumerate(zip(recall, [0.0] + recall[:-1])))
        records = [DetectionRecord("s", boxes[i], 0, confidences[i]) for i in range(n)]
        ap50, _ = average_precision(records, {"s": [(0, b) for b in gts]}, (0.5,))
        assert_allclose(ap50, expected, atol=1e-12)
