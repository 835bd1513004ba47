"""
Matching and losses.

Bipartite matching of fused detections to ground truth, the base detection
loss (cross-entropy, L1 and GIoU), the tandem aiding and quelling losses on
the box outputs, the cosine diversity loss on the class logits, and their
weighted total. Every loss works on one scene and returns its value together
with the gradient with respect to the head outputs.
"""
from dataclasses import dataclass

import numpy
from scipy.optimize import linear_sum_assignment
from scipy.special import log_softmax, softmax

from .boxes import giou_with_grad, pairwise_giou
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    """
    Loss weights. The lambda defaults are the best setting of the loss-weight
    ablation; the base-loss weights follow DETR.
    """
    lambda_ta: float = 1.0
    lambda_tq: float = 10.0
    lambda_div: float = 40.0
    w_cls: float = 2.0
    w_l1: float = 5.0
    w_giou: float = 2.0
    epsilon_tq: float = 1e-4

    def validate(self):
        for name in ('lambda_ta', 'lambda_tq', 'lambda_div', 'w_cls', 'w_l1', 'w_giou'):
            if getattr(self, name) < 0.0:
                raise ConfigError("weights must be >= 0", "loss." + name)
        if not self.epsilon_tq > 0.0:
            raise ConfigError("must be > 0", "loss.epsilon_tq")


class MatchAssignment(object):
    """
    Query to ground-truth pairs (sorted by query) and the unmatched queries.

    Parameters
    ----------

    query_index : array of int
        Matched queries, ascending
    gt_index : array of int
        Ground-truth object matched to each entry of `query_index`
    unmatched : array of int
        Queries with no ground truth
    n_queries : int
        Number of queries in the scene
    """

    def __init__(self, query_index, gt_index, unmatched, n_queries):
        self.query_index = query_index
        self.gt_index = gt_index
        self.unmatched = unmatched
        self.n_queries = n_queries

    @property
    def pairs(self):
        return list(zip(self.query_index.tolist(), self.gt_index.tolist()))

    @property
    def matched_mask(self):
        mask = numpy.zeros(self.n_queries, dtype=bool)
        mask[self.query_index] = True
        return mask


@dataclass
class LossBreakdown:
    """
    Components of the total loss,
    ``total = base + lambda_ta ta + lambda_tq tq + lambda_div diversity``,
    with ``tandem = lambda_ta ta + lambda_tq tq``.
    """
    base: float = 0.0
    ta: float = 0.0
    tq: float = 0.0
    tandem: float = 0.0
    diversity: float = 0.0
    total: float = 0.0

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def mean(cls, breakdowns):
        breakdowns = list(breakdowns)
        if not breakdowns:
            return cls()
        return cls(**{k: float(numpy.mean([getattr(b, k) for b in breakdowns]))
                      for k in cls.__dataclass_fields__})


def assignment_from_costs(cost):
    """
    Minimum-cost assignment of the rows (queries) of a cost matrix to its
    columns (ground truth).

    Raises
    ------

    ConfigError
        If there are more columns than rows.
    """
    cost = numpy.asarray(cost, dtype=numpy.float64)
    if cost.ndim != 2:
        raise ShapeError("cost matrix must be 2-D")
    n_q, n_g = cost.shape
    if n_g > n_q:
        raise ConfigError("{} ground-truth objects but only {} queries".format(n_g, n_q),
                          "dataset.queries")
    if n_g == 0:
        return MatchAssignment(numpy.zeros(0, dtype=int), numpy.zeros(0, dtype=int),
                               numpy.arange(n_q), n_q)
    rows, cols = linear_sum_assignment(cost)
    order = numpy.argsort(rows)
    rows, cols = rows[order], cols[order]
    unmatched = numpy.setdiff1d(numpy.arange(n_q), rows)
    return MatchAssignment(rows.astype(int), cols.astype(int), unmatched, n_q)


def match_cost_matrix(fused, gt_classes, gt_boxes, weights):
    r"""
    Pair costs
    :math:`w_{cls}(1 - p_q[c_g]) + w_{L1}\|b_q - b_g\|_1 + w_{giou}(1 - GIoU(b_q, b_g))`.
    """
    gt_classes = numpy.asarray(gt_classes, dtype=int)
    gt_boxes = numpy.asarray(gt_boxes, dtype=numpy.float64).reshape(-1, 4)
    if len(gt_classes) == 0:
        return numpy.zeros((len(fused.boxes), 0))
    cls_cost = 1.0 - fused.class_probs[:, gt_classes]
    l1_cost = numpy.abs(fused.boxes[:, None, :] - gt_boxes[None, :, :]).sum(axis=-1)
    giou_cost = 1.0 - pairwise_giou(fused.boxes, gt_boxes)
    return weights.w_cls * cls_cost + weights.w_l1 * l1_cost + weights.w_giou * giou_cost


def hungarian_match(fused, gt_classes, gt_boxes, weights):
    """
    Match fused detections to ground truth by minimum total pair cost.

    Parameters
    ----------

    fused : FusedDetections
        Detections of one scene
    gt_classes : array_like
        Ground-truth class ids
    gt_boxes : array_like
        Ground-truth boxes (n, 4)
    weights : LossWeights
        Supplies w_cls, w_l1, w_giou

    Returns
    -------

    match : MatchAssignment
    """
    return assignment_from_costs(match_cost_matrix(fused, gt_classes, gt_boxes, weights))


def _targets(n_queries, n_logits, match, gt_classes):
    targets = numpy.full(n_queries, n_logits - 1, dtype=int)
    targets[match.query_index] = numpy.asarray(gt_classes, dtype=int)[match.gt_index]
    return targets


def base_loss(tandem, match, gt_classes, gt_boxes, weights):
    """
    Detection loss applied to every head and averaged over heads.

    Per query: softmax cross-entropy to the matched class (no-object for
    unmatched queries), plus for matched queries ``w_l1`` times the L1 box
    error and ``w_giou`` times ``1 - GIoU``. Cross-entropy is weighted by
    ``w_cls``. Terms are averaged over the queries of the scene.

    Returns
    -------

    value : scalar
    grads : list of tuple
        Per head, (gradient w.r.t. boxes, gradient w.r.t. logits)
    terms : dict
        Unweighted ``cls``, ``l1`` and ``giou`` terms, averaged over heads
    """
    heads = [tandem.alpha] + ([] if tandem.beta is None else [tandem.beta])
    n_q = len(tandem.alpha.boxes)
    if n_q == 0:
        return 0.0, [(numpy.zeros((0, 4)), numpy.zeros_like(h.logits)) for h in heads], \
            {'cls': 0.0, 'l1': 0.0, 'giou': 0.0}
    gt_boxes = numpy.asarray(gt_boxes, dtype=numpy.float64).reshape(-1, 4)
    qi, gi = match.query_index, match.gt_index
    scale = 1.0 / (len(heads) * n_q)
    total = 0.0
    terms = {'cls': 0.0, 'l1': 0.0, 'giou': 0.0}
    grads = []
    for head in heads:
        targets = _targets(n_q, head.logits.shape[1], match, gt_classes)
        logp = log_softmax(head.logits, axis=1)
        ce = -logp[numpy.arange(n_q), targets]
        g_logits = softmax(head.logits, axis=1)
        g_logits[numpy.arange(n_q), targets] -= 1.0
        g_logits *= weights.w_cls * scale

        g_boxes = numpy.zeros_like(head.boxes)
        diff = head.boxes[qi] - gt_boxes[gi]
        l1 = numpy.abs(diff).sum()
        g_boxes[qi] += weights.w_l1 * numpy.sign(diff) * scale
        if len(qi):
            g_val, g_grad = giou_with_grad(head.boxes[qi], gt_boxes[gi])
            giou_term = float(numpy.sum(1.0 - g_val))
            g_boxes[qi] -= weights.w_giou * g_grad * scale
        else:
            giou_term = 0.0

        total += (weights.w_cls * ce.sum() + weights.w_l1 * l1
                  + weights.w_giou * giou_term) * scale
        terms['cls'] += ce.sum() * scale
        terms['l1'] += l1 * scale
        terms['giou'] += giou_term * scale
        grads.append((g_boxes, g_logits))
    return float(total), grads, {k: float(v) for k, v in terms.items()}


def _check_pair(alpha, beta):
    if alpha.boxes.shape != beta.boxes.shape or alpha.logits.shape != beta.logits.shape:
        raise ShapeError("alpha and beta outputs differ in shape")


def tandem_aiding(alpha, beta, match):
    r"""
    Mean over matched queries of :math:`\sum_{x,y,w,h} |\phi^\alpha - \phi^\beta|`.
    The subgradient at a zero gap is 0.

    Returns
    -------

    value : scalar
    grads : tuple
        (gradient w.r.t. alpha boxes, gradient w.r.t. beta boxes)
    """
    _check_pair(alpha, beta)
    g_alpha = numpy.zeros_like(alpha.boxes)
    qi = match.query_index
    if len(qi) == 0:
        return 0.0, (g_alpha, numpy.zeros_like(beta.boxes))
    diff = alpha.boxes[qi] - beta.boxes[qi]
    value = numpy.abs(diff).sum() / len(qi)
    g_alpha[qi] = numpy.sign(diff) / len(qi)
    return float(value), (g_alpha, -g_alpha)


def tandem_quelling(alpha, beta, match, epsilon_tq=1e-4):
    r"""
    Mean over unmatched queries of
    :math:`\sum_{x,y,w,h} 1 / \sqrt{(\phi^\alpha - \phi^\beta)^2 + \epsilon}`.
    Bounded by :math:`4/\sqrt{\epsilon}` per query.

    Returns
    -------

    value : scalar
    grads : tuple
        (gradient w.r.t. alpha boxes, gradient w.r.t. beta boxes)
    """
    _check_pair(alpha, beta)
    if not epsilon_tq > 0.0:
        raise ConfigError("must be > 0", "loss.epsilon_tq")
    g_alpha = numpy.zeros_like(alpha.boxes)
    ui = match.unmatched
    if len(ui) == 0:
        return 0.0, (g_alpha, numpy.zeros_like(beta.boxes))
    diff = alpha.boxes[ui] - beta.boxes[ui]
    r2 = diff**2 + epsilon_tq
    value = numpy.sum(r2**-0.5) / len(ui)
    g_alpha[ui] = -diff * r2**-1.5 / len(ui)
    return float(value), (g_alpha, -g_alpha)


def diversity_loss(alpha, beta, tol=1e-12):
    r"""
    Mean cosine similarity of the alpha and beta logit vectors over all
    queries. Queries where either vector has norm below `tol` contribute 0.

    Returns
    -------

    value : scalar
        In [-1, 1]
    grads : tuple
        (gradient w.r.t. alpha logits, gradient w.r.t. beta logits)
    """
    _check_pair(alpha, beta)
    a, b = alpha.logits, beta.logits
    n = len(a)
    g_a, g_b = numpy.zeros_like(a), numpy.zeros_like(b)
    if n == 0:
        return 0.0, (g_a, g_b)
    na = numpy.linalg.norm(a, axis=1)
    nb = numpy.linalg.norm(b, axis=1)
    ok = (na >= tol) & (nb >= tol)
    cos = numpy.zeros(n)
    cos[ok] = numpy.sum(a[ok] * b[ok], axis=1) / (na[ok] * nb[ok])
    g_a[ok] = (b[ok] / (na[ok] * nb[ok])[:, None] - cos[ok, None] * a[ok] / na[ok, None]**2) / n
    g_b[ok] = (a[ok] / (na[ok] * nb[ok])[:, None] - cos[ok, None] * b[ok] / nb[ok, None]**2) / n
    return float(cos.sum() / n), (g_a, g_b)


def dbea_loss(tandem, match, gt_classes, gt_boxes, weights):
    """
    Total loss: base loss plus the weighted tandem losses (box outputs only)
    and the weighted diversity loss (class logits only). A vanilla output
    (no beta head) only receives the base loss.

    Returns
    -------

    breakdown : LossBreakdown
    grads : list of tuple
        Per head, (gradient w.r.t. boxes, gradient w.r.t. logits)
    """
    base, grads, _ = base_loss(tandem, match, gt_classes, gt_boxes, weights)
    if tandem.beta is None:
        return LossBreakdown(base=base, total=base), grads
    alpha, beta = tandem.alpha, tandem.beta
    ta, (ta_a, ta_b) = tandem_aiding(alpha, beta, match)
    tq, (tq_a, tq_b) = tandem_quelling(alpha, beta, match, weights.epsilon_tq)
    div, (div_a, div_b) = diversity_loss(alpha, beta)
    (gb_a, gl_a), (gb_b, gl_b) = grads
    grads = [
        (gb_a + weights.lambda_ta * ta_a + weights.lambda_tq * tq_a,
         gl_a + weights.lambda_div * div_a),
        (gb_b + weights.lambda_ta * ta_b + weights.lambda_tq * tq_b,
         gl_b + weights.lambda_div * div_b),
    ]
    tandem_value = weights.lambda_ta * ta + weights.lambda_tq * tq
    total = base + tandem_value + weights.lambda_div * div
    return LossBreakdown(base, ta, tq, tandem_value, div, total), grads


def scene_loss(output, gt_classes, gt_boxes, weights):
    """
    Match one scene's fused detections and evaluate `dbea_loss` on it.

    Returns
    -------

    breakdown : LossBreakdown
    grads : list of tuple
    match : MatchAssignment
    """
    match = hungarian_match(output.fused, gt_classes, gt_boxes, weights)
    breakdown, grads = dbea_loss(output, match, gt_classes, gt_boxes, weights)
    return breakdown, grads, match
