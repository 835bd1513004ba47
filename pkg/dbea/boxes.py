"""
Box geometry.

Boxes are (cx, cy, w, h) rows. IoU and generalized IoU are computed on the
corner form; `giou_with_grad` also returns the derivative of GIoU with
respect to the first box, which the base detection loss needs.
"""
import numpy


def cxcywh_to_xyxy(boxes):
    boxes = numpy.asarray(boxes, dtype=numpy.float64)
    cx, cy, w, h = numpy.moveaxis(boxes, -1, 0)
    return numpy.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


def xyxy_to_cxcywh(boxes):
    boxes = numpy.asarray(boxes, dtype=numpy.float64)
    x0, y0, x1, y1 = numpy.moveaxis(boxes, -1, 0)
    return numpy.stack([0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0], axis=-1)


def _terms(a, b):
    # a, b broadcast against each other, corner form in the last axis
    ax0, ay0, ax1, ay1 = numpy.moveaxis(a, -1, 0)
    bx0, by0, bx1, by1 = numpy.moveaxis(b, -1, 0)
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    iw = numpy.maximum(numpy.minimum(ax1, bx1) - numpy.maximum(ax0, bx0), 0.0)
    ih = numpy.maximum(numpy.minimum(ay1, by1) - numpy.maximum(ay0, by0), 0.0)
    inter = iw * ih
    union = area_a + area_b - inter
    cw = numpy.maximum(ax1, bx1) - numpy.minimum(ax0, bx0)
    ch = numpy.maximum(ay1, by1) - numpy.minimum(ay0, by0)
    return inter, union, cw * ch


def _safe_div(num, den):
    out = numpy.zeros(numpy.broadcast(num, den).shape)
    numpy.divide(num, den, out=out, where=den > 0.0)
    return out


def iou(a, b):
    """
    Intersection over union of (cx, cy, w, h) boxes; 0 when the union is
    empty. Broadcasts over leading axes.
    """
    inter, union, _ = _terms(cxcywh_to_xyxy(a), cxcywh_to_xyxy(b))
    return _safe_div(inter, union)


def giou(a, b):
    r"""
    Generalized IoU,
    :math:`IoU - |E \setminus (A \cup B)| / |E|` with :math:`E` the smallest
    enclosing box. Two zero-area boxes at the same point give 0.

    Parameters
    ----------

    a, b : array_like
        Boxes in (cx, cy, w, h) form; broadcast against each other

    Returns
    -------

    g : scalar or numpy array
        Values in [-1, 1]
    """
    inter, union, enclosing = _terms(cxcywh_to_xyxy(a), cxcywh_to_xyxy(b))
    g = _safe_div(inter, union) - _safe_div(enclosing - union, enclosing)
    return g if g.ndim else float(g)


def pairwise_iou(a, b):
    """
    IoU matrix between every row of `a` and every row of `b`.
    """
    a = numpy.asarray(a, dtype=numpy.float64).reshape(-1, 4)
    b = numpy.asarray(b, dtype=numpy.float64).reshape(-1, 4)
    return iou(a[:, None, :], b[None, :, :])


def pairwise_giou(a, b):
    """
    GIoU matrix between every row of `a` and every row of `b`.
    """
    a = numpy.asarray(a, dtype=numpy.float64).reshape(-1, 4)
    b = numpy.asarray(b, dtype=numpy.float64).reshape(-1, 4)
    return numpy.asarray(giou(a[:, None, :], b[None, :, :]))


def giou_with_grad(pred, target):
    """
    Row-wise GIoU and its gradient with respect to `pred`.

    At ties between corners (e.g. identical boxes) the derivative is taken
    from the target side, i.e. the subgradient that leaves `pred` fixed.

    Parameters
    ----------

    pred, target : numpy array
        (n, 4) boxes in (cx, cy, w, h) form

    Returns
    -------

    g : numpy array
        (n,) GIoU values
    grad : numpy array
        (n, 4) derivative of each value with respect to its `pred` row
    """
    p = cxcywh_to_xyxy(numpy.asarray(pred, dtype=numpy.float64).reshape(-1, 4))
    t = cxcywh_to_xyxy(numpy.asarray(target, dtype=numpy.float64).reshape(-1, 4))
    px0, py0, px1, py1 = p.T
    tx0, ty0, tx1, ty1 = t.T
    pw, ph = px1 - px0, py1 - py0
    iw_raw = numpy.minimum(px1, tx1) - numpy.maximum(px0, tx0)
    ih_raw = numpy.minimum(py1, ty1) - numpy.maximum(py0, ty0)
    iw, ih = numpy.maximum(iw_raw, 0.0), numpy.maximum(ih_raw, 0.0)
    inter = iw * ih
    union = pw * ph + (tx1 - tx0) * (ty1 - ty0) - inter
    cw = numpy.maximum(px1, tx1) - numpy.minimum(px0, tx0)
    ch = numpy.maximum(py1, ty1) - numpy.minimum(py0, ty0)
    enc = cw * ch
    value = _safe_div(inter, union) - _safe_div(enc - union, enc)

    # derivatives of the intersection sides w.r.t. the predicted corners
    ix_on = (iw_raw > 0.0).astype(float)
    iy_on = (ih_raw > 0.0).astype(float)
    d_iw = numpy.stack([-(px0 > tx0).astype(float) * ix_on, numpy.zeros_like(px0),
                        (px1 < tx1) * ix_on, numpy.zeros_like(px0)], axis=1)
    d_ih = numpy.stack([numpy.zeros_like(py0), -(py0 > ty0).astype(float) * iy_on,
                        numpy.zeros_like(py0), (py1 < ty1) * iy_on], axis=1)
    d_inter = d_iw * ih[:, None] + d_ih * iw[:, None]
    d_area = numpy.stack([-ph, -pw, ph, pw], axis=1)
    d_union = d_area - d_inter
    d_cw = numpy.stack([-(px0 < tx0).astype(float), numpy.zeros_like(px0),
                        (px1 > tx1).astype(float), numpy.zeros_like(px0)], axis=1)
    d_ch = numpy.stack([numpy.zeros_like(py0), -(py0 < ty0).astype(float),
                        numpy.zeros_like(py0), (py1 > ty1).astype(float)], axis=1)
    d_enc = d_cw * ch[:, None] + d_ch * cw[:, None]

    # giou = inter/union - 1 + union/enc
    grad_xyxy = numpy.zeros_like(p)
    ok_u = union > 0.0
    ok_e = enc > 0.0
    grad_xyxy[ok_u] += (d_inter[ok_u] * union[ok_u, None] - inter[ok_u, None] * d_union[ok_u]) \
        / union[ok_u, None]**2
    grad_xyxy[ok_e] += (d_union[ok_e] * enc[ok_e, None] - union[ok_e, None] * d_enc[ok_e]) \
        / enc[ok_e, None]**2

    # chain to (cx, cy, w, h): x0 = cx - w/2, x1 = cx + w/2
    g0, g1, g2, g3 = grad_xyxy.T
    grad = numpy.stack([g0 + g2, g1 + g3, 0.5 * (g2 - g0), 0.5 * (g3 - g1)], axis=1)
    return value, grad
