"""
Situation monitor.

Turns the disagreement between the alpha and beta box predictions into an
out-of-distribution score, for a whole image (mean-centred variances over the
top-K detections) or for a single detection (variances normalized by the
detection confidence).
"""
from dataclasses import dataclass, field

import numpy

from .errors import ConfigError, EmptySelectionError, InvalidConfidenceError, ShapeError
from .model import select_topk
from .utils import parallel_map


@dataclass(frozen=True)
class MonitorConfig:
    """
    `outer_root` keeps the square root over the centred centre-point
    variance exactly as the score is defined; switching it off is an
    ablation.
    """
    outer_root: bool = True

    def validate(self):
        if not isinstance(self.outer_root, bool):
            raise ConfigError("must be a boolean", "monitor.outer_root")


@dataclass
class UncertaintyScore:
    """
    Scores of one scene. `per_object` holds ``(index, usm, confidence)``
    for each of the `top_k_used` selected detections, most confident first.
    """
    scene_id: str
    regime: str
    image_usm: float
    per_object: list = field(default_factory=list)
    top_k_used: int = 0

    def to_record(self):
        return {
            'scene_id': self.scene_id,
            'regime': self.regime,
            'image_usm': self.image_usm,
            'per_object': [{'index': int(i), 'usm': u, 'confidence': c}
                           for i, u, c in self.per_object],
        }

    @classmethod
    def from_record(cls, record):
        per_object = [(int(o['index']), float(o['usm']), float(o['confidence']))
                      for o in record.get('per_object', [])]
        return cls(str(record['scene_id']), str(record['regime']),
                   float(record['image_usm']), per_object, len(per_object))


def _boxes(x):
    return numpy.asarray(getattr(x, 'boxes', x), dtype=numpy.float64).reshape(-1, 4)


def _variances(alpha_boxes, beta_boxes):
    d = alpha_boxes - beta_boxes
    xy_var = numpy.sqrt(d[:, 0]**2 + d[:, 1]**2)
    wh_var = d[:, 2]**2 + d[:, 3]**2
    return xy_var, wh_var


def usm_image(alpha, beta, indices, outer_root=True):
    r"""
    Image-level uncertainty.

    For the selected detections, :math:`xy_i = \sqrt{\Delta x^2 + \Delta y^2}`
    and :math:`wh_i = \Delta w^2 + \Delta h^2`; each is centred by
    multiplication with its mean over the selection, and the score is
    :math:`\mathrm{mean}_i \sqrt{xy_i \bar{xy}} \; wh_i \bar{wh}`.

    Parameters
    ----------

    alpha, beta : HeadOutput or array_like
        Detector outputs (or their boxes) for one image
    indices : array_like
        Selected (top-K) detections
    outer_root : bool
        Apply the square root to the centred centre-point term

    Returns
    -------

    usm : scalar
    """
    indices = numpy.asarray(indices, dtype=int)
    if indices.size == 0:
        raise EmptySelectionError("no detections selected")
    a, b = _boxes(alpha), _boxes(beta)
    if a.shape != b.shape:
        raise ShapeError("alpha and beta boxes differ in shape")
    xy_var, wh_var = _variances(a[indices], b[indices])
    xy_centred = xy_var * xy_var.mean()
    wh_centred = wh_var * wh_var.mean()
    if outer_root:
        xy_centred = numpy.sqrt(xy_centred)
    return float(numpy.mean(xy_centred * wh_centred))


def usm_object(alpha_box, beta_box, confidence):
    r"""
    Object-level uncertainty,
    :math:`\sqrt{xy} \; wh / \sqrt{C}` with :math:`xy, wh` as in
    `usm_image` and no centring.

    Raises
    ------

    InvalidConfidenceError
        Unless 0 < `confidence` <= 1.
    """
    if not 0.0 < confidence <= 1.0:
        raise InvalidConfidenceError("confidence {} not in (0, 1]".format(confidence))
    xy_var, wh_var = _variances(_boxes(alpha_box), _boxes(beta_box))
    return float(numpy.sqrt(xy_var[0]) * wh_var[0] / numpy.sqrt(confidence))


def score_output(output, k, config=None, scene_id="", regime=""):
    """
    Score one scene from its model output.

    Detections are ranked by fused confidence. A vanilla output (no beta
    head) falls back to confidence scoring: ``1 - mean top-K confidence``
    for the image and ``1 - C`` per detection.

    Parameters
    ----------

    output : TandemOutput
        Output rows of a single scene
    k : int
        Number of detections kept
    config : MonitorConfig, optional
    """
    config = config or MonitorConfig()
    confidence = output.fused.confidence
    top = select_topk(confidence, k)
    if output.beta is None:
        image = float(1.0 - numpy.mean(confidence[top])) if len(top) else 0.0
        per_object = [(int(i), float(1.0 - confidence[i]), float(confidence[i])) for i in top]
        return UncertaintyScore(scene_id, regime, image, per_object, len(top))
    image = usm_image(output.alpha, output.beta, top, config.outer_root)
    per_object = [(int(i),
                   usm_object(output.alpha.boxes[i], output.beta.boxes[i],
                              max(float(confidence[i]), numpy.finfo(float).tiny)),
                   float(confidence[i]))
                  for i in top]
    return UncertaintyScore(scene_id, regime, image, per_object, len(top))


def score_batch(model, samples, config=None, workers=1):
    """
    Score every sample of an evaluation split, in input order.

    Parameters
    ----------

    model : TandemModel
    samples : list of Sample
    config : MonitorConfig, optional
    workers : int
        Threads; scores do not depend on it

    Returns
    -------

    scores : list of UncertaintyScore
    """
    def score(sample):
        if sample.features.shape[1] != model.config.feature_dim:
            raise ShapeError("scene {} has feature dimension {}, model expects {}".format(
                sample.scene_id, sample.features.shape[1], model.config.feature_dim))
        output = model.predict(sample.features)
        return score_output(output, model.config.top_k, config, sample.scene_id, sample.regime)

    return parallel_map(score, samples, workers)
