"""
Tandem detection model.

A shared trunk maps query features to embeddings. In ``dbea`` mode the
detection head (a three layer box network plus a linear classifier) is
duplicated into two detectors, alpha and beta, with independent parameters;
in ``vanilla`` mode there is a single head. Inference fuses the detectors by
averaging their boxes and class probabilities.
"""
from dataclasses import dataclass, replace

import numpy
from scipy.special import softmax

from .diff_core import MlpParams, mlp_backward, mlp_forward
from .errors import ConfigError, ShapeError
from .utils import child_rng

MODES = ('vanilla', 'dbea')


@dataclass(frozen=True)
class ModelConfig:
    """
    Model dimensions. `trunk_hidden` is the width of the trunk's feed-forward
    layer, the quantity halved in ``dbea`` mode to pay for the second head.
    """
    feature_dim: int = 32
    trunk_hidden: int = 64
    embed_dim: int = 32
    head_hidden: int = 32
    num_classes: int = 5
    queries: int = 25
    top_k: int = 10
    mode: str = 'dbea'

    def validate(self):
        for name in ('feature_dim', 'trunk_hidden', 'embed_dim', 'head_hidden',
                     'num_classes', 'queries', 'top_k'):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", "model." + name)
        if self.top_k > self.queries:
            raise ConfigError("top_k exceeds the query count", "model.top_k")
        if self.mode not in MODES:
            raise ConfigError("mode must be one of {}".format(MODES), "model.mode")

    @property
    def n_heads(self):
        return 2 if self.mode == 'dbea' else 1

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def vanilla_counterpart(config, width_factor=2):
    """
    Single-head baseline of a ``dbea`` config, with the trunk width
    multiplied back by `width_factor`.
    """
    if config.mode == 'vanilla':
        return config
    return replace(config, mode='vanilla', trunk_hidden=config.trunk_hidden * width_factor)


class HeadOutput(object):
    """
    Raw output of one detector.

    Parameters
    ----------

    boxes : array (n, 4)
        Boxes in [0, 1]
    logits : array (n, C + 1)
        Unnormalized class logits, the last column being no-object
    """

    def __init__(self, boxes, logits):
        self.boxes = boxes
        self.logits = logits

    @property
    def probs(self):
        return softmax(self.logits, axis=-1)

    def __getitem__(self, rows):
        return HeadOutput(self.boxes[rows], self.logits[rows])


class FusedDetections(object):
    """
    Mean-fused detections: boxes, class probability vectors and confidence
    (the largest object-class probability) with the matching class label.
    """

    def __init__(self, boxes, class_probs, confidence, labels):
        self.boxes = boxes
        self.class_probs = class_probs
        self.confidence = confidence
        self.labels = labels

    def __getitem__(self, rows):
        return FusedDetections(self.boxes[rows], self.class_probs[rows],
                               self.confidence[rows], self.labels[rows])

    def __len__(self):
        return len(self.confidence)


class TandemOutput(object):
    """
    Both raw detector outputs and the fused detections.

    Parameters
    ----------

    alpha : HeadOutput
        Output of the first detector
    beta : HeadOutput
        Output of the second detector, None for a vanilla model
    fused : FusedDetections
        Fused detections
    """

    def __init__(self, alpha, beta, fused):
        self.alpha = alpha
        self.beta = beta
        self.fused = fused

    def __getitem__(self, rows):
        return TandemOutput(self.alpha[rows],
                            None if self.beta is None else self.beta[rows],
                            self.fused[rows])

    def scene(self, index, queries):
        """
        Rows of scene `index` in a batch of scenes with `queries` rows each.
        """
        return self[slice(index * queries, (index + 1) * queries)]


class DetectionHead:
    """
    One detector: a three layer box network ending in a sigmoid, and a linear
    classification layer.

    Parameters
    ----------

    box : MlpParams
        Box regression network, exactly three layers, four outputs
    cls : MlpParams
        Classification network
    """

    def __init__(self, box, cls):
        if len(box.layers) != 3:
            raise ShapeError("the box regression network has exactly three layers")
        if box.n_out != 4 or box.layers[-1].activation != 'sigmoid':
            raise ShapeError("box network must end in four sigmoid outputs")
        if box.n_in != cls.n_in:
            raise ShapeError("box and class networks read different embeddings")
        self.box = box
        self.cls = cls

    @classmethod
    def init(cls, config, rng):
        box = MlpParams.init([config.embed_dim, config.head_hidden, config.head_hidden, 4],
                             ['relu', 'relu', 'sigmoid'], rng)
        classifier = MlpParams.init([config.embed_dim, config.num_classes + 1],
                                    ['identity'], rng)
        return cls(box, classifier)

    def arrays(self):
        return self.box.arrays() + self.cls.arrays()

    def named_arrays(self, prefix):
        out = []
        for part, params in (('box', self.box), ('cls', self.cls)):
            for i, layer in enumerate(params.layers):
                out.append(("{}.{}.{}.weight".format(prefix, part, i), layer.weight))
                out.append(("{}.{}.{}.bias".format(prefix, part, i), layer.bias))
        return out

    def copy(self):
        return DetectionHead(self.box.copy(), self.cls.copy())


def trunk_forward(trunk, features):
    """
    Shared trunk: query features (n, feature_dim) to embeddings.

    Returns
    -------

    embeddings : numpy array
    cache : MlpCache
    """
    return mlp_forward(trunk, features)


def head_forward(head, embeddings):
    """
    Run one detector on trunk embeddings.

    Returns
    -------

    output : HeadOutput
    cache : tuple
        (box cache, class cache) for `head_backward`
    """
    boxes, box_cache = mlp_forward(head.box, embeddings)
    logits, cls_cache = mlp_forward(head.cls, embeddings)
    return HeadOutput(boxes, logits), (box_cache, cls_cache)


def head_backward(cache, grad_boxes, grad_logits):
    """
    Backward pass of `head_forward`.

    Returns
    -------

    grad_embeddings : numpy array
    param_grads : list
        Ordered like `DetectionHead.arrays`
    """
    box_cache, cls_cache = cache
    g_box, box_grads = mlp_backward(box_cache, grad_boxes)
    g_cls, cls_grads = mlp_backward(cls_cache, grad_logits)
    return g_box + g_cls, box_grads + cls_grads


def fuse_tandem(alpha, beta, no_object=True):
    """
    Mean fusion of two detectors.

    Boxes are averaged element-wise and class probabilities (softmax of each
    head's logits) are averaged. The confidence is the largest fused
    probability over the object classes; with ``no_object=True`` the last
    column is the no-object class and never gives the confidence.

    Parameters
    ----------

    alpha, beta : HeadOutput
        Detector outputs of equal shape
    no_object : bool
        Whether the last class column is no-object

    Returns
    -------

    fused : FusedDetections
    """
    if alpha.boxes.shape != beta.boxes.shape or alpha.logits.shape != beta.logits.shape:
        raise ShapeError("alpha and beta outputs differ in shape")
    boxes = 0.5 * (alpha.boxes + beta.boxes)
    probs = 0.5 * (alpha.probs + beta.probs)
    objects = probs[:, :-1] if no_object and probs.shape[1] > 1 else probs
    labels = numpy.argmax(objects, axis=1)
    confidence = objects[numpy.arange(len(objects)), labels]
    return FusedDetections(boxes, probs, confidence, labels)


def select_topk(confidence, k):
    """
    Indices of the `k` most confident detections, most confident first. Ties
    go to the lower index.
    """
    confidence = numpy.asarray(confidence)
    if k > len(confidence):
        raise ShapeError("k = {} exceeds the {} detections".format(k, len(confidence)))
    return numpy.argsort(-confidence, kind='stable')[:k]


def _layer_count(dims):
    return sum(n_in * n_out + n_out for n_in, n_out in zip(dims[:-1], dims[1:]))


def param_count(config):
    r"""
    Closed-form parameter count, :math:`\sum (n_{in} n_{out} + n_{out})` over
    the trunk and every head.

    Returns
    -------

    counts : dict
        ``trunk``, ``head`` (one detector), ``heads`` (all detectors) and
        ``total``
    """
    config.validate()
    trunk = _layer_count([config.feature_dim, config.trunk_hidden, config.embed_dim])
    head = _layer_count([config.embed_dim, config.head_hidden, config.head_hidden, 4]) \
        + _layer_count([config.embed_dim, config.num_classes + 1])
    heads = head * config.n_heads
    return {'trunk': trunk, 'head': head, 'heads': heads, 'total': trunk + heads}


class TandemModel:
    """
    Trunk plus one (vanilla) or two (dbea) detection heads.

    Parameters
    ----------

    config : ModelConfig
        Dimensions and mode
    trunk : MlpParams
        Shared trunk
    heads : list of DetectionHead
        alpha first, then beta in dbea mode
    """

    def __init__(self, config, trunk, heads):
        config.validate()
        if len(heads) != config.n_heads:
            raise ShapeError("{} mode needs {} head(s)".format(config.mode, config.n_heads))
        if trunk.n_in != config.feature_dim or trunk.n_out != config.embed_dim:
            raise ShapeError("trunk does not match the model config")
        self.config = config
        self.trunk = trunk
        self.heads = list(heads)

    @classmethod
    def init(cls, config, seed=0):
        """
        Random initialization; the trunk and each head draw from their own
        child seed, so alpha and beta start from different weights.
        """
        config.validate()
        trunk = MlpParams.init([config.feature_dim, config.trunk_hidden, config.embed_dim],
                               ['relu', 'relu'], child_rng(seed, 0))
        heads = [DetectionHead.init(config, child_rng(seed, 1 + i))
                 for i in range(config.n_heads)]
        return cls(config, trunk, heads)

    def named_arrays(self):
        out = []
        for i, layer in enumerate(self.trunk.layers):
            out.append(("trunk.{}.weight".format(i), layer.weight))
            out.append(("trunk.{}.bias".format(i), layer.bias))
        for name, head in zip(('alpha', 'beta'), self.heads):
            out.extend(head.named_arrays(name))
        return out

    def arrays(self):
        return [a for _, a in self.named_arrays()]

    def count(self):
        return sum(a.size for a in self.arrays())

    def copy(self):
        return TandemModel(self.config, self.trunk.copy(), [h.copy() for h in self.heads])

    def forward(self, features):
        """
        Forward pass over stacked query features (n, feature_dim).

        Returns
        -------

        output : TandemOutput
        cache : tuple
            For `backward`
        """
        embeddings, trunk_cache = trunk_forward(self.trunk, features)
        outputs, head_caches = [], []
        for head in self.heads:
            out, cache = head_forward(head, embeddings)
            outputs.append(out)
            head_caches.append(cache)
        alpha = outputs[0]
        beta = outputs[1] if len(outputs) > 1 else None
        fused = fuse_tandem(alpha, alpha if beta is None else beta)
        return TandemOutput(alpha, beta, fused), (trunk_cache, head_caches)

    def predict(self, features):
        return self.forward(features)[0]

    def backward(self, cache, head_grads):
        """
        Gradients of a scalar loss with respect to every parameter.

        Parameters
        ----------

        cache : tuple
            From `forward`
        head_grads : list of tuple
            Per head, (gradient w.r.t. boxes, gradient w.r.t. logits)

        Returns
        -------

        grads : list of numpy array
            Ordered like `arrays`
        """
        trunk_cache, head_caches = cache
        if len(head_grads) != len(self.heads):
            raise ShapeError("need one gradient pair per head")
        grad_embeddings = 0.0
        head_param_grads = []
        for head_cache, (g_boxes, g_logits) in zip(head_caches, head_grads):
            g_emb, grads = head_backward(head_cache, g_boxes, g_logits)
            grad_embeddings = grad_embeddings + g_emb
            head_param_grads.extend(grads)
        _, trunk_grads = mlp_backward(trunk_cache, grad_embeddings)
        return trunk_grads + head_param_grads
