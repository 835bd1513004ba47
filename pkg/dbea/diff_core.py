"""
Dense multilayer perceptrons with analytic gradients.

Forward and backward passes of small fully connected networks, the AdamW
optimizer, and a central finite-difference checker used to verify every
hand-derived gradient in the package. Everything is float64.
"""
from dataclasses import dataclass, field

import numpy
from scipy.special import expit

from .errors import ConfigError, OracleFailure, ShapeError, TrainingDivergence

# Activations are dictionaries of functions, in the same spirit as an
# equation of state: the forward map, and the derivative expressed through
# the pre-activation and the output.
ACTIVATIONS = {
    'relu': {
        'forward': lambda z: numpy.maximum(z, 0.0),
        'derivative': lambda z, a: (z > 0.0).astype(numpy.float64),
    },
    'identity': {
        'forward': lambda z: z,
        'derivative': lambda z, a: numpy.ones_like(z),
    },
    'sigmoid': {
        'forward': expit,
        'derivative': lambda z, a: a * (1.0 - a),
    },
}


def as_tensor2(x, name="input"):
    """
    Return `x` as a C-contiguous 2-D float64 array.

    Parameters
    ----------

    x : array_like
        Data to convert
    name : string
        Used in the error message

    Raises
    ------

    ShapeError
        If `x` is not two dimensional.
    """
    x = numpy.ascontiguousarray(x, dtype=numpy.float64)
    if x.ndim != 2:
        raise ShapeError("{} must be 2-D, got shape {}".format(name, x.shape))
    return x


@dataclass
class Layer:
    """
    One affine map followed by an activation.

    Parameters
    ----------

    weight : numpy array
        Weights of shape (in, out)
    bias : numpy array
        Bias of shape (out,)
    activation : string
        Key of `ACTIVATIONS`
    """
    weight: numpy.ndarray
    bias: numpy.ndarray
    activation: str = 'identity'

    def __post_init__(self):
        self.weight = as_tensor2(self.weight, "weight")
        self.bias = numpy.ascontiguousarray(self.bias, dtype=numpy.float64)
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeError("bias shape {} does not match weight shape {}".format(
                self.bias.shape, self.weight.shape))
        if self.activation not in ACTIVATIONS:
            raise ConfigError("unknown activation {!r}".format(self.activation))

    @property
    def n_in(self):
        return self.weight.shape[0]

    @property
    def n_out(self):
        return self.weight.shape[1]


class MlpParams:
    """
    Ordered list of layers whose dimensions chain.

    Parameters
    ----------

    layers : list of Layer
        Layers, input side first
    """

    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise ShapeError("an MLP needs at least one layer")
        for first, second in zip(self.layers[:-1], self.layers[1:]):
            if first.n_out != second.n_in:
                raise ShapeError("layer dimensions do not chain: {} -> {}".format(
                    first.weight.shape, second.weight.shape))

    @classmethod
    def init(cls, dims, activations, rng):
        r"""
        Glorot-uniform initialization: weights in
        :math:`\pm\sqrt{6 / (n_{in} + n_{out})}`, zero biases.

        Parameters
        ----------

        dims : list of int
            Layer widths, input first; ``len(dims) - 1`` layers are built
        activations : list of string
            One activation per layer
        rng : numpy.random.Generator
            Source of randomness
        """
        if len(activations) != len(dims) - 1:
            raise ShapeError("need one activation per layer")
        layers = []
        for n_in, n_out, act in zip(dims[:-1], dims[1:], activations):
            limit = numpy.sqrt(6.0 / (n_in + n_out))
            layers.append(Layer(rng.uniform(-limit, limit, size=(n_in, n_out)),
                                numpy.zeros(n_out), act))
        return cls(layers)

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    def arrays(self):
        """
        Parameter arrays in a fixed order (w0, b0, w1, b1, ...). The arrays
        are the live storage, so in-place updates change the network.
        """
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def count(self):
        return sum(a.size for a in self.arrays())

    def copy(self):
        return MlpParams([Layer(l.weight.copy(), l.bias.copy(), l.activation)
                          for l in self.layers])


@dataclass
class MlpCache:
    """
    Everything the backward pass needs: the layers used and, per layer, the
    input, pre-activation and output.
    """
    params: MlpParams
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)


def mlp_forward(params, x):
    """
    Forward pass.

    Parameters
    ----------

    params : MlpParams
        Network
    x : array_like
        Input of shape (rows, params.n_in)

    Returns
    -------

    out : numpy array
        Output of shape (rows, params.n_out)
    cache : MlpCache
        Activation record for `mlp_backward`
    """
    x = as_tensor2(x)
    if x.shape[1] != params.n_in:
        raise ShapeError("input has {} columns, network expects {}".format(
            x.shape[1], params.n_in))
    cache = MlpCache(params)
    a = x
    for layer in params.layers:
        z = a @ layer.weight + layer.bias
        cache.inputs.append(a)
        a = ACTIVATIONS[layer.activation]['forward'](z)
        cache.pre.append(z)
        cache.post.append(a)
    if not numpy.all(numpy.isfinite(a)):
        raise TrainingDivergence("non-finite network output")
    return a, cache


def mlp_backward(cache, output_grad):
    """
    Backward pass through a cached forward evaluation.

    Parameters
    ----------

    cache : MlpCache
        Record returned by `mlp_forward`
    output_grad : array_like
        Gradient of a scalar with respect to the forward output

    Returns
    -------

    input_grad : numpy array
        Gradient with respect to the forward input
    param_grads : list of numpy array
        Gradients ordered like `MlpParams.arrays`
    """
    g = as_tensor2(output_grad, "output_grad")
    if g.shape != cache.post[-1].shape:
        raise ShapeError("output gradient shape {} does not match output {}".format(
            g.shape, cache.post[-1].shape))
    grads = []
    for layer, a_in, z, a in zip(reversed(cache.params.layers),
                                 reversed(cache.inputs),
                                 reversed(cache.pre),
                                 reversed(cache.post)):
        g = g * ACTIVATIONS[layer.activation]['derivative'](z, a)
        grads.append((a_in.T @ g, g.sum(axis=0)))
        g = g @ layer.weight.T
    param_grads = []
    for d_w, d_b in reversed(grads):
        param_grads.extend([d_w, d_b])
    return g, param_grads


@dataclass(frozen=True)
class OptimConfig:
    """
    AdamW settings. Learning rate and weight decay follow the DINO-DETR
    training recipe; the moment constants are the usual Adam defaults.
    """
    learning_rate: float = 0.0002
    weight_decay: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if not self.learning_rate > 0.0:
            raise ConfigError("must be > 0", "optim.learning_rate")
        if self.weight_decay < 0.0:
            raise ConfigError("must be >= 0", "optim.weight_decay")
        for name in ('beta1', 'beta2'):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError("must be in [0, 1)", "optim." + name)
        if not self.eps > 0.0:
            raise ConfigError("must be > 0", "optim.eps")


@dataclass(frozen=True)
class OptimState:
    """
    AdamW state: step count plus first and second moments shaped like the
    parameters.
    """
    step: int
    m: tuple
    v: tuple
    config: OptimConfig

    @classmethod
    def zeros_like(cls, arrays, config=None):
        config = config or OptimConfig()
        config.validate()
        return cls(0, tuple(numpy.zeros_like(a) for a in arrays),
                   tuple(numpy.zeros_like(a) for a in arrays), config)


def adamw_step(arrays, grads, state):
    r"""
    One AdamW update with decoupled weight decay,

    .. math::

        \theta \leftarrow \theta - \eta \left(\hat m / (\sqrt{\hat v} + \epsilon)
        + \lambda \theta\right).

    Parameters are updated in place.

    Parameters
    ----------

    arrays : list of numpy array
        Parameters
    grads : list of numpy array
        Gradients, same shapes
    state : OptimState
        Current optimizer state

    Returns
    -------

    arrays : list of numpy array
        The updated parameters (the same objects)
    state : OptimState
        New state with the step incremented
    """
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    for a, g in zip(arrays, grads):
        if a.shape != g.shape:
            raise ShapeError("gradient shape {} does not match parameter {}".format(
                g.shape, a.shape))
        if not numpy.all(numpy.isfinite(g)):
            raise TrainingDivergence("non-finite gradient")
    c = state.config
    step = state.step + 1
    correction1 = 1.0 - c.beta1**step
    correction2 = 1.0 - c.beta2**step
    new_m, new_v = [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = c.beta1 * m + (1.0 - c.beta1) * g
        v = c.beta2 * v + (1.0 - c.beta2) * g * g
        update = (m / correction1) / (numpy.sqrt(v / correction2) + c.eps)
        a -= c.learning_rate * (update + c.weight_decay * a)
        new_m.append(m)
        new_v.append(v)
    return arrays, OptimState(step, tuple(new_m), tuple(new_v), c)


def finite_diff_check(loss_fn, params, h=1e-6, coords=None, rng=None):
    r"""
    Compare analytic gradients to central finite differences.

    The error of each checked entry is
    :math:`|g_{analytic} - g_{fd}| / \max(1, |g_{fd}|)`. Nonsmooth points
    (e.g. :math:`|w|` at 0) must be avoided by the caller.

    Parameters
    ----------

    loss_fn : callable
        ``loss_fn(params) -> (value, grads)`` with grads shaped like params
    params : list of numpy array
        Parameters; perturbed in place and restored
    h : scalar
        Finite-difference step
    coords : int, optional
        If given, at most this many randomly chosen entries per array are checked
    rng : numpy.random.Generator, optional
        Source of randomness for `coords`

    Returns
    -------

    error : scalar
        Maximum relative error over the checked entries
    """
    if not h > 0.0:
        raise OracleFailure("finite-difference step must be positive")
    value, analytic = loss_fn(params)
    if not numpy.isfinite(value):
        raise OracleFailure("loss is not finite at the base point")
    if rng is None:
        rng = numpy.random.default_rng(0)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        g = numpy.asarray(g).reshape(-1)
        idx = numpy.arange(flat.size)
        if coords is not None and coords < flat.size:
            idx = rng.choice(flat.size, size=coords, replace=False)
        for i in idx:
            saved = flat[i]
            flat[i] = saved + h
            f_plus = loss_fn(params)[0]
            flat[i] = saved - h
            f_minus = loss_fn(params)[0]
            flat[i] = saved
            if not (numpy.isfinite(f_plus) and numpy.isfinite(f_minus)):
                raise OracleFailure("loss is not finite at a perturbed point")
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, abs(g[i] - numeric) / max(1.0, abs(numeric)))
    return worst
