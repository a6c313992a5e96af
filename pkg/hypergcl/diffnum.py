# coding: utf-8
"""Dense float64 tensors with reverse-mode differentiation.

Every forward operation goes through :func:`apply`, which looks the op kind up
in a catalog of (forward, vector-Jacobian product) pairs. :func:`backward`
walks the recorded op graph from a scalar loss down to the leaves.
"""
import logging
from collections import namedtuple

import numpy as np
import scipy.sparse
from aenum import Enum
from scipy.special import expit, softmax

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
DEFAULT_EPS = 1e-5


class OpKind(Enum):
    MATMUL = 'matmul'
    ADD = 'add'
    SUB = 'sub'
    MUL = 'mul'
    SCALAR_MUL = 'scalar_mul'
    SIGMOID = 'sigmoid'
    RELU = 'relu'
    TANH = 'tanh'
    EXP = 'exp'
    LOG = 'log'
    SOFTMAX_ROWS = 'softmax_rows'
    SUM = 'sum'
    MEAN = 'mean'
    CONCAT_COLS = 'concat_cols'
    CONCAT_ROWS = 'concat_rows'
    GATHER_ROWS = 'gather_rows'
    SEGMENT_SUM = 'segment_sum'
    SEGMENT_WEIGHTED_MEAN = 'segment_weighted_mean'
    L2_NORMALIZE_ROWS = 'l2_normalize_rows'
    SQUARE = 'square'
    TRANSPOSE = 'transpose'
    CLIP = 'clip'


class DiffnumError(Exception):
    """Base class for errors raised by the differentiation core."""
    pass


class ShapeError(DiffnumError):
    """Raised when input shapes do not conform to an op's signature."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        super(ShapeError, self).__init__('{}: incompatible shapes {}'.format(
            op, ', '.join(str(s) for s in self.shapes)))


class GradCheckError(DiffnumError):
    """Raised when a finite-difference probe cannot be evaluated."""
    pass


OpRecord = namedtuple('OpRecord', ['kind', 'inputs', 'attrs', 'cache'])


class SegmentIndex(object):
    """Maps each source row to one of ``num_segments`` output rows."""

    def __init__(self, targets, num_segments):
        self.targets = np.asarray(targets, dtype=np.int64).reshape(-1)
        self.num_segments = int(num_segments)
        if self.targets.size and (self.targets.min() < 0 or self.targets.max() >= self.num_segments):
            raise DiffnumError('segment target out of range [0, {})'.format(self.num_segments))
        self._ones = None

    def __len__(self):
        return self.targets.size

    def __repr__(self):
        return '<SegmentIndex rows={} segments={}>'.format(len(self), self.num_segments)

    def matrix(self, weights=None):
        """Sparse ``num_segments x rows`` scatter matrix, optionally weighted."""
        if weights is None:
            if self._ones is None:
                self._ones = self._build(np.ones(len(self)))
            return self._ones
        return self._build(np.asarray(weights, dtype=np.float64))

    def _build(self, values):
        rows = np.arange(len(self))
        return scipy.sparse.csr_matrix(
            (values, (self.targets, rows)), shape=(self.num_segments, len(self)))


class Tensor(object):
    __slots__ = ('data', 'requires_grad', 'grad', 'op_record', 'name')

    def __init__(self, data, requires_grad=False, name=None, copy=True):
        if copy:
            self.data = np.array(data, dtype=np.float64)
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op_record = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self.op_record is None

    def item(self):
        if self.data.size != 1:
            raise DiffnumError('item() needs a single-element tensor, got shape {}'.format(self.shape))
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        label = self.name or (self.op_record.kind.value if self.op_record else 'leaf')
        return '<Tensor {} shape={}{}>'.format(label, self.shape, ' grad' if self.requires_grad else '')

    def __add__(self, other):
        return apply(OpKind.ADD, [self, _lift(other)])

    def __radd__(self, other):
        return apply(OpKind.ADD, [_lift(other), self])

    def __sub__(self, other):
        return apply(OpKind.SUB, [self, _lift(other)])

    def __rsub__(self, other):
        return apply(OpKind.SUB, [_lift(other), self])

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return apply(OpKind.MUL, [self, _lift(other)])

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return apply(OpKind.MATMUL, [self, _lift(other)])


def constant(value, name=None):
    return Tensor(value, requires_grad=False, name=name)


def parameter(value, name=None):
    return Tensor(value, requires_grad=True, name=name)


def _lift(value):
    if isinstance(value, Tensor):
        return value
    return constant(value)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _require_ndim(op, ndim, *arrays):
    for a in arrays:
        if a.ndim != ndim:
            raise ShapeError(op, *[b.shape for b in arrays])


# Forward kernels return (value, cache); VJPs return one gradient (or None) per input.

def _fwd_matmul(xs, attrs):
    a, b = xs
    _require_ndim('matmul', 2, a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape)
    return a @ b, None


def _vjp_matmul(g, xs, out, attrs, cache):
    a, b = xs
    return [g @ b.T, a.T @ g]


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape)


def _fwd_add(xs, attrs):
    _broadcast_check('add', *xs)
    return xs[0] + xs[1], None


def _vjp_add(g, xs, out, attrs, cache):
    return [_unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)]


def _fwd_sub(xs, attrs):
    _broadcast_check('sub', *xs)
    return xs[0] - xs[1], None


def _vjp_sub(g, xs, out, attrs, cache):
    return [_unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)]


def _fwd_mul(xs, attrs):
    _broadcast_check('mul', *xs)
    return xs[0] * xs[1], None


def _vjp_mul(g, xs, out, attrs, cache):
    a, b = xs
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _fwd_scalar_mul(xs, attrs):
    return xs[0] * float(attrs['scalar']), None


def _vjp_scalar_mul(g, xs, out, attrs, cache):
    return [g * float(attrs['scalar'])]


def _fwd_sigmoid(xs, attrs):
    return expit(xs[0]), None


def _vjp_sigmoid(g, xs, out, attrs, cache):
    return [g * out * (1.0 - out)]


def _fwd_relu(xs, attrs):
    return np.maximum(xs[0], 0.0), None


def _vjp_relu(g, xs, out, attrs, cache):
    return [g * (xs[0] > 0)]


def _fwd_tanh(xs, attrs):
    return np.tanh(xs[0]), None


def _vjp_tanh(g, xs, out, attrs, cache):
    return [g * (1.0 - out * out)]


def _fwd_exp(xs, attrs):
    return np.exp(xs[0]), None


def _vjp_exp(g, xs, out, attrs, cache):
    return [g * out]


def _fwd_log(xs, attrs):
    clamped = np.maximum(xs[0], LOG_CLAMP)
    return np.log(clamped), clamped


def _vjp_log(g, xs, out, attrs, cache):
    return [g / cache]


def _fwd_softmax_rows(xs, attrs):
    _require_ndim('softmax_rows', 2, xs[0])
    return softmax(xs[0], axis=1), None


def _vjp_softmax_rows(g, xs, out, attrs, cache):
    return [out * (g - np.sum(g * out, axis=1, keepdims=True))]


def _reduce_axis(op, x, attrs):
    axis = attrs.get('axis') if attrs else None
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise ShapeError(op, x.shape)
    return axis


def _expand_reduced(g, shape, axis):
    if axis is not None:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _fwd_sum(xs, attrs):
    axis = _reduce_axis('sum', xs[0], attrs)
    return np.sum(xs[0], axis=axis), None


def _vjp_sum(g, xs, out, attrs, cache):
    return [_expand_reduced(g, xs[0].shape, attrs.get('axis'))]


def _fwd_mean(xs, attrs):
    x = xs[0]
    axis = _reduce_axis('mean', x, attrs)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError('mean', x.shape)
    return np.sum(x, axis=axis) / count, count


def _vjp_mean(g, xs, out, attrs, cache):
    return [_expand_reduced(g / cache, xs[0].shape, attrs.get('axis'))]


def _fwd_concat_cols(xs, attrs):
    _require_ndim('concat_cols', 2, *xs)
    if len(set(x.shape[0] for x in xs)) != 1:
        raise ShapeError('concat_cols', *[x.shape for x in xs])
    return np.concatenate(xs, axis=1), np.cumsum([x.shape[1] for x in xs])[:-1]


def _vjp_concat_cols(g, xs, out, attrs, cache):
    return np.split(g, cache, axis=1)


def _fwd_concat_rows(xs, attrs):
    _require_ndim('concat_rows', 2, *xs)
    if len(set(x.shape[1] for x in xs)) != 1:
        raise ShapeError('concat_rows', *[x.shape for x in xs])
    return np.concatenate(xs, axis=0), np.cumsum([x.shape[0] for x in xs])[:-1]


def _vjp_concat_rows(g, xs, out, attrs, cache):
    return np.split(g, cache, axis=0)


def _fwd_gather_rows(xs, attrs):
    x = xs[0]
    index = np.asarray(attrs['index'], dtype=np.int64)
    if x.ndim == 0 or (index.size and (index.min() < 0 or index.max() >= x.shape[0])):
        raise ShapeError('gather_rows', x.shape, index.shape)
    return x[index], index


def _vjp_gather_rows(g, xs, out, attrs, cache):
    x = xs[0]
    scatter = SegmentIndex(cache, x.shape[0]).matrix()
    flat = g.reshape(g.shape[0], -1) if g.ndim > 1 else g
    return [np.asarray(scatter @ flat).reshape(x.shape)]


def _segments(op, x, attrs):
    segments = attrs['segments']
    if x.ndim == 0 or x.shape[0] != len(segments):
        raise ShapeError(op, x.shape, (len(segments),))
    return segments


def _fwd_segment_sum(xs, attrs):
    segments = _segments('segment_sum', xs[0], attrs)
    return np.asarray(segments.matrix() @ xs[0]), None


def _vjp_segment_sum(g, xs, out, attrs, cache):
    return [g[attrs['segments'].targets]]


def _fwd_segment_weighted_mean(xs, attrs):
    values, weights = xs
    segments = _segments('segment_weighted_mean', values, attrs)
    if weights.shape != (len(segments),):
        raise ShapeError('segment_weighted_mean', values.shape, weights.shape)
    total = np.asarray(segments.matrix() @ weights)
    numer = np.asarray(segments.matrix(weights) @ values)
    scale = np.zeros_like(total)
    active = total > 0
    scale[active] = 1.0 / total[active]
    if values.ndim > 1:
        out = numer * scale[:, None]
    else:
        out = numer * scale
    return out, scale


def _vjp_segment_weighted_mean(g, xs, out, attrs, cache):
    values, weights = xs
    targets = attrs['segments'].targets
    row_scale = cache[targets]
    g_rows = g[targets]
    centred = values - out[targets]
    if values.ndim > 1:
        g_values = g_rows * (weights * row_scale)[:, None]
        g_weights = row_scale * np.sum(centred * g_rows, axis=1)
    else:
        g_values = g_rows * weights * row_scale
        g_weights = row_scale * centred * g_rows
    return [g_values, g_weights]


def _fwd_l2_normalize_rows(xs, attrs):
    x = xs[0]
    _require_ndim('l2_normalize_rows', 2, x)
    norm = np.sqrt(np.sum(x * x, axis=1))
    inv = np.zeros_like(norm)
    nonzero = norm > 0
    inv[nonzero] = 1.0 / norm[nonzero]
    return x * inv[:, None], inv


def _vjp_l2_normalize_rows(g, xs, out, attrs, cache):
    radial = np.sum(g * out, axis=1, keepdims=True)
    return [(g - out * radial) * cache[:, None]]


def _fwd_square(xs, attrs):
    return xs[0] * xs[0], None


def _vjp_square(g, xs, out, attrs, cache):
    return [2.0 * xs[0] * g]


def _fwd_transpose(xs, attrs):
    _require_ndim('transpose', 2, xs[0])
    return xs[0].T.copy(), None


def _vjp_transpose(g, xs, out, attrs, cache):
    return [g.T]


def _fwd_clip(xs, attrs):
    return np.clip(xs[0], attrs['low'], attrs['high']), None


def _vjp_clip(g, xs, out, attrs, cache):
    x = xs[0]
    return [g * ((x > attrs['low']) & (x < attrs['high']))]


_CATALOG = {
    OpKind.MATMUL: (_fwd_matmul, _vjp_matmul),
    OpKind.ADD: (_fwd_add, _vjp_add),
    OpKind.SUB: (_fwd_sub, _vjp_sub),
    OpKind.MUL: (_fwd_mul, _vjp_mul),
    OpKind.SCALAR_MUL: (_fwd_scalar_mul, _vjp_scalar_mul),
    OpKind.SIGMOID: (_fwd_sigmoid, _vjp_sigmoid),
    OpKind.RELU: (_fwd_relu, _vjp_relu),
    OpKind.TANH: (_fwd_tanh, _vjp_tanh),
    OpKind.EXP: (_fwd_exp, _vjp_exp),
    OpKind.LOG: (_fwd_log, _vjp_log),
    OpKind.SOFTMAX_ROWS: (_fwd_softmax_rows, _vjp_softmax_rows),
    OpKind.SUM: (_fwd_sum, _vjp_sum),
    OpKind.MEAN: (_fwd_mean, _vjp_mean),
    OpKind.CONCAT_COLS: (_fwd_concat_cols, _vjp_concat_cols),
    OpKind.CONCAT_ROWS: (_fwd_concat_rows, _vjp_concat_rows),
    OpKind.GATHER_ROWS: (_fwd_gather_rows, _vjp_gather_rows),
    OpKind.SEGMENT_SUM: (_fwd_segment_sum, _vjp_segment_sum),
    OpKind.SEGMENT_WEIGHTED_MEAN: (_fwd_segment_weighted_mean, _vjp_segment_weighted_mean),
    OpKind.L2_NORMALIZE_ROWS: (_fwd_l2_normalize_rows, _vjp_l2_normalize_rows),
    OpKind.SQUARE: (_fwd_square, _vjp_square),
    OpKind.TRANSPOSE: (_fwd_transpose, _vjp_transpose),
    OpKind.CLIP: (_fwd_clip, _vjp_clip),
}


def apply(kind, inputs, attrs=None):
    """Run one catalog op and record provenance when any input needs gradients."""
    kind = OpKind(kind)
    attrs = dict(attrs or {})
    inputs = [_lift(x) for x in inputs]
    forward, _ = _CATALOG[kind]
    value, cache = forward([x.data for x in inputs], attrs)
    out = Tensor(value, copy=False)
    if any(x.requires_grad for x in inputs):
        out.requires_grad = True
        out.op_record = OpRecord(kind, inputs, attrs, cache)
    return out


def _topological_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.op_record is not None:
            for parent in node.op_record.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def zero_grads(tensors):
    for t in tensors:
        t.grad = np.zeros_like(t.data)


def backward(loss):
    """Fill ``.grad`` of every reachable leaf with d(loss)/d(leaf).

    Leaf gradients are zeroed first, so a second call overwrites rather than
    accumulates. Returns a map from leaf tensor to its gradient array.
    """
    if loss.data.size != 1:
        raise DiffnumError('backward needs a scalar loss, got shape {}'.format(loss.shape))
    if not loss.requires_grad:
        return {}
    order = _topological_order(loss)
    leaves = [t for t in order if t.op_record is None]
    zero_grads(leaves)

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        record = node.op_record
        if record is None:
            node.grad = node.grad + g
            continue
        _, vjp = _CATALOG[record.kind]
        grads = vjp(g, [x.data for x in record.inputs], node.data, record.attrs, record.cache)
        for parent, pg in zip(record.inputs, grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
    log.debug('backward visited %d nodes, %d leaves', len(order), len(leaves))
    return dict((leaf, leaf.grad) for leaf in leaves)


def _scalar_value(out):
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise GradCheckError('function must return a scalar Tensor')
    value = float(out.data.reshape(-1)[0])
    if not np.isfinite(value):
        raise GradCheckError('non-finite function value during finite differences')
    return value


def grad_check(f, x, eps=DEFAULT_EPS):
    """Max relative error between the analytic gradient and central differences.

    The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    ``f`` must rebuild its graph from ``x`` on each call.
    """
    if eps <= 0:
        raise GradCheckError('eps must be > 0, got {}'.format(eps))
    x.requires_grad = True
    x.grad = None
    out = f(x)
    _scalar_value(out)
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    base = x.data.copy()
    numeric = np.zeros_like(base)
    try:
        for i in range(base.size):
            x.data = base.copy()
            x.data.flat[i] += eps
            f_plus = _scalar_value(f(x))
            x.data.flat[i] = base.flat[i] - eps
            f_minus = _scalar_value(f(x))
            numeric.flat[i] = (f_plus - f_minus) / (2.0 * eps)
    finally:
        x.data = base
    if base.size == 0:
        return 0.0
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max())


# Thin wrappers, one per catalog entry.

def matmul(a, b):
    return apply(OpKind.MATMUL, [a, b])


def add(a, b):
    return apply(OpKind.ADD, [a, b])


def sub(a, b):
    return apply(OpKind.SUB, [a, b])


def mul(a, b):
    return apply(OpKind.MUL, [a, b])


def scalar_mul(x, scalar):
    return apply(OpKind.SCALAR_MUL, [x], {'scalar': scalar})


def sigmoid(x):
    return apply(OpKind.SIGMOID, [x])


def relu(x):
    return apply(OpKind.RELU, [x])


def tanh(x):
    return apply(OpKind.TANH, [x])


def exp(x):
    return apply(OpKind.EXP, [x])


def log_(x):
    return apply(OpKind.LOG, [x])


def softmax_rows(x):
    return apply(OpKind.SOFTMAX_ROWS, [x])


def sum_(x, axis=None):
    return apply(OpKind.SUM, [x], {'axis': axis})


def mean(x, axis=None):
    return apply(OpKind.MEAN, [x], {'axis': axis})


def concat_cols(xs):
    return apply(OpKind.CONCAT_COLS, list(xs))


def concat_rows(xs):
    return apply(OpKind.CONCAT_ROWS, list(xs))


def gather_rows(x, index):
    return apply(OpKind.GATHER_ROWS, [x], {'index': index})


def segment_sum(x, segments):
    return apply(OpKind.SEGMENT_SUM, [x], {'segments': segments})


def segment_weighted_mean(values, weights, segments):
    return apply(OpKind.SEGMENT_WEIGHTED_MEAN, [values, weights], {'segments': segments})


def l2_normalize_rows(x):
    return apply(OpKind.L2_NORMALIZE_ROWS, [x])


def square(x):
    return apply(OpKind.SQUARE, [x])


def transpose(x):
    return apply(OpKind.TRANSPOSE, [x])


def clip(x, low, high):
    return apply(OpKind.CLIP, [x], {'low': low, 'high': high})
