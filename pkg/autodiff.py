"""
Autodiff

A small reverse-mode differentiation engine over numpy arrays, sized for the
models in this toolkit. Every op builds a ``Tensor`` that remembers its
parents and a closure that pushes its gradient back to them; ``backward()``
walks the recorded graph in reverse topological order.

All values are float64. Parameters are ``Param`` tensors whose gradients are
allocated up front and accumulate across ``backward()`` calls until
``zero_grad()``.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from logger_setup import logger

ArrayLike = Union[np.ndarray, float, Sequence[float]]


class CheckpointFormatError(ValueError):
    """A parameter checkpoint could not be parsed."""


class Tensor:
    __slots__ = ('value', 'grad', 'requires_grad', '_parents', '_backward', 'name')

    def __init__(self, value, parents=(), backward=None, requires_grad=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self._parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.value.shape)
        else:
            self.grad += np.reshape(g, self.value.shape)

    def backward(self):
        """Back-propagate from this scalar tensor to every parameter it depends on."""
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar tensor")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))

        self._accumulate(np.ones_like(self.value))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.value.shape})"


class Param(Tensor):
    """Trainable tensor with a named, always-allocated gradient."""
    __slots__ = ()

    def __init__(self, name: str, value):
        super().__init__(value, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.value)

    def _accumulate(self, g):
        self.grad += np.reshape(g, self.value.shape)

    def zero_grad(self):
        self.grad.fill(0.0)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False)


def init_uniform(name: str, shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator) -> Param:
    """Param drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Param(name, rng.uniform(-bound, bound, size=shape))


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(a.value + b.value, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor(a.value - b.value, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g * b.value, a.shape))
        b._accumulate(_unbroadcast(g * a.value, b.shape))

    return Tensor(a.value * b.value, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value * c, (a,), lambda g: a._accumulate(g * c))


def square(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value * a.value, (a,), lambda g: a._accumulate(2.0 * a.value * g))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return Tensor(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return Tensor(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0.0
    return Tensor(np.where(mask, a.value, 0.0), (a,), lambda g: a._accumulate(g * mask))


def total(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value.sum(), (a,), lambda g: a._accumulate(np.broadcast_to(g, a.shape)))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.value.size
    return Tensor(a.value.mean(), (a,), lambda g: a._accumulate(np.broadcast_to(g / n, a.shape)))


def sum_squares(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.value * a.value, axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(2.0 * a.value * g)

    return Tensor(out, (a,), backward)


def concat(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.value.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for p, start, stop in zip(parts, bounds[:-1], bounds[1:]):
            p._accumulate(g[start:stop])

    return Tensor(np.concatenate([p.value for p in parts]), parts, backward)


def take(a, start: int, stop: int) -> Tensor:
    """Slice ``a[start:stop]`` along the first axis."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        a._accumulate(full)

    return Tensor(a.value[start:stop], (a,), backward)


def stack(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def backward(g):
        for i, p in enumerate(parts):
            p._accumulate(g[i])

    return Tensor(np.stack([p.value for p in parts]), parts, backward)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def matvec(W, x) -> Tensor:
    """W @ x for W of shape (out, in) and x of shape (in,) or (batch, in) rows."""
    W, x = as_tensor(W), as_tensor(x)
    if x.value.ndim == 1:
        def backward(g):
            W._accumulate(np.outer(g, x.value))
            x._accumulate(W.value.T @ g)

        return Tensor(W.value @ x.value, (W, x), backward)

    def backward_rows(g):
        W._accumulate(g.T @ x.value)
        x._accumulate(g @ W.value)

    return Tensor(x.value @ W.value.T, (W, x), backward_rows)


def sparse_linear(W: Tensor, b: Tensor, indices: np.ndarray) -> Tensor:
    """
    W x + b for a binary x given by its active column indices (unique).
    Only the active columns of W receive gradient.
    """
    indices = np.asarray(indices, dtype=np.int64)
    out = W.value[:, indices].sum(axis=1) + b.value

    def backward(g):
        if W.requires_grad and len(indices):
            if isinstance(W, Param):
                W.grad[:, indices] += g[:, None]
            else:
                full = np.zeros_like(W.value)
                full[:, indices] = g[:, None]
                W._accumulate(full)
        b._accumulate(g)

    return Tensor(out, (W, b), backward)


def linear_forward(W, b, x) -> Tensor:
    """
    Wx + b. ``x`` may be a dense vector (array or Tensor) or a sparse binary
    feature vector exposing ``indices`` (e.g. a CharFeatureVector).
    """
    W, b = as_tensor(W), as_tensor(b)
    if hasattr(x, 'indices') and not isinstance(x, (Tensor, np.ndarray)):
        return sparse_linear(W, b, x.indices)
    return add(matvec(W, x), b)


@dataclass
class LSTMParams:
    """
    Standard three-gate LSTM without peepholes. ``W`` maps [x; h_prev] to the
    stacked pre-activations of the input, forget and output gates and the
    candidate, in that order.
    """
    W: Param
    b: Param

    @property
    def hidden_size(self) -> int:
        return self.b.value.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.value.shape[1] - self.hidden_size

    @classmethod
    def initialize(cls, prefix: str, input_size: int, hidden_size: int, rng: np.random.Generator) -> "LSTMParams":
        fan_in = input_size + hidden_size
        return cls(
            W=init_uniform(f"{prefix}.W", (4 * hidden_size, fan_in), fan_in, rng),
            b=init_uniform(f"{prefix}.b", (4 * hidden_size,), fan_in, rng),
        )

    def parameters(self) -> List[Param]:
        return [self.W, self.b]


def lstm_step(params: LSTMParams, x_t, h_prev, c_prev) -> Tuple[Tensor, Tensor]:
    h = params.hidden_size
    z = add(matvec(params.W, concat([x_t, h_prev])), params.b)
    i = sigmoid(take(z, 0, h))
    f = sigmoid(take(z, h, 2 * h))
    o = sigmoid(take(z, 2 * h, 3 * h))
    g = tanh(take(z, 3 * h, 4 * h))
    c = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c))
    return h_t, c


def lstm_run(params: LSTMParams, xs: Sequence) -> List[Tensor]:
    """Run the LSTM over ``xs`` from zero initial states; returns every hidden state."""
    h = Tensor(np.zeros(params.hidden_size), requires_grad=False)
    c = Tensor(np.zeros(params.hidden_size), requires_grad=False)
    states = []
    for x_t in xs:
        h, c = lstm_step(params, x_t, h, c)
        states.append(h)
    return states


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = np.exp(scores - np.max(scores))
    return shifted / shifted.sum()


def attention_pool(w_alpha, xs: Sequence) -> Tuple[Tensor, np.ndarray]:
    """
    Attention pooling: alpha_k = <w_alpha, x_k>, a = softmax(alpha),
    g = sum_k a_k x_k. Returns g and the weights a.
    """
    if len(xs) == 0:
        raise ValueError("attention_pool needs at least one input")
    w_alpha = as_tensor(w_alpha)
    X = stack(xs)
    scores = X.value @ w_alpha.value
    a = softmax(scores)
    out = a @ X.value

    def backward(g):
        da = X.value @ g
        ds = a * (da - a @ da)
        X._accumulate(np.outer(a, g) + np.outer(ds, w_alpha.value))
        w_alpha._accumulate(X.value.T @ ds)

    return Tensor(out, (X, w_alpha), backward), a


# ---------------------------------------------------------------------------
# Distances and losses
# ---------------------------------------------------------------------------

def euclidean_rows(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Euclidean distance from every row of ``M`` to ``v``; the one distance definition."""
    diff = np.asarray(M, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def euclidean(u: ArrayLike, v: ArrayLike) -> float:
    u = np.asarray(u, dtype=np.float64)
    return float(euclidean_rows(u[None, :], v)[0])


def euclidean_distance(u, v) -> Tensor:
    """d(u, v) as a differentiable op; the gradient at u == v is taken as zero."""
    u, v = as_tensor(u), as_tensor(v)
    d = euclidean(u.value, v.value)

    def backward(g):
        if d == 0.0:
            return
        direction = (u.value - v.value) / d
        u._accumulate(g * direction)
        v._accumulate(-g * direction)

    return Tensor(d, (u, v), backward)


def bce_with_logits(z, y: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy of logits ``z`` against labels ``y``."""
    z = as_tensor(z)
    y = np.asarray(y, dtype=np.float64)
    zv = z.value
    out = np.maximum(zv, 0.0) - zv * y + np.log1p(np.exp(-np.abs(zv)))
    p = 0.5 * (1.0 + np.tanh(0.5 * zv))
    return Tensor(out, (z,), lambda g: z._accumulate(g * (p - y)))


# ---------------------------------------------------------------------------
# Optimization, gradient checks, checkpoints
# ---------------------------------------------------------------------------

def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


def sgd_step(params: Iterable[Param], learning_rate: float) -> None:
    """Plain gradient descent step, then clear the gradients."""
    for p in params:
        p.value -= learning_rate * p.grad
        p.zero_grad()


class SGD:
    def __init__(self, params: Iterable[Param], learning_rate: float):
        self.params = list(params)
        self.learning_rate = learning_rate

    def step(self) -> None:
        sgd_step(self.params, self.learning_rate)


class Adam:
    """
    Adam with bias-corrected moments, one buffer pair per parameter. Each
    step reads the accumulated gradients, updates the values and clears the
    gradients.
    """

    def __init__(self, params: Iterable[Param], learning_rate: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        corrected = self.learning_rate * np.sqrt(1.0 - self.beta2 ** self.t) / (1.0 - self.beta1 ** self.t)
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= corrected * m / (np.sqrt(v) + self.eps)
            p.zero_grad()


OPTIMIZERS = {'sgd': SGD, 'adam': Adam}


def make_optimizer(name: str, params: Iterable[Param], learning_rate: float):
    try:
        cls = OPTIMIZERS[name]
    except KeyError:
        raise ValueError(f"Unknown optimizer {name!r}; expected one of {sorted(OPTIMIZERS)}") from None
    return cls(params, learning_rate)


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(fn: Callable[[], Tensor], params: Sequence[Param], tolerance: float = 1e-4,
               step: float = 1e-4, max_entries: Optional[int] = None,
               rng: Optional[np.random.Generator] = None, min_scale: float = 1e-3) -> GradCheckReport:
    """
    Compare analytic gradients of the scalar ``fn()`` with central finite
    differences for each parameter entry.

    The relative error of an entry is |a - n| / max(|a|, |n|, min_scale).
    ``max_entries`` samples that many entries per parameter.
    """
    zero_grads(params)
    fn().backward()
    analytic = {p.name: p.grad.copy() for p in params}
    zero_grads(params)

    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    for p in params:
        flat = p.value.reshape(-1)
        positions = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            chooser = rng if rng is not None else np.random.default_rng(0)
            positions = chooser.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        grad_flat = analytic[p.name].reshape(-1)
        for pos in positions:
            original = flat[pos]
            flat[pos] = original + step
            plus = fn().item()
            flat[pos] = original - step
            minus = fn().item()
            flat[pos] = original
            numeric = (plus - minus) / (2.0 * step)
            a = grad_flat[pos]
            err = abs(a - numeric) / max(abs(a), abs(numeric), min_scale)
            worst = max(worst, err)
            report.checked += 1
        report.per_param[p.name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)

    logger.debug(f"Gradient check over {report.checked} entries: max relative error {report.max_rel_error:.3e}")
    return report


def save_checkpoint(path, params: Mapping[str, np.ndarray], header: Optional[Mapping[str, str]] = None) -> None:
    """
    Write named tensors. Header lines are ``# key value``; each tensor is a
    ``param<TAB>name<TAB>shape`` line followed by one line of float reprs,
    which round-trips bit-exactly.
    """
    with open(path, 'w', encoding='utf-8') as f:
        for key, value in (header or {}).items():
            f.write(f"# {key} {value}\n")
        for name, value in params.items():
            array = value.value if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
            shape = ','.join(str(s) for s in array.shape)
            f.write(f"param\t{name}\t{shape}\n")
            f.write(' '.join(map(repr, array.reshape(-1).tolist())) + '\n')


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    """Read a checkpoint written by save_checkpoint: (tensors, header)."""
    tensors: Dict[str, np.ndarray] = {}
    header: Dict[str, str] = {}
    with open(path, 'r', encoding='utf-8') as f:
        lines = iter(enumerate(f, start=1))
        for line_number, line in lines:
            line = line.rstrip('\n')
            if not line:
                continue
            if line.startswith('# '):
                key, _, value = line[2:].partition(' ')
                header[key] = value
                continue
            fields = line.split('\t')
            if len(fields) != 3 or fields[0] != 'param':
                raise CheckpointFormatError(f"{path}: line {line_number}: expected a param header")
            _, name, shape_text = fields
            shape = tuple(int(s) for s in shape_text.split(',') if s)
            try:
                _, payload = next(lines)
            except StopIteration:
                raise CheckpointFormatError(f"{path}: tensor {name!r} has no payload")
            values = [float(tok) for tok in payload.split()]
            expected = int(np.prod(shape)) if shape else 1
            if len(values) != expected:
                raise CheckpointFormatError(
                    f"{path}: tensor {name!r} holds {len(values)} values, shape needs {expected}")
            tensors[name] = np.array(values, dtype=np.float64).reshape(shape)
    return tensors, header
