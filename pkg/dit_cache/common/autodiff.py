"""
Reverse-mode automatic differentiation over dense float64 arrays.

Tensors wrap a numpy array. Every differentiable operation is a Function
subclass; when any input is tracked (a parameter with requires_grad, or the
output of a recorded operation) the Function is appended to the active Graph.
The append order is a topological order, so backward() walks the graph once
in reverse and then clears it.

Only scalar and full-shape broadcasting is accepted by the binary
element-wise operations. Anything else goes through an explicit expand().
"""

import contextlib
import math
import threading
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, GraphError, NumericError

LAYERNORM_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


#######################################################
class Graph:
    """Append-only record of operations; backward walks it in reverse"""

    def __init__(self):
        self.nodes: List["Function"] = []
        self.epoch = 0

    def __len__(self):
        return len(self.nodes)

    def append(self, fn: "Function") -> int:
        self.nodes.append(fn)
        return len(self.nodes) - 1

    def clear(self):
        self.nodes = []
        self.epoch += 1

    @contextlib.contextmanager
    def as_default(self):
        """Record operations on this graph inside the block"""
        previous = getattr(_state, "graph", None)
        _state.graph = self
        try:
            yield self
        finally:
            _state.graph = previous


_state = threading.local()


def default_graph() -> Graph:
    graph = getattr(_state, "graph", None)
    if graph is None:
        graph = Graph()
        _state.graph = graph
    return graph


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Nothing computed inside the block is recorded (stop-gradient region)"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


#######################################################
class Tensor:
    """Dense float64 array with an optional gradient"""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_graph", "_epoch")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, _copy: bool = True):
        if isinstance(data, Tensor):
            data = data.data
        if _copy:
            array = np.array(data, dtype=np.float64)
            if not np.all(np.isfinite(array)):
                raise NumericError("non-finite value in tensor data", {"shape": list(array.shape)})
        else:
            array = np.asarray(data, dtype=np.float64)
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[int] = None
        self._graph: Optional[Graph] = None
        self._epoch = -1

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        """True when gradients can flow through this tensor"""
        if self.requires_grad:
            return True
        return self._node is not None and self._graph is not None and self._epoch == self._graph.epoch

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError("item() needs a single element", self.shape)
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return detach(self)

    def backward(self):
        backward(self)

    # Operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data: ArrayLike) -> Tensor:
    """Leaf tensor that accumulates gradients"""
    return Tensor(data, requires_grad=True)


def check_finite(value: Union[Tensor, np.ndarray], what: str = "value"):
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite {what}", {"shape": list(array.shape),
                                                   "nan": int(np.isnan(array).sum()),
                                                   "inf": int(np.isinf(array).sum())})


#######################################################
class Function:
    """One recorded operation: forward on arrays, backward returns input adjoints"""

    kind = "op"

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    def forward(self, *arrays, **params) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: ArrayLike, **params) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(*tensors)
        out = fn.forward(*[t.data for t in tensors], **params)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite output from {cls.kind}",
                               {"shape": list(np.shape(out))})
        result = Tensor(out, _copy=False)
        if is_grad_enabled() and any(t.tracked for t in tensors):
            graph = default_graph()
            result._node = graph.append(fn)
            result._graph = graph
            result._epoch = graph.epoch
        return result


def _binary_shape(kind: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if a.size == 1:
        return b.shape
    if b.size == 1:
        return a.shape
    raise DimensionError(f"{kind}: only scalar or full-shape broadcasting is supported",
                         a.shape, b.shape)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.full(shape, grad.sum())


class Add(Function):
    kind = "add"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        _binary_shape(self.kind, a, b)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    kind = "sub"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        _binary_shape(self.kind, a, b)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    kind = "mul"

    def forward(self, a, b):
        _binary_shape(self.kind, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (_unbroadcast(grad * self.b, self.a.shape),
                _unbroadcast(grad * self.a, self.b.shape))


class ScalarMul(Function):
    kind = "scalar_mul"

    def forward(self, a, scalar: float):
        self.scalar = float(scalar)
        return a * self.scalar

    def backward(self, grad):
        return (grad * self.scalar,)


class MatMul(Function):
    kind = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError("matmul: inner dimensions disagree", a.shape, b.shape)
        if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
            raise DimensionError("matmul: batch dimensions disagree", a.shape, b.shape)
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.a, self.b
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        if b.ndim == 2:
            grad_b = a.reshape(-1, a.shape[-1]).T @ grad.reshape(-1, grad.shape[-1])
        else:
            grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        return grad_a, grad_b


class Gelu(Function):
    kind = "gelu"

    def forward(self, x):
        self.x = x
        self.t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        dt = (1.0 - t ** 2) * _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * dt),)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


class Sigmoid(Function):
    kind = "sigmoid"

    def forward(self, x):
        self.s = _sigmoid(x)
        return self.s

    def backward(self, grad):
        return (grad * self.s * (1.0 - self.s),)


class Softmax(Function):
    kind = "softmax"

    def forward(self, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        self.s = e / e.sum(axis=-1, keepdims=True)
        return self.s

    def backward(self, grad):
        s = self.s
        return (s * (grad - (grad * s).sum(axis=-1, keepdims=True)),)


class LayerNorm(Function):
    kind = "layernorm"

    def forward(self, x, gamma=None, beta=None):
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + LAYERNORM_EPS)
        self.xhat = (x - mean) * self.inv_std
        self.gamma = gamma
        out = self.xhat
        if gamma is not None:
            if gamma.shape != x.shape[-1:] or beta is None or beta.shape != x.shape[-1:]:
                raise DimensionError("layernorm: scale/shift must match the last axis",
                                     x.shape, gamma.shape)
            out = out * gamma + beta
        return out

    def backward(self, grad):
        xhat = self.xhat
        if self.gamma is not None:
            dxhat = grad * self.gamma
            lead = tuple(range(grad.ndim - 1))
            grad_gamma = (grad * xhat).sum(axis=lead)
            grad_beta = grad.sum(axis=lead)
        else:
            dxhat = grad
        dx = self.inv_std * (dxhat
                             - dxhat.mean(axis=-1, keepdims=True)
                             - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        if self.gamma is not None:
            return dx, grad_gamma, grad_beta
        return (dx,)


class FrobeniusSq(Function):
    kind = "frobenius_sq"

    def forward(self, a, b):
        if a.shape != b.shape:
            raise DimensionError("frobenius_sq: shapes differ", a.shape, b.shape)
        self.diff = a - b
        return np.array(np.sum(self.diff * self.diff))

    def backward(self, grad):
        g = 2.0 * grad * self.diff
        return g, -g


class Sum(Function):
    kind = "sum"

    def forward(self, a):
        self.shape = a.shape
        return np.array(a.sum())

    def backward(self, grad):
        return (np.full(self.shape, float(grad)),)


class Reshape(Function):
    kind = "reshape"

    def forward(self, a, shape):
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise DimensionError("reshape: element count differs", a.shape, tuple(shape))

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    kind = "transpose"

    def forward(self, a, axes):
        self.axes = tuple(axes)
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Expand(Function):
    """Explicit broadcast of a to shape; backward sums over the broadcast axes"""
    kind = "expand"

    def forward(self, a, shape):
        self.shape = a.shape
        try:
            return np.array(np.broadcast_to(a, tuple(shape)))
        except ValueError:
            raise DimensionError("expand: shapes are not broadcast-compatible", a.shape, tuple(shape))

    def backward(self, grad):
        lead = grad.ndim - len(self.shape)
        g = grad.sum(axis=tuple(range(lead))) if lead else grad
        axes = tuple(i for i, n in enumerate(self.shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)


class TakeRows(Function):
    """Embedding lookup: rows of a 2-D table selected by integer ids"""
    kind = "take_rows"

    def forward(self, table, ids):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.shape = table.shape
        if table.ndim != 2:
            raise DimensionError("take_rows: table must be 2-D", table.shape)
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= table.shape[0]):
            raise DimensionError("take_rows: id out of range", table.shape, self.ids.shape)
        return table[self.ids]

    def backward(self, grad):
        g = np.zeros(self.shape)
        np.add.at(g, self.ids, grad)
        return (g,)


class Index(Function):
    """Basic integer/slice indexing; gradient scattered back into place"""
    kind = "index"

    def forward(self, a, key):
        self.key = key
        self.shape = a.shape
        try:
            return np.array(a[key])
        except IndexError as e:
            raise DimensionError(f"index: {e}", a.shape)

    def backward(self, grad):
        g = np.zeros(self.shape)
        g[self.key] = grad
        return (g,)


#######################################################
# Public operations

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Add.apply(a, b)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Sub.apply(a, b)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Mul.apply(a, b)


def scale(a: ArrayLike, scalar: float) -> Tensor:
    return ScalarMul.apply(a, scalar=scalar)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return MatMul.apply(a, b)


def gelu(x: ArrayLike) -> Tensor:
    return Gelu.apply(x)


def sigmoid(x: ArrayLike) -> Tensor:
    return Sigmoid.apply(x)


def softmax(x: ArrayLike) -> Tensor:
    """Softmax over the last axis"""
    return Softmax.apply(x)


def layernorm(x: ArrayLike, gamma: Optional[ArrayLike] = None, beta: Optional[ArrayLike] = None) -> Tensor:
    """Layer norm over the last axis with optional learnable scale/shift"""
    if gamma is None:
        return LayerNorm.apply(x)
    return LayerNorm.apply(x, gamma, beta)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "softmax": softmax,
}


def elementwise(op_kind: str, a: ArrayLike, b: Optional[ArrayLike] = None, **params) -> Tensor:
    """
    Dispatch an element-wise operation by name.

    Args:
        op_kind: add, sub, mul, scalar_mul, gelu, sigmoid, softmax or layernorm
        a: first operand
        b: second operand for the binary kinds
        params: `scalar` for scalar_mul; `gamma`/`beta` for layernorm
    """
    if op_kind == "scalar_mul":
        return scale(a, params["scalar"])
    if op_kind == "layernorm":
        return layernorm(a, params.get("gamma"), params.get("beta"))
    if op_kind not in _ELEMENTWISE:
        raise ValueError(f"unknown element-wise op: {op_kind}")
    if op_kind in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return _ELEMENTWISE[op_kind](a, b)
    return _ELEMENTWISE[op_kind](a)


def frobenius_sq(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Sum of squared element-wise differences, as a scalar tensor"""
    return FrobeniusSq.apply(a, b)


def sum_all(a: ArrayLike) -> Tensor:
    return Sum.apply(a)


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a: ArrayLike, axes: Sequence[int]) -> Tensor:
    return Transpose.apply(a, axes=tuple(axes))


def expand(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    return Expand.apply(a, shape=tuple(shape))


def take_rows(table: ArrayLike, ids) -> Tensor:
    return TakeRows.apply(table, ids=ids)


def index(a: ArrayLike, key) -> Tensor:
    return Index.apply(a, key=key)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight (+ bias expanded over the leading axes)"""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, expand(bias, out.shape))
    return out


def detach(a: ArrayLike) -> Tensor:
    """Same values, no gradient, no graph edge"""
    return Tensor(as_tensor(a).data)


def backward(loss: Tensor):
    """
    Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf,
    then clear the graph the loss was recorded on.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")

    if loss._node is None:
        if loss.requires_grad:
            loss.grad = np.ones(loss.shape) if loss.grad is None else loss.grad + 1.0
            return
        raise GraphError("loss is not connected to any tensor that requires grad")

    graph = loss._graph
    if graph is None or loss._epoch != graph.epoch:
        raise GraphError("graph already cleared; backward was called twice")

    adjoints = {loss._node: np.ones(loss.shape)}
    for node_id in range(loss._node, -1, -1):
        grad = adjoints.pop(node_id, None)
        if grad is None:
            continue
        fn = graph.nodes[node_id]
        for tensor, g in zip(fn.inputs, fn.backward(grad)):
            if g is None:
                continue
            if tensor._node is not None and tensor._graph is graph and tensor._epoch == graph.epoch:
                previous = adjoints.get(tensor._node)
                adjoints[tensor._node] = g if previous is None else previous + g
            elif tensor.requires_grad:
                tensor.grad = np.array(g, dtype=np.float64) if tensor.grad is None else tensor.grad + g

    graph.clear()
