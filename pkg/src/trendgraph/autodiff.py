"""Reverse-mode automatic differentiation over dense float64 matrices.

Everything trainable in this package flows through here: compute nodes with
backward closures, reverse-topological gradient accumulation, a
central-difference gradient checker, Adam, and the parameter store with its
text checkpoint format.

All values are 2-D C-contiguous float64 arrays.  Forward evaluation is
eager and deterministic: identical inputs produce bit-identical outputs.
Gradients accumulate additively; callers zero them between optimizer steps.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError

Matrix = np.ndarray

CHECKPOINT_MAGIC = "DYTG1"


def as_matrix(data) -> Matrix:
    """Coerce to a contiguous 2-D float64 array; scalars and 1-D become one row."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeMismatchError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Node:
    """One vertex of the compute DAG: a matrix value plus a gradient slot.

    The gradient buffer is allocated lazily (most constants never need one)
    and always matches the value's shape.  ``needs_grad`` marks whether any
    trainable parameter is reachable through ``parents``; backward traversal
    prunes everything else.
    """

    __slots__ = ("value", "op", "parents", "trainable", "needs_grad", "name", "_grad", "_backward")

    def __init__(self, value: Matrix, op: str = "leaf", parents: tuple = (),
                 backward: Callable[[Matrix], None] | None = None,
                 trainable: bool = False, name: str = ""):
        self.value = value
        self.op = op
        self.parents = parents
        self.trainable = trainable
        self.needs_grad = trainable or any(p.needs_grad for p in parents)
        self.name = name
        self._grad = None
        self._backward = backward

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def grad(self) -> Matrix:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    def accumulate_grad(self, g: Matrix) -> None:
        if self._grad is None:
            self._grad = g.copy()
        else:
            self._grad += g

    def accumulate_owned(self, g: Matrix) -> None:
        # for freshly allocated arrays only; aliasing a view here would let a
        # later accumulation corrupt another node's gradient
        if self._grad is None:
            self._grad = g
        else:
            self._grad += g

    def zero_grad(self) -> None:
        self._grad = None

    def __repr__(self) -> str:  # pragma: no cover
        tag = self.name or self.op
        return f"<Node {tag} {self.value.shape[0]}x{self.value.shape[1]}>"


def constant(data, name: str = "") -> Node:
    """Leaf node with no gradient path."""
    value = as_matrix(data)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"constant '{name}' contains non-finite entries")
    return Node(value, op="const", name=name)


def parameter(data, name: str = "") -> Node:
    """Trainable leaf node."""
    value = as_matrix(data)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"parameter '{name}' contains non-finite entries")
    return Node(value, op="param", trainable=True, name=name)


def _require_same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.value.shape} and {b.value.shape} do not conform")


def matmul(a: Node, b: Node) -> Node:
    if a.cols != b.rows:
        raise ShapeMismatchError(f"matmul: shapes {a.value.shape} and {b.value.shape} do not conform")
    value = a.value @ b.value

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_owned(g @ b.value.T)
        if b.needs_grad:
            b.accumulate_owned(a.value.T @ g)

    return Node(value, op="matmul", parents=(a, b), backward=backward)


def _broadcast_binary(a: Node, b: Node, op: str):
    """Classify an elementwise pair: same shape, or one operand 1x1 / 1xm."""
    sa, sb = a.value.shape, b.value.shape
    if sa == sb:
        return "full", "full"
    if sb == (1, 1):
        return "full", "scalar"
    if sb == (1, sa[1]):
        return "full", "row"
    if sa == (1, 1):
        return "scalar", "full"
    if sa == (1, sb[1]):
        return "row", "full"
    raise ShapeMismatchError(f"{op}: shapes {sa} and {sb} do not conform")


def _reduce_to(g: Matrix, kind: str) -> Matrix:
    if kind == "full":
        return g
    if kind == "row":
        return g.sum(axis=0, keepdims=True)
    return g.sum().reshape(1, 1)


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; a 1x1 or 1xm operand broadcasts over rows."""
    ka, kb = _broadcast_binary(a, b, "add")
    value = a.value + b.value

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            if ka == "full":
                a.accumulate_grad(g)
            else:
                a.accumulate_owned(_reduce_to(g, ka))
        if b.needs_grad:
            if kb == "full":
                b.accumulate_grad(g)
            else:
                b.accumulate_owned(_reduce_to(g, kb))

    return Node(value, op="add", parents=(a, b), backward=backward)


def sub(a: Node, b: Node) -> Node:
    ka, kb = _broadcast_binary(a, b, "sub")
    value = a.value - b.value

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            if ka == "full":
                a.accumulate_grad(g)
            else:
                a.accumulate_owned(_reduce_to(g, ka))
        if b.needs_grad:
            b.accumulate_owned(-_reduce_to(g, kb))

    return Node(value, op="sub", parents=(a, b), backward=backward)


def hadamard(a: Node, b: Node) -> Node:
    """Elementwise product; a 1x1 or 1xm operand broadcasts over rows."""
    ka, kb = _broadcast_binary(a, b, "hadamard")
    value = a.value * b.value

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_owned(_reduce_to(g * b.value, ka))
        if b.needs_grad:
            b.accumulate_owned(_reduce_to(g * a.value, kb))

    return Node(value, op="hadamard", parents=(a, b), backward=backward)


def scale(a: Node, factor: float) -> Node:
    factor = float(factor)
    value = a.value * factor

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_owned(g * factor)

    return Node(value, op="scale", parents=(a,), backward=backward)


def transpose(a: Node) -> Node:
    value = np.ascontiguousarray(a.value.T)

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_grad(g.T)

    return Node(value, op="transpose", parents=(a,), backward=backward)


def concat_cols(a: Node, b: Node) -> Node:
    if a.rows != b.rows:
        raise ShapeMismatchError(f"concat_cols: shapes {a.value.shape} and {b.value.shape} do not conform")
    value = np.hstack([a.value, b.value])
    split = a.cols

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_grad(g[:, :split])
        if b.needs_grad:
            b.accumulate_grad(g[:, split:])

    return Node(value, op="concat_cols", parents=(a, b), backward=backward)


def sigmoid(a: Node) -> Node:
    x = a.value
    e = np.exp(-np.abs(x))
    value = np.where(x >= 0, 1.0, e) / (1.0 + e)

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_owned(g * value * (1.0 - value))

    return Node(value, op="sigmoid", parents=(a,), backward=backward)


def tanh(a: Node) -> Node:
    value = np.tanh(a.value)

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_owned(g * (1.0 - value * value))

    return Node(value, op="tanh", parents=(a,), backward=backward)


def relu(a: Node) -> Node:
    value = np.maximum(a.value, 0.0)

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_owned(g * (a.value > 0.0))

    return Node(value, op="relu", parents=(a,), backward=backward)


def row_l2_normalize(a: Node) -> Node:
    """Scale each row to unit Euclidean norm; all-zero rows pass through.

    Backward treats zero rows as an identity map (the normalization is not
    differentiable at the origin, and zero rows stay zero in the forward).
    """
    x = a.value
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0.0, norms, 1.0)
    value = x / safe

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            inner = (g * value).sum(axis=1, keepdims=True)
            a.accumulate_owned((g - value * inner) / safe)

    return Node(value, op="row_l2_normalize", parents=(a,), backward=backward)


def conv1d(signal: Node, kernel: Node, stride: int = 1) -> Node:
    """Valid 1-D convolution of a column signal with a bank of filters.

    ``signal`` is Lx1, ``kernel`` is w x f (one column per filter); output is
    P x f with P = (L - w) // stride + 1.
    """
    if signal.cols != 1:
        raise ShapeMismatchError(f"conv1d: signal must be a column, got shape {signal.value.shape}")
    if stride < 1:
        raise ValueError(f"conv1d: stride must be >= 1, got {stride}")
    length, width = signal.rows, kernel.rows
    if length < width:
        raise ShapeMismatchError(
            f"conv1d: input length {length} is shorter than kernel width {width}")
    s = signal.value[:, 0]
    patches = np.lib.stride_tricks.sliding_window_view(s, width)[::stride]
    value = patches @ kernel.value

    def backward(g: Matrix) -> None:
        if kernel.needs_grad:
            kernel.accumulate_owned(patches.T @ g)
        if signal.needs_grad:
            contrib = g @ kernel.value.T
            gs = np.zeros_like(signal.value)
            for i in range(width):
                idx = np.arange(contrib.shape[0]) * stride + i
                np.add.at(gs[:, 0], idx, contrib[:, i])
            signal.accumulate_owned(gs)

    return Node(value, op="conv1d", parents=(signal, kernel), backward=backward)


def slice_block(a: Node, rows: tuple[int, int], cols: tuple[int, int]) -> Node:
    r0, r1 = rows
    c0, c1 = cols
    if not (0 <= r0 < r1 <= a.rows and 0 <= c0 < c1 <= a.cols):
        raise ShapeMismatchError(
            f"slice_block: window rows={rows} cols={cols} outside shape {a.value.shape}")
    value = np.ascontiguousarray(a.value[r0:r1, c0:c1])

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            full = np.zeros_like(a.value)
            full[r0:r1, c0:c1] = g
            a.accumulate_owned(full)

    return Node(value, op="slice", parents=(a,), backward=backward)


def sum_all(a: Node) -> Node:
    value = np.array([[a.value.sum()]])

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_owned(np.full_like(a.value, g[0, 0]))

    return Node(value, op="sum", parents=(a,), backward=backward)


def mean_all(a: Node) -> Node:
    n = a.value.size
    value = np.array([[a.value.sum() / n]])

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_owned(np.full_like(a.value, g[0, 0] / n))

    return Node(value, op="mean", parents=(a,), backward=backward)


def block_row_mean(a: Node, block: int) -> Node:
    """Mean over consecutive row blocks: (n*block) x m becomes n x m."""
    if block < 1 or a.rows % block != 0:
        raise ShapeMismatchError(
            f"block_row_mean: row count {a.rows} not divisible by block {block}")
    n = a.rows // block
    value = a.value.reshape(n, block, a.cols).mean(axis=1)

    def backward(g: Matrix) -> None:
        if a.needs_grad:
            a.accumulate_owned(np.repeat(g / block, block, axis=0))

    return Node(value, op="block_row_mean", parents=(a,), backward=backward)


def masked_bce(scores: Node, labels: Matrix, mask: Matrix, eps: float = 1e-7) -> Node:
    """Binary cross-entropy summed over masked entries, scores clamped to [eps, 1-eps].

    ``labels`` and ``mask`` are plain arrays (no gradient path).  Entries
    where the clamp is active get zero gradient, matching the flat loss there.
    """
    if scores.value.shape != labels.shape or scores.value.shape != mask.shape:
        raise ShapeMismatchError(
            f"masked_bce: scores {scores.value.shape}, labels {labels.shape}, mask {mask.shape}")
    clamped = np.clip(scores.value, eps, 1.0 - eps)
    terms = labels * np.log(clamped) + (1.0 - labels) * np.log1p(-clamped)
    value = np.array([[-(mask * terms).sum()]])
    interior = (scores.value > eps) & (scores.value < 1.0 - eps)

    def backward(g: Matrix) -> None:
        if scores.needs_grad:
            d = mask * interior * (clamped - labels) / (clamped * (1.0 - clamped))
            scores.accumulate_owned(g[0, 0] * d)

    return Node(value, op="masked_bce", parents=(scores,), backward=backward)


def _topo_order(root: Node) -> list[Node]:
    """Iterative post-order over the needs-grad subgraph; root comes last."""
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into every reachable node's gradient.

    Requires a 1x1 loss.  Each node's backward rule fires exactly once, in
    reverse topological order.
    """
    if loss.value.shape != (1, 1):
        raise ShapeMismatchError(f"backward: loss must be 1x1, got shape {loss.value.shape}")
    if not loss.needs_grad:
        return
    order = _topo_order(loss)
    loss.accumulate_grad(np.ones((1, 1)))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


class ParameterStore:
    """Named trainable nodes plus Adam state; registration order is stable.

    Names are unique and shapes immutable after registration.  Optimizer
    moments mirror parameter shapes and start at zero.
    """

    def __init__(self) -> None:
        self._params: "OrderedDict[str, Node]" = OrderedDict()
        self._m: dict[str, Matrix] = {}
        self._v: dict[str, Matrix] = {}
        self.step_count = 0

    def register(self, name: str, data) -> Node:
        if name in self._params:
            raise ValueError(f"parameter '{name}' already registered")
        node = parameter(data, name=name)
        self._params[name] = node
        self._m[name] = np.zeros_like(node.value)
        self._v[name] = np.zeros_like(node.value)
        return node

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Node]]:
        return iter(self._params.items())

    def zero_grads(self) -> None:
        for node in self._params.values():
            node.zero_grad()

    def snapshot_values(self) -> "OrderedDict[str, Matrix]":
        return OrderedDict((name, node.value.copy()) for name, node in self._params.items())

    def restore_values(self, values: dict[str, Matrix]) -> None:
        for name, arr in values.items():
            node = self._params[name]
            if node.value.shape != arr.shape:
                raise ShapeMismatchError(
                    f"restore of '{name}': shapes {node.value.shape} and {arr.shape} do not conform")
            node.value[...] = arr

    def save(self, path) -> None:
        """Write the versioned text checkpoint (see README for the layout)."""
        with open(path, "w", newline="\n") as fh:
            fh.write(f"{CHECKPOINT_MAGIC}\n")
            fh.write(f"{len(self._params)}\n")
            for name, node in self._params.items():
                r, c = node.value.shape
                fh.write(f"{name} {r} {c}\n")
                for row in node.value:
                    fh.write(" ".join(float(x).hex() for x in row) + "\n")

    @staticmethod
    def read_checkpoint(path) -> "OrderedDict[str, Matrix]":
        """Parse a checkpoint file into an ordered name -> array map."""
        with open(path, "r") as fh:
            magic = fh.readline().strip()
            if magic != CHECKPOINT_MAGIC:
                raise ValueError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
            count = int(fh.readline())
            out: "OrderedDict[str, Matrix]" = OrderedDict()
            for _ in range(count):
                name, r, c = fh.readline().split()
                r, c = int(r), int(c)
                rows = [[float.fromhex(tok) for tok in fh.readline().split()] for _ in range(r)]
                arr = np.array(rows, dtype=np.float64).reshape(r, c)
                out[name] = arr
        return out

    def load(self, path) -> None:
        values = self.read_checkpoint(path)
        if set(values) != set(self._params):
            missing = sorted(set(self._params) - set(values))
            extra = sorted(set(values) - set(self._params))
            raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        self.restore_values(values)


def adam_step(store: ParameterStore, learning_rate: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One Adam update over every registered parameter; gradients are left intact."""
    b1, b2 = betas
    for name, node in store.items():
        g = node.grad
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
    store.step_count += 1
    t = store.step_count
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, node in store.items():
        g = node.grad
        m = store._m[name]
        v = store._v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        node.value -= learning_rate * (m / bias1) / (np.sqrt(v / bias2) + eps)


@dataclass
class FiniteDifferenceReport:
    """Per-parameter worst-case error of analytic gradients vs central differences.

    The error metric is |analytic - numeric| / max(|analytic|, |numeric|, 1),
    so parameters with (near-) zero gradients are judged by absolute error.
    """

    epsilon: float
    tolerance: float
    max_errors: "OrderedDict[str, float]"

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.max_errors.items()
                if not (math.isfinite(err) and err <= self.tolerance)]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_errors.values(), default=0.0)

    def summary(self) -> str:
        lines = []
        for name, err in self.max_errors.items():
            ok = math.isfinite(err) and err <= self.tolerance
            lines.append(f"{'PASS' if ok else 'FAIL'} {name}: max_err={err:.3e}")
        return "\n".join(lines)


def finite_difference_check(loss_builder: Callable[[], Node], store: ParameterStore,
                            epsilon: float = 1e-5, tolerance: float = 1e-4,
                            parameter_names: Iterable[str] | None = None) -> FiniteDifferenceReport:
    """Compare backward() gradients against central differences of the loss.

    ``loss_builder`` must rebuild the forward graph from the store's current
    parameter values and be deterministic for fixed parameters.  Non-finite
    differences are reported as failures, never raised.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    names = list(parameter_names) if parameter_names is not None else store.names()
    store.zero_grads()
    loss = loss_builder()
    backward(loss)
    analytic = {name: store[name].grad.copy() for name in names}

    max_errors: "OrderedDict[str, float]" = OrderedDict()
    for name in names:
        theta = store[name].value
        a = analytic[name]
        numeric = np.empty_like(theta)
        for idx in np.ndindex(theta.shape):
            orig = theta[idx]
            theta[idx] = orig + epsilon
            f_plus = float(loss_builder().value[0, 0])
            theta[idx] = orig - epsilon
            f_minus = float(loss_builder().value[0, 0])
            theta[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2.0 * epsilon)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1.0)
        err = np.abs(a - numeric) / denom
        err = np.where(np.isfinite(numeric), err, np.inf)
        max_errors[name] = float(err.max()) if err.size else 0.0
    return FiniteDifferenceReport(epsilon=epsilon, tolerance=tolerance, max_errors=max_errors)
