"""Reverse-mode automatic differentiation on a flat tape.

A Tape is an append-only list of nodes.  Leaves declare shapes (optionally
with values bound at construction); every other node records its op tag, the
indices of its parents, and the forward value once evaluated.  Parents always
precede children, so one reversed sweep propagates adjoints.  Tapes can be
replayed with fresh leaf values through eval_graph, which is also how the
finite-difference oracle perturbs parameters cheaply.

Conventions fixed here and relied on elsewhere:
  - everything is float64; values are 0-d scalars, vectors, or matrices
  - relu takes subgradient 0 at exactly 0
  - add broadcasts a (1, m) bias against an (n, m) matrix and nothing else
  - backward requires a scalar output and may run once per evaluation
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when an op is applied to incompatible shapes."""


class TapeStateError(RuntimeError):
    """Raised on use-before-eval / double-backward misuse of a tape."""


class Tensor:
    """Dense float64 array with finite entries, C order, read-only.

    The validated boundary type: data entering from files, configs, or user
    code is wrapped here once; internals then work on plain ndarrays.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        a = np.array(data, dtype=np.float64, order="C", copy=True)
        if not np.all(np.isfinite(a)):
            raise ValueError("Tensor rejects non-finite entries")
        a.setflags(write=False)
        self.data = a

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def asarray(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Node:
    __slots__ = ("op", "parents", "attrs", "shape", "value", "block", "name")

    def __init__(self, op, parents, attrs, shape, value=None, block=None, name=None):
        self.op = op
        self.parents = parents
        self.attrs = attrs
        self.shape = shape
        self.value = value
        self.block = block
        self.name = name


@dataclass
class GradientVector:
    """Flat per-block adjoints for the leaves a backward pass collected.

    Blocks keep leaf creation order; flat() concatenates them in that order,
    so total length always equals the trainable parameter count of the model
    that built the tape.
    """

    blocks: dict

    def __getitem__(self, block: str) -> np.ndarray:
        return self.blocks[block]

    def flat(self) -> np.ndarray:
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([v for v in self.blocks.values()])

    @property
    def total_size(self) -> int:
        return sum(v.size for v in self.blocks.values())


class Var:
    """Handle to a tape node; carries the sugar the model code leans on."""

    __slots__ = ("tape", "i")

    def __init__(self, tape, i):
        self.tape = tape
        self.i = i

    @property
    def shape(self):
        return self.tape.nodes[self.i].shape

    @property
    def value(self):
        return self.tape.nodes[self.i].value

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def relu(self):
        return relu(self)

    def sin(self):
        return tsin(self)

    def cos(self):
        return tcos(self)

    def square(self):
        return square(self)


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.n_leaves = 0
        self._grads_spent = False

    def leaf(self, shape=None, value=None, block=None, name=None) -> Var:
        if value is not None:
            value = value.asarray() if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
            if shape is not None and tuple(shape) != value.shape:
                raise ShapeError(f"leaf {name or self.n_leaves}: declared {tuple(shape)} != value {value.shape}")
            shape = value.shape
        if shape is None:
            raise ShapeError("leaf needs a shape or a value")
        node = Node("leaf", (), {}, tuple(shape), value=value, block=block, name=name)
        self.nodes.append(node)
        self.n_leaves += 1
        return Var(self, len(self.nodes) - 1)

    def _append(self, op, parents, attrs, shape) -> Var:
        node = Node(op, tuple(p.i for p in parents), attrs, shape)
        vals = [self.nodes[i].value for i in node.parents]
        if all(v is not None for v in vals):
            node.value = _FORWARD[op](vals, attrs)
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)


def _binary_check(a: Var, b: Var):
    if a.tape is not b.tape:
        raise ValueError("operands live on different tapes")
    return a.tape


# ---------------------------------------------------------------------------
# primitive forward rules

def _fw_add(vals, attrs):
    return vals[0] + vals[1]


def _fw_mul(vals, attrs):
    return vals[0] * vals[1]


def _fw_matmul(vals, attrs):
    return vals[0] @ vals[1]


def _fw_sum(vals, attrs):
    return np.sum(vals[0], axis=attrs["axis"])


def _fw_relu(vals, attrs):
    return np.maximum(vals[0], 0.0)


def _fw_sin(vals, attrs):
    return np.sin(vals[0])


def _fw_cos(vals, attrs):
    return np.cos(vals[0])


def _fw_square(vals, attrs):
    return vals[0] * vals[0]


def _fw_scale(vals, attrs):
    return vals[0] * attrs["c"]


def _fw_concat(vals, attrs):
    return np.concatenate([vals[0], vals[1]], axis=attrs["axis"])


def _fw_slice(vals, attrs):
    sl = [np.s_[:]] * vals[0].ndim
    sl[attrs["axis"]] = np.s_[attrs["start"]:attrs["stop"]]
    return np.ascontiguousarray(vals[0][tuple(sl)])


_FORWARD = {
    "add": _fw_add,
    "mul": _fw_mul,
    "matmul": _fw_matmul,
    "sum": _fw_sum,
    "relu": _fw_relu,
    "sin": _fw_sin,
    "cos": _fw_cos,
    "square": _fw_square,
    "scale": _fw_scale,
    "concat": _fw_concat,
    "slice": _fw_slice,
}


# ---------------------------------------------------------------------------
# op constructors (shape checks happen at build time)

def add(a: Var, b: Var) -> Var:
    tape = _binary_check(a, b)
    sa, sb = a.shape, b.shape
    if sa == sb:
        shape = sa
    elif len(sa) == 2 and sb == (1, sa[1]):
        shape = sa
    elif len(sb) == 2 and sa == (1, sb[1]):
        shape = sb
    else:
        raise ShapeError(f"add: {sa} vs {sb}")
    return tape._append("add", (a, b), {}, shape)


def mul(a: Var, b: Var) -> Var:
    tape = _binary_check(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")
    return tape._append("mul", (a, b), {}, a.shape)


def matmul(a: Var, b: Var) -> Var:
    tape = _binary_check(a, b)
    sa, sb = a.shape, b.shape
    if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
        raise ShapeError(f"matmul: {sa} vs {sb}")
    return tape._append("matmul", (a, b), {}, (sa[0], sb[1]))


def tsum(a: Var, axis=None) -> Var:
    sa = a.shape
    if axis is None:
        shape = ()
    elif axis in (0, 1) and len(sa) == 2:
        shape = (sa[1],) if axis == 0 else (sa[0],)
    elif axis == 0 and len(sa) == 1:
        shape = ()
    else:
        raise ShapeError(f"sum: axis {axis} on shape {sa}")
    return a.tape._append("sum", (a,), {"axis": axis}, shape)


def relu(a: Var) -> Var:
    return a.tape._append("relu", (a,), {}, a.shape)


def tsin(a: Var) -> Var:
    return a.tape._append("sin", (a,), {}, a.shape)


def tcos(a: Var) -> Var:
    return a.tape._append("cos", (a,), {}, a.shape)


def square(a: Var) -> Var:
    return a.tape._append("square", (a,), {}, a.shape)


def scale(a: Var, c: float) -> Var:
    return a.tape._append("scale", (a,), {"c": float(c)}, a.shape)


def concat(a: Var, b: Var, axis: int = 1) -> Var:
    tape = _binary_check(a, b)
    sa, sb = a.shape, b.shape
    if len(sa) != len(sb) or axis >= len(sa):
        raise ShapeError(f"concat: {sa} vs {sb} on axis {axis}")
    for d in range(len(sa)):
        if d != axis and sa[d] != sb[d]:
            raise ShapeError(f"concat: {sa} vs {sb} on axis {axis}")
    shape = list(sa)
    shape[axis] += sb[axis]
    return tape._append("concat", (a, b), {"axis": axis}, tuple(shape))


def slice_(a: Var, axis: int, start: int, stop: int) -> Var:
    sa = a.shape
    if axis >= len(sa) or not 0 <= start <= stop <= sa[axis]:
        raise ShapeError(f"slice: [{start}:{stop}] on axis {axis} of {sa}")
    shape = list(sa)
    shape[axis] = stop - start
    return a.tape._append("slice", (a,), {"axis": axis, "start": start, "stop": stop}, tuple(shape))


# ---------------------------------------------------------------------------
# evaluation and backward

def eval_graph(inputs, program: Tape) -> Tensor:
    """Bind inputs to the program's leaves in declaration order and re-run.

    Returns the value of the final node.  Replaying resets the one-shot
    backward latch, so eval/backward pairs can alternate on one tape.
    """
    leaf_ids = [i for i, n in enumerate(program.nodes) if n.op == "leaf"]
    if len(inputs) != len(leaf_ids):
        raise ShapeError(f"eval_graph: {len(inputs)} inputs for {len(leaf_ids)} leaves")
    for val, i in zip(inputs, leaf_ids):
        arr = val.asarray() if isinstance(val, Tensor) else np.asarray(val, dtype=np.float64)
        node = program.nodes[i]
        if arr.shape != node.shape:
            raise ShapeError(f"eval_graph: leaf {node.name or i} wants {node.shape}, got {arr.shape}")
        node.value = arr
    for i, node in enumerate(program.nodes):
        if node.op == "leaf":
            continue
        vals = [program.nodes[p].value for p in node.parents]
        node.value = _FORWARD[node.op](vals, node.attrs)
    program._grads_spent = False
    if not program.nodes:
        raise TapeStateError("empty program")
    return Tensor(program.nodes[-1].value)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0, keepdims=True)


def backward(program: Tape, output_node: Var) -> GradientVector:
    """Adjoint sweep from a scalar output down to every leaf.

    Grad buffers are single-use: a second backward without re-evaluating the
    tape raises, since saved values may no longer match the caller's params.
    """
    nodes = program.nodes
    out = nodes[output_node.i]
    if out.value is None:
        raise TapeStateError("backward before forward evaluation")
    if np.ndim(out.value) != 0 and np.size(out.value) != 1:
        raise TapeStateError(f"backward needs a scalar output, got shape {np.shape(out.value)}")
    if program._grads_spent:
        raise TapeStateError("backward already ran for this evaluation")
    program._grads_spent = True

    grads: list[np.ndarray | None] = [None] * (output_node.i + 1)
    grads[output_node.i] = np.ones_like(np.asarray(out.value, dtype=np.float64))

    for i in range(output_node.i, -1, -1):
        node = nodes[i]
        g = grads[i]
        if g is None or node.op == "leaf":
            continue
        if node.value is None:
            raise TapeStateError(f"node {i} ({node.op}) never evaluated")
        pv = [nodes[p].value for p in node.parents]

        if node.op == "add":
            contribs = (_unbroadcast(g, pv[0].shape), _unbroadcast(g, pv[1].shape))
        elif node.op == "mul":
            contribs = (g * pv[1], g * pv[0])
        elif node.op == "matmul":
            contribs = (g @ pv[1].T, pv[0].T @ g)
        elif node.op == "sum":
            axis = node.attrs["axis"]
            if axis is None or pv[0].ndim == 1:
                contribs = (np.broadcast_to(g, pv[0].shape),)
            elif axis == 0:
                contribs = (np.broadcast_to(g[None, :], pv[0].shape),)
            else:
                contribs = (np.broadcast_to(g[:, None], pv[0].shape),)
        elif node.op == "relu":
            contribs = (g * (pv[0] > 0.0),)
        elif node.op == "sin":
            contribs = (g * np.cos(pv[0]),)
        elif node.op == "cos":
            contribs = (-g * np.sin(pv[0]),)
        elif node.op == "square":
            contribs = (2.0 * pv[0] * g,)
        elif node.op == "scale":
            contribs = (g * node.attrs["c"],)
        elif node.op == "concat":
            axis = node.attrs["axis"]
            split = pv[0].shape[axis]
            sl0 = [np.s_[:]] * g.ndim
            sl1 = [np.s_[:]] * g.ndim
            sl0[axis] = np.s_[:split]
            sl1[axis] = np.s_[split:]
            contribs = (g[tuple(sl0)], g[tuple(sl1)])
        elif node.op == "slice":
            full = np.zeros_like(pv[0])
            sl = [np.s_[:]] * full.ndim
            sl[node.attrs["axis"]] = np.s_[node.attrs["start"]:node.attrs["stop"]]
            full[tuple(sl)] = g
            contribs = (full,)
        else:
            raise TapeStateError(f"no adjoint rule for op {node.op}")

        for p, contrib in zip(node.parents, contribs):
            contrib = np.asarray(contrib, dtype=np.float64)
            if grads[p] is None:
                grads[p] = contrib.copy() if contrib.base is not None else contrib
            else:
                grads[p] = grads[p] + contrib

    blocks: dict[str, list[np.ndarray]] = {}
    for i, node in enumerate(nodes[:output_node.i + 1]):
        if node.op == "leaf" and node.block is not None:
            g = grads[i] if grads[i] is not None else np.zeros(node.shape)
            blocks.setdefault(node.block, []).append(np.ravel(g))
    return GradientVector({k: np.concatenate(v) if v else np.zeros(0) for k, v in blocks.items()})


def finite_diff_grad(f, theta: Tensor, step: float = 1e-6) -> GradientVector:
    """Central-difference gradient of a scalar function of a flat vector.

    Per-coordinate step h_i = step * max(1, |theta_i|), the oracle the tape
    is checked against; independent of everything above by construction.
    Returned as a single-block GradientVector so flats line up with backward.
    """
    if step <= 0:
        raise ValueError("finite_diff_grad needs step > 0")
    base = theta.asarray().astype(np.float64).ravel()
    grad = np.zeros_like(base)
    for i in range(base.size):
        h = step * max(1.0, abs(base[i]))
        up = base.copy()
        dn = base.copy()
        up[i] += h
        dn[i] -= h
        fu = f(Tensor(up.reshape(theta.shape)))
        fd = f(Tensor(dn.reshape(theta.shape)))
        fu = float(fu.asarray()) if isinstance(fu, Tensor) else float(fu)
        fd = float(fd.asarray()) if isinstance(fd, Tensor) else float(fd)
        if not (math.isfinite(fu) and math.isfinite(fd)):
            raise ValueError(f"non-finite function value near coordinate {i}")
        grad[i] = (fu - fd) / (2.0 * h)
    return GradientVector({"params": grad})
