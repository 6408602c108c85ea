"""Tape-based reverse-mode differentiation over a small closed op set.

The op set is {matmul, transpose, bias add, max-with-constant (ReLU),
elementwise add/sub/mul/div, scalar scale, square, row/column/full
reductions with their broadcast adjoints, per-row L2 norm}. Crucially, the
backward pass of every op is expressed in these same ops, so the gradient of
an expression is itself a tape expression and can be differentiated again.
That is what makes the gradient-penalty term (a function of first-order input
gradients) differentiable with respect to the network parameters without any
hand-derived second-order formulas.

Values are computed eagerly at node-creation time as float64 arrays; a Tape
is single-threaded while it is being built and walked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class Tape:
    """Append-only record of nodes; ids of inputs always precede consumers."""

    __slots__ = ("nodes", "degenerate_rows")

    def __init__(self):
        self.nodes: list[Node] = []
        self.degenerate_rows = 0

    def _record(self, op: str, parents: tuple, value: np.ndarray, payload=None) -> "Node":
        node = Node(self, len(self.nodes), op, parents, value, payload)
        self.nodes.append(node)
        return node

    def leaf(self, value) -> "Node":
        """Enter a constant or parameter array onto the tape."""
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"leaf must be at most 2-D, got shape {arr.shape}")
        return self._record("leaf", (), arr)


class Node:
    __slots__ = ("tape", "nid", "op", "parents", "value", "payload")

    def __init__(self, tape, nid, op, parents, value, payload):
        self.tape = tape
        self.nid = nid
        self.op = op
        self.parents = parents
        self.value = value
        self.payload = payload

    def __repr__(self):
        return f"Node({self.nid}, {self.op}, shape={self.value.shape})"


def _same_tape(*nodes):
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("nodes belong to different tapes")
    return tape


def _same_shape(a, b, op):
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def matmul(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul: inner dims {a.value.shape} @ {b.value.shape}")
    return tape._record("matmul", (a, b), a.value @ b.value)


def transpose(a: Node) -> Node:
    # the value is a strided view; node values are never mutated, and BLAS
    # consumes transposed operands without copying
    return a.tape._record("transpose", (a,), a.value.T)


def add(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _same_shape(a, b, "add")
    return tape._record("add", (a, b), a.value + b.value)


def sub(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _same_shape(a, b, "sub")
    return tape._record("sub", (a, b), a.value - b.value)


def mul(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _same_shape(a, b, "mul")
    return tape._record("mul", (a, b), a.value * b.value)


def div(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    _same_shape(a, b, "div")
    return tape._record("div", (a, b), a.value / b.value)


def scale(a: Node, c: float) -> Node:
    return a.tape._record("scale", (a,), a.value * float(c), float(c))


def square(a: Node) -> Node:
    return a.tape._record("square", (a,), a.value * a.value)


def maxc(a: Node, c: float) -> Node:
    """Elementwise max(a, c); derivative is 0 where a <= c (subgradient choice)."""
    return a.tape._record("maxc", (a,), np.maximum(a.value, float(c)), float(c))


def relu(a: Node) -> Node:
    return maxc(a, 0.0)


def add_bias(x: Node, b: Node) -> Node:
    """Add a (1, c) bias row to every row of a (r, c) matrix."""
    tape = _same_tape(x, b)
    if b.value.shape != (1, x.value.shape[1]):
        raise ValueError(f"add_bias: bias shape {b.value.shape} for input {x.value.shape}")
    return tape._record("add_bias", (x, b), x.value + b.value)


def sum_rows(a: Node) -> Node:
    return a.tape._record("sum_rows", (a,), a.value.sum(axis=0, keepdims=True))


def broadcast_rows(a: Node, rows: int) -> Node:
    if a.value.shape[0] != 1:
        raise ValueError("broadcast_rows expects a single-row input")
    return a.tape._record(
        "broadcast_rows", (a,), np.broadcast_to(a.value, (rows, a.value.shape[1])).copy()
    )


def sum_cols(a: Node) -> Node:
    return a.tape._record("sum_cols", (a,), a.value.sum(axis=1, keepdims=True))


def broadcast_cols(a: Node, cols: int) -> Node:
    if a.value.shape[1] != 1:
        raise ValueError("broadcast_cols expects a single-column input")
    return a.tape._record(
        "broadcast_cols", (a,), np.broadcast_to(a.value, (a.value.shape[0], cols)).copy()
    )


def sum_all(a: Node) -> Node:
    return a.tape._record("sum_all", (a,), a.value.sum().reshape(1, 1))


def mean_all(a: Node) -> Node:
    return scale(sum_all(a), 1.0 / a.value.size)


def row_norm(a: Node) -> Node:
    """Per-row Euclidean norm, (r, c) -> (r, 1).

    Rows that are exactly zero are non-differentiable; their backward
    contribution is defined as zero (see _vjp).
    """
    val = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    return a.tape._record("row_norm", (a,), val)


def _vjp(node: Node, g: Node, needed) -> list[tuple[Node, Node]]:
    """Cotangent rules; every returned gradient is built from tape ops.

    ``needed(parent)`` gates each parent so gradients are only constructed
    along paths that can reach a requested node.
    """
    op = node.op
    out: list[tuple[Node, Node]] = []
    if op == "matmul":
        a, b = node.parents
        if needed(a):
            out.append((a, matmul(g, transpose(b))))
        if needed(b):
            out.append((b, matmul(transpose(a), g)))
        return out
    if op == "transpose":
        return [(node.parents[0], transpose(g))]
    if op == "add":
        a, b = node.parents
        if needed(a):
            out.append((a, g))
        if needed(b):
            out.append((b, g))
        return out
    if op == "sub":
        a, b = node.parents
        if needed(a):
            out.append((a, g))
        if needed(b):
            out.append((b, scale(g, -1.0)))
        return out
    if op == "mul":
        a, b = node.parents
        if needed(a):
            out.append((a, mul(g, b)))
        if needed(b):
            out.append((b, mul(g, a)))
        return out
    if op == "div":
        a, b = node.parents
        if needed(a):
            out.append((a, div(g, b)))
        if needed(b):
            out.append((b, scale(mul(g, div(node, b)), -1.0)))
        return out
    if op == "scale":
        return [(node.parents[0], scale(g, node.payload))]
    if op == "square":
        a = node.parents[0]
        return [(a, scale(mul(g, a), 2.0))]
    if op == "maxc":
        a = node.parents[0]
        mask = node.tape.leaf((a.value > node.payload).astype(np.float64))
        return [(a, mul(g, mask))]
    if op == "add_bias":
        x, b = node.parents
        if needed(x):
            out.append((x, g))
        if needed(b):
            out.append((b, sum_rows(g)))
        return out
    if op == "sum_rows":
        a = node.parents[0]
        return [(a, broadcast_rows(g, a.value.shape[0]))]
    if op == "broadcast_rows":
        return [(node.parents[0], sum_rows(g))]
    if op == "sum_cols":
        a = node.parents[0]
        return [(a, broadcast_cols(g, a.value.shape[1]))]
    if op == "broadcast_cols":
        return [(node.parents[0], sum_cols(g))]
    if op == "sum_all":
        a = node.parents[0]
        r, c = a.value.shape
        return [(a, broadcast_rows(broadcast_cols(g, c), r))]
    if op == "row_norm":
        x = node.parents[0]
        dead = node.value == 0.0
        # d||x_i||/dx_i = x_i / ||x_i||; zero rows get gradient 0 by masking.
        if dead.any():
            denom = add(node, node.tape.leaf(dead.astype(np.float64)))
            gx = mul(broadcast_cols(div(g, denom), x.value.shape[1]), x)
            live = np.broadcast_to(~dead, x.value.shape).astype(np.float64)
            gx = mul(gx, node.tape.leaf(live))
        else:
            gx = mul(broadcast_cols(div(g, node), x.value.shape[1]), x)
        return [(x, gx)]
    raise AssertionError(f"no vjp for op {op!r}")


def grad(root: Node, wrt: list[Node]) -> list[Node]:
    """Reverse-mode gradients of a scalar ``root`` with respect to ``wrt``.

    Returns gradient nodes on the same tape, so results can be differentiated
    again. Nodes unreachable from ``root`` get an exact zero gradient. Each
    tape node is visited at most once; parents always carry smaller ids than
    their consumers, so a single descending id sweep suffices. Subgraphs that
    no requested node feeds into are skipped entirely.
    """
    if root.value.shape != (1, 1):
        raise ValueError(f"grad root must be scalar, got shape {root.value.shape}")
    tape = root.tape
    nodes = tape.nodes
    wrt_ids = {n.nid for n in wrt}
    # dep[i] is true when node i is a requested node or consumes one
    # (transitively); cotangents only matter on dep nodes.
    dep = bytearray(root.nid + 1)
    for nid in wrt_ids:
        if nid <= root.nid:
            dep[nid] = 1
    for nid in range(root.nid + 1):
        if dep[nid]:
            continue
        for p in nodes[nid].parents:
            if dep[p.nid]:
                dep[nid] = 1
                break
    collected: dict[int, Node] = {}
    if dep[root.nid]:
        needed = lambda n: bool(dep[n.nid])  # noqa: E731
        pending: dict[int, Node] = {root.nid: tape.leaf(np.ones((1, 1)))}
        for nid in range(root.nid, -1, -1):
            g = pending.pop(nid, None)
            if g is None:
                continue
            node = nodes[nid]
            if nid in wrt_ids:
                collected[nid] = g
            if node.op == "leaf":
                continue
            for parent, pg in _vjp(node, g, needed):
                prev = pending.get(parent.nid)
                pending[parent.nid] = pg if prev is None else add(prev, pg)
    out = []
    for n in wrt:
        got = collected.get(n.nid)
        out.append(got if got is not None else tape.leaf(np.zeros_like(n.value)))
    return out


# ---------------------------------------------------------------------------
# MLP construction and the gradient operations built on the tape.
# ---------------------------------------------------------------------------

@dataclass
class MlpParams:
    """Feedforward net: ReLU hidden layers, linear output.

    ``weights[i]`` has shape (out_i, in_i) and ``biases[i]`` shape (out_i,);
    consecutive layer dimensions must chain.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be nonempty and aligned")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ValueError(f"layer {i}: bad shapes {w.shape}, {b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i}: input dim {w.shape[1]} does not chain with "
                    f"previous output dim {self.weights[i - 1].shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def mlp(dims: list[int], rng: np.random.Generator) -> MlpParams:
    """He-normal initialized MLP with the given layer dimensions."""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


@dataclass
class BoundMlp:
    """Network parameters entered on a tape as leaf nodes."""

    layers: list[tuple[Node, Node]] = field(default_factory=list)

    def __post_init__(self):
        self._wt = [transpose(wn) for wn, _ in self.layers]
        self.params: list[Node] = [n for pair in self.layers for n in pair]

    @property
    def weight_nodes(self) -> list[Node]:
        return [wn for wn, _ in self.layers]

    def forward(self, x: Node) -> Node:
        h = x
        last = len(self.layers) - 1
        for i, (_, bn) in enumerate(self.layers):
            h = add_bias(matmul(h, self._wt[i]), bn)
            if i < last:
                h = relu(h)
        return h


def bind(tape: Tape, net: MlpParams) -> BoundMlp:
    return BoundMlp([(tape.leaf(w), tape.leaf(b)) for w, b in zip(net.weights, net.biases)])


def forward(net: MlpParams, x: np.ndarray) -> np.ndarray:
    """Plain numpy forward pass; bit-identical to the tape evaluation."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"input shape {x.shape} incompatible with in_dim {net.in_dim}")
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b.reshape(1, -1)
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def param_gradients(loss: Node, bound: BoundMlp) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of a scalar loss node in MlpParams layout [(dW, db), ...]."""
    gs = grad(loss, bound.params)
    out = []
    for i in range(len(bound.layers)):
        out.append((gs[2 * i].value, gs[2 * i + 1].value.reshape(-1)))
    return out


def input_gradient(net: MlpParams, x: np.ndarray) -> np.ndarray:
    """Per-row gradient of a scalar-output critic with respect to its input."""
    if net.out_dim != 1:
        raise ValueError(f"input_gradient needs a scalar-output net, out_dim={net.out_dim}")
    tape = Tape()
    xn = tape.leaf(np.asarray(x, dtype=np.float64))
    bnet = bind(tape, net)
    f = bnet.forward(xn)
    (gx,) = grad(sum_all(f), [xn])
    return gx.value


def gradient_penalty_node(tape: Tape, critic: BoundMlp, x_hat: Node, one_sided: bool) -> Node:
    """Mean over rows of (||grad_x f(x_hat)|| - 1)^2, built on the tape.

    With ``one_sided`` the deviation is clamped at zero from below, so only
    gradient norms above 1 are penalized. Rows whose input gradient is
    exactly zero contribute value (two-sided case) but zero gradient; they
    are counted in ``tape.degenerate_rows``.
    """
    f = critic.forward(x_hat)
    if f.value.shape[1] != 1:
        raise ValueError("gradient penalty needs a scalar-output critic")
    (gx,) = grad(sum_all(f), [x_hat])
    norms = row_norm(gx)
    tape.degenerate_rows += int((norms.value == 0.0).sum())
    r = sub(norms, tape.leaf(np.ones_like(norms.value)))
    if one_sided:
        r = maxc(r, 0.0)
    return mean_all(square(r))


@dataclass(frozen=True)
class PenaltyGradients:
    value: float
    grads: list[tuple[np.ndarray, np.ndarray]]
    degenerate_rows: int


def penalty_param_gradients(net: MlpParams, x_hat: np.ndarray, one_sided: bool) -> PenaltyGradients:
    """Parameter gradients of the gradient penalty (second-order backprop)."""
    tape = Tape()
    xh = tape.leaf(np.asarray(x_hat, dtype=np.float64))
    bnet = bind(tape, net)
    pen = gradient_penalty_node(tape, bnet, xh, one_sided)
    grads = param_gradients(pen, bnet)
    return PenaltyGradients(float(pen.value[0, 0]), grads, tape.degenerate_rows)
