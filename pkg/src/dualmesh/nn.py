"""Layers with hand-derived backward passes, cross-entropy and Adam.

Tensors are plain float64 numpy arrays with rows = nodes and cols =
channels. Weight matrices are stored (out, in), so a layer computes
``x @ W.T``. The functional forward routines return ``(output, cache)``;
the matching backward routine consumes the cache.

Neighbor tables use ``-1`` for PAD slots. A PAD neighbor reads as a zero
vector and its gradient is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (IsolatedVertexError, LabelOutOfRangeError, NonFiniteError,
                     ShapeMismatchError, StateMissingError)
from .mesh import Mesh


def check_finite(name: str, a: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name}: non-finite values")
    return a


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out)) if fan_in + fan_out else 0.0
    return rng.uniform(-s, s, size=(fan_out, fan_in))


# ---------------------------------------------------------------- gathering

def gather_neighbors(x: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """(N, 3, C) neighbor features with zeros in PAD slots."""
    pad = neighbors < 0
    out = x[np.where(pad, 0, neighbors)]
    if np.any(pad):
        out[pad] = 0.0
    return out


def scatter_neighbors(dxn: np.ndarray, neighbors: np.ndarray, n_rows: int) -> np.ndarray:
    """Adjoint of ``gather_neighbors``: sum slot gradients back onto rows."""
    real = neighbors >= 0
    dx = np.zeros((n_rows, dxn.shape[2]))
    np.add.at(dx, neighbors[real], dxn[real])
    return dx


def _conv_inputs(x, neighbors, slot):
    if x.ndim != 2:
        raise ShapeMismatchError(f"features must be 2-D, got shape {x.shape}")
    if neighbors.shape != (len(x), 3):
        raise ShapeMismatchError(
            f"neighbor table {neighbors.shape} does not match {len(x)} nodes")
    xn = gather_neighbors(x, neighbors)
    x0 = x
    if slot is not None:
        if slot.shape[:2] != (len(x), 3):
            raise ShapeMismatchError(f"slot features {slot.shape} do not match {len(x)} nodes")
        # slot channels contribute only to neighbors; the center reads 0 there
        xn = np.concatenate([xn, slot], axis=2)
        x0 = np.hstack([x, np.zeros((len(x), slot.shape[2]))])
    return x0, xn


def _check_weights(c_in, u, w, bias):
    c_out = u.shape[0]
    if u.shape != (c_out, c_in) or w.shape != (c_out, 3 * c_in):
        raise ShapeMismatchError(
            f"weights U{u.shape}, W{w.shape} do not fit {c_in} input channels")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeMismatchError(f"bias {bias.shape} does not fit {c_out} output channels")


# --------------------------------------------------------------- DualConvMax

def dualconv_max_forward(x, neighbors, u, w, bias=None, slot=None):
    """Center term plus the coordinate-wise max over the 3 cyclic neighbor orders.

    Rotation r feeds the concatenation (x[(0+r)%3], x[(1+r)%3], x[(2+r)%3])
    of slot features to W. The winning rotation of every output coordinate
    is kept for the backward pass; ties go to the lowest rotation.
    """
    x0, xn = _conv_inputs(x, neighbors, slot)
    n, _, c_in = xn.shape
    _check_weights(c_in, u, w, bias)
    terms = np.stack([np.roll(xn, -r, axis=1).reshape(n, 3 * c_in) @ w.T for r in range(3)])
    winner = np.argmax(terms, axis=0)
    y = x0 @ u.T + np.take_along_axis(terms, winner[None], axis=0)[0]
    if bias is not None:
        y += bias
    cache = {"x0": x0, "xn": xn, "winner": winner, "u": u, "w": w,
             "neighbors": neighbors, "n_feat": x.shape[1], "bias": bias is not None}
    return y, cache


def dualconv_max_backward(dy, cache):
    """Returns ``(dX, dU, dW, dbias)``; gradients flow only through winning rotations."""
    if cache is None:
        raise StateMissingError("dualconv_max_backward called before forward")
    x0, xn, winner, u, w = cache["x0"], cache["xn"], cache["winner"], cache["u"], cache["w"]
    n, _, c_in = xn.shape
    if dy.shape != (n, u.shape[0]):
        raise ShapeMismatchError(f"upstream gradient {dy.shape}, expected {(n, u.shape[0])}")
    du = dy.T @ x0
    dx0 = dy @ u
    dw = np.zeros_like(w)
    dxn = np.zeros_like(xn)
    for r in range(3):
        g = np.where(winner == r, dy, 0.0)
        dw += g.T @ np.roll(xn, -r, axis=1).reshape(n, 3 * c_in)
        dxn += np.roll((g @ w).reshape(n, 3, c_in), r, axis=1)
    k = cache["n_feat"]
    dx = dx0[:, :k] + scatter_neighbors(dxn[:, :, :k], cache["neighbors"], n)
    db = dy.sum(axis=0) if cache["bias"] else None
    return dx, du, dw, db


# --------------------------------------------------------------- DualConvInv

def symmetric_neighbor_features(x1, x2, x3):
    """Order-invariant neighborhood descriptor of width 3C.

    (sum, forward-difference positive parts, backward-difference positive
    parts); rotating the inputs leaves it unchanged, reversing their order
    swaps the last two blocks.
    """
    x1, x2, x3 = (np.asarray(a, dtype=np.float64) for a in (x1, x2, x3))
    relu = lambda a: np.maximum(a, 0.0)  # noqa: E731
    return np.concatenate([
        x1 + x2 + x3,
        relu(x1 - x2) + relu(x2 - x3) + relu(x3 - x1),
        relu(x2 - x1) + relu(x3 - x2) + relu(x1 - x3),
    ], axis=-1)


# (a, b) slot pairs whose difference a - b enters the second and third blocks
_FORWARD_PAIRS = ((0, 1), (1, 2), (2, 0))
_BACKWARD_PAIRS = ((1, 0), (2, 1), (0, 2))


def dualconv_inv_forward(x, neighbors, u, w, bias=None, slot=None):
    x0, xn = _conv_inputs(x, neighbors, slot)
    n, _, c_in = xn.shape
    _check_weights(c_in, u, w, bias)
    f = symmetric_neighbor_features(xn[:, 0], xn[:, 1], xn[:, 2])
    y = x0 @ u.T + f @ w.T
    if bias is not None:
        y += bias
    cache = {"x0": x0, "xn": xn, "f": f, "u": u, "w": w,
             "neighbors": neighbors, "n_feat": x.shape[1], "bias": bias is not None}
    return y, cache


def dualconv_inv_backward(dy, cache):
    """Returns ``(dX, dU, dW, dbias)``; the positive part has subgradient 0 at 0."""
    if cache is None:
        raise StateMissingError("dualconv_inv_backward called before forward")
    x0, xn, f, u, w = cache["x0"], cache["xn"], cache["f"], cache["u"], cache["w"]
    n, _, c_in = xn.shape
    if dy.shape != (n, u.shape[0]):
        raise ShapeMismatchError(f"upstream gradient {dy.shape}, expected {(n, u.shape[0])}")
    du = dy.T @ x0
    dw = dy.T @ f
    df = dy @ w
    d_sum, d_fwd, d_bwd = df[:, :c_in], df[:, c_in:2 * c_in], df[:, 2 * c_in:]
    dxn = np.repeat(d_sum[:, None, :], 3, axis=1)
    for pairs, g in ((_FORWARD_PAIRS, d_fwd), (_BACKWARD_PAIRS, d_bwd)):
        for a, b in pairs:
            active = np.where(xn[:, a] - xn[:, b] > 0.0, g, 0.0)
            dxn[:, a] += active
            dxn[:, b] -= active
    k = cache["n_feat"]
    dx = (dy @ u)[:, :k] + scatter_neighbors(dxn[:, :, :k], cache["neighbors"], n)
    db = dy.sum(axis=0) if cache["bias"] else None
    return dx, du, dw, db


# ---------------------------------------------------------------- Dual2Primal

@dataclass(frozen=True, eq=False)
class Dual2PrimalOp:
    """Vertex-face incidence ``A`` and degrees ``D``; applies ``D^-1 A``."""

    incidence: sp.csr_matrix
    degrees: np.ndarray
    averaging: sp.csr_matrix

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> Dual2PrimalOp:
        nv, nf = mesh.n_vertices, mesh.n_faces
        rows = mesh.faces.reshape(-1)
        cols = np.repeat(np.arange(nf), 3)
        a = sp.csr_matrix((np.ones(3 * nf), (rows, cols)), shape=(nv, nf))
        deg = np.asarray(a.sum(axis=1)).reshape(-1)
        isolated = np.flatnonzero(deg == 0)
        if len(isolated):
            raise IsolatedVertexError(
                f"{len(isolated)} vertices belong to no face, e.g. {isolated[:10].tolist()}")
        avg = sp.diags(1.0 / deg) @ a
        return cls(a, deg, sp.csr_matrix(avg))

    @property
    def shape(self):
        return self.incidence.shape


def dual2primal(f_dual: np.ndarray, op: Dual2PrimalOp) -> np.ndarray:
    if f_dual.shape[0] != op.shape[1]:
        raise ShapeMismatchError(f"{f_dual.shape[0]} face rows, operator expects {op.shape[1]}")
    return np.asarray(op.averaging @ f_dual)


def dual2primal_backward(d_primal: np.ndarray, op: Dual2PrimalOp) -> np.ndarray:
    if d_primal.shape[0] != op.shape[0]:
        raise ShapeMismatchError(f"{d_primal.shape[0]} vertex rows, operator expects {op.shape[0]}")
    return np.asarray(op.averaging.T @ d_primal)


def neighbor_mean_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Row-normalized vertex adjacency (mean over the one-ring)."""
    e = mesh.edge_index.edges
    nv = mesh.n_vertices
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, nv))
    deg = np.asarray(adj.sum(axis=1)).reshape(-1)
    return sp.csr_matrix(sp.diags(1.0 / np.maximum(deg, 1.0)) @ adj)


# ---------------------------------------------------- elementwise and dense

def linear_forward(x, w, b=None):
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(f"input {x.shape} does not fit weight {w.shape}")
    y = x @ w.T
    if b is not None:
        y += b
    return y, (x, w, b is not None)


def linear_backward(dy, cache):
    if cache is None:
        raise StateMissingError("linear_backward called before forward")
    x, w, has_bias = cache
    return dy @ w, dy.T @ x, (dy.sum(axis=0) if has_bias else None)


def elu_forward(x, alpha=1.0):
    y = np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))
    return y, (x, y, alpha)


def elu_backward(dy, cache):
    if cache is None:
        raise StateMissingError("elu_backward called before forward")
    x, y, alpha = cache
    return dy * np.where(x > 0, 1.0, y + alpha)


def dropout_forward(x, p, rng, train):
    if not train or p == 0.0:
        return x, None
    keep = rng.random(x.shape) >= p
    scale = 1.0 / (1.0 - p)
    return x * keep * scale, keep * scale


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over labeled rows (label < 0 means unlabeled).

    Returns ``(loss, dlogits)``.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatchError(f"{labels.shape} labels for {n} rows")
    if np.any(labels >= k):
        raise LabelOutOfRangeError(f"label {int(labels.max())} out of range for {k} classes")
    rows = np.flatnonzero(labels >= 0)
    dlogits = np.zeros_like(logits)
    if len(rows) == 0:
        return 0.0, dlogits
    z = logits[rows] - logits[rows].max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(len(rows)), labels[rows]]
    loss = float(np.mean(log_norm - picked))
    p = np.exp(z - log_norm[:, None])
    p[np.arange(len(rows)), labels[rows]] -= 1.0
    dlogits[rows] = p / len(rows)
    return loss, dlogits


# --------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# -------------------------------------------------------------------- layers

class Layer:
    """Stateful wrapper: ``forward`` caches, ``backward`` fills ``grads``."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def zero_grad(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def describe(self) -> str:
        return self.kind

    def _accumulate(self, **grads):
        for k, g in grads.items():
            if g is None:
                continue
            if k in self.grads:
                self.grads[k] += g
            else:
                self.grads[k] = g.copy()


class Linear(Layer):
    kind = "linear"

    def __init__(self, c_in, c_out, rng, bias=True):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.params["weight"] = glorot_uniform(rng, c_out, c_in)
        if bias:
            self.params["bias"] = np.zeros(c_out)

    def describe(self):
        return f"linear({self.c_in},{self.c_out})"

    def forward(self, x, ctx=None, train=False):
        y, self._cache = linear_forward(x, self.params["weight"], self.params.get("bias"))
        return y

    def backward(self, dy):
        dx, dw, db = linear_backward(dy, self._cache)
        self._accumulate(weight=dw, bias=db)
        return dx


class ELU(Layer):
    kind = "elu"

    def forward(self, x, ctx=None, train=False):
        y, self._cache = elu_forward(x)
        return y

    def backward(self, dy):
        return elu_backward(dy, self._cache)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p, rng):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def describe(self):
        return f"dropout({self.p})"

    def forward(self, x, ctx=None, train=False):
        y, self._cache = dropout_forward(x, self.p, self.rng, train)
        return y

    def backward(self, dy):
        return dropout_backward(dy, self._cache)


class DualConv(Layer):
    """DualConvMax (``op="max"``) or DualConvInv (``op="inv"``) on face features.

    When ``slot_channels`` > 0 the layer also consumes per-slot inputs from
    the context (dihedral angles), appended to every neighbor with the
    center reading zero in those channels.
    """

    kind = "dualconv"

    def __init__(self, c_in, c_out, rng, op="max", bias=True, slot_channels=0):
        super().__init__()
        if op not in ("max", "inv"):
            raise ValueError(f"unknown dual convolution {op!r}")
        self.op = op
        self.c_in, self.c_out, self.slot_channels = c_in, c_out, slot_channels
        width = c_in + slot_channels
        self.params["U"] = glorot_uniform(rng, c_out, width)
        self.params["W"] = glorot_uniform(rng, c_out, 3 * width)
        if bias:
            self.params["bias"] = np.zeros(c_out)

    def describe(self):
        return f"dualconv_{self.op}({self.c_in}+{self.slot_channels},{self.c_out})"

    def forward(self, x, ctx, train=False):
        fwd = dualconv_max_forward if self.op == "max" else dualconv_inv_forward
        slot = ctx.slot if self.slot_channels else None
        y, self._cache = fwd(x, ctx.neighbors, self.params["U"], self.params["W"],
                             self.params.get("bias"), slot)
        return y

    def backward(self, dy):
        bwd = dualconv_max_backward if self.op == "max" else dualconv_inv_backward
        dx, du, dw, db = bwd(dy, self._cache)
        self._accumulate(U=du, W=dw, bias=db)
        return dx


class Dual2Primal(Layer):
    kind = "dual2primal"

    def forward(self, x, ctx, train=False):
        self._cache = ctx.dual2primal
        return dual2primal(x, ctx.dual2primal)

    def backward(self, dy):
        if self._cache is None:
            raise StateMissingError("Dual2Primal.backward called before forward")
        return dual2primal_backward(dy, self._cache)


class NeighborMeanConv(Layer):
    """Primal-vertex control: ``U x_i + W mean_{j ~ i} x_j + b``."""

    kind = "meanconv"

    def __init__(self, c_in, c_out, rng, bias=True):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.params["U"] = glorot_uniform(rng, c_out, c_in)
        self.params["W"] = glorot_uniform(rng, c_out, c_in)
        if bias:
            self.params["bias"] = np.zeros(c_out)

    def describe(self):
        return f"meanconv({self.c_in},{self.c_out})"

    def forward(self, x, ctx, train=False):
        m = ctx.vertex_mean
        xm = np.asarray(m @ x)
        y = x @ self.params["U"].T + xm @ self.params["W"].T
        if "bias" in self.params:
            y += self.params["bias"]
        self._cache = (x, xm, m)
        return y

    def backward(self, dy):
        if self._cache is None:
            raise StateMissingError("NeighborMeanConv.backward called before forward")
        x, xm, m = self._cache
        self._accumulate(U=dy.T @ x, W=dy.T @ xm,
                         bias=dy.sum(axis=0) if "bias" in self.params else None)
        return dy @ self.params["U"] + np.asarray(m.T @ (dy @ self.params["W"]))
