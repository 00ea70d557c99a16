"""Minimal differentiable numerics: float64 arrays, a reverse-mode tape,
feed-forward layers, and Adam.

Arrays are numpy throughout; the tape records enough to replay exact
gradients for every loss in the package. Single-writer ParamStore; read-only
parameter snapshots are safe to share.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AllMasked,
    ParseError,
    ShapeMismatch,
    TapeConsumed,
    UnknownParameter,
    VersionMismatch,
)

NEG_INF = -np.inf


class Tape:
    """Recorded forward pass; nodes are in topological (creation) order."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.output: Var | None = None
        self.consumed = False


class Var:
    """One recorded value with links back to its inputs."""

    __slots__ = ("value", "parents", "grad", "param_name")

    def __init__(self, tape: Tape | None, value, parents=(), param_name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents  # tuple of (Var, vjp(grad) -> grad_wrt_parent)
        self.grad = None
        self.param_name = param_name
        if tape is not None:
            tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def constant(tape: Tape, value) -> Var:
    return Var(tape, value)


def add(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(tape, a.value + b.value)
    out.parents = (
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    )
    return out


def sub(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(tape, a.value - b.value)
    out.parents = (
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    )
    return out


def mul(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(tape, a.value * b.value)
    out.parents = (
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    )
    return out


def scale(tape: Tape, a: Var, k: float) -> Var:
    out = Var(tape, a.value * k)
    out.parents = ((a, lambda g: g * k),)
    return out


def neg(tape: Tape, a: Var) -> Var:
    return scale(tape, a, -1.0)


def matmul(tape: Tape, a: Var, b: Var) -> Var:
    if a.value.shape[-1] != b.value.shape[0]:
        raise ShapeMismatch(f"matmul {a.value.shape} x {b.value.shape}")
    out = Var(tape, a.value @ b.value)
    out.parents = (
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    )
    return out


def relu(tape: Tape, a: Var) -> Var:
    mask = a.value > 0
    out = Var(tape, np.where(mask, a.value, 0.0))
    out.parents = ((a, lambda g: g * mask),)
    return out


def exp(tape: Tape, a: Var) -> Var:
    val = np.exp(a.value)
    out = Var(tape, val)
    out.parents = ((a, lambda g: g * val),)
    return out


def log(tape: Tape, a: Var) -> Var:
    out = Var(tape, np.log(a.value))
    out.parents = ((a, lambda g: g / a.value),)
    return out


def square(tape: Tape, a: Var) -> Var:
    out = Var(tape, a.value * a.value)
    out.parents = ((a, lambda g: g * 2.0 * a.value),)
    return out


def vsum(tape: Tape, a: Var) -> Var:
    out = Var(tape, np.sum(a.value))
    out.parents = ((a, lambda g: np.broadcast_to(g, a.value.shape).copy()),)
    return out


def mean(tape: Tape, a: Var) -> Var:
    n = a.value.size
    out = Var(tape, np.sum(a.value) / n)
    out.parents = ((a, lambda g: np.broadcast_to(g / n, a.value.shape).copy()),)
    return out


def transpose(tape: Tape, a: Var) -> Var:
    out = Var(tape, a.value.T)
    out.parents = ((a, lambda g: g.T),)
    return out


def reshape(tape: Tape, a: Var, shape) -> Var:
    old = a.value.shape
    out = Var(tape, a.value.reshape(shape))
    out.parents = ((a, lambda g: g.reshape(old)),)
    return out


def concat(tape: Tape, parts: list[Var], axis: int = 0) -> Var:
    out = Var(tape, np.concatenate([p.value for p in parts], axis=axis))
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for i, p in enumerate(parts):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g, lo=lo, hi=hi):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        parents.append((p, vjp))
    out.parents = tuple(parents)
    return out


def gather_rows(tape: Tape, a: Var, idx: np.ndarray) -> Var:
    idx = np.asarray(idx, dtype=np.intp)
    out = Var(tape, a.value[idx])

    def vjp(g):
        acc = np.zeros_like(a.value)
        np.add.at(acc, idx, g)
        return acc

    out.parents = ((a, vjp),)
    return out


def take(tape: Tape, a: Var, idx: np.ndarray) -> Var:
    """Pick flat elements of a 1-D value (gather for vectors)."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Var(tape, a.value[idx])

    def vjp(g):
        acc = np.zeros_like(a.value)
        np.add.at(acc, idx, g)
        return acc

    out.parents = ((a, vjp),)
    return out


def segment_sum(tape: Tape, a: Var, seg_ids: np.ndarray, n_seg: int) -> Var:
    seg_ids = np.asarray(seg_ids, dtype=np.intp)
    val = np.zeros(n_seg, dtype=np.float64)
    np.add.at(val, seg_ids, a.value)
    out = Var(tape, val)
    out.parents = ((a, lambda g: g[seg_ids]),)
    return out


def segment_logsumexp(tape: Tape, a: Var, seg_ids: np.ndarray, n_seg: int) -> Var:
    """Numerically stable log-sum-exp within segments; -inf entries drop out."""
    seg_ids = np.asarray(seg_ids, dtype=np.intp)
    high = np.full(n_seg, NEG_INF)
    np.maximum.at(high, seg_ids, a.value)
    if np.any(np.isneginf(high)):
        raise AllMasked("a segment has no finite entries")
    shifted = np.exp(a.value - high[seg_ids])
    shifted[np.isneginf(a.value)] = 0.0
    total = np.zeros(n_seg, dtype=np.float64)
    np.add.at(total, seg_ids, shifted)
    val = high + np.log(total)
    out = Var(tape, val)
    softmax = shifted / total[seg_ids]

    def vjp(g):
        return g[seg_ids] * softmax

    out.parents = ((a, vjp),)
    return out


def log_softmax_op(tape: Tape, logits: Var) -> Var:
    """Row-wise log-softmax; -inf entries are masked actions."""
    val = log_softmax(logits.value)
    out = Var(tape, val)
    probs = np.exp(val)

    def vjp(g):
        return g - probs * g.sum(axis=-1, keepdims=True)

    out.parents = ((logits, vjp),)
    return out


def l2_normalize_rows(tape: Tape, a: Var) -> Var:
    """Row-wise unit normalization; exactly-zero rows stay zero."""
    norms = np.linalg.norm(a.value, axis=-1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    y = a.value / safe
    out = Var(tape, y)

    def vjp(g):
        return (g - y * np.sum(g * y, axis=-1, keepdims=True)) / safe

    out.parents = ((a, vjp),)
    return out


def bce_with_logits(tape: Tape, logits: Var, targets: np.ndarray) -> Var:
    """Elementwise stable binary cross-entropy against constant 0/1 targets."""
    z = logits.value
    val = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    out = Var(tape, val)
    sig = 1.0 / (1.0 + np.exp(-z))
    out.parents = ((logits, lambda g: g * (sig - targets)),)
    return out


def backward(tape: Tape, output_gradient, output: Var | None = None) -> dict[str, np.ndarray]:
    """Reverse pass; returns gradients keyed by parameter name."""
    if tape.consumed:
        raise TapeConsumed("tape already used for a backward pass")
    tape.consumed = True
    out = output if output is not None else (tape.output or tape.nodes[-1])
    out.grad = np.broadcast_to(np.asarray(output_gradient, dtype=np.float64), out.value.shape).copy()
    grads: dict[str, np.ndarray] = {}
    for node in reversed(tape.nodes):
        if node.grad is None:
            continue
        if node.param_name is not None:
            acc = grads.get(node.param_name)
            grads[node.param_name] = node.grad if acc is None else acc + node.grad
        for parent, vjp in node.parents:
            contribution = vjp(node.grad)
            if parent.grad is None:
                parent.grad = np.array(contribution, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + contribution
    return grads


# -- parameters ----------------------------------------------------------------

class ParamStore:
    """Ordered name -> float64 array map with per-parameter Adam moments."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise UnknownParameter(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def var(self, tape: Tape, name: str) -> Var:
        if name not in self.params:
            raise UnknownParameter(name)
        return Var(tape, self.params[name], param_name=name)

    def init_mlp(self, prefix: str, dims: list[int], rng: np.random.Generator) -> None:
        """Xavier-uniform weights, zero biases: W{i} of shape (in, out)."""
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.add(f"{prefix}.W{i}", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.add(f"{prefix}.b{i}", np.zeros(fan_out))

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, arr in self.params.items():
            dup.add(name, arr)
        dup.step_count = self.step_count
        for name in self.params:
            dup._m[name] = self._m[name].copy()
            dup._v[name] = self._v[name].copy()
        return dup


def mlp_layers(prefix: str, dims: list[int]) -> int:
    return len(dims) - 1


def mlp_apply_var(tape: Tape, store: ParamStore, prefix: str, dims: list[int], x: Var,
                  final_relu: bool = False) -> Var:
    """Affine/ReLU stack on the tape; x is (batch, dims[0])."""
    h = x
    n_layers = len(dims) - 1
    for i in range(n_layers):
        w = store.var(tape, f"{prefix}.W{i}")
        b = store.var(tape, f"{prefix}.b{i}")
        h = add(tape, matmul(tape, h, w), b)
        if i < n_layers - 1 or final_relu:
            h = relu(tape, h)
    return h


def mlp_apply(store: ParamStore, prefix: str, dims: list[int], x: np.ndarray,
              final_relu: bool = False) -> np.ndarray:
    """Tape-free forward pass (inference path); matches mlp_apply_var exactly."""
    h = np.asarray(x, dtype=np.float64)
    n_layers = len(dims) - 1
    for i in range(n_layers):
        h = h @ store.params[f"{prefix}.W{i}"] + store.params[f"{prefix}.b{i}"]
        if i < n_layers - 1 or final_relu:
            h = np.maximum(h, 0.0)
    return h


def mlp_forward(store: ParamStore, prefix: str, dims: list[int], x) -> tuple[np.ndarray, Tape]:
    """Single-vector forward returning (output, tape ready for backward)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != dims[0]:
        raise ShapeMismatch(f"input length {x.shape} does not match layer spec {dims}")
    tape = Tape()
    xv = constant(tape, x.reshape(1, -1))
    out = mlp_apply_var(tape, store, prefix, dims, xv)
    tape.output = out
    return out.value[0].copy(), tape


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float = 1e-3,
              lr_overrides: dict[str, float] | None = None,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update; `lr_overrides` maps name prefixes to learning rates."""
    for name in grads:
        if name not in store.params:
            raise UnknownParameter(name)
    store.step_count += 1
    t = store.step_count
    for name, g in grads.items():
        step_lr = lr
        if lr_overrides:
            best = -1
            for prefix, rate in lr_overrides.items():
                if name.startswith(prefix) and len(prefix) > best:
                    best = len(prefix)
                    step_lr = rate
        g = np.asarray(g, dtype=np.float64).reshape(store.params[name].shape)
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        store.params[name] -= step_lr * m_hat / (np.sqrt(v_hat) + eps)


# -- categorical utilities -------------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Stable log-softmax along the last axis; -inf marks masked entries."""
    logits = np.asarray(logits, dtype=np.float64)
    high = np.max(logits, axis=-1, keepdims=True)
    if np.any(np.isneginf(high)):
        raise AllMasked("all entries masked")
    shifted = logits - high
    expd = np.exp(shifted)
    expd[np.isneginf(shifted)] = 0.0
    return shifted - np.log(np.sum(expd, axis=-1, keepdims=True))


def categorical_sample(log_probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from log-probabilities; masked (-inf) entries never drawn."""
    lp = np.asarray(log_probs, dtype=np.float64)
    if np.all(np.isneginf(lp)):
        raise AllMasked("cannot sample: all entries masked")
    probs = np.exp(lp - np.max(lp[~np.isneginf(lp)]))
    probs[np.isneginf(lp)] = 0.0
    cum = np.cumsum(probs)
    draw = rng.random() * cum[-1]
    return int(np.searchsorted(cum, draw, side="right").clip(0, len(lp) - 1))


# -- checkpoints -----------------------------------------------------------------

_CKPT_HEADER = "pgfn-ckpt v1"


def save_checkpoint(path, kind: str, store: ParamStore, meta: dict | None = None) -> None:
    """Deterministic bytes: text manifest, 'end' line, little-endian f8 payload."""
    manifest = io.StringIO()
    manifest.write(_CKPT_HEADER + "\n")
    manifest.write(f"kind {kind}\n")
    manifest.write("meta " + json.dumps(meta or {}, sort_keys=True) + "\n")
    payload = io.BytesIO()
    offset = 0
    for name, arr in store.params.items():
        shape = ",".join(str(d) for d in arr.shape) or "0"
        manifest.write(f"param {name} {shape} {offset}\n")
        raw = arr.astype("<f8").tobytes()
        payload.write(raw)
        offset += len(raw)
    manifest.write("end\n")
    with open(path, "wb") as fh:
        fh.write(manifest.getvalue().encode("ascii"))
        fh.write(payload.getvalue())


def load_checkpoint(path, expected_kind: str | None = None) -> tuple[str, dict, ParamStore]:
    with open(path, "rb") as fh:
        blob = fh.read()
    lines = []
    pos = 0
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise ParseError(f"{path}: truncated checkpoint manifest")
        line = blob[pos:nl].decode("ascii")
        pos = nl + 1
        if line == "end":
            break
        lines.append(line)
    if not lines or lines[0] != _CKPT_HEADER:
        raise VersionMismatch(f"{path}: expected '{_CKPT_HEADER}' header")
    if not lines[1].startswith("kind "):
        raise ParseError(f"{path}: missing checkpoint kind")
    kind = lines[1][len("kind "):]
    if expected_kind is not None and kind != expected_kind:
        raise VersionMismatch(f"{path}: checkpoint kind {kind!r}, expected {expected_kind!r}")
    meta = json.loads(lines[2][len("meta "):]) if lines[2].startswith("meta ") else {}
    store = ParamStore()
    payload = blob[pos:]
    for line in lines[3:]:
        if not line.startswith("param "):
            raise ParseError(f"{path}: bad manifest line {line!r}")
        _, name, shape_text, offset_text = line.split(" ")
        shape = tuple(int(d) for d in shape_text.split(",")) if shape_text != "0" else ()
        count = int(np.prod(shape)) if shape else 1
        offset = int(offset_text)
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        store.add(name, arr)
    return kind, meta, store
