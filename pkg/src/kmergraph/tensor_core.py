"""Minimal numeric kernel: a reverse-mode tape over float64 numpy arrays.

Only the primitives the encoders, losses and distance head need are provided,
each with a hand-written backward pass. Sparse adjacencies are scipy CSR
matrices and are always treated as constants.

Typical use::

    tape = Tape()
    w = tape.var(w0)
    loss = mean(square(matmul(x, w)))
    tape.backward(loss)
    w.grad
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

BALL_EPS = 1e-5


class NumericError(FloatingPointError):
    """Non-finite values encountered during optimisation."""


class Var:
    __slots__ = ("value", "grad", "tape", "name")

    def __init__(self, value, tape: "Tape", name: str | None = None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name})"


class Tape:
    """Records primitive applications so gradients can be replayed in reverse."""

    def __init__(self):
        self.ops: list[tuple[Var, Callable]] = []

    def var(self, value, name: str | None = None) -> Var:
        return Var(np.asarray(value, dtype=np.float64), self, name)

    def record(self, out: Var, backward: Callable[[np.ndarray], None]) -> Var:
        self.ops.append((out, backward))
        return out

    def backward(self, loss: Var):
        if not self.ops:
            raise RuntimeError("backward called before any forward operation was recorded")
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for out, fn in reversed(self.ops):
            if out.grad is not None:
                fn(out.grad)


def _tape_of(*xs) -> Tape:
    tapes = {id(x.tape): x.tape for x in xs if isinstance(x, Var)}
    if len(tapes) != 1:
        raise ValueError("operands must belong to exactly one tape")
    return next(iter(tapes.values()))


def _val(x):
    return x.value if isinstance(x, Var) else x


def _acc(x, g):
    if isinstance(x, Var):
        if g.shape != x.value.shape:
            g = _unbroadcast(g, x.value.shape)
        x.grad = g if x.grad is None else x.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(ax, keepdims=True)
    return g


def _new(tape, value, backward):
    return tape.record(Var(value, tape), backward)


# -- elementwise / linear algebra -------------------------------------------

def add(a, b):
    tape = _tape_of(a, b)

    def bw(g):
        _acc(a, g)
        _acc(b, g)
    return _new(tape, _val(a) + _val(b), bw)


def sub(a, b):
    tape = _tape_of(a, b)

    def bw(g):
        _acc(a, g)
        _acc(b, -g)
    return _new(tape, _val(a) - _val(b), bw)


def mul(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)

    def bw(g):
        _acc(a, g * bv)
        _acc(b, g * av)
    return _new(tape, av * bv, bw)


def scale(a: Var, c: float):
    return _new(a.tape, a.value * c, lambda g: _acc(a, g * c))


def matmul(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch {av.shape} @ {bv.shape}")

    def bw(g):
        if isinstance(a, Var):
            _acc(a, g @ bv.T)
        if isinstance(b, Var):
            _acc(b, av.T @ g)
    return _new(tape, av @ bv, bw)


def spmm(adj: sp.spmatrix, x: Var, adj_t: sp.spmatrix | None = None):
    """Sparse (constant) times dense. Pass ``adj_t`` to reuse a precomputed transpose."""
    if adj.shape[1] != x.value.shape[0]:
        raise ValueError(f"spmm shape mismatch {adj.shape} @ {x.value.shape}")
    if adj_t is None:
        adj_t = adj.T.tocsr()
    return _new(x.tape, np.asarray(adj @ x.value), lambda g: _acc(x, np.asarray(adj_t @ g)))


def relu(x: Var):
    mask = x.value > 0
    return _new(x.tape, x.value * mask, lambda g: _acc(x, g * mask))


def identity(x: Var):
    return x


def sigmoid_np(x):
    """Piecewise sigmoid that never exponentiates a positive argument."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_sigmoid_np(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def sigmoid(x: Var):
    s = sigmoid_np(x.value)
    return _new(x.tape, s, lambda g: _acc(x, g * s * (1.0 - s)))


def log_sigmoid(x: Var):
    return _new(x.tape, log_sigmoid_np(x.value), lambda g: _acc(x, g * sigmoid_np(-x.value)))


def abs_(x: Var):
    return _new(x.tape, np.abs(x.value), lambda g: _acc(x, g * np.sign(x.value)))


def square(x: Var):
    return _new(x.tape, x.value ** 2, lambda g: _acc(x, 2.0 * g * x.value))


def sum_(x: Var):
    return _new(x.tape, np.asarray(x.value.sum()), lambda g: _acc(x, np.broadcast_to(g, x.value.shape).copy()))


def mean(x: Var):
    n = x.value.size
    return _new(x.tape, np.asarray(x.value.mean()),
                lambda g: _acc(x, np.broadcast_to(g / n, x.value.shape).copy()))


def gather(x: Var, idx):
    """Rows ``x[idx]``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(x.value)
        np.add.at(full, idx, g)
        _acc(x, full)
    return _new(x.tape, x.value[idx], bw)


def rowdot(a: Var, b: Var):
    """Row-wise inner products of two equally shaped matrices."""
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)

    def bw(g):
        _acc(a, g[:, None] * bv)
        _acc(b, g[:, None] * av)
    return _new(tape, (av * bv).sum(1), bw)


# -- hyperbolic primitives --------------------------------------------------

def project_to_ball_np(x, eps: float = BALL_EPS):
    x = np.asarray(x, dtype=np.float64)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    y = x / (1.0 + r)
    ny = r / (1.0 + r)
    cap = 1.0 - eps
    return np.where(ny > cap, y * (cap / np.maximum(ny, 1e-300)), y)


def project_to_ball(x: Var, eps: float = BALL_EPS):
    """Row-wise ``x / (1 + |x|)``, then clamped to norm ``<= 1 - eps``."""
    xv = x.value
    r = np.linalg.norm(xv, axis=1, keepdims=True)
    cap = 1.0 - eps
    clamped = (r / (1.0 + r)) > cap
    out = project_to_ball_np(xv, eps)

    def bw(g):
        xg = (xv * g).sum(1, keepdims=True)
        safe_r = np.where(r > 0, r, 1.0)
        free = g / (1.0 + r) - xv * xg / (safe_r * (1.0 + r) ** 2)
        free = np.where(r > 0, free, g)
        capped = cap * (g / safe_r - xv * xg / safe_r ** 3)
        _acc(x, np.where(clamped, capped, free))
    return _new(x.tape, out, bw)


def poincare_distance_np(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    s = ((u - v) ** 2).sum(-1)
    a = np.maximum(1.0 - (u * u).sum(-1), 1e-300)
    b = np.maximum(1.0 - (v * v).sum(-1), 1e-300)
    delta = 2.0 * s / (a * b)
    # arccosh(1 + delta) with the argument clamped to >= 1
    delta = np.maximum(delta, 0.0)
    return np.log1p(delta + np.sqrt(delta * (delta + 2.0)))


def poincare_distance(u: Var, v: Var):
    """Row-wise Poincare-ball distance between two batches of ball points."""
    tape = _tape_of(u, v)
    uv, vv = _val(u), _val(v)
    diff = uv - vv
    s = (diff ** 2).sum(1)
    a = np.maximum(1.0 - (uv * uv).sum(1), 1e-300)
    b = np.maximum(1.0 - (vv * vv).sum(1), 1e-300)
    delta = np.maximum(2.0 * s / (a * b), 0.0)
    out = np.log1p(delta + np.sqrt(delta * (delta + 2.0)))

    def bw(g):
        root = np.sqrt(delta * (delta + 2.0))
        dd = np.where(root > 0, g / np.where(root > 0, root, 1.0), 0.0)
        gu = 4.0 * diff / (a * b)[:, None] + (4.0 * s / (a * a * b))[:, None] * uv
        gv = -4.0 * diff / (a * b)[:, None] + (4.0 * s / (a * b * b))[:, None] * vv
        _acc(u, dd[:, None] * gu)
        _acc(v, dd[:, None] * gv)
    return _new(tape, out, bw)


# -- graph normalisation ----------------------------------------------------

def sym_normalize(adj: sp.spmatrix, self_loop_weight: float = 1.0) -> sp.csr_matrix:
    """``D^-1/2 (W + sI) D^-1/2`` with ``D_ii = s + sum_j W_ij``.

    ``adj`` is expected to be symmetric. A node without edges keeps the
    self-loop-only value 1 on its diagonal.
    """
    w = sp.csr_matrix(adj, dtype=np.float64)
    if w.shape[0] != w.shape[1]:
        raise ValueError("adjacency must be square")
    if w.nnz and w.data.min() < 0:
        raise ValueError("negative edge weights are not allowed")
    n = w.shape[0]
    w_tilde = (w + self_loop_weight * sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(w_tilde.sum(1)).ravel()
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    d = sp.diags(inv_sqrt)
    out = (d @ w_tilde @ d).tocsr()
    out.sort_indices()
    return out


# -- parameters and optimisation --------------------------------------------

def glorot_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


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
    """Bias-corrected Adam update, applied in place; returns ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {params[name].shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in sorted(grads):
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - state.beta1) * g if m is None else state.beta1 * m + (1 - state.beta1) * g
        v = (1 - state.beta2) * g * g if v is None else state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def value_and_grad(fn: Callable[[Tape, dict], Var], params: dict) -> tuple[float, dict]:
    """Evaluate ``fn(tape, vars)`` and return the loss with gradients for every parameter."""
    tape = Tape()
    vars_ = {k: tape.var(v, name=k) for k, v in params.items()}
    loss = fn(tape, vars_)
    tape.backward(loss)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in vars_.items()}
    return float(loss.value), grads


def evaluate(fn: Callable[[Tape, dict], Var], params: dict) -> float:
    tape = Tape()
    return float(fn(tape, {k: tape.var(v, name=k) for k, v in params.items()}).value)


def grad_check(fn: Callable[[Tape, dict], Var], params: dict, eps: float = 1e-5,
               grad_fn: Callable[[dict], dict] | None = None, max_coords: int | None = None,
               seed: int = 0) -> float:
    """Largest relative error between analytic and central-difference gradients.

    For each parameter the error is ``max|analytic - numeric| / max|numeric|``;
    the worst parameter is returned. ``grad_fn`` overrides the analytic
    gradient (used for negative controls). ``max_coords`` checks a random
    subset of coordinates per parameter.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    analytic = grad_fn(params) if grad_fn is not None else value_and_grad(fn, params)[1]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        numeric = np.empty(len(coords))
        for n, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = evaluate(fn, params)
            flat[c] = orig - eps
            f_minus = evaluate(fn, params)
            flat[c] = orig
            numeric[n] = (f_plus - f_minus) / (2 * eps)
        ana = np.asarray(analytic[name]).reshape(-1)[coords]
        scale_ = np.abs(numeric).max()
        if scale_ == 0:
            err = float(np.abs(ana).max()) if ana.size else 0.0
        else:
            err = float(np.abs(ana - numeric).max() / scale_)
        worst = max(worst, err)
    return worst


# -- checkpoints ------------------------------------------------------------

def save_params(params: dict, prefix) -> tuple[Path, Path]:
    """Write ``<prefix>.bin`` (little-endian float64, concatenated) and ``<prefix>.json``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    manifest, offset = [], 0
    with open(prefix.with_suffix(".bin"), "wb") as fh:
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            fh.write(arr.tobytes())
            manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    prefix.with_suffix(".json").write_text(json.dumps({"dtype": "<f8", "params": manifest}, indent=2) + "\n")
    return prefix.with_suffix(".bin"), prefix.with_suffix(".json")


def load_params(prefix) -> dict:
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    flat = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8")
    out = {}
    for entry in manifest["params"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        out[entry["name"]] = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).astype(np.float64)
    return out
