"""Dense float64 math with a small reverse-mode tape, SGD and gradient checking.

The tape only knows the handful of primitives the HGNN needs. Every
primitive records its inputs, so :meth:`Tape.backward` walks the record in
strict reverse order and :meth:`Tape.replay` recomputes the forward pass
from fresh leaf values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, NumericError, ParameterError

DTYPE = np.float64

# Stream tags for derive_rng; values are part of the reproducibility contract.
STREAM_SHARED = 1
STREAM_EMBED = 2
STREAM_COEFF = 3
STREAM_SAMPLE = 4
STREAM_SHUFFLE = 5
STREAM_SPLIT = 6
STREAM_SYNTH = 7
STREAM_MASK = 8
STREAM_CHECK = 9


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Return an independent PCG64 stream for ``(seed, *key)``.

    PCG64 output is specified bit-for-bit, so streams are identical on every
    platform numpy supports.
    """
    if seed < 0:
        raise ParameterError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))


def as_matrix(value, *, name: str = "value") -> np.ndarray:
    arr = np.asarray(value, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Var:
    """Handle to one slot on a :class:`Tape`."""

    tape: "Tape"
    index: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


@dataclass(frozen=True)
class _Op:
    kind: str
    inputs: tuple[int, ...]
    attrs: tuple
    out: int


class Tape:
    """Records primitive operations for one forward pass."""

    def __init__(self) -> None:
        self.values: list[np.ndarray] = []
        self.ops: list[_Op] = []
        self.leaves: list[int] = []
        # test hook: scales the adjoint of one primitive kind
        self.corrupt: dict[str, float] = {}

    def _push(self, value: np.ndarray) -> int:
        self.values.append(value)
        return len(self.values) - 1

    def _record(self, kind: str, inputs: tuple[Var, ...], attrs: tuple = ()) -> Var:
        idx = tuple(v.index for v in inputs)
        out = self._push(_forward(kind, [self.values[i] for i in idx], attrs))
        self.ops.append(_Op(kind, idx, attrs, out))
        return Var(self, out)

    def leaf(self, value) -> Var:
        i = self._push(np.asarray(value, dtype=DTYPE))
        self.leaves.append(i)
        return Var(self, i)

    def constant(self, value) -> Var:
        return Var(self, self._push(np.asarray(value, dtype=DTYPE)))

    def matmul(self, a: Var, b: Var) -> Var:
        if a.shape[-1] != b.shape[0]:
            raise ContractViolation(f"matmul shapes {a.shape} @ {b.shape}")
        return self._record("matmul", (a, b))

    def add(self, a: Var, b: Var, rows: np.ndarray | None = None) -> Var:
        """``a + b``; a 1-D ``b`` broadcasts over rows, ``rows`` scatters ``b`` into ``a``."""
        if rows is None:
            if a.shape == b.shape:
                return self._record("add", (a, b))
            if b.value.ndim != 1 or a.value.ndim != 2 or a.shape[1] != b.shape[0]:
                raise ContractViolation(f"add shapes {a.shape} + {b.shape}")
            return self._record("add", (a, b))
        if b.shape != (len(rows), a.shape[1]):
            raise ContractViolation(f"row add shapes {a.shape} <- {b.shape}")
        return self._record("add_rows", (a, b), (rows,))

    def scale(self, a: Var, c: float) -> Var:
        return self._record("scale", (a,), (float(c),))

    def relu(self, a: Var) -> Var:
        return self._record("relu", (a,))

    def gather_mean(self, h: Var, agg: sp.csr_matrix) -> Var:
        """Row-gather-mean: ``agg`` holds 1/|N_v| weights, one row per destination."""
        if agg.shape[1] != h.shape[0]:
            raise ContractViolation(f"gather over {agg.shape} from {h.shape}")
        return self._record("gather_mean", (h,), (agg,))

    def softmax_xent(self, logits: Var, rows: np.ndarray, labels: np.ndarray) -> Var:
        if len(rows) == 0:
            raise ContractViolation("softmax cross-entropy over zero rows")
        return self._record("softmax_xent", (logits,), (np.asarray(rows), np.asarray(labels)))

    def sqdist(self, a: Var, target: np.ndarray, weight: np.ndarray | None = None) -> Var:
        """Sum of squared distances to a constant ``target``; ``weight`` masks rows out."""
        target = np.asarray(target, dtype=DTYPE)
        if target.shape != a.shape:
            raise ContractViolation(f"sqdist shapes {a.shape} vs {target.shape}")
        return self._record("sqdist", (a,), (target, weight))

    def combine(self, coeffs: Var, bases: Var, index: tuple[int, ...]) -> Var:
        """``sum_i coeffs[index][i] * bases[i]``: one basis-decomposed weight."""
        if coeffs.value[index].shape != (bases.shape[0],):
            raise ContractViolation(
                f"coefficient vector {coeffs.value[index].shape} vs {bases.shape[0]} bases"
            )
        return self._record("combine", (coeffs, bases), (index,))

    def select(self, a: Var, i: int) -> Var:
        return self._record("select", (a,), (i,))

    def backward(self, out: Var) -> list[np.ndarray]:
        """Gradients of scalar ``out`` with respect to every leaf, in leaf order."""
        if out.value.shape != ():
            raise ContractViolation("backward needs a scalar output")
        grads: list[np.ndarray | None] = [None] * len(self.values)
        grads[out.index] = np.ones((), dtype=DTYPE)
        for op in reversed(self.ops):
            g = grads[op.out]
            if g is None:
                continue
            ins = [self.values[i] for i in op.inputs]
            for i, gi in zip(op.inputs, _backward(op.kind, ins, self.values[op.out], g, op.attrs)):
                if gi is None:
                    continue
                factor = self.corrupt.get(op.kind)
                if factor is not None:
                    gi = gi * factor
                grads[i] = gi if grads[i] is None else grads[i] + gi
        return [
            np.zeros_like(self.values[i]) if grads[i] is None else grads[i] for i in self.leaves
        ]

    def replay(self, leaf_values: list[np.ndarray]) -> None:
        """Recompute every recorded output from new leaf values."""
        if len(leaf_values) != len(self.leaves):
            raise ContractViolation("replay needs one value per leaf")
        for i, v in zip(self.leaves, leaf_values):
            self.values[i] = np.asarray(v, dtype=DTYPE)
        for op in self.ops:
            self.values[op.out] = _forward(op.kind, [self.values[i] for i in op.inputs], op.attrs)


def _forward(kind: str, ins: list[np.ndarray], attrs: tuple) -> np.ndarray:
    if kind == "matmul":
        return ins[0] @ ins[1]
    if kind == "add":
        return ins[0] + ins[1]
    if kind == "add_rows":
        out = ins[0].copy()
        out[attrs[0]] += ins[1]
        return out
    if kind == "scale":
        return ins[0] * attrs[0]
    if kind == "relu":
        return np.maximum(ins[0], 0.0)
    if kind == "gather_mean":
        return np.asarray(attrs[0] @ ins[0])
    if kind == "softmax_xent":
        rows, labels = attrs
        z = ins[0][rows]
        m = z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
        return np.asarray(np.mean(lse - z[np.arange(len(rows)), labels]))
    if kind == "sqdist":
        target, weight = attrs
        d = (ins[0] - target) ** 2
        if weight is not None:
            d = d * weight
        return np.asarray(d.sum())
    if kind == "combine":
        return np.tensordot(ins[0][attrs[0]], ins[1], axes=1)
    if kind == "select":
        return ins[0][attrs[0]]
    raise ContractViolation(f"unknown primitive {kind}")


def _backward(kind, ins, out, g, attrs):
    if kind == "matmul":
        return g @ ins[1].T, ins[0].T @ g
    if kind == "add":
        gb = g if ins[1].ndim == g.ndim else g.sum(axis=0)
        return g, gb
    if kind == "add_rows":
        return g, g[attrs[0]]
    if kind == "scale":
        return (g * attrs[0],)
    if kind == "relu":
        # subgradient at 0 is 0
        return (g * (ins[0] > 0.0),)
    if kind == "gather_mean":
        return (np.asarray(attrs[0].T @ g),)
    if kind == "softmax_xent":
        rows, labels = attrs
        z = ins[0][rows]
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(len(rows)), labels] -= 1.0
        full = np.zeros_like(ins[0])
        np.add.at(full, rows, p * (g / len(rows)))
        return (full,)
    if kind == "sqdist":
        target, weight = attrs
        d = 2.0 * (ins[0] - target)
        if weight is not None:
            d = d * weight
        return (g * d,)
    if kind == "combine":
        index = attrs[0]
        gc = np.zeros_like(ins[0])
        gc[index] = np.tensordot(ins[1], g, axes=g.ndim)
        gb = ins[0][index][:, None, None] * g[None]
        return gc, gb
    if kind == "select":
        ga = np.zeros_like(ins[0])
        ga[attrs[0]] = g
        return (ga,)
    raise ContractViolation(f"unknown primitive {kind}")


def sgd_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], eta: float
) -> dict[str, np.ndarray]:
    """Plain SGD: ``p - eta * g`` for every parameter; no momentum, no decay."""
    if eta <= 0:
        raise ParameterError(f"learning rate must be positive, got {eta}")
    if params.keys() != grads.keys():
        raise ContractViolation("parameter and gradient names differ")
    out = {}
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ContractViolation(f"{name}: param {p.shape} vs grad {g.shape}")
        out[name] = p - eta * g
    return out


def finite_difference_check(
    loss_fn: Callable[[dict[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` returns ``(loss, grads)``; only its loss is used for the
    numeric side. The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ParameterError(f"epsilon {epsilon} outside [1e-7, 1e-4]")
    base = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    loss, analytic = loss_fn(base)
    if not np.isfinite(loss):
        raise NumericError("loss is not finite at the evaluation point")
    worst = 0.0
    for name, p in base.items():
        flat = p.reshape(-1)
        ga = np.asarray(analytic[name], dtype=DTYPE).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            fp = loss_fn(base)[0]
            flat[j] = orig - epsilon
            fm = loss_fn(base)[0]
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"loss not finite while perturbing {name}[{j}]")
            numeric = (fp - fm) / (2.0 * epsilon)
            err = abs(ga[j] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
