"""Fixed-topology tanh MLPs over flat parameter vectors.

Parameters for each layer are stored as the weight matrix (row-major,
``fan_out x fan_in``) followed by the bias, layer after layer. Every network
in the package is described by a :class:`NetworkSpec` and evaluated on a
:class:`ParameterVector`; gradients are computed by a hand-written reverse
pass over that fixed topology.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels

HEADS = ("linear", "sigmoid")
PROB_CLAMP = 1e-7


class DimensionError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, value):
        super().__init__(f"loss is not finite: {value!r}")
        self.value = value


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    head: str = "linear"
    hidden_activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValueError("need an input layer, at least one hidden layer and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.hidden_activation != "tanh":
            raise ValueError("only tanh hidden layers are supported")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def spec_id(self) -> str:
        return "-".join(map(str, self.layer_sizes)) + ":" + self.head

    @classmethod
    def from_id(cls, spec_id: str) -> "NetworkSpec":
        sizes, _, head = spec_id.partition(":")
        return cls(tuple(int(s) for s in sizes.split("-")), head or "linear")

    def layers(self):
        """Yield ``(w_slice, b_slice, fan_in, fan_out)`` for each layer."""
        offset = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            yield w, b, fan_in, fan_out


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Immutable flat weight vector bound to a :class:`NetworkSpec`."""

    spec: NetworkSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if vals.shape[0] != self.spec.n_params:
            raise DimensionError(
                f"{self.spec.spec_id} expects {self.spec.n_params} parameters, got {vals.shape[0]}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.shape[0]

    def replace(self, values) -> "ParameterVector":
        return ParameterVector(self.spec, values)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> ParameterVector:
    """Uniform init in +-1/sqrt(fan_in) for weights and biases."""
    vals = np.empty(spec.n_params)
    for w, b, fan_in, _ in spec.layers():
        bound = 1.0 / math.sqrt(fan_in)
        vals[w] = rng.uniform(-bound, bound, size=w.stop - w.start)
        vals[b] = rng.uniform(-bound, bound, size=b.stop - b.start)
    return ParameterVector(spec, vals)


def zeros(spec: NetworkSpec) -> ParameterVector:
    return ParameterVector(spec, np.zeros(spec.n_params))


def unflatten(params: ParameterVector) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split into ``[(W, b), ...]``; arrays are copies."""
    out = []
    for w, b, fan_in, fan_out in params.spec.layers():
        out.append((params.values[w].reshape(fan_out, fan_in).copy(), params.values[b].copy()))
    return out


def flatten(spec: NetworkSpec, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> ParameterVector:
    parts = []
    for (W, bias), (_, _, fan_in, fan_out) in zip(layers, spec.layers()):
        W = np.asarray(W, dtype=np.float64)
        if W.shape != (fan_out, fan_in) or np.shape(bias) != (fan_out,):
            raise DimensionError(f"layer shapes do not match {spec.spec_id}")
        parts.append(W.reshape(-1))
        parts.append(np.asarray(bias, dtype=np.float64))
    return ParameterVector(spec, np.concatenate(parts))


def _check_input(spec: NetworkSpec, x: np.ndarray):
    if x.ndim not in (1, 2) or x.shape[-1] != spec.n_inputs:
        raise DimensionError(
            f"{spec.spec_id} takes inputs of length {spec.n_inputs}, got shape {x.shape}")


def forward(params: ParameterVector, x) -> np.ndarray:
    """Evaluate the network on one input (1-D) or a batch (rows of a 2-D array)."""
    x = np.asarray(x, dtype=np.float64)
    spec = params.spec
    _check_input(spec, x)
    if x.ndim == 1:
        return kernels.mlp_forward_one(params.values, spec.layer_sizes, x, spec.head == "sigmoid")
    out, _ = forward_cache(params, x)
    return out


def forward_cache(params: ParameterVector, X: np.ndarray):
    """Batched forward pass keeping the activations the reverse pass needs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_input(params.spec, X)
    spec = params.spec
    acts = [X]
    h = X
    layers = list(spec.layers())
    for k, (w, b, fan_in, fan_out) in enumerate(layers):
        W = params.values[w].reshape(fan_out, fan_in)
        h = h @ W.T + params.values[b]
        if k < len(layers) - 1:
            h = np.tanh(h)
            acts.append(h)
    if spec.head == "sigmoid":
        h = 1.0 / (1.0 + np.exp(-h))
    return h, acts


def backward(params: ParameterVector, acts: list[np.ndarray], d_out: np.ndarray,
             out: np.ndarray | None = None) -> np.ndarray:
    """Reverse pass: gradient of ``sum(d_out * output)`` w.r.t. the flat parameters.

    ``d_out`` is the upstream gradient w.r.t. the head output (after the
    sigmoid, if any); ``out`` must then be the forward output.
    """
    spec = params.spec
    d = np.atleast_2d(np.asarray(d_out, dtype=np.float64))
    if spec.head == "sigmoid":
        if out is None:
            raise ValueError("sigmoid head needs the forward output for the reverse pass")
        d = d * out * (1.0 - out)
    grad = np.zeros(spec.n_params)
    layers = list(spec.layers())
    for k in range(len(layers) - 1, -1, -1):
        w, b, fan_in, fan_out = layers[k]
        a_in = acts[k]
        grad[w] = (d.T @ a_in).reshape(-1)
        grad[b] = d.sum(axis=0)
        if k > 0:
            W = params.values[w].reshape(fan_out, fan_in)
            d = (d @ W) * (1.0 - a_in * a_in)
    return grad


class Tape:
    """Records batched forward passes so a loss can be differentiated.

    A loss function receives the tape, calls :meth:`forward` for each network
    evaluation it needs and returns ``(value, output_grads)`` or
    ``(value, output_grads, direct_grad)``: ``output_grads[i]`` is dL/dy for the
    i-th recorded forward, ``direct_grad`` is any explicit dL/dtheta term.
    A bare float return means the loss does not depend on the network outputs.
    """

    def __init__(self, params: ParameterVector):
        self.params = params
        self.records: list[tuple[np.ndarray, list[np.ndarray]]] = []

    @property
    def theta(self) -> np.ndarray:
        return self.params.values

    def forward(self, X) -> np.ndarray:
        out, acts = forward_cache(self.params, X)
        self.records.append((out, acts))
        return out


def _run_loss(params, loss_fn):
    tape = Tape(params)
    res = loss_fn(tape)
    if isinstance(res, tuple):
        value = res[0]
        output_grads = res[1] if len(res) > 1 else []
        direct = res[2] if len(res) > 2 else None
    else:
        value, output_grads, direct = res, [], None
    return tape, float(value), output_grads, direct


def loss_value(params: ParameterVector, loss_fn: Callable) -> float:
    return _run_loss(params, loss_fn)[1]


def value_and_gradient(params: ParameterVector, loss_fn: Callable) -> tuple[float, np.ndarray]:
    tape, value, output_grads, direct = _run_loss(params, loss_fn)
    if not math.isfinite(value):
        raise NonFiniteLossError(value)
    if len(output_grads) != len(tape.records):
        raise ValueError(
            f"loss recorded {len(tape.records)} forward passes but returned {len(output_grads)} output gradients")
    grad = np.zeros(params.spec.n_params)
    for (out, acts), d_out in zip(tape.records, output_grads):
        grad += backward(params, acts, np.reshape(d_out, out.shape), out)
    if direct is not None:
        grad += np.asarray(direct, dtype=np.float64)
    return value, grad


def gradient(params: ParameterVector, loss_fn: Callable) -> np.ndarray:
    """dL/dtheta for a loss written against a :class:`Tape`."""
    return value_and_gradient(params, loss_fn)[1]


def finite_difference_gradient(params: ParameterVector, loss_fn: Callable, h: float = 1e-5) -> np.ndarray:
    """Central differences, one coordinate at a time. Test oracle only."""
    base = params.values
    grad = np.empty_like(base)
    for i in range(base.shape[0]):
        up = base.copy()
        up[i] += h
        dn = base.copy()
        dn[i] -= h
        grad[i] = (loss_value(params.replace(up), loss_fn) - loss_value(params.replace(dn), loss_fn)) / (2 * h)
    return grad


@dataclass(frozen=True, eq=False)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 0.002
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 0.002, betas=(0.9, 0.999), eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, tuple(betas), eps)


def adam_step(state: AdamState, params: ParameterVector, grad, direction: str = "descent"):
    """One bias-corrected Adam step. Returns ``(new_params, new_state)``.

    Ascent on L is carried out as descent on -L so the two are bit-identical.
    """
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != params.values.shape or state.first_moment.shape != g.shape:
        raise DimensionError(
            f"gradient length {g.shape[0]} does not match parameters ({len(params)}) / optimizer state")
    if direction == "ascent":
        g = -g
    elif direction != "descent":
        raise ValueError(f"direction must be 'ascent' or 'descent', got {direction!r}")
    b1, b2 = state.betas
    t = state.step_count + 1
    m = b1 * state.first_moment + (1.0 - b1) * g
    v = b2 * state.second_moment + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new_vals = params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(new_vals)):
        raise FloatingPointError("Adam step produced non-finite parameters")
    new_state = AdamState(m, v, t, state.lr, state.betas, state.eps)
    return params.replace(new_vals), new_state


# -- serialization ---------------------------------------------------------

FORMAT_VERSION = 1


def _digest(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()


def dumps(params: ParameterVector, metadata: dict | None = None) -> str:
    """Structured-text record; values written with 17 significant digits."""
    head = {
        "format": FORMAT_VERSION,
        "layer_sizes": list(params.spec.layer_sizes),
        "head": params.spec.head,
        "n_params": len(params),
        "sha256": _digest(params.values),
        "metadata": metadata or {},
    }
    body = ",\n  ".join(format(float(v), ".17g") for v in params.values)
    text = json.dumps(head, indent=1, sort_keys=True)
    return text[:-2] + ',\n "values": [\n  ' + body + "\n ]\n}\n"


class CorruptRecordError(ValueError):
    def __init__(self, field_name: str, detail: str, path=None):
        where = f" in {path}" if path else ""
        super().__init__(f"corrupt field {field_name!r}{where}: {detail}")
        self.field_name = field_name


def loads(text: str, path=None) -> tuple[ParameterVector, dict]:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptRecordError("<document>", str(exc), path) from None
    for key in ("layer_sizes", "head", "values", "sha256"):
        if key not in rec:
            raise CorruptRecordError(key, "missing", path)
    try:
        spec = NetworkSpec(tuple(rec["layer_sizes"]), rec["head"])
    except (TypeError, ValueError) as exc:
        raise CorruptRecordError("layer_sizes", str(exc), path) from None
    vals = rec["values"]
    if not isinstance(vals, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
        raise CorruptRecordError("values", "expected a list of numbers", path)
    arr = np.array(vals, dtype=np.float64)
    if arr.shape[0] != spec.n_params:
        raise CorruptRecordError("values", f"expected {spec.n_params} entries, found {arr.shape[0]}", path)
    if _digest(arr) != rec["sha256"]:
        raise CorruptRecordError("values", "checksum mismatch", path)
    return ParameterVector(spec, arr), rec.get("metadata", {})
