"""Minimal dense feed-forward network with analytic backpropagation.

The classifier view runs ``input -> hidden layers (relu/tanh) -> 1 logit ->
sigmoid`` and emits probabilities clamped to ``[EPS_P, 1 - EPS_P]`` so that
log-loss terms stay finite.  A feature-extractor view (used by the
adversarial trainer) runs the same stack but applies the hidden activation
to the final layer instead of the sigmoid.

Gradient convention: :func:`backward` receives the per-example derivative of
the loss with respect to the emitted probability and returns the gradient of
the *batch-mean* loss with respect to every parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .seeding import stream

EPS_P = 1e-7


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _relu(x):
    return np.maximum(x, 0.0)


def _drelu(x):
    return (x > 0.0).astype(np.float64)


def _tanh(x):
    return np.tanh(x)


def _dtanh(x):
    t = np.tanh(x)
    return 1.0 - t * t


_ACTIVATIONS = {"relu": (_relu, _drelu), "tanh": (_tanh, _dtanh)}


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class LayerSpec:
    """Widths and activation of a dense stack.

    ``output_width`` is 1 for binary classifiers; the feature-extractor
    trunk of the adversarial trainer uses wider outputs.
    An empty ``hidden_widths`` yields a single linear layer.
    """

    input_width: int
    hidden_widths: tuple[int, ...] = ()
    output_width: int = 1
    hidden_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_width < 1 or self.output_width < 1:
            raise ShapeError("widths must be positive")
        if any(w < 1 for w in self.hidden_widths):
            raise ShapeError("hidden widths must be positive")
        if self.hidden_activation not in _ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.hidden_activation!r}")

    @property
    def widths(self) -> list[int]:
        return [self.input_width, *self.hidden_widths, self.output_width]

    def n_layers(self) -> int:
        return len(self.hidden_widths) + 1


@dataclass
class NetworkParams:
    spec: LayerSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class ForwardTrace:
    params: NetworkParams
    inputs: np.ndarray
    pre_acts: list[np.ndarray]
    acts: list[np.ndarray]  # post-activation per layer; last entry is p or features
    logit: np.ndarray | None  # classifier view only
    p: np.ndarray | None  # clamped probabilities, classifier view only


def init_params(spec: LayerSpec, seed: int) -> NetworkParams:
    """Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases."""
    rng = stream(seed, "net-init")
    weights, biases = [], []
    widths = spec.widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(spec, weights, biases)


def _run_stack(params: NetworkParams, batch: np.ndarray, final: str) -> ForwardTrace:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {batch.shape}")
    if batch.shape[1] != params.spec.input_width:
        raise ShapeError(
            f"expected input width {params.spec.input_width}, got {batch.shape[1]}"
        )
    act, _ = _ACTIVATIONS[params.spec.hidden_activation]
    pre_acts, acts = [], []
    a = batch
    n = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W + b
        pre_acts.append(z)
        last = i == n - 1
        if not last:
            a = act(z)
        elif final == "sigmoid":
            a = np.clip(sigmoid(z), EPS_P, 1.0 - EPS_P)
        else:
            a = act(z)
        acts.append(a)
    if final == "sigmoid":
        logit = pre_acts[-1][:, 0]
        p = acts[-1][:, 0]
    else:
        logit = p = None
    return ForwardTrace(params, batch, pre_acts, acts, logit, p)


def forward(params: NetworkParams, batch: np.ndarray) -> ForwardTrace:
    """Classifier pass; the final layer must have width 1."""
    if params.spec.output_width != 1:
        raise ShapeError("classifier forward requires output_width == 1")
    return _run_stack(params, batch, final="sigmoid")


def forward_features(params: NetworkParams, batch: np.ndarray) -> ForwardTrace:
    """Feature-extractor pass: hidden activation on every layer."""
    return _run_stack(params, batch, final="activation")


def _backprop(trace: ForwardTrace, delta_out: np.ndarray) -> tuple[Gradients, np.ndarray]:
    """Chain ``delta_out`` (dL/d pre-activation of the last layer, per
    example, any scaling already applied) down the stack.

    Returns parameter gradients plus dL/d(input batch).
    """
    params = trace.params
    _, dact = _ACTIVATIONS[params.spec.hidden_activation]
    n = len(params.weights)
    gw = [None] * n
    gb = [None] * n
    delta = delta_out
    for i in range(n - 1, -1, -1):
        a_prev = trace.inputs if i == 0 else trace.acts[i - 1]
        gw[i] = a_prev.T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * dact(trace.pre_acts[i - 1])
    dinput = delta @ params.weights[0].T if n > 0 else delta
    return Gradients(gw, gb), dinput


def backward(trace: ForwardTrace, dL_dp: np.ndarray) -> Gradients:
    """Gradient of the batch-mean loss given per-example dloss/dp."""
    grads, _ = backward_with_input(trace, dL_dp)
    return grads


def backward_with_input(trace: ForwardTrace, dL_dp: np.ndarray) -> tuple[Gradients, np.ndarray]:
    batch = len(trace.p) if trace.p is not None else 0
    return backward_total(trace, np.asarray(dL_dp, dtype=np.float64) / batch)


def backward_total(trace: ForwardTrace, dL_dp: np.ndarray) -> tuple[Gradients, np.ndarray]:
    """Like :func:`backward`, but for a scalar batch loss whose per-example
    dL/dp already includes any batch scaling (mean losses pre-divided,
    batch-statistic losses as they come)."""
    if trace.p is None:
        raise ShapeError("trace was produced by forward_features; use backward_features")
    dL_dp = np.asarray(dL_dp, dtype=np.float64)
    if dL_dp.shape != trace.p.shape:
        raise ShapeError(f"expected gradient of length {len(trace.p)}, got {dL_dp.shape}")
    # dp/dlogit with the clamped p keeps the chain consistent with the loss
    dsig = trace.p * (1.0 - trace.p)
    delta = (dL_dp * dsig)[:, None]
    return _backprop(trace, delta)


def backward_features(trace: ForwardTrace, dL_dfeat: np.ndarray) -> tuple[Gradients, np.ndarray]:
    """Backprop for a feature-extractor trace.

    ``dL_dfeat`` is dL/d(features) per example with any batch scaling
    already folded in by the caller.
    """
    if trace.p is not None:
        raise ShapeError("trace was produced by forward; use backward")
    _, dact = _ACTIVATIONS[trace.params.spec.hidden_activation]
    delta = np.asarray(dL_dfeat, dtype=np.float64) * dact(trace.pre_acts[-1])
    return _backprop(trace, delta)


def predict(params: NetworkParams, batch: np.ndarray) -> np.ndarray:
    """Clamped probabilities for a batch, discarding the trace."""
    return forward(params, batch).p


def save_params(params: NetworkParams, path) -> None:
    """Portable text format: layer widths plus row-major weights."""
    lines = [
        "ulab-model 1",
        f"activation {params.spec.hidden_activation}",
        "widths " + " ".join(str(w) for w in params.spec.widths),
    ]
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"layer {i}")
        for row in W:
            lines.append(" ".join(repr(float(v)) for v in row))
        lines.append(f"bias {i}")
        lines.append(" ".join(repr(float(v)) for v in b))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> NetworkParams:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != "ulab-model 1":
        raise ShapeError(f"{path}: not a ulab-model file")
    activation = lines[1].split(" ", 1)[1]
    widths = [int(w) for w in lines[2].split()[1:]]
    spec = LayerSpec(widths[0], tuple(widths[1:-1]), widths[-1], activation)
    weights, biases = [], []
    pos = 3
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        if lines[pos] != f"layer {i}":
            raise ShapeError(f"{path}: expected 'layer {i}' at line {pos + 1}")
        pos += 1
        W = np.array([[float(v) for v in lines[pos + r].split()] for r in range(fan_in)])
        pos += fan_in
        if lines[pos] != f"bias {i}":
            raise ShapeError(f"{path}: expected 'bias {i}' at line {pos + 1}")
        pos += 1
        b = np.array([float(v) for v in lines[pos].split()])
        pos += 1
        if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ShapeError(f"{path}: layer {i} shape mismatch")
        weights.append(W)
        biases.append(b)
    return NetworkParams(spec, weights, biases)


@dataclass
class OptimizerState:
    kind: str = "adam"  # {"sgd", "adam"}
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    t: int = 0
    m: Gradients | None = None
    v: Gradients | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def fresh(self) -> "OptimizerState":
        """Copy with cleared accumulators, for reuse as a template."""
        return replace(self, t=0, m=None, v=None)


def _zeros_like(params: NetworkParams) -> Gradients:
    return Gradients(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


def step(
    params: NetworkParams, grads: Gradients, state: OptimizerState
) -> tuple[NetworkParams, OptimizerState]:
    """One optimizer update; returns fresh params and state objects."""
    for i, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        # a single reduction detects any NaN/Inf without a bool temporary
        if not (np.isfinite(gw.sum()) and np.isfinite(gb.sum())):
            raise NonFiniteError(f"non-finite gradient in layer {i}")
    lr = state.learning_rate
    if state.kind == "sgd":
        new = NetworkParams(
            params.spec,
            [w - lr * g for w, g in zip(params.weights, grads.weights)],
            [b - lr * g for b, g in zip(params.biases, grads.biases)],
        )
        return new, state
    m = state.m if state.m is not None else _zeros_like(params)
    v = state.v if state.v is not None else _zeros_like(params)
    t = state.t + 1
    b1, b2, eps = state.beta1, state.beta2, state.eps_adam
    # fold the bias corrections into the step size and the denominator
    scale = lr / (1 - b1**t)
    root_corr2 = np.sqrt(1 - b2**t)
    new_w, new_b = [], []
    new_m = Gradients([], [])
    new_v = Gradients([], [])
    for w, b, gw, gb, mw, mb, vw, vb in zip(
        params.weights, params.biases, grads.weights, grads.biases,
        m.weights, m.biases, v.weights, v.biases,
    ):
        mw = b1 * mw + (1 - b1) * gw
        mb = b1 * mb + (1 - b1) * gb
        vw = b2 * vw + (1 - b2) * gw * gw
        vb = b2 * vb + (1 - b2) * gb * gb
        new_w.append(w - scale * mw / (np.sqrt(vw) / root_corr2 + eps))
        new_b.append(b - scale * mb / (np.sqrt(vb) / root_corr2 + eps))
        new_m.weights.append(mw)
        new_m.biases.append(mb)
        new_v.weights.append(vw)
        new_v.biases.append(vb)
    new_params = NetworkParams(params.spec, new_w, new_b)
    new_state = replace(state, t=t, m=new_m, v=new_v)
    return new_params, new_state
