"""Dense-network engine: exact reverse-mode gradients, Adam, snapshots.

Everything is float64 and numpy-only. Networks are small (<= 256 units), so
clarity wins over speed. Hidden layers use ReLU; the output layer is one of
identity, tanh2 (2*tanh, a soft clip to [-2, 2]) or row-wise softmax.
"""

from dataclasses import dataclass, field

import numpy as np

from .util import fmt_float

HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("identity", "tanh2", "softmax")


class GradientError(RuntimeError):
    """Raised when a gradient entry is NaN/Inf; message names the layer."""


@dataclass
class MlpParams:
    layer_sizes: list
    weights: list        # weights[i]: (layer_sizes[i], layer_sizes[i+1])
    biases: list         # biases[i]: (layer_sizes[i+1],)
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            hidden_activation=self.hidden_activation,
            output_activation=self.output_activation,
        )


@dataclass
class MlpGrads:
    weights: list
    biases: list


def init_mlp(layer_sizes, rng, output_activation="identity",
             zero_final_layer=False) -> MlpParams:
    """Initialize weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.

    zero_final_layer zeroes the last weight matrix so the net starts as the
    constant zero function (used by discriminators so fresh pairs predict 0.5).
    """
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or any(n <= 0 for n in sizes):
        raise ValueError(f"layer_sizes must be >= 2 positive entries, got {sizes}")
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ValueError(f"unknown output activation {output_activation!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if zero_final_layer:
        weights[-1][:] = 0.0
    return MlpParams(sizes, weights, biases, "relu", output_activation)


def _as_batch(x, width, what="input"):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"{what} width {x.shape} incompatible with expected {width}")
    return x, squeeze


def _apply_output(z, kind):
    if kind == "identity":
        return z
    if kind == "tanh2":
        return 2.0 * np.tanh(z)
    if kind == "softmax":
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown output activation {kind!r}")


def _forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping post-activation values of every layer."""
    acts = [x]
    h = x
    for i in range(params.n_layers):
        z = h @ params.weights[i] + params.biases[i]
        if i < params.n_layers - 1:
            h = np.maximum(z, 0.0)   # ReLU; derivative at exactly 0 is taken as 0
        else:
            h = _apply_output(z, params.output_activation)
        acts.append(h)
    return acts


def mlp_forward(params: MlpParams, x):
    """Evaluate the network on one vector or a batch of rows."""
    xb, squeeze = _as_batch(x, params.layer_sizes[0])
    out = _forward_cached(params, xb)[-1]
    return out[0] if squeeze else out


def mlp_backward(params: MlpParams, x, upstream):
    """Gradients of sum_rows(upstream . output) w.r.t. params and the input.

    upstream holds d(scalar)/d(output) per row; for a single 1-D input it is
    the usual vector-Jacobian seed. Returns (MlpGrads, input_grad) with
    input_grad matching the shape of x.
    """
    xb, squeeze = _as_batch(x, params.layer_sizes[0])
    ub, usq = _as_batch(upstream, params.layer_sizes[-1], what="upstream_grad")
    if ub.shape[0] != xb.shape[0]:
        raise ValueError(
            f"upstream rows {ub.shape[0]} do not match input rows {xb.shape[0]}")
    acts = _forward_cached(params, xb)

    out = acts[-1]
    kind = params.output_activation
    if kind == "identity":
        delta = ub
    elif kind == "tanh2":
        # d(2 tanh z)/dz = 2 - y^2/2 with y = 2 tanh z
        delta = ub * (2.0 - 0.5 * out * out)
    elif kind == "softmax":
        delta = out * (ub - (ub * out).sum(axis=1, keepdims=True))
    else:
        raise ValueError(f"unknown output activation {kind!r}")

    w_grads = [None] * params.n_layers
    b_grads = [None] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        w_grads[i] = acts[i].T @ delta
        b_grads[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
        if i > 0:
            delta = delta * (acts[i] > 0.0)
    input_grad = delta[0] if squeeze else delta
    return MlpGrads(w_grads, b_grads), input_grad


def zeros_like_grads(params: MlpParams) -> MlpGrads:
    return MlpGrads([np.zeros_like(w) for w in params.weights],
                    [np.zeros_like(b) for b in params.biases])


def add_grads(a: MlpGrads, b: MlpGrads) -> MlpGrads:
    return MlpGrads([x + y for x, y in zip(a.weights, b.weights)],
                    [x + y for x, y in zip(a.biases, b.biases)])


def scale_grads(g: MlpGrads, c: float) -> MlpGrads:
    return MlpGrads([c * w for w in g.weights], [c * b for b in g.biases])


@dataclass
class AdamState:
    first_moment: MlpGrads
    second_moment: MlpGrads
    step_count: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: MlpParams, lr=3e-4) -> AdamState:
    return AdamState(zeros_like_grads(params), zeros_like_grads(params), 0, lr)


def adam_step(params: MlpParams, grads: MlpGrads, state: AdamState):
    """One Adam update with bias correction. Mutates params/state in place."""
    for i in range(params.n_layers):
        for kind, g in (("weights", grads.weights[i]), ("biases", grads.biases[i])):
            if not np.all(np.isfinite(g)):
                raise GradientError(f"non-finite gradient in layer {i} {kind}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for i in range(params.n_layers):
        for arr, g, m, v in (
            (params.weights[i], grads.weights[i],
             state.first_moment.weights[i], state.second_moment.weights[i]),
            (params.biases[i], grads.biases[i],
             state.first_moment.biases[i], state.second_moment.biases[i]),
        ):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            arr -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params, state


def blend_params(target: MlpParams, source: MlpParams, tau: float):
    """Soft update: target <- (1 - tau)*target + tau*source, in place."""
    for tw, sw in zip(target.weights, source.weights):
        tw *= 1.0 - tau
        tw += tau * sw
    for tb, sb in zip(target.biases, source.biases):
        tb *= 1.0 - tau
        tb += tau * sb


def _param_arrays(params: MlpParams):
    for i in range(params.n_layers):
        yield params.weights[i]
        yield params.biases[i]


def _grad_arrays(grads: MlpGrads):
    for i in range(len(grads.weights)):
        yield grads.weights[i]
        yield grads.biases[i]


def grad_check(params: MlpParams, loss_and_grad, samples: int, rng,
               h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_and_grad(params) must return (scalar loss, MlpGrads). `samples`
    parameter coordinates are drawn uniformly and perturbed by +-h.
    """
    _, analytic = loss_and_grad(params)
    arrays = list(_param_arrays(params))
    grad_arrays = list(_grad_arrays(analytic))
    sizes = np.array([a.size for a in arrays])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in rng.choice(total, size=min(samples, total), replace=False):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(int(flat - offsets[k]), arrays[k].shape)
        orig = arrays[k][idx]
        arrays[k][idx] = orig + h
        up, _ = loss_and_grad(params)
        arrays[k][idx] = orig - h
        down, _ = loss_and_grad(params)
        arrays[k][idx] = orig
        numeric = (up - down) / (2.0 * h)
        err = abs(grad_arrays[k][idx] - numeric) / max(1e-8, abs(numeric))
        worst = max(worst, err)
    return worst


SNAPSHOT_MAGIC = "mlp v1"


def save_params(params: MlpParams, path):
    """Text snapshot; decimal serialization round-trips float64 bit-exactly."""
    lines = [SNAPSHOT_MAGIC,
             "layers " + " ".join(str(n) for n in params.layer_sizes),
             f"hidden {params.hidden_activation}",
             f"output {params.output_activation}"]
    for i in range(params.n_layers):
        w, b = params.weights[i], params.biases[i]
        lines.append(f"W{i} {w.shape[0]} {w.shape[1]}")
        for row in w:
            lines.append(" ".join(fmt_float(v) for v in row))
        lines.append(f"b{i} {b.shape[0]}")
        lines.append(" ".join(fmt_float(v) for v in b))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_params(path) -> MlpParams:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a recognized parameter snapshot")
    sizes = [int(tok) for tok in lines[1].split()[1:]]
    hidden = lines[2].split()[1]
    output = lines[3].split()[1]
    pos = 4
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        head = lines[pos].split()
        if head[0] != f"W{i}":
            raise ValueError(f"{path}: expected W{i} header, got {lines[pos]!r}")
        rows, cols = int(head[1]), int(head[2])
        pos += 1
        w = np.array([[float(tok) for tok in lines[pos + r].split()]
                      for r in range(rows)])
        if w.shape != (rows, cols):
            raise ValueError(f"{path}: W{i} shape mismatch")
        pos += rows
        head = lines[pos].split()
        if head[0] != f"b{i}":
            raise ValueError(f"{path}: expected b{i} header, got {lines[pos]!r}")
        n = int(head[1])
        pos += 1
        b = np.array([float(tok) for tok in lines[pos].split()])
        if b.shape != (n,):
            raise ValueError(f"{path}: b{i} shape mismatch")
        pos += 1
        weights.append(w)
        biases.append(b)
    return MlpParams(sizes, weights, biases, hidden, output)
