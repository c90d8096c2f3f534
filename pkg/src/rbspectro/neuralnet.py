"""From-scratch feed-forward network trained by backpropagation.

Dense layers with logistic activations throughout, including the output:

    z^l = W^l a^(l-1) + b^l,   a^l = 1 / (1 + exp(-z^l)),

quadratic per-example cost C_m = 1/2 * sum_j (y_j - a_j^L)^2, and
mini-batch gradient descent: each epoch reshuffles the training set,
partitions it into bins of size b, and applies one update per bin with
the bin-averaged gradient.

Physical labels are encoded into the sigmoid's (0, 1) range: the noise
exponent linearly from (0, 3), the noise amplitude logarithmically from
A*t0 in (1e-8, 1e-2). Evaluation metrics are the mean absolute error of
decoded exponents and the mean relative error of decoded amplitudes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeds import Seed, derive_seed

ENCODING_ALPHA = "alpha"
ENCODING_LOG_AMP = "log-amp"

ALPHA_SPAN = 3.0
LOG_AMP_OFFSET = 8.0
LOG_AMP_SPAN = 6.0


class NetworkLayoutError(ValueError):
    """Layer sizes are inconsistent or unsupported."""


class EncodingMismatchError(ValueError):
    """Network encoding tag does not match the requested prediction."""


class TrainingDivergenceError(RuntimeError):
    """Cost became non-finite or exploded during training."""


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def sigmoid_prime_from_activation(a):
    # f'(z) = f(z) (1 - f(z)), evaluated from the activation itself
    return a * (1.0 - a)


# ---------------------------------------------------------------------------
# Label encodings
# ---------------------------------------------------------------------------

def encode_alpha(alpha: float) -> float:
    return alpha / ALPHA_SPAN


def decode_alpha(y: float) -> float:
    return ALPHA_SPAN * y


def encode_log_amplitude(amplitude: float) -> float:
    return (np.log10(amplitude) + LOG_AMP_OFFSET) / LOG_AMP_SPAN


def decode_log_amplitude(y: float) -> float:
    return 10.0 ** (LOG_AMP_SPAN * y - LOG_AMP_OFFSET)


_DECODERS = {
    ENCODING_ALPHA: decode_alpha,
    ENCODING_LOG_AMP: decode_log_amplitude,
    None: lambda y: y,
}

# Standard affine input maps for the two curve families. Raw ratio curves
# sit near 1 and raw fidelities near their midpoint 0.75; removing the
# common-mode level and rescaling puts the informative variation at O(1),
# without which the short low-rate trainings leave the output layer
# nearly constant. The map travels with the network in its metadata.
ALPHA_INPUT_TRANSFORM = (1.1, 8.0)
AMP_INPUT_TRANSFORM = (0.75, 4.0)


def input_transform(net: "Network") -> tuple[float, float]:
    return (
        float(net.metadata.get("input_offset", 0.0)),
        float(net.metadata.get("input_scale", 1.0)),
    )


def apply_input_transform(net: "Network", values: np.ndarray) -> np.ndarray:
    offset, scale = input_transform(net)
    return (np.asarray(values, dtype=float) - offset) * scale


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class Network:
    """Layered weights and biases; ``weights[l]`` maps layer l to l+1."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    encoding: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = self.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise NetworkLayoutError("one weight matrix and bias vector per connection")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise NetworkLayoutError(
                    f"layer {l}: expected {(sizes[l + 1], sizes[l])}, got {w.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NetworkLayoutError("parameters must be finite")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]


@dataclass(frozen=True)
class Hyperparams:
    """Training knobs; defaults follow the reference configuration."""

    learning_rate: float = 0.005
    bin_size: int = 10
    n_epochs: int = 1000
    n_neurons: int = 50
    n_hidden_layers: int = 2

    def __post_init__(self):
        if self.learning_rate < 0 or self.bin_size < 1 or self.n_epochs < 0:
            raise ValueError("invalid hyperparameters")
        if self.n_neurons < 1 or self.n_hidden_layers < 1:
            raise ValueError("invalid network size")

    def layer_sizes(self, n_inputs: int) -> tuple[int, ...]:
        return (n_inputs,) + (self.n_neurons,) * self.n_hidden_layers + (1,)


@dataclass(frozen=True)
class TrainingExample:
    """One labeled curve: raw input vector, encoded target, physical label."""

    input: np.ndarray
    target: float
    label: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.target < 1.0):
            raise ValueError(f"encoded target must lie in (0, 1), got {self.target}")


@dataclass
class TrainReport:
    error_history: list[float]
    cost_history: list[float]
    final_cost: float


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------

DEFAULT_DEEP_GAIN = 4.0


def init_network(
    layer_sizes: tuple[int, ...] | list[int],
    seed: Seed,
    encoding: str | None = None,
    deep_gain: float = DEFAULT_DEEP_GAIN,
) -> Network:
    """Fresh network: weights scaled by 1/sqrt(fan_in), biases zero.

    The input connection uses unit gain, which keeps first-layer
    pre-activations O(1) for wide inputs and avoids saturated sigmoids.
    Connections past the first are scaled up by ``deep_gain``: with three
    chained sigmoids the f' factors otherwise shrink both the initial
    output range and the backpropagated credit so much that short
    trainings at small learning rates barely move the output layer.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 3:
        raise NetworkLayoutError("need at least input, one hidden, and output layer")
    if sizes[-1] != 1:
        raise NetworkLayoutError("output layer must have exactly one neuron")
    if any(s < 1 for s in sizes):
        raise NetworkLayoutError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    weights = []
    for l in range(len(sizes) - 1):
        gain = 1.0 if l == 0 else deep_gain
        weights.append(
            rng.normal(0.0, gain / np.sqrt(sizes[l]), size=(sizes[l + 1], sizes[l]))
        )
    biases = [np.zeros(sizes[l + 1]) for l in range(len(sizes) - 1)]
    return Network(layer_sizes=sizes, weights=weights, biases=biases, encoding=encoding)


def forward(net: Network, x: np.ndarray) -> tuple[list[np.ndarray], float]:
    """Activations of every layer plus the scalar output."""
    a = np.asarray(x, dtype=float)
    if a.shape != (net.n_inputs,):
        raise NetworkLayoutError(f"input must have shape ({net.n_inputs},), got {a.shape}")
    activations = [a]
    for w, b in zip(net.weights, net.biases):
        a = sigmoid(w @ a + b)
        activations.append(a)
    return activations, float(activations[-1][0])


def _forward_batch(net: Network, xs: np.ndarray) -> list[np.ndarray]:
    acts = [xs]
    for w, b in zip(net.weights, net.biases):
        acts.append(sigmoid(acts[-1] @ w.T + b))
    return acts


def predict_batch(net: Network, xs: np.ndarray) -> np.ndarray:
    """Scalar outputs for a stack of inputs, shape (n,)."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != net.n_inputs:
        raise NetworkLayoutError(f"inputs must have shape (n, {net.n_inputs})")
    return _forward_batch(net, xs)[-1][:, 0]


def cost(outputs, targets) -> float:
    """Quadratic cost averaged over examples: mean of 1/2 (y - a)^2."""
    outputs = np.asarray(outputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if outputs.shape != targets.shape:
        raise ValueError("outputs and targets must have equal length")
    return float(np.mean(0.5 * (targets - outputs) ** 2))


def backprop(
    net: Network, x: np.ndarray, target: float
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the single-example cost with respect to all parameters.

    Output-layer error delta^L = (a^L - y) f'(z^L); earlier layers follow
    the recursion delta^l = f'(z^l) * (W^(l+1))^T delta^(l+1). Weight and
    bias gradients are a^(l-1) delta^l and delta^l.
    """
    activations, _ = forward(net, x)
    n_links = len(net.weights)
    grad_w: list[np.ndarray] = [None] * n_links
    grad_b: list[np.ndarray] = [None] * n_links

    a_out = activations[-1]
    delta = (a_out - target) * sigmoid_prime_from_activation(a_out)
    for l in range(n_links - 1, -1, -1):
        grad_w[l] = np.outer(delta, activations[l])
        grad_b[l] = delta
        if l > 0:
            delta = (net.weights[l].T @ delta) * sigmoid_prime_from_activation(
                activations[l]
            )
    return grad_w, grad_b


def _metric_from_outputs(encoding: str | None, outputs: np.ndarray, labels: np.ndarray) -> float:
    predictions = _DECODERS[encoding](outputs)
    if encoding == ENCODING_LOG_AMP:
        return mean_rel_error(predictions, labels)
    return mean_abs_error(predictions, labels)


def evaluate_network(net: Network, examples: list[TrainingExample]) -> float:
    """Held-out metric of a network on raw examples.

    Mean absolute error of decoded exponents for alpha networks, mean
    relative error of decoded amplitudes for log-amp networks, plain
    encoded-space error for untagged ones.
    """
    if not examples:
        raise ValueError("need at least one example")
    xs = apply_input_transform(net, np.stack([ex.input for ex in examples]))
    labels = np.array([ex.label for ex in examples])
    return _metric_from_outputs(net.encoding, predict_batch(net, xs), labels)


def train(
    net: Network,
    dataset: list[TrainingExample],
    hp: Hyperparams,
    heldout: list[TrainingExample],
    seed: Seed,
) -> tuple[Network, TrainReport]:
    """Mini-batch gradient descent; returns a new trained network.

    Each epoch: shuffle with an epoch-derived seed, drop the trailing
    partial bin, and for every bin apply one update with the bin-mean
    gradient. After each epoch the held-out metric (mean absolute error
    of decoded exponents, mean relative error of decoded amplitudes, or
    plain encoded-space error for untagged networks) is appended to the
    history. Aborts if the training cost becomes non-finite.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if not heldout:
        raise ValueError("held-out set is empty")
    xs = np.stack([ex.input for ex in dataset])
    ys = np.array([ex.target for ex in dataset])
    if xs.shape[1] != net.n_inputs:
        raise NetworkLayoutError(
            f"dataset inputs have length {xs.shape[1]}, network expects {net.n_inputs}"
        )
    xs = apply_input_transform(net, xs)
    held_xs = apply_input_transform(net, np.stack([ex.input for ex in heldout]))
    held_labels = np.array([ex.label for ex in heldout])

    weights = [w.copy() for w in net.weights]
    biases = [b.copy() for b in net.biases]
    work = Network(net.layer_sizes, weights, biases, net.encoding, dict(net.metadata))

    initial_cost = cost(predict_batch(work, xs), ys)
    error_history: list[float] = []
    cost_history: list[float] = []
    n_bins = len(dataset) // hp.bin_size

    for epoch in range(hp.n_epochs):
        order = np.random.default_rng(derive_seed(seed, epoch)).permutation(len(dataset))
        for bin_idx in range(n_bins):
            sel = order[bin_idx * hp.bin_size : (bin_idx + 1) * hp.bin_size]
            xb, yb = xs[sel], ys[sel]

            acts = _forward_batch(work, xb)
            delta = (acts[-1] - yb[:, None]) * sigmoid_prime_from_activation(acts[-1])
            for l in range(len(weights) - 1, -1, -1):
                gw = delta.T @ acts[l] / len(sel)
                gb = delta.mean(axis=0)
                if l > 0:
                    delta = (delta @ weights[l]) * sigmoid_prime_from_activation(acts[l])
                weights[l] -= hp.learning_rate * gw
                biases[l] -= hp.learning_rate * gb

        epoch_cost = cost(predict_batch(work, xs), ys)
        if not np.isfinite(epoch_cost) or epoch_cost > 100.0 * initial_cost + 1.0:
            raise TrainingDivergenceError(
                f"cost diverged at epoch {epoch + 1}: {epoch_cost} "
                f"(initial {initial_cost})"
            )
        cost_history.append(epoch_cost)
        error_history.append(
            _metric_from_outputs(work.encoding, predict_batch(work, held_xs), held_labels)
        )

    final_cost = cost_history[-1] if cost_history else initial_cost
    return work, TrainReport(
        error_history=error_history, cost_history=cost_history, final_cost=final_cost
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def mean_abs_error(predicted, true) -> float:
    """Average |true - predicted|; the exponent accuracy metric."""
    predicted = np.asarray(predicted, dtype=float)
    true = np.asarray(true, dtype=float)
    if predicted.shape != true.shape or predicted.size == 0:
        raise ValueError("need equal-length nonempty lists")
    return float(np.mean(np.abs(true - predicted)))


def mean_rel_error(predicted, true) -> float:
    """Average |(true - predicted) / true|; the amplitude accuracy metric."""
    predicted = np.asarray(predicted, dtype=float)
    true = np.asarray(true, dtype=float)
    if predicted.shape != true.shape or predicted.size == 0:
        raise ValueError("need equal-length nonempty lists")
    if np.any(true <= 0):
        raise ValueError("true amplitudes must be positive")
    return float(np.mean(np.abs((true - predicted) / true)))


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def _curve_values(curve) -> np.ndarray:
    for attr in ("ratios", "fidelities"):
        if hasattr(curve, attr):
            return np.asarray(getattr(curve, attr), dtype=float)
    return np.asarray(curve, dtype=float)


def predict_alpha(net: Network, kappa_curve) -> float:
    """Noise exponent decoded from a ratio curve."""
    if net.encoding != ENCODING_ALPHA:
        raise EncodingMismatchError(
            f"network encoding is {net.encoding!r}, expected {ENCODING_ALPHA!r}"
        )
    _, out = forward(net, apply_input_transform(net, _curve_values(kappa_curve)))
    return decode_alpha(out)


def predict_amplitude(net: Network, fidelity_curve) -> float:
    """Noise amplitude A*t0 decoded from an uncorrected fidelity curve."""
    if net.encoding != ENCODING_LOG_AMP:
        raise EncodingMismatchError(
            f"network encoding is {net.encoding!r}, expected {ENCODING_LOG_AMP!r}"
        )
    _, out = forward(net, apply_input_transform(net, _curve_values(fidelity_curve)))
    return decode_log_amplitude(out)


def make_alpha_network(n_inputs: int, hp: Hyperparams, seed: Seed) -> Network:
    """Untrained exponent network with the standard ratio-curve input map."""
    net = init_network(hp.layer_sizes(n_inputs), seed, encoding=ENCODING_ALPHA)
    offset, scale = ALPHA_INPUT_TRANSFORM
    net.metadata.update({"input_offset": offset, "input_scale": scale})
    return net


def make_amplitude_network(n_inputs: int, hp: Hyperparams, seed: Seed) -> Network:
    """Untrained amplitude network with the standard fidelity-curve input map."""
    net = init_network(hp.layer_sizes(n_inputs), seed, encoding=ENCODING_LOG_AMP)
    offset, scale = AMP_INPUT_TRANSFORM
    net.metadata.update({"input_offset": offset, "input_scale": scale})
    return net


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_network(net: Network, path: str | Path) -> None:
    doc = {
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "encoding": net.encoding,
        "metadata": net.metadata,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_network(path: str | Path) -> Network:
    doc = json.loads(Path(path).read_text())
    return Network(
        layer_sizes=tuple(doc["layer_sizes"]),
        weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
        biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
        encoding=doc.get("encoding"),
        metadata=doc.get("metadata", {}),
    )


def write_history_csv(history: list[float], path: str | Path, label: str = "error") -> None:
    lines = [f"epoch,{label}"] + [f"{i + 1},{repr(v)}" for i, v in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n")
