"""Autoassociative (input = target) feed-forward network.

The default topology is 14-11-14 with linear activations, trained by scaled
conjugate gradient (Moller 1993) with validation-based early stopping.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, TrainingDivergedError

NETWORK_FORMAT = "rfimpute.autoencoder/1"
ACTIVATIONS = ("linear", "tanh")


@dataclass(eq=False)
class AutoencoderNetwork:
    sizes: tuple[int, ...]
    activations: tuple[str, ...]
    weights: list[np.ndarray]   # weights[l] has shape (sizes[l], sizes[l+1])
    biases: list[np.ndarray]

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_params(self, theta: np.ndarray) -> "AutoencoderNetwork":
        weights, biases, pos = [], [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            weights.append(theta[pos:pos + a * b].reshape(a, b).copy())
            pos += a * b
            biases.append(theta[pos:pos + b].copy())
            pos += b
        return AutoencoderNetwork(self.sizes, self.activations, weights, biases)

    def to_dict(self) -> dict:
        return {
            "format": NETWORK_FORMAT,
            "sizes": list(self.sizes),
            "activations": list(self.activations),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AutoencoderNetwork":
        if d.get("format") != NETWORK_FORMAT:
            raise DataError(f"unsupported network format {d.get('format')!r}")
        return cls(tuple(d["sizes"]), tuple(d["activations"]),
                   [np.asarray(w, dtype=np.float64) for w in d["weights"]],
                   [np.asarray(b, dtype=np.float64) for b in d["biases"]])


def _check_topology(sizes, activations, autoassociative):
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigError(f"invalid layer sizes {sizes}")
    if len(activations) != len(sizes) - 1:
        raise ConfigError("need one activation per weight layer")
    for a in activations:
        if a not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {a!r}")
    if autoassociative:
        if sizes[0] != sizes[-1]:
            raise ConfigError("autoassociative networks need input size == output size")
        if len(sizes) > 2 and min(sizes[1:-1]) >= sizes[0]:
            raise ConfigError(f"hidden layer must be a bottleneck (< {sizes[0]}), got {sizes}")


def init_network(sizes=(14, 11, 14), activations=("linear", "linear"), seed: int = 0,
                 autoassociative: bool = True, zero: bool = False) -> AutoencoderNetwork:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.

    ``zero=True`` is a test hook giving all-zero weights and biases.
    """
    sizes = tuple(int(s) for s in sizes)
    activations = tuple(activations)
    _check_topology(sizes, activations, autoassociative)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        scale = 0.0 if zero else 1.0 / np.sqrt(a)
        weights.append(rng.uniform(-scale, scale, size=(a, b)) if scale else np.zeros((a, b)))
        biases.append(np.zeros(b))
    return AutoencoderNetwork(sizes, activations, weights, biases)


def _act(name, z):
    return z if name == "linear" else np.tanh(z)


def _forward_all(net: AutoencoderNetwork, X: np.ndarray):
    outs = [X]
    h = X
    for w, b, a in zip(net.weights, net.biases, net.activations):
        h = _act(a, h @ w + b)
        outs.append(h)
    return outs


def forward(net: AutoencoderNetwork, x) -> np.ndarray:
    """Network output for one record (1-D) or a batch (rows)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != net.n_inputs:
        raise DataError(f"expected {net.n_inputs} inputs, got {X.shape[1]}")
    y = _forward_all(net, X)[-1]
    return y[0] if single else y


def reconstruction_error(net: AutoencoderNetwork, x_known, x_candidate, mask) -> float:
    """Sum over all components of (input - output)^2 after filling the unknown
    positions (``mask`` True) of ``x_known`` with ``x_candidate``."""
    x = np.array(x_known, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    cand = np.asarray(x_candidate, dtype=np.float64).reshape(-1)
    if mask.shape != x.shape:
        raise DataError("mask length must equal the record length")
    if cand.size != mask.sum():
        raise DataError(f"{mask.sum()} unknown positions but {cand.size} candidate values")
    x[mask] = cand
    return float(np.sum((x - forward(net, x)) ** 2))


def batch_reconstruction_errors(net: AutoencoderNetwork, X: np.ndarray) -> np.ndarray:
    """Per-row sum of squared reconstruction errors."""
    return np.sum((X - _forward_all(net, X)[-1]) ** 2, axis=1)


def loss(net: AutoencoderNetwork, X) -> float:
    """Mean squared reconstruction error over all elements of the batch."""
    X = np.asarray(X, dtype=np.float64)
    return float(np.mean((_forward_all(net, X)[-1] - X) ** 2))


def gradient(net: AutoencoderNetwork, X) -> np.ndarray:
    """Analytic gradient of ``loss`` with respect to the flat parameter vector."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise DataError("empty batch")
    outs = _forward_all(net, X)
    delta = 2.0 * (outs[-1] - X) / X.size
    grads = []
    for layer in range(len(net.weights) - 1, -1, -1):
        if net.activations[layer] == "tanh":
            delta = delta * (1.0 - outs[layer + 1] ** 2)
        gw = outs[layer].T @ delta
        gb = delta.sum(axis=0)
        grads.append((gw, gb))
        if layer > 0:
            delta = delta @ net.weights[layer].T
    grads.reverse()
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


@dataclass(frozen=True)
class TrainConfig:
    max_cycles: int = 400
    patience: int | None = None    # stop after this many cycles without validation improvement
    sigma0: float = 1e-4           # SCG finite-difference step scale
    lambda0: float = 1.0           # SCG initial scale (regularisation) parameter
    seed: int = 0

    def __post_init__(self):
        if self.max_cycles < 1:
            raise ConfigError("max_cycles must be at least 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be positive")


@dataclass
class TrainTrace:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    selected_cycle: int = 0

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cycle", "train_loss", "val_loss"])
            for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss)):
                w.writerow([i, repr(t), repr(v)])


def train(net: AutoencoderNetwork, train_set, validation_set, config: TrainConfig = TrainConfig()):
    """Scaled conjugate gradient on the training loss; returns the parameters
    from the cycle with the lowest validation loss together with the trace.

    Cycle 0 records the initial network.
    """
    X = np.asarray(train_set, dtype=np.float64)
    V = np.asarray(validation_set, dtype=np.float64)
    if len(X) == 0 or len(V) == 0:
        raise DataError("training and validation sets must be nonempty")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(V))):
        raise DataError("training data must be complete")

    def f(theta):
        return loss(net.with_params(theta), X)

    def g(theta):
        return gradient(net.with_params(theta), X)

    def val(theta):
        return loss(net.with_params(theta), V)

    x = net.get_params()
    trace = TrainTrace()
    fold = f(x)
    trace.train_loss.append(fold)
    trace.val_loss.append(val(x))
    best_x, best_val, best_cycle = x.copy(), trace.val_loss[0], 0

    n_params = x.size
    grad_new = g(x)
    grad_old = grad_new
    d = -grad_new
    success = True
    n_success = 0
    beta = config.lambda0
    beta_min, beta_max = 1e-15, 1e100
    mu = kappa = theta = 0.0
    stalled = False

    for cycle in range(1, config.max_cycles + 1):
        if not stalled:
            if success:
                mu = d @ grad_new
                if mu >= 0:
                    d = -grad_new
                    mu = d @ grad_new
                kappa = d @ d
                if kappa < np.finfo(float).eps:
                    stalled = True
                else:
                    sigma = config.sigma0 / np.sqrt(kappa)
                    gplus = g(x + sigma * d)
                    theta = d @ (gplus - grad_new) / sigma
            if not stalled:
                delta = theta + beta * kappa
                if delta <= 0:
                    delta = beta * kappa
                    beta = beta - theta / kappa
                alpha = -mu / delta
                x_new = x + alpha * d
                f_new = f(x_new)
                if not np.isfinite(f_new):
                    raise TrainingDivergedError(cycle, f_new)
                Delta = 2.0 * (f_new - fold) / (alpha * mu)
                if Delta >= 0:
                    success = True
                    n_success += 1
                    x = x_new
                    fold = f_new
                    grad_old = grad_new
                    grad_new = g(x)
                    if grad_new @ grad_new == 0:
                        stalled = True
                else:
                    success = False
                if Delta < 0.25:
                    beta = min(4.0 * beta, beta_max)
                if Delta > 0.75:
                    beta = max(0.5 * beta, beta_min)
                if n_success == n_params:
                    d = -grad_new
                    n_success = 0
                elif success:
                    gamma = (grad_old - grad_new) @ grad_new / mu
                    d = gamma * d - grad_new

        trace.train_loss.append(fold)
        v = val(x)
        trace.val_loss.append(v)
        if v < best_val:
            best_x, best_val, best_cycle = x.copy(), v, cycle
        if stalled:
            break
        if config.patience is not None and cycle - best_cycle >= config.patience:
            break

    trace.selected_cycle = best_cycle
    return net.with_params(best_x), trace
