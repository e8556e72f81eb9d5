"""Feedforward parameter containers, initialization, and first-order training
utilities: Glorot-normal init, Adam with bias correction, and plateau-driven
learning-rate reduction."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var, value_of
from .errors import ConfigError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")


def _apply_activation(x, name):
    if name == "relu":
        return ad.relu(x)
    if name == "tanh":
        return ad.tanh(x)
    return x


def _param(a) -> Var:
    if isinstance(a, Var):
        return a
    return Var(np.array(a, dtype=np.float64, copy=True), requires_grad=True)


class Fnn:
    """Fully connected net; activation after every layer except the last.

    Parameters are float64 ``Var`` arrays, so one instance serves both plain
    evaluation (ndarray in, ndarray out) and gradient recording.
    """

    def __init__(self, weights, biases, activation: str = "relu"):
        if not weights or len(weights) != len(biases):
            raise ConfigError("need one bias vector per weight matrix")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.weights = [_param(w) for w in weights]
        self.biases = [_param(b) for b in biases]
        self.activation = activation
        dims = [int(self.weights[0].shape[1])]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.value.ndim != 2 or b.value.ndim != 1:
                raise ShapeError(f"layer {i}: weight must be 2-d and bias 1-d")
            if w.shape[0] != b.shape[0]:
                raise ShapeError(
                    f"layer {i}: weight rows {w.shape[0]} != bias size {b.shape[0]}"
                )
            if w.shape[1] != dims[-1]:
                raise ShapeError(
                    f"layer {i}: expected input width {dims[-1]}, got {w.shape[1]}"
                )
            if not (np.isfinite(w.value).all() and np.isfinite(b.value).all()):
                raise NumericError(f"layer {i}: non-finite parameters")
            dims.append(int(w.shape[0]))
        self.layer_dims = tuple(dims)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def forward(self, x):
        """Evaluate on a vector or a batch of row vectors."""
        width = value_of(x).shape[-1]
        if width != self.in_dim:
            raise ShapeError(f"input width {width} != expected {self.in_dim}")
        vector = value_of(x).ndim == 1
        h = ad.reshape(x, (1, -1)) if vector else x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.linear(h, w, b)
            if i != last:
                h = _apply_activation(h, self.activation)
        return ad.reshape(h, (-1,)) if vector else h

    __call__ = forward

    def parameters(self) -> list[Var]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_params(self) -> int:
        return sum(p.value.size for p in self.parameters())


def xavier_init(layer_dims, seed=0, activation: str = "relu") -> Fnn:
    """Build an Fnn with Glorot-normal weights and exactly-zero biases.

    Weight entries are drawn from N(0, 2/(fan_in + fan_out)). ``seed`` may be
    an integer or an existing ``numpy.random.Generator`` (drawn from in layer
    order, so composition stays deterministic).
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ConfigError(f"need at least an input and an output width, got {dims}")
    if any(d < 1 for d in dims):
        raise ConfigError(f"layer widths must be positive, got {dims}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Fnn(weights, biases, activation=activation)


class Adam:
    """Adam with bias correction; one moment pair per parameter array."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad_or_zeros()
            if g.shape != p.value.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter {p.value.shape}")
            if not np.isfinite(g).all():
                raise NumericError("non-finite gradient in Adam step")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        """Moment arrays and counters, for checkpointing."""
        return {
            "step": self.step_count,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": [a.copy() for a in self.m],
            "v": [a.copy() for a in self.v],
        }

    def load_state_arrays(self, state) -> None:
        if len(state["m"]) != len(self.params) or len(state["v"]) != len(self.params):
            raise ShapeError("optimizer state does not match parameter count")
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.m = [np.array(a, dtype=np.float64, copy=True) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64, copy=True) for a in state["v"]]


class PlateauScheduler:
    """Cut the learning rate when a validation loss stops improving.

    An observation improves when it beats the best seen so far by a relative
    threshold. After more than ``patience`` consecutive non-improvements the
    rate is multiplied by ``factor`` (floored at ``min_lr``) and the counter
    resets, so the rate sequence is non-increasing.
    """

    def __init__(self, lr, factor=0.5, patience=10, min_lr=1e-6, rel_threshold=1e-4):
        if not 0.0 < factor < 1.0:
            raise ConfigError(f"factor must be in (0, 1), got {factor}")
        if patience < 0 or min_lr < 0:
            raise ConfigError("patience and min_lr must be non-negative")
        self.lr = float(lr)
        self.factor = float(factor)
        self.patience = int(patience)
        self.min_lr = float(min_lr)
        self.rel_threshold = float(rel_threshold)
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, val_loss) -> float:
        val_loss = float(val_loss)
        if not np.isfinite(val_loss):
            raise NumericError("validation loss must be finite")
        if val_loss < self.best * (1.0 - self.rel_threshold):
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr

    def state(self):
        return {
            "lr": self.lr,
            "best": self.best,
            "bad_epochs": self.bad_epochs,
        }

    def load_state(self, state) -> None:
        self.lr = float(state["lr"])
        self.best = float(state["best"])
        self.bad_epochs = int(state["bad_epochs"])
