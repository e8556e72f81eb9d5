"""Invertible coupling layers and their composition.

Each layer transforms one half of the state vector conditioned on the other
half, so the inverse is available in closed form from the same parameters.
The composed network maps states to observables in the forward direction and
reconstructs states from observables in the inverse direction.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .errors import (
    ConfigError,
    DeserializationError,
    NumericError,
    ShapeError,
    SingularScaleError,
)
from .nncore import ACTIVATIONS, Fnn, xavier_init

KINDS = ("affine", "residual")

# Log-scales are soft-clamped to (-SCALE_CLIP, SCALE_CLIP) before
# exponentiation. The bound keeps deep stacks numerically invertible: letting
# log-scales run to +-7 lets intermediate magnitudes compound to the point
# where float64 round-off destroys the round trip.
SCALE_CLIP = 1.0

SINGULAR_SCALE = 1e-30

FORMAT_NAME = "coupling-flow"
FORMAT_VERSION = 1


def default_split(m: int) -> int:
    """Split index ceil(m/2)."""
    return (m + 1) // 2


def split_state(z, q: int):
    """Cut a vector (or batch of row vectors) into leading and trailing parts."""
    width = value_of(z).shape[-1]
    if not 1 <= q <= width - 1:
        raise ConfigError(f"split index {q} out of range for width {width}")
    return ad.col_slice(z, 0, q), ad.col_slice(z, q, width)


class CouplingLayer:
    """One invertible block.

    The conditioning half passes through unchanged and drives a feedforward
    net. Affine kind: the active half is shifted by the t head and multiplied
    entrywise by a positive scale from the s head; the net emits both heads
    (t first). Residual kind: shift only, the net emits just t. ``flipped``
    swaps which half is active.
    """

    def __init__(self, kind, net: Fnn, m: int, q=None, flipped=False,
                 scale_clip=SCALE_CLIP):
        if kind not in KINDS:
            raise ConfigError(f"unknown coupling kind {kind!r}")
        if m < 2:
            raise ConfigError(f"state dimension must be at least 2, got {m}")
        q = default_split(m) if q is None else int(q)
        if not 1 <= q <= m - 1:
            raise ConfigError(f"split index {q} out of range for dimension {m}")
        self.kind = kind
        self.net = net
        self.m = int(m)
        self.q = q
        self.flipped = bool(flipped)
        self.scale_clip = float(scale_clip)
        cond = (m - q) if self.flipped else q
        active = q if self.flipped else (m - q)
        expected_out = 2 * active if kind == "affine" else active
        if net.in_dim != cond or net.out_dim != expected_out:
            raise ConfigError(
                f"coupling net must map {cond} -> {expected_out}, "
                f"got {net.in_dim} -> {net.out_dim}"
            )
        self._active_width = active

    def _heads(self, cond):
        out = self.net.forward(cond)
        if self.kind == "residual":
            return out, None
        a = self._active_width
        shift = ad.col_slice(out, 0, a)
        raw = ad.col_slice(out, a, 2 * a)
        c = self.scale_clip
        scl = ad.exp(ad.scale(ad.tanh(ad.scale(raw, 1.0 / c)), c))
        return shift, scl

    def forward(self, z):
        lead, trail = split_state(z, self.q)
        cond, active = (trail, lead) if self.flipped else (lead, trail)
        shift, scl = self._heads(cond)
        moved = ad.add(active, shift)
        if scl is not None:
            moved = ad.mul(moved, scl)
        if self.flipped:
            return ad.hstack(moved, trail)
        return ad.hstack(lead, moved)

    def inverse(self, z):
        lead, trail = split_state(z, self.q)
        cond, active = (trail, lead) if self.flipped else (lead, trail)
        shift, scl = self._heads(cond)
        if scl is not None:
            if np.abs(value_of(scl)).min() < SINGULAR_SCALE:
                raise SingularScaleError("coupling scale magnitude below 1e-30")
            moved = ad.sub(ad.div(active, scl), shift)
        else:
            moved = ad.sub(active, shift)
        if self.flipped:
            return ad.hstack(moved, trail)
        return ad.hstack(lead, moved)

    def parameters(self):
        return self.net.parameters()


class FlowNetwork:
    """Ordered stack of coupling layers sharing one state dimension.

    ``forward`` applies the layers in order; ``inverse`` applies the exact
    layer inverses in reverse order using the same parameter storage. Both
    accept a single vector or a batch of row vectors.
    """

    def __init__(self, layers, m=None):
        layers = list(layers)
        if not layers and m is None:
            raise ConfigError("empty flow needs an explicit dimension")
        self.m = int(m) if m is not None else layers[0].m
        for i, layer in enumerate(layers):
            if layer.m != self.m:
                raise ConfigError(
                    f"layer {i} has dimension {layer.m}, expected {self.m}"
                )
        self.layers = layers

    @property
    def depth(self) -> int:
        return len(self.layers)

    def _check_width(self, x):
        width = value_of(x).shape[-1]
        if width != self.m:
            raise ShapeError(f"input width {width} != flow dimension {self.m}")

    def forward(self, x):
        self._check_width(x)
        vector = value_of(x).ndim == 1
        h = ad.reshape(x, (1, -1)) if vector else x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h)
            if not np.isfinite(value_of(h)).all():
                raise NumericError(f"non-finite output of coupling layer {i}")
        return ad.reshape(h, (-1,)) if vector else h

    def inverse(self, y):
        self._check_width(y)
        vector = value_of(y).ndim == 1
        h = ad.reshape(y, (1, -1)) if vector else y
        for i in range(len(self.layers) - 1, -1, -1):
            try:
                h = self.layers[i].inverse(h)
            except SingularScaleError as err:
                raise SingularScaleError(f"layer {i}: {err}") from None
            if not np.isfinite(value_of(h)).all():
                raise NumericError(f"non-finite output inverting coupling layer {i}")
        return ad.reshape(h, (-1,)) if vector else h

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_params(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            layers.append({
                "kind": layer.kind,
                "flipped": layer.flipped,
                "q": layer.q,
                "scale_clip": layer.scale_clip,
                "activation": layer.net.activation,
                "dims": list(layer.net.layer_dims),
                "weights": [_encode(w.value) for w in layer.net.weights],
                "biases": [_encode(b.value) for b in layer.net.biases],
            })
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "m": self.m,
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, data) -> "FlowNetwork":
        try:
            if data["format"] != FORMAT_NAME:
                raise DeserializationError(f"unexpected format {data['format']!r}")
            if data["version"] != FORMAT_VERSION:
                raise DeserializationError(f"unsupported version {data['version']!r}")
            m = int(data["m"])
            layers = []
            for spec in data["layers"]:
                net = Fnn(
                    [_decode(w) for w in spec["weights"]],
                    [_decode(b) for b in spec["biases"]],
                    activation=spec["activation"],
                )
                layers.append(CouplingLayer(
                    spec["kind"], net, m=m, q=spec["q"],
                    flipped=spec["flipped"], scale_clip=spec["scale_clip"],
                ))
            return cls(layers, m=m)
        except (KeyError, TypeError, ValueError) as err:
            raise DeserializationError(f"malformed flow data: {err}") from None

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FlowNetwork":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as err:
            raise DeserializationError(f"{path}: not valid JSON ({err})") from None
        return cls.from_dict(data)


def _encode(a: np.ndarray):
    """Nested lists of hex float strings; reload is bit-exact."""
    if a.ndim == 1:
        return [float.hex(float(x)) for x in a]
    return [[float.hex(float(x)) for x in row] for row in a]


def _decode(lst) -> np.ndarray:
    if lst and isinstance(lst[0], list):
        return np.array([[float.fromhex(x) for x in row] for row in lst])
    return np.array([float.fromhex(x) for x in lst])


def build_flow(m, depth, kind="affine", hidden=(8,), q=None, seed=0,
               activation="relu", scale_clip=SCALE_CLIP) -> FlowNetwork:
    """Stack ``depth`` coupling layers, alternating unflipped/flipped.

    The stack starts unflipped, so consecutive pairs form blocks that mix
    both halves; an odd trailing layer is unflipped. Every conditioning net
    is Glorot-initialized with the given hidden widths.
    """
    if depth < 0:
        raise ConfigError(f"depth must be non-negative, got {depth}")
    if kind not in KINDS:
        raise ConfigError(f"unknown coupling kind {kind!r}")
    q = default_split(m) if q is None else int(q)
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(depth):
        flipped = bool(i % 2)
        cond = (m - q) if flipped else q
        active = q if flipped else (m - q)
        out = 2 * active if kind == "affine" else active
        net = xavier_init([cond, *hidden, out], seed=rng, activation=activation)
        layers.append(CouplingLayer(kind, net, m=m, q=q, flipped=flipped,
                                    scale_clip=scale_clip))
    return FlowNetwork(layers, m=m)
